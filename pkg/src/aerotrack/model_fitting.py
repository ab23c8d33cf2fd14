"""Per-detection vehicle pose and shape estimation.

The unknowns are the ground position ``(x, y)``, heading ``psi`` and the
shape parameters ``b``. The residual stacks, for every visible keypoint,
the pixel difference between the detection and the projected model point,
followed by ``sqrt(lam) * (b - b_t)`` when ``lam > 0``.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive, wrap_angle
from .camera import back_project_to_ground
from .exceptions import ConfigError, InitializationError, UnderConstrainedError
from .keypoints import FORWARD_PAIRS
from .optim import levenberg_marquardt

# Regularizer weight for the default 200-model synthetic fleet: 1% of the
# expected data term (2 px noise, 15 visible keypoints) over the mean
# within-category squared parameter spread. See calibrate_regularizer().
DEFAULT_REGULARIZER = 3.6


@dataclass
class FitConfig:
    lam: float = DEFAULT_REGULARIZER
    max_iter: int = 50
    tol: float = 1e-10
    ransac_iterations: int = 100
    inlier_angle: float = np.deg2rad(15.0)
    robust_loss: bool = False
    huber_delta: float = 5.0
    min_visible: int = 4
    seed: int = 0

    def __post_init__(self):
        check_positive(self.lam, "lam", strict=False)
        check_positive(self.tol, "tol")
        check_positive(self.inlier_angle, "inlier_angle")
        check_positive(self.huber_delta, "huber_delta")
        if self.max_iter < 1 or self.ransac_iterations < 1:
            raise ConfigError("iteration counts must be positive")
        if self.min_visible < 1:
            raise ConfigError("min_visible must be positive")


@dataclass
class VehicleFit:
    x: float
    y: float
    psi: float
    b: np.ndarray
    residual: float
    converged: bool
    iterations: int
    n_visible: int = 0
    costs: list = field(default_factory=list, repr=False)

    @property
    def pose(self):
        return np.array([self.x, self.y, self.psi])

    def diagnostics(self):
        return {
            "residual": float(self.residual),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }


def calibrate_regularizer(prior, noise_px=2.0, n_visible=15, fraction=0.01):
    """Regularizer weight making the prior term ``fraction`` of a typical data term."""
    spread = np.mean(
        [np.sum((b - prior.templates_[lab]) ** 2) for b, lab in zip(prior.params_, prior.labels_)]
    )
    data = 2.0 * n_visible * noise_px**2
    return fraction * data / max(spread, 1e-12)


def ground_heading_consensus(vectors, threshold, n_iterations=100, rng=None):
    """Heading agreed on by the largest consistent subset of 2D vectors.

    Each hypothesis is the direction of one vector; inliers are the vectors
    within ``threshold`` radians of it. With no more vectors than
    ``n_iterations`` every hypothesis is tried, otherwise ``n_iterations``
    are drawn from ``rng``. Returns ``(heading, inlier_mask)`` where the
    heading is the angle of the mean of the inlier unit vectors.
    """
    V = np.asarray(vectors, dtype=float).reshape(-1, 2)
    norms = np.linalg.norm(V, axis=1)
    V = V[norms > 0]
    if len(V) == 0:
        raise InitializationError("no forward-direction vectors available")
    U = V / np.linalg.norm(V, axis=1)[:, None]
    angles = np.arctan2(U[:, 1], U[:, 0])
    if len(U) == 1:
        return float(wrap_angle(angles[0])), np.ones(1, dtype=bool)
    if len(U) <= n_iterations:
        candidates = np.arange(len(U))
    else:
        rng = np.random.default_rng(0) if rng is None else rng
        candidates = rng.choice(len(U), size=n_iterations, replace=True)
    best = None
    for i in candidates:
        dev = np.abs(wrap_angle(angles - angles[i]))
        inl = dev <= threshold
        key = (-int(inl.sum()), float(dev[inl].sum()), int(i))
        if best is None or key < best[0]:
            best = (key, inl)
    inliers = best[1]
    m = U[inliers].mean(axis=0)
    return float(wrap_angle(np.arctan2(m[1], m[0]))), inliers


def initial_heading(detection, pose, intrinsics, cfg=None):
    """Ground-plane heading from the detection's forward keypoint pairs."""
    cfg = cfg or FitConfig()
    vis = detection.visible
    pairs = [(r, f) for r, f in FORWARD_PAIRS if vis[r] and vis[f]]
    if not pairs:
        raise InitializationError(
            f"frame {detection.frame_index}, detection {detection.detection_id}: no visible forward pairs"
        )
    kp = detection.keypoints
    rear = back_project_to_ground(pose, intrinsics, kp[[r for r, _ in pairs]])
    front = back_project_to_ground(pose, intrinsics, kp[[f for _, f in pairs]])
    heading, _ = ground_heading_consensus(
        front - rear, cfg.inlier_angle, cfg.ransac_iterations, np.random.default_rng(cfg.seed)
    )
    return heading


def _model_points(state, prior, idx):
    k = prior.k
    x, y, psi = state[:3]
    b = state[3 : 3 + k]
    W = prior.components_.T.reshape(-1, 3, k)[idx]  # (n, 3, k)
    Xb = prior.mean_.reshape(-1, 3)[idx] + W @ b
    c, s = np.cos(psi), np.sin(psi)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    P = Xb @ Rz.T + np.array([x, y, 0.0])
    return Xb, W, Rz, P


def residuals_and_jacobian(state, detection, prior, pose, intrinsics, b_t=None, lam=0.0):
    """Stacked residuals and their analytic Jacobian.

    Parameters
    ----------
    state : array_like of shape (3 + k,)
        ``(x, y, psi, b_1 .. b_k)``.

    Returns
    -------
    r : ndarray of shape (2 n + k,) or (2 n,)
        ``(u, v)`` residuals for each visible keypoint (detected minus
        projected), then ``sqrt(lam) (b - b_t)`` if ``lam > 0``.
    J : ndarray
        ``d r / d state``.
    """
    state = np.asarray(state, dtype=float)
    k = prior.k
    idx = np.flatnonzero(detection.visible)
    Xb, W, Rz, P = _model_points(state, prior, idx)
    Rc = pose.rotation
    Xc = P @ Rc.T + pose.translation
    z = Xc[:, 2]
    fx, fy = intrinsics.focal_length_x, intrinsics.focal_length_y
    cx, cy = intrinsics.principal_point
    proj = np.column_stack([fx * Xc[:, 0] / z + cx, fy * Xc[:, 1] / z + cy])
    r = (detection.keypoints[idx] - proj).reshape(-1)

    n = len(idx)
    dpi = np.zeros((n, 2, 3))
    dpi[:, 0, 0] = fx / z
    dpi[:, 0, 2] = -fx * Xc[:, 0] / z**2
    dpi[:, 1, 1] = fy / z
    dpi[:, 1, 2] = -fy * Xc[:, 1] / z**2
    G = dpi @ Rc  # d pixel / d world point, (n, 2, 3)
    c, s = Rz[0, 0], Rz[1, 0]
    dP_dpsi = np.column_stack([-s * Xb[:, 0] - c * Xb[:, 1], c * Xb[:, 0] - s * Xb[:, 1], np.zeros(n)])
    J = np.empty((n, 2, 3 + k))
    J[:, :, 0] = G[:, :, 0]
    J[:, :, 1] = G[:, :, 1]
    J[:, :, 2] = np.einsum("nij,nj->ni", G, dP_dpsi)
    J[:, :, 3:] = np.einsum("nij,jl,nlk->nik", G, Rz, W)
    J = -J.reshape(2 * n, 3 + k)

    if lam > 0:
        b_t = np.zeros(k) if b_t is None else np.asarray(b_t, dtype=float)
        sq = np.sqrt(lam)
        r = np.concatenate([r, sq * (state[3:] - b_t)])
        Jr = np.zeros((k, 3 + k))
        Jr[:, 3:] = sq * np.eye(k)
        J = np.vstack([J, Jr])
    return r, J


def _mean_reprojection(state, detection, prior, pose, intrinsics):
    r, _ = residuals_and_jacobian(state, detection, prior, pose, intrinsics, lam=0.0)
    return float(np.linalg.norm(r.reshape(-1, 2), axis=1).mean())


def _solve(x0, detection, prior, pose, intrinsics, b_t, cfg):
    n_pts = detection.n_visible

    def fun(state):
        r, J = residuals_and_jacobian(state, detection, prior, pose, intrinsics, b_t, cfg.lam)
        if cfg.robust_loss:
            e = np.linalg.norm(r[: 2 * n_pts].reshape(-1, 2), axis=1)
            w = np.sqrt(np.minimum(1.0, cfg.huber_delta / np.maximum(e, 1e-12)))
            w2 = np.repeat(w, 2)
            r = r.copy()
            J = J.copy()
            r[: 2 * n_pts] *= w2
            J[: 2 * n_pts] *= w2[:, None]
        return r, J

    return levenberg_marquardt(fun, x0, max_iter=cfg.max_iter, xtol=cfg.tol)


def fit_vehicle(detection, prior, pose, intrinsics, b_t=None, cfg=None, init=None, prev_heading=None):
    """Fit ground pose and shape to one keypoint detection.

    Parameters
    ----------
    detection : KeypointDetection
    prior : ShapePrior
    pose, intrinsics : CameraPose, CameraIntrinsics
        Camera for the detection's frame.
    b_t : array_like, optional
        Category template; defaults to the template of the detection's
        category hint, or zeros (the mean shape) if unknown.
    cfg : FitConfig, optional
    init : (x, y, psi), optional
        Overrides the bounding-box / consensus initialization.
    prev_heading : float, optional
        Base heading for the four-way fallback used when no forward pair is
        visible.

    Returns
    -------
    VehicleFit
    """
    cfg = cfg or FitConfig()
    if detection.n_visible < cfg.min_visible:
        raise UnderConstrainedError(
            f"frame {detection.frame_index}, detection {detection.detection_id}: "
            f"{detection.n_visible} visible keypoints, need {cfg.min_visible}"
        )
    k = prior.k
    if b_t is None:
        b_t = prior.templates_.get(detection.category, np.zeros(k))
    b_t = np.asarray(b_t, dtype=float)

    if init is not None:
        starts = [np.asarray(init, dtype=float)]
    else:
        xy = back_project_to_ground(pose, intrinsics, detection.bbox_center)
        try:
            psi0 = initial_heading(detection, pose, intrinsics, cfg)
            starts = [np.array([xy[0], xy[1], psi0])]
        except InitializationError:
            base = 0.0 if prev_heading is None else float(prev_heading)
            starts = [np.array([xy[0], xy[1], base + q * np.pi / 2.0]) for q in range(4)]

    best = None
    for s0 in starts:
        res = _solve(np.concatenate([s0, b_t]), detection, prior, pose, intrinsics, b_t, cfg)
        mean_err = _mean_reprojection(res.x, detection, prior, pose, intrinsics)
        if best is None or mean_err < best[1]:
            best = (res, mean_err)
    res, mean_err = best
    return VehicleFit(
        x=float(res.x[0]),
        y=float(res.x[1]),
        psi=float(wrap_angle(res.x[2])),
        b=res.x[3:].copy(),
        residual=mean_err,
        converged=bool(res.converged and np.isfinite(mean_err)),
        iterations=int(res.iterations),
        n_visible=detection.n_visible,
        costs=res.costs,
    )
