"""Extended Kalman filter over a simplified kinematic bicycle model.

Free states are ``(x, y, psi, v, delta)``: ground position, heading, speed
and front steering angle. The slip angle ``beta = atan(tan(delta) l_r / l)``
is a function of ``delta`` and the axle split, so the reported 6x6
covariance appends ``beta`` through that constraint. Speed and steering are
assumed constant between frames; ``(x, y, psi)`` are measured directly by
the per-frame model fit.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_positive, wrap_angle, wrap_innovation
from .exceptions import PreconditionError, StateError

MAX_STEER = np.deg2rad(60.0)
DEFAULT_WHEELBASE = 2.8


@dataclass(frozen=True)
class NoiseConfig:
    """Process noise densities (per second) and measurement standard deviations."""

    q_position: float = 0.01  # m^2/s
    q_heading: float = 1e-3  # rad^2/s
    q_speed: float = 1.0  # (m/s)^2/s
    q_steer: float = 0.05  # rad^2/s
    r_position: float = 0.1  # m
    r_heading: float = np.deg2rad(1.0)  # rad
    init_speed_std: float = 10.0
    init_steer_std: float = 0.1

    def __post_init__(self):
        for name in ("q_position", "q_heading", "q_speed", "q_steer"):
            check_positive(getattr(self, name), name, strict=False)
        for name in ("r_position", "r_heading", "init_speed_std", "init_steer_std"):
            check_positive(getattr(self, name), name)

    def process(self, dt):
        return np.diag([self.q_position, self.q_position, self.q_heading, self.q_speed, self.q_steer]) * dt

    def measurement(self):
        return np.diag([self.r_position**2, self.r_position**2, self.r_heading**2])


def slip_angle(delta, rear_fraction=0.5):
    return np.arctan(np.tan(delta) * rear_fraction)


def _dbeta_ddelta(delta, rear_fraction):
    t = np.tan(delta)
    return rear_fraction / np.cos(delta) ** 2 / (1.0 + (rear_fraction * t) ** 2)


def bicycle_derivatives(state, wheelbase, rear_fraction=0.5):
    """Time derivatives of ``(x, y, psi)`` for state ``(x, y, psi, v, delta)``."""
    _, _, psi, v, delta = state
    beta = slip_angle(delta, rear_fraction)
    return np.array(
        [
            v * np.cos(psi + beta),
            v * np.sin(psi + beta),
            v / wheelbase * np.cos(beta) * np.tan(delta),
        ]
    )


def motion_step(mean, dt, wheelbase, rear_fraction=0.5):
    """One prediction step of the bicycle rules; speed and steering are held."""
    out = np.array(mean, dtype=float)
    out[:3] = out[:3] + dt * bicycle_derivatives(mean, wheelbase, rear_fraction)
    return out


def motion_jacobian(mean, dt, wheelbase, rear_fraction=0.5):
    """Analytic ``d motion_step / d mean`` (5x5)."""
    _, _, psi, v, delta = mean
    beta = slip_angle(delta, rear_fraction)
    db = _dbeta_ddelta(delta, rear_fraction)
    sa, ca = np.sin(psi + beta), np.cos(psi + beta)
    F = np.eye(5)
    F[0, 2] = -v * sa * dt
    F[0, 3] = ca * dt
    F[0, 4] = -v * sa * db * dt
    F[1, 2] = v * ca * dt
    F[1, 3] = sa * dt
    F[1, 4] = v * ca * db * dt
    F[2, 3] = np.cos(beta) * np.tan(delta) / wheelbase * dt
    F[2, 4] = v / wheelbase * dt * (-np.sin(beta) * db * np.tan(delta) + np.cos(beta) / np.cos(delta) ** 2)
    return F


def _check_psd(P, what):
    if not np.all(np.isfinite(P)):
        raise StateError(f"{what}: covariance has non-finite entries")
    if not np.allclose(P, P.T, atol=1e-9 * max(1.0, np.abs(P).max())):
        raise StateError(f"{what}: covariance is not symmetric")
    lo = np.linalg.eigvalsh(P).min()
    if lo < -1e-9 * max(1.0, np.abs(P).max()):
        raise StateError(f"{what}: covariance is not positive semi-definite (min eigenvalue {lo:g})")


def _symmetrize_psd(P):
    P = 0.5 * (P + P.T)
    w, V = np.linalg.eigh(P)
    if w.min() < 0:
        P = (V * np.maximum(w, 0.0)) @ V.T
        P = 0.5 * (P + P.T)
    return P


@dataclass(frozen=True)
class EkfState:
    mean: np.ndarray  # x, y, psi, v, delta
    P: np.ndarray  # 5x5
    wheelbase: float = DEFAULT_WHEELBASE
    rear_fraction: float = 0.5
    update_skipped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(5))
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float).reshape(5, 5))
        check_positive(self.wheelbase, "wheelbase")
        if not abs(self.mean[4]) < np.pi / 2:
            raise StateError("steering angle must satisfy |delta| < pi/2")

    x = property(lambda self: float(self.mean[0]))
    y = property(lambda self: float(self.mean[1]))
    psi = property(lambda self: float(self.mean[2]))
    v = property(lambda self: float(self.mean[3]))
    delta = property(lambda self: float(self.mean[4]))

    @property
    def beta(self):
        return float(slip_angle(self.mean[4], self.rear_fraction))

    @property
    def covariance(self):
        """6x6 covariance over ``(x, y, psi, v, delta, beta)``."""
        T = np.zeros((6, 5))
        T[:5] = np.eye(5)
        T[5, 4] = _dbeta_ddelta(self.mean[4], self.rear_fraction)
        return T @ self.P @ T.T

    @classmethod
    def from_measurement(cls, z, noise=None, wheelbase=DEFAULT_WHEELBASE, speed=0.0):
        noise = noise or NoiseConfig()
        mean = np.array([z[0], z[1], wrap_angle(z[2]), speed, 0.0])
        P = np.diag(
            [noise.r_position**2, noise.r_position**2, noise.r_heading**2, noise.init_speed_std**2, noise.init_steer_std**2]
        )
        return cls(mean, P, wheelbase)


def predict(state, dt, process_noise=None):
    """Propagate mean and covariance by ``dt`` seconds.

    ``process_noise`` is a 5x5 covariance added after propagation, or a
    :class:`NoiseConfig` whose densities are scaled by ``dt``.
    """
    if not dt > 0:
        raise PreconditionError(f"dt must be positive, got {dt}")
    _check_psd(state.P, "predict")
    if process_noise is None:
        Q = NoiseConfig().process(dt)
    elif isinstance(process_noise, NoiseConfig):
        Q = process_noise.process(dt)
    else:
        Q = np.asarray(process_noise, dtype=float)
    F = motion_jacobian(state.mean, dt, state.wheelbase, state.rear_fraction)
    mean = motion_step(state.mean, dt, state.wheelbase, state.rear_fraction)
    mean[2] = wrap_angle(mean[2])
    P = _symmetrize_psd(F @ state.P @ F.T + Q)
    return replace(state, mean=mean, P=P, update_skipped=False)


H = np.hstack([np.eye(3), np.zeros((3, 2))])


def update(state, z, measurement_noise=None):
    """EKF correction with a direct observation of ``(x, y, psi)``.

    The heading innovation is wrapped to ``(-pi, pi]``. A singular
    innovation covariance leaves the state untouched with
    ``update_skipped=True``.
    """
    z = np.asarray(z, dtype=float).reshape(3)
    if not np.all(np.isfinite(z)):
        raise PreconditionError("measurement must be finite")
    if measurement_noise is None:
        R = NoiseConfig().measurement()
    elif isinstance(measurement_noise, NoiseConfig):
        R = measurement_noise.measurement()
    else:
        R = np.asarray(measurement_noise, dtype=float)
    innov = z - state.mean[:3]
    innov[2] = wrap_innovation(innov[2])
    S = H @ state.P @ H.T + R
    if np.linalg.cond(S) > 1e12:
        return replace(state, update_skipped=True)
    K = np.linalg.solve(S, H @ state.P).T
    mean = state.mean + K @ innov
    mean[2] = wrap_angle(mean[2])
    mean[4] = np.clip(mean[4], -MAX_STEER, MAX_STEER)
    IKH = np.eye(5) - K @ H
    P = _symmetrize_psd(IKH @ state.P @ IKH.T + K @ R @ K.T)
    return replace(state, mean=mean, P=P, update_skipped=False)


# ---------------------------------------------------------------------- shape


@dataclass
class ShapeEstimate:
    """Running inverse-residual-weighted mean of per-frame shape parameters."""

    b: np.ndarray = None
    dimensions: tuple = None  # length, width, height in meters
    update_count: int = 0
    weight_sum: float = 0.0
    wheelbase: float = None


def update_shape(estimate, fit, prior, min_residual=1e-3):
    """Fold a converged fit into the running shape estimate."""
    if not fit.converged:
        return estimate
    w = 1.0 / max(float(fit.residual), min_residual)
    b = np.asarray(fit.b, dtype=float)
    if estimate.b is None or estimate.update_count == 0:
        new_b = b.copy()
        total = w
    else:
        total = estimate.weight_sum + w
        new_b = estimate.b + (b - estimate.b) * (w / total)
    return ShapeEstimate(
        b=new_b,
        dimensions=prior.dimensions(new_b),
        update_count=estimate.update_count + 1,
        weight_sum=total,
        wheelbase=prior.wheelbase(new_b),
    )


# ------------------------------------------------------------------ per-track


@dataclass
class TrackFilter:
    """EKF plus shape estimate for one track, fed with per-frame fits."""

    prior: object
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    state: EkfState = None
    shape: ShapeEstimate = field(default_factory=ShapeEstimate)
    timestamp: float = None

    def step(self, timestamp, fit=None):
        """Advance to ``timestamp`` and fold in ``fit`` if given; returns the state."""
        if fit is not None:
            self.shape = update_shape(self.shape, fit, self.prior)
        wheelbase = self.shape.wheelbase if self.shape.wheelbase and self.shape.wheelbase > 0 else DEFAULT_WHEELBASE
        if self.state is None:
            if fit is None:
                raise PreconditionError("a track filter must be started from a fit")
            self.state = EkfState.from_measurement(fit.pose, self.noise, wheelbase)
        else:
            dt = timestamp - self.timestamp
            self.state = predict(replace(self.state, wheelbase=wheelbase), dt, self.noise)
            if fit is not None:
                self.state = update(self.state, fit.pose, self.noise)
        self.timestamp = timestamp
        return self.state


def export_trajectory(track, prior=None):
    """Per-frame trajectory records of a confirmed track.

    Parameters
    ----------
    track : tracking.Track
        Uses ``track.confirmed``, ``track.history`` (entries with
        ``frame_index``, ``timestamp`` and ``ekf``) and ``track.filter``.
    prior : ShapePrior, optional
        Classifies the final shape estimate; without it the detector's
        category hint is reported.

    Returns
    -------
    list of dict
        Records with ``track_id, frame_index, timestamp, x, y, psi, v,
        length, width, height, vehicle_type``. Dimensions and type come
        from the final shape estimate since the shape is assumed constant.
    """
    if not track.confirmed:
        return []
    shape = track.filter.shape
    if shape.dimensions is not None:
        length, width, height = shape.dimensions
    else:
        length = width = height = float("nan")
    vtype = track.category
    if prior is not None and shape.b is not None:
        vtype = prior.classify(shape.b)[0]
    observed = [i for i, h in enumerate(track.history) if h.detection_id is not None]
    if not observed:
        return []
    records = []
    for h in track.history[: observed[-1] + 1]:
        if h.ekf is None:
            continue
        records.append(
            {
                "track_id": int(track.track_id),
                "frame_index": int(h.frame_index),
                "timestamp": float(h.timestamp),
                "x": float(h.ekf.x),
                "y": float(h.ekf.y),
                "psi": float(h.ekf.psi),
                "v": max(float(h.ekf.v), 0.0),
                "length": float(length),
                "width": float(width),
                "height": float(height),
                "vehicle_type": str(vtype),
            }
        )
    return records
