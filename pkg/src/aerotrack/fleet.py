"""Procedural 3D keypoint models and the annotated-model file format.

Each model is 33 body-frame keypoints in meters (origin at the ground
projection of the chassis center, ``x`` forward, ``y`` left, ``z`` up).
The generator builds a box-with-cabin body whose proportions are sampled
per archetype.
"""

import json
from dataclasses import dataclass

import numpy as np

from ._io import atomic_write_text, dumps
from .exceptions import ParseError, ValidationError
from .keypoints import N_KEYPOINTS, SYMMETRIC_PAIRS, WHEEL_CONTACTS

# archetype -> (mean, std) of body parameters
ARCHETYPES = {
    "sedan": dict(length=(4.75, 0.20), width=(1.82, 0.05), height=(1.45, 0.04), hood=(0.25, 0.02), trunk=(0.20, 0.02), cabin=(0.42, 0.03)),
    "suv": dict(length=(4.80, 0.22), width=(1.92, 0.05), height=(1.75, 0.06), hood=(0.22, 0.02), trunk=(0.06, 0.01), cabin=(0.58, 0.03)),
    "hatchback": dict(length=(4.15, 0.15), width=(1.76, 0.04), height=(1.48, 0.04), hood=(0.22, 0.02), trunk=(0.05, 0.01), cabin=(0.50, 0.03)),
    "pickup": dict(length=(5.60, 0.25), width=(2.00, 0.05), height=(1.90, 0.06), hood=(0.24, 0.02), trunk=(0.33, 0.03), cabin=(0.28, 0.02)),
    "van": dict(length=(5.10, 0.20), width=(1.98, 0.04), height=(2.05, 0.08), hood=(0.12, 0.02), trunk=(0.02, 0.01), cabin=(0.76, 0.03)),
}
CATEGORIES = tuple(ARCHETYPES)


def _quad(x_rear, x_front, y, z_rear, z_front=None):
    z_front = z_rear if z_front is None else z_front
    return [
        (x_rear, y, z_rear),
        (x_rear, -y, z_rear),
        (x_front, y, z_front),
        (x_front, -y, z_front),
    ]


def body_keypoints(length, width, height, hood, trunk, cabin):
    """33 keypoints of a box-with-cabin body.

    ``hood``, ``trunk`` and ``cabin`` are fractions of the length: the hood
    and trunk decks sit at belt height, the roof spans ``cabin`` of the
    length between the windshields.
    """
    L, W, H = length, width, height
    hw = W / 2.0
    belt = 0.62 * H
    x_front = L / 2.0
    x_rear = -L / 2.0
    ws_front = x_front - hood * L  # base of front windshield
    ws_rear = x_rear + trunk * L  # base of rear windshield
    glass = (ws_front - ws_rear - cabin * L) / 2.0
    roof_front = ws_front - 0.75 * glass
    roof_rear = ws_rear + 0.25 * glass if trunk > 0.1 else ws_rear + 0.1 * glass
    roof_y = hw - 0.12 * W
    wheel_r = 0.33 + 0.06 * (H - 1.45)
    wheelbase = 0.60 * L
    track = hw - 0.10 - 0.11
    pts = []
    pts += _quad(roof_rear, roof_front, roof_y, H)  # 0-3
    pts += _quad(ws_rear, ws_front, hw - 0.10, belt + 0.02)  # 4-7
    pts += _quad(x_rear + 0.04, x_front - 0.04, hw - 0.18, 0.55 * belt + 0.30, 0.55 * belt + 0.22)  # 8-11
    pts += _quad(x_rear, x_front, hw - 0.06, 0.45)  # 12-15
    pts += _quad(-wheelbase / 2.0, wheelbase / 2.0, track, wheel_r)  # 16-19
    pts += _quad(x_rear + 0.35, x_front - 0.35, hw - 0.08, 0.18)  # 20-23
    mirror_x = ws_front - 0.15
    pts += [(mirror_x, hw + 0.12, belt + 0.08), (mirror_x, -hw - 0.12, belt + 0.08)]  # 24-25
    door_x = ws_front - 0.30
    pts += [(door_x, hw - 0.06, belt + 0.30), (door_x, -hw + 0.06, belt + 0.30)]  # 26-27
    pts += _quad(-wheelbase / 2.0, wheelbase / 2.0, track, 0.0)  # 28-31
    pts += [(x_front + 0.01, 0.0, 0.55 * belt + 0.28)]  # 32
    return np.asarray(pts, dtype=float)


@dataclass
class VehicleModel:
    name: str
    category: str
    keypoints: np.ndarray

    @property
    def shape_vector(self):
        return self.keypoints.reshape(-1)


def check_shape_vector(s, symmetry_tol=1e-3, name="shape"):
    """Validate a 99-value shape vector (or a (33, 3) array)."""
    kp = np.asarray(s, dtype=float).reshape(N_KEYPOINTS, 3)
    if not np.all(np.isfinite(kp)):
        raise ValidationError(f"{name}: non-finite coordinates")
    if np.any(np.abs(kp[list(WHEEL_CONTACTS), 2]) > 1e-6):
        raise ValidationError(f"{name}: wheel-ground contact points must have z = 0")
    for a, b in SYMMETRIC_PAIRS:
        mirrored = kp[b] * np.array([1.0, -1.0, 1.0])
        if np.max(np.abs(kp[a] - mirrored)) > symmetry_tol:
            raise ValidationError(f"{name}: keypoints {a} and {b} are not mirror symmetric")
    ext = kp.max(axis=0) - kp.min(axis=0)
    if not ext[0] > ext[1] > 0:
        raise ValidationError(f"{name}: length must exceed width and width must be positive")
    return kp


def synthetic_fleet(n_models=200, seed=0, categories=CATEGORIES):
    """Sample ``n_models`` vehicles spread evenly over ``categories``."""
    rng = np.random.default_rng(seed)
    models = []
    for i in range(n_models):
        cat = categories[i % len(categories)]
        params = {k: rng.normal(mu, sd) for k, (mu, sd) in ARCHETYPES[cat].items()}
        models.append(VehicleModel(f"{cat}-{i:03d}", cat, body_keypoints(**params)))
    return models


def load_models(path):
    """Read annotated models: a JSON list of ``{"name", "category", "keypoints"}``."""
    try:
        raw = json.loads(open(path, encoding="utf-8").read())
        models = [
            VehicleModel(str(m.get("name", f"model-{i}")), str(m["category"]), np.asarray(m["keypoints"], dtype=float))
            for i, m in enumerate(raw)
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: invalid model file ({exc})") from exc
    for m in models:
        if m.keypoints.shape != (N_KEYPOINTS, 3):
            raise ValidationError(f"{m.name}: expected 33 x 3 keypoints, got {m.keypoints.shape}")
        check_shape_vector(m.keypoints, name=m.name)
    return models


def save_models(models, path):
    payload = [
        {"name": m.name, "category": m.category, "keypoints": m.keypoints.tolist()} for m in models
    ]
    atomic_write_text(path, dumps(payload) + "\n")
