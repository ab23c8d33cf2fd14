"""Small input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import ConfigError, DataError


def as_float_array(x, shape=None, name="array"):
    """Convert ``x`` to a finite float64 array, optionally checking its shape.

    ``shape`` may contain ``None`` entries as wildcards.
    """
    arr = np.asarray(x, dtype=float)
    if shape is not None:
        if arr.ndim != len(shape) or any(
            s is not None and s != a for s, a in zip(shape, arr.shape)
        ):
            raise DataError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def check_positive(value, name, strict=True):
    value = float(value)
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        op = ">" if strict else ">="
        raise ConfigError(f"{name} must be {op} 0, got {value}")
    return value


def check_open_unit(value, name):
    value = float(value)
    if not 0.0 < value < 1.0:
        raise ConfigError(f"{name} must lie in (0, 1), got {value}")
    return value


def check_rotation(R, atol=1e-8):
    """Raise unless ``R`` is a proper rotation matrix."""
    R = as_float_array(R, (3, 3), "rotation")
    if not np.allclose(R @ R.T, np.eye(3), atol=atol):
        raise DataError("rotation matrix is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > atol:
        raise DataError("rotation matrix must have determinant +1")
    return R


def wrap_angle(a):
    """Wrap angles to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def wrap_innovation(a):
    """Wrap angles to (-pi, pi]."""
    w = wrap_angle(a)
    return np.where(w == -np.pi, np.pi, w) if np.ndim(w) else (np.pi if w == -np.pi else float(w))
