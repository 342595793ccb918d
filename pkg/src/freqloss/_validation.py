"""Input validation helpers shared by all modules.

Fields are plain numpy arrays of shape ``(H, W, C)`` (row-major, channel
innermost). Batches of fields carry a leading sample axis ``(N, H, W, C)``.
"""

import numpy as np
from sklearn.utils.validation import check_array


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


def check_field(u, name="field", dtype=np.float64):
    """Validate a single grid field and return it as a float array.

    Parameters
    ----------
    u : array-like of shape (H, W, C) or (H, W)
        A 2D array is promoted to a single channel.
    name : str
        Used in error messages.
    dtype : numpy dtype, default=float64

    Returns
    -------
    ndarray of shape (H, W, C)
    """
    u = np.asarray(u)
    if u.ndim == 2:
        u = u[:, :, None]
    if u.ndim != 3:
        raise InvalidInputError(f"{name} must have shape (H, W, C), got {u.shape}")
    h, w, c = u.shape
    _check_grid(h, w, name)
    if c < 1:
        raise InvalidInputError(f"{name} needs at least one channel")
    if not np.issubdtype(u.dtype, np.number) or np.iscomplexobj(u):
        raise InvalidInputError(f"{name} must be real-valued")
    u = u.astype(dtype, copy=False)
    if not np.all(np.isfinite(u)):
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return u


def check_fields(u, name="fields"):
    """Validate a batch of fields of shape (N, H, W, C)."""
    u = np.asarray(u)
    if u.ndim != 4:
        raise InvalidInputError(f"{name} must have shape (N, H, W, C), got {u.shape}")
    if u.shape[0] < 1:
        raise InvalidInputError(f"{name} is empty")
    _check_grid(u.shape[1], u.shape[2], name)
    u = u.astype(np.float64, copy=False)
    if not np.all(np.isfinite(u)):
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return u


def check_params(c, n_features=None, name="params"):
    """Validate parameter vectors as a 2D float array of shape (N, p)."""
    try:
        c = check_array(c, ensure_2d=False, dtype=np.float64)
    except ValueError as exc:
        raise InvalidInputError(f"{name}: {exc}") from exc
    if c.ndim == 1:
        c = c[None, :]
    if c.ndim != 2 or c.shape[1] < 1:
        raise InvalidInputError(f"{name} must have shape (N, p) with p >= 1")
    if n_features is not None and c.shape[1] != n_features:
        raise InvalidInputError(
            f"{name} has {c.shape[1]} features, expected {n_features}"
        )
    return c


def check_same_shape(a, b, names=("u", "u_hat")):
    if a.shape != b.shape:
        raise InvalidInputError(
            f"dimension mismatch: {names[0]} {a.shape} vs {names[1]} {b.shape}"
        )


def _check_grid(h, w, name):
    if h < 4 or w < 4:
        raise InvalidInputError(f"{name} grid must be at least 4x4, got {h}x{w}")
    if h % 2 or w % 2:
        raise InvalidInputError(
            f"{name} grid dimensions must be even, got {h}x{w}"
        )
