"""Baseline and band-weighted Fourier losses with analytic gradients.

All functions accept either one field ``(H, W, C)`` or a batch
``(N, H, W, C)``; batched inputs return one loss per sample. Gradients are
taken with respect to the reconstruction ``u_hat``.

The spatial gradient used by the baseline loss is the forward difference
with periodic wrap, in grid units::

    Dx u[y, x] = u[y, x + 1] - u[y, x]      Dy u[y, x] = u[y + 1, x] - u[y, x]
"""

import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import InvalidInputError, check_same_shape
from .spectral import (
    _dft_batch,
    check_partition,
    check_weights,
    make_partition,
)

STL_GAMMA = 2.0
STL_GAMMA_HIGHEST = 0.5


def _pair(u, u_hat):
    u = np.asarray(u, dtype=np.float64)
    u_hat = np.asarray(u_hat, dtype=np.float64)
    check_same_shape(u, u_hat)
    if u.ndim == 2:
        u, u_hat = u[..., None], u_hat[..., None]
    if u.ndim not in (3, 4):
        raise InvalidInputError(f"fields must be (H, W, C) or (N, H, W, C), got {u.shape}")
    return u, u_hat


def _fwd_diff(u, axis):
    return np.roll(u, -1, axis=axis) - u


def _fwd_diff_adjoint(g, axis):
    return np.roll(g, 1, axis=axis) - g


def _reduce(values, batched):
    return values if batched else float(values[0])


# ---------------------------------------------------------------- baseline


def baseline_loss(u, u_hat, lambda_u=1.0, lambda_grad_u=1.0):
    """``lambda_u * mean|u - u_hat| + lambda_grad_u * mean|grad u - grad u_hat|``.

    The second mean runs over both difference directions and all channels.
    """
    u, u_hat = _pair(u, u_hat)
    batched = u.ndim == 4
    if not batched:
        u, u_hat = u[None], u_hat[None]
    e = u - u_hat
    value = np.abs(e).mean(axis=(1, 2, 3)) * lambda_u
    if lambda_grad_u:
        gx = np.abs(_fwd_diff(e, 2)).mean(axis=(1, 2, 3))
        gy = np.abs(_fwd_diff(e, 1)).mean(axis=(1, 2, 3))
        value = value + lambda_grad_u * 0.5 * (gx + gy)
    return _reduce(value, batched)


def baseline_loss_grad(u, u_hat, lambda_u=1.0, lambda_grad_u=1.0):
    """Subgradient of :func:`baseline_loss`; ``sign(0)`` is taken as 0."""
    u, u_hat = _pair(u, u_hat)
    batched = u.ndim == 4
    if not batched:
        u, u_hat = u[None], u_hat[None]
    n_el = np.prod(u.shape[1:])
    e = u - u_hat
    grad = -np.sign(e) * (lambda_u / n_el)
    if lambda_grad_u:
        sx = np.sign(_fwd_diff(e, 2))
        sy = np.sign(_fwd_diff(e, 1))
        back = _fwd_diff_adjoint(sx, 2) + _fwd_diff_adjoint(sy, 1)
        grad -= back * (lambda_grad_u / (2 * n_el))
    return grad if batched else grad[0]


# ---------------------------------------------------------------- weights


def stl_weights(partition):
    """Shift-towards-low weights ``gamma_g * P_g / n``.

    ``gamma_g`` is 2 for every group and 0.5 for the highest one; ``P_g`` is
    the number of bins covered by group ``g``.
    """
    gamma = np.full(partition.n_groups, STL_GAMMA)
    gamma[-1] = STL_GAMMA_HIGHEST
    return gamma * partition.group_counts() / partition.n_bins


def _bin_weight_map(partition, weights, strict=False):
    return check_weights(weights, partition, strict=strict)[partition.group]


# ---------------------------------------------------------------- Fourier


def _spectral_diff(u, u_hat, partition):
    # FT(u - u_hat) rather than FT(u) - FT(u_hat): equal by linearity, but it
    # stays non-zero for any u != u_hat and negates exactly under a swap
    u, u_hat = _pair(u, u_hat)
    check_partition(partition, u)
    return u.ndim == 4, _dft_batch(u - u_hat)


def fourier_loss(u, u_hat, partition, weights, strict=False):
    """Band-weighted spectral l1 loss.

    ``sum_g w_g * sum_{b in g} sum_{k in b, c} |FT(u)_k - FT(u_hat)_k| / n``
    with ``n = H * W``.

    Parameters
    ----------
    u, u_hat : array-like of shape (H, W, C) or (N, H, W, C)
    partition : BandPartition
    weights : array-like of shape (n_groups,)
    strict : bool, default=False
        Require strictly positive weights (metric mode).
    """
    batched, d = _spectral_diff(u, u_hat, partition)
    bin_w = _bin_weight_map(partition, weights, strict)[:, :, None]
    value = (np.abs(d) * bin_w).sum(axis=(-3, -2, -1)) / partition.n_bins
    if not batched:
        return float(value)
    return value


def fourier_loss_grad(u, u_hat, partition, weights, epsilon_grad=1e-12):
    """Gradient of :func:`fourier_loss` with respect to ``u_hat``.

    With ``D = FT(u) - FT(u_hat)`` and per-bin weights ``c``, the gradient
    is ``-Re(IFT(c * D / |D|))``; bins with ``|D| < epsilon_grad`` contribute
    zero.
    """
    if epsilon_grad <= 0:
        raise InvalidInputError("epsilon_grad must be > 0")
    _, d = _spectral_diff(u, u_hat, partition)
    bin_w = _bin_weight_map(partition, weights)[:, :, None]
    mod = np.abs(d)
    live = mod >= epsilon_grad
    z = np.zeros_like(d)
    z[live] = d[live] / mod[live]
    z *= bin_w
    return -np.fft.ifft2(z, axes=(-3, -2)).real


def magnitude_loss(u, u_hat, partition, weights):
    """Band-weighted l1 loss on spectral magnitudes ``||FT(u)| - |FT(u_hat)||``."""
    u, u_hat = _pair(u, u_hat)
    check_partition(partition, u)
    per_bin = np.abs(np.abs(_dft_batch(u)) - np.abs(_dft_batch(u_hat)))
    bin_w = _bin_weight_map(partition, weights)[:, :, None]
    value = (per_bin * bin_w).sum(axis=(-3, -2, -1)) / partition.n_bins
    return value if u.ndim == 4 else float(value)


def phase_loss(u, u_hat, partition, weights, epsilon_grad=1e-12):
    """Band-weighted l1 loss on the wrapped phase distance in ``[0, pi]``.

    Bins whose ground-truth modulus is below ``epsilon_grad`` have no
    defined phase and are skipped.
    """
    u, u_hat = _pair(u, u_hat)
    check_partition(partition, u)
    su, sh = _dft_batch(u), _dft_batch(u_hat)
    dist = np.abs(np.angle(su) - np.angle(sh))
    dist = np.minimum(dist, 2 * np.pi - dist)
    dist[np.abs(su) < epsilon_grad] = 0.0
    bin_w = _bin_weight_map(partition, weights)[:, :, None]
    value = (dist * bin_w).sum(axis=(-3, -2, -1)) / partition.n_bins
    return value if u.ndim == 4 else float(value)


# ---------------------------------------------------------------- total


@dataclass
class LossConfig:
    """Weights of the total loss ``lambda_o * L_baseline + L_fourier``.

    ``weights=None`` disables the Fourier term. ``boundaries=None`` uses the
    default weight groups for whatever grid the loss is evaluated on.
    """

    lambda_u: float = 1.0
    lambda_grad_u: float = 1.0
    lambda_o: float = 1.0
    weights: list = None
    boundaries: list = None
    epsilon_grad: float = 1e-12
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("lambda_u", "lambda_grad_u", "lambda_o"):
            if not np.isfinite(getattr(self, name)) or getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be finite and >= 0")
        if not self.epsilon_grad > 0:
            raise InvalidInputError("epsilon_grad must be > 0")
        if self.weights is not None:
            self.weights = [float(w) for w in self.weights]
        if self.boundaries is not None:
            self.boundaries = [int(b) for b in self.boundaries]

    @classmethod
    def baseline(cls, **kwargs):
        return cls(weights=None, **kwargs)

    @classmethod
    def stl(cls, h, w, boundaries=None, **kwargs):
        partition = make_partition(h, w, boundaries)
        return cls(weights=stl_weights(partition).tolist(),
                   boundaries=list(partition.boundaries), **kwargs)

    @property
    def has_fourier(self):
        return self.weights is not None and any(w > 0 for w in self.weights)

    def partition(self, h, w):
        key = (h, w)
        if key not in self._cache:
            n_groups = len(self.weights) if self.weights is not None else 5
            self._cache[key] = make_partition(h, w, self.boundaries, n_groups=n_groups)
        return self._cache[key]

    def to_dict(self):
        return {
            "lambda_u": self.lambda_u,
            "lambda_grad_u": self.lambda_grad_u,
            "lambda_o": self.lambda_o,
            "epsilon_grad": self.epsilon_grad,
            "weights": self.weights,
            "boundaries": self.boundaries,
        }

    @classmethod
    def from_dict(cls, d):
        known = {"lambda_u", "lambda_grad_u", "lambda_o", "epsilon_grad", "weights", "boundaries"}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown loss config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def loss_terms(u, u_hat, cfg):
    """Return ``(total, baseline, fourier)``; arrays for batched input."""
    u, u_hat = _pair(u, u_hat)
    base = baseline_loss(u, u_hat, cfg.lambda_u, cfg.lambda_grad_u)
    if cfg.weights is not None:
        fol = fourier_loss(u, u_hat, cfg.partition(*u.shape[-3:-1]), cfg.weights)
    else:
        fol = np.zeros_like(base) if u.ndim == 4 else 0.0
    return cfg.lambda_o * base + fol, base, fol


def total_loss(u, u_hat, cfg):
    """``lambda_o * baseline_loss + fourier_loss`` under ``cfg``."""
    return loss_terms(u, u_hat, cfg)[0]


def total_loss_grad(u, u_hat, cfg):
    """Gradient of :func:`total_loss` with respect to ``u_hat``."""
    u, u_hat = _pair(u, u_hat)
    grad = cfg.lambda_o * baseline_loss_grad(u, u_hat, cfg.lambda_u, cfg.lambda_grad_u)
    if cfg.weights is not None:
        part = cfg.partition(*u.shape[-3:-1])
        grad = grad + fourier_loss_grad(u, u_hat, part, cfg.weights, cfg.epsilon_grad)
    return grad
