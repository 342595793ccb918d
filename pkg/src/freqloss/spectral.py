"""DFTs of grid fields and the centred radial band partition.

Convention: the forward transform is unnormalised (``numpy.fft.fft2`` over
the two grid axes, bin 0 is DC) and the inverse applies the ``1/n`` factor
with ``n = H * W``.

A bin with signed centred frequencies ``(ky', kx')`` belongs to fine band
``floor(sqrt(kx'**2 + ky'**2))``. Fine bands are grouped into contiguous
weight groups; band weights are assigned per group.
"""

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import InvalidInputError, check_field, check_fields, check_same_shape

#: Group end points (exclusive) on a 64x64 grid, before the final catch-all group.
_REFERENCE_EDGES = (5, 15, 25, 32)
SYMMETRY_RTOL = 1e-6


class SymmetryError(ValueError):
    """The spectrum is not conjugate-symmetric, so it has no real inverse."""


def centered_frequencies(n):
    """Signed integer frequencies in standard DFT order, in ``[-n/2, n/2)``."""
    return np.fft.fftfreq(n, d=1.0 / n).round().astype(int)


def fine_band_index(h, w):
    """Integer fine-band index of every bin, in standard DFT layout."""
    ky = centered_frequencies(h)[:, None]
    kx = centered_frequencies(w)[None, :]
    r2 = kx * kx + ky * ky
    band = np.floor(np.sqrt(r2)).astype(int)
    # guard float sqrt on perfect squares
    band[(band + 1) ** 2 <= r2] += 1
    band[band * band > r2] -= 1
    return band


@dataclass(frozen=True, eq=False)
class BandPartition:
    """Assignment of every frequency bin to a fine band and a weight group.

    Attributes
    ----------
    shape : (H, W)
    band : ndarray of int, shape (H, W)
        Fine band per bin, in standard DFT layout.
    counts : ndarray of int, shape (n_fine,)
        Bins per fine band (``p_b``).
    boundaries : tuple of int
        Exclusive end of each weight group in fine-band indices.
    band_group : ndarray of int, shape (n_fine,)
        Weight group of each fine band.
    """

    shape: tuple
    band: np.ndarray
    counts: np.ndarray
    boundaries: tuple
    band_group: np.ndarray

    @property
    def n_bins(self):
        return self.shape[0] * self.shape[1]

    @property
    def n_fine(self):
        return len(self.counts)

    @property
    def n_groups(self):
        return len(self.boundaries)

    @property
    def group(self):
        """Weight group per bin, shape (H, W)."""
        return self.band_group[self.band]

    def group_counts(self):
        """Bins per weight group (``P_g``)."""
        return np.bincount(self.band_group, weights=self.counts, minlength=self.n_groups).astype(int)

    def group_bands(self, g):
        lo = 0 if g == 0 else self.boundaries[g - 1]
        return range(lo, min(self.boundaries[g], self.n_fine))

    def bin_weights(self, weights):
        """Broadcast per-group weights to an (H, W) per-bin map."""
        weights = check_weights(weights, self)
        return weights[self.group]

    def to_dict(self):
        return {
            "H": self.shape[0],
            "W": self.shape[1],
            "boundaries": list(self.boundaries),
            "p_b": self.counts.tolist(),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def n_fine_bands(h, w):
    return int(fine_band_index(h, w).max()) + 1


def default_boundaries(h, w, n_groups=5):
    """Default weight-group end points for an ``h x w`` grid.

    On 64x64 with five groups this yields fine bands ``[0, 5)``, ``[5, 15)``,
    ``[15, 25)``, ``[25, 32)`` and ``[32, n_fine)``. Other sizes scale those
    edges with the grid; other group counts split the fine bands evenly.
    """
    n_fine = n_fine_bands(h, w)
    if n_groups < 1 or n_groups > n_fine:
        raise InvalidInputError(
            f"cannot form {n_groups} weight groups from {n_fine} fine bands"
        )
    if n_groups == len(_REFERENCE_EDGES) + 1:
        half = min(h, w) / 2
        edges = [int(round(e * half / 32)) for e in _REFERENCE_EDGES] + [n_fine]
        if edges[0] >= 1 and all(a < b for a, b in zip(edges, edges[1:])):
            return tuple(edges)
    edges = np.round(np.linspace(0, n_fine, n_groups + 1)[1:]).astype(int)
    return tuple(int(e) for e in edges)


def make_partition(h, w, boundaries=None, n_groups=5):
    """Build the band partition of an ``h x w`` grid.

    Parameters
    ----------
    h, w : int
        Even grid dimensions.
    boundaries : sequence of int, optional
        Strictly increasing exclusive group end points; the last one must be
        at least the number of fine bands. Defaults to
        :func:`default_boundaries`.
    n_groups : int, default=5
        Only used when ``boundaries`` is None.
    """
    if h % 2 or w % 2 or h < 2 or w < 2:
        raise InvalidInputError(f"grid dimensions must be even, got {h}x{w}")
    band = fine_band_index(h, w)
    n_fine = int(band.max()) + 1
    if boundaries is None:
        boundaries = default_boundaries(h, w, n_groups)
    boundaries = tuple(int(b) for b in boundaries)
    if not boundaries:
        raise InvalidInputError("at least one group boundary is required")
    if boundaries[0] < 1 or any(a >= b for a, b in zip(boundaries, boundaries[1:])):
        raise InvalidInputError(f"group boundaries must be strictly increasing from >= 1: {boundaries}")
    if boundaries[-1] < n_fine:
        raise InvalidInputError(
            f"last group boundary {boundaries[-1]} must cover all {n_fine} fine bands"
        )
    band_group = np.searchsorted(np.asarray(boundaries), np.arange(n_fine), side="right")
    counts = np.bincount(band.ravel(), minlength=n_fine)
    return BandPartition((h, w), band, counts, boundaries, band_group)


def partition_for(u, boundaries=None, n_groups=5):
    return make_partition(u.shape[-3], u.shape[-2], boundaries, n_groups)


def check_partition(partition, u):
    if tuple(partition.shape) != tuple(u.shape[-3:-1]):
        raise InvalidInputError(
            f"dimension mismatch: partition {partition.shape} vs field {u.shape[-3:-1]}"
        )


def check_weights(weights, partition, strict=False):
    """Validate per-group band weights against a partition.

    ``strict`` additionally requires every weight to be positive, which is
    what the metric properties of the Fourier loss rely on.
    """
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.shape != (partition.n_groups,):
        raise InvalidInputError(
            f"weight/partition mismatch: {weights.size} weights for {partition.n_groups} groups"
        )
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise InvalidInputError("band weights must be finite and non-negative")
    if strict and np.any(weights <= 0):
        raise InvalidInputError("metric mode requires strictly positive band weights")
    return weights


# ---------------------------------------------------------------- transforms


def dft(u):
    """Unnormalised forward 2D DFT of each channel; shape (H, W, C) complex."""
    u = check_field(u)
    return np.fft.fft2(u, axes=(0, 1))


def _dft_batch(u):
    return np.fft.fft2(u, axes=(-3, -2))


def conjugate_mirror(s):
    """``conj(S[(-ky) mod H, (-kx) mod W])`` for spectra with grid axes (-3, -2)."""
    mirrored = np.roll(np.flip(s, axis=(-3, -2)), shift=(1, 1), axis=(-3, -2))
    return np.conj(mirrored)


def symmetry_residual(s):
    """Largest deviation from conjugate symmetry, relative to ``max |S|``."""
    scale = np.max(np.abs(s)) if s.size else 0.0
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(s - conjugate_mirror(s))) / scale)


def idft(s):
    """Real inverse DFT (with the ``1/n`` factor) of a conjugate-symmetric spectrum."""
    s = np.asarray(s, dtype=np.complex128)
    if s.ndim == 2:
        s = s[:, :, None]
    if s.ndim != 3:
        raise InvalidInputError(f"spectrum must have shape (H, W, C), got {s.shape}")
    residual = symmetry_residual(s)
    if residual > SYMMETRY_RTOL:
        raise SymmetryError(
            f"spectrum is not conjugate-symmetric (relative residual {residual:.3g})"
        )
    return np.fft.ifft2(s, axes=(0, 1)).real


def band_filter(u, partition, max_band):
    """Keep only bins whose fine band is at most ``max_band``."""
    u = check_field(u)
    check_partition(partition, u)
    s = dft(u)
    s[partition.band > max_band] = 0
    return idft(s)


def band_l1(spec_a, spec_b, partition):
    """Per-fine-band sum of ``|S_a - S_b|`` over bins and channels, divided by ``n``.

    Returns
    -------
    ndarray of shape (n_fine,)
    """
    spec_a = np.asarray(spec_a)
    spec_b = np.asarray(spec_b)
    check_same_shape(spec_a, spec_b, ("spec_a", "spec_b"))
    if spec_a.ndim == 2:
        spec_a, spec_b = spec_a[..., None], spec_b[..., None]
    check_partition(partition, spec_a)
    per_bin = np.abs(spec_a - spec_b).sum(axis=-1)
    sums = np.bincount(partition.band.ravel(), weights=per_bin.ravel(), minlength=partition.n_fine)
    return sums / partition.n_bins


class BandFilter(TransformerMixin, BaseEstimator):
    """Low-pass a batch of fields to fine bands ``<= max_band``.

    Parameters
    ----------
    max_band : int, default=30

    Examples
    --------
    >>> import numpy as np
    >>> X = np.random.default_rng(0).normal(size=(2, 8, 8, 2))
    >>> BandFilter(max_band=10).fit_transform(X).shape
    (2, 8, 8, 2)
    """

    def __init__(self, max_band=30):
        self.max_band = max_band

    def fit(self, X, y=None):
        X = check_fields(X, "X")
        self.partition_ = partition_for(X, n_groups=1)
        self.grid_shape_ = X.shape[1:3]
        return self

    def transform(self, X):
        check_is_fitted(self, "partition_")
        X = check_fields(X, "X")
        check_partition(self.partition_, X)
        s = _dft_batch(X)
        s[:, self.partition_.band > self.max_band, :] = 0
        return np.fft.ifft2(s, axes=(1, 2)).real
