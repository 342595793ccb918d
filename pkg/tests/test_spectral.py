import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from freqloss._validation import InvalidInputError
from freqloss.spectral import (
    BandFilter,
    SymmetryError,
    band_filter,
    band_l1,
    default_boundaries,
    dft,
    idft,
    make_partition,
)

from conftest import brute_band, naive_dft


def rel_err(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


def cosine_field(h, w, ky, kx, amp=1.0):
    y = np.arange(h)[:, None]
    x = np.arange(w)[None, :]
    return (amp * np.cos(2 * np.pi * (ky * y / h + kx * x / w)))[:, :, None]


# ---------------------------------------------------------------- dft / idft


def test_dft_zero():
    assert np.all(dft(np.zeros((8, 8, 2))) == 0)


def test_dft_constant():
    s = dft(np.full((4, 4, 1), 2.5))
    assert s[0, 0, 0] == pytest.approx(16 * 2.5)
    s[0, 0, 0] = 0
    assert np.abs(s).max() < 1e-12


def test_dft_matches_direct_summation(rng):
    u = rng.normal(size=(8, 8, 2))
    assert rel_err(dft(u), naive_dft(u)) < 1e-10


def test_dft_matches_direct_summation_rectangular(rng):
    u = rng.normal(size=(4, 6, 1))
    assert rel_err(dft(u), naive_dft(u)) < 1e-10


def test_dft_linearity(rng):
    x, y = rng.normal(size=(2, 64, 64, 2))
    a, b = 1.7, -0.3
    assert rel_err(dft(a * x + b * y), a * dft(x) + b * dft(y)) < 1e-10


def test_round_trip(rng):
    u = rng.normal(size=(64, 64, 2))
    assert rel_err(idft(dft(u)), u) < 1e-10


def test_idft_zero():
    assert np.all(idft(np.zeros((8, 8, 1), dtype=complex)) == 0)


def test_idft_two_bin_cosine():
    # S[k] = S[-k] = A n / 2 inverts to A cos(2 pi k.x / N)
    h = w = 16
    s = np.zeros((h, w, 1), dtype=complex)
    s[3, 5, 0] = s[-3, -5, 0] = 0.8 * h * w / 2
    np.testing.assert_allclose(idft(s), cosine_field(h, w, 3, 5, 0.8), atol=1e-12)


def test_idft_rejects_asymmetric_spectrum():
    s = np.zeros((8, 8, 1), dtype=complex)
    s[1, 2, 0] = 1.0
    with pytest.raises(SymmetryError):
        idft(s)


def test_conjugate_symmetry_of_real_fields():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        h, w = rng.choice([4, 8, 16], size=2)
        s = dft(rng.normal(size=(h, w, 2)) * rng.uniform(0.01, 100))
        mirror = np.conj(s[(-np.arange(h)) % h][:, (-np.arange(w)) % w])
        assert np.abs(s - mirror).max() <= 1e-6 * np.abs(s).max()


# ---------------------------------------------------------------- partition


def test_partition_small_grid_indices():
    p = make_partition(4, 4, n_groups=1)
    assert p.band[0, 0] == 0
    assert p.band[0, 1] == 1  # kx'=1, ky'=0
    assert p.band[2, 2] == 2  # kx'=ky'=-2, floor(sqrt 8)
    assert p.n_fine == 3


@pytest.mark.parametrize("shape", [(4, 4), (8, 8), (16, 16), (64, 64), (8, 16), (6, 10)])
def test_partition_matches_brute_force(shape):
    h, w = shape
    p = make_partition(h, w, n_groups=1)
    expected = np.array([[brute_band(ky, kx, h, w) for kx in range(w)] for ky in range(h)])
    assert np.array_equal(p.band, expected)
    assert p.counts.sum() == h * w
    assert p.group_counts().sum() == h * w


def test_partition_dc_band_count():
    p = make_partition(64, 64)
    dc_bins = sum(brute_band(ky, kx, 64, 64) == 0 for ky in range(64) for kx in range(64))
    assert dc_bins == 1
    assert p.counts[0] == 1


def test_default_groups_64():
    p = make_partition(64, 64)
    assert p.n_fine == 46  # floor(32 * sqrt 2) + 1
    assert p.boundaries == (5, 15, 25, 32, 46)
    assert [list(p.group_bands(g))[0] for g in range(5)] == [0, 5, 15, 25, 32]
    assert list(p.band_group[[4, 5, 14, 15, 24, 25, 31, 32, 45]]) == [0, 1, 1, 2, 2, 3, 3, 4, 4]


@pytest.mark.parametrize("n", [8, 16, 32, 64, 128])
def test_default_boundaries_valid(n):
    b = default_boundaries(n, n)
    assert len(b) == 5 and all(x < y for x, y in zip(b, b[1:]))
    make_partition(n, n, b)


def test_default_boundaries_other_group_counts():
    assert default_boundaries(64, 64, 2) == (23, 46)
    with pytest.raises(InvalidInputError):
        default_boundaries(4, 4, 5)


@pytest.mark.parametrize("h,w", [(5, 8), (8, 7)])
def test_partition_rejects_odd_dims(h, w):
    with pytest.raises(InvalidInputError, match="even"):
        make_partition(h, w)


@pytest.mark.parametrize("bounds", [(5, 3, 46), (5, 5, 46), (0, 46), (5, 15, 30)])
def test_partition_rejects_bad_boundaries(bounds):
    with pytest.raises(InvalidInputError):
        make_partition(64, 64, bounds)


def test_partition_json(tmp_path):
    p = make_partition(16, 16)
    p.to_json(tmp_path / "p.json")
    d = json.loads((tmp_path / "p.json").read_text())
    assert d["H"] == 16 and d["W"] == 16
    assert sum(d["p_b"]) == 256
    assert d["boundaries"] == list(p.boundaries)


# ---------------------------------------------------------------- filtering


def test_band_filter_noop_above_max(rng):
    u = rng.normal(size=(16, 16, 2))
    p = make_partition(16, 16)
    assert rel_err(band_filter(u, p, p.n_fine - 1), u) < 1e-10


def test_band_filter_dc_only_keeps_constant():
    u = np.full((8, 8, 1), 3.0)
    np.testing.assert_allclose(band_filter(u, make_partition(8, 8), 0), u, rtol=1e-12)


def test_band_filter_removes_single_band_signal():
    u = cosine_field(64, 64, 6, 8)  # centred radius exactly 10
    p = make_partition(64, 64)
    assert p.band[6, 8] == 10
    assert np.abs(band_filter(u, p, 5)).max() < 1e-10
    assert rel_err(band_filter(u, p, 10), u) < 1e-10


def test_band_filter_idempotent(rng):
    u = rng.normal(size=(64, 64, 2))
    p = make_partition(64, 64)
    once = band_filter(u, p, 20)
    assert rel_err(band_filter(once, p, 20), once) < 1e-10


def test_band_filter_dimension_mismatch(rng):
    with pytest.raises(InvalidInputError, match="mismatch"):
        band_filter(rng.normal(size=(8, 8, 1)), make_partition(16, 16), 3)


def test_band_filter_estimator(rng):
    X = rng.normal(size=(3, 16, 16, 2))
    est = BandFilter(max_band=4)
    assert clone(est).get_params() == {"max_band": 4}
    out = est.fit_transform(X)
    p = make_partition(16, 16)
    for i in range(3):
        np.testing.assert_allclose(out[i], band_filter(X[i], p, 4), atol=1e-12)


# ---------------------------------------------------------------- band_l1


def brute_band_l1(sa, sb):
    h, w, c = sa.shape
    n_fine = max(brute_band(ky, kx, h, w) for ky in range(h) for kx in range(w)) + 1
    out = np.zeros(n_fine)
    for ky in range(h):
        for kx in range(w):
            b = brute_band(ky, kx, h, w)
            for ch in range(c):
                out[b] += abs(sa[ky, kx, ch] - sb[ky, kx, ch])
    return out / (h * w)


def test_band_l1_identical_is_zero(rng):
    s = dft(rng.normal(size=(8, 8, 2)))
    assert np.all(band_l1(s, s, make_partition(8, 8)) == 0)


def test_band_l1_sums_to_full_spectrum(rng):
    sa, sb = dft(rng.normal(size=(16, 16, 2))), dft(rng.normal(size=(16, 16, 2)))
    total = band_l1(sa, sb, make_partition(16, 16)).sum()
    assert total == pytest.approx(np.abs(sa - sb).sum() / 256, rel=1e-12)


def test_band_l1_matches_brute_force(rng):
    sa, sb = dft(rng.normal(size=(8, 8, 2))), dft(rng.normal(size=(8, 8, 2)))
    np.testing.assert_allclose(band_l1(sa, sb, make_partition(8, 8)), brute_band_l1(sa, sb),
                               rtol=1e-12)


def test_band_l1_dimension_mismatch(rng):
    with pytest.raises(InvalidInputError):
        band_l1(np.zeros((8, 8, 1)), np.zeros((8, 8, 2)), make_partition(8, 8))


@settings(max_examples=60, deadline=None)
@given(h=st.sampled_from([4, 6, 8, 12, 16, 32]), w=st.sampled_from([4, 8, 10, 16, 64]))
def test_partition_exhaustive_property(h, w):
    p = make_partition(h, w, n_groups=1)
    assert p.counts.sum() == h * w
    assert np.all(p.counts >= 0)
    assert p.band[0, 0] == 0
