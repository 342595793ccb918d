import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from freqloss._validation import InvalidInputError
from freqloss.fields import (
    DEFAULT_RANGES,
    FieldFormatError,
    SyntheticConfig,
    dataset_digest,
    discrete_curl,
    divergence,
    gen_dataset,
    grid_coordinates,
    load_dataset,
    read_field,
    save_dataset,
    stream_function,
    synth_field,
    write_field,
)

EPS = np.finfo(np.float64).eps


def spectral_divergence(u):
    """Exact divergence of the trigonometric interpolant of a periodic field."""
    h, w, _ = u.shape
    ky = np.fft.fftfreq(h, 1.0 / h)[:, None]
    kx = np.fft.fftfreq(w, 1.0 / w)[None, :]
    s = 2j * np.pi * (kx * np.fft.fft2(u[..., 0]) + ky * np.fft.fft2(u[..., 1]))
    return np.fft.ifft2(s).real


def lattice_terms(rng, n, size):
    terms = []
    for _ in range(n):
        kx, ky = rng.integers(-size // 2 + 1, size // 2, size=2)
        terms.append((rng.uniform(0.1, 1), float(np.hypot(kx, ky)), float(np.arctan2(ky, kx)),
                      rng.uniform(0, 2 * np.pi)))
    return tuple(t for t in terms if 0 < t[1] < size / 2)


def test_zero_stream_function_gives_zero_field():
    cfg = SyntheticConfig(amplitude=0.0, epsilon=0.0)
    u = synth_field([0.5, 0.07, 0.3], cfg)
    assert u.shape == (64, 64, 2)
    assert np.all(u == 0)


def test_discrete_curl_divergence_at_rounding_level():
    # forward-difference curl of the sampled stream function, grid units
    rng = np.random.default_rng(3)
    lo, hi = np.array(DEFAULT_RANGES).T
    for i in range(1000):
        cfg = SyntheticConfig(seed=i % 7, coupling=rng.uniform(0, 1), epsilon=rng.uniform(0, 2e-3))
        u = discrete_curl(stream_function(rng.uniform(lo, hi), cfg))
        div = divergence(u) / cfg.size
        assert np.mean(np.abs(div)) <= 10 * EPS * np.abs(u).max()


def test_analytic_curl_is_spectrally_divergence_free():
    # periodic, band-limited stream functions: exact derivative check on the grid
    rng = np.random.default_rng(4)
    lo, hi = np.array(DEFAULT_RANGES).T
    for _ in range(1000):
        terms = lattice_terms(rng, 6, 32)
        cfg = SyntheticConfig(size=32, amplitude=0.0, epsilon=rng.uniform(1e-4, 1e-2),
                              terms=terms, coupling=rng.uniform(0, 1))
        u = synth_field(rng.uniform(lo, hi), cfg)
        scale = 2 * np.pi * 16 * np.abs(u).max()
        assert np.abs(spectral_divergence(u)).max() <= 1e-12 * scale


def test_analytic_velocity_matches_stream_function_derivatives(rng):
    cfg = SyntheticConfig(size=16)
    c = np.array([0.45, 0.06, 0.7])
    y, x = grid_coordinates(16, 16)
    h = 1e-6
    dpsi_dy = (stream_function(c, cfg, y + h, x) - stream_function(c, cfg, y - h, x)) / (2 * h)
    dpsi_dx = (stream_function(c, cfg, y, x + h) - stream_function(c, cfg, y, x - h)) / (2 * h)
    u = synth_field(c, cfg)
    scale = np.abs(u).max()
    np.testing.assert_allclose(u[..., 0], dpsi_dy, atol=1e-6 * scale)
    np.testing.assert_allclose(u[..., 1], -dpsi_dx, atol=1e-6 * scale)


def test_forward_difference_divergence_shrinks_with_resolution():
    c = [0.5, 0.08, 0.4]
    coarse = np.abs(divergence(synth_field(c, SyntheticConfig(size=32, epsilon=0)))).max()
    fine = np.abs(divergence(synth_field(c, SyntheticConfig(size=128, epsilon=0)))).max()
    assert fine < coarse / 2


def test_centered_plume_mirror_symmetry():
    u = synth_field([0.5, 0.08, 0.6], SyntheticConfig(epsilon=0.0))
    mirrored = u[:, ::-1, :]
    np.testing.assert_allclose(mirrored[..., 0], u[..., 0], atol=1e-15)
    np.testing.assert_allclose(mirrored[..., 1], -u[..., 1], atol=1e-15)
    assert np.abs(u).max() > 0.1


def test_analytic_curl_matches_perturbation_derivative():
    # single mode, no plume: u_x = dpsi/dy at a cell centre, by hand
    term = (1.0, 3.0, 0.4, 0.2)
    cfg = SyntheticConfig(size=16, amplitude=0.0, epsilon=0.5, terms=(term,), coupling=0.0)
    u = synth_field([0.5, 0.05, 0.0], cfg)
    x, y = 2.5 / 16, 5.5 / 16
    k = 2 * np.pi * 3.0
    arg = k * (x * np.cos(0.4) + y * np.sin(0.4)) + 0.2
    assert u[5, 2, 0] == pytest.approx(0.5 * np.cos(arg) * k * np.sin(0.4), rel=1e-12)
    assert u[5, 2, 1] == pytest.approx(-0.5 * np.cos(arg) * k * np.cos(0.4), rel=1e-12)


def test_synth_rejects_non_finite_params():
    with pytest.raises(InvalidInputError):
        synth_field([np.nan, 0.1, 0.1])


@pytest.mark.parametrize("size", [33, 2, 48])
def test_config_rejects_bad_sizes(size):
    with pytest.raises(InvalidInputError):
        SyntheticConfig(size=size)


def test_config_rejects_frequency_above_nyquist():
    with pytest.raises(InvalidInputError, match="Nyquist"):
        SyntheticConfig(size=16, terms=((1.0, 8.0, 0.0, 0.0),))


def test_config_dict_round_trip():
    cfg = SyntheticConfig(size=32, seed=4)
    assert SyntheticConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_gen_dataset_count_zero_is_error():
    with pytest.raises(InvalidInputError):
        gen_dataset(count=0)


@pytest.mark.parametrize("ranges", [(), [(1.0, 0.0)], [(0.0, np.inf)]])
def test_gen_dataset_rejects_bad_ranges(ranges):
    with pytest.raises(InvalidInputError):
        gen_dataset(param_ranges=ranges, count=2)


def test_gen_dataset_deterministic():
    cfg = SyntheticConfig(size=16)
    a = gen_dataset(cfg, count=5, seed=9)
    b = gen_dataset(cfg, count=5, seed=9)
    assert a.params.tobytes() == b.params.tobytes()
    assert a.fields.tobytes() == b.fields.tobytes()
    c = gen_dataset(cfg, count=5, seed=10)
    assert not np.array_equal(a.params, c.params)


def test_gen_dataset_samples_inside_ranges():
    ds = gen_dataset(SyntheticConfig(size=16), count=100, seed=1)
    lo, hi = np.array(DEFAULT_RANGES).T
    assert np.all(ds.params >= lo) and np.all(ds.params <= hi)


def test_gen_dataset_sample_independent_of_count():
    cfg = SyntheticConfig(size=16)
    assert np.array_equal(gen_dataset(cfg, count=3, seed=2).params,
                          gen_dataset(cfg, count=8, seed=2).params[:3])


def test_split_is_deterministic_and_disjoint():
    ds = gen_dataset(SyntheticConfig(size=16), count=20, seed=0)
    tr, te = ds.split(0.25, seed=5)
    tr2, te2 = ds.split(0.25, seed=5)
    assert len(te) == 5 and len(tr) == 15
    assert np.array_equal(tr.params, tr2.params)
    rows = {tuple(r) for r in tr.params} | {tuple(r) for r in te.params}
    assert len(rows) == 20


# ---------------------------------------------------------------- FBF1


def test_round_trip_is_bitwise(tmp_path, rng):
    u = rng.normal(size=(8, 12, 2)).astype(np.float32)
    write_field(tmp_path / "a.fbf", u)
    back = read_field(tmp_path / "a.fbf")
    assert back.dtype == np.float32
    assert back.tobytes() == u.tobytes()


def test_file_layout(tmp_path):
    u = np.arange(4 * 4 * 2, dtype=np.float32).reshape(4, 4, 2)
    write_field(tmp_path / "a.fbf", u)
    raw = (tmp_path / "a.fbf").read_bytes()
    assert raw[:4] == b"\x46\x42\x46\x31"
    assert struct.unpack("<III", raw[4:16]) == (4, 4, 2)
    # channel innermost: second value is channel 1 of pixel (0, 0)
    assert struct.unpack("<ff", raw[16:24]) == (0.0, 1.0)
    assert len(raw) == 16 + 128


finite_f32 = st.floats(width=32, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.sampled_from([4, 6, 8]), st.sampled_from([4, 8]),
                                    st.integers(1, 3)), elements=finite_f32))
def test_round_trip_property(tmp_path_factory, u):
    path = tmp_path_factory.mktemp("fbf") / "x.fbf"
    write_field(path, u)
    assert read_field(path).tobytes() == u.tobytes()


def test_extreme_values_round_trip(tmp_path):
    info = np.finfo(np.float32)
    u = np.full((4, 4, 1), info.max, dtype=np.float32)
    u[0, 0, 0] = -info.max
    u[1, 1, 0] = info.tiny
    u[2, 2, 0] = np.float32(1e-45)  # subnormal
    write_field(tmp_path / "x.fbf", u)
    assert read_field(tmp_path / "x.fbf").tobytes() == u.tobytes()


def test_write_rejects_values_outside_float32(tmp_path):
    with pytest.raises(InvalidInputError):
        write_field(tmp_path / "x.fbf", np.full((4, 4, 1), 1e39))


def test_bad_magic(tmp_path):
    (tmp_path / "x.fbf").write_bytes(b"XXXX" + struct.pack("<III", 4, 4, 1) + bytes(64))
    with pytest.raises(FieldFormatError, match="magic") as info:
        read_field(tmp_path / "x.fbf")
    assert info.value.offset == 0


def test_truncated_payload(tmp_path):
    (tmp_path / "x.fbf").write_bytes(b"FBF1" + struct.pack("<III", 4, 4, 2) + bytes(100))
    with pytest.raises(FieldFormatError, match="expected 128 bytes") as info:
        read_field(tmp_path / "x.fbf")
    assert info.value.offset == 16


def test_trailing_bytes_are_dimension_mismatch(tmp_path):
    (tmp_path / "x.fbf").write_bytes(b"FBF1" + struct.pack("<III", 4, 4, 1) + bytes(68))
    with pytest.raises(FieldFormatError, match="dimension mismatch"):
        read_field(tmp_path / "x.fbf")


def test_truncated_header(tmp_path):
    (tmp_path / "x.fbf").write_bytes(b"FBF1\x04")
    with pytest.raises(FieldFormatError, match="header"):
        read_field(tmp_path / "x.fbf")


def test_dataset_directory_round_trip(tmp_path):
    ds = gen_dataset(SyntheticConfig(size=16), count=4, seed=3)
    save_dataset(ds, tmp_path / "d")
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert manifest["count"] == 4 and manifest["grid_size"] == [16, 16]
    assert manifest["channels"] == 2
    back = load_dataset(tmp_path / "d")
    assert np.array_equal(back.params, ds.params)
    assert np.array_equal(back.fields, ds.fields.astype(np.float32))


def test_dataset_bytes_deterministic(tmp_path):
    cfg = SyntheticConfig(size=16)
    save_dataset(gen_dataset(cfg, count=3, seed=4), tmp_path / "a")
    save_dataset(gen_dataset(cfg, count=3, seed=4), tmp_path / "b")
    assert dataset_digest(tmp_path / "a") == dataset_digest(tmp_path / "b")
