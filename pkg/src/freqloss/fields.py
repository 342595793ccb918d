"""Grid fields, a synthetic plume dataset and the FBF1 binary format.

A field is a real array of shape ``(H, W, C)`` on the unit square, sampled
at cell centres ``x_i = (i + 0.5) / W`` and ``y_j = (j + 0.5) / H``; axis 0
is ``y`` and axis 1 is ``x``. Velocity fields carry ``C = 2`` channels
``(u_x, u_y)``.

FBF1 layout (little-endian)::

    b"FBF1" | u32 H | u32 W | u32 C | H*W*C float32, row-major, channel innermost
"""

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._validation import InvalidInputError, check_field, check_params

MAGIC = b"FBF1"
_HEADER = struct.Struct("<4sIII")
_F32_MAX = float(np.finfo(np.float32).max)

#: Default parameter ranges: source x-position, source width, time.
DEFAULT_RANGES = ((0.3, 0.7), (0.04, 0.1), (0.0, 1.0))


class FieldFormatError(ValueError):
    """Malformed FBF1 data. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class PerturbationTerm:
    """One sinusoidal stream-function mode ``a * sin(2 pi f (k . x) + phase)``.

    ``frequency`` is in cycles per domain and ``angle`` is the direction of
    the wave vector in radians.
    """

    amplitude: float
    frequency: float
    angle: float
    phase: float


def random_terms(n_terms=32, freq_range=(8.0, 30.0), seed=0):
    """Draw perturbation modes with uniform frequency, direction and phase.

    Amplitudes fall off as ``(10 / f)**2`` so the velocity amplitude of a
    mode decays like ``1 / f``.
    """
    rng = np.random.default_rng([seed, 0x7E57])
    f = rng.uniform(*freq_range, size=n_terms)
    theta = rng.uniform(0, 2 * np.pi, size=n_terms)
    phase = rng.uniform(0, 2 * np.pi, size=n_terms)
    return tuple(
        PerturbationTerm(float((10.0 / fj) ** 2), float(fj), float(tj), float(pj))
        for fj, tj, pj in zip(f, theta, phase)
    )


@dataclass(frozen=True)
class SyntheticConfig:
    """Settings of the analytic plume stream function.

    The stream function is a Gaussian blob centred at
    ``(c1, y0 + rise_speed * c3)`` with width ``c2`` plus the perturbation
    modes, which default to :func:`random_terms` drawn from ``seed`` over
    8 to 30 cycles per domain (scaled by ``size / 64``).
    ``coupling`` carries the perturbation pattern along with the
    blob: its coordinates are shifted by
    ``coupling * (c1 - 0.5, rise_speed * c3)``. With ``coupling = 0`` the
    pattern is static and identical for every sample.
    """

    size: int = 64
    amplitude: float = 0.05
    y0: float = 0.3
    rise_speed: float = 0.4
    epsilon: float = 1e-3
    terms: tuple = None
    coupling: float = 0.1
    seed: int = 0

    def __post_init__(self):
        terms = self.terms
        if terms is None:
            scale = self.size / 64 if isinstance(self.size, (int, np.integer)) else 1.0
            terms = random_terms(freq_range=(8.0 * scale, 30.0 * scale), seed=self.seed)
        object.__setattr__(
            self,
            "terms",
            tuple(t if isinstance(t, PerturbationTerm) else PerturbationTerm(*t)
                  for t in terms),
        )
        self.validate()

    def validate(self):
        n = self.size
        if not isinstance(n, (int, np.integer)) or n < 4 or n % 2:
            raise InvalidInputError(f"grid size must be an even integer >= 4, got {n}")
        if n & (n - 1):
            raise InvalidInputError(f"grid size must be a power of two, got {n}")
        values = [self.amplitude, self.y0, self.rise_speed, self.epsilon, self.coupling]
        for t in self.terms:
            values.extend(asdict(t).values())
        if not all(math.isfinite(v) for v in values):
            raise InvalidInputError("synthetic config contains non-finite values")
        if self.epsilon < 0:
            raise InvalidInputError("epsilon must be >= 0")
        for t in self.terms:
            if not 0 <= t.frequency < n / 2:
                raise InvalidInputError(
                    f"perturbation frequency {t.frequency} is not below Nyquist ({n / 2})"
                )

    def to_dict(self):
        d = asdict(self)
        d["terms"] = [asdict(t) for t in self.terms]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["terms"] = tuple(PerturbationTerm(**t) for t in d.get("terms", ()))
        return cls(**d)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def grid_coordinates(h, w):
    """Cell-centre coordinates ``(y, x)`` broadcastable to an ``(h, w)`` grid."""
    y = (np.arange(h) + 0.5) / h
    x = (np.arange(w) + 0.5) / w
    return y[:, None], x[None, :]


def _check_c(c, cfg):
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (3,):
        raise InvalidInputError(f"expected 3 parameters, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise InvalidInputError("parameters must be finite")
    if c[1] == 0 and cfg.amplitude != 0:
        raise InvalidInputError("source width must be non-zero")
    return c


def _psi_and_gradient(c, cfg, y, x):
    c1, c2, c3 = c
    yc = cfg.y0 + cfg.rise_speed * c3
    shape = np.broadcast(y, x).shape
    psi = np.zeros(shape)
    dpsi_dx = np.zeros(shape)
    dpsi_dy = np.zeros(shape)

    if cfg.amplitude != 0:
        s2 = c2 * c2
        blob = cfg.amplitude * np.exp(-((x - c1) ** 2 + (y - yc) ** 2) / (2 * s2))
        psi += blob
        dpsi_dx -= blob * (x - c1) / s2
        dpsi_dy -= blob * (y - yc) / s2

    if cfg.epsilon != 0:
        sx = cfg.coupling * (c1 - 0.5)
        sy = cfg.coupling * cfg.rise_speed * c3
        for t in cfg.terms:
            kx = 2 * np.pi * t.frequency * math.cos(t.angle)
            ky = 2 * np.pi * t.frequency * math.sin(t.angle)
            arg = kx * (x - sx) + ky * (y - sy) + t.phase
            a = cfg.epsilon * t.amplitude
            psi += a * np.sin(arg)
            wave = a * np.cos(arg)
            dpsi_dx += wave * kx
            dpsi_dy += wave * ky
    return psi, dpsi_dx, dpsi_dy


def stream_function(c, cfg=None, y=None, x=None):
    """Plume stream function at the cell centres, or at given ``(y, x)`` points."""
    cfg = SyntheticConfig() if cfg is None else cfg
    c = _check_c(c, cfg)
    if y is None or x is None:
        y, x = grid_coordinates(cfg.size, cfg.size)
    return _psi_and_gradient(c, cfg, np.asarray(y, float), np.asarray(x, float))[0]


def synth_field(c, cfg=None):
    """Velocity field of the analytic plume stream function.

    The velocity is the exact curl ``(dpsi/dy, -dpsi/dx)`` evaluated at the
    cell centres, not a finite-difference approximation.

    Parameters
    ----------
    c : array-like of shape (3,)
        Source x-position, source width, time.
    cfg : SyntheticConfig, optional

    Returns
    -------
    ndarray of shape (size, size, 2)
    """
    cfg = SyntheticConfig() if cfg is None else cfg
    c = _check_c(c, cfg)
    y, x = grid_coordinates(cfg.size, cfg.size)
    _, dpsi_dx, dpsi_dy = _psi_and_gradient(c, cfg, y, x)
    return np.stack([dpsi_dy, -dpsi_dx], axis=-1)


def discrete_curl(psi):
    """Forward-difference curl ``(H * Dy psi, -W * Dx psi)`` with periodic wrap.

    ``psi`` has shape ``(..., H, W)``; the result gains a trailing channel
    axis. Paired with :func:`divergence` the result is divergence-free up to
    rounding, since the two difference operators commute.
    """
    psi = np.asarray(psi, dtype=np.float64)
    h, w = psi.shape[-2:]
    ux = (np.roll(psi, -1, axis=-2) - psi) * h
    uy = -(np.roll(psi, -1, axis=-1) - psi) * w
    return np.stack([ux, uy], axis=-1)


def divergence(u):
    """Forward-difference divergence with periodic wrap, in grid units of the unit square."""
    u = check_field(u)
    h, w, _ = u.shape
    ddx = (np.roll(u[..., 0], -1, axis=1) - u[..., 0]) * w
    ddy = (np.roll(u[..., 1], -1, axis=0) - u[..., 1]) * h
    return ddx + ddy


@dataclass
class Dataset:
    """Paired parameter vectors and fields, usable directly as ``X, y``."""

    params: np.ndarray
    fields: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params = check_params(self.params)
        self.fields = np.asarray(self.fields)
        if self.fields.ndim != 4 or self.fields.shape[0] != self.params.shape[0]:
            raise InvalidInputError("fields must be (N, H, W, C) with one entry per parameter vector")

    def __len__(self):
        return self.params.shape[0]

    @property
    def grid_shape(self):
        return self.fields.shape[1:3]

    def split(self, test_fraction=0.25, seed=0):
        """Deterministic train/test split. Returns ``(train, test)``."""
        train_idx, test_idx = split_indices(len(self), test_fraction, seed)
        return self.subset(train_idx), self.subset(test_idx)

    def subset(self, idx):
        return Dataset(self.params[idx], self.fields[idx], dict(self.meta))


def split_indices(n, test_fraction=0.25, seed=0):
    if not 0 <= test_fraction < 1:
        raise InvalidInputError("test_fraction must lie in [0, 1)")
    n_test = int(round(n * test_fraction))
    if n_test == 0 and test_fraction > 0 and n > 1:
        n_test = 1
    perm = np.random.default_rng([seed, 0x5A17]).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def gen_dataset(cfg=None, param_ranges=DEFAULT_RANGES, count=64, seed=0):
    """Draw ``count`` parameter vectors uniformly and synthesise their fields.

    Sample ``i`` uses its own generator seeded with ``(seed, i)`` so the
    result does not depend on generation order.
    """
    cfg = SyntheticConfig() if cfg is None else cfg
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    ranges = np.asarray(param_ranges, dtype=np.float64)
    if ranges.size == 0:
        raise InvalidInputError("parameter ranges are empty")
    if ranges.ndim != 2 or ranges.shape[1] != 2:
        raise InvalidInputError("parameter ranges must be a sequence of (min, max) pairs")
    if not np.all(np.isfinite(ranges)) or np.any(ranges[:, 0] > ranges[:, 1]):
        raise InvalidInputError("parameter ranges must be finite with min <= max")

    params = np.empty((count, ranges.shape[0]))
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        params[i] = rng.uniform(ranges[:, 0], ranges[:, 1])
    fields = np.stack([synth_field(p, cfg) for p in params])
    meta = {
        "grid_size": [cfg.size, cfg.size],
        "channels": 2,
        "seed": seed,
        "ranges": ranges.tolist(),
        "generator": cfg.to_dict(),
        "config_hash": cfg.digest(),
    }
    return Dataset(params, fields, meta)


# ---------------------------------------------------------------- FBF1 I/O


def encode_array(h, w, c, values):
    """Serialise raw values into an FBF1 record without grid checks."""
    values = np.asarray(values, dtype=np.float64)
    if values.size != h * w * c:
        raise InvalidInputError(f"expected {h * w * c} values, got {values.size}")
    if not np.all(np.isfinite(values)) or np.any(np.abs(values) > _F32_MAX):
        raise InvalidInputError("values must be finite and representable as float32")
    return _HEADER.pack(MAGIC, h, w, c) + values.astype("<f4").tobytes()


def decode_array(buf, offset=0):
    """Parse an FBF1 record from ``buf`` starting at ``offset``.

    Returns ``(array of shape (H, W, C) float32, end offset)``.
    """
    if len(buf) - offset < _HEADER.size:
        raise FieldFormatError(
            f"truncated header: need {_HEADER.size} bytes, found {len(buf) - offset}", offset
        )
    magic, h, w, c = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise FieldFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset)
    start = offset + _HEADER.size
    expected = 4 * h * w * c
    found = len(buf) - start
    if found < expected:
        raise FieldFormatError(
            f"truncated payload: expected {expected} bytes, found {found}", start
        )
    data = np.frombuffer(buf, dtype="<f4", count=h * w * c, offset=start)
    return data.reshape(h, w, c).astype(np.float32), start + expected


def write_field(path, u):
    """Write a field as FBF1. Values are stored as float32."""
    u = check_field(u, dtype=np.float64)
    Path(path).write_bytes(encode_array(*u.shape, u))


def read_field(path):
    """Read an FBF1 field; returns a float32 array of shape (H, W, C)."""
    buf = Path(path).read_bytes()
    u, end = decode_array(buf)
    if end != len(buf):
        raise FieldFormatError(
            f"dimension mismatch: header implies {end} bytes, file has {len(buf)}", end
        )
    h, w, c = u.shape
    if h < 4 or w < 4 or h % 2 or w % 2 or c < 1:
        raise FieldFormatError(f"invalid field dimensions {h}x{w}x{c}", 4)
    if not np.all(np.isfinite(u)):
        raise FieldFormatError("payload contains non-finite values", _HEADER.size)
    return u


def save_dataset(dataset, directory):
    """Write one FBF1 file per sample plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = len(dataset)
    width = max(4, len(str(n - 1)))
    files = []
    for i in range(n):
        name = f"sample_{i:0{width}d}.fbf"
        write_field(directory / name, dataset.fields[i])
        files.append(name)
    h, w = dataset.grid_shape
    manifest = {
        "format": "FBF1",
        "grid_size": [h, w],
        "channels": int(dataset.fields.shape[3]),
        "count": n,
        "seed": dataset.meta.get("seed"),
        "ranges": dataset.meta.get("ranges"),
        "generator": dataset.meta.get("generator"),
        "config_hash": dataset.meta.get("config_hash"),
        "params": dataset.params.tolist(),
        "files": files,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return directory


def load_dataset(directory):
    """Load a dataset directory written by :func:`save_dataset`."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    fields = [read_field(directory / name) for name in manifest["files"]]
    shapes = {f.shape for f in fields}
    if len(shapes) != 1:
        raise InvalidInputError(f"dataset fields have mixed shapes: {sorted(shapes)}")
    meta = {k: v for k, v in manifest.items() if k not in ("params", "files")}
    return Dataset(np.array(manifest["params"]), np.stack(fields), meta)


def dataset_digest(directory):
    """SHA-256 over the manifest and every sample file, in manifest order."""
    directory = Path(directory)
    hasher = hashlib.sha256()
    manifest = (directory / "manifest.json").read_bytes()
    hasher.update(manifest)
    for name in json.loads(manifest)["files"]:
        hasher.update((directory / name).read_bytes())
    return hasher.hexdigest()
