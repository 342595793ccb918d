"""Grid and random search over band weights around the STL heuristic.

Every run trains a :class:`~freqloss.model.FluidGenerator` from the same
initial parameters on the same train/test split; only the band weights
differ. Random weights for run ``i`` come from a generator seeded with
``(seed, i)``, so results do not depend on execution order or ``n_jobs``.
"""

import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from ._validation import InvalidInputError
from .diagnostics import band_mre
from .loss import LossConfig, stl_weights
from .model import FluidGenerator, NonFiniteLossError
from .spectral import make_partition

GRID_LEVELS = (0.5, 1.0, 1.5, 2.0)
GRID_LEVELS_HIGHEST = (0.5, 1.0, 2.0)


@dataclass
class SearchConfig:
    """What to search and how each run is trained.

    Parameters
    ----------
    grid_shape : (H, W)
    boundaries : sequence of int, optional
        Weight-group end points; ``n_groups`` default groups if omitted.
    n_groups : int, default=5
    mode : {"grid", "random"}
    levels : sequence of sequences, optional
        Multipliers per group. Defaults to 50/100/150/200% and, for the
        highest group, 50/100/200%.
    n_random : int, default=10
    normalize : bool, default=True
        Rescale random weights so they sum to the STL weight sum.
    seed : int
        Master seed: model init, shuffling, split and random draws.
    train_params : dict
        Keyword arguments for :class:`FluidGenerator` (``loss`` excluded).
    loss_params : dict
        ``lambda_u``, ``lambda_grad_u``, ``lambda_o``, ``epsilon_grad``.
    test_fraction : float, default=0.25
    """

    grid_shape: tuple = (64, 64)
    boundaries: tuple = None
    n_groups: int = 5
    mode: str = "grid"
    levels: tuple = None
    n_random: int = 10
    normalize: bool = True
    seed: int = 0
    train_params: dict = field(default_factory=dict)
    loss_params: dict = field(default_factory=dict)
    test_fraction: float = 0.25

    def __post_init__(self):
        if self.mode not in ("grid", "random"):
            raise InvalidInputError(f"mode must be 'grid' or 'random', got {self.mode!r}")
        if self.n_random < 1:
            raise InvalidInputError("n_random must be >= 1")
        if "loss" in self.train_params:
            raise InvalidInputError("train_params must not contain 'loss'")
        part = self.partition()
        self.boundaries = tuple(part.boundaries)
        self.n_groups = part.n_groups
        if self.levels is None:
            self.levels = tuple([GRID_LEVELS] * (self.n_groups - 1) + [GRID_LEVELS_HIGHEST])
        self.levels = tuple(tuple(float(v) for v in lv) for lv in self.levels)
        if len(self.levels) != self.n_groups or any(len(lv) == 0 for lv in self.levels):
            raise InvalidInputError(
                f"need a non-empty level list for each of the {self.n_groups} groups"
            )

    def partition(self):
        return make_partition(*self.grid_shape, self.boundaries, n_groups=self.n_groups)

    @property
    def base_weights(self):
        return stl_weights(self.partition())

    def loss_config(self, weights):
        return LossConfig(weights=None if weights is None else list(weights),
                          boundaries=list(self.boundaries), **self.loss_params)

    def to_dict(self):
        return {
            "grid_shape": list(self.grid_shape),
            "boundaries": list(self.boundaries),
            "mode": self.mode,
            "levels": [list(lv) for lv in self.levels],
            "n_random": self.n_random,
            "normalize": self.normalize,
            "seed": self.seed,
            "train_params": {k: list(v) if isinstance(v, tuple) else v
                             for k, v in self.train_params.items()},
            "loss_params": dict(self.loss_params),
            "test_fraction": self.test_fraction,
            "base_weights": self.base_weights.tolist(),
        }


def enumerate_grid(cfg):
    """All grid weight vectors, group 0 varying slowest."""
    base = cfg.base_weights
    return [base * np.array(combo) for combo in itertools.product(*cfg.levels)]


def sample_random(base, rng, normalize=True):
    """Perturb ``base`` with one standard-normal draw ``z`` per group.

    ``z >= 0`` multiplies the base weight by ``z``; ``z < 0`` divides it by
    ``|z|``. Draws with ``|z| < 1e-12`` are repeated. With ``normalize`` the
    result is rescaled to the sum of ``base``.
    """
    base = np.asarray(base, dtype=np.float64)
    out = np.empty_like(base)
    for g, b in enumerate(base):
        z = rng.standard_normal()
        while abs(z) < 1e-12:
            z = rng.standard_normal()
        out[g] = b / abs(z) if z < 0 else b * z
    if normalize:
        out *= base.sum() / out.sum()
    return out


@dataclass
class RunResult:
    run: int
    kind: str
    weights: np.ndarray
    seed: int
    mre: np.ndarray = None
    final_losses: tuple = None
    seconds: float = 0.0
    failed: bool = False
    error: str = ""


@dataclass
class SearchResult:
    runs: list
    baseline: RunResult = None
    n_groups: int = 0
    n_bands: int = 0
    interrupted: bool = False

    def to_csv(self, path, include_time=False):
        """``run,kind,w_*,mre_band_*,total,baseline,fourier,failed,seed[,seconds]``."""
        _write_runs(path, self.runs, self.n_groups, self.n_bands, include_time)

    def baseline_to_csv(self, path, include_time=False):
        """Baseline reference run; it has no band weights, so no ``w_*`` columns."""
        if self.baseline is not None:
            _write_runs(path, [self.baseline], 0, self.n_bands, include_time)


def _fmt(v):
    return "" if v is None else repr(float(v))


def _write_runs(path, runs, n_groups, n_bands, include_time):
    cols = (["run", "kind"] + [f"w_{g}" for g in range(n_groups)]
            + [f"mre_band_{b}" for b in range(n_bands)]
            + ["total", "baseline", "fourier", "failed", "seed"]
            + (["seconds"] if include_time else []))
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in sorted(runs, key=lambda r: r.run):
            w = [""] * n_groups if r.weights is None else [_fmt(v) for v in r.weights]
            m = [""] * n_bands if r.mre is None else [_fmt(v) for v in r.mre]
            losses = [""] * 3 if r.final_losses is None else [_fmt(v) for v in r.final_losses]
            row = [str(r.run), r.kind, *w, *m, *losses, str(int(r.failed)), str(r.seed)]
            if include_time:
                row.append(repr(r.seconds))
            fh.write(",".join(row) + "\n")


# ---------------------------------------------------------------- execution

_DATA = {}


def _set_data(train, test):
    _DATA["train"], _DATA["test"] = train, test


def train_run(cfg, weights, train, test):
    """Train one model with ``weights`` (None for baseline-only) and score it."""
    model = FluidGenerator(loss=cfg.loss_config(weights), random_state=cfg.seed,
                           **cfg.train_params)
    with threadpool_limits(1):
        model.fit(train[0], train[1])
        mre = band_mre(model.predict(test[0]), test[1], cfg.partition())
    log = model.log_
    final = (log.total[-1], log.baseline[-1], log.fourier[-1]) if len(log) else None
    return mre, final


def _execute(task):
    cfg, run, kind, weights = task
    t0 = time.perf_counter()
    result = RunResult(run, kind, None if weights is None else np.asarray(weights), cfg.seed)
    try:
        result.mre, result.final_losses = train_run(cfg, weights, _DATA["train"], _DATA["test"])
    except (NonFiniteLossError, FloatingPointError) as exc:
        result.failed, result.error = True, str(exc)
    result.seconds = time.perf_counter() - t0
    return result


class SearchInterrupted(KeyboardInterrupt):
    """Carries the runs finished before the interrupt in ``partial``."""

    def __init__(self, partial):
        super().__init__("search interrupted")
        self.partial = partial


def plan_runs(cfg):
    """``(run, kind, weights)`` for every run, in run-index order."""
    if cfg.mode == "grid":
        return [(i, "grid", w) for i, w in enumerate(enumerate_grid(cfg))]
    base = cfg.base_weights
    return [(i, "random", sample_random(base, np.random.default_rng([cfg.seed, i]), cfg.normalize))
            for i in range(cfg.n_random)]


def run_search(cfg, dataset, n_jobs=1, include_baseline=True):
    """Run every planned configuration and collect per-band MRE on the test split.

    Runs that hit a non-finite loss are kept with ``failed=True``.
    """
    if tuple(dataset.grid_shape) != tuple(cfg.grid_shape):
        raise InvalidInputError(
            f"dataset grid {dataset.grid_shape} does not match search grid {cfg.grid_shape}"
        )
    train, test = dataset.split(cfg.test_fraction, cfg.seed)
    train = (train.params, np.asarray(train.fields, dtype=np.float64))
    test = (test.params, np.asarray(test.fields, dtype=np.float64))
    tasks = [(cfg, run, kind, w) for run, kind, w in plan_runs(cfg)]
    if include_baseline:
        tasks.append((cfg, -1, "baseline", None))

    done = []
    try:
        if n_jobs == 1:
            _set_data(train, test)
            for t in tasks:
                done.append(_execute(t))
        else:
            with ProcessPoolExecutor(max_workers=n_jobs, initializer=_set_data,
                                     initargs=(train, test)) as pool:
                for r in pool.map(_execute, tasks):
                    done.append(r)
    except KeyboardInterrupt:
        raise SearchInterrupted(_collect(cfg, done, interrupted=True)) from None
    finally:
        _DATA.clear()
    return _collect(cfg, done)


def _collect(cfg, done, interrupted=False):
    runs = sorted((r for r in done if r.kind != "baseline"), key=lambda r: r.run)
    baseline = next((r for r in done if r.kind == "baseline"), None)
    return SearchResult(runs, baseline, cfg.n_groups, cfg.partition().n_fine, interrupted)
