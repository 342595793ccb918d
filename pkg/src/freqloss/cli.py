"""Command-line entry point: ``freqloss {gen,train,eval,search,spectrum}``.

Every command writes into ``--out`` and starts by writing ``meta.json``
with the resolved configuration, seeds and input hashes. Outputs carry no
timestamps or wall times unless ``--record-time`` is given, so identical
invocations produce identical bytes.

Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 numeric failure.
"""

import argparse
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import InvalidInputError
from .diagnostics import band_report, log_mag_histogram, report_to_csv
from .fields import (
    DEFAULT_RANGES,
    FieldFormatError,
    SyntheticConfig,
    dataset_digest,
    gen_dataset,
    load_dataset,
    read_field,
    save_dataset,
    write_field,
)
from .loss import LossConfig, stl_weights
from .model import FluidGenerator, NonFiniteLossError, load_checkpoint, save_checkpoint
from .search import SearchConfig, SearchInterrupted, run_search
from .spectral import SymmetryError, band_filter, make_partition

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- helpers


def _file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _levels(text):
    try:
        groups = [tuple(float(v) for v in part.split(",") if v.strip()) for part in text.split(";")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}")
    return groups


class ExperimentMeta:
    """Self-description of one output directory, written before any work."""

    def __init__(self, args, argv):
        self.path = Path(args.out) / "meta.json"
        self.record_time = args.record_time
        self.data = {
            "tool": "freqloss",
            "version": __version__,
            "command": args.command,
            "argv": list(argv),
            "seed": args.seed,
            "jobs": args.jobs,
            "configs": {},
            "inputs": {},
        }
        if self.record_time:
            self.data["started"] = datetime.now(timezone.utc).isoformat()

    def write(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def finish(self, **results):
        self.data.update(results)
        if self.record_time:
            self.data["finished"] = datetime.now(timezone.utc).isoformat()
        self.write()


def _load_data(path, meta):
    path = Path(path)
    if not (path / "manifest.json").is_file():
        raise CommandError(f"no dataset manifest in {path}", EXIT_IO)
    meta.data["inputs"]["data"] = {"path": str(path), "sha256": dataset_digest(path)}
    return load_dataset(path)


def _train_params(args):
    return {
        "hidden_sizes": tuple(args.hidden),
        "head": args.head,
        "learning_rate": args.lr,
        "batch_size": args.batch_size,
        "n_epochs": args.epochs,
        "standardize": not args.no_standardize,
    }


def _loss_params(args):
    return {"lambda_u": args.lambda_u, "lambda_grad_u": args.lambda_grad_u,
            "lambda_o": args.lambda_o}


def _resolve_loss(args, grid_shape):
    kw = _loss_params(args)
    if args.loss == "baseline":
        return LossConfig.baseline(**kw)
    if args.loss == "stl":
        part = make_partition(*grid_shape, args.boundaries, n_groups=args.groups)
        return LossConfig(weights=stl_weights(part).tolist(),
                          boundaries=list(part.boundaries), **kw)
    path = Path(args.loss)
    if not path.is_file():
        raise CommandError(f"loss must be 'baseline', 'stl' or a JSON file; {path} not found",
                           EXIT_INVALID)
    return LossConfig.from_json(path)


def _split(ds, args):
    if args.test_fraction == 0:
        return ds, None
    return ds.split(args.test_fraction, args.seed)


# ---------------------------------------------------------------- commands


def cmd_gen(args, meta):
    cfg = SyntheticConfig(size=args.size, amplitude=args.amplitude, epsilon=args.epsilon,
                          coupling=args.coupling, seed=args.seed)
    meta.data["configs"]["synthetic"] = cfg.to_dict()
    meta.data["configs"]["count"] = args.count
    meta.data["configs"]["ranges"] = [list(r) for r in DEFAULT_RANGES]
    meta.write()
    ds = gen_dataset(cfg, DEFAULT_RANGES, args.count, args.seed)
    save_dataset(ds, args.out)
    meta.finish(outputs={"dataset_sha256": dataset_digest(args.out)})


def cmd_train(args, meta):
    ds = _load_data(args.data, meta)
    loss = _resolve_loss(args, ds.grid_shape)
    model = FluidGenerator(loss=loss, random_state=args.seed, **_train_params(args))
    meta.data["configs"].update(loss=loss.to_dict(), model=_jsonable(model.get_params()),
                                test_fraction=args.test_fraction)
    meta.write()
    train_set, test_set = _split(ds, args)
    eval_set = None if test_set is None else (test_set.params, test_set.fields)
    model.fit(train_set.params, train_set.fields, eval_set=eval_set)
    out = Path(args.out)
    save_checkpoint(model, out / "model.ckpt",
                    extra={"test_fraction": args.test_fraction, "split_seed": args.seed})
    model.log_.to_csv(out / "train_log.csv", include_time=args.record_time)
    results = {"epochs": len(model.log_)}
    if model.log_.final_mre is not None:
        results["final_mre"] = [None if np.isnan(v) else float(v) for v in model.log_.final_mre]
    meta.finish(results=results)


def cmd_eval(args, meta):
    ds = _load_data(args.data, meta)
    if args.split != "all":
        train_set, test_set = ds.split(args.test_fraction, args.seed)
        ds = test_set if args.split == "test" else train_set
    truths = np.asarray(ds.fields, dtype=np.float64)
    if args.self_test:
        recons = truths
    else:
        if args.model is None:
            raise CommandError("--model is required unless --self-test is given", EXIT_INVALID)
        model, _ = load_checkpoint(args.model)
        meta.data["inputs"]["model"] = {"path": str(args.model), "sha256": _file_sha256(args.model)}
        if tuple(model.grid_shape_) != tuple(ds.grid_shape) or model.n_features_in_ != ds.params.shape[1]:
            raise CommandError(
                f"checkpoint expects grid {model.grid_shape_} with {model.n_features_in_} "
                f"parameters; dataset has grid {ds.grid_shape} with {ds.params.shape[1]}",
                EXIT_INVALID,
            )
        recons = model.predict(ds.params)
    part = make_partition(*ds.grid_shape)
    meta.data["configs"].update(split=args.split, test_fraction=args.test_fraction,
                                bins=args.bins, log_floor=args.log_floor,
                                self_test=args.self_test, n_samples=len(ds))
    meta.write()
    out = Path(args.out)
    report = band_report(recons, truths, part, log_floor=args.log_floor)
    report_to_csv(report, out / "mre.csv", table="mre")
    report_to_csv(report, out / "band_std.csv", table="std")
    truth_hist = log_mag_histogram(truths, args.bins, args.log_floor)
    rng = (truth_hist.edges[0], truth_hist.edges[-1])
    report_to_csv(log_mag_histogram(recons, args.bins, args.log_floor, value_range=rng),
                  out / "log_mag_hist.csv")
    report_to_csv(truth_hist, out / "log_mag_hist_truth.csv")
    meta.finish()


def cmd_search(args, meta):
    ds = _load_data(args.data, meta)
    levels = args.levels
    groups = args.groups
    if levels is not None and len(levels) == 1:
        n = groups if args.boundaries is None else len(args.boundaries)
        levels = levels * n
    cfg = SearchConfig(grid_shape=ds.grid_shape, boundaries=args.boundaries, n_groups=groups,
                       mode=args.mode, levels=levels, n_random=args.n_random, seed=args.seed,
                       train_params=_train_params(args), loss_params=_loss_params(args),
                       test_fraction=args.test_fraction)
    meta.data["configs"]["search"] = cfg.to_dict()
    meta.write()
    out = Path(args.out)
    try:
        result = run_search(cfg, ds, n_jobs=args.jobs, include_baseline=not args.no_baseline)
    except SearchInterrupted as exc:
        _write_search(exc.partial, out, args.record_time)
        meta.finish(interrupted=True, completed_runs=len(exc.partial.runs))
        raise CommandError("search interrupted; partial results written", 130)
    _write_search(result, out, args.record_time)
    meta.finish(completed_runs=len(result.runs),
                failed_runs=[r.run for r in result.runs if r.failed])


def _write_search(result, out, include_time):
    result.to_csv(out / "search_results.csv", include_time=include_time)
    result.baseline_to_csv(out / "baseline_result.csv", include_time=include_time)


def cmd_spectrum(args, meta):
    if args.field is None and args.size is None:
        raise CommandError("give --field FILE or --size N", EXIT_INVALID)
    if args.field is not None:
        u = read_field(args.field).astype(np.float64)
        meta.data["inputs"]["field"] = {"path": str(args.field), "sha256": _file_sha256(args.field)}
        h, w = u.shape[:2]
    else:
        u = None
        h = w = args.size
    part = make_partition(h, w, args.boundaries, n_groups=args.groups)
    if args.filter_upto is not None:
        if u is None:
            raise CommandError("--filter-upto needs --field", EXIT_INVALID)
        if not 0 <= args.filter_upto < part.n_fine:
            raise CommandError(f"--filter-upto must lie in [0, {part.n_fine - 1}], "
                               f"got {args.filter_upto}", EXIT_INVALID)
    meta.data["configs"].update(grid_shape=[h, w], boundaries=list(part.boundaries),
                                filter_upto=args.filter_upto)
    meta.write()
    out = Path(args.out)
    part.to_json(out / "partition.json")
    if args.filter_upto is not None:
        write_field(out / "filtered.fbf", band_filter(u, part, args.filter_upto))
    meta.finish()


def _jsonable(params):
    return {k: (list(v) if isinstance(v, tuple) else v.to_dict() if hasattr(v, "to_dict") else v)
            for k, v in params.items()}


# ---------------------------------------------------------------- parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1, help="worker processes (search only)")
    common.add_argument("--record-time", action="store_true",
                        help="add timestamps and wall times to outputs")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--epochs", type=int, default=200)
    training.add_argument("--lr", type=float, default=1e-3)
    training.add_argument("--batch-size", type=int, default=16)
    training.add_argument("--hidden", type=_int_list, default=(128, 128))
    training.add_argument("--head", choices=["direct", "curl"], default="direct")
    training.add_argument("--no-standardize", action="store_true")
    training.add_argument("--lambda-u", type=float, default=1.0)
    training.add_argument("--lambda-grad-u", type=float, default=1.0)
    training.add_argument("--lambda-o", type=float, default=1.0)
    training.add_argument("--test-fraction", type=float, default=0.25)

    bands = argparse.ArgumentParser(add_help=False)
    bands.add_argument("--groups", type=int, default=5, help="number of weight groups")
    bands.add_argument("--boundaries", type=_int_list, default=None,
                       help="exclusive group end bands, comma-separated")

    parser = argparse.ArgumentParser(prog="freqloss", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--amplitude", type=float, default=SyntheticConfig.amplitude)
    p.add_argument("--epsilon", type=float, default=SyntheticConfig.epsilon)
    p.add_argument("--coupling", type=float, default=SyntheticConfig.coupling)

    p = sub.add_parser("train", parents=[common, training, bands], help="train a generator")
    p.add_argument("--data", required=True)
    p.add_argument("--loss", default="baseline", help="baseline, stl or a LossConfig JSON file")

    p = sub.add_parser("eval", parents=[common], help="per-band reports for a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--model")
    p.add_argument("--self-test", action="store_true", help="compare the data with itself")
    p.add_argument("--split", choices=["all", "train", "test"], default="all")
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--log-floor", type=float, default=-20.0)

    p = sub.add_parser("search", parents=[common, training, bands], help="band-weight search")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["grid", "random"], default="grid")
    p.add_argument("--levels", type=_levels, default=None,
                   help="multipliers, e.g. 0.5,1,2 for all groups or 0.5,1;1,2 per group")
    p.add_argument("--n-random", type=int, default=10)
    p.add_argument("--no-baseline", action="store_true", help="skip the baseline reference run")

    p = sub.add_parser("spectrum", parents=[common, bands], help="partition export and filtering")
    p.add_argument("--field", help="FBF1 field file")
    p.add_argument("--size", type=int, help="grid size when no field is given")
    p.add_argument("--filter-upto", type=int, help="keep fine bands 0..B")
    return parser


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
            "search": cmd_search, "spectrum": cmd_spectrum}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise InvalidInputError("--jobs must be >= 1")
        meta = ExperimentMeta(args, argv)
        t0 = time.perf_counter()
        COMMANDS[args.command](args, meta)
        if args.record_time:
            meta.finish(seconds=time.perf_counter() - t0)
    except CommandError as exc:
        return _fail(str(exc), exc.code)
    except (NonFiniteLossError, SymmetryError, FloatingPointError) as exc:
        return _fail(str(exc), EXIT_NUMERIC)
    except FieldFormatError as exc:
        return _fail(str(exc), EXIT_IO)
    except (InvalidInputError, ValueError) as exc:
        return _fail(str(exc), EXIT_INVALID)
    except OSError as exc:
        return _fail(str(exc), EXIT_IO)
    return EXIT_OK


def _fail(message, code):
    print(f"freqloss: error: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
