"""Per-band spectral error statistics and log-magnitude histograms.

Bands whose denominator is zero are reported as NaN rather than 0.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from ._validation import InvalidInputError, check_fields
from .spectral import _dft_batch, check_partition


def _paired_spectra(recons, truths, partition):
    recons = check_fields(recons, "recons")
    truths = check_fields(truths, "truths")
    if recons.shape != truths.shape:
        raise InvalidInputError(
            f"recons {recons.shape} and truths {truths.shape} must match"
        )
    check_partition(partition, truths)
    return _dft_batch(recons), _dft_batch(truths)


def _band_sum(per_bin, partition):
    # per_bin: (N, H, W, C); fixed accumulation order via bincount
    flat = per_bin.sum(axis=(0, 3)).ravel()
    return np.bincount(partition.band.ravel(), weights=flat, minlength=partition.n_fine)


def _safe_ratio(num, den):
    out = np.full(num.shape, np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def band_mre(recons, truths, partition):
    """Mean relative error per fine band, pooled over samples.

    ``MRE_b = sum |FT(u) - FT(u_hat)| / sum |FT(u)|`` with both sums over all
    samples, bins of band ``b`` and channels.
    """
    sr, st = _paired_spectra(recons, truths, partition)
    num = _band_sum(np.abs(st - sr), partition)
    den = _band_sum(np.abs(st), partition)
    return _safe_ratio(num, den)


def _band_moduli(spec, partition):
    """Moduli grouped by fine band; each group pools samples, bins and channels."""
    mod = np.abs(spec)
    order = np.argsort(partition.band.ravel(), kind="stable")
    edges = np.concatenate([[0], np.cumsum(partition.counts)])
    flat = mod.transpose(1, 2, 0, 3).reshape(partition.n_bins, -1)[order]
    return [flat[edges[b]:edges[b + 1]].ravel() for b in range(partition.n_fine)]


def relative_band_std(recons, truths, partition):
    """Ratio of reconstructed to true population std of bin moduli, per band."""
    sr, st = _paired_spectra(recons, truths, partition)
    std_r = np.array([m.std() for m in _band_moduli(sr, partition)])
    std_t = np.array([m.std() for m in _band_moduli(st, partition)])
    return _safe_ratio(std_r, std_t)


@dataclass
class BandReport:
    """Per-fine-band statistics of reconstructions against ground truth."""

    mre: np.ndarray
    std_truth: np.ndarray
    std_recon: np.ndarray
    std_ratio: np.ndarray
    logmag_mean_truth: np.ndarray
    logmag_std_truth: np.ndarray
    logmag_mean_recon: np.ndarray
    logmag_std_recon: np.ndarray
    n_samples: int

    @property
    def n_bands(self):
        return len(self.mre)


def _logmag_stats(groups, log_floor):
    means, stds = [], []
    for m in groups:
        m = m[m >= math.exp(log_floor)]
        if m.size:
            lm = np.log(m)
            means.append(lm.mean())
            stds.append(lm.std())
        else:
            means.append(np.nan)
            stds.append(np.nan)
    return np.array(means), np.array(stds)


def band_report(recons, truths, partition, log_floor=-20.0):
    """Collect MRE, modulus std and log-magnitude statistics per fine band."""
    sr, st = _paired_spectra(recons, truths, partition)
    num = _band_sum(np.abs(st - sr), partition)
    den = _band_sum(np.abs(st), partition)
    gr, gt = _band_moduli(sr, partition), _band_moduli(st, partition)
    std_r = np.array([m.std() for m in gr])
    std_t = np.array([m.std() for m in gt])
    mt, vt = _logmag_stats(gt, log_floor)
    mr, vr = _logmag_stats(gr, log_floor)
    return BandReport(
        mre=_safe_ratio(num, den),
        std_truth=std_t,
        std_recon=std_r,
        std_ratio=_safe_ratio(std_r, std_t),
        logmag_mean_truth=mt,
        logmag_std_truth=vt,
        logmag_mean_recon=mr,
        logmag_std_recon=vr,
        n_samples=sr.shape[0],
    )


@dataclass
class Histogram:
    """Histogram of natural-log spectral magnitudes.

    ``n_below_floor`` counts the bins excluded by ``log_floor``.
    """

    edges: np.ndarray
    counts: np.ndarray
    log_floor: float
    n_below_floor: int

    @property
    def total(self):
        return int(self.counts.sum())


def log_mag_histogram(fields, bins=64, log_floor=-20.0, value_range=None):
    """Histogram of ``ln |FT(u)_k|`` over samples, bins and channels.

    Moduli below ``exp(log_floor)`` (including exact zeros) are excluded.
    Edges span the included values uniformly unless ``value_range`` is given.
    """
    fields = check_fields(fields)
    if bins < 2:
        raise InvalidInputError("bins must be >= 2")
    mod = np.abs(_dft_batch(fields)).ravel()
    keep = mod >= math.exp(log_floor)
    if not np.any(keep):
        raise InvalidInputError("no spectral magnitudes above the log floor")
    values = np.log(mod[keep])
    if value_range is None:
        lo, hi = float(values.min()), float(values.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        value_range = (lo, hi)
    counts, edges = np.histogram(values, bins=bins, range=value_range)
    return Histogram(edges, counts, float(log_floor), int(mod.size - keep.sum()))


# ---------------------------------------------------------------- CSV


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def report_to_csv(report, path, table="mre"):
    """Write a report as CSV with a header row.

    ``table`` selects the BandReport layout: ``"mre"`` (``band,mre``) or
    ``"std"`` (``band,std_truth,std_recon,ratio``). Histograms are written
    as ``bin_lo,bin_hi,count`` preceded by a ``#`` comment line that records
    the log base and floor.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if isinstance(report, Histogram):
            fh.write(
                f"# log_base=e log_floor={_fmt(report.log_floor)} "
                f"below_floor={report.n_below_floor}\n"
            )
            writer.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, n in zip(report.edges[:-1], report.edges[1:], report.counts):
                writer.writerow([_fmt(lo), _fmt(hi), _fmt(n)])
        elif isinstance(report, BandReport):
            if table == "mre":
                writer.writerow(["band", "mre"])
                for b, v in enumerate(report.mre):
                    writer.writerow([b, _fmt(v)])
            elif table == "std":
                writer.writerow(["band", "std_truth", "std_recon", "ratio"])
                for b in range(report.n_bands):
                    writer.writerow([b, _fmt(report.std_truth[b]),
                                     _fmt(report.std_recon[b]), _fmt(report.std_ratio[b])])
            else:
                raise InvalidInputError(f"unknown table {table!r}")
        else:
            raise InvalidInputError(f"cannot write {type(report).__name__} as CSV")


def read_csv(path):
    """Read a report CSV back as ``{column: ndarray}``; comment lines are skipped."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    header, body = rows[0], rows[1:]
    return {
        name: np.array([float(r[i]) for r in body])
        for i, name in enumerate(header)
    }
