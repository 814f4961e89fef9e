"""Classification metrics, significance testing and the duration-bias audit."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import ArgumentError, EmptyInputError
from .fileio import atomic_write_json, atomic_write_text

METRIC_NAMES = ("accuracy", "precision", "sensitivity", "f1", "specificity", "mcc")
EXACT_MAX_N = 15
DEFAULT_ALPHA = 0.01

HIST_START = 0.1
HIST_CLAMP = 2.0
HIST_BIN_WIDTH = 0.05
FN_SHORT_MARK = 0.325

# Published MCC (%) for orientation in reports; never asserted.
PUBLISHED_MCC = {
    "fd": {"logistic": 80.3, "cnn": 91.8},
    "vd": {"logistic": 30.6, "cnn": 24.4},
}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ArgumentError(f"{name} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def inverted(self) -> "ConfusionCounts":
        """Counts for the classifier that flips every prediction."""
        return ConfusionCounts(tp=self.fn, tn=self.fp, fp=self.tn, fn=self.tp)


def confusion_from_predictions(y_true, y_pred) -> ConfusionCounts:
    t = np.asarray(y_true).astype(bool)
    p = np.asarray(y_pred).astype(bool)
    if t.shape != p.shape:
        raise ArgumentError(f"label shapes differ: {t.shape} vs {p.shape}")
    return ConfusionCounts(tp=int(np.sum(t & p)), tn=int(np.sum(~t & ~p)),
                           fp=int(np.sum(~t & p)), fn=int(np.sum(t & ~p)))


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    sensitivity: float
    f1: float
    specificity: float
    mcc: float
    # names of metrics whose denominator was zero (reported as 0)
    undefined: tuple = ()

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in METRIC_NAMES}
        d["undefined"] = list(self.undefined)
        return d


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def metrics(c: ConfusionCounts) -> MetricsReport:
    if c.total == 0:
        raise EmptyInputError("no events to evaluate")
    tp, tn, fp, fn = c.tp, c.tn, c.fp, c.fn
    undefined: list[str] = []
    acc = (tp + tn) / c.total
    prec = _ratio(tp, tp + fp, "precision", undefined)
    sens = _ratio(tp, tp + fn, "sensitivity", undefined)
    f1 = _ratio(2 * tp, 2 * tp + fp + fn, "f1", undefined)
    spec = _ratio(tn, tn + fp, "specificity", undefined)
    # integer products avoid overflow and keep the radicand exact
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = _ratio(tp * tn - fp * fn, math.sqrt(den), "mcc", undefined)
    mcc = min(1.0, max(-1.0, mcc))
    return MetricsReport(acc, prec, sens, f1, spec, mcc, tuple(undefined))


# -- Wilcoxon signed-rank ---------------------------------------------------

@dataclass(frozen=True)
class WilcoxonResult:
    p_value: float
    statistic: float  # W+, sum of ranks of positive differences
    n: int            # non-zero differences
    method: str       # "exact", "normal" or "degenerate"
    all_zero: bool = False


def signed_rank_null_counts(doubled_ranks) -> np.ndarray:
    """Number of sign patterns giving each value of 2*W+.

    Ranks are passed doubled so mid-ranks stay integral.
    """
    r2 = np.asarray(doubled_ranks, dtype=np.int64)
    counts = np.zeros(int(r2.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for r in r2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:counts.size - r]
        counts = counts + shifted
    return counts


def wilcoxon_test(x, y) -> WilcoxonResult:
    """Right-tailed signed-rank test of H1: median(x - y) > 0."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ArgumentError("x and y must be 1-D and of equal length")
    if x.size < 5:
        raise ArgumentError("need at least 5 pairs")
    d = x - y
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(1.0, 0.0, 0, "degenerate", all_zero=True)
    ranks = rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())

    if n <= EXACT_MAX_N:
        counts = signed_rank_null_counts(np.rint(2 * ranks).astype(np.int64))
        obs2 = int(round(2 * w_plus))
        p = float(counts[obs2:].sum()) / float(2 ** n)
        return WilcoxonResult(p, w_plus, n, "exact")

    _, tie_sizes = np.unique(ranks, return_counts=True)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_sizes**3 - tie_sizes) / 48.0
    if var <= 0:
        return WilcoxonResult(1.0, w_plus, n, "normal")
    z = (w_plus - mean - 0.5) / math.sqrt(var)
    return WilcoxonResult(0.5 * math.erfc(z / math.sqrt(2.0)), w_plus, n, "normal")


def wilcoxon_right(x, y) -> float:
    return wilcoxon_test(x, y).p_value


def bonferroni_threshold(alpha: float = DEFAULT_ALPHA, m: int = 5) -> float:
    if int(m) != m or m < 1:
        raise ArgumentError("number of comparisons must be an integer >= 1")
    return alpha / m


def is_significant(p: float, alpha: float = DEFAULT_ALPHA, m: int = 5) -> bool:
    return p < bonferroni_threshold(alpha, m)


# -- false-negative duration histograms -------------------------------------

@dataclass
class DurationHistogram:
    edges: np.ndarray
    wheeze_counts: np.ndarray
    fn_counts: np.ndarray

    def rows(self):
        for i in range(self.wheeze_counts.size):
            yield (float(self.edges[i]), float(self.edges[i + 1]),
                   int(self.wheeze_counts[i]), int(self.fn_counts[i]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_start", "bin_end", "wheeze_count", "fn_count"])
        for a, b, nw, nf in self.rows():
            w.writerow([f"{a:.3f}", f"{b:.3f}", nw, nf])
        return buf.getvalue()


def histogram_edges(bin_width: float = HIST_BIN_WIDTH, start: float = HIST_START,
                    clamp: float = HIST_CLAMP) -> np.ndarray:
    """Edges from ``start``; the last bin begins at ``clamp`` and absorbs longer events."""
    if bin_width <= 0:
        raise ArgumentError("bin_width must be positive")
    n_bins = int(math.floor((clamp - start) / bin_width + 1e-9)) + 1
    return start + bin_width * np.arange(n_bins + 1)


def duration_bins(durations, edges) -> np.ndarray:
    d = np.asarray(durations, dtype=np.float64)
    width = edges[1] - edges[0]
    idx = np.floor((d - edges[0]) / width + 1e-9).astype(np.int64)
    # anything shorter than the first edge lands in the first bin
    return np.clip(idx, 0, edges.size - 2)


def fn_duration_histogram(fn_events, all_wheezes, bin_width: float = HIST_BIN_WIDTH) -> DurationHistogram:
    """Paired histograms of all wheeze durations and false-negative durations.

    ``fn_events`` is expected to be a subset of ``all_wheezes``. Events may be
    LabeledEvent-like objects (``.duration``) or plain durations in seconds.
    """
    edges = histogram_edges(bin_width)
    n_bins = edges.size - 1

    def counts(events):
        durs = [getattr(e, "duration", e) for e in events]
        return np.bincount(duration_bins(durs, edges), minlength=n_bins)

    return DurationHistogram(edges, counts(all_wheezes), counts(fn_events))


def fraction_below(durations, mark: float = FN_SHORT_MARK) -> float:
    d = np.asarray(durations, dtype=np.float64)
    return float(np.mean(d < mark)) if d.size else 0.0


# -- bias report ------------------------------------------------------------

@dataclass
class BiasReport:
    modes: tuple
    families: tuple
    n_runs: int
    baseline: str
    alpha: float
    m: int
    threshold: float
    # summary[mode][family][metric] = {"mean", "std"}
    summary: dict = field(default_factory=dict)
    # wilcoxon[mode][family] = {"p_value", "significant", "method", "all_zero"}
    wilcoxon: dict = field(default_factory=dict)
    # mcc_gap[family] = mean FD mcc - mean VD mcc
    mcc_gap: dict = field(default_factory=dict)
    histograms: dict = field(default_factory=dict)
    runs: dict = field(default_factory=dict)
    # free-form additions (probe results, best-run indices, ...)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "histograms"}
        d["modes"], d["families"] = list(self.modes), list(self.families)
        d["histograms"] = {
            key: {"edges": h.edges.tolist(), "wheeze_counts": h.wheeze_counts.tolist(),
                  "fn_counts": h.fn_counts.tolist()}
            for key, h in self.histograms.items()
        }
        d["published_mcc_percent"] = PUBLISHED_MCC
        return d


def _metric_dicts(runs):
    return [r.as_dict() if isinstance(r, MetricsReport) else dict(r) for r in runs]


def summarize_runs(runs) -> dict:
    """Mean and sample std (ddof 1; 0 for a single run) of each metric."""
    rows = _metric_dicts(runs)
    out = {}
    for name in METRIC_NAMES:
        v = np.array([r[name] for r in rows], dtype=np.float64)
        out[name] = {"mean": float(v.mean()), "std": float(v.std(ddof=1)) if v.size > 1 else 0.0}
    return out


def bias_report(fd_runs: dict, vd_runs: dict, baseline: str = "logistic",
                alpha: float = DEFAULT_ALPHA, m: int | None = None,
                histograms: dict | None = None) -> BiasReport:
    """Aggregate per-family run metrics for both modes.

    ``fd_runs`` / ``vd_runs`` map family -> list of MetricsReport (or metric
    dicts) ordered by seed index; runs are paired across families by that
    index for the signed-rank test against ``baseline``. ``m`` defaults to
    the number of non-baseline families.
    """
    by_mode = {"fd": fd_runs, "vd": vd_runs}
    if set(fd_runs) != set(vd_runs):
        raise ArgumentError(f"families differ between modes: {sorted(fd_runs)} vs {sorted(vd_runs)}")
    families = tuple(sorted(fd_runs, key=lambda f: (f != baseline, f)))
    counts = {(mode, f): len(runs[f]) for mode, runs in by_mode.items() for f in families}
    if len(set(counts.values())) != 1:
        raise ArgumentError(f"run counts differ between cells: {counts}")
    n_runs = next(iter(counts.values()))
    if n_runs < 1:
        raise ArgumentError("no runs to report")
    others = [f for f in families if f != baseline]
    if m is None:
        m = max(1, len(others))
    threshold = bonferroni_threshold(alpha, m)

    report = BiasReport(("fd", "vd"), families, n_runs, baseline, alpha, m, threshold)
    for mode, runs in by_mode.items():
        report.runs[mode] = {f: _metric_dicts(runs[f]) for f in families}
        report.summary[mode] = {f: summarize_runs(runs[f]) for f in families}
        report.wilcoxon[mode] = {}
        if baseline not in runs:
            continue
        base_mcc = [r["mcc"] for r in report.runs[mode][baseline]]
        for f in others:
            mcc = [r["mcc"] for r in report.runs[mode][f]]
            if n_runs < 5:
                report.wilcoxon[mode][f] = {"p_value": None, "significant": False,
                                            "method": "too_few_runs", "all_zero": False}
                continue
            res = wilcoxon_test(mcc, base_mcc)
            report.wilcoxon[mode][f] = {"p_value": res.p_value, "significant": res.p_value < threshold,
                                        "method": res.method, "all_zero": res.all_zero}
    for f in families:
        report.mcc_gap[f] = (report.summary["fd"][f]["mcc"]["mean"]
                             - report.summary["vd"][f]["mcc"]["mean"])
    report.histograms = dict(histograms or {})
    return report


def results_table_csv(report: BiasReport, mode: str) -> str:
    """One row per family: mean/std per metric plus the test against baseline."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["family"]
    for name in METRIC_NAMES:
        header += [f"{name}_mean", f"{name}_std"]
    w.writerow(header + ["p_value", "significant"])
    for f in report.families:
        row = [f]
        for name in METRIC_NAMES:
            cell = report.summary[mode][f][name]
            row += [f"{cell['mean']:.6f}", f"{cell['std']:.6f}"]
        test = report.wilcoxon[mode].get(f)
        if test is None or test["p_value"] is None:
            row += ["", ""]
        else:
            row += [f"{test['p_value']:.6g}", int(test["significant"])]
        w.writerow(row)
    return buf.getvalue()


def gap_table_csv(report: BiasReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family", "fd_mcc_mean", "vd_mcc_mean", "mcc_gap"])
    for f in report.families:
        w.writerow([f, f"{report.summary['fd'][f]['mcc']['mean']:.6f}",
                    f"{report.summary['vd'][f]['mcc']['mean']:.6f}", f"{report.mcc_gap[f]:.6f}"])
    return buf.getvalue()


def write_report(report: BiasReport, out_dir) -> list:
    """Write report.json, per-mode tables, the gap table and histogram CSVs."""
    out = Path(out_dir)
    written = []

    def put(name, text):
        atomic_write_text(out / name, text)
        written.append(out / name)

    atomic_write_json(out / "report.json", report.to_dict())
    written.append(out / "report.json")
    for mode in report.modes:
        put(f"results_{mode}.csv", results_table_csv(report, mode))
    put("mcc_gap.csv", gap_table_csv(report))
    for key, hist in sorted(report.histograms.items()):
        put(f"fn_hist_{key}.csv", hist.to_csv())
    return written
