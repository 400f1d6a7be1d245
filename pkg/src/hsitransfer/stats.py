"""Accuracy metrics, rankings, run aggregation and the Wilcoxon signed-rank test."""

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from hsitransfer.errors import DataError

EXACT_MAX_N = 20


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DataError(f"confusion matrix must be square, got {counts.shape}")
        if (counts < 0).any():
            raise DataError("confusion matrix has negative counts")
        if counts.sum() == 0:
            raise DataError("confusion matrix is empty")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass(frozen=True)
class MetricsReport:
    oa: float
    aa: float
    kappa: float
    per_class: np.ndarray
    p_o: float
    p_e: float


@dataclass(frozen=True)
class WilcoxonResult:
    n_effective: int
    statistic: float
    p_two_tailed: float
    method: str


def confusion(truth, predicted, class_count):
    truth = np.asarray(truth, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if truth.shape != predicted.shape or truth.ndim != 1:
        raise DataError("truth and prediction must be 1-D and of equal length")
    if truth.size == 0:
        raise DataError("no labels to compare")
    for arr in (truth, predicted):
        if arr.min() < 0 or arr.max() >= class_count:
            raise DataError(f"labels must lie in 0..{class_count - 1}")
    counts = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(counts, (truth, predicted), 1)
    return ConfusionMatrix(counts)


def metrics(cm):
    """OA, AA (mean per-class recall) and Cohen's kappa.

    kappa = 1 - (1 - p_o) / (1 - p_e) with p_o = OA and
    p_e = sum_k row_k * col_k / N^2. When p_e == 1 every sample shares one
    class on both sides, and kappa is 1 for perfect agreement, else 0.
    """
    c = cm.counts.astype(np.float64)
    n = c.sum()
    rows = c.sum(axis=1)
    cols = c.sum(axis=0)
    if (rows == 0).any():
        empty = np.flatnonzero(rows == 0).tolist()
        raise DataError(f"classes {empty} have no true samples; AA undefined")
    diag = np.diag(c)
    per_class = diag / rows
    p_o = diag.sum() / n
    p_e = float((rows * cols).sum() / (n * n))
    if p_e == 1.0:
        kappa = 1.0 if p_o == 1.0 else 0.0
    else:
        kappa = 1.0 - (1.0 - p_o) / (1.0 - p_e)
    return MetricsReport(float(p_o), float(per_class.mean()), float(kappa), per_class,
                         float(p_o), p_e)


def evaluate(truth, predicted, class_count):
    return metrics(confusion(truth, predicted, class_count))


def _exact_lower_tail(ranks, w):
    """P(W+ <= w) under the null, over all 2^n sign assignments.

    Ranks may be mid-ranks (multiples of 0.5); the distribution is built by
    counting subsets per doubled rank sum.
    """
    doubled = np.rint(np.asarray(ranks) * 2).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        counts[r:] = counts[r:] + counts[:total + 1 - r].copy()
    limit = int(math.floor(2 * w + 1e-9))
    return counts[:limit + 1].sum() / counts.sum()


def wilcoxon_two_tailed(x, y, method="auto"):
    """Two-tailed Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped and tied magnitudes get mid-ranks. The
    statistic is min(W+, W-). ``method`` is "exact" (sign enumeration),
    "approx" (normal with tie-corrected variance and continuity correction)
    or "auto" (exact up to 20 non-zero differences).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("paired samples must be 1-D and of equal length")
    if x.size < 2:
        raise DataError("need at least two pairs")
    d = x - y
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0, 0.0, 1.0, "exact")
    ranks = rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if method == "auto":
        method = "exact" if n <= EXACT_MAX_N else "approx"
    if method == "exact":
        p = 2.0 * _exact_lower_tail(ranks, w)
    elif method == "approx":
        mean = n * (n + 1) / 4.0
        _, tie_sizes = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - (tie_sizes ** 3 - tie_sizes).sum() / 48.0
        if var <= 0:
            p = 1.0
        else:
            z = (w - mean + 0.5) / math.sqrt(var)
            p = math.erfc(-z / math.sqrt(2.0))  # 2 * Phi(z)
    else:
        raise ValueError(f"unknown method {method!r}")
    return WilcoxonResult(n, w, min(1.0, p), method)


def rank_within(values):
    """Rank by descending value, 1 = best, ties share the mid-rank."""
    return rankdata(-np.asarray(values, dtype=np.float64), method="average")


def average_rank(table):
    """Average rank of each variant across configurations.

    ``table`` maps configuration -> {variant: kappa}; variants absent from a
    configuration are skipped there. Configurations with fewer than two
    variants carry no ranking information and are ignored.
    """
    sums = defaultdict(float)
    counts = defaultdict(int)
    used = 0
    for scores in table.values():
        present = [(v, k) for v, k in scores.items() if k is not None and not math.isnan(k)]
        if len(present) < 2:
            continue
        used += 1
        ranks = rank_within([k for _, k in present])
        for (variant, _), r in zip(present, ranks):
            sums[variant] += r
            counts[variant] += 1
    if used == 0:
        raise DataError("no configuration has scores for two or more variants")
    return {v: sums[v] / counts[v] for v in sorted(sums)}


def aggregate(records, keys=("dataset", "variant", "family", "blocks", "band_count"),
              fields=("oa", "aa", "kappa", "pretrain_s", "finetune_s", "infer_ms_per_sample")):
    """Mean of ``fields`` per group of ``keys``; adds a ``count`` column.

    Records are mappings; those without numeric values for the fields (e.g.
    infeasible cells) contribute to ``count`` only if they carry metrics.
    """
    groups = defaultdict(list)
    for rec in records:
        groups[tuple(rec[k] for k in keys)].append(rec)
    out = []
    for key in sorted(groups, key=lambda k: tuple(str(v) for v in k)):
        recs = [r for r in groups[key] if r.get("status", "ok") == "ok"]
        row = dict(zip(keys, key))
        row["count"] = len(recs)
        for f in fields:
            vals = [float(r[f]) for r in recs if r.get(f) not in (None, "")]
            row[f] = sum(vals) / len(vals) if vals else None
        out.append(row)
    return out
