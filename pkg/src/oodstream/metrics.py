"""Detection quality metrics computed from scores and 0/1 labels.

Labels follow the stream convention: 1 = ID (the positive class, expected to
score high), 0 = OOD. These reductions are evaluation-only; nothing in the
adaptation path calls them.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .core import DegenerateScoresError, DomainError
from .detector import adaptive_threshold

# Cap for the bimodality ratio when the within-side variance underflows.
BIMODALITY_CAP = 1e9


def _check_scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.size != y.size:
        raise DomainError(f"scores ({s.size}) and labels ({y.size}) disagree in length")
    if not np.all(np.isfinite(s)):
        raise DomainError("non-finite scores")
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("labels must be 0 or 1")
    if not (np.any(y == 1) and np.any(y == 0)):
        raise DomainError("need at least one ID and one OOD sample")
    return s, y


def auroc(scores, labels) -> float:
    """Probability a random ID sample outscores a random OOD sample.

    Computed as the normalized rank sum with midranks, so exact ties
    contribute 1/2. Equals exhaustive pair counting to rounding error.
    """
    s, y = _check_scores_labels(scores, labels)
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    # Midranks: tied values share the average of their 1-based positions.
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    n_id = int((y == 1).sum())
    n_ood = s.size - n_id
    rank_sum = float(ranks[y == 1].sum())
    u = rank_sum - n_id * (n_id + 1) / 2.0
    return u / (n_id * n_ood)


def fpr_at_95_tpr(scores, labels) -> tuple[float, float]:
    """False positive rate at the loosest threshold keeping 95% ID recall.

    The threshold is the largest score value t with at least 95% of ID scores
    >= t, i.e. the ceil(0.95 * n_id)-th largest ID score. Returns
    (fpr, threshold) where fpr is the fraction of OOD scores >= t.
    """
    s, y = _check_scores_labels(scores, labels)
    id_scores = np.sort(s[y == 1])[::-1]
    k = math.ceil(0.95 * id_scores.size)
    threshold = float(id_scores[k - 1])
    ood_scores = s[y == 0]
    fpr = float((ood_scores >= threshold).mean())
    return fpr, threshold


@dataclasses.dataclass
class DensityReport:
    """Score histograms plus a scalar bimodality diagnostic.

    Histograms are per class when labels are given (normalized to sum 1 each)
    and pooled otherwise. Bimodality splits the pooled scores at the adaptive
    threshold and reports between-side over within-side variance; a clean
    two-point split saturates at the cap, a constant score set reports 0.
    """

    bin_edges: np.ndarray
    hist_pooled: np.ndarray
    hist_id: np.ndarray | None
    hist_ood: np.ndarray | None
    bimodality: float
    threshold: float | None


def bimodality_ratio(scores, grid: int = 100) -> tuple[float, float | None]:
    """Between/within variance ratio of the adaptive two-side split."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size < 2 or float(s.min()) == float(s.max()):
        return 0.0, None
    res = adaptive_threshold(s, grid=grid)
    mu = s.mean()
    n = s.size
    between = (res.n_id * (res.mu_id - mu) ** 2 + res.n_ood * (res.mu_ood - mu) ** 2) / n
    within = res.objective  # already the per-side-normalized variance sum
    if within < between / BIMODALITY_CAP:
        return BIMODALITY_CAP, res.threshold
    return float(between / within), res.threshold


def density_report(scores, labels=None, bins: int = 50, grid: int = 100) -> DensityReport:
    """Histogram the scores and quantify how two-lobed they look."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise DomainError("no scores to report on")
    if not np.all(np.isfinite(s)):
        raise DomainError("non-finite scores")
    if bins < 1:
        raise DomainError(f"bins must be >= 1, got {bins}")
    lo, hi = float(s.min()), float(s.max())
    if lo == hi:
        # Single occupied bin; widen the range so numpy keeps it in-bounds.
        edges = np.linspace(lo - 0.5, hi + 0.5, bins + 1)
    else:
        edges = np.linspace(lo, hi, bins + 1)

    def norm_hist(values: np.ndarray) -> np.ndarray:
        h, _ = np.histogram(values, bins=edges)
        total = h.sum()
        return h / total if total else h.astype(np.float64)

    hist_id = hist_ood = None
    if labels is not None:
        s_checked, y = _check_scores_labels(s, labels)
        hist_id = norm_hist(s_checked[y == 1])
        hist_ood = norm_hist(s_checked[y == 0])
    ratio, thr = bimodality_ratio(s, grid=grid)
    return DensityReport(
        bin_edges=edges,
        hist_pooled=norm_hist(s),
        hist_id=hist_id,
        hist_ood=hist_ood,
        bimodality=ratio,
        threshold=thr,
    )


def evaluate(scores, labels) -> dict:
    """Bundle the headline metrics for reporting."""
    a = auroc(scores, labels)
    fpr, thr = fpr_at_95_tpr(scores, labels)
    y = np.asarray(labels).ravel().astype(np.int64)
    return {
        "auroc": a,
        "fpr_at_95_tpr": fpr,
        "tpr95_threshold": thr,
        "n_id": int((y == 1).sum()),
        "n_ood": int((y == 0).sum()),
    }
