"""Base OOD scoring and the adaptive score threshold.

Two scoring rules over the frozen ID class features: the maximum softmax over
temperature-scaled cosines, and the raw maximum cosine. The threshold splits a
score set at the grid point minimizing the summed within-side variance, which
is then used to pseudo-label incoming samples (score >= threshold means ID).
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .core import DegenerateScoresError, DomainError, cosine_to_rows, softmax


def mcm_score(z: np.ndarray, id_features: np.ndarray, tau: float = 1.0) -> float:
    """Maximum softmax probability over cosines to the ID class features.

    Args:
        z: unit sample embedding, shape (d,).
        id_features: unit ID class features, shape (N, d).
        tau: softmax temperature, > 0.

    Returns:
        Score in [1/N, 1]; higher means more ID-like.
    """
    cosines = cosine_to_rows(z, id_features)
    return float(softmax(cosines, tau).max())


def maxlogit_score(z: np.ndarray, id_features: np.ndarray) -> float:
    """Maximum cosine to any ID class feature, in [-1, 1]."""
    cosines = cosine_to_rows(z, id_features)
    if cosines.size == 0:
        raise DomainError("maxlogit over zero classes")
    return float(cosines.max())


def pseudo_label(score: float, threshold: float) -> int:
    """1 (ID) when score >= threshold, else 0 (OOD)."""
    return 1 if score >= threshold else 0


@dataclasses.dataclass
class ThresholdResult:
    """Outcome of one threshold search over a score snapshot."""

    threshold: float
    grid_lo: float
    grid_hi: float
    objective: float
    n_id: int
    n_ood: int
    mu_id: float
    mu_ood: float


def threshold_candidates(lo: float, hi: float, grid: int) -> np.ndarray:
    """The grid+1 uniformly spaced candidate thresholds spanning [lo, hi]."""
    return np.linspace(lo, hi, grid + 1)


def adaptive_threshold(scores, grid: int = 100) -> ThresholdResult:
    """Pick the candidate threshold minimizing summed within-side variance.

    The ID side of a candidate t is {s > t}, the OOD side {s <= t}; the
    objective is sum((s - mu_id)^2)/n_id + sum((s - mu_ood)^2)/n_ood.
    Candidates leaving either side empty are skipped; ties go to the smallest
    candidate. Needs at least two distinct scores, else the split is
    undefined and DegenerateScoresError is raised.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size < 2:
        raise DegenerateScoresError(f"need >= 2 scores, got {s.size}")
    if not np.all(np.isfinite(s)):
        raise DomainError("non-finite scores")
    if grid < 1:
        raise DomainError(f"grid must be >= 1, got {grid}")
    lo = float(s.min())
    hi = float(s.max())
    if lo == hi:
        raise DegenerateScoresError("all scores identical; no threshold exists")

    cands = threshold_candidates(lo, hi, grid)
    best: tuple[float, ThresholdResult] | None = None
    for t in cands:
        ood_mask = s <= t
        n_ood = int(ood_mask.sum())
        n_id = s.size - n_ood
        if n_id == 0 or n_ood == 0:
            continue
        s_ood = s[ood_mask]
        s_id = s[~ood_mask]
        mu_ood = s_ood.mean()
        mu_id = s_id.mean()
        obj = float(np.square(s_id - mu_id).sum() / n_id + np.square(s_ood - mu_ood).sum() / n_ood)
        if best is None or obj < best[0]:
            best = (
                obj,
                ThresholdResult(
                    threshold=float(t),
                    grid_lo=lo,
                    grid_hi=hi,
                    objective=obj,
                    n_id=n_id,
                    n_ood=n_ood,
                    mu_id=float(mu_id),
                    mu_ood=float(mu_ood),
                ),
            )
    if best is None:
        # Unreachable once lo < hi: the lowest candidate keeps the min on the
        # OOD side and everything above it on the ID side.
        raise DegenerateScoresError("no candidate admits a two-sided split")
    return best[1]
