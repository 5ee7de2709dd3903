"""Shared numeric kernels, configuration, and error types.

All internal arithmetic runs in float64; float32 appears only at the storage
boundary (see dataio). Embeddings are plain numpy arrays: a single vector is a
1-d array, a collection is an (n, d) matrix with unit rows after ingestion.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

# Rows with norm below this are treated as degenerate rather than normalized.
ZERO_NORM_ATOL = 1e-12

# Tolerance for "already unit norm" checks on ingested data.
UNIT_ATOL = 1e-4


class StreamError(Exception):
    """Base class for every error this package raises on purpose."""


class DomainError(StreamError, ValueError):
    """Input outside the mathematical domain (zero vector, bad tau, ...)."""


class ConfigError(StreamError, ValueError):
    """Invalid or inconsistent run configuration."""


class FormatError(StreamError, ValueError):
    """File does not follow the documented layout."""


class CorruptionError(FormatError):
    """File follows the layout prefix but its content is inconsistent."""


class DegenerateScoresError(StreamError, ValueError):
    """Score set admits no threshold (fewer than two distinct values)."""


def as_matrix(x, dim: int | None = None) -> np.ndarray:
    """Coerce input to a float64 (n, d) matrix, checking dimensionality."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DomainError(f"expected vector or matrix, got ndim={arr.ndim}")
    if dim is not None and arr.shape[1] != dim:
        raise DomainError(f"expected dim {dim}, got {arr.shape[1]}")
    return arr


def normalize_rows(x) -> np.ndarray:
    """Return a copy of x with unit-norm rows.

    Raises DomainError if any row has (near-)zero norm, since a direction
    cannot be recovered from it.
    """
    arr = as_matrix(x).copy()
    norms = np.linalg.norm(arr, axis=1)
    if not np.all(np.isfinite(norms)):
        raise DomainError("non-finite values in embedding rows")
    if np.any(norms < ZERO_NORM_ATOL):
        bad = int(np.argmin(norms))
        raise DomainError(f"row {bad} has near-zero norm {norms[bad]:.3e}")
    arr /= norms[:, None]
    return arr


def normalize_vector(v) -> np.ndarray:
    """Unit-normalize a single vector (1-d)."""
    return normalize_rows(np.asarray(v, dtype=np.float64)[None, :])[0]


def cosine(a, b) -> float:
    """Cosine similarity between two vectors.

    Normalizes both inputs, so callers may pass unnormalized data; zero
    vectors are rejected.
    """
    ua = normalize_vector(a)
    ub = normalize_vector(b)
    if ua.shape != ub.shape:
        raise DomainError(f"dim mismatch {ua.shape} vs {ub.shape}")
    return float(np.dot(ua, ub))


def cosine_to_rows(z: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Cosines between one unit vector and each unit row of a matrix.

    Fast path: assumes inputs are already normalized (the ingestion contract),
    so this is a plain matrix-vector product.
    """
    return rows @ z


def softmax(logits, tau: float = 1.0) -> np.ndarray:
    """Temperature-scaled softmax with max-subtraction for stability."""
    if not (math.isfinite(tau) and tau > 0):
        raise DomainError(f"temperature must be finite and positive, got {tau}")
    arr = np.asarray(logits, dtype=np.float64)
    if arr.size == 0:
        raise DomainError("softmax over empty logits")
    if not np.all(np.isfinite(arr)):
        raise DomainError("non-finite logits")
    scaled = arr / tau
    scaled = scaled - scaled.max()
    e = np.exp(scaled)
    return e / e.sum()


BASE_SCORERS = ("mcm", "maxlogit")
LOSSES = ("omb", "ce")
BANK_STRATEGIES = ("priority", "fifo", "rand", "sa")
CALIBRATIONS = ("fusion", "maxsim", "expsum", "idr")


@dataclasses.dataclass
class RunConfig:
    """Full configuration of a streaming run.

    Defaults are the reference operating point: tau=1, alpha=0.5, bank
    capacity 2048, batch size 64, AdamW at lr 0.005, a 100-segment threshold
    grid, and fusion coefficient beta=0.006 (0.0005 is the documented
    alternative for score distributions an order of magnitude tighter).
    """

    tau: float = 1.0
    alpha: float = 0.5
    beta: float = 0.006
    bank_capacity: int = 2048
    batch_size: int = 64
    learning_rate: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    threshold_grid: int = 100
    early_stop_after: int | None = None
    score_window: int | None = None
    seed: int = 0
    base_scorer: str = "mcm"
    loss: str = "omb"
    bank_strategy: str = "priority"
    calibration: str = "fusion"
    prob_clamp: float = 1e-7

    def validate(self) -> "RunConfig":
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.bank_capacity < 1:
            raise ConfigError(f"bank_capacity must be >= 1, got {self.bank_capacity}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.threshold_grid < 1:
            raise ConfigError(f"threshold_grid must be >= 1, got {self.threshold_grid}")
        if self.early_stop_after is not None and self.early_stop_after < 0:
            raise ConfigError("early_stop_after must be None or >= 0")
        if self.score_window is not None and self.score_window < 2:
            raise ConfigError("score_window must be None or >= 2")
        if self.base_scorer not in BASE_SCORERS:
            raise ConfigError(f"base_scorer must be one of {BASE_SCORERS}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}")
        if self.bank_strategy not in BANK_STRATEGIES:
            raise ConfigError(f"bank_strategy must be one of {BANK_STRATEGIES}")
        if self.calibration not in CALIBRATIONS:
            raise ConfigError(f"calibration must be one of {CALIBRATIONS}")
        if not (0 < self.prob_clamp < 0.5):
            raise ConfigError("prob_clamp must sit in (0, 0.5)")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data).validate()
