"""Streaming orchestration: score, threshold, pseudo-label, adapt, calibrate.

Per sample: compute the base score against the frozen ID features, recompute
the adaptive threshold over every score seen so far, pseudo-label, record the
OOD probability, queue the sample, and emit a final score fused with the
bank calibration. Whenever the queue reaches the batch size the learner takes
one optimizer step, the refreshed OOD features are snapshotted into the bank,
and the queue clears. Nothing in this path ever reads ground-truth labels.
"""

from __future__ import annotations

import collections
import dataclasses
import json
import os
import time
from pathlib import Path

import numpy as np

from . import dataio, metrics
from .bank import KnowledgeBank
from .core import ConfigError, DomainError, FormatError, RunConfig, normalize_vector
from .detector import ThresholdResult, maxlogit_score, mcm_score, pseudo_label, threshold_candidates
from .learner import (OptimizerState, PseudoBatch, TextFeatureSet, adamw_step,
                      gradient, ood_probability)


class StreamingThreshold:
    """Incremental adaptive-threshold search over a growing score buffer.

    Equivalent to rerunning the full grid search after every score, but
    amortized O(grid) per sample: scores are bucketed against the candidate
    grid (exact searchsorted comparisons, so bucket membership equals direct
    comparison with each candidate) and the objective is evaluated from
    prefix sums of centered first and second moments. Centering makes the
    within-side variance numerically stable; it cannot change the value
    because variance is shift-invariant. The bucket layout is rebuilt only
    when a new score extends the observed range, which for exchangeable
    streams happens O(log n) times.

    An optional ring-buffer window caps the population at the most recent
    `window` scores.
    """

    def __init__(self, grid: int, window: int | None = None):
        if grid < 1:
            raise DomainError(f"grid must be >= 1, got {grid}")
        self.grid = grid
        self.window = window
        self._scores: collections.deque[float] = collections.deque()
        self._lo = np.inf
        self._hi = -np.inf
        self._cands: np.ndarray | None = None
        self._ref = 0.0
        self._counts = np.zeros(grid + 1, dtype=np.int64)
        self._sums = np.zeros(grid + 1)
        self._sumsqs = np.zeros(grid + 1)

    def __len__(self) -> int:
        return len(self._scores)

    def _rebucket(self) -> None:
        arr = np.asarray(self._scores, dtype=np.float64)
        self._lo = float(arr.min())
        self._hi = float(arr.max())
        if self._lo == self._hi:
            self._cands = None
            return
        self._cands = threshold_candidates(self._lo, self._hi, self.grid)
        self._ref = 0.5 * (self._lo + self._hi)
        idx = np.searchsorted(self._cands, arr, side="left")
        centered = arr - self._ref
        self._counts = np.bincount(idx, minlength=self.grid + 1).astype(np.int64)
        self._sums = np.bincount(idx, weights=centered, minlength=self.grid + 1)
        self._sumsqs = np.bincount(idx, weights=centered * centered, minlength=self.grid + 1)

    def add(self, score: float) -> None:
        s = float(score)
        self._scores.append(s)
        needs_rebucket = False
        if self.window is not None and len(self._scores) > self.window:
            old = self._scores.popleft()
            if self._cands is not None and self._lo <= old <= self._hi:
                if old == self._lo or old == self._hi:
                    needs_rebucket = True
                else:
                    b = int(np.searchsorted(self._cands, old, side="left"))
                    c = old - self._ref
                    self._counts[b] -= 1
                    self._sums[b] -= c
                    self._sumsqs[b] -= c * c
            elif self._cands is None:
                needs_rebucket = True
        if s < self._lo or s > self._hi or needs_rebucket:
            self._rebucket()
        elif self._cands is not None:
            b = int(np.searchsorted(self._cands, s, side="left"))
            c = s - self._ref
            self._counts[b] += 1
            self._sums[b] += c
            self._sumsqs[b] += c * c

    def result(self) -> ThresholdResult | None:
        """Current threshold, or None while the buffer is degenerate."""
        n = len(self._scores)
        if n < 2 or self._cands is None:
            return None
        cc = np.cumsum(self._counts)
        cs = np.cumsum(self._sums)
        cq = np.cumsum(self._sumsqs)
        total_s = cs[-1]
        total_q = cq[-1]
        n_ood = cc
        n_id = n - cc
        valid = (n_ood > 0) & (n_id > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            obj_ood = (cq - np.square(cs) / n_ood) / n_ood
            obj_id = ((total_q - cq) - np.square(total_s - cs) / n_id) / n_id
            obj = np.where(valid, obj_ood + obj_id, np.inf)
        k = int(np.argmin(obj))  # argmin keeps the first (smallest) candidate on ties
        if not valid[k]:
            return None
        return ThresholdResult(
            threshold=float(self._cands[k]),
            grid_lo=self._lo,
            grid_hi=self._hi,
            objective=float(obj[k]),
            n_id=int(n_id[k]),
            n_ood=int(n_ood[k]),
            mu_id=float((total_s - cs[k]) / n_id[k] + self._ref),
            mu_ood=float(cs[k] / n_ood[k] + self._ref),
        )


@dataclasses.dataclass
class SampleOutcome:
    """Everything the engine decided about one stream position."""

    index: int
    s_base: float
    threshold: float
    pseudo_label: int
    p_ood: float
    s_cal: float
    s_final: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class StreamEngine:
    """Single-pass detector with test-time adaptation over one stream."""

    def __init__(self, id_features, config: RunConfig):
        self.config = config.validate()
        self.feats = TextFeatureSet(id_features)
        self.rng = np.random.default_rng(config.seed)
        self.bank = KnowledgeBank(config.bank_capacity, config.bank_strategy,
                                  self.feats.id_features, rng=self.rng)
        self.opt_state = OptimizerState.zeros_like(self.feats.ood_params)
        self.tracker = StreamingThreshold(config.threshold_grid, config.score_window)
        self._queue_z: list[np.ndarray] = []
        self._queue_s: list[float] = []
        self._queue_y: list[int] = []
        self._queue_p: list[float] = []
        self.position = 0
        self.flush_count = 0
        self.steps_skipped = 0
        self.incidents: list[dict] = []

    @property
    def adaptation_active(self) -> bool:
        limit = self.config.early_stop_after
        return limit is None or self.position <= limit

    def _base_score(self, z: np.ndarray) -> float:
        if self.config.base_scorer == "mcm":
            return mcm_score(z, self.feats.id_features, self.config.tau)
        return maxlogit_score(z, self.feats.id_features)

    def process_sample(self, z) -> SampleOutcome | None:
        """Run one sample through the pipeline; None if it was rejected."""
        index = self.position
        self.position += 1
        raw = np.asarray(z, dtype=np.float64).ravel()
        if raw.shape[0] != self.feats.dim:
            self.incidents.append({"index": index, "reason": f"dim {raw.shape[0]} != {self.feats.dim}"})
            return None
        if not np.all(np.isfinite(raw)):
            self.incidents.append({"index": index, "reason": "non-finite embedding"})
            return None
        try:
            unit = normalize_vector(raw)
        except DomainError as exc:
            self.incidents.append({"index": index, "reason": str(exc)})
            return None

        s_base = self._base_score(unit)
        self.tracker.add(s_base)
        res = self.tracker.result()
        threshold = s_base if res is None else res.threshold
        y_hat = pseudo_label(s_base, threshold)
        p = ood_probability(unit, self.feats, self.config.tau)

        if self.adaptation_active:
            self._queue_z.append(unit)
            self._queue_s.append(s_base)
            self._queue_y.append(y_hat)
            self._queue_p.append(p)
            if len(self._queue_z) == self.config.batch_size:
                self._flush()

        mode = self.config.calibration
        if mode == "fusion":
            s_cal = self.bank.calibration_score(unit)
            s_final = s_base + self.config.beta * s_cal
        else:
            s_cal = self.bank.calibration_variant(unit, mode, self.config.tau)
            s_final = s_cal
        return SampleOutcome(index=index, s_base=s_base, threshold=threshold,
                             pseudo_label=y_hat, p_ood=p, s_cal=s_cal, s_final=s_final)

    def _flush(self) -> None:
        batch = PseudoBatch(
            z=np.stack(self._queue_z),
            s_base=np.asarray(self._queue_s),
            y_hat=np.asarray(self._queue_y),
            p=np.asarray(self._queue_p),
        )
        cfg = self.config
        grads = gradient(batch, self.feats, alpha=cfg.alpha, tau=cfg.tau,
                         grid=cfg.threshold_grid, loss=cfg.loss, clamp=cfg.prob_clamp)
        applied = adamw_step(self.feats.ood_params, grads, self.opt_state,
                             lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2,
                             eps=cfg.eps, weight_decay=cfg.weight_decay)
        if applied:
            self.feats.refresh()
        else:
            self.steps_skipped += 1
            self.incidents.append({"index": self.position - 1,
                                   "reason": "non-finite gradient; optimizer step skipped"})
        self.bank.insert_batch(self.feats.ood_features)
        self._queue_z.clear()
        self._queue_s.clear()
        self._queue_y.clear()
        self._queue_p.clear()
        self.flush_count += 1


@dataclasses.dataclass
class StreamReport:
    """Serializable record of one full run."""

    dataset_name: str
    config: dict
    n_presented: int
    n_scored: int
    flush_count: int
    flags: list
    incidents: list
    timing: dict
    outcomes: list | None
    metrics_final: dict | None
    metrics_base: dict | None
    bank: dict | None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "StreamReport":
        doc = json.loads(Path(path).read_text())
        known = {f.name for f in dataclasses.fields(cls)}
        missing = known - set(doc)
        if missing:
            raise FormatError(f"{path}: report missing keys {sorted(missing)}")
        return cls(**{k: doc[k] for k in known})


def resolve_config(flags: dict | None = None, manifest: dataio.Manifest | None = None) -> RunConfig:
    """Merge config sources: flags > manifest notes (JSON) > defaults."""
    merged: dict = {}
    known = {f.name for f in dataclasses.fields(RunConfig)}
    if manifest is not None:
        notes = manifest.notes_config()
        merged.update({k: v for k, v in notes.items() if k in known})
    if flags:
        unknown = set(flags) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update({k: v for k, v in flags.items() if v is not None})
    return RunConfig(**merged).validate()


def threads_requested() -> int:
    """Worker cap from the TTL_THREADS environment variable (min 1)."""
    raw = os.environ.get("TTL_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"TTL_THREADS must be an integer, got {raw!r}")


def run_stream(manifest_path, config: RunConfig | None = None,
               include_outcomes: bool = True, include_bank: bool = True) -> StreamReport:
    """Execute a full streaming run described by a manifest.

    Ground-truth labels, when the manifest names them, are loaded only after
    the stream finishes and only to fill the metrics blocks.
    """
    manifest_path = Path(manifest_path)
    manifest = dataio.Manifest.load(manifest_path)
    base = manifest_path.parent
    if config is None:
        config = resolve_config(manifest=manifest)
    config.validate()

    id_features = dataio.read_embeddings(manifest.resolve("id_text", base), expect_dim=manifest.dim)
    if id_features.shape[0] != len(manifest.id_classnames):
        raise ConfigError(
            f"id_text holds {id_features.shape[0]} features but the manifest "
            f"names {len(manifest.id_classnames)} classes"
        )
    stream = dataio.read_embeddings(manifest.resolve("stream", base), expect_dim=manifest.dim,
                                    normalize=False, allow_nonfinite=True)

    engine = StreamEngine(id_features, config)
    outcomes: list[SampleOutcome] = []
    t0 = time.perf_counter()
    for row in stream:
        out = engine.process_sample(row)
        if out is not None:
            outcomes.append(out)
    wall = time.perf_counter() - t0

    flags = []
    if engine.flush_count == 0:
        flags.append("no adaptation steps")
    if engine.incidents:
        flags.append("samples rejected" if any(
            "gradient" not in i["reason"] for i in engine.incidents) else "optimizer steps skipped")

    metrics_final = metrics_base = None
    if "labels" in manifest.files:
        labels = dataio.read_labels(manifest.resolve("labels", base))
        if labels.size != stream.shape[0]:
            raise FormatError(
                f"labels file has {labels.size} entries for a stream of {stream.shape[0]}"
            )
        kept = np.asarray([o.index for o in outcomes], dtype=np.int64)
        y = labels[kept]
        s_final = np.asarray([o.s_final for o in outcomes])
        s_base = np.asarray([o.s_base for o in outcomes])
        metrics_final = metrics.evaluate(s_final, y)
        metrics_base = metrics.evaluate(s_base, y)

    bank_block = None
    if include_bank:
        entries = engine.bank.entries()
        bank_block = {
            "strategy": engine.bank.strategy,
            "capacity": engine.bank.capacity,
            "size": len(engine.bank),
            "dim": engine.feats.dim,
            "features": [e.feature.tolist() for e in entries],
            "priorities": [e.priority for e in entries],
            "insert_seqs": [e.insert_seq for e in entries],
        }

    n = max(1, len(outcomes))
    cfg_echo = dict(config.to_dict())
    cfg_echo["threads_requested"] = threads_requested()
    cfg_echo["threads_used"] = 1
    return StreamReport(
        dataset_name=manifest.dataset_name,
        config=cfg_echo,
        n_presented=engine.position,
        n_scored=len(outcomes),
        flush_count=engine.flush_count,
        flags=flags,
        incidents=engine.incidents,
        timing={"wall_s": wall, "per_sample_ms": 1000.0 * wall / n},
        outcomes=[o.to_dict() for o in outcomes] if include_outcomes else None,
        metrics_final=metrics_final,
        metrics_base=metrics_base,
        bank=bank_block,
    )
