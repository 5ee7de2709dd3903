"""Learnable OOD text surrogates: probability head, losses, gradient, optimizer.

The adaptation state is a set of free parameter vectors, one per ID class,
whose unit-normalized rows act as "OOD text features". The probability that a
sample is OOD compares the exponentiated cosines against the OOD rows to the
ones against the frozen ID rows. Losses and the analytic gradient are written
by hand; finite differences are used only as a verification oracle.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .core import DomainError, StreamError, normalize_rows
from .detector import adaptive_threshold
from .core import DegenerateScoresError

PROB_CLAMP = 1e-7


class SplitUnavailableError(StreamError):
    """Raised when the pseudo-OOD set cannot be split into two groups."""


class TextFeatureSet:
    """Frozen ID features plus learnable OOD parameters.

    `ood_params` are free vectors updated by the optimizer; `ood_features`
    is the unit-normalized read view, refreshed after each update. At
    construction the parameters copy the ID features, so both feature sets
    start elementwise identical.
    """

    def __init__(self, id_features):
        id_rows = normalize_rows(id_features)
        id_rows.setflags(write=False)
        self._id = id_rows
        self.ood_params = id_rows.copy()
        self._ood_features = id_rows.copy()
        self._ood_features.setflags(write=False)

    @property
    def num_classes(self) -> int:
        return self._id.shape[0]

    @property
    def dim(self) -> int:
        return self._id.shape[1]

    @property
    def id_features(self) -> np.ndarray:
        return self._id

    @property
    def ood_features(self) -> np.ndarray:
        return self._ood_features

    def param_norms(self) -> np.ndarray:
        return np.linalg.norm(self.ood_params, axis=1)

    def refresh(self) -> None:
        """Re-derive the unit feature rows after a parameter update."""
        norms = self.param_norms()
        if np.any(norms < 1e-12) or not np.all(np.isfinite(norms)):
            raise DomainError("OOD parameter row collapsed to zero or non-finite")
        feats = self.ood_params / norms[:, None]
        feats.setflags(write=False)
        self._ood_features = feats


@dataclasses.dataclass
class PseudoBatch:
    """One flush worth of queued samples.

    `p` holds the probabilities recorded at enqueue time; losses recompute
    probabilities fresh from the current features, so this field is purely
    diagnostic.
    """

    z: np.ndarray
    s_base: np.ndarray
    y_hat: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        self.s_base = np.asarray(self.s_base, dtype=np.float64).ravel()
        self.y_hat = np.asarray(self.y_hat).ravel().astype(np.int64)
        self.p = np.asarray(self.p, dtype=np.float64).ravel()
        n = self.z.shape[0]
        if self.z.ndim != 2:
            raise DomainError("batch embeddings must be (B, d)")
        if not (self.s_base.size == self.y_hat.size == self.p.size == n):
            raise DomainError("batch field lengths disagree")
        if not np.all((self.y_hat == 0) | (self.y_hat == 1)):
            raise DomainError("pseudo-labels must be 0 or 1")

    def __len__(self) -> int:
        return self.z.shape[0]


def _prob_parts(Z: np.ndarray, feats: TextFeatureSet, tau: float):
    """Shared forward pass: exponentials, side sums, probabilities.

    Max-subtraction is shared across both feature sets per sample so the two
    sides stay directly comparable; the shift cancels in every ratio used
    downstream.
    """
    logits_id = (Z @ feats.id_features.T) / tau
    cos_ood = Z @ feats.ood_features.T
    logits_ood = cos_ood / tau
    shift = np.maximum(logits_id.max(axis=1), logits_ood.max(axis=1))
    e_id = np.exp(logits_id - shift[:, None])
    e_ood = np.exp(logits_ood - shift[:, None])
    sum_id = e_id.sum(axis=1)
    sum_ood = e_ood.sum(axis=1)
    p = sum_ood / (sum_id + sum_ood)
    return p, e_ood, sum_ood, cos_ood


def ood_probability_batch(Z, feats: TextFeatureSet, tau: float = 1.0) -> np.ndarray:
    """Probability each row of Z is OOD, in (0, 1)."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[None, :]
    p, _, _, _ = _prob_parts(Z, feats, tau)
    return p


def ood_probability(z, feats: TextFeatureSet, tau: float = 1.0) -> float:
    """Scalar convenience wrapper around ood_probability_batch."""
    return float(ood_probability_batch(np.asarray(z, dtype=np.float64)[None, :], feats, tau)[0])


def _clamped(p: np.ndarray, clamp: float) -> tuple[np.ndarray, np.ndarray]:
    """Clamped probabilities plus the mask of untouched entries."""
    tilde = np.clip(p, clamp, 1.0 - clamp)
    free = (p > clamp) & (p < 1.0 - clamp)
    return tilde, free


def _omb_weights(y_hat: np.ndarray) -> tuple[float, float]:
    """Per-sample weights 1/pi for each side, 0 when the side is absent."""
    n = y_hat.size
    n_id = int((y_hat == 1).sum())
    n_ood = n - n_id
    w_id = n / n_id if n_id else 0.0
    w_ood = n / n_ood if n_ood else 0.0
    return w_id, w_ood


def loss_omb(batch: PseudoBatch, feats: TextFeatureSet, tau: float = 1.0,
             clamp: float = PROB_CLAMP) -> float:
    """Class-proportion-weighted binary log loss over pseudo-labels.

    ID samples (pseudo-label 1) are pushed toward probability 0, OOD samples
    toward 1, each side weighted by the inverse of its batch proportion so a
    rare side is not drowned out.
    """
    p = ood_probability_batch(batch.z, feats, tau)
    tilde, _ = _clamped(p, clamp)
    w_id, w_ood = _omb_weights(batch.y_hat)
    id_mask = batch.y_hat == 1
    loss = 0.0
    if w_id:
        loss -= w_id * float(np.log1p(-tilde[id_mask]).sum())
    if w_ood:
        loss -= w_ood * float(np.log(tilde[~id_mask]).sum())
    return loss


def loss_ce(batch: PseudoBatch, feats: TextFeatureSet, tau: float = 1.0,
            clamp: float = PROB_CLAMP) -> float:
    """Plain-average variant of the binary log loss, weights 1/|batch|."""
    p = ood_probability_batch(batch.z, feats, tau)
    tilde, _ = _clamped(p, clamp)
    id_mask = batch.y_hat == 1
    n = len(batch)
    return -(float(np.log1p(-tilde[id_mask]).sum()) + float(np.log(tilde[~id_mask]).sum())) / n


def purification_split(batch: PseudoBatch, feats: TextFeatureSet, tau: float = 1.0,
                       grid: int = 100):
    """Split the pseudo-OOD samples into likely-true and likely-false groups.

    Probabilities are recomputed fresh, then thresholded by the same
    variance-minimizing rule used on base scores. Returns (idx_high, idx_low,
    theta) with batch-relative indices: idx_high holds pseudo-OOD samples
    whose probability exceeds theta. Raises SplitUnavailableError when fewer
    than two pseudo-OOD samples exist or their probabilities admit no split.
    """
    p = ood_probability_batch(batch.z, feats, tau)
    ood_idx = np.flatnonzero(batch.y_hat == 0)
    if ood_idx.size < 2:
        raise SplitUnavailableError(f"need >= 2 pseudo-OOD samples, got {ood_idx.size}")
    p_ood = p[ood_idx]
    try:
        res = adaptive_threshold(p_ood, grid=grid)
    except DegenerateScoresError as exc:
        raise SplitUnavailableError(str(exc)) from exc
    high = ood_idx[p_ood > res.threshold]
    low = ood_idx[p_ood <= res.threshold]
    return high, low, float(res.threshold)


def loss_okp(p: np.ndarray, idx_high: np.ndarray, idx_low: np.ndarray) -> float:
    """Negative gap between mean probabilities of the two pseudo-OOD groups.

    Minimizing it widens the gap; the value lives in (-1, 1).
    """
    p = np.asarray(p, dtype=np.float64)
    if len(idx_high) == 0 or len(idx_low) == 0:
        raise DomainError("both purification groups must be nonempty")
    return -(float(p[idx_high].mean()) - float(p[idx_low].mean()))


def total_loss(batch: PseudoBatch, feats: TextFeatureSet, alpha: float = 0.5,
               tau: float = 1.0, grid: int = 100, loss: str = "omb",
               clamp: float = PROB_CLAMP) -> float:
    """Pseudo-label loss plus alpha times the purification gap loss.

    The gap term contributes 0 whenever the pseudo-OOD split is unavailable.
    """
    base_fn = loss_omb if loss == "omb" else loss_ce
    value = base_fn(batch, feats, tau=tau, clamp=clamp)
    if alpha:
        try:
            idx_high, idx_low, _ = purification_split(batch, feats, tau=tau, grid=grid)
        except SplitUnavailableError:
            return value
        p = ood_probability_batch(batch.z, feats, tau)
        value += alpha * loss_okp(p, idx_high, idx_low)
    return value


def gradient(batch: PseudoBatch, feats: TextFeatureSet, alpha: float = 0.5,
             tau: float = 1.0, grid: int = 100, loss: str = "omb",
             clamp: float = PROB_CLAMP) -> np.ndarray:
    """Analytic gradient of the total loss w.r.t. the free OOD parameters.

    Chain rule through probability -> cosine -> row normalization. The
    purification threshold and group memberships are treated as constants of
    the batch, matching how the split is consumed.
    """
    Z = batch.z
    p, e_ood, sum_ood, cos_ood = _prob_parts(Z, feats, tau)
    _, free = _clamped(p, clamp)

    dLdp = np.zeros(len(batch))
    id_mask = batch.y_hat == 1
    if loss == "omb":
        w_id, w_ood = _omb_weights(batch.y_hat)
    elif loss == "ce":
        w_id = w_ood = 1.0 / len(batch)
    else:
        raise DomainError(f"unknown loss {loss!r}")
    gate_id = id_mask & free
    gate_ood = (~id_mask) & free
    if np.any(gate_id):
        dLdp[gate_id] += w_id / (1.0 - p[gate_id])
    if np.any(gate_ood):
        dLdp[gate_ood] -= w_ood / p[gate_ood]

    if alpha:
        try:
            idx_high, idx_low, _ = purification_split(batch, feats, tau=tau, grid=grid)
        except SplitUnavailableError:
            idx_high = idx_low = None
        if idx_high is not None:
            dLdp[idx_high] -= alpha / len(idx_high)
            dLdp[idx_low] += alpha / len(idx_low)

    # d p_i / d cos_ik = p_i (1 - p_i) e_ood_ik / (tau * sum_ood_i)
    coeff = (dLdp * p * (1.0 - p))[:, None] * e_ood / (tau * sum_ood[:, None])
    raw = coeff.T @ Z
    along = (coeff * cos_ood).sum(axis=0)
    norms = feats.param_norms()
    return (raw - along[:, None] * feats.ood_features) / norms[:, None]


@dataclasses.dataclass
class OptimizerState:
    """First/second moment accumulators for the decoupled-decay optimizer."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "OptimizerState":
        return cls(m=np.zeros_like(params), v=np.zeros_like(params), step=0)


def adamw_step(params: np.ndarray, grads: np.ndarray, state: OptimizerState,
               lr: float = 0.005, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, weight_decay: float = 0.01) -> bool:
    """One bias-corrected moment update with decoupled weight decay, in place.

    Returns False (and leaves params and state untouched) when the gradient
    contains non-finite values; callers log that as an incident.
    """
    g = np.asarray(grads, dtype=np.float64)
    if g.shape != params.shape:
        raise DomainError(f"gradient shape {g.shape} != params shape {params.shape}")
    if not np.all(np.isfinite(g)):
        return False
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * np.square(g)
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    params -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * params)
    return True


@dataclasses.dataclass
class GradCheckResult:
    max_rel_err: float
    max_abs_err: float
    grad_scale: float
    dim: int
    num_classes: int
    batch_size: int
    alpha: float


def gradient_check(dim: int, num_classes: int, batch_size: int, alpha: float,
                   seed: int, step: float = 1e-5, tau: float = 1.0,
                   grid: int = 100, loss: str = "omb") -> GradCheckResult:
    """Compare the analytic gradient against central finite differences.

    Builds a random configuration (unit batch, random pseudo-labels, OOD
    parameters perturbed off the ID point), freezes the purification
    membership at the base point, and differences the loss coordinate by
    coordinate. The relative error is measured against the larger of the two
    gradients' max magnitudes.
    """
    rng = np.random.default_rng(seed)
    feats = TextFeatureSet(rng.normal(size=(num_classes, dim)))
    feats.ood_params += 0.35 * rng.normal(size=(num_classes, dim))
    feats.refresh()
    Z = normalize_rows(rng.normal(size=(batch_size, dim)))
    y_hat = rng.integers(0, 2, size=batch_size)
    batch = PseudoBatch(z=Z, s_base=np.zeros(batch_size), y_hat=y_hat,
                        p=np.full(batch_size, 0.5))

    frozen = None
    if alpha:
        try:
            idx_high, idx_low, _ = purification_split(batch, feats, tau=tau, grid=grid)
            frozen = (idx_high, idx_low)
        except SplitUnavailableError:
            frozen = None

    base_fn = loss_omb if loss == "omb" else loss_ce

    def loss_at(params_flat: np.ndarray) -> float:
        feats.ood_params[...] = params_flat.reshape(num_classes, dim)
        feats.refresh()
        value = base_fn(batch, feats, tau=tau)
        if alpha and frozen is not None:
            p = ood_probability_batch(batch.z, feats, tau)
            value += alpha * loss_okp(p, frozen[0], frozen[1])
        return value

    base_params = feats.ood_params.copy()
    analytic = gradient(batch, feats, alpha=alpha, tau=tau, grid=grid, loss=loss)

    flat = base_params.ravel().copy()
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = loss_at(flat)
        flat[i] = orig - step
        f_minus = loss_at(flat)
        flat[i] = orig
        fd[i] = (f_plus - f_minus) / (2.0 * step)
    feats.ood_params[...] = base_params
    feats.refresh()

    fd = fd.reshape(num_classes, dim)
    diff = np.abs(analytic - fd)
    scale = max(float(np.abs(analytic).max()), float(np.abs(fd).max()), 1e-12)
    return GradCheckResult(
        max_rel_err=float(diff.max()) / scale,
        max_abs_err=float(diff.max()),
        grad_scale=scale,
        dim=dim,
        num_classes=num_classes,
        batch_size=batch_size,
        alpha=alpha,
    )
