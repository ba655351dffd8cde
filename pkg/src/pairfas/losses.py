"""Binary focal loss, supervised contrastive loss and their weighted sum.

Each loss returns its value together with the gradient with respect to its
inputs. Live is the positive class (target 1).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Mapping, Optional

import numpy as np

from .diffcore import as_tensor, l2_normalize, sigmoid
from .errors import ConfigError, DimensionError, DomainError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    focal_alpha: float = 0.5
    focal_gamma: float = 0.7
    supcon_temperature: float = 0.14
    supcon_weight: float = 0.3
    probability_clamp: float = 1e-7

    def __post_init__(self):
        if self.supcon_temperature <= 0:
            raise ConfigError("supcon_temperature must be positive")
        if self.supcon_weight < 0:
            raise ConfigError("supcon_weight must be non-negative")
        if not 0 < self.probability_clamp < 0.5:
            raise ConfigError("probability_clamp must be in (0, 0.5)")
        if not 0 < self.focal_alpha < 1:
            raise ConfigError("focal_alpha must be in (0, 1)")
        if self.focal_gamma < 0:
            raise ConfigError("focal_gamma must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "LossConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown loss keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class LossBundle:
    focal: float
    supcon: float
    total: float
    valid_anchor_count: int
    supcon_degenerate: bool = False


def focal_loss(logits, targets, config: LossConfig = LossConfig()):
    """Mean binary focal loss over a batch and its gradient w.r.t. the logits.

    ``targets`` may be fractional (CutMix); the two class terms are weighted
    linearly. Probabilities are clamped to ``[eps, 1 - eps]``; where the clamp
    is active the gradient is zero.
    """
    z = np.atleast_1d(as_tensor(logits))
    t = np.broadcast_to(as_tensor(targets), z.shape)
    if np.any((t < 0) | (t > 1)):
        raise DomainError("focal_loss: targets must lie in [0, 1]")
    a, g, eps = config.focal_alpha, config.focal_gamma, config.probability_clamp
    raw = sigmoid(z)
    p = np.clip(raw, eps, 1.0 - eps)
    q = 1.0 - p
    log_p, log_q = np.log(p), np.log(q)
    pos = t * a * q**g * log_p
    neg = (1.0 - t) * (1.0 - a) * p**g * log_q
    per = -(pos + neg)

    # d/dp of each term
    dpos = t * a * (q**g / p - (g * q ** (g - 1.0) * log_p if g else 0.0))
    dneg = (1.0 - t) * (1.0 - a) * ((g * p ** (g - 1.0) * log_q if g else 0.0) - p**g / q)
    dper_dp = -(dpos + dneg)
    active = (raw > eps) & (raw < 1.0 - eps)
    grad = np.where(active, dper_dp * p * q, 0.0) / z.size
    return float(per.mean()), grad.reshape(np.shape(logits)) if np.ndim(logits) else float(grad[0])


def _logsumexp_masked(s, mask):
    """Row-wise log(sum(exp(s) over mask)); -inf where a row mask is empty."""
    masked = np.where(mask, s, -np.inf)
    m = masked.max(axis=1, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    ex = np.where(mask, np.exp(s - m_safe), 0.0)
    tot = ex.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        lse = np.log(tot) + m_safe
    weights = np.divide(ex, tot, out=np.zeros_like(ex), where=tot > 0)
    return lse[:, 0], weights


@dataclass(frozen=True)
class SupConResult:
    value: float
    grad: np.ndarray
    valid_anchor_count: int

    @property
    def degenerate(self) -> bool:
        return self.valid_anchor_count == 0


def supcon_loss(z, labels, temperature: float) -> SupConResult:
    """Supervised contrastive loss with the positive sum inside the log.

    For anchor i with positives P(i) (same label, j != i):
    ``l_i = -log(sum_{P(i)} exp(z_i.z_j / T) / sum_{k != i} exp(z_i.z_k / T))``,
    averaged over anchors that have at least one positive. The gradient is
    w.r.t. ``z`` taken as free vectors.
    """
    z = as_tensor(z)
    labels = np.asarray(labels)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise DimensionError(f"supcon_loss: projections {z.shape} vs labels {labels.shape}")
    n = z.shape[0]
    if n < 2:
        raise DomainError("supcon_loss: need at least 2 samples")
    if temperature <= 0:
        raise DomainError("supcon_loss: temperature must be positive")
    s = (z @ z.T) / temperature
    not_self = ~np.eye(n, dtype=bool)
    positive = (labels[:, None] == labels[None, :]) & not_self
    valid = positive.any(axis=1)
    n_valid = int(valid.sum())
    if n_valid == 0:
        log.warning("supcon_loss: no anchor has a positive; returning 0")
        return SupConResult(0.0, np.zeros_like(z), 0)

    lse_pos, w_pos = _logsumexp_masked(s, positive)
    lse_all, w_all = _logsumexp_masked(s, not_self)
    # log1p(neg / pos) keeps full relative accuracy when the loss is tiny;
    # the log-sum-exp difference covers rows where pos underflows.
    m = np.where(not_self, s, -np.inf).max(axis=1, keepdims=True)
    ex = np.where(not_self, np.exp(s - m), 0.0)
    pos = np.where(positive, ex, 0.0).sum(axis=1)
    neg = np.where(not_self & ~positive, ex, 0.0).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = neg / pos
    small = valid & (pos > 0) & np.isfinite(ratio)
    per_anchor = np.where(valid, lse_all - lse_pos, 0.0)
    per_anchor[small] = np.log1p(ratio[small])
    value = float(per_anchor.sum() / n_valid)

    # d l_i / d s_ij for valid anchors, scaled by 1/n_valid.
    gs = np.where(valid[:, None], w_all - w_pos, 0.0) / n_valid
    grad = (gs + gs.T) @ z / temperature
    return SupConResult(max(value, 0.0), grad, n_valid)


def supcon_from_raw(raw, labels, temperature: float):
    """SupCon on raw projections: normalize, evaluate, chain the gradient back."""
    z, vjp = l2_normalize(raw)
    res = supcon_loss(z, labels, temperature)
    return res, vjp(res.grad)


def combined_objective(logits, raw_projections, focal_targets, supcon_labels, config: LossConfig = LossConfig()):
    """``focal(logits, mixed targets) + weight * supcon(projections, base labels)``.

    Returns ``(bundle, d_logits, d_raw_projections)``. With a zero weight the
    contrastive term is skipped entirely.
    """
    focal, d_logits = focal_loss(logits, focal_targets, config)
    lam = config.supcon_weight
    if lam == 0.0:
        bundle = LossBundle(focal, 0.0, focal, 0, False)
        return bundle, d_logits, np.zeros_like(as_tensor(raw_projections))
    res, d_raw = supcon_from_raw(raw_projections, supcon_labels, config.supcon_temperature)
    bundle = LossBundle(focal, res.value, focal + lam * res.value, res.valid_anchor_count, res.degenerate)
    return bundle, d_logits, lam * d_raw
