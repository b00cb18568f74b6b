"""Training objectives: focal losses, margin penalty, caption cross-entropy,
and the weighted multi-task composition.

Conventions shared with the test oracles:
  * probabilities are clamped at 1e-12 before any log;
  * the binary focal weight is ``alpha`` for positives and ``1 - alpha`` for
    negatives;
  * caption cross-entropy sums over non-pad positions of one sequence and
    averages over a batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import DomainError, ShapeError

__all__ = [
    "PROB_FLOOR",
    "LossWeights",
    "MarginSchedule",
    "ClassificationBatch",
    "inverse_frequency_weights",
    "focal_binary",
    "margin_penalty",
    "margin_at_epoch",
    "detection_loss",
    "classification_loss",
    "caption_ce",
    "total_loss",
]

PROB_FLOOR = 1e-12


@dataclass
class MarginSchedule:
    """Linear warm-up for the negative-margin threshold."""

    m_start: float = 0.1
    m_end: float = 0.5
    warmup_epochs: int = 5

    def __post_init__(self):
        if not 0.0 <= self.m_start <= self.m_end <= 1.0:
            raise ValueError("need 0 <= m_start <= m_end <= 1")
        if self.warmup_epochs < 1:
            raise ValueError("warmup_epochs must be >= 1")


@dataclass
class LossWeights:
    """Every scalar hyperparameter of the composite objectives."""

    lambda_margin: float = 2.0     # margin penalty weight in the detection loss
    beta: float = 0.5              # state term weight in the classification loss
    lambda_sc: float = 0.3         # shot caption weight in the total loss
    lambda_tc: float = 6.0         # tactic caption weight in the total loss
    gamma: float = 2.0             # focal focusing exponent (binary and 9-way)
    alpha_binary: float = 0.25     # focal class-balance weight, positive class
    alpha_type: tuple[float, ...] | None = None  # per-class 9-way weights; None = uniform

    def __post_init__(self):
        values = [self.lambda_margin, self.beta, self.lambda_sc,
                  self.lambda_tc, self.gamma, self.alpha_binary]
        if self.alpha_type is not None:
            values += list(self.alpha_type)
        if any(v < 0 for v in values):
            raise ValueError("loss weights must be non-negative")

    def type_weights(self, num_classes: int = 9) -> torch.Tensor:
        if self.alpha_type is None:
            return torch.ones(num_classes, dtype=torch.get_default_dtype())
        if len(self.alpha_type) != num_classes:
            raise ShapeError(
                f"alpha_type has {len(self.alpha_type)} entries, need {num_classes}")
        return torch.tensor(self.alpha_type, dtype=torch.get_default_dtype())


def inverse_frequency_weights(counts: list[int] | tuple[int, ...]) -> tuple[float, ...]:
    """Per-class weights proportional to 1/count, normalised to mean 1.

    The usual way to fill ``LossWeights.alpha_type`` from training-split
    tactic-type counts. Zero counts borrow the smallest observed count.
    """
    if not counts or all(c == 0 for c in counts):
        raise ValueError("need at least one non-zero class count")
    floor = min(c for c in counts if c > 0)
    inv = [1.0 / (c if c > 0 else floor) for c in counts]
    mean = sum(inv) / len(inv)
    return tuple(v / mean for v in inv)


@dataclass
class ClassificationBatch:
    """Aligned tensors for the detector objectives; unused parts stay None.

    Distributions are rows summing to 1 (checked to 1e-6); binary entries are
    raw logits with 0/1 labels.
    """

    binary_logits: torch.Tensor | None = None   # [B]
    binary_labels: torch.Tensor | None = None   # [B] in {0, 1}
    type_true: torch.Tensor | None = None       # [B, 9] one-hot
    type_pred: torch.Tensor | None = None       # [B, 9] probabilities
    state_true: torch.Tensor | None = None      # [B, 5] or [B, S, 5] one-hot
    state_pred: torch.Tensor | None = None      # matches state_true

    def __post_init__(self):
        for name in ("type_pred", "state_pred"):
            dist = getattr(self, name)
            if dist is not None:
                sums = dist.sum(dim=-1)
                if not torch.allclose(sums, torch.ones_like(sums), atol=1e-6):
                    raise ShapeError(f"{name} rows must sum to 1")


# --------------------------------------------------------------------------
# pieces

def _clamped_log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(p, min=PROB_FLOOR))


def focal_binary(p_t, alpha_t=0.25, gamma: float = 2.0,
                 clamp: bool = True) -> torch.Tensor:
    """-alpha_t * (1 - p_t)^gamma * log(p_t), elementwise.

    ``p_t`` is the probability assigned to the true class. With the clamp
    disabled, non-positive probabilities raise DomainError instead of
    silently flooring.
    """
    p = torch.as_tensor(p_t, dtype=torch.get_default_dtype()) \
        if not torch.is_tensor(p_t) else p_t
    alpha = torch.as_tensor(alpha_t, dtype=p.dtype) if not torch.is_tensor(alpha_t) else alpha_t
    if clamp:
        log_p = _clamped_log(p)
    else:
        if bool((p <= 0).any()):
            raise DomainError("p_t must be positive when clamping is disabled")
        log_p = torch.log(p)
    return -alpha * (1.0 - p) ** gamma * log_p


def margin_penalty(z, m: float) -> torch.Tensor:
    """(1/|N|) * sum_i max(0, sigmoid(z_i) - m) over negative logits.

    An empty negative set contributes zero by convention.
    """
    z = torch.as_tensor(z, dtype=torch.get_default_dtype()) if not torch.is_tensor(z) else z
    if z.numel() == 0:
        return torch.zeros((), dtype=torch.get_default_dtype())
    return torch.clamp(torch.sigmoid(z) - m, min=0.0).mean()


def margin_at_epoch(schedule: MarginSchedule, epoch: int) -> float:
    """m_start + (m_end - m_start) * min(epoch, warmup) / warmup."""
    frac = min(max(epoch, 0), schedule.warmup_epochs) / schedule.warmup_epochs
    return schedule.m_start + (schedule.m_end - schedule.m_start) * frac


# --------------------------------------------------------------------------
# composites

def detection_loss(batch: ClassificationBatch, weights: LossWeights, epoch: int,
                   schedule: MarginSchedule | None = None) -> torch.Tensor:
    """Mean binary focal loss plus lambda_margin times the margin penalty on
    negatives, with the margin at its epoch-scheduled value."""
    if batch.binary_logits is None or batch.binary_labels is None:
        raise ShapeError("detection_loss needs binary logits and labels")
    schedule = schedule or MarginSchedule()
    z = batch.binary_logits
    y = batch.binary_labels.to(z.dtype)
    p = torch.sigmoid(z)
    p_t = torch.where(y > 0.5, p, 1.0 - p)
    alpha_t = torch.where(y > 0.5,
                          torch.full_like(z, weights.alpha_binary),
                          torch.full_like(z, 1.0 - weights.alpha_binary))
    focal = focal_binary(p_t, alpha_t, weights.gamma).mean()
    negatives = z[y < 0.5]
    margin = margin_penalty(negatives, margin_at_epoch(schedule, epoch))
    return focal + weights.lambda_margin * margin


def classification_loss(batch: ClassificationBatch, weights: LossWeights) -> torch.Tensor:
    """9-way focal type loss plus beta times the state cross-entropy.

    Both terms are means over their batch rows; a per-shot state tensor is
    averaged over shots as well.
    """
    if batch.type_true is None or batch.type_pred is None:
        raise ShapeError("classification_loss needs type targets and predictions")
    alpha_k = weights.type_weights(batch.type_true.shape[-1]).to(batch.type_pred.dtype)
    focal_terms = -alpha_k * (1.0 - batch.type_pred) ** weights.gamma \
        * batch.type_true * _clamped_log(batch.type_pred)
    type_term = focal_terms.sum(dim=-1).mean()
    state_term = torch.zeros((), dtype=type_term.dtype)
    if batch.state_true is not None and batch.state_pred is not None:
        ce = -(batch.state_true * _clamped_log(batch.state_pred)).sum(dim=-1)
        state_term = ce.mean()
    return type_term + weights.beta * state_term


def caption_ce(logits: torch.Tensor, targets: torch.Tensor, pad_id: int,
               per_token_mean: bool = False) -> torch.Tensor:
    """Teacher-forced caption loss: -sum_t log p(y_t | y_<t, memory).

    ``logits`` is [T, V] aligned with ``targets`` [T]; pad positions are
    excluded. Sums over positions by default (matching the per-sequence
    objective); ``per_token_mean`` switches to the mean.
    """
    if logits.ndim != 2 or targets.ndim != 1 or logits.shape[0] != targets.shape[0]:
        raise ShapeError(f"logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}")
    if targets.numel() and int(targets.max()) >= logits.shape[1]:
        raise IndexError(f"target id {int(targets.max())} >= vocab {logits.shape[1]}")
    mask = targets != pad_id
    if not bool(mask.any()):
        return torch.zeros((), dtype=logits.dtype)
    log_probs = torch.log_softmax(logits, dim=-1)
    picked = log_probs[torch.arange(targets.shape[0]), targets]
    total = -(picked[mask]).sum()
    return total / mask.sum() if per_token_mean else total


def total_loss(l_sc, l_tc, weights: LossWeights) -> torch.Tensor:
    """lambda_sc * shot caption loss + lambda_tc * tactic caption loss."""
    l_sc = torch.as_tensor(l_sc, dtype=torch.get_default_dtype()) \
        if not torch.is_tensor(l_sc) else l_sc
    l_tc = torch.as_tensor(l_tc, dtype=l_sc.dtype) if not torch.is_tensor(l_tc) else l_tc
    return weights.lambda_sc * l_sc + weights.lambda_tc * l_tc
