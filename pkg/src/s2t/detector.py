"""Two-stage tactic unit detector.

Stage 1 embeds each shot's feature grid, runs a small transformer over the
shot sequence, pools it to one vector, and scores unit validity. Stage 2
(evaluated only when stage 1 fires) classifies the tactic type from the
pooled vector and predicts a progression-state distribution for every shot.
A config switch collapses the state head to a single pooled prediction for
the segment instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import DegenerateCorpus, S2TError, ShapeError
from .losses import ClassificationBatch, LossWeights, MarginSchedule, classification_loss, detection_loss
from .neural import AttentionPool, Encoder, EncoderConfig
from .train import AdamW, TrainConfig, lr_at_step

__all__ = [
    "DetectorConfig",
    "DetectionOutput",
    "DetectorWindow",
    "TacticUnitDetector",
    "detect",
    "train_detector",
    "report_detector_metrics",
    "EmptyInput",
]

NUM_TYPES = 9
NUM_STATES = 5


class EmptyInput(S2TError):
    """Metrics were requested for zero predictions."""


@dataclass
class DetectorConfig:
    in_dim: int = 16
    shot_frames: int = 16
    encoder_dim: int = 512
    encoder_layers: int = 2
    heads: int = 8
    pooling: str = "attention"      # or "mean"
    binary_threshold: float = 0.5
    per_shot_states: bool = True    # False: one pooled state per segment
    max_shots: int = 9

    def __post_init__(self):
        if self.encoder_dim % self.heads != 0:
            raise ValueError(f"encoder_dim {self.encoder_dim} not divisible by {self.heads} heads")
        if self.pooling not in ("attention", "mean"):
            raise ValueError(f"pooling must be 'attention' or 'mean', got {self.pooling!r}")


@dataclass(frozen=True)
class DetectionOutput:
    valid_prob: float
    tactic_type_dist: tuple[float, ...] | None
    state_dists: tuple[tuple[float, ...], ...] | None

    def to_json(self) -> dict:
        return {
            "valid_prob": self.valid_prob,
            "tactic_type_dist": list(self.tactic_type_dist) if self.tactic_type_dist else None,
            "state_dists": [list(d) for d in self.state_dists] if self.state_dists else None,
        }


@dataclass
class DetectorWindow:
    """One labelled training window: stacked per-shot features plus targets."""

    features: np.ndarray                     # [S, T, N, in_dim]
    label: int                               # 1 = valid unit
    type_index: int | None = None            # set when label == 1
    state_indices: tuple[int, ...] | None = None  # one per shot when label == 1


class TacticUnitDetector(nn.Module):
    def __init__(self, cfg: DetectorConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.encoder_dim
        self.shot_proj = nn.Linear(cfg.in_dim, d)
        self.shot_pos = nn.Parameter(torch.zeros(cfg.max_shots, d))
        nn.init.normal_(self.shot_pos, std=0.02)
        self.encoder = Encoder(EncoderConfig(
            layers=cfg.encoder_layers, heads=cfg.heads, dim=d))
        self.pool = AttentionPool(d)
        self.binary_head = nn.Linear(d, 1)
        self.type_head = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, NUM_TYPES))
        self.state_head = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, NUM_STATES))

    def shot_embeddings(self, features: torch.Tensor) -> torch.Tensor:
        """[B, S, T, N, in_dim] features -> [B, S, D] shot vectors."""
        if features.ndim != 5:
            raise ShapeError(f"expected [B, S, T, N, in_dim], got {tuple(features.shape)}")
        if features.shape[1] > self.cfg.max_shots:
            raise ShapeError(f"{features.shape[1]} shots exceeds max_shots {self.cfg.max_shots}")
        x = self.shot_proj(features).mean(dim=(2, 3))
        return x + self.shot_pos[: x.shape[1]].unsqueeze(0)

    def encode(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (pooled [B, D], per-shot encodings [B, S, D])."""
        encoded = self.encoder(self.shot_embeddings(features))
        if self.cfg.pooling == "attention":
            pooled = self.pool(encoded)
        else:
            pooled = encoded.mean(dim=1)
        return pooled, encoded

    def forward(self, features: torch.Tensor) -> dict[str, torch.Tensor]:
        """All heads at once (training path; inference gates via detect())."""
        pooled, encoded = self.encode(features)
        state_input = encoded if self.cfg.per_shot_states else pooled.unsqueeze(1)
        return {
            "binary_logit": self.binary_head(pooled).squeeze(-1),
            "type_logits": self.type_head(pooled),
            "state_logits": self.state_head(state_input),
            "pooled": pooled,
        }


def detect(features, model: TacticUnitDetector) -> DetectionOutput:
    """Score one window; type/state distributions exist iff the validity
    probability reaches the threshold (stage 2 is not evaluated otherwise)."""
    if isinstance(features, (list, tuple)):
        features = np.stack(features)
    tensor = torch.as_tensor(np.asarray(features), dtype=torch.float32).unsqueeze(0)
    with torch.no_grad():
        pooled, encoded = model.encode(tensor)
        prob = float(torch.sigmoid(model.binary_head(pooled).squeeze(-1))[0])
        if prob < model.cfg.binary_threshold:
            return DetectionOutput(prob, None, None)
        type_dist = torch.softmax(model.type_head(pooled), dim=-1)[0]
        state_input = encoded if model.cfg.per_shot_states else pooled.unsqueeze(1)
        state_dists = torch.softmax(model.state_head(state_input), dim=-1)[0]
    return DetectionOutput(
        prob,
        tuple(float(v) for v in type_dist),
        tuple(tuple(float(v) for v in row) for row in state_dists),
    )


# --------------------------------------------------------------------------
# training

def _length_batches(windows: list[DetectorWindow], order: np.ndarray,
                    batch_size: int) -> list[list[int]]:
    by_length: dict[int, list[int]] = {}
    for idx in order.tolist():
        by_length.setdefault(windows[idx].features.shape[0], []).append(idx)
    batches = []
    for length in sorted(by_length):
        group = by_length[length]
        batches.extend(group[i:i + batch_size] for i in range(0, len(group), batch_size))
    return batches


def _one_hot(indices: torch.Tensor, classes: int) -> torch.Tensor:
    return torch.nn.functional.one_hot(indices, classes).to(torch.float32)


def train_detector(windows: list[DetectorWindow], cfg: DetectorConfig,
                   weights: LossWeights, epochs: int,
                   train_cfg: TrainConfig | None = None,
                   schedule: MarginSchedule | None = None,
                   ) -> tuple[TacticUnitDetector, list[dict]]:
    """Optimize stage 1 on every window and stage 2 on the positives.

    The margin schedule advances with the epoch counter. Deterministic for a
    fixed seed: same init, same shuffles, same arithmetic.
    """
    labels = {w.label for w in windows}
    if labels != {0, 1}:
        raise DegenerateCorpus(f"need both positive and negative windows, got labels {sorted(labels)}")
    train_cfg = train_cfg or TrainConfig(epochs=epochs)
    schedule = schedule or MarginSchedule()

    torch.manual_seed(train_cfg.seed)
    model = TacticUnitDetector(cfg)
    optimizer = AdamW(list(model.parameters()), weight_decay=train_cfg.weight_decay)
    steps_per_epoch = max(1, (len(windows) + train_cfg.batch_size - 1) // train_cfg.batch_size)
    total_steps = epochs * steps_per_epoch

    history = []
    step = 0
    for epoch in range(epochs):
        order = np.random.default_rng([train_cfg.seed, epoch]).permutation(len(windows))
        epoch_loss = 0.0
        correct = 0
        for batch_ids in _length_batches(windows, order, train_cfg.batch_size):
            feats = torch.as_tensor(
                np.stack([windows[i].features for i in batch_ids]), dtype=torch.float32)
            labels_t = torch.tensor([windows[i].label for i in batch_ids])
            out = model(feats)
            loss = detection_loss(
                ClassificationBatch(binary_logits=out["binary_logit"],
                                    binary_labels=labels_t),
                weights, epoch, schedule)
            pos = [k for k, i in enumerate(batch_ids) if windows[i].label == 1]
            if pos:
                pos_ids = [batch_ids[k] for k in pos]
                type_true = _one_hot(
                    torch.tensor([windows[i].type_index for i in pos_ids]), NUM_TYPES)
                type_pred = torch.softmax(out["type_logits"][pos], dim=-1)
                if cfg.per_shot_states:
                    state_true = _one_hot(
                        torch.tensor([list(windows[i].state_indices) for i in pos_ids]),
                        NUM_STATES)
                else:
                    state_true = _one_hot(
                        torch.tensor([windows[i].state_indices[-1] for i in pos_ids]),
                        NUM_STATES).unsqueeze(1)
                state_pred = torch.softmax(out["state_logits"][pos], dim=-1)
                loss = loss + classification_loss(
                    ClassificationBatch(type_true=type_true, type_pred=type_pred,
                                        state_true=state_true, state_pred=state_pred),
                    weights)
            optimizer.zero_grad()
            loss.backward()
            step += 1
            optimizer.step(lr_at_step(train_cfg, step, total_steps))
            epoch_loss += float(loss.detach())
            with torch.no_grad():
                pred = (torch.sigmoid(out["binary_logit"]) >= cfg.binary_threshold).long()
                correct += int((pred == labels_t).sum())
        history.append({
            "epoch": epoch,
            "loss": epoch_loss / steps_per_epoch,
            "margin": float(schedule.m_start + (schedule.m_end - schedule.m_start)
                            * min(epoch, schedule.warmup_epochs) / schedule.warmup_epochs),
            "train_binary_accuracy": correct / len(windows),
        })
    return model, history


# --------------------------------------------------------------------------
# metrics

def report_detector_metrics(predictions: list[int], labels: list[int]) -> dict:
    """Accuracy, macro-F1, and (for binary tasks) positive-class P/R.

    Macro-F1 is the unweighted mean of per-class F1 over the classes present
    in predictions or labels; binary precision/recall use class 1.
    """
    if not predictions or len(predictions) != len(labels):
        raise EmptyInput(f"{len(predictions)} predictions vs {len(labels)} labels")
    classes = sorted(set(labels) | set(predictions))
    accuracy = sum(p == y for p, y in zip(predictions, labels)) / len(labels)

    def f1(cls: int) -> float:
        tp = sum(1 for p, y in zip(predictions, labels) if p == cls and y == cls)
        fp = sum(1 for p, y in zip(predictions, labels) if p == cls and y != cls)
        fn = sum(1 for p, y in zip(predictions, labels) if p != cls and y == cls)
        if 2 * tp + fp + fn == 0:
            return 0.0
        return 2 * tp / (2 * tp + fp + fn)

    report = {
        "accuracy": accuracy,
        "macro_f1": sum(f1(c) for c in classes) / len(classes),
    }
    if set(classes) <= {0, 1}:
        tp = sum(1 for p, y in zip(predictions, labels) if p == 1 and y == 1)
        fp = sum(1 for p, y in zip(predictions, labels) if p == 1 and y == 0)
        fn = sum(1 for p, y in zip(predictions, labels) if p == 0 and y == 1)
        report["precision"] = tp / (tp + fp) if tp + fp else 0.0
        report["recall"] = tp / (tp + fn) if tp + fn else 0.0
    return report
