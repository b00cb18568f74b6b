"""Training plumbing: schedule, optimizer, and run manifests.

The learning-rate schedule ramps linearly from zero over the first 10% of
steps (rounded up) and decays linearly back to zero afterwards, so it is
continuous, peaks exactly once at the configured rate, and is zero at both
endpoints. A flag switches the tail to constant-after-warm-up instead.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from .errors import NonFiniteGradient

__all__ = ["TrainConfig", "lr_at_step", "AdamW", "RunManifest"]


@dataclass
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 1e-5
    weight_decay: float = 0.01
    batch_size: int = 4
    warmup_fraction: float = 0.10
    seed: int = 0
    constant_after_warmup: bool = False

    def __post_init__(self):
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning_rate, batch_size, and epochs must be positive")


def lr_at_step(config: TrainConfig, step: int, total_steps: int) -> float:
    """Linear warm-up to the configured rate, then linear decay to zero."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    step = min(max(step, 0), total_steps)
    warmup = math.ceil(config.warmup_fraction * total_steps)
    if step <= warmup:
        if warmup == 0:
            return config.learning_rate
        return config.learning_rate * step / warmup
    if config.constant_after_warmup:
        return config.learning_rate
    return config.learning_rate * (total_steps - step) / (total_steps - warmup)


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay.

    Decay multiplies the weights by (1 - lr * weight_decay) directly rather
    than flowing through the gradients; moments are bias-corrected. Params
    whose ``.grad`` is None are skipped entirely; explicit zero gradients
    still receive decay.
    """

    def __init__(self, params, weight_decay: float = 0.01,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params]
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]
        self.t = 0

    @torch.no_grad()
    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            if not torch.isfinite(g).all():
                raise NonFiniteGradient("gradient contains NaN or inf")
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            if self.weight_decay:
                p.mul_(1.0 - lr * self.weight_decay)
            p.addcdiv_(m / bias1, (v / bias2).sqrt().add_(self.eps), value=-lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class RunManifest:
    """Everything needed to rerun an experiment and audit its outputs."""

    command: str
    config: dict
    seed: int
    data_checksums: dict[str, str] = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    checkpoints: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(asdict(self), indent=2, sort_keys=True), encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "RunManifest":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return RunManifest(**doc)
