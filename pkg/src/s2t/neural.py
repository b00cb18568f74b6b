"""Shared numeric blocks: token geometry, transformer encoder/decoder with
learnable spatial+temporal positions, attention pooling, the pre-decoder
prompt cross-attention layer, and a finite-difference gradient checker.

Everything runs in the default dtype (float32 for training); gradient checks
convert modules and inputs to float64 first. Forward passes over frozen
weights are safe to run concurrently; updates need exclusive ownership.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import EmptySequence, NonFiniteGradient, ShapeError

__all__ = [
    "TokenGrid",
    "TacticTokens",
    "EncoderConfig",
    "PatchEmbedder",
    "embed_frames",
    "MultiHeadAttention",
    "EncoderBlock",
    "Encoder",
    "AttentionPool",
    "DecoderBlock",
    "Decoder",
    "grad_check",
]


@dataclass
class TokenGrid:
    """A [frames, cells, dim] token array."""

    data: torch.Tensor

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ShapeError(f"TokenGrid needs [T, N, D], got {tuple(self.data.shape)}")
        if not torch.isfinite(self.data).all():
            raise ShapeError("TokenGrid values must be finite")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def cells(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def flatten(self) -> torch.Tensor:
        """Row-major [T*N, D] shot token sequence."""
        return self.data.reshape(self.frames * self.cells, self.dim)


@dataclass
class TacticTokens:
    """Per-shot token sequences concatenated along the sequence axis."""

    tokens: torch.Tensor               # [sum of per-shot lengths, D]
    shot_boundaries: tuple[int, ...]   # start offset of each shot

    @staticmethod
    def concat(shot_tokens: list[torch.Tensor]) -> "TacticTokens":
        offsets = []
        total = 0
        for t in shot_tokens:
            offsets.append(total)
            total += t.shape[0]
        return TacticTokens(torch.cat(shot_tokens, dim=0), tuple(offsets))


@dataclass
class EncoderConfig:
    layers: int = 2
    heads: int = 8
    dim: int = 512
    max_frames: int = 64
    max_cells: int = 256

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")


class PatchEmbedder(nn.Module):
    """Linear patch embedding plus learnable temporal and spatial positions.

    Accepts either a precomputed [T, N, in_dim] grid (the synthetic feature
    path) or raw [T, H, W, C] frames cut into ``patch`` x ``patch`` squares,
    in which case in_dim must equal patch*patch*C.
    """

    def __init__(self, in_dim: int, dim: int, max_frames: int = 64,
                 max_cells: int = 256, patch: int | None = None):
        super().__init__()
        self.in_dim = in_dim
        self.patch = patch
        self.proj = nn.Linear(in_dim, dim)
        self.temporal_pos = nn.Parameter(torch.zeros(max_frames, dim))
        self.spatial_pos = nn.Parameter(torch.zeros(max_cells, dim))
        nn.init.normal_(self.temporal_pos, std=0.02)
        nn.init.normal_(self.spatial_pos, std=0.02)

    def _patchify(self, frames: torch.Tensor) -> torch.Tensor:
        if self.patch is None:
            raise ShapeError("raw frames given but no patch size configured")
        t, h, w, c = frames.shape
        p = self.patch
        if h % p or w % p:
            raise ShapeError(f"frame size {h}x{w} not divisible by patch {p}")
        grid = frames.reshape(t, h // p, p, w // p, p, c)
        grid = grid.permute(0, 1, 3, 2, 4, 5)
        return grid.reshape(t, (h // p) * (w // p), p * p * c)

    def forward(self, x: torch.Tensor) -> TokenGrid:
        if x.ndim == 4:
            x = self._patchify(x)
        if x.ndim != 3:
            raise ShapeError(f"expected [T, N, in_dim] or [T, H, W, C], got {tuple(x.shape)}")
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"feature dim {x.shape[-1]} != embedder in_dim {self.in_dim}")
        t, n, _ = x.shape
        if t > self.temporal_pos.shape[0] or n > self.spatial_pos.shape[0]:
            raise ShapeError(f"grid {t}x{n} exceeds positional tables "
                             f"{self.temporal_pos.shape[0]}x{self.spatial_pos.shape[0]}")
        tokens = self.proj(x)
        tokens = tokens + self.temporal_pos[:t].unsqueeze(1) + self.spatial_pos[:n].unsqueeze(0)
        return TokenGrid(tokens)


def embed_frames(embedder: PatchEmbedder, frames: torch.Tensor) -> TokenGrid:
    """Functional alias for PatchEmbedder.forward."""
    return embedder(frames)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, query: torch.Tensor, key_value: torch.Tensor | None = None,
                causal: bool = False) -> torch.Tensor:
        squeeze = query.ndim == 2
        q_in = query.unsqueeze(0) if squeeze else query
        kv_in = q_in if key_value is None else (
            key_value.unsqueeze(0) if key_value.ndim == 2 else key_value)
        if q_in.shape[-1] != self.dim or kv_in.shape[-1] != self.dim:
            raise ShapeError(f"attention dim mismatch: {q_in.shape[-1]} vs {self.dim}")
        b, lq, _ = q_in.shape
        lk = kv_in.shape[1]
        head_dim = self.dim // self.heads

        def split(x, length):
            return x.reshape(b, length, self.heads, head_dim).transpose(1, 2)

        q = split(self.q_proj(q_in), lq)
        k = split(self.k_proj(kv_in), lk)
        v = split(self.v_proj(kv_in), lk)
        scores = q @ k.transpose(-2, -1) / math.sqrt(head_dim)
        if causal:
            if lq != lk:
                raise ShapeError("causal attention needs query length == key length")
            mask = torch.triu(torch.ones(lq, lk, dtype=torch.bool, device=scores.device), 1)
            scores = scores.masked_fill(mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, lq, self.dim)
        out = self.out_proj(out)
        return out.squeeze(0) if squeeze else out


class _FeedForward(nn.Module):
    def __init__(self, dim: int, hidden_mult: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden_mult * dim)
        self.fc2 = nn.Linear(hidden_mult * dim, dim)

    def forward(self, x):
        return self.fc2(torch.nn.functional.gelu(self.fc1(x)))


class EncoderBlock(nn.Module):
    """Pre-norm self-attention block."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.ffn = _FeedForward(dim)

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.ffn(self.ln2(x))


class Encoder(nn.Module):
    """Stack of encoder blocks; output shape always equals input shape."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(EncoderBlock(cfg.dim, cfg.heads) for _ in range(cfg.layers))
        self.ln_f = nn.LayerNorm(cfg.dim)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.shape[-1] != self.cfg.dim:
            raise ShapeError(f"token dim {tokens.shape[-1]} != encoder dim {self.cfg.dim}")
        x = tokens
        for block in self.blocks:
            x = block(x)
        return self.ln_f(x)


class AttentionPool(nn.Module):
    """Learnable-query softmax pooling: a convex combination of input rows.

    The query starts at zero, so an untrained pool is exactly the mean.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.query = nn.Parameter(torch.zeros(dim))

    def forward(self, sequence: torch.Tensor) -> torch.Tensor:
        if sequence.shape[-2] == 0:
            raise EmptySequence("cannot pool an empty sequence")
        scores = sequence @ self.query / math.sqrt(sequence.shape[-1])
        weights = torch.softmax(scores, dim=-1)
        return (weights.unsqueeze(-1) * sequence).sum(dim=-2)


class DecoderBlock(nn.Module):
    """Pre-norm block: causal self-attention, cross-attention, feed-forward."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads)
        self.ln3 = nn.LayerNorm(dim)
        self.ffn = _FeedForward(dim)

    def forward(self, x, memory):
        x = x + self.self_attn(self.ln1(x), causal=True)
        x = x + self.cross_attn(self.ln2(x), memory)
        return x + self.ffn(self.ln3(x))


class Decoder(nn.Module):
    """Decoder stack with an optional prompt layer in front.

    When prompt memory is given, target embeddings first pass through one
    cross-attention layer over the prompt entries, added back through a
    scalar gate initialised to zero; with the gate at zero the output is
    identical to the prompt-free path. Without prompt memory the layer is
    skipped entirely.
    """

    def __init__(self, dim: int, heads: int, layers: int):
        super().__init__()
        self.prompt_attn = MultiHeadAttention(dim, heads)
        self.prompt_gate = nn.Parameter(torch.zeros(()))
        self.blocks = nn.ModuleList(DecoderBlock(dim, heads) for _ in range(layers))
        self.ln_f = nn.LayerNorm(dim)

    def forward(self, target: torch.Tensor, memory: torch.Tensor,
                prompt_memory: torch.Tensor | None = None) -> torch.Tensor:
        x = target
        if prompt_memory is not None:
            x = x + self.prompt_gate * self.prompt_attn(x, prompt_memory)
        for block in self.blocks:
            x = block(x, memory)
        return self.ln_f(x)


# --------------------------------------------------------------------------
# gradient checking

def grad_check(operation, inputs: list[torch.Tensor], epsilon: float = 1e-5,
               max_coords: int = 64, seed: int = 0) -> float:
    """Max relative error between analytic and central finite-difference
    gradients of a scalarised ``operation`` over the given inputs.

    The operation's output is reduced with a fixed random projection so both
    gradient routes differentiate the same scalar. Inputs are promoted to
    float64; at most ``max_coords`` coordinates per tensor are probed.
    Relative error is |g_a - g_fd| / max(1, |g_fd|).
    """
    if not 1e-6 <= epsilon <= 1e-4:
        raise ValueError("epsilon must be in [1e-6, 1e-4]")
    leaves = [x.detach().double().clone().requires_grad_(True) for x in inputs]
    gen = torch.Generator().manual_seed(seed)
    proj: list[torch.Tensor] = []

    def scalar(args):
        out = operation(*args)
        if not proj:
            proj.append(torch.randn(out.shape, generator=gen, dtype=torch.float64))
        return (out.double() * proj[0]).sum()

    value = scalar(leaves)
    if not torch.isfinite(value):
        raise NonFiniteGradient("operation output is not finite")
    analytic = torch.autograd.grad(value, leaves, allow_unused=True)

    coord_gen = torch.Generator().manual_seed(seed + 1)
    worst = 0.0
    for tensor, grad in zip(leaves, analytic):
        if grad is None:
            continue
        if not torch.isfinite(grad).all():
            raise NonFiniteGradient("analytic gradient is not finite")
        numel = tensor.numel()
        count = min(max_coords, numel)
        idx = torch.randperm(numel, generator=coord_gen)[:count]
        flat = tensor.detach().clone().reshape(-1)
        for i in idx.tolist():
            for sign in (1.0, -1.0):
                flat[i] += sign * epsilon
                probe = flat.reshape(tensor.shape)
                with torch.no_grad():
                    if sign > 0:
                        f_plus = scalar([probe if t is tensor else t.detach()
                                         for t in leaves])
                    else:
                        f_minus = scalar([probe if t is tensor else t.detach()
                                          for t in leaves])
                flat[i] -= sign * epsilon
            g_fd = float((f_plus - f_minus) / (2 * epsilon))
            g_an = float(grad.reshape(-1)[i])
            err = abs(g_an - g_fd) / max(1.0, abs(g_fd))
            worst = max(worst, err)
    return worst
