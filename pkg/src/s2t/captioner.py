"""Dual-branch caption generation.

The shot branch turns one clip's feature grid into a short caption; the
tactic branch encodes each of a unit's shots independently, concatenates the
token sequences, and decodes a long caption, optionally steered by prompt
embeddings (tactic type plus per-shot states) through the pre-decoder
cross-attention layer. The branches share a vocabulary but no weights.
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .annotations import TacticState, TacticType
from .errors import (
    EmptyCorpus,
    EmptyStates,
    PromptLengthMismatch,
    ShapeError,
)
from .losses import LossWeights, caption_ce, total_loss
from .neural import Decoder, Encoder, EncoderConfig, PatchEmbedder, TacticTokens
from .train import AdamW, TrainConfig, lr_at_step

__all__ = [
    "Vocabulary",
    "Prompt",
    "build_prompt",
    "PromptEncoder",
    "CaptionerConfig",
    "ShotCaptioner",
    "TacticCaptioner",
    "caption_shot",
    "caption_tactic",
    "ShotPair",
    "TacticPair",
    "train_captioners",
]

PLAYER_TOKEN = "[PLAYER]"
_STRIP = string.punctuation.replace("-", "")


class Vocabulary:
    """Token table with dense ids; specials first, then corpus tokens.

    Tokenization: whitespace split, lowercase, edge punctuation stripped
    except hyphens; the literal "[PLAYER]" passes through untouched.
    """

    PAD, BOS, EOS, UNK, PLAYER = range(5)
    SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>", PLAYER_TOKEN)

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(self.SPECIALS) + [
            t for t in tokens if t not in self.SPECIALS]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    @staticmethod
    def tokenize(text: str) -> list[str]:
        out = []
        for raw in text.split():
            if raw == PLAYER_TOKEN:
                out.append(raw)
                continue
            token = raw.lower().strip(_STRIP)
            if token:
                out.append(token)
        return out

    @staticmethod
    def detokenize(tokens: list[str]) -> str:
        return " ".join(tokens)

    @classmethod
    def build(cls, captions: list[str], min_freq: int = 2) -> "Vocabulary":
        """Corpus vocabulary; tokens rarer than ``min_freq`` fall to <unk>."""
        counts: Counter[str] = Counter()
        for caption in captions:
            counts.update(cls.tokenize(caption))
        kept = [t for t, c in counts.items() if c >= min_freq]
        kept.sort(key=lambda t: (-counts[t], t))
        return cls(kept)

    def encode(self, text: str) -> list[int]:
        return [self.token_to_id.get(t, self.UNK) for t in self.tokenize(text)]

    def decode(self, ids: list[int]) -> list[str]:
        """Ids back to tokens, dropping pad/bos/eos markers."""
        drop = {self.PAD, self.BOS, self.EOS}
        return [self.id_to_token[i] for i in ids if i not in drop]


# --------------------------------------------------------------------------
# prompts

@dataclass(frozen=True)
class Prompt:
    tactic_type: TacticType
    states: tuple[TacticState, ...]
    mode: str  # "shot_wise" | "flat"

    def __post_init__(self):
        if self.mode not in ("shot_wise", "flat"):
            raise ValueError(f"prompt mode must be 'shot_wise' or 'flat', got {self.mode!r}")
        if not self.states:
            raise EmptyStates("prompt needs at least one state")

    @property
    def entries(self) -> list[tuple[TacticType, TacticState | tuple[TacticState, ...]]]:
        """Shot-wise: one (type, state) pair per shot, in temporal order.
        Flat: a single (type, all states) composite."""
        if self.mode == "shot_wise":
            return [(self.tactic_type, s) for s in self.states]
        return [(self.tactic_type, self.states)]

    def __len__(self) -> int:
        return len(self.entries)


def build_prompt(tactic_type: TacticType, states: list[TacticState] | tuple[TacticState, ...],
                 mode: str = "shot_wise") -> Prompt:
    return Prompt(tactic_type, tuple(states), mode)


_TYPE_INDEX = {t: i for i, t in enumerate(TacticType)}
_STATE_INDEX = {s: i for i, s in enumerate(TacticState)}


class PromptEncoder(nn.Module):
    """Embeds prompt entries.

    Shot-wise entries get type + state + shot-index position embeddings, one
    token per shot. The flat composite is type + the mean of all state
    embeddings + a learned flat-position vector, a single token that keeps
    no per-shot alignment.
    """

    def __init__(self, dim: int, max_shots: int = 9):
        super().__init__()
        self.type_emb = nn.Embedding(len(TacticType), dim)
        self.state_emb = nn.Embedding(len(TacticState), dim)
        self.shot_pos = nn.Parameter(torch.zeros(max_shots, dim))
        self.flat_pos = nn.Parameter(torch.zeros(dim))
        nn.init.normal_(self.shot_pos, std=0.02)
        nn.init.normal_(self.flat_pos, std=0.02)

    def forward(self, prompt: Prompt) -> torch.Tensor:
        device = self.flat_pos.device
        type_vec = self.type_emb(torch.tensor(_TYPE_INDEX[prompt.tactic_type], device=device))
        state_ids = torch.tensor([_STATE_INDEX[s] for s in prompt.states], device=device)
        state_vecs = self.state_emb(state_ids)
        if prompt.mode == "shot_wise":
            if len(prompt.states) > self.shot_pos.shape[0]:
                raise ShapeError(f"{len(prompt.states)} prompt entries exceed "
                                 f"max_shots {self.shot_pos.shape[0]}")
            return type_vec.unsqueeze(0) + state_vecs + self.shot_pos[: len(prompt.states)]
        return (type_vec + state_vecs.mean(dim=0) + self.flat_pos).unsqueeze(0)


# --------------------------------------------------------------------------
# models

@dataclass
class CaptionerConfig:
    in_dim: int = 16
    embed_dim: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 4
    heads: int = 8
    max_caption_len: int = 24
    decode: str = "greedy"  # or "beam"
    beam_size: int = 3
    max_frames: int = 32
    max_cells: int = 256
    max_shots: int = 9

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by {self.heads} heads")
        if self.decode not in ("greedy", "beam"):
            raise ValueError(f"decode must be 'greedy' or 'beam', got {self.decode!r}")


class _CaptionBranch(nn.Module):
    def __init__(self, cfg: CaptionerConfig, vocab_size: int):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        self.embedder = PatchEmbedder(cfg.in_dim, d, cfg.max_frames, cfg.max_cells)
        self.encoder = Encoder(EncoderConfig(
            layers=cfg.encoder_layers, heads=cfg.heads, dim=d,
            max_frames=cfg.max_frames, max_cells=cfg.max_cells))
        self.token_emb = nn.Embedding(vocab_size, d)
        self.target_pos = nn.Parameter(torch.zeros(cfg.max_caption_len + 2, d))
        nn.init.normal_(self.target_pos, std=0.02)
        self.decoder = Decoder(d, cfg.heads, cfg.decoder_layers)
        self.generator = nn.Linear(d, vocab_size)

    def decode_logits(self, memory: torch.Tensor, target_ids: torch.Tensor,
                      prompt_memory: torch.Tensor | None = None) -> torch.Tensor:
        if target_ids.ndim != 1:
            raise ShapeError("target_ids must be a 1-D id sequence")
        if target_ids.shape[0] > self.target_pos.shape[0]:
            raise ShapeError(f"target length {target_ids.shape[0]} exceeds "
                             f"position table {self.target_pos.shape[0]}")
        x = self.token_emb(target_ids) + self.target_pos[: target_ids.shape[0]]
        hidden = self.decoder(x, memory, prompt_memory)
        return self.generator(hidden)


class ShotCaptioner(_CaptionBranch):
    """16-frame clip features -> caption."""

    def encode_memory(self, features: torch.Tensor) -> torch.Tensor:
        return self.encoder(self.embedder(features).flatten())


class TacticCaptioner(_CaptionBranch):
    """Per-shot features, independently encoded then concatenated -> caption."""

    def __init__(self, cfg: CaptionerConfig, vocab_size: int):
        super().__init__(cfg, vocab_size)
        self.prompt_encoder = PromptEncoder(cfg.embed_dim, cfg.max_shots)

    def encode_memory(self, shots: list[torch.Tensor]) -> TacticTokens:
        if not 1 <= len(shots) <= self.cfg.max_shots:
            raise ShapeError(f"tactic unit must have 1..{self.cfg.max_shots} shots")
        encoded = [self.encoder(self.embedder(s).flatten()) for s in shots]
        return TacticTokens.concat(encoded)

    def embed_prompt(self, prompt: Prompt | None,
                     num_shots: int) -> torch.Tensor | None:
        if prompt is None:
            return None
        if prompt.mode == "shot_wise" and len(prompt.states) != num_shots:
            raise PromptLengthMismatch(
                f"shot_wise prompt has {len(prompt.states)} entries for {num_shots} shots")
        return self.prompt_encoder(prompt)


# --------------------------------------------------------------------------
# decoding

def _greedy(branch: _CaptionBranch, memory: torch.Tensor,
            prompt_memory: torch.Tensor | None, vocab: Vocabulary,
            max_len: int) -> list[int]:
    ids = [vocab.BOS]
    for _ in range(max_len):
        target = torch.tensor(ids, dtype=torch.long)
        logits = branch.decode_logits(memory, target, prompt_memory)
        next_id = int(torch.argmax(logits[-1]))
        if next_id == vocab.EOS:
            break
        ids.append(next_id)
    return ids[1:]


def _beam(branch: _CaptionBranch, memory: torch.Tensor,
          prompt_memory: torch.Tensor | None, vocab: Vocabulary,
          max_len: int, beam_size: int) -> list[int]:
    beams: list[tuple[list[int], float, bool]] = [([vocab.BOS], 0.0, False)]
    for _ in range(max_len):
        candidates = []
        for ids, score, done in beams:
            if done:
                candidates.append((ids, score, True))
                continue
            logits = branch.decode_logits(
                memory, torch.tensor(ids, dtype=torch.long), prompt_memory)
            log_probs = torch.log_softmax(logits[-1], dim=-1)
            top = torch.topk(log_probs, min(beam_size, log_probs.shape[0]))
            for value, idx in zip(top.values.tolist(), top.indices.tolist()):
                if idx == vocab.EOS:
                    candidates.append((ids, score + value, True))
                else:
                    candidates.append((ids + [idx], score + value, False))
        candidates.sort(key=lambda c: (-c[1], c[0]))
        beams = candidates[:beam_size]
        if all(done for _, _, done in beams):
            break
    best = max(beams, key=lambda c: c[1])
    return best[0][1:]


def caption_shot(model: ShotCaptioner, features, vocab: Vocabulary,
                 cfg: CaptionerConfig | None = None) -> list[str]:
    """Decode one shot caption; output never exceeds max_caption_len tokens
    and contains no bos/eos/pad markers."""
    cfg = cfg or model.cfg
    tensor = torch.as_tensor(np.asarray(features), dtype=torch.float32)
    with torch.no_grad():
        memory = model.encode_memory(tensor)
        if cfg.decode == "beam":
            ids = _beam(model, memory, None, vocab, cfg.max_caption_len, cfg.beam_size)
        else:
            ids = _greedy(model, memory, None, vocab, cfg.max_caption_len)
    return vocab.decode(ids)


def caption_tactic(model: TacticCaptioner, shots, prompt: Prompt | None,
                   vocab: Vocabulary, cfg: CaptionerConfig | None = None) -> list[str]:
    """Decode one tactic caption from independently encoded, concatenated
    shots; prompt tokens (if any) enter through the gated pre-decoder layer."""
    cfg = cfg or model.cfg
    tensors = [torch.as_tensor(np.asarray(s), dtype=torch.float32) for s in shots]
    with torch.no_grad():
        memory = model.encode_memory(tensors).tokens
        prompt_memory = model.embed_prompt(prompt, len(tensors))
        if cfg.decode == "beam":
            ids = _beam(model, memory, prompt_memory, vocab, cfg.max_caption_len, cfg.beam_size)
        else:
            ids = _greedy(model, memory, prompt_memory, vocab, cfg.max_caption_len)
    return vocab.decode(ids)


# --------------------------------------------------------------------------
# training

@dataclass
class ShotPair:
    features: np.ndarray  # [T, N, in_dim]
    caption: str


@dataclass
class TacticPair:
    shots: list[np.ndarray]
    tactic_type: TacticType
    states: tuple[TacticState, ...]
    caption: str


def _teacher_ids(vocab: Vocabulary, caption: str, max_len: int
                 ) -> tuple[torch.Tensor, torch.Tensor]:
    """(decoder input with bos, shifted target ending in eos)."""
    token_ids = vocab.encode(caption)[: max_len - 1]
    inp = torch.tensor([vocab.BOS] + token_ids, dtype=torch.long)
    tgt = torch.tensor(token_ids + [vocab.EOS], dtype=torch.long)
    return inp, tgt


def _prompt_for(pair: TacticPair, mode: str | None) -> Prompt | None:
    if mode is None:
        return None
    return build_prompt(pair.tactic_type, pair.states, mode)


def train_captioners(shot_pairs: list[ShotPair], tactic_pairs: list[TacticPair],
                     vocab: Vocabulary, shot_cfg: CaptionerConfig,
                     tactic_cfg: CaptionerConfig, weights: LossWeights,
                     train_cfg: TrainConfig, prompt_mode: str | None = "shot_wise",
                     ) -> tuple[ShotCaptioner, TacticCaptioner, list[dict]]:
    """Jointly train both branches under teacher forcing.

    Each step takes one shot batch and one tactic batch (cycling the shorter
    stream) and optimizes lambda_sc * L_sc + lambda_tc * L_tc. A branch whose
    lambda is zero is skipped outright, so its weights receive no gradient
    and no decay. Deterministic for a fixed seed.
    """
    if not shot_pairs and not tactic_pairs:
        raise EmptyCorpus("no caption pairs to train on")
    torch.manual_seed(train_cfg.seed)
    shot_model = ShotCaptioner(shot_cfg, len(vocab))
    tactic_model = TacticCaptioner(tactic_cfg, len(vocab))
    optimizer = AdamW(
        list(shot_model.parameters()) + list(tactic_model.parameters()),
        weight_decay=train_cfg.weight_decay)

    bsz = train_cfg.batch_size
    n_shot_batches = (len(shot_pairs) + bsz - 1) // bsz if shot_pairs else 0
    n_tactic_batches = (len(tactic_pairs) + bsz - 1) // bsz if tactic_pairs else 0
    steps_per_epoch = max(n_shot_batches, n_tactic_batches, 1)
    total_steps = train_cfg.epochs * steps_per_epoch

    use_shot = bool(shot_pairs) and weights.lambda_sc > 0
    use_tactic = bool(tactic_pairs) and weights.lambda_tc > 0

    history = []
    step = 0
    for epoch in range(train_cfg.epochs):
        rng = np.random.default_rng([train_cfg.seed, epoch])
        shot_order = rng.permutation(len(shot_pairs)) if shot_pairs else np.array([], int)
        tactic_order = rng.permutation(len(tactic_pairs)) if tactic_pairs else np.array([], int)
        sums = {"sc_nats": 0.0, "tc_nats": 0.0, "sc_tokens": 0, "tc_tokens": 0, "loss": 0.0}
        for b in range(steps_per_epoch):
            loss_sc = torch.zeros(())
            loss_tc = torch.zeros(())
            if use_shot:
                ids = shot_order[(b % n_shot_batches) * bsz:(b % n_shot_batches) * bsz + bsz]
                terms = []
                for i in ids.tolist():
                    pair = shot_pairs[i]
                    memory = shot_model.encode_memory(
                        torch.as_tensor(pair.features, dtype=torch.float32))
                    inp, tgt = _teacher_ids(vocab, pair.caption, shot_cfg.max_caption_len)
                    logits = shot_model.decode_logits(memory, inp)
                    terms.append(caption_ce(logits, tgt, vocab.PAD))
                    sums["sc_tokens"] += int(tgt.numel())
                loss_sc = torch.stack(terms).mean()
                sums["sc_nats"] += float(torch.stack(terms).detach().sum())
            if use_tactic:
                ids = tactic_order[(b % n_tactic_batches) * bsz:(b % n_tactic_batches) * bsz + bsz]
                terms = []
                for i in ids.tolist():
                    pair = tactic_pairs[i]
                    shots = [torch.as_tensor(s, dtype=torch.float32) for s in pair.shots]
                    memory = tactic_model.encode_memory(shots).tokens
                    prompt_memory = tactic_model.embed_prompt(
                        _prompt_for(pair, prompt_mode), len(shots))
                    inp, tgt = _teacher_ids(vocab, pair.caption, tactic_cfg.max_caption_len)
                    logits = tactic_model.decode_logits(memory, inp, prompt_memory)
                    terms.append(caption_ce(logits, tgt, vocab.PAD))
                    sums["tc_tokens"] += int(tgt.numel())
                loss_tc = torch.stack(terms).mean()
                sums["tc_nats"] += float(torch.stack(terms).detach().sum())
            loss = total_loss(loss_sc, loss_tc, weights)
            optimizer.zero_grad()
            loss.backward()
            step += 1
            optimizer.step(lr_at_step(train_cfg, step, total_steps))
            sums["loss"] += float(loss.detach())
        history.append({
            "epoch": epoch,
            "loss": sums["loss"] / steps_per_epoch,
            "loss_sc_per_token": sums["sc_nats"] / sums["sc_tokens"] if sums["sc_tokens"] else 0.0,
            "loss_tc_per_token": sums["tc_nats"] / sums["tc_tokens"] if sums["tc_tokens"] else 0.0,
        })
    return shot_model, tactic_model, history
