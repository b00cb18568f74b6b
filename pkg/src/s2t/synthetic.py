"""Closed-loop synthetic corpus: symbolic rallies, features, and captions.

Every generated rally is one window-sized shot exchange (5, 7, or 9 shots,
executing team on even positions). A configurable fraction realises a tactic
pattern from the grammar; the unit's type and states are then labelled by the
same rule oracle the tests use, so generated labels are correct by
construction and a correct detector can recover them.

Features stand in for video: each shot type owns a fixed basis vector that is
broadcast over ``frames_per_shot x grid cells`` and perturbed with Gaussian
noise. With zero noise, two shots of the same type are byte-identical, and
the classes stay linearly separable at small noise levels.

Captions come from fixed templates over a small vocabulary: shot captions are
"[PLAYER] <verb> <direction>", tactic captions chain one clause per shot
driven by that shot's tactic state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .annotations import (
    SHOT_TYPES,
    MatchAnnotation,
    RallyAnnotation,
    ShotAnnotation,
    TacticState,
    TacticType,
    TacticUnitAnnotation,
    serialize_match,
)
from .errors import GenerationError, UnknownShotType
from .grammar import Grammar, TacticPattern, label_states, match_window
from .storage import write_feature_file

__all__ = [
    "SyntheticConfig",
    "SyntheticSample",
    "basis_vector",
    "render_features",
    "generate_corpus",
    "corpus_to_matches",
    "write_corpus",
    "shot_caption",
    "tactic_caption",
    "CAPTION_VOCAB",
    "TACTIC_CAPTION_WORD_BOUNDS",
]

SHOT_SECONDS = 0.7
SHOT_STRIDE = 0.8
RALLY_STRIDE = 10.0


@dataclass(frozen=True)
class SyntheticConfig:
    seed: int = 0
    num_rallies: int = 100
    valid_fraction: float = 0.5
    feature_noise_std: float = 0.0
    frames_per_shot: int = 16
    frame_grid: tuple[int, int] = (2, 2)
    embed_dim: int = 16

    def __post_init__(self):
        if not 0.0 <= self.valid_fraction <= 1.0:
            raise ValueError("valid_fraction must be in [0, 1]")
        if self.frames_per_shot < 1 or self.embed_dim < 1:
            raise ValueError("frames_per_shot and embed_dim must be >= 1")
        if self.feature_noise_std < 0:
            raise ValueError("feature_noise_std must be non-negative")


@dataclass(frozen=True)
class SyntheticSample:
    annotation: RallyAnnotation
    features: tuple[np.ndarray, ...]  # one [T, N, D] array per shot


# --------------------------------------------------------------------------
# features

def basis_vector(shot_type: str, embed_dim: int,
                 shot_types: tuple[str, ...] = SHOT_TYPES) -> np.ndarray:
    """Deterministic per-type basis vector.

    One-hot when the embedding is wide enough for the vocabulary (all bases
    mutually orthogonal); otherwise axes are reused with a distinct scale so
    the vectors stay pairwise distinct.
    """
    if shot_type not in shot_types:
        raise UnknownShotType(shot_type)
    index = shot_types.index(shot_type)
    vec = np.zeros(embed_dim, dtype=np.float32)
    vec[index % embed_dim] = 1.0 + index // embed_dim
    return vec


def render_features(shot_type: str, config: SyntheticConfig,
                    rng: np.random.Generator | None = None,
                    shot_types: tuple[str, ...] = SHOT_TYPES) -> np.ndarray:
    """[frames_per_shot, grid cells, embed_dim] array: basis plus noise."""
    cells = config.frame_grid[0] * config.frame_grid[1]
    base = basis_vector(shot_type, config.embed_dim, shot_types)
    shape = (config.frames_per_shot, cells, config.embed_dim)
    features = np.broadcast_to(base, shape).astype(np.float32).copy()
    if config.feature_noise_std > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        noise = rng.normal(0.0, config.feature_noise_std, size=shape)
        features += noise.astype(np.float32)
    return features


# --------------------------------------------------------------------------
# caption templates

SHOT_VERBS = {
    "Serve": "serves", "Smash": "smashes", "Lift": "lifts", "Push": "pushes",
    "Drop": "drops", "Net": "nets", "Drive": "drives", "Clear": "clears",
    "Block": "blocks", "Other": "plays",
}
SHOT_NOUNS = {
    "Serve": "serve", "Smash": "smash", "Lift": "lift", "Push": "push",
    "Drop": "drop", "Net": "net", "Drive": "drive", "Clear": "clear",
    "Block": "block", "Other": "shot",
}
DIRECTIONS = ("straight", "crosscourt", "midcourt", "backcourt")

TYPE_PHRASES = {
    TacticType.ServeAndAttack: "serve attack",
    TacticType.ContinuousSmashing: "continuous smashing",
    TacticType.NetPressureAndKill: "net pressure",
    TacticType.PushAndTrap: "push trap",
    TacticType.FlickServeAttack: "flick serve",
    TacticType.PushAndSmash: "push smash",
    TacticType.DropAndNetDomination: "drop domination",
    TacticType.DriveAndIntercept: "drive intercept",
    TacticType.TempoVariationControl: "tempo control",
}


def shot_caption(shot_type: str, position: int,
                 shot_types: tuple[str, ...] = SHOT_TYPES) -> str:
    if shot_type not in SHOT_VERBS:
        raise UnknownShotType(shot_type)
    direction = DIRECTIONS[(position + shot_types.index(shot_type)) % len(DIRECTIONS)]
    return f"[PLAYER] {SHOT_VERBS[shot_type]} {direction}"


def tactic_caption(tactic_type: TacticType, states: list[TacticState],
                   window_types: list[str]) -> str:
    """One clause per shot, chosen by that shot's progression state."""
    phrase = TYPE_PHRASES[tactic_type]
    nouns = [SHOT_NOUNS[t] for t in window_types]
    clauses = [f"[PLAYER] opens the {phrase} sequence with a {nouns[0]}"]
    for pos in range(1, len(states) - 1):
        owned = pos % 2 == 0
        state = states[pos]
        noun = nouns[pos]
        if state == TacticState.Interrupt:
            clauses.append(f"the pattern is interrupted by a {noun}")
        elif state == TacticState.Resume:
            if owned:
                clauses.append(f"[PLAYER] resumes the sequence with a {noun}")
            else:
                clauses.append(f"play resumes as the opponent sends a {noun}")
        elif owned:
            clauses.append(f"[PLAYER] keeps the pressure going with a {noun}")
        else:
            clauses.append(f"the opponent responds with a {noun}")
    clauses.append(
        f"the sequence finishes as [PLAYER] closes with a {nouns[-1]} and the formation resets")
    return " ".join(clauses)


def _template_vocab() -> tuple[str, ...]:
    words = set()
    for caption in [
        "[PLAYER] opens the sequence with a",
        "the pattern is interrupted by a",
        "[PLAYER] resumes the sequence with a",
        "play resumes as the opponent sends a",
        "[PLAYER] keeps the pressure going with a",
        "the opponent responds with a",
        "the sequence finishes as [PLAYER] closes with a and the formation resets",
    ]:
        words.update(caption.split())
    words.update(SHOT_VERBS.values())
    words.update(SHOT_NOUNS.values())
    words.update(DIRECTIONS)
    for phrase in TYPE_PHRASES.values():
        words.update(phrase.split())
    return tuple(sorted(words))


#: Every word the generator can emit.
CAPTION_VOCAB: tuple[str, ...] = _template_vocab()

#: (min, max) tactic caption word counts implied by the clause templates:
#: opening 9, middle clauses 6..8 each, closing 14, lengths 5..9.
TACTIC_CAPTION_WORD_BOUNDS = (9 + 3 * 6 + 14, 9 + 7 * 8 + 14)


# --------------------------------------------------------------------------
# rally construction

def _concrete(slot, rng: np.random.Generator, shot_types: tuple[str, ...]) -> str:
    if slot == "?":
        return str(rng.choice(shot_types))
    if isinstance(slot, frozenset):
        return str(rng.choice(sorted(slot)))
    return slot


def _rejected_types(slot, shot_types: tuple[str, ...]) -> list[str]:
    if slot == "?":
        return []
    accepted = slot if isinstance(slot, frozenset) else {slot}
    return [t for t in shot_types if t not in accepted]


def _valid_window_types(pattern: TacticPattern, length: int,
                        rng: np.random.Generator,
                        shot_types: tuple[str, ...]) -> list[str]:
    owned = (length + 1) // 2
    types: list[str] = [""] * length
    for rank in range(owned):
        types[2 * rank] = _concrete(pattern.own_slot(rank), rng, shot_types)
    for pos in range(1, length, 2):
        types[pos] = str(rng.choice(shot_types))
    budget = min(pattern.max_interruptions, owned - pattern.min_core_hits)
    if budget > 0:
        n_fail = int(rng.integers(0, budget + 1))
        for rank in rng.choice(owned, size=n_fail, replace=False):
            rejected = _rejected_types(pattern.own_slot(int(rank)), shot_types)
            if rejected:
                types[2 * int(rank)] = str(rng.choice(rejected))
    return types


def _invalid_window_types(patterns: tuple[TacticPattern, ...], length: int,
                          rng: np.random.Generator,
                          shot_types: tuple[str, ...]) -> list[str]:
    for _ in range(32):
        types = [str(t) for t in rng.choice(shot_types, size=length)]
        if not match_window(types, patterns, "even").valid:
            return types
    # random draws keep matching: force own-side shots no pattern accepts
    non_core = [
        t for t in shot_types
        if not any(_accepts_any(p, t) for p in patterns)
    ]
    if not non_core:
        raise GenerationError("grammar accepts every shot type; cannot build negatives")
    types = [
        str(rng.choice(non_core)) if pos % 2 == 0 else str(rng.choice(shot_types))
        for pos in range(length)
    ]
    if match_window(types, patterns, "even").valid:
        raise GenerationError("could not construct an invalid window")
    return types


def _accepts_any(pattern: TacticPattern, shot_type: str) -> bool:
    for rank in range(5):
        slot = pattern.own_slot(rank)
        if slot == "?" or (shot_type in slot if isinstance(slot, frozenset) else slot == shot_type):
            return True
    return False


def _build_rally(index: int, is_valid: bool, config: SyntheticConfig,
                 grammar: Grammar) -> SyntheticSample:
    rng = np.random.default_rng([config.seed, index])
    shot_types = grammar.shot_types
    length = int(rng.choice((5, 7, 9)))
    units: tuple[TacticUnitAnnotation, ...] = ()
    if is_valid:
        pattern = grammar.patterns[int(rng.integers(len(grammar.patterns)))]
        types = _valid_window_types(pattern, length, rng, shot_types)
        result = match_window(types, grammar.patterns, "even")
        if not result.valid:
            raise GenerationError(f"rally {index}: constructed window failed to match")
        states = label_states(result, length)
        units = (TacticUnitAnnotation(
            first_shot=0, last_shot=length - 1,
            tactic_type=result.tactic_type,
            states=tuple(states),
            caption=tactic_caption(result.tactic_type, states, types)),)
    else:
        types = _invalid_window_types(grammar.patterns, length, rng, shot_types)

    t0 = index * RALLY_STRIDE
    shots = tuple(
        ShotAnnotation(
            start_s=t0 + j * SHOT_STRIDE,
            end_s=t0 + j * SHOT_STRIDE + SHOT_SECONDS,
            shot_type=types[j],
            caption=shot_caption(types[j], j, shot_types))
        for j in range(length))
    rally = RallyAnnotation(
        start_s=t0,
        end_s=t0 + (length - 1) * SHOT_STRIDE + SHOT_SECONDS,
        score=(int(rng.integers(0, 22)), int(rng.integers(0, 22))),
        shots=shots,
        tactic_units=units)
    features = tuple(
        render_features(types[j], config, rng, shot_types) for j in range(length))
    return SyntheticSample(rally, features)


def generate_corpus(config: SyntheticConfig, grammar: Grammar) -> list[SyntheticSample]:
    """Deterministic corpus; exactly round(valid_fraction * num_rallies)
    rallies carry a tactic unit, at seed-chosen positions. Each rally draws
    its own stream from (seed, rally_index), so generation order is free."""
    if not grammar.patterns:
        raise GenerationError("grammar has no patterns")
    n = config.num_rallies
    k = int(round(config.valid_fraction * n))
    flag_rng = np.random.default_rng([config.seed, n])
    valid_indices = set(map(int, flag_rng.permutation(n)[:k]))
    return [_build_rally(i, i in valid_indices, config, grammar) for i in range(n)]


# --------------------------------------------------------------------------
# packing into match files

def corpus_to_matches(samples: list[SyntheticSample], num_matches: int = 10,
                      prefix: str = "synthetic") -> list[MatchAnnotation]:
    """Round-robin rallies into per-match annotations (times stay sorted
    because rally start times increase with the rally index)."""
    num_matches = max(1, min(num_matches, len(samples)))
    buckets: list[list[RallyAnnotation]] = [[] for _ in range(num_matches)]
    for i, sample in enumerate(samples):
        buckets[i % num_matches].append(sample.annotation)
    return [
        MatchAnnotation(f"{prefix}_{m:02d}", tuple(rallies))
        for m, rallies in enumerate(buckets)
    ]


def write_corpus(samples: list[SyntheticSample], out_dir: str | Path,
                 num_matches: int = 10, prefix: str = "synthetic") -> list[Path]:
    """Write one JSON file per match plus one feature file per shot.

    Feature files land in ``out_dir/features`` and are referenced from the
    shot records by relative path. Returns the match file paths.
    """
    out_dir = Path(out_dir)
    feature_dir = out_dir / "features"
    feature_dir.mkdir(parents=True, exist_ok=True)

    num_matches = max(1, min(num_matches, len(samples)))
    rally_of_match: list[list[tuple[int, SyntheticSample]]] = [[] for _ in range(num_matches)]
    for i, sample in enumerate(samples):
        rally_of_match[i % num_matches].append((i, sample))

    paths = []
    for m, entries in enumerate(rally_of_match):
        rallies = []
        for rally_global, sample in entries:
            shots = []
            for j, shot in enumerate(sample.annotation.shots):
                rel = f"features/r{rally_global:05d}_s{j}.bin"
                write_feature_file(out_dir / rel, sample.features[j])
                shots.append(replace(shot, features=rel))
            rallies.append(replace(sample.annotation, shots=tuple(shots)))
        match = MatchAnnotation(f"{prefix}_{m:02d}", tuple(rallies))
        path = out_dir / f"{prefix}_{m:02d}.json"
        path.write_text(serialize_match(match), encoding="utf-8")
        paths.append(path)
    return paths
