"""Tactic patterns, sliding-window enumeration, matching, and state labelling.

A tactic is a template over an alternating shot exchange. Pattern slots are
written from the executing team's point of view, starting with one of their
shots: even template positions are theirs, odd positions belong to the
opponent. An opponent position is always a wildcard ("?") because a tactic's
definition never depends on the specific reply, only on the executing team
keeping its sequence going.

Windows longer than the template (7 or 9 shots against a 5-slot template)
reuse the template's last own-side slot for the extra own-side positions, so
"three smashes" naturally extends to "four or five smashes" on long windows.

An own-side shot that fails its slot is an interruption. A window is a valid
unit when at least ``min_core_hits`` own-side shots match and at most
``max_interruptions`` fail.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .annotations import SHOT_TYPES, TacticState, TacticType
from .errors import GrammarError, InvalidUnit, ParityError

__all__ = [
    "SlotSpec",
    "TacticPattern",
    "CandidateWindow",
    "MatchResult",
    "Grammar",
    "WINDOW_LENGTHS",
    "enumerate_candidates",
    "match_window",
    "match_tactic",
    "label_states",
    "load_grammar",
    "default_grammar",
]

WINDOW_LENGTHS = (5, 7, 9)

WILDCARD = "?"

#: A slot accepts one concrete shot type, any shot ("?"), or a set of types.
SlotSpec = str | frozenset[str]


@dataclass(frozen=True)
class TacticPattern:
    tactic_type: TacticType
    slots: tuple[SlotSpec, ...]
    max_interruptions: int = 2
    min_core_hits: int = 3

    def __post_init__(self):
        if not 5 <= len(self.slots) <= 9:
            raise GrammarError(
                f"{self.tactic_type.value}: pattern needs 5..9 slots, got {len(self.slots)}")
        if self.max_interruptions < 0:
            raise GrammarError(f"{self.tactic_type.value}: max_interruptions must be >= 0")
        if self.min_core_hits < 1:
            raise GrammarError(f"{self.tactic_type.value}: min_core_hits must be >= 1")

    def own_slot(self, index: int) -> SlotSpec:
        """Slot spec for the executing team's shot at template position
        2*index; positions past the template reuse its last own-side slot."""
        pos = 2 * index
        if pos < len(self.slots):
            return self.slots[pos]
        last_own = (len(self.slots) - 1) // 2 * 2
        return self.slots[last_own]


@dataclass(frozen=True)
class CandidateWindow:
    rally_index: int
    first_shot: int
    length: int
    shot_types: tuple[str, ...] = ()

    def __post_init__(self):
        if self.length not in WINDOW_LENGTHS:
            raise ValueError(f"window length must be one of {WINDOW_LENGTHS}")
        if self.first_shot < 0 or self.rally_index < 0:
            raise ValueError("window indices must be non-negative")


@dataclass(frozen=True)
class MatchResult:
    valid: bool
    tactic_type: TacticType | None
    interrupt_positions: tuple[int, ...] = ()


@dataclass(frozen=True)
class Grammar:
    patterns: tuple[TacticPattern, ...]
    shot_types: tuple[str, ...] = SHOT_TYPES


def enumerate_candidates(rally_shot_count: int, rally_index: int = 0,
                         shot_types: Sequence[str] | None = None) -> list[CandidateWindow]:
    """All 5/7/9-shot windows over a rally, ordered by (first_shot, length).

    For a rally of L shots that is sum over w in {5,7,9} of max(0, L-w+1)
    windows. When the rally's shot types are given, each window carries its
    slice of them.
    """
    windows = []
    for first in range(max(0, rally_shot_count)):
        for length in WINDOW_LENGTHS:
            if first + length <= rally_shot_count:
                types = ()
                if shot_types is not None:
                    types = tuple(shot_types[first:first + length])
                windows.append(CandidateWindow(rally_index, first, length, types))
    return windows


def _accepts(slot: SlotSpec, shot_type: str) -> bool:
    if slot == WILDCARD:
        return True
    if isinstance(slot, frozenset):
        return shot_type in slot
    return shot_type == slot


def _own_offset(own_side_parity: str) -> int:
    if own_side_parity == "even":
        return 0
    if own_side_parity == "odd":
        return 1
    raise ParityError(f"own_side_parity must be 'even' or 'odd', got {own_side_parity!r}")


def match_window(shot_types: Sequence[str], patterns: Iterable[TacticPattern],
                 own_side_parity: str = "even") -> MatchResult:
    """Match a shot-type sequence against patterns, first valid pattern wins.

    Own-side positions are ``parity, parity+2, ...``; each is checked against
    the pattern's own-side slot for that rank. Failures are interruptions
    (window-local indices, reported in order). Opponent positions never
    count either way.
    """
    offset = _own_offset(own_side_parity)
    if len(shot_types) < 1:
        raise ParityError("window must contain at least one shot")
    for pattern in patterns:
        hits = 0
        interrupts: list[int] = []
        for rank, pos in enumerate(range(offset, len(shot_types), 2)):
            if _accepts(pattern.own_slot(rank), shot_types[pos]):
                hits += 1
            else:
                interrupts.append(pos)
        if hits >= pattern.min_core_hits and len(interrupts) <= pattern.max_interruptions:
            return MatchResult(True, pattern.tactic_type, tuple(interrupts))
    return MatchResult(False, None, ())


def match_tactic(window: CandidateWindow, patterns: Iterable[TacticPattern],
                 own_side_parity: str = "even") -> MatchResult:
    """match_window over a CandidateWindow's shot types."""
    if len(window.shot_types) != window.length:
        raise ParityError(
            f"window carries {len(window.shot_types)} shot types for length {window.length}")
    return match_window(window.shot_types, patterns, own_side_parity)


def label_states(match_result: MatchResult, window_length: int) -> list[TacticState]:
    """Progression labels for a valid unit.

    Position 0 is Start and the last position is Finish, unconditionally, so
    every unit has exactly one of each; an interruption falling on either end
    is absorbed. Interior interrupt positions are Interrupt; the first
    non-interrupt position after an interruption run is Resume; everything
    else is Continue.
    """
    if not match_result.valid:
        raise InvalidUnit("cannot label states for an invalid window")
    if window_length < 2:
        raise InvalidUnit("unit needs at least two shots")
    interior = {p for p in match_result.interrupt_positions if 0 < p < window_length - 1}
    states = [TacticState.Continue] * window_length
    interrupted = False
    for pos in range(1, window_length - 1):
        if pos in interior:
            states[pos] = TacticState.Interrupt
            interrupted = True
        elif interrupted:
            states[pos] = TacticState.Resume
            interrupted = False
    states[0] = TacticState.Start
    states[-1] = TacticState.Finish
    return states


def dedupe_windows(results: list[tuple[CandidateWindow, MatchResult]]
                   ) -> list[tuple[CandidateWindow, MatchResult]]:
    """Optional post-processing: drop valid windows overlapped by a longer
    (then earlier) valid window. Invalid results pass through untouched."""
    valid = [(w, r) for w, r in results if r.valid]
    keep: list[tuple[CandidateWindow, MatchResult]] = []
    for w, r in sorted(valid, key=lambda wr: (-wr[0].length, wr[0].first_shot)):
        span = range(w.first_shot, w.first_shot + w.length)
        overlaps = any(
            k.rally_index == w.rally_index
            and max(span.start, k.first_shot) < min(span.stop, k.first_shot + k.length)
            for k, _ in keep)
        if not overlaps:
            keep.append((w, r))
    kept = {id(w) for w, _ in keep}
    return [(w, r) for w, r in results if not r.valid or id(w) in kept]


# --------------------------------------------------------------------------
# grammar files

def _slot_from_json(raw, where: str) -> SlotSpec:
    if isinstance(raw, str):
        return raw
    if isinstance(raw, list) and raw and all(isinstance(s, str) for s in raw):
        return frozenset(raw)
    raise GrammarError(f"{where}: slot must be a shot type, '?', or a list of shot types")


def _slot_to_json(slot: SlotSpec):
    return sorted(slot) if isinstance(slot, frozenset) else slot


def parse_grammar(doc: dict) -> Grammar:
    if not isinstance(doc, dict) or "patterns" not in doc:
        raise GrammarError("grammar document must contain a 'patterns' list")
    shot_types = tuple(doc.get("shot_types", SHOT_TYPES))
    patterns = []
    for i, entry in enumerate(doc["patterns"]):
        where = f"patterns[{i}]"
        try:
            tactic_type = TacticType(entry["type"])
        except (KeyError, ValueError):
            raise GrammarError(f"{where}: missing or unknown tactic type") from None
        slots = tuple(_slot_from_json(s, where) for s in entry.get("slots", []))
        for slot in slots:
            names = [slot] if isinstance(slot, str) else sorted(slot)
            for name in names:
                if name != WILDCARD and name not in shot_types:
                    raise GrammarError(f"{where}: slot shot type '{name}' not in vocabulary")
        patterns.append(TacticPattern(
            tactic_type=tactic_type,
            slots=slots,
            max_interruptions=int(entry.get("max_interruptions", 2)),
            min_core_hits=int(entry.get("min_core_hits", 3)),
        ))
    return Grammar(tuple(patterns), shot_types)


def serialize_grammar(grammar: Grammar) -> str:
    doc = {
        "shot_types": list(grammar.shot_types),
        "patterns": [
            {"type": p.tactic_type.value,
             "slots": [_slot_to_json(s) for s in p.slots],
             "max_interruptions": p.max_interruptions,
             "min_core_hits": p.min_core_hits}
            for p in grammar.patterns
        ],
    }
    return json.dumps(doc, indent=2)


def load_grammar(path: str | Path) -> Grammar:
    """Load and validate a grammar file (one JSON document)."""
    with open(path, encoding="utf-8") as handle:
        try:
            doc = json.load(handle)
        except json.JSONDecodeError as exc:
            raise GrammarError(f"{path}: {exc}") from None
    return parse_grammar(doc)


def default_grammar() -> Grammar:
    """The grammar shipped with the package (data/default_grammar.json)."""
    text = resources.files("s2t.data").joinpath("default_grammar.json").read_text("utf-8")
    return parse_grammar(json.loads(text))
