"""Per-match annotation schema: parsing, validation, splits, and corpus stats.

One JSON file per match (UTF-8, times in decimal seconds):

    {
      "video": "match_001",
      "rallies": [
        {"start": 12.0, "end": 19.3, "score": [3, 4],
         "shots":   [{"start": 12.0, "end": 12.7, "type": "Serve",
                      "caption": "[PLAYER] serves straight"}, ...],
         "tactics": [{"first_shot": 0, "last_shot": 4, "type": "ServeAndAttack",
                      "states": ["Start", ...], "caption": "..."}]}
      ]
    }

Shots may carry an optional "features" key: a relative path to the binary
feature file for that shot. All value types are immutable, so every function
here is safe to call concurrently.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import AnnotationSyntaxError, InvariantError, SchemaError, TooFewMatches

__all__ = [
    "SHOT_TYPES",
    "TacticType",
    "TacticState",
    "ShotAnnotation",
    "TacticUnitAnnotation",
    "RallyAnnotation",
    "MatchAnnotation",
    "parse_match",
    "serialize_match",
    "validate_match",
    "split_by_match",
    "dataset_stats",
]

#: Default shot-type vocabulary (10 members; override via the grammar file).
SHOT_TYPES: tuple[str, ...] = (
    "Serve", "Smash", "Lift", "Push", "Drop",
    "Net", "Drive", "Clear", "Block", "Other",
)

#: Strict-mode bounds on shot caption word counts.
SHOT_CAPTION_WORDS = (2, 21)


class TacticType(Enum):
    """The nine recognised tactic categories."""

    ServeAndAttack = "ServeAndAttack"
    ContinuousSmashing = "ContinuousSmashing"
    NetPressureAndKill = "NetPressureAndKill"
    PushAndTrap = "PushAndTrap"
    FlickServeAttack = "FlickServeAttack"
    PushAndSmash = "PushAndSmash"
    DropAndNetDomination = "DropAndNetDomination"
    DriveAndIntercept = "DriveAndIntercept"
    TempoVariationControl = "TempoVariationControl"


class TacticState(Enum):
    """Per-shot progression label within a tactic unit."""

    Start = "Start"
    Continue = "Continue"
    Interrupt = "Interrupt"
    Resume = "Resume"
    Finish = "Finish"


@dataclass(frozen=True)
class ShotAnnotation:
    start_s: float
    end_s: float
    shot_type: str
    caption: str
    features: str | None = None  # relative path to the shot's feature file


@dataclass(frozen=True)
class TacticUnitAnnotation:
    first_shot: int
    last_shot: int  # inclusive
    tactic_type: TacticType
    states: tuple[TacticState, ...]
    caption: str

    @property
    def shot_indices(self) -> range:
        return range(self.first_shot, self.last_shot + 1)

    def __len__(self) -> int:
        return self.last_shot - self.first_shot + 1


@dataclass(frozen=True)
class RallyAnnotation:
    start_s: float
    end_s: float
    score: tuple[int, int]
    shots: tuple[ShotAnnotation, ...]
    tactic_units: tuple[TacticUnitAnnotation, ...] = ()


@dataclass(frozen=True)
class MatchAnnotation:
    video_id: str
    rallies: tuple[RallyAnnotation, ...]


# --------------------------------------------------------------------------
# parsing

def _require(obj: dict, key: str, typ, path: str):
    if key not in obj:
        raise SchemaError(f"missing field '{key}'", path)
    value = obj[key]
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"field '{key}' must be a number", path)
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"field '{key}' must be an integer", path)
        return value
    if not isinstance(value, typ):
        raise SchemaError(f"field '{key}' must be {typ.__name__}", path)
    return value


def _reject_unknown(obj: dict, allowed: set[str], path: str) -> None:
    extra = set(obj) - allowed
    if extra:
        raise SchemaError(f"unknown field '{sorted(extra)[0]}'", path)


def _parse_shot(obj, path: str, shot_types: tuple[str, ...]) -> ShotAnnotation:
    if not isinstance(obj, dict):
        raise SchemaError("shot must be an object", path)
    _reject_unknown(obj, {"start", "end", "type", "caption", "features"}, path)
    start = _require(obj, "start", float, path)
    end = _require(obj, "end", float, path)
    shot_type = _require(obj, "type", str, path)
    caption = _require(obj, "caption", str, path)
    features = obj.get("features")
    if features is not None and not isinstance(features, str):
        raise SchemaError("field 'features' must be a string path", path)
    if shot_type not in shot_types:
        raise SchemaError(f"unknown shot type '{shot_type}'", path + ".type")
    return ShotAnnotation(start, end, shot_type, caption, features)


def _parse_unit(obj, path: str) -> TacticUnitAnnotation:
    if not isinstance(obj, dict):
        raise SchemaError("tactic unit must be an object", path)
    _reject_unknown(obj, {"first_shot", "last_shot", "type", "states", "caption"}, path)
    first = _require(obj, "first_shot", int, path)
    last = _require(obj, "last_shot", int, path)
    type_name = _require(obj, "type", str, path)
    states_raw = _require(obj, "states", list, path)
    caption = _require(obj, "caption", str, path)
    try:
        tactic_type = TacticType(type_name)
    except ValueError:
        raise SchemaError(f"unknown tactic type '{type_name}'", path + ".type") from None
    states = []
    for k, name in enumerate(states_raw):
        try:
            states.append(TacticState(name))
        except ValueError:
            raise SchemaError(f"unknown tactic state '{name}'", f"{path}.states[{k}]") from None
    return TacticUnitAnnotation(first, last, tactic_type, tuple(states), caption)


def parse_match(json_text: str, strict: bool = False,
                shot_types: tuple[str, ...] = SHOT_TYPES) -> MatchAnnotation:
    """Parse and validate one match document.

    Raises AnnotationSyntaxError for malformed JSON, SchemaError for
    missing/extra/ill-typed fields, and InvariantError (naming the first
    violated rule and its path) for semantic violations. ``strict`` enables
    the caption word-count check.
    """
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise AnnotationSyntaxError(str(exc)) from None
    if not isinstance(doc, dict):
        raise SchemaError("document must be a JSON object")
    _reject_unknown(doc, {"video", "rallies"}, "")
    video_id = _require(doc, "video", str, "video")
    rallies_raw = _require(doc, "rallies", list, "rallies")
    rallies = []
    for i, rally_obj in enumerate(rallies_raw):
        path = f"rallies[{i}]"
        if not isinstance(rally_obj, dict):
            raise SchemaError("rally must be an object", path)
        _reject_unknown(rally_obj, {"start", "end", "score", "shots", "tactics"}, path)
        start = _require(rally_obj, "start", float, path)
        end = _require(rally_obj, "end", float, path)
        score_raw = _require(rally_obj, "score", list, path)
        if len(score_raw) != 2 or any(
                isinstance(v, bool) or not isinstance(v, int) for v in score_raw):
            raise SchemaError("field 'score' must be a pair of integers", path)
        shots = tuple(
            _parse_shot(s, f"{path}.shots[{j}]", shot_types)
            for j, s in enumerate(_require(rally_obj, "shots", list, path)))
        units = tuple(
            _parse_unit(u, f"{path}.tactics[{j}]")
            for j, u in enumerate(_require(rally_obj, "tactics", list, path)))
        rallies.append(RallyAnnotation(start, end, (score_raw[0], score_raw[1]), shots, units))
    match = MatchAnnotation(video_id, tuple(rallies))
    validate_match(match, strict=strict)
    return match


def serialize_match(match: MatchAnnotation) -> str:
    """Inverse of parse_match: parse_match(serialize_match(m)) == m."""
    doc = {
        "video": match.video_id,
        "rallies": [
            {
                "start": r.start_s,
                "end": r.end_s,
                "score": list(r.score),
                "shots": [
                    {"start": s.start_s, "end": s.end_s, "type": s.shot_type,
                     "caption": s.caption,
                     **({"features": s.features} if s.features is not None else {})}
                    for s in r.shots
                ],
                "tactics": [
                    {"first_shot": u.first_shot, "last_shot": u.last_shot,
                     "type": u.tactic_type.value,
                     "states": [st.value for st in u.states],
                     "caption": u.caption}
                    for u in r.tactic_units
                ],
            }
            for r in match.rallies
        ],
    }
    return json.dumps(doc, indent=2)


# --------------------------------------------------------------------------
# invariants

def _check(cond: bool, rule: str, path: str) -> None:
    if not cond:
        raise InvariantError(rule, path)


def validate_match(match: MatchAnnotation, strict: bool = False) -> None:
    """Check every schema invariant; raise InvariantError on the first failure.

    Overlapping tactic units within a rally are accepted: nothing in the
    annotation scheme forbids a shot from serving two units.
    """
    _check(bool(match.video_id), "video_id must be non-empty", "video")
    prev_end = None
    for i, rally in enumerate(match.rallies):
        path = f"rallies[{i}]"
        _check(rally.start_s < rally.end_s, "rally start must precede end", path)
        if prev_end is not None:
            _check(rally.start_s >= prev_end,
                   "rallies must be sorted and non-overlapping", path)
        prev_end = rally.end_s
        _check(rally.score[0] >= 0 and rally.score[1] >= 0,
               "score values must be non-negative", path + ".score")
        prev_shot_end = None
        for j, shot in enumerate(rally.shots):
            spath = f"{path}.shots[{j}]"
            _check(shot.start_s < shot.end_s, "shot start must precede end", spath)
            _check(shot.start_s >= rally.start_s and shot.end_s <= rally.end_s,
                   "shot span must lie within the rally span", spath)
            if prev_shot_end is not None:
                _check(shot.start_s >= prev_shot_end,
                       "shots must be sorted and non-overlapping", spath)
            prev_shot_end = shot.end_s
            _check(bool(shot.caption.strip()), "caption must be non-empty", spath + ".caption")
            if strict:
                words = len(shot.caption.split())
                lo, hi = SHOT_CAPTION_WORDS
                _check(lo <= words <= hi,
                       f"caption word count must be in [{lo}, {hi}]", spath + ".caption")
        for j, unit in enumerate(rally.tactic_units):
            upath = f"{path}.tactics[{j}]"
            _check(0 <= unit.first_shot <= unit.last_shot < len(rally.shots),
                   "shot index range out of bounds", upath)
            n = len(unit)
            _check(5 <= n <= 9, "unit length must be between 5 and 9 shots", upath)
            _check(len(unit.states) == n,
                   "states list must have one entry per shot", upath + ".states")
            _check(unit.states[0] == TacticState.Start,
                   "first state must be Start", upath + ".states")
            _check(unit.states[-1] == TacticState.Finish,
                   "last state must be Finish", upath + ".states")
            counts = Counter(unit.states)
            _check(counts[TacticState.Start] == 1,
                   "unit must contain exactly one Start", upath + ".states")
            _check(counts[TacticState.Finish] == 1,
                   "unit must contain exactly one Finish", upath + ".states")
            seen_interrupt = False
            for k, state in enumerate(unit.states):
                if state == TacticState.Interrupt:
                    seen_interrupt = True
                elif state == TacticState.Resume:
                    _check(seen_interrupt,
                           "Resume requires a preceding Interrupt",
                           f"{upath}.states[{k}]")


# --------------------------------------------------------------------------
# splits

def split_counts(n: int, ratios: tuple[float, float, float]) -> list[int]:
    """(train, val, test) sizes for n items.

    Floor counts per split, remainders handed to train, then test, then val;
    if that leaves a split empty, one item moves over from the currently
    largest split, so all three are non-empty whenever n >= 3.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    counts = [int(n * r) for r in ratios]
    remainder = n - sum(counts)
    order = (0, 2, 1)  # train first, then test, then val
    for k in range(remainder):
        counts[order[k % 3]] += 1
    for idx in (1, 2):
        if counts[idx] == 0:
            donor = counts.index(max(counts))
            counts[donor] -= 1
            counts[idx] += 1
    return counts


def split_by_match(matches: list[MatchAnnotation],
                   ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
                   seed: int = 0,
                   ) -> tuple[list[MatchAnnotation], list[MatchAnnotation], list[MatchAnnotation]]:
    """Partition whole matches into (train, val, test).

    Whole-match assignment (no video id straddles splits) with the
    split_counts rounding rule; deterministic for a fixed seed.
    """
    if len(matches) < 3:
        raise TooFewMatches(f"need at least 3 matches, got {len(matches)}")
    counts = split_counts(len(matches), ratios)
    shuffled = list(matches)
    random.Random(seed).shuffle(shuffled)
    train = shuffled[:counts[0]]
    val = shuffled[counts[0]:counts[0] + counts[1]]
    test = shuffled[counts[0] + counts[1]:]
    return train, val, test


# --------------------------------------------------------------------------
# corpus statistics

@dataclass(frozen=True)
class CaptionStats:
    count: int
    mean_length: float | None
    min_length: int | None
    max_length: int | None
    length_histogram: dict[int, int] = field(default_factory=dict)
    word_frequencies: dict[str, int] = field(default_factory=dict)


def _caption_stats(captions: list[str]) -> CaptionStats:
    if not captions:
        return CaptionStats(0, None, None, None, {}, {})
    lengths = []
    words: Counter[str] = Counter()
    for caption in captions:
        tokens = caption.lower().split()
        lengths.append(len(tokens))
        words.update(tokens)
    hist = dict(sorted(Counter(lengths).items()))
    freq = dict(words.most_common())
    return CaptionStats(
        count=len(captions),
        mean_length=sum(lengths) / len(lengths),
        min_length=min(lengths),
        max_length=max(lengths),
        length_histogram=hist,
        word_frequencies=freq,
    )


def dataset_stats(matches: list[MatchAnnotation]) -> dict[str, CaptionStats]:
    """Length histograms and word frequencies, shot and tactic captions apart.

    Tokens are lowercase whitespace splits, so "[PLAYER]" stays one token.
    An empty corpus yields empty stats rather than an error.
    """
    shot_captions = [s.caption for m in matches for r in m.rallies for s in r.shots]
    tactic_captions = [u.caption for m in matches for r in m.rallies for u in r.tactic_units]
    return {"shot": _caption_stats(shot_captions), "tactic": _caption_stats(tactic_captions)}


def state_counts(matches: list[MatchAnnotation]) -> dict[str, int]:
    """Corpus-wide tactic-state occurrence counts, plus the unit count."""
    counter: Counter[TacticState] = Counter()
    units = 0
    for m in matches:
        for r in m.rallies:
            for u in r.tactic_units:
                units += 1
                counter.update(u.states)
    out = {state.value: counter.get(state, 0) for state in TacticState}
    out["units"] = units
    return out


def with_features(match: MatchAnnotation,
                  paths: dict[tuple[int, int], str]) -> MatchAnnotation:
    """Return a copy with shots[(rally, shot)] pointing at feature files."""
    rallies = []
    for i, rally in enumerate(match.rallies):
        shots = tuple(
            replace(shot, features=paths.get((i, j), shot.features))
            for j, shot in enumerate(rally.shots))
        rallies.append(replace(rally, shots=shots))
    return replace(match, rallies=tuple(rallies))
