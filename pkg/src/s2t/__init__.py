"""Badminton tactic-unit detection and dual-scale caption generation."""

__version__ = "0.1.0"

from .annotations import (  # noqa: F401
    MatchAnnotation,
    RallyAnnotation,
    ShotAnnotation,
    TacticState,
    TacticType,
    TacticUnitAnnotation,
    dataset_stats,
    parse_match,
    serialize_match,
    split_by_match,
)
from .grammar import (  # noqa: F401
    CandidateWindow,
    Grammar,
    MatchResult,
    TacticPattern,
    default_grammar,
    enumerate_candidates,
    label_states,
    load_grammar,
    match_tactic,
    match_window,
)
from .losses import LossWeights, MarginSchedule  # noqa: F401
from .synthetic import SyntheticConfig, generate_corpus  # noqa: F401
