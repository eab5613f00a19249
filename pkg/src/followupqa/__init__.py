"""Interpretable two-hop question answering with generated followups.

A relevance controller routes premises, a frozen single-hop extractor
answers, and a pointer-generator followup model turns partial information
into the next single-hop question; weak training labels for the followup
model come from a neural question generator run in reverse.
"""

from .config import ConfigError, RunConfig, profile_config
from .controller import (
    ControllerTriple,
    RelevanceController,
    Verdict,
    build_controller_dataset,
)
from .corpus import (
    BridgeExample,
    CorpusError,
    Premise,
    QuestionRecord,
    SquadExample,
    answer_in_premise,
    filter_two_hop_bridge,
    load_hotpotqa,
    load_squad,
    read_bridge_examples,
    write_bridge_examples,
)
from .extractor import FrozenModelError, SingleHopExtractor, SpanPrediction
from .followupgen import FollowupGenerator, build_source
from .metrics import (
    DesiderataReport,
    EvalReport,
    evaluate,
    exact_match,
    f1,
    followup_quality,
)
from .pipeline import (
    HopTrace,
    PipelineModels,
    PredictedAnswer,
    replay_trace,
    run_full,
    run_oracle,
    select_best,
)
from .qgweak import QuestionGenerator, WeakFollowup, weak_label_followups
from .textproc import (
    EncodedSource,
    Vocab,
    build_vocab,
    encode_source,
    normalize_answer,
    tokenize,
)

__version__ = "0.1.0"

__all__ = [
    "BridgeExample",
    "ConfigError",
    "ControllerTriple",
    "CorpusError",
    "DesiderataReport",
    "EncodedSource",
    "EvalReport",
    "FollowupGenerator",
    "FrozenModelError",
    "HopTrace",
    "PipelineModels",
    "PredictedAnswer",
    "Premise",
    "QuestionGenerator",
    "QuestionRecord",
    "RelevanceController",
    "RunConfig",
    "SingleHopExtractor",
    "SpanPrediction",
    "SquadExample",
    "Verdict",
    "Vocab",
    "WeakFollowup",
    "answer_in_premise",
    "build_controller_dataset",
    "build_source",
    "build_vocab",
    "encode_source",
    "evaluate",
    "exact_match",
    "f1",
    "filter_two_hop_bridge",
    "followup_quality",
    "load_hotpotqa",
    "load_squad",
    "normalize_answer",
    "profile_config",
    "read_bridge_examples",
    "replay_trace",
    "run_full",
    "run_oracle",
    "select_best",
    "tokenize",
    "weak_label_followups",
    "write_bridge_examples",
]
