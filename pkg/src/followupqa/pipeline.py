"""Pipeline orchestration: oracle evaluation variants and the full
two-hop loop over provided premises, with replayable traces.

The full loop classifies every premise against the current question,
requests extractions where the controller says Final, generates followups
where it says Intermediate, and stops at the first hop that produced a
non-null extraction; the most confident extraction at the stopping hop is
the answer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .corpus import BridgeExample
from .extractor import SpanPrediction

ORACLE_VARIANTS = ("trained_q2", "q2_equals_q1", "q1_else_q2")

ACTION_EXTRACT = "extract"
ACTION_FOLLOWUP = "followup"
ACTION_NONE = "none"


@dataclass(frozen=True)
class VerdictRecord:
    hop: int
    question: str
    premise_title: str
    label: str
    action: str


@dataclass(frozen=True)
class FollowupRecord:
    hop: int
    source_premise: str
    input_question: str
    question: str


@dataclass(frozen=True)
class ExtractionRecord:
    hop: int
    question: str
    premise_title: str
    prediction: SpanPrediction


@dataclass
class HopTrace:
    """Everything one pipeline run did, in order, so any answer can be
    audited and replayed against the same models."""

    example_id: str
    verdicts: list[VerdictRecord] = field(default_factory=list)
    followups: list[FollowupRecord] = field(default_factory=list)
    extractions: list[ExtractionRecord] = field(default_factory=list)
    answer_text: str = ""
    answer_provenance: Optional[dict] = None


@dataclass(frozen=True)
class PredictedAnswer:
    example_id: str
    answer: str
    confidence: float
    trace: HopTrace


@dataclass
class PipelineModels:
    extractor: object
    followup: Optional[object] = None
    controller: Optional[object] = None


def select_best(extractions: Sequence[ExtractionRecord]) -> Optional[ExtractionRecord]:
    """The non-null extraction with the highest confidence; ties keep the
    earliest request (hop order, then premise order). None when every
    extraction is null or the list is empty."""
    best: Optional[ExtractionRecord] = None
    for rec in extractions:
        if rec.prediction.is_null:
            continue
        if best is None or rec.prediction.confidence > best.prediction.confidence:
            best = rec
    return best


def _answer_from(trace: HopTrace, chosen: Optional[ExtractionRecord], example_id: str) -> PredictedAnswer:
    if chosen is None:
        trace.answer_text = ""
        trace.answer_provenance = None
        return PredictedAnswer(example_id, "", 0.0, trace)
    trace.answer_text = chosen.prediction.text
    trace.answer_provenance = {
        "hop": chosen.hop,
        "question": chosen.question,
        "premise_title": chosen.premise_title,
    }
    return PredictedAnswer(example_id, chosen.prediction.text, chosen.prediction.confidence, trace)


def run_oracle(example: BridgeExample, variant: str, models: PipelineModels) -> PredictedAnswer:
    """Oracle-controller evaluation: gold premises are routed directly.

    trained_q2   answer with the generated followup against the gold
                 answer-bearing premise;
    q2_equals_q1 answer with the original question (no rewriting);
    q1_else_q2   answer with the original question, falling back to the
                 followup when the original comes back null.
    """
    if variant not in ORACLE_VARIANTS:
        raise ValueError(f"unknown oracle variant {variant!r} (known: {', '.join(ORACLE_VARIANTS)})")
    trace = HopTrace(example_id=example.id)

    def extract(hop: int, question: str) -> ExtractionRecord:
        pred = models.extractor.predict(question, example.p2_hat)
        rec = ExtractionRecord(hop, question, example.p2_hat.title, pred)
        trace.extractions.append(rec)
        return rec

    def followup() -> str:
        q2 = models.followup.generate(example.q1, example.p1_hat)
        trace.followups.append(FollowupRecord(1, example.p1_hat.title, example.q1, q2))
        return q2

    if variant == "q2_equals_q1":
        rec = extract(1, example.q1)
        chosen = rec if not rec.prediction.is_null else None
    elif variant == "trained_q2":
        rec = extract(2, followup())
        chosen = rec if not rec.prediction.is_null else None
    else:  # q1_else_q2
        rec = extract(1, example.q1)
        if rec.prediction.is_null:
            rec = extract(2, followup())
        chosen = rec if not rec.prediction.is_null else None
    return _answer_from(trace, chosen, example.id)


def run_full(example: BridgeExample, models: PipelineModels, hops: int = 2) -> PredictedAnswer:
    """The full controller-driven loop over all provided premises."""
    if hops not in (1, 2):
        raise ValueError("hops must be 1 or 2")
    if models.controller is None:
        raise ValueError("run_full requires a controller")
    if hops == 2 and models.followup is None:
        raise ValueError("run_full with two hops requires a followup generator")
    trace = HopTrace(example_id=example.id)
    premises = example.all_premises()

    hop1_extractions: list[ExtractionRecord] = []
    followups: list[FollowupRecord] = []
    for premise in premises:
        verdict = models.controller.classify(example.q1, premise)
        if verdict.label == "Final":
            action = ACTION_EXTRACT
        elif verdict.label == "Intermediate" and hops == 2:
            action = ACTION_FOLLOWUP
        else:
            action = ACTION_NONE
        trace.verdicts.append(VerdictRecord(1, example.q1, premise.title, verdict.label, action))
        if action == ACTION_EXTRACT:
            pred = models.extractor.predict(example.q1, premise)
            rec = ExtractionRecord(1, example.q1, premise.title, pred)
            trace.extractions.append(rec)
            hop1_extractions.append(rec)
        elif action == ACTION_FOLLOWUP:
            q2 = models.followup.generate(example.q1, premise)
            rec = FollowupRecord(1, premise.title, example.q1, q2)
            trace.followups.append(rec)
            followups.append(rec)

    chosen = select_best(hop1_extractions)
    if chosen is not None or hops == 1:
        return _answer_from(trace, chosen, example.id)

    hop2_extractions: list[ExtractionRecord] = []
    for fu in followups:
        for premise in premises:
            if premise.title == fu.source_premise:
                continue
            verdict = models.controller.classify(fu.question, premise)
            action = ACTION_EXTRACT if verdict.label == "Final" else ACTION_NONE
            trace.verdicts.append(VerdictRecord(2, fu.question, premise.title, verdict.label, action))
            if action == ACTION_EXTRACT:
                pred = models.extractor.predict(fu.question, premise)
                rec = ExtractionRecord(2, fu.question, premise.title, pred)
                trace.extractions.append(rec)
                hop2_extractions.append(rec)
    return _answer_from(trace, select_best(hop2_extractions), example.id)


@dataclass(frozen=True)
class ReplayResult:
    matches: bool
    answer: str
    mismatches: tuple[str, ...]


def replay_trace(trace: HopTrace, example: BridgeExample, models: PipelineModels) -> ReplayResult:
    """Re-run every recorded call and re-derive the answer.

    Verifies that verdicts, followups, and extractions reproduce, and that
    re-selecting over the stopping hop's extractions yields the recorded
    answer.
    """
    mismatches: list[str] = []
    for v in trace.verdicts:
        got = models.controller.classify(v.question, example.premise_by_title(v.premise_title))
        if got.label != v.label:
            mismatches.append(f"verdict hop{v.hop} {v.premise_title}: {got.label} != {v.label}")
    for fu in trace.followups:
        got_q2 = models.followup.generate(fu.input_question, example.premise_by_title(fu.source_premise))
        if got_q2 != fu.question:
            mismatches.append(f"followup from {fu.source_premise}: {got_q2!r} != {fu.question!r}")
    replayed: list[ExtractionRecord] = []
    for rec in trace.extractions:
        pred = models.extractor.predict(rec.question, example.premise_by_title(rec.premise_title))
        replayed.append(ExtractionRecord(rec.hop, rec.question, rec.premise_title, pred))
        if pred != rec.prediction:
            mismatches.append(f"extraction hop{rec.hop} {rec.premise_title}: {pred} != {rec.prediction}")
    stop_hop = min((r.hop for r in replayed if not r.prediction.is_null), default=None)
    if stop_hop is None:
        answer = ""
    else:
        answer = select_best([r for r in replayed if r.hop == stop_hop]).prediction.text
    if answer != trace.answer_text:
        mismatches.append(f"answer: {answer!r} != {trace.answer_text!r}")
    return ReplayResult(matches=not mismatches, answer=answer, mismatches=tuple(mismatches))


# ---------------------------------------------------------------- file IO


def _span_to_dict(p: SpanPrediction) -> dict:
    return {"text": p.text, "start": p.start, "end": p.end, "confidence": p.confidence, "is_null": p.is_null}


def _span_from_dict(d: dict) -> SpanPrediction:
    return SpanPrediction(str(d["text"]), int(d["start"]), int(d["end"]), float(d["confidence"]), bool(d["is_null"]))


def trace_to_dict(trace: HopTrace) -> dict:
    return {
        "example_id": trace.example_id,
        "verdicts": [vars(v) for v in trace.verdicts],
        "followups": [vars(f) for f in trace.followups],
        "extractions": [
            {
                "hop": e.hop,
                "question": e.question,
                "premise_title": e.premise_title,
                "prediction": _span_to_dict(e.prediction),
            }
            for e in trace.extractions
        ],
        "answer_text": trace.answer_text,
        "answer_provenance": trace.answer_provenance,
    }


def trace_from_dict(d: dict) -> HopTrace:
    return HopTrace(
        example_id=str(d["example_id"]),
        verdicts=[VerdictRecord(**v) for v in d["verdicts"]],
        followups=[FollowupRecord(**f) for f in d["followups"]],
        extractions=[
            ExtractionRecord(e["hop"], e["question"], e["premise_title"], _span_from_dict(e["prediction"]))
            for e in d["extractions"]
        ],
        answer_text=str(d["answer_text"]),
        answer_provenance=d.get("answer_provenance"),
    )


def write_traces(traces: Sequence[HopTrace], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for trace in traces:
            f.write(json.dumps(trace_to_dict(trace), ensure_ascii=False, sort_keys=True) + "\n")


def read_traces(path) -> list[HopTrace]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(trace_from_dict(json.loads(line)))
    return out


def write_predictions(answers: Sequence[PredictedAnswer], path) -> None:
    """Map from example id to {answer, confidence}."""
    payload = {a.example_id: {"answer": a.answer, "confidence": a.confidence} for a in answers}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def read_predictions(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    return {str(k): str(v["answer"]) for k, v in payload.items()}
