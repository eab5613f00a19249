"""Answer scoring (EM/F1), evaluation reports, and followup-quality rates."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, asdict
from typing import Iterable, Mapping, Sequence

from .corpus import BridgeExample
from .textproc import normalize_answer


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def f1(pred: str, gold: str) -> float:
    """Token-multiset F1 over normalized tokens.

    Both sides empty scores 1, exactly one side empty scores 0 (the SQuAD
    2.0 no-answer convention).
    """
    pred_tokens = normalize_answer(pred).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    common = Counter(pred_tokens) & Counter(gold_tokens)
    num_same = sum(common.values())
    if num_same == 0:
        return 0.0
    precision = num_same / len(pred_tokens)
    recall = num_same / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class EvalReport:
    variant: str
    em: float
    f1: float
    count: int


def evaluate(predictions: Mapping[str, str], examples: Sequence[BridgeExample], variant: str) -> EvalReport:
    """Average EM/F1 (x100) of predictions against gold answers.

    Examples missing from ``predictions`` are scored as empty answers.
    """
    if not examples:
        raise ValueError("cannot evaluate an empty example list")
    em_total = 0.0
    f1_total = 0.0
    for ex in examples:
        pred = predictions.get(ex.id, "")
        em_total += exact_match(pred, ex.answer)
        f1_total += f1(pred, ex.answer)
    n = len(examples)
    return EvalReport(variant=variant, em=100.0 * em_total / n, f1=100.0 * f1_total / n, count=n)


@dataclass(frozen=True)
class DesiderataReport:
    """How often generated followups behave as intended: the frozen
    extractor recovers the answer from the gold premise (answerability),
    the controller recognizes that premise as final (recognition), and the
    controller rejects every other premise (rejection)."""

    answerability: float
    answerability_strict: float
    recognition: float
    rejection: float
    count: int


def followup_quality(
    examples: Sequence[BridgeExample],
    followups: Mapping[str, str],
    extractor,
    controller,
) -> DesiderataReport:
    """Score followup questions against the three desiderata.

    An example with no followup counts as failing all three rates.
    """
    if not examples:
        raise ValueError("followup_quality is undefined for an empty example list")
    answerable = 0.0
    answerable_strict = 0.0
    recognized = 0.0
    rejected = 0.0
    for ex in examples:
        q2 = followups.get(ex.id)
        if q2 is None:
            continue
        span = extractor.predict(q2, ex.p2_hat)
        if f1(span.text, ex.answer) > 0:
            answerable += 1
        answerable_strict += exact_match(span.text, ex.answer)
        if controller.classify(q2, ex.p2_hat).label == "Final":
            recognized += 1
        others = [p for p in ex.all_premises() if p.title != ex.p2_hat.title]
        if others:
            hits = sum(1 for p in others if controller.classify(q2, p).label == "Irrel")
            rejected += hits / len(others)
        else:
            rejected += 1.0
    n = len(examples)
    return DesiderataReport(
        answerability=answerable / n,
        answerability_strict=answerable_strict / n,
        recognition=recognized / n,
        rejection=rejected / n,
        count=n,
    )


def format_report_table(sections: Sequence[tuple[str, Sequence[EvalReport]]]) -> str:
    """Aligned plain-text table: section headers with one EM/F1 row per
    variant underneath."""
    width = max(
        [len(name) for name, _ in sections]
        + [2 + len(r.variant) for _, reports in sections for r in reports]
        + [8]
    )
    lines = [f"{'':{width}}      EM      F1"]
    for name, reports in sections:
        lines.append(name)
        for r in reports:
            lines.append(f"  {r.variant:{width - 2}}  {r.em:6.1f}  {r.f1:6.1f}")
    return "\n".join(lines)


def write_reports(reports: Iterable[EvalReport], path) -> None:
    payload = [asdict(r) for r in reports]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
