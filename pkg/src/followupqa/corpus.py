"""HotpotQA / SQuAD ingestion and the two-hop bridge filter.

The filter keeps bridge questions with exactly two supporting premises
where the answer string occurs (under answer normalization) in exactly
one of them; that premise becomes the answer-bearing premise and the
other the intermediate one.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .textproc import find_normalized_span

log = logging.getLogger(__name__)


class CorpusError(ValueError):
    """Raised when an input file does not match its documented schema."""


@dataclass(frozen=True)
class Premise:
    """One retrieved paragraph: a title plus its ordered sentences."""

    title: str
    sentences: tuple[str, ...]

    def __post_init__(self):
        if not self.sentences:
            raise ValueError(f"premise {self.title!r} has no sentences")

    @property
    def paragraph_text(self) -> str:
        return "".join(self.sentences)


@dataclass(frozen=True)
class QuestionRecord:
    """One raw multi-hop question with its provided paragraphs."""

    id: str
    question: str
    answer: str
    qtype: str
    premises: tuple[Premise, ...]
    supporting_titles: frozenset[str]


@dataclass(frozen=True)
class BridgeExample:
    """A filtered two-hop question: the intermediate premise ``p1_hat``
    leads to the answer-bearing premise ``p2_hat``."""

    id: str
    q1: str
    answer: str
    p1_hat: Premise
    p2_hat: Premise
    distractors: tuple[Premise, ...]

    def all_premises(self) -> tuple[Premise, ...]:
        """Gold premises first, then distractors; the deterministic
        iteration order used by the pipeline."""
        return (self.p1_hat, self.p2_hat) + self.distractors

    def premise_by_title(self, title: str) -> Premise:
        for p in self.all_premises():
            if p.title == title:
                return p
        raise KeyError(title)


@dataclass(frozen=True)
class SquadExample:
    id: str
    question: str
    context: str
    answer_text: str
    answer_start: int
    is_impossible: bool = False


def answer_in_premise(answer: str, premise: Premise) -> bool:
    """True iff the normalized answer occurs as a contiguous substring of
    the normalized paragraph text."""
    return find_normalized_span(premise.paragraph_text, answer) is not None


def _parse_hotpot_entry(entry: dict, index: int) -> QuestionRecord:
    try:
        premises = []
        for title, sentences in entry["context"]:
            premises.append(Premise(str(title), tuple(str(s) for s in sentences)))
        supporting = frozenset(str(title) for title, _ in entry["supporting_facts"])
        return QuestionRecord(
            id=str(entry["_id"]),
            question=str(entry["question"]),
            answer=str(entry["answer"]),
            qtype=str(entry["type"]),
            premises=tuple(premises),
            supporting_titles=supporting,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"malformed HotpotQA entry at index {index}: {exc!r}") from exc


def load_hotpotqa(path) -> list[QuestionRecord]:
    """Parse a HotpotQA distractor-setting file (a single JSON array)."""
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise CorpusError(f"{path}: expected a top-level array of entries")
    return [_parse_hotpot_entry(entry, i) for i, entry in enumerate(data)]


def load_squad(path) -> list[SquadExample]:
    """Parse a SQuAD v2.0 file into one example per question."""
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or "data" not in data:
        raise CorpusError(f"{path}: expected an object with a 'data' array")
    out: list[SquadExample] = []
    for article in data["data"]:
        for para in article.get("paragraphs", []):
            try:
                context = str(para["context"])
                qas = para["qas"]
            except (KeyError, TypeError) as exc:
                raise CorpusError(f"malformed SQuAD paragraph: {exc!r}") from exc
            for qa in qas:
                try:
                    qid = str(qa["id"])
                    question = str(qa["question"])
                    impossible = bool(qa.get("is_impossible", False))
                    if impossible:
                        example = SquadExample(qid, question, context, "", -1, True)
                    else:
                        answer = qa["answers"][0]
                        text = str(answer["text"])
                        start = int(answer["answer_start"])
                        example = SquadExample(qid, question, context, text, start, False)
                except (KeyError, IndexError, TypeError) as exc:
                    raise CorpusError(f"malformed SQuAD qa entry: {exc!r}") from exc
                if not example.is_impossible:
                    snippet = example.context[example.answer_start : example.answer_start + len(example.answer_text)]
                    if snippet != example.answer_text:
                        raise CorpusError(
                            f"SQuAD qa {example.id}: answer_start does not point at answer_text"
                        )
                out.append(example)
    return out


def filter_two_hop_bridge(records: Iterable[QuestionRecord]) -> list[BridgeExample]:
    """Keep bridge questions with exactly two supporting premises where the
    answer occurs in exactly one of them.

    Supporting facts are counted at paragraph (title) granularity. Records
    whose supporting titles are missing from the provided premises are
    skipped with a warning rather than failing the whole run.
    """
    kept: list[BridgeExample] = []
    for rec in records:
        if rec.qtype != "bridge":
            continue
        if len(rec.supporting_titles) != 2:
            continue
        by_title: dict[str, Premise] = {}
        for p in rec.premises:
            by_title.setdefault(p.title, p)
        try:
            first, second = (by_title[t] for t in sorted(rec.supporting_titles))
        except KeyError as exc:
            log.warning("record %s: supporting title %s not among premises; skipped", rec.id, exc)
            continue
        in_first = answer_in_premise(rec.answer, first)
        in_second = answer_in_premise(rec.answer, second)
        if in_first == in_second:
            continue
        p2, p1 = (first, second) if in_first else (second, first)
        gold_titles = {p1.title, p2.title}
        distractors = tuple(p for p in rec.premises if p.title not in gold_titles)
        kept.append(
            BridgeExample(
                id=rec.id,
                q1=rec.question,
                answer=rec.answer,
                p1_hat=p1,
                p2_hat=p2,
                distractors=distractors,
            )
        )
    return kept


def _premise_to_dict(p: Premise) -> dict:
    return {"title": p.title, "sentences": list(p.sentences)}


def _premise_from_dict(d: dict) -> Premise:
    return Premise(str(d["title"]), tuple(str(s) for s in d["sentences"]))


def write_bridge_examples(examples: Iterable[BridgeExample], path) -> None:
    """One self-contained JSON object per line."""
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            record = {
                "id": ex.id,
                "q1": ex.q1,
                "answer": ex.answer,
                "p1_hat": _premise_to_dict(ex.p1_hat),
                "p2_hat": _premise_to_dict(ex.p2_hat),
                "distractors": [_premise_to_dict(p) for p in ex.distractors],
            }
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def read_bridge_examples(path) -> list[BridgeExample]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                out.append(
                    BridgeExample(
                        id=str(d["id"]),
                        q1=str(d["q1"]),
                        answer=str(d["answer"]),
                        p1_hat=_premise_from_dict(d["p1_hat"]),
                        p2_hat=_premise_from_dict(d["p2_hat"]),
                        distractors=tuple(_premise_from_dict(p) for p in d["distractors"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: bad bridge example line: {exc!r}") from exc
    return out
