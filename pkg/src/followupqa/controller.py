"""The ternary relevance controller.

Classifies a (question, premise) pair as Irrel, Intermediate, or Final.
Its training triples come from the gold premise roles plus the frozen
extractor: the intermediate premise is Intermediate; the answer-bearing
premise is Final only when the extractor's span for the original question
overlaps the gold answer, otherwise it too is Irrel; everything else is
Irrel.
"""

from __future__ import annotations

import json
import logging
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from torch import nn

from .backends import build_backend
from .corpus import BridgeExample, Premise
from .textproc import BOS_ID, EOS_ID, PAD_ID, SEP_ID, Vocab, build_vocab, normalize_answer, tokenize

log = logging.getLogger(__name__)

LABELS = ("Irrel", "Intermediate", "Final")
_LABEL_INDEX = {label: i for i, label in enumerate(LABELS)}

PROVENANCE_INTERMEDIATE = "gold-p1-intermediate"
PROVENANCE_FINAL = "extractor-overlap-final"
PROVENANCE_P2_IRREL = "extractor-no-overlap-irrel"
PROVENANCE_DISTRACTOR = "distractor-irrel"


@dataclass(frozen=True)
class Verdict:
    """Controller output: the argmax label and the 3-way probabilities in
    (Irrel, Intermediate, Final) order. Ties break toward the earlier
    label in that order."""

    label: str
    probs: tuple[float, float, float]


def verdict_from_probs(probs: Sequence[float]) -> Verdict:
    probs = tuple(float(p) for p in probs)
    if len(probs) != len(LABELS):
        raise ValueError(f"expected {len(LABELS)} probabilities, got {len(probs)}")
    best = max(range(len(probs)), key=lambda i: (probs[i], -i))
    return Verdict(label=LABELS[best], probs=probs)


@dataclass(frozen=True)
class ControllerTriple:
    question: str
    premise: Premise
    label: str
    example_id: str
    provenance: str


def answers_overlap(extracted: str, gold: str) -> bool:
    """Non-empty overlap of normalized token multisets."""
    a = Counter(normalize_answer(extracted).split())
    b = Counter(normalize_answer(gold).split())
    return sum((a & b).values()) > 0


def build_controller_dataset(examples: Sequence[BridgeExample], extractor) -> list[ControllerTriple]:
    """Ground-truth triples for controller training.

    Per example: the intermediate premise is labeled Intermediate; the
    answer-bearing premise is Final when the frozen extractor's answer for
    the original question overlaps the gold answer and Irrel otherwise;
    every distractor is Irrel. Emits exactly one triple per premise.
    """
    triples: list[ControllerTriple] = []
    for ex in examples:
        triples.append(
            ControllerTriple(ex.q1, ex.p1_hat, "Intermediate", ex.id, PROVENANCE_INTERMEDIATE)
        )
        span = extractor.predict(ex.q1, ex.p2_hat)
        if not span.is_null and answers_overlap(span.text, ex.answer):
            triples.append(ControllerTriple(ex.q1, ex.p2_hat, "Final", ex.id, PROVENANCE_FINAL))
        else:
            triples.append(ControllerTriple(ex.q1, ex.p2_hat, "Irrel", ex.id, PROVENANCE_P2_IRREL))
        for p in ex.distractors:
            triples.append(ControllerTriple(ex.q1, p, "Irrel", ex.id, PROVENANCE_DISTRACTOR))
    return triples


class _PairClassifier(nn.Module):
    def __init__(self, backend: str, vocab_size: int, embed_dim: int, hidden_dim: int, max_len: int):
        super().__init__()
        self.encoder = build_backend(backend, vocab_size, embed_dim, hidden_dim, max_len)
        self.head = nn.Linear(self.encoder.hidden_size, len(LABELS))

    def forward(self, ids, segments, mask):
        hidden = self.encoder(ids, segments, mask)
        return self.head(hidden[:, 0])


class RelevanceController(BaseEstimator):
    """Ternary text-pair classifier, sklearn-style.

    ``fit`` takes :class:`ControllerTriple` lists; ``classify`` returns a
    :class:`Verdict`. Class weights counter the heavy Irrel majority that
    the triple construction produces; ``downsample_negatives`` optionally
    thins Irrel triples instead.
    """

    def __init__(
        self,
        backend: str = "transformer",
        vocab_size: int = 20000,
        embed_dim: int = 64,
        hidden_dim: int = 64,
        max_input_tokens: int = 384,
        max_question_tokens: int = 64,
        class_weights: bool = True,
        downsample_negatives: bool = False,
        learning_rate: float = 1e-3,
        batch_size: int = 32,
        max_steps: int = 1000,
        dev_fraction: float = 0.1,
        seed: int = 13,
    ):
        self.backend = backend
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.max_input_tokens = max_input_tokens
        self.max_question_tokens = max_question_tokens
        self.class_weights = class_weights
        self.downsample_negatives = downsample_negatives
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.dev_fraction = dev_fraction
        self.seed = seed

    # ------------------------------------------------------------------ fit

    def fit(self, triples: Sequence[ControllerTriple], y=None) -> "RelevanceController":
        if not triples:
            raise ValueError("cannot train on an empty triple set")
        histogram = Counter(t.label for t in triples)
        missing = [label for label in LABELS if histogram[label] == 0]
        if missing:
            raise ValueError(
                f"triples are missing label(s) {missing}; histogram: {dict(histogram)}"
            )
        torch.manual_seed(self.seed)
        rng = random.Random(self.seed)

        triples = list(triples)
        if self.downsample_negatives:
            cap = max(histogram["Intermediate"], histogram["Final"])
            keep = []
            irrel_seen = []
            for t in triples:
                if t.label == "Irrel":
                    irrel_seen.append(t)
                else:
                    keep.append(t)
            rng.shuffle(irrel_seen)
            triples = keep + irrel_seen[:cap]
            rng.shuffle(triples)
            histogram = Counter(t.label for t in triples)

        self.vocab_ = build_vocab(
            (tokenize(t.question) + tokenize(t.premise.paragraph_text) for t in triples),
            self.vocab_size,
        )
        order = list(range(len(triples)))
        rng.shuffle(order)
        n_dev = int(len(triples) * self.dev_fraction)
        dev = [triples[i] for i in order[:n_dev]]
        train = [triples[i] for i in order[n_dev:]] or list(triples)

        self.net_ = _PairClassifier(
            self.backend, self.vocab_.size, self.embed_dim, self.hidden_dim, self.max_input_tokens
        )
        if self.class_weights:
            counts = Counter(t.label for t in train)
            total = sum(counts.values())
            weights = torch.tensor(
                [total / (len(LABELS) * max(counts[label], 1)) for label in LABELS],
                dtype=torch.float32,
            )
        else:
            weights = None
        ce = nn.CrossEntropyLoss(weight=weights)
        opt = torch.optim.Adam(self.net_.parameters(), lr=self.learning_rate)
        order = list(range(len(train)))
        rng.shuffle(order)
        cursor = 0
        curve = []
        self.net_.train()
        for _ in range(self.max_steps):
            if cursor >= len(order):
                rng.shuffle(order)
                cursor = 0
            picks = order[cursor : cursor + self.batch_size]
            cursor += self.batch_size
            batch = [train[i] for i in picks]
            ids, segments, mask = self._pad([self._encode(t.question, t.premise) for t in batch])
            logits = self.net_(ids, segments, mask)
            target = torch.tensor([_LABEL_INDEX[t.label] for t in batch], dtype=torch.long)
            loss = ce(logits, target)
            opt.zero_grad()
            loss.backward()
            opt.step()
            curve.append(float(loss.detach()))
        self.steps_ = len(curve)
        self.report_ = {"loss_curve": curve, "dev_count": len(dev), "label_histogram": dict(histogram)}
        if dev:
            self.report_["dev_accuracy_per_class"] = self._dev_accuracy(dev)
        return self

    def _dev_accuracy(self, dev: Sequence[ControllerTriple]) -> dict[str, float]:
        hits: Counter[str] = Counter()
        totals: Counter[str] = Counter()
        for t in dev:
            totals[t.label] += 1
            if self.classify(t.question, t.premise).label == t.label:
                hits[t.label] += 1
        return {label: hits[label] / totals[label] for label in LABELS if totals[label]}

    # ------------------------------------------------------------- classify

    def _encode(self, question: str, premise: Premise) -> tuple[list[int], list[int]]:
        q_ids = self.vocab_.encode(tokenize(question)[: self.max_question_tokens])
        room = max(self.max_input_tokens - len(q_ids) - 3, 1)
        p_ids = self.vocab_.encode(tokenize(premise.paragraph_text)[:room])
        ids = [BOS_ID] + q_ids + [SEP_ID] + p_ids + [EOS_ID]
        segments = [0] * (len(q_ids) + 2) + [1] * (len(p_ids) + 1)
        return ids, segments

    @staticmethod
    def _pad(rows: Sequence[tuple[list[int], list[int]]]):
        length = max(len(ids) for ids, _ in rows)
        n = len(rows)
        ids = torch.full((n, length), PAD_ID, dtype=torch.long)
        segments = torch.zeros((n, length), dtype=torch.long)
        mask = torch.zeros((n, length), dtype=torch.bool)
        for i, (row_ids, row_seg) in enumerate(rows):
            ids[i, : len(row_ids)] = torch.tensor(row_ids, dtype=torch.long)
            segments[i, : len(row_seg)] = torch.tensor(row_seg, dtype=torch.long)
            mask[i, : len(row_ids)] = True
        return ids, segments, mask

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("this RelevanceController is not fitted yet")

    def classify(self, question: str, premise: Premise) -> Verdict:
        self._check_fitted()
        self.net_.eval()
        with torch.no_grad():
            ids, segments, mask = self._pad([self._encode(question, premise)])
            logits = self.net_(ids, segments, mask).double()
            probs = torch.softmax(logits, dim=1)[0]
        return verdict_from_probs(probs.tolist())

    # ------------------------------------------------------------ persist

    def save(self, directory, extra: dict | None = None) -> None:
        self._check_fitted()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.vocab_.save(directory / "vocab.txt")
        torch.save(self.net_.state_dict(), directory / "weights.pt")
        manifest = {
            "kind": "controller",
            "params": self.get_params(),
            "vocab_sha256": self.vocab_.sha256(),
            "steps": self.steps_,
            "report": {k: v for k, v in self.report_.items() if k != "loss_curve"},
        }
        if extra:
            manifest.update(extra)
        with open(directory / "manifest.json", "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, directory) -> "RelevanceController":
        directory = Path(directory)
        with open(directory / "manifest.json", encoding="utf-8") as f:
            manifest = json.load(f)
        if manifest.get("kind") != "controller":
            raise ValueError(f"{directory} does not hold a controller checkpoint")
        model = cls(**manifest["params"])
        model.vocab_ = Vocab.load(directory / "vocab.txt")
        model.net_ = _PairClassifier(
            model.backend, model.vocab_.size, model.embed_dim, model.hidden_dim, model.max_input_tokens
        )
        model.net_.load_state_dict(torch.load(directory / "weights.pt", weights_only=True))
        model.net_.eval()
        model.steps_ = manifest.get("steps", 0)
        model.report_ = manifest.get("report", {})
        return model


def write_triples(triples: Sequence[ControllerTriple], path) -> None:
    """Line-delimited (example_id, premise title, label, provenance);
    premise text is looked up from the filtered examples file."""
    with open(path, "w", encoding="utf-8") as f:
        for t in triples:
            record = {
                "example_id": t.example_id,
                "premise_title": t.premise.title,
                "label": t.label,
                "provenance": t.provenance,
            }
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def read_triples(path, examples: Sequence[BridgeExample]) -> list[ControllerTriple]:
    by_id = {ex.id: ex for ex in examples}
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                ex = by_id[str(d["example_id"])]
                premise = ex.premise_by_title(str(d["premise_title"]))
                label = str(d["label"])
                if label not in LABELS:
                    raise ValueError(f"unknown label {label!r}")
                out.append(
                    ControllerTriple(ex.q1, premise, label, ex.id, str(d.get("provenance", "")))
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad triple line: {exc!r}") from exc
    return out
