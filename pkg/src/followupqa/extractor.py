"""The single-hop answer extractor.

Trained once on SQuAD-2.0-style data and then frozen; every later stage
(controller supervision, oracle and full pipeline runs) treats it as a
fixed scoring function. Given a question and one premise it returns the
best answer span, a confidence relative to the no-answer option, and a
null flag.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from torch import nn

from . import metrics
from .backends import build_backend
from .corpus import Premise, SquadExample
from .textproc import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    SEP_ID,
    Vocab,
    build_vocab,
    tokenize,
    tokenize_with_offsets,
)

log = logging.getLogger(__name__)

NO_WINDOW_CONFIDENCE = -1e9


class FrozenModelError(RuntimeError):
    """Raised when a training call would mutate a frozen model."""


@dataclass(frozen=True)
class SpanPrediction:
    """Extractor output: span text with [start, end) character offsets into
    the premise paragraph, a confidence score (best span minus the null
    score, comparable across premises), and a null flag."""

    text: str
    start: int
    end: int
    confidence: float
    is_null: bool


def _null_prediction(confidence: float) -> SpanPrediction:
    return SpanPrediction("", 0, 0, confidence, True)


class _SpanNet(nn.Module):
    def __init__(self, backend: str, vocab_size: int, embed_dim: int, hidden_dim: int, max_len: int):
        super().__init__()
        self.encoder = build_backend(backend, vocab_size, embed_dim, hidden_dim, max_len)
        self.start_head = nn.Linear(self.encoder.hidden_size, 1)
        self.end_head = nn.Linear(self.encoder.hidden_size, 1)

    def forward(self, ids, segments, mask):
        hidden = self.encoder(ids, segments, mask)
        start = self.start_head(hidden).squeeze(-1)
        end = self.end_head(hidden).squeeze(-1)
        start = start.masked_fill(~mask, -1e9)
        end = end.masked_fill(~mask, -1e9)
        return start, end


@dataclass
class _Window:
    ids: list[int]
    segments: list[int]
    ctx_pos: int  # sequence index of the first context token
    offsets: list[tuple[int, int]]  # character offsets per context token
    start_target: int = 0  # sequence index; 0 is the null slot
    end_target: int = 0


class SingleHopExtractor(BaseEstimator):
    """Span extractor with a null answer, sklearn-style.

    ``fit`` trains on :class:`SquadExample` lists and freezes the model;
    a second ``fit`` raises :class:`FrozenModelError`. ``predict`` maps a
    (question, premise) pair to a :class:`SpanPrediction`. Long premises
    are scored in overlapping windows and the best window wins.
    """

    def __init__(
        self,
        backend: str = "transformer",
        vocab_size: int = 20000,
        embed_dim: int = 64,
        hidden_dim: int = 64,
        max_input_tokens: int = 384,
        max_question_tokens: int = 64,
        window_stride: int = 128,
        max_answer_tokens: int = 30,
        null_threshold: float = 0.0,
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
        self.window_stride = window_stride
        self.max_answer_tokens = max_answer_tokens
        self.null_threshold = null_threshold
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.dev_fraction = dev_fraction
        self.seed = seed

    # ------------------------------------------------------------------ fit

    def fit(self, examples: Sequence[SquadExample], y=None) -> "SingleHopExtractor":
        if getattr(self, "frozen_", False):
            raise FrozenModelError("extractor is frozen; training is refused")
        if not examples:
            raise ValueError("cannot train on an empty example set")
        n_impossible = sum(1 for ex in examples if ex.is_impossible)
        if n_impossible == 0 or n_impossible == len(examples):
            log.warning(
                "training set has %d impossible of %d examples; both answerable and "
                "impossible questions are expected",
                n_impossible,
                len(examples),
            )
        torch.manual_seed(self.seed)
        rng = random.Random(self.seed)

        self.vocab_ = build_vocab(
            (tokenize(ex.question) + tokenize(ex.context) for ex in examples),
            self.vocab_size,
        )
        order = list(range(len(examples)))
        rng.shuffle(order)
        n_dev = int(len(examples) * self.dev_fraction)
        dev_idx = set(order[:n_dev])
        train_examples = [ex for i, ex in enumerate(examples) if i not in dev_idx]
        dev_examples = [ex for i, ex in enumerate(examples) if i in dev_idx]
        if not train_examples:
            train_examples, dev_examples = list(examples), []

        rows: list[_Window] = []
        for ex in train_examples:
            rows.extend(self._training_windows(ex))
        if not rows:
            raise ValueError("no usable training windows were produced")

        self.net_ = _SpanNet(
            self.backend, self.vocab_.size, self.embed_dim, self.hidden_dim, self.max_input_tokens
        )
        curve = self._train(rows, rng)
        self.frozen_ = True
        self.steps_ = len(curve)
        self.report_ = {"loss_curve": curve, "dev_count": len(dev_examples)}
        if dev_examples:
            em, f1 = self._dev_scores(dev_examples)
            self.report_["dev_em"] = em
            self.report_["dev_f1"] = f1
        return self

    def _train(self, rows: list[_Window], rng: random.Random) -> list[float]:
        opt = torch.optim.Adam(self.net_.parameters(), lr=self.learning_rate)
        ce = nn.CrossEntropyLoss()
        order = list(range(len(rows)))
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
            batch = [rows[i] for i in picks]
            ids, segments, mask = self._pad([(w.ids, w.segments) for w in batch])
            start_logits, end_logits = self.net_(ids, segments, mask)
            start_t = torch.tensor([w.start_target for w in batch], dtype=torch.long)
            end_t = torch.tensor([w.end_target for w in batch], dtype=torch.long)
            loss = ce(start_logits, start_t) + ce(end_logits, end_t)
            opt.zero_grad()
            loss.backward()
            opt.step()
            curve.append(float(loss.detach()))
        return curve

    def _dev_scores(self, dev_examples: Sequence[SquadExample]) -> tuple[float, float]:
        em_total = 0.0
        f1_total = 0.0
        for ex in dev_examples:
            premise = Premise(title=ex.id, sentences=(ex.context,))
            pred = self.predict(ex.question, premise)
            gold = "" if ex.is_impossible else ex.answer_text
            em_total += metrics.exact_match(pred.text, gold)
            f1_total += metrics.f1(pred.text, gold)
        return em_total / len(dev_examples), f1_total / len(dev_examples)

    # ------------------------------------------------------------- features

    def _question_ids(self, question: str) -> list[int]:
        return self.vocab_.encode(tokenize(question)[: self.max_question_tokens])

    def _windows(self, question: str, context: str) -> list[_Window]:
        q_ids = self._question_ids(question)
        ctx = tokenize_with_offsets(context)
        if not ctx:
            return []
        width = self.max_input_tokens - len(q_ids) - 3
        width = max(width, 1)
        windows = []
        start = 0
        while True:
            chunk = ctx[start : start + width]
            ids = [BOS_ID] + q_ids + [SEP_ID] + self.vocab_.encode(t for t, _, _ in chunk) + [EOS_ID]
            segments = [0] * (len(q_ids) + 2) + [1] * (len(chunk) + 1)
            windows.append(
                _Window(
                    ids=ids,
                    segments=segments,
                    ctx_pos=len(q_ids) + 2,
                    offsets=[(s, e) for _, s, e in chunk],
                )
            )
            if start + width >= len(ctx):
                break
            start += self.window_stride
        return windows

    def _training_windows(self, ex: SquadExample) -> list[_Window]:
        windows = self._windows(ex.question, ex.context)
        if not windows:
            log.warning("example %s has an empty context; skipped", ex.id)
            return []
        if ex.is_impossible:
            return windows  # null targets everywhere
        span = (ex.answer_start, ex.answer_start + len(ex.answer_text))
        ctx = tokenize_with_offsets(ex.context)
        hit = [i for i, (_, s, e) in enumerate(ctx) if s < span[1] and e > span[0]]
        if not hit:
            log.warning("example %s: answer does not align with any token; skipped", ex.id)
            return []
        first_char = ctx[hit[0]][1]
        last_char = ctx[hit[-1]][2]
        for w in windows:
            inside = [
                i
                for i, (s, e) in enumerate(w.offsets)
                if s < last_char and e > first_char
            ]
            covers = (
                bool(inside)
                and w.offsets[inside[0]][0] <= first_char
                and w.offsets[inside[-1]][1] >= last_char
            )
            if covers and len(inside) <= self.max_answer_tokens:
                w.start_target = w.ctx_pos + inside[0]
                w.end_target = w.ctx_pos + inside[-1]
        return windows

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

    # -------------------------------------------------------------- predict

    def _check_fitted(self):
        if not getattr(self, "frozen_", False):
            raise NotFittedError("this SingleHopExtractor is not fitted/frozen yet")

    def predict(self, question: str, premise: Premise) -> SpanPrediction:
        """Best answer span for the question in this premise, or null."""
        self._check_fitted()
        if not question:
            raise ValueError("question must be non-empty")
        windows = self._windows(question, premise.paragraph_text)
        if not windows:
            return _null_prediction(NO_WINDOW_CONFIDENCE)
        self.net_.eval()
        with torch.no_grad():
            ids, segments, mask = self._pad([(w.ids, w.segments) for w in windows])
            start_logits, end_logits = self.net_(ids, segments, mask)
        best: Optional[tuple[float, int, int, int]] = None  # confidence, window, i, j
        for w_idx, w in enumerate(windows):
            m = len(w.offsets)
            s = start_logits[w_idx, w.ctx_pos : w.ctx_pos + m]
            e = end_logits[w_idx, w.ctx_pos : w.ctx_pos + m]
            grid = s.unsqueeze(1) + e.unsqueeze(0)
            span_mask = torch.ones((m, m), dtype=torch.bool)
            span_mask = torch.triu(span_mask) & ~torch.triu(span_mask, diagonal=self.max_answer_tokens)
            grid = grid.masked_fill(~span_mask, float("-inf"))
            flat = int(torch.argmax(grid))
            i, j = divmod(flat, m)
            null_score = float(start_logits[w_idx, 0] + end_logits[w_idx, 0])
            confidence = float(grid[i, j]) - null_score
            if best is None or confidence > best[0]:
                best = (confidence, w_idx, i, j)
        confidence, w_idx, i, j = best
        if confidence <= self.null_threshold:
            return _null_prediction(confidence)
        w = windows[w_idx]
        start_char = w.offsets[i][0]
        end_char = w.offsets[j][1]
        return SpanPrediction(
            text=premise.paragraph_text[start_char:end_char],
            start=start_char,
            end=end_char,
            confidence=confidence,
            is_null=False,
        )

    # ------------------------------------------------------------ persist

    def save(self, directory, extra: dict | None = None) -> None:
        self._check_fitted()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.vocab_.save(directory / "vocab.txt")
        torch.save(self.net_.state_dict(), directory / "weights.pt")
        manifest = {
            "kind": "extractor",
            "params": self.get_params(),
            "vocab_sha256": self.vocab_.sha256(),
            "frozen": True,
            "steps": self.steps_,
            "report": {k: v for k, v in self.report_.items() if k != "loss_curve"},
        }
        if extra:
            manifest.update(extra)
        with open(directory / "manifest.json", "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, directory) -> "SingleHopExtractor":
        directory = Path(directory)
        with open(directory / "manifest.json", encoding="utf-8") as f:
            manifest = json.load(f)
        if manifest.get("kind") != "extractor":
            raise ValueError(f"{directory} does not hold an extractor checkpoint")
        model = cls(**manifest["params"])
        model.vocab_ = Vocab.load(directory / "vocab.txt")
        model.net_ = _SpanNet(
            model.backend, model.vocab_.size, model.embed_dim, model.hidden_dim, model.max_input_tokens
        )
        model.net_.load_state_dict(torch.load(directory / "weights.pt", weights_only=True))
        model.net_.eval()
        model.frozen_ = True
        model.steps_ = manifest.get("steps", 0)
        model.report_ = manifest.get("report", {})
        return model
