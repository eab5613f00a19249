"""Question generation for weak followup labels.

Trained on reversed SQuAD pairs: given a context and an answer inside it,
produce the question. Applied to each filtered two-hop example with the
answer-bearing premise as context and the final answer as the answer, the
generator yields a weak ground-truth followup question for training the
followup generator.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .corpus import BridgeExample, SquadExample
from .seq2seq import (
    PointerGeneratorNet,
    Seq2SeqRow,
    beam_search,
    make_row,
    perplexity,
    train_seq2seq,
)
from .textproc import (
    EncodedSource,
    Vocab,
    build_vocab,
    decode_extended,
    encode_source,
    find_normalized_span,
    token_flags_for_span,
    tokenize,
    tokenize_with_offsets,
)

log = logging.getLogger(__name__)

QUESTION_MARK = "?"


@dataclass(frozen=True)
class WeakFollowup:
    """A machine-generated followup question used as a training target."""

    example_id: str
    question_tokens: tuple[str, ...]
    beam_score: float
    context_id: str

    def __post_init__(self):
        if not self.question_tokens:
            raise ValueError("followup question must be non-empty")
        if self.question_tokens[-1] != QUESTION_MARK:
            raise ValueError("followup question must end with a question mark")

    @property
    def text(self) -> str:
        return " ".join(self.question_tokens)


def _finish_question(tokens: Sequence[str]) -> tuple[str, ...]:
    tokens = list(tokens)
    if not tokens or tokens[-1] != QUESTION_MARK:
        tokens.append(QUESTION_MARK)
    return tuple(tokens)


class QuestionGenerator(BaseEstimator):
    """Pointer-generator QG model: (context, answer) -> question.

    The answer's first occurrence in the context (under answer
    normalization) is marked with a per-token indicator feature; the
    decoder may copy context words, so entity names outside the vocabulary
    still surface in the question.
    """

    def __init__(
        self,
        vocab_size: int = 20000,
        embed_dim: int = 64,
        hidden_dim: int = 64,
        beam_size: int = 4,
        max_source_tokens: int = 384,
        max_output_tokens: int = 32,
        coverage: bool = False,
        learning_rate: float = 1e-3,
        batch_size: int = 32,
        max_steps: int = 1000,
        dev_fraction: float = 0.1,
        seed: int = 13,
    ):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.beam_size = beam_size
        self.max_source_tokens = max_source_tokens
        self.max_output_tokens = max_output_tokens
        self.coverage = coverage
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.dev_fraction = dev_fraction
        self.seed = seed

    def _validate_params(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be a positive integer")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be a positive integer")

    def _source(self, context: str, answer: str) -> tuple[EncodedSource, list[int]]:
        all_offsets = tokenize_with_offsets(context)
        span = find_normalized_span(context, answer)
        if span is None:
            raise ValueError(f"answer {answer!r} does not occur in the context")
        all_flags = token_flags_for_span(all_offsets, span)
        last = max((i for i, f in enumerate(all_flags) if f), default=-1)
        if last < 0:
            raise ValueError(f"answer {answer!r} does not align with any context token")
        # keep the truncation window anchored so the marked answer survives
        start = 0 if last < self.max_source_tokens else last + 1 - self.max_source_tokens
        offsets = all_offsets[start : start + self.max_source_tokens]
        flags = all_flags[start : start + self.max_source_tokens]
        tokens = [t for t, _, _ in offsets]
        return encode_source(tokens, self.vocab_), flags

    # ------------------------------------------------------------------ fit

    def fit(self, examples: Sequence[SquadExample], y=None) -> "QuestionGenerator":
        self._validate_params()
        usable = []
        for ex in examples:
            if ex.is_impossible:
                continue
            if find_normalized_span(ex.context, ex.answer_text) is None:
                log.warning("example %s: answer not found in context; skipped", ex.id)
                continue
            usable.append(ex)
        if not usable:
            raise ValueError("no usable (answerable, aligned) examples to train on")
        torch.manual_seed(self.seed)
        rng = random.Random(self.seed)

        self.vocab_ = build_vocab(
            (tokenize(ex.context) + tokenize(ex.question) for ex in usable),
            self.vocab_size,
        )
        rows: list[Seq2SeqRow] = []
        for ex in usable:
            source, flags = self._source(ex.context, ex.answer_text)
            rows.append(
                make_row(source, flags, tokenize(ex.question), self.vocab_, self.max_output_tokens)
            )
        order = list(range(len(rows)))
        rng.shuffle(order)
        n_dev = int(len(rows) * self.dev_fraction)
        dev_rows = [rows[i] for i in order[:n_dev]]
        train_rows = [rows[i] for i in order[n_dev:]] or rows

        self.net_ = PointerGeneratorNet(self.vocab_.size, self.embed_dim, self.hidden_dim, self.coverage)
        curve = train_seq2seq(
            self.net_,
            train_rows,
            max_steps=self.max_steps,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            log_every=max(self.max_steps // 10, 1),
            logger=log,
        )
        self.steps_ = len(curve)
        self.report_ = {
            "loss_curve": curve,
            "dev_count": len(dev_rows),
            "dev_perplexity": perplexity(self.net_, dev_rows) if dev_rows else None,
        }
        return self

    # ------------------------------------------------------------- generate

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("this QuestionGenerator is not fitted yet")

    def generate(
        self, context: str, answer: str, example_id: str = "", context_id: str = ""
    ) -> WeakFollowup:
        """Beam-search decode the most likely question for (context, answer).

        Raises ValueError when the answer cannot be located in the context;
        callers filter such inputs beforehand.
        """
        self._check_fitted()
        self._validate_params()
        source, flags = self._source(context, answer)
        hyp = beam_search(
            self.net_, source, flags, beam_size=self.beam_size, max_len=self.max_output_tokens
        )
        tokens = decode_extended(hyp.tokens, self.vocab_, source.oov_list)
        return WeakFollowup(
            example_id=example_id,
            question_tokens=_finish_question(tokens),
            beam_score=hyp.score(),
            context_id=context_id,
        )

    # ------------------------------------------------------------ persist

    def save(self, directory, extra: dict | None = None) -> None:
        self._check_fitted()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.vocab_.save(directory / "vocab.txt")
        torch.save(self.net_.state_dict(), directory / "weights.pt")
        manifest = {
            "kind": "question-generator",
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
    def load(cls, directory) -> "QuestionGenerator":
        directory = Path(directory)
        with open(directory / "manifest.json", encoding="utf-8") as f:
            manifest = json.load(f)
        if manifest.get("kind") != "question-generator":
            raise ValueError(f"{directory} does not hold a question-generator checkpoint")
        model = cls(**manifest["params"])
        model.vocab_ = Vocab.load(directory / "vocab.txt")
        model.net_ = PointerGeneratorNet(model.vocab_.size, model.embed_dim, model.hidden_dim, model.coverage)
        model.net_.load_state_dict(torch.load(directory / "weights.pt", weights_only=True))
        model.net_.eval()
        model.steps_ = manifest.get("steps", 0)
        model.report_ = manifest.get("report", {})
        return model


def weak_label_followups(model: QuestionGenerator, examples: Sequence[BridgeExample]) -> list[WeakFollowup]:
    """One weak followup per example, aligned by id and order-preserving.

    The answer-bearing premise is the QG context and the final answer is
    the marked answer; the bridge filter guarantees the answer occurs there.
    """
    out = []
    for ex in examples:
        out.append(
            model.generate(
                ex.p2_hat.paragraph_text,
                ex.answer,
                example_id=ex.id,
                context_id=ex.p2_hat.title,
            )
        )
    return out


def write_weak_labels(labels: Sequence[WeakFollowup], path) -> None:
    """Line-delimited (example_id, question text, beam_score, context_id)."""
    with open(path, "w", encoding="utf-8") as f:
        for lab in labels:
            record = {
                "example_id": lab.example_id,
                "question": lab.text,
                "beam_score": lab.beam_score,
                "context_id": lab.context_id,
            }
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def read_weak_labels(path) -> list[WeakFollowup]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                out.append(
                    WeakFollowup(
                        example_id=str(d["example_id"]),
                        question_tokens=tuple(str(d["question"]).split()),
                        beam_score=float(d["beam_score"]),
                        context_id=str(d.get("context_id", "")),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad weak-label line: {exc!r}") from exc
    return out
