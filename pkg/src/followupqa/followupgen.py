"""The followup question generator.

A pointer-generator network reads the original question and the
intermediate premise as one sequence (question, separator, premise) and
emits a self-contained single-hop followup question. Trained with a
token-level loss against the weak followup labels; at inference the copy
gate lets it lift entity names straight out of the premise.
"""

from __future__ import annotations

import json
import logging
import random
from pathlib import Path
from typing import Sequence

import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .corpus import BridgeExample, Premise
from .qgweak import WeakFollowup, _finish_question
from .seq2seq import (
    DecodeStepOutput,
    DecoderState,
    Encoded,
    PointerGeneratorNet,
    Seq2SeqRow,
    _single_batch,
    beam_search,
    greedy_decode,
    make_row,
    perplexity,
    train_seq2seq,
)
from .textproc import (
    SEP,
    SEP_ID,
    EncodedSource,
    Vocab,
    build_vocab,
    decode_extended,
    encode_source,
    tokenize,
)

log = logging.getLogger(__name__)


def build_source(q1: str, p1: Premise, vocab: Vocab, max_source_tokens: int = 384) -> EncodedSource:
    """Encode [question tokens, separator, premise tokens] as one source.

    Truncation removes premise tokens only; the question always survives
    intact even when it alone exceeds the budget.
    """
    q_tokens = tokenize(q1)
    p_tokens = tokenize(p1.paragraph_text)
    room = max(max_source_tokens - len(q_tokens) - 1, 0)
    tokens = q_tokens + [SEP] + p_tokens[:room]
    return encode_source(tokens, vocab)


def source_flags(source: EncodedSource) -> list[int]:
    """Marker channel: 0 up to and including the separator, 1 on premise
    tokens after it."""
    flags = []
    seen_sep = False
    for idx in source.ids:
        flags.append(1 if seen_sep else 0)
        if idx == SEP_ID:
            seen_sep = True
    return flags


class FollowupGenerator(BaseEstimator):
    """Pointer-generator followup model: (original question, intermediate
    premise) -> followup question text ending in '?'."""

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

    # ------------------------------------------------------------------ fit

    def fit(
        self, examples: Sequence[BridgeExample], followups: Sequence[WeakFollowup]
    ) -> "FollowupGenerator":
        """Teacher-forced NLL training of followup questions.

        ``examples`` and ``followups`` must align one-to-one by id, in
        order; any mismatch aborts before training starts.
        """
        self._validate_params()
        if not examples:
            raise ValueError("cannot train on an empty example set")
        if len(examples) != len(followups):
            raise ValueError(
                f"{len(examples)} examples vs {len(followups)} followups; inputs must align"
            )
        for ex, fu in zip(examples, followups):
            if ex.id != fu.example_id:
                raise ValueError(f"id mismatch: example {ex.id!r} paired with followup {fu.example_id!r}")
        torch.manual_seed(self.seed)
        rng = random.Random(self.seed)

        self.vocab_ = build_vocab(
            (
                tokenize(ex.q1) + tokenize(ex.p1_hat.paragraph_text) + list(fu.question_tokens)
                for ex, fu in zip(examples, followups)
            ),
            self.vocab_size,
        )
        rows: list[Seq2SeqRow] = []
        for ex, fu in zip(examples, followups):
            source = build_source(ex.q1, ex.p1_hat, self.vocab_, self.max_source_tokens)
            rows.append(
                make_row(
                    source,
                    source_flags(source),
                    list(fu.question_tokens),
                    self.vocab_,
                    self.max_output_tokens,
                )
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
            raise NotFittedError("this FollowupGenerator is not fitted yet")

    def generate(self, q1: str, p1: Premise) -> str:
        """Followup question text; copied out-of-vocabulary tokens resolve
        to their source surface forms."""
        self._check_fitted()
        self._validate_params()
        source = build_source(q1, p1, self.vocab_, self.max_source_tokens)
        hyp = beam_search(
            self.net_,
            source,
            source_flags(source),
            beam_size=self.beam_size,
            max_len=self.max_output_tokens,
        )
        tokens = decode_extended(hyp.tokens, self.vocab_, source.oov_list)
        return " ".join(_finish_question(tokens))

    def generate_greedy(self, q1: str, p1: Premise) -> str:
        """Stepwise-argmax decode; the beam_size=1 reference path."""
        self._check_fitted()
        source = build_source(q1, p1, self.vocab_, self.max_source_tokens)
        hyp = greedy_decode(self.net_, source, source_flags(source), max_len=self.max_output_tokens)
        tokens = decode_extended(hyp.tokens, self.vocab_, source.oov_list)
        return " ".join(_finish_question(tokens))

    # -------------------------------------------------------- stepwise API

    def start_state(self, source: EncodedSource) -> tuple[DecoderState, Encoded]:
        """Initial decoder state for stepwise decoding of one source."""
        self._check_fitted()
        self.net_.eval()
        with torch.no_grad():
            enc, state = self.net_.encode(_single_batch(source, source_flags(source)))
        return state, enc

    def decode_step(self, state: DecoderState, enc: Encoded) -> tuple[DecodeStepOutput, DecoderState]:
        """One decoder step: distributions over vocabulary, source
        positions, and the extended mixture, plus the advanced state."""
        self._check_fitted()
        with torch.no_grad():
            return self.net_.step(state, enc)

    # ------------------------------------------------------------ persist

    def save(self, directory, extra: dict | None = None) -> None:
        self._check_fitted()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.vocab_.save(directory / "vocab.txt")
        torch.save(self.net_.state_dict(), directory / "weights.pt")
        manifest = {
            "kind": "followup-generator",
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
    def load(cls, directory) -> "FollowupGenerator":
        directory = Path(directory)
        with open(directory / "manifest.json", encoding="utf-8") as f:
            manifest = json.load(f)
        if manifest.get("kind") != "followup-generator":
            raise ValueError(f"{directory} does not hold a followup-generator checkpoint")
        model = cls(**manifest["params"])
        model.vocab_ = Vocab.load(directory / "vocab.txt")
        model.net_ = PointerGeneratorNet(model.vocab_.size, model.embed_dim, model.hidden_dim, model.coverage)
        model.net_.load_state_dict(torch.load(directory / "weights.pt", weights_only=True))
        model.net_.eval()
        model.steps_ = manifest.get("steps", 0)
        model.report_ = manifest.get("report", {})
        return model


def write_generated_followups(pairs: Sequence[tuple[str, str]], path) -> None:
    """Line-delimited (id, question text) records."""
    with open(path, "w", encoding="utf-8") as f:
        for example_id, question in pairs:
            f.write(json.dumps({"example_id": example_id, "question": question}, ensure_ascii=False, sort_keys=True) + "\n")


def read_generated_followups(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                out[str(d["example_id"])] = str(d["question"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad followup line: {exc!r}") from exc
    return out
