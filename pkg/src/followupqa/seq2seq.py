"""Pointer-generator sequence-to-sequence core.

A bidirectional recurrent encoder reads the source; a unidirectional
recurrent decoder with additive attention emits tokens. At every step a
learned gate ``p_gen`` mixes the decoder's vocabulary distribution with
the attention distribution projected onto source tokens, so the model may
either generate a word or copy one from the input, including words outside
the vocabulary (via temporary extended ids).

Both the followup generator and the weak-label question generator are
thin wrappers around this module; they differ only in how the source
sequence and its per-token marker flags are built.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import torch
from torch import Tensor, nn

from .textproc import BOS_ID, EOS_ID, PAD_ID, UNK_ID, EncodedSource, Vocab, encode_target

_LOG_EPS = 1e-12


def copy_mixture(
    vocab_dist: Tensor,
    attention: Tensor,
    p_gen: Tensor,
    extended_ids: Tensor,
    num_oov: int,
) -> Tensor:
    """Mix generation and copy distributions over the extended vocabulary.

    mixture(w) = p_gen * vocab_dist(w) + (1 - p_gen) * sum of attention on
    source positions holding w. Source positions address the output through
    ``extended_ids``, so out-of-vocabulary source tokens receive probability
    through their temporary ids.
    """
    gen = p_gen * vocab_dist
    if num_oov > 0:
        zeros = gen.new_zeros(gen.shape[0], num_oov)
        gen = torch.cat([gen, zeros], dim=1)
    return gen.scatter_add(1, extended_ids, (1.0 - p_gen) * attention)


@dataclass(frozen=True)
class DecodeStepOutput:
    """Everything one decoder step produces, before a token is chosen."""

    vocab_dist: Tensor  # [B, V]
    attention: Tensor  # [B, L]
    p_gen: Tensor  # [B, 1]
    mixture: Tensor  # [B, V + num_oov]


class EncodedBatch(NamedTuple):
    ids: Tensor  # [B, L] vocab-space ids (UNK for OOV)
    flags: Tensor  # [B, L] 0/1 marker channel
    extended_ids: Tensor  # [B, L]
    mask: Tensor  # [B, L] bool, True on real tokens
    num_oov: int


@dataclass(frozen=True)
class DecoderState:
    prev_token: Tensor  # [B] vocab-space id of the previous output token
    hidden: Tensor  # [B, H]
    cell: Tensor  # [B, H]
    context: Tensor  # [B, 2H]
    coverage: Optional[Tensor]  # [B, L] cumulative attention, or None

    def with_prev_token(self, token: Tensor) -> "DecoderState":
        return replace(self, prev_token=token)


class Encoded(NamedTuple):
    batch: EncodedBatch
    outputs: Tensor  # [B, L, 2H]
    proj: Tensor  # [B, L, H] pre-projected attention features


class PointerGeneratorNet(nn.Module):
    def __init__(
        self,
        vocab_size: int,
        embed_dim: int,
        hidden_dim: int,
        coverage: bool = False,
    ):
        super().__init__()
        self.vocab_size = vocab_size
        self.hidden_dim = hidden_dim
        self.coverage = coverage
        self.embed = nn.Embedding(vocab_size, embed_dim, padding_idx=PAD_ID)
        self.flag_embed = nn.Embedding(2, embed_dim)
        self.encoder = nn.LSTM(embed_dim, hidden_dim, batch_first=True, bidirectional=True)
        self.reduce_h = nn.Linear(2 * hidden_dim, hidden_dim)
        self.reduce_c = nn.Linear(2 * hidden_dim, hidden_dim)
        self.cell = nn.LSTMCell(embed_dim + 2 * hidden_dim, hidden_dim)
        self.attn_src = nn.Linear(2 * hidden_dim, hidden_dim, bias=False)
        self.attn_dec = nn.Linear(hidden_dim, hidden_dim)
        if coverage:
            self.attn_cov = nn.Linear(1, hidden_dim, bias=False)
        self.attn_v = nn.Linear(hidden_dim, 1, bias=False)
        self.out = nn.Linear(3 * hidden_dim, vocab_size)
        self.p_gen_lin = nn.Linear(2 * hidden_dim + hidden_dim + embed_dim + 2 * hidden_dim, 1)

    def encode(self, batch: EncodedBatch) -> tuple[Encoded, DecoderState]:
        emb = self.embed(batch.ids) + self.flag_embed(batch.flags)
        lengths = batch.mask.sum(dim=1)
        packed = nn.utils.rnn.pack_padded_sequence(
            emb, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        outputs, (h_n, c_n) = self.encoder(packed)
        outputs, _ = nn.utils.rnn.pad_packed_sequence(
            outputs, batch_first=True, total_length=batch.ids.shape[1]
        )
        h0 = torch.tanh(self.reduce_h(torch.cat([h_n[0], h_n[1]], dim=1)))
        c0 = torch.tanh(self.reduce_c(torch.cat([c_n[0], c_n[1]], dim=1)))
        context0 = outputs.new_zeros(outputs.shape[0], 2 * self.hidden_dim)
        coverage0 = outputs.new_zeros(batch.mask.shape) if self.coverage else None
        state = DecoderState(
            prev_token=torch.full((outputs.shape[0],), BOS_ID, dtype=torch.long, device=outputs.device),
            hidden=h0,
            cell=c0,
            context=context0,
            coverage=coverage0,
        )
        return Encoded(batch, outputs, self.attn_src(outputs)), state

    def step(self, state: DecoderState, enc: Encoded) -> tuple[DecodeStepOutput, DecoderState]:
        """Advance the decoder one step, consuming ``state.prev_token``.

        The caller chooses the next token and installs it with
        ``with_prev_token`` before calling again.
        """
        emb = self.embed(state.prev_token)
        x = torch.cat([emb, state.context], dim=1)
        hidden, cell = self.cell(x, (state.hidden, state.cell))
        feats = enc.proj + self.attn_dec(hidden).unsqueeze(1)
        if self.coverage:
            feats = feats + self.attn_cov(state.coverage.unsqueeze(-1))
        scores = self.attn_v(torch.tanh(feats)).squeeze(-1)
        scores = scores.masked_fill(~enc.batch.mask, float("-inf"))
        attention = torch.softmax(scores, dim=1)
        context = torch.bmm(attention.unsqueeze(1), enc.outputs).squeeze(1)
        vocab_dist = torch.softmax(self.out(torch.cat([hidden, context], dim=1)), dim=1)
        p_gen = torch.sigmoid(self.p_gen_lin(torch.cat([context, hidden, x], dim=1)))
        mixture = copy_mixture(vocab_dist, attention, p_gen, enc.batch.extended_ids, enc.batch.num_oov)
        coverage = state.coverage + attention if self.coverage else None
        out = DecodeStepOutput(vocab_dist=vocab_dist, attention=attention, p_gen=p_gen, mixture=mixture)
        new_state = DecoderState(
            prev_token=state.prev_token, hidden=hidden, cell=cell, context=context, coverage=coverage
        )
        return out, new_state


@dataclass(frozen=True)
class Seq2SeqRow:
    """One training pair, fully encoded."""

    source: EncodedSource
    flags: tuple[int, ...]
    target_in: tuple[int, ...]  # BOS + target tokens, vocab-space ids
    target_out: tuple[int, ...]  # target tokens + EOS, extended ids


def make_row(
    source: EncodedSource,
    flags: Sequence[int],
    target_tokens: Sequence[str],
    vocab: Vocab,
    max_target_tokens: int,
) -> Seq2SeqRow:
    tokens = list(target_tokens)[:max_target_tokens]
    in_ids = [BOS_ID] + vocab.encode(tokens)
    out_ids = encode_target(tokens, vocab, source) + [EOS_ID]
    return Seq2SeqRow(source, tuple(flags), tuple(in_ids), tuple(out_ids))


def collate(rows: Sequence[Seq2SeqRow], device=None) -> tuple[EncodedBatch, Tensor, Tensor, Tensor]:
    src_len = max(len(r.source.ids) for r in rows)
    tgt_len = max(len(r.target_in) for r in rows)
    n = len(rows)
    ids = torch.full((n, src_len), PAD_ID, dtype=torch.long, device=device)
    flags = torch.zeros((n, src_len), dtype=torch.long, device=device)
    ext = torch.full((n, src_len), PAD_ID, dtype=torch.long, device=device)
    mask = torch.zeros((n, src_len), dtype=torch.bool, device=device)
    tgt_in = torch.full((n, tgt_len), PAD_ID, dtype=torch.long, device=device)
    tgt_out = torch.full((n, tgt_len), PAD_ID, dtype=torch.long, device=device)
    tgt_mask = torch.zeros((n, tgt_len), dtype=torch.bool, device=device)
    num_oov = 0
    for i, r in enumerate(rows):
        L = len(r.source.ids)
        ids[i, :L] = torch.tensor(r.source.ids, dtype=torch.long)
        flags[i, :L] = torch.tensor(r.flags, dtype=torch.long)
        ext[i, :L] = torch.tensor(r.source.extended_ids, dtype=torch.long)
        mask[i, :L] = True
        T = len(r.target_in)
        tgt_in[i, :T] = torch.tensor(r.target_in, dtype=torch.long)
        tgt_out[i, :T] = torch.tensor(r.target_out, dtype=torch.long)
        tgt_mask[i, :T] = True
        num_oov = max(num_oov, len(r.source.oov_list))
    return EncodedBatch(ids, flags, ext, mask, num_oov), tgt_in, tgt_out, tgt_mask


def sequence_nll(
    net: PointerGeneratorNet,
    batch: EncodedBatch,
    target_in: Tensor,
    target_out: Tensor,
    target_mask: Tensor,
    coverage_weight: float = 1.0,
) -> tuple[Tensor, Tensor]:
    """Teacher-forced negative log-likelihood per target token.

    Returns (loss, token NLL sum); the loss adds the coverage term when the
    network was built with coverage enabled.
    """
    enc, state = net.encode(batch)
    nll_sum = target_in.new_zeros((), dtype=enc.outputs.dtype)
    cov_sum = target_in.new_zeros((), dtype=enc.outputs.dtype)
    for t in range(target_in.shape[1]):
        state = state.with_prev_token(target_in[:, t])
        cov_before = state.coverage
        out, state = net.step(state, enc)
        p = out.mixture.gather(1, target_out[:, t : t + 1]).squeeze(1)
        step_nll = -torch.log(p + _LOG_EPS)
        step_mask = target_mask[:, t].to(step_nll.dtype)
        nll_sum = nll_sum + (step_nll * step_mask).sum()
        if net.coverage:
            overlap = torch.minimum(out.attention, cov_before).sum(dim=1)
            cov_sum = cov_sum + (overlap * step_mask).sum()
    tokens = target_mask.sum().clamp(min=1).to(nll_sum.dtype)
    loss = (nll_sum + coverage_weight * cov_sum) / tokens
    return loss, nll_sum


def train_seq2seq(
    net: PointerGeneratorNet,
    rows: Sequence[Seq2SeqRow],
    *,
    max_steps: int,
    batch_size: int,
    learning_rate: float,
    seed: int,
    coverage_weight: float = 1.0,
    log_every: int = 0,
    logger=None,
) -> list[float]:
    """Plain Adam loop over shuffled minibatches; returns the loss curve."""
    opt = torch.optim.Adam(net.parameters(), lr=learning_rate)
    rng = random.Random(seed)
    order = list(range(len(rows)))
    curve = []
    cursor = 0
    rng.shuffle(order)
    net.train()
    for step in range(max_steps):
        if cursor >= len(order):
            rng.shuffle(order)
            cursor = 0
        picks = order[cursor : cursor + batch_size]
        cursor += batch_size
        batch, tgt_in, tgt_out, tgt_mask = collate([rows[i] for i in picks])
        loss, _ = sequence_nll(net, batch, tgt_in, tgt_out, tgt_mask, coverage_weight)
        opt.zero_grad()
        loss.backward()
        opt.step()
        curve.append(float(loss.detach()))
        if log_every and logger and (step + 1) % log_every == 0:
            logger.info("step %d loss %.4f", step + 1, curve[-1])
    return curve


def perplexity(net: PointerGeneratorNet, rows: Sequence[Seq2SeqRow], batch_size: int = 64) -> float:
    """exp(mean per-token NLL) over rows, teacher-forced."""
    net.eval()
    total_nll = 0.0
    total_tokens = 0
    with torch.no_grad():
        for i in range(0, len(rows), batch_size):
            chunk = rows[i : i + batch_size]
            batch, tgt_in, tgt_out, tgt_mask = collate(chunk)
            _, nll_sum = sequence_nll(net, batch, tgt_in, tgt_out, tgt_mask, coverage_weight=0.0)
            total_nll += float(nll_sum)
            total_tokens += int(tgt_mask.sum())
    if total_tokens == 0:
        return float("inf")
    return float(torch.exp(torch.tensor(total_nll / total_tokens)))


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]  # extended-id space, BOS/EOS stripped
    logprob: float

    def score(self) -> float:
        return self.logprob / max(len(self.tokens), 1)


def _single_batch(source: EncodedSource, flags: Sequence[int]) -> EncodedBatch:
    ids = torch.tensor([source.ids], dtype=torch.long)
    flag_t = torch.tensor([tuple(flags)], dtype=torch.long)
    ext = torch.tensor([source.extended_ids], dtype=torch.long)
    mask = torch.ones_like(ids, dtype=torch.bool)
    return EncodedBatch(ids, flag_t, ext, mask, len(source.oov_list))


def _feed_id(token_id: int, vocab_size: int) -> int:
    # copied OOV tokens have no embedding; feed UNK back in
    return token_id if token_id < vocab_size else UNK_ID


def beam_search(
    net: PointerGeneratorNet,
    source: EncodedSource,
    flags: Sequence[int],
    *,
    beam_size: int,
    max_len: int,
) -> Hypothesis:
    """Length-normalized beam search over the mixture distribution.

    Returns the best finished hypothesis, falling back to the best
    unfinished one if nothing emits EOS within ``max_len`` steps.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if not source.ids:
        raise ValueError("cannot decode from an empty source")
    net.eval()
    with torch.no_grad():
        enc, state0 = net.encode(_single_batch(source, flags))
        beams: list[tuple[tuple[int, ...], float, DecoderState]] = [((), 0.0, state0)]
        finished: list[Hypothesis] = []
        for _ in range(max_len):
            if not beams:
                break
            stacked = _stack_states([s for _, _, s in beams])
            enc_b = _expand_encoded(enc, len(beams))
            out, new_state = net.step(stacked, enc_b)
            logp = torch.log(out.mixture + _LOG_EPS)
            k = min(beam_size, logp.shape[1])
            top = torch.topk(logp, k, dim=1)
            candidates = []
            for b, (tokens, score, _) in enumerate(beams):
                for j in range(k):
                    tok = int(top.indices[b, j])
                    candidates.append((score + float(top.values[b, j]), b, tok))
            candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
            next_beams = []
            for score, b, tok in candidates:
                tokens = beams[b][0]
                if tok == EOS_ID:
                    finished.append(Hypothesis(tokens, score))
                elif len(next_beams) < beam_size:
                    branch = _select_state(new_state, b).with_prev_token(
                        torch.tensor([_feed_id(tok, net.vocab_size)], dtype=torch.long)
                    )
                    next_beams.append((tokens + (tok,), score, branch))
            beams = next_beams
        if not finished:
            finished = [Hypothesis(tokens, score) for tokens, score, _ in beams]
        if not finished:
            return Hypothesis((), float("-inf"))
        return max(finished, key=lambda h: (h.score(), -len(h.tokens)))


def greedy_decode(
    net: PointerGeneratorNet,
    source: EncodedSource,
    flags: Sequence[int],
    *,
    max_len: int,
) -> Hypothesis:
    """Stepwise argmax over the mixture; reference for beam_size=1."""
    net.eval()
    with torch.no_grad():
        enc, state = net.encode(_single_batch(source, flags))
        tokens: list[int] = []
        logprob = 0.0
        for _ in range(max_len):
            out, state = net.step(state, enc)
            logp = torch.log(out.mixture + _LOG_EPS)
            tok = int(torch.argmax(logp, dim=1))
            logprob += float(logp[0, tok])
            if tok == EOS_ID:
                break
            tokens.append(tok)
            state = state.with_prev_token(
                torch.tensor([_feed_id(tok, net.vocab_size)], dtype=torch.long)
            )
        return Hypothesis(tuple(tokens), logprob)


def _stack_states(states: Sequence[DecoderState]) -> DecoderState:
    return DecoderState(
        prev_token=torch.cat([s.prev_token for s in states]),
        hidden=torch.cat([s.hidden for s in states]),
        cell=torch.cat([s.cell for s in states]),
        context=torch.cat([s.context for s in states]),
        coverage=torch.cat([s.coverage for s in states]) if states[0].coverage is not None else None,
    )


def _select_state(state: DecoderState, i: int) -> DecoderState:
    return DecoderState(
        prev_token=state.prev_token[i : i + 1],
        hidden=state.hidden[i : i + 1],
        cell=state.cell[i : i + 1],
        context=state.context[i : i + 1],
        coverage=state.coverage[i : i + 1] if state.coverage is not None else None,
    )


def _expand_encoded(enc: Encoded, n: int) -> Encoded:
    if enc.outputs.shape[0] == n:
        return enc
    batch = EncodedBatch(
        enc.batch.ids.expand(n, -1),
        enc.batch.flags.expand(n, -1),
        enc.batch.extended_ids.expand(n, -1),
        enc.batch.mask.expand(n, -1),
        enc.batch.num_oov,
    )
    return Encoded(batch, enc.outputs.expand(n, -1, -1), enc.proj.expand(n, -1, -1))
