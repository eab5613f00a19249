"""Encoder backends for the span extractor and the relevance controller.

A backend turns a (question, premise) token-id pair sequence into one
hidden vector per position; task heads on top score spans or classes.
Backends are interchangeable behind this contract, so a desk-scale
trainable encoder and a full-size pretrained bidirectional transformer
can swap without touching the task code.
"""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn

from .textproc import PAD_ID


class RnnPairEncoder(nn.Module):
    """Word embeddings plus a segment channel, read by a single BiLSTM."""

    def __init__(self, vocab_size: int, embed_dim: int, hidden_dim: int, max_len: int):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, embed_dim, padding_idx=PAD_ID)
        self.segment = nn.Embedding(2, embed_dim)
        self.rnn = nn.LSTM(embed_dim, hidden_dim, batch_first=True, bidirectional=True)
        self.hidden_size = 2 * hidden_dim

    def forward(self, ids: Tensor, segments: Tensor, mask: Tensor) -> Tensor:
        emb = self.embed(ids) + self.segment(segments)
        lengths = mask.sum(dim=1)
        packed = nn.utils.rnn.pack_padded_sequence(
            emb, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        out, _ = self.rnn(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True, total_length=ids.shape[1])
        return out


class TransformerPairEncoder(nn.Module):
    """A small self-attention encoder; the desk-scale stand-in for the
    pretrained bidirectional transformer used at full scale."""

    def __init__(
        self,
        vocab_size: int,
        embed_dim: int,
        hidden_dim: int,
        max_len: int,
        num_layers: int = 2,
        num_heads: int = 4,
    ):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, embed_dim, padding_idx=PAD_ID)
        self.segment = nn.Embedding(2, embed_dim)
        self.position = nn.Embedding(max_len, embed_dim)
        self.scale = math.sqrt(embed_dim)
        layer = nn.TransformerEncoderLayer(
            d_model=embed_dim,
            nhead=num_heads,
            dim_feedforward=2 * hidden_dim,
            dropout=0.0,
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=num_layers, enable_nested_tensor=False)
        self.hidden_size = embed_dim

    def forward(self, ids: Tensor, segments: Tensor, mask: Tensor) -> Tensor:
        positions = torch.arange(ids.shape[1], device=ids.device).unsqueeze(0).expand_as(ids)
        emb = self.embed(ids) * self.scale + self.segment(segments) + self.position(positions)
        out = self.encoder(emb, src_key_padding_mask=~mask)
        return out * mask.unsqueeze(-1)


BACKENDS = {
    "rnn": RnnPairEncoder,
    "transformer": TransformerPairEncoder,
}


def build_backend(name: str, vocab_size: int, embed_dim: int, hidden_dim: int, max_len: int) -> nn.Module:
    try:
        cls = BACKENDS[name]
    except KeyError:
        known = ", ".join(sorted(BACKENDS))
        raise ValueError(f"unknown encoder backend {name!r} (known: {known})") from None
    return cls(vocab_size, embed_dim, hidden_dim, max_len)
