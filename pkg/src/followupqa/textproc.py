"""Text normalization, tokenization, vocabulary, and copy-aware encoding.

Everything in this module is deterministic and pure; all models and
metrics share these primitives so that answer matching, weak labels,
and copy targets stay aligned.
"""

from __future__ import annotations

import hashlib
import re
import string
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

PAD = "<pad>"
UNK = "<unk>"
BOS = "<bos>"
EOS = "<eos>"
SEP = "<sep>"
RESERVED_TOKENS = (PAD, UNK, BOS, EOS, SEP)
PAD_ID, UNK_ID, BOS_ID, EOS_ID, SEP_ID = range(len(RESERVED_TOKENS))

_PUNCT = set(string.punctuation)
_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace.

    This is the SQuAD/HotpotQA answer-normalization convention; EM/F1 and
    the bridge filter all score against this form.
    """
    text = text.lower()
    text = "".join(ch for ch in text if ch not in _PUNCT)
    text = _ARTICLE_RE.sub(" ", text)
    return " ".join(text.split())


def tokenize(text: str) -> list[str]:
    """Lowercased word/punctuation tokens; whitespace is discarded."""
    return [m.group().lower() for m in _TOKEN_RE.finditer(text)]


def tokenize_with_offsets(text: str) -> list[tuple[str, int, int]]:
    """Like :func:`tokenize` but each token carries [start, end) character
    offsets into the original string."""
    return [(m.group().lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def _normalized_chars(text: str) -> list[tuple[str, int]]:
    """Normalized characters of ``text`` paired with the index of the raw
    character each one came from.

    Joining the characters reproduces ``normalize_answer(text)`` exactly
    (property-tested); the origin map lets substring matches in normalized
    space be projected back to raw character offsets.
    """
    # lowercase and drop punctuation, keeping raw origins
    chars: list[tuple[str, int]] = []
    for i, ch in enumerate(text):
        for low in ch.lower():
            if low in _PUNCT:
                continue
            chars.append((low, i))
    # article removal: each whole-word article becomes a single space
    joined = "".join(c for c, _ in chars)
    replaced: list[tuple[str, int]] = []
    prev_end = 0
    for m in _ARTICLE_RE.finditer(joined):
        replaced.extend(chars[prev_end : m.start()])
        replaced.append((" ", chars[m.start()][1]))
        prev_end = m.end()
    replaced.extend(chars[prev_end:])
    # collapse whitespace runs to one space, strip both ends
    out: list[tuple[str, int]] = []
    pending = False
    for ch, origin in replaced:
        if ch.isspace():
            pending = bool(out)
            continue
        if pending:
            out.append((" ", origin))
            pending = False
        out.append((ch, origin))
    return out


def find_normalized_span(text: str, answer: str) -> Optional[tuple[int, int]]:
    """Locate ``answer`` inside ``text`` under answer normalization.

    Returns [start, end) character offsets into the raw ``text`` covering
    the first normalized-substring match, or None when the normalized
    answer is empty or absent.
    """
    target = normalize_answer(answer)
    if not target:
        return None
    mapped = _normalized_chars(text)
    haystack = "".join(ch for ch, _ in mapped)
    pos = haystack.find(target)
    if pos < 0:
        return None
    start = mapped[pos][1]
    end = mapped[pos + len(target) - 1][1] + 1
    return start, end


class Vocab:
    """Fixed token inventory with reserved control tokens at ids 0..4."""

    def __init__(self, tokens: Sequence[str]):
        for tok in RESERVED_TOKENS:
            if tok in tokens:
                raise ValueError(f"reserved token {tok!r} may not be listed explicitly")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self._id_to_token = list(RESERVED_TOKENS) + list(tokens)
        self._token_to_id = {t: i for i, t in enumerate(self._id_to_token)}

    @property
    def size(self) -> int:
        return len(self._id_to_token)

    def id(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def token(self, idx: int) -> str:
        return self._id_to_token[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def save(self, path) -> None:
        """One token per line after a header; line order defines the ids
        following the reserved block."""
        with open(path, "w", encoding="utf-8") as f:
            f.write("#! reserved: " + " ".join(RESERVED_TOKENS) + "\n")
            for tok in self._id_to_token[len(RESERVED_TOKENS) :]:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        tokens = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if line.startswith("#!"):
                    continue
                tokens.append(line)
        return cls(tokens)

    def sha256(self) -> str:
        h = hashlib.sha256()
        for tok in self._id_to_token:
            h.update(tok.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()


def build_vocab(corpora: Iterable[Sequence[str]], max_size: int) -> Vocab:
    """Most frequent tokens first, capped at ``max_size`` total entries.

    Frequency ties break toward earlier first occurrence, which keeps the
    vocabulary reproducible across runs.
    """
    if max_size <= len(RESERVED_TOKENS):
        raise ValueError(f"max_size must exceed the {len(RESERVED_TOKENS)} reserved tokens")
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    for seq in corpora:
        for tok in seq:
            counts[tok] += 1
            if tok not in first_seen:
                first_seen[tok] = len(first_seen)
    ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
    return Vocab(ranked[: max_size - len(RESERVED_TOKENS)])


@dataclass(frozen=True)
class EncodedSource:
    """A source token sequence in two id spaces.

    ``ids`` maps out-of-vocabulary tokens to UNK; ``extended_ids`` gives
    each distinct OOV surface form a temporary id starting at the vocab
    size, so a copy mechanism can address it. ``oov_list`` holds those
    surface forms in first-appearance order.
    """

    ids: tuple[int, ...]
    extended_ids: tuple[int, ...]
    oov_list: tuple[str, ...]

    def __post_init__(self):
        if len(self.ids) != len(self.extended_ids):
            raise ValueError("ids and extended_ids must have equal length")


def encode_source(tokens: Sequence[str], vocab: Vocab) -> EncodedSource:
    ids = []
    extended = []
    oov: list[str] = []
    oov_index: dict[str, int] = {}
    for tok in tokens:
        idx = vocab.id(tok)
        if idx == UNK_ID and tok != UNK:
            if tok not in oov_index:
                oov_index[tok] = vocab.size + len(oov)
                oov.append(tok)
            ids.append(UNK_ID)
            extended.append(oov_index[tok])
        else:
            ids.append(idx)
            extended.append(idx)
    return EncodedSource(tuple(ids), tuple(extended), tuple(oov))


def decode_extended(ids: Sequence[int], vocab: Vocab, oov_list: Sequence[str]) -> list[str]:
    """Inverse of :func:`encode_source` over extended ids."""
    out = []
    for idx in ids:
        if idx < vocab.size:
            out.append(vocab.token(idx))
        else:
            out.append(oov_list[idx - vocab.size])
    return out


def encode_target(tokens: Sequence[str], vocab: Vocab, source: EncodedSource) -> list[int]:
    """Target-side extended ids: in-vocab tokens keep their id, tokens that
    only occur in the source use that source's temporary id, anything else
    falls back to UNK."""
    oov_index = {tok: vocab.size + i for i, tok in enumerate(source.oov_list)}
    out = []
    for tok in tokens:
        idx = vocab.id(tok)
        if idx == UNK_ID and tok != UNK:
            out.append(oov_index.get(tok, UNK_ID))
        else:
            out.append(idx)
    return out


def token_flags_for_span(offsets: Sequence[tuple[str, int, int]], span: tuple[int, int]) -> list[int]:
    """1 for each token overlapping the [start, end) character span."""
    start, end = span
    return [1 if s < end and e > start else 0 for _, s, e in offsets]
