"""Text side of the model: tokenizer, vocabulary, recurrent encoder.

Numerals are detected during tokenization and all map to one shared <num>
vocabulary entry -- the model never sees digit strings, only *where* a
number sits in the text.  Question tokens come first, then passage tokens,
and a boolean mask remembers which are which.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

UNK = "<unk>"
NUM = "<num>"

_NUM_RE = re.compile(r"\d+(?:,\d{3})*(?:\.\d+)?")
_WORD_RE = re.compile(r"[a-z]+")
_CURRENCY = "$€£¥"


@dataclass(frozen=True)
class Tokenization:
    """Tokens of question + passage, lowercased, numbers kept verbatim
    (commas stripped).  num_positions/num_values list numeral occurrences
    in order; question_mask marks the question span."""

    tokens: tuple[str, ...]
    question_mask: tuple[bool, ...]
    num_positions: tuple[int, ...]
    num_values: tuple[float, ...]

    @property
    def values(self) -> tuple[float, ...]:
        return self.num_values


def _tokenize_part(text: str) -> list[str]:
    out = []
    i = 0
    lower = text.lower()
    while i < len(text):
        ch = lower[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _CURRENCY and i + 1 < len(text) and text[i + 1].isdigit():
            i += 1
            continue
        if ch.isdigit():
            m = _NUM_RE.match(text, i)
            out.append(m.group().replace(",", ""))
            i = m.end()
            continue
        m = _WORD_RE.match(lower, i)
        if m:
            out.append(m.group())
            i = m.end()
            continue
        out.append(ch)
        i += 1
    return out


def is_numeral(token: str) -> bool:
    return _NUM_RE.fullmatch(token) is not None


def tokenize(question: str, passage: str = "") -> Tokenization:
    q = _tokenize_part(question)
    p = _tokenize_part(passage)
    tokens = q + p
    mask = [True] * len(q) + [False] * len(p)
    positions = [i for i, t in enumerate(tokens) if is_numeral(t)]
    values = [float(tokens[i]) for i in positions]
    return Tokenization(tuple(tokens), tuple(mask), tuple(positions), tuple(values))


# --------------------------------------------------------------------------
# vocabulary


@dataclass
class Vocabulary:
    tokens: list[str] = field(default_factory=lambda: [UNK, NUM])
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        if UNK not in self.index or NUM not in self.index:
            raise ValueError(f"vocabulary must contain {UNK} and {NUM}")

    def __len__(self):
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        if is_numeral(token):
            return self.index[NUM]
        return self.index.get(token, self.index[UNK])

    def encode(self, tokens) -> np.ndarray:
        return np.array([self.id_of(t) for t in tokens], dtype=np.int64)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


def build_vocab(token_lists, max_size: int = 10000, min_freq: int = 1) -> Vocabulary:
    counts: dict[str, int] = {}
    for toks in token_lists:
        for t in toks:
            if not is_numeral(t):
                counts[t] = counts.get(t, 0) + 1
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocabulary([UNK, NUM] + kept[: max_size - 2])


# --------------------------------------------------------------------------
# encoder


@dataclass(frozen=True)
class EncodedContext:
    """Per-example encoder output plus the bookkeeping the decoder needs."""

    h_enc: Tensor  # (s, hidden)
    question_mask: np.ndarray  # (s,) bool
    num_positions: tuple[int, ...]
    num_values: tuple[float, ...]
    truncated: bool = False


class GruEncoder:
    """Token embedding + single-layer bidirectional GRU.

    ``hidden`` must be even: each direction contributes hidden/2 so the
    concatenated output matches the decoder width.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        hidden: int,
        seed: int = 0,
        dropout: float = 0.1,
        max_len: int = 256,
        dtype=np.float32,
    ):
        if hidden % 2:
            raise ValueError("encoder hidden size must be even")
        self.vocab = vocab
        self.hidden = hidden
        self.dropout = dropout
        self.max_len = max_len
        d = hidden // 2
        rng = np.random.default_rng(seed)

        def glorot(*shape):
            bound = np.sqrt(6.0 / sum(shape[-2:])) if len(shape) > 1 else 0.0
            if bound:
                return rng.uniform(-bound, bound, size=shape).astype(dtype)
            return np.zeros(shape, dtype=dtype)

        self.params: dict[str, Tensor] = {
            "enc.emb": ad.parameter((rng.standard_normal((len(vocab), hidden)) * 0.1).astype(dtype), "enc.emb"),
            "enc.fwd.W": ad.parameter(glorot(3 * d, hidden), "enc.fwd.W"),
            "enc.fwd.U": ad.parameter(glorot(3 * d, d), "enc.fwd.U"),
            "enc.fwd.b": ad.parameter(glorot(3 * d), "enc.fwd.b"),
            "enc.bwd.W": ad.parameter(glorot(3 * d, hidden), "enc.bwd.W"),
            "enc.bwd.U": ad.parameter(glorot(3 * d, d), "enc.bwd.U"),
            "enc.bwd.b": ad.parameter(glorot(3 * d), "enc.bwd.b"),
        }
        self._zero = Tensor(np.zeros(d, dtype=dtype))
        self._dtype = dtype

    def encode(self, tok: Tokenization, train: bool = False, drop_key=None) -> EncodedContext:
        tokens = tok.tokens
        truncated = False
        if len(tokens) > self.max_len:
            warnings.warn(f"input of {len(tokens)} tokens truncated to {self.max_len}")
            tokens = tokens[: self.max_len]
            truncated = True
        if not tokens:
            raise ValueError("cannot encode an empty token sequence")
        ids = self.vocab.encode(tokens)
        p = self.params
        emb = ad.embedding_rows(p["enc.emb"], ids)  # (s, hidden)
        wx_f = ad.gru_input_projection(emb, p["enc.fwd.W"], p["enc.fwd.b"])
        wx_b = ad.gru_input_projection(emb, p["enc.bwd.W"], p["enc.bwd.b"])
        s = len(tokens)
        h = self._zero
        fwd = []
        for t in range(s):
            h = ad.gru_cell_prewired(wx_f, t, h, p["enc.fwd.U"])
            fwd.append(h)
        h = self._zero
        bwd = [None] * s
        for t in reversed(range(s)):
            h = ad.gru_cell_prewired(wx_b, t, h, p["enc.bwd.U"])
            bwd[t] = h
        h_enc = ad.concat_cols(ad.stack_rows(fwd), ad.stack_rows(bwd))
        if train and self.dropout > 0.0 and drop_key is not None:
            h_enc = ad.dropout(h_enc, self.dropout, drop_key)
        q_mask = np.array(tok.question_mask[: len(tokens)], dtype=bool)
        positions = tuple(p_ for p_ in tok.num_positions if p_ < len(tokens))
        values = tuple(v for p_, v in zip(tok.num_positions, tok.num_values) if p_ < len(tokens))
        return EncodedContext(h_enc, q_mask, positions, values, truncated)
