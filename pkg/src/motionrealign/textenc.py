"""Frozen bag-of-words text encoder with writable placeholder slots."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from .diffcore import autograd as ag
from .diffcore.autograd import Tensor

UNK = "<unk>"
PLACEHOLDER = "<*>"
_TOKEN_RE = re.compile(r"<\*\d*>|[a-z0-9']+")


def tokenize_words(text: str) -> list[str]:
    """Lowercase words; ``<*>`` / ``<*k>`` markers survive as single tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocabulary:
    words: list[str]
    table: np.ndarray
    n_placeholders: int = 4

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.words)}
        if self.table.shape[0] != len(self.words):
            raise ValueError("embedding table rows must match vocabulary size")

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def placeholder_word(self, slot: int = 0) -> str:
        if not 0 <= slot < self.n_placeholders:
            raise ValueError(f"placeholder slot {slot} out of range")
        return PLACEHOLDER if slot == 0 else f"<*{slot}>"

    def placeholder_index(self, slot: int = 0) -> int:
        return self.index[self.placeholder_word(slot)]

    def tokenize(self, text: str) -> list[int]:
        unk = self.index[UNK]
        return [self.index.get(w, unk) for w in tokenize_words(text)]

    def frozen_digest(self) -> str:
        """Hash of every row except the placeholder slots."""
        keep = [i for w, i in self.index.items() if not w.startswith("<*")]
        return hashlib.sha256(np.ascontiguousarray(self.table[sorted(keep)]).tobytes()).hexdigest()


def build_vocabulary(captions: list[str], dim: int = 64, seed: int = 0,
                     n_placeholders: int = 4) -> Vocabulary:
    """Sorted word list plus UNK and placeholder rows; table ~ N(0, 1/dim)."""
    words = sorted({w for c in captions for w in tokenize_words(c) if not w.startswith("<*")})
    specials = [UNK, PLACEHOLDER] + [f"<*{k}>" for k in range(1, n_placeholders)]
    words = specials + words
    rng = np.random.default_rng([seed, 4242])
    table = rng.standard_normal((len(words), dim)) / np.sqrt(dim)
    return Vocabulary(words, table, n_placeholders)


def tokenize(text: str, vocabulary: Vocabulary) -> list[int]:
    return vocabulary.tokenize(text)


def embed_tokens(tokens: list[int], vocabulary: Vocabulary,
                 placeholder_override: Tensor | np.ndarray | None = None,
                 slot: int = 0) -> Tensor:
    """Mean-pool token rows then L2-normalise.

    ``placeholder_override`` replaces the placeholder row and may be a
    gradient-carrying tensor; the table itself is never touched.
    """
    if not tokens:
        raise ValueError("cannot embed an empty token list; use the null condition instead")
    ph = vocabulary.placeholder_index(slot)
    rows = np.sort(np.asarray(tokens))  # fixed summation order, so pooling is order-free
    base = vocabulary.table[rows[rows != ph]].sum(axis=0) if np.any(rows != ph) \
        else np.zeros(vocabulary.dim)
    n_ph = int(np.sum(rows == ph))
    if n_ph and placeholder_override is not None:
        pooled = (ag.as_tensor(placeholder_override) * float(n_ph) + base) * (1.0 / len(tokens))
    else:
        pooled = Tensor((base + n_ph * vocabulary.table[ph]) / len(tokens))
    return ag.l2_normalize(pooled, eps=0.0)


def embed_text(text_or_tokens, vocabulary: Vocabulary, placeholder_override=None,
               slot: int = 0) -> np.ndarray:
    tokens = vocabulary.tokenize(text_or_tokens) if isinstance(text_or_tokens, str) \
        else list(text_or_tokens)
    return embed_tokens(tokens, vocabulary, placeholder_override, slot).data


def embed_batch(texts: list[str], vocabulary: Vocabulary) -> np.ndarray:
    return np.stack([embed_text(t, vocabulary) for t in texts])


def all_captions_vocabulary(dim: int = 64, seed: int = 0) -> Vocabulary:
    """Vocabulary over every caption the corpus can render plus template words."""
    from .corpus import all_captions

    return build_vocabulary(all_captions(), dim, seed)
