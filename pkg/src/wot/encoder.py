"""Question text to initial embedding.

Tokenization is deliberately simple: lowercase, split on whitespace and
punctuation (punctuation kept as tokens), and split multi-digit numbers into
single digits so the vocabulary stays tiny and numeric questions generalize
across magnitudes.  The sentence embedding is the mean of the token
embedding rows.  Mean pooling is order-insensitive by construction; that
loss of word order is a documented limitation of this encoder.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from typing import Sequence

from wot.tensor import Tensor, embedding_mean

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"

# letters | single digit | any other non-space character
_TOKEN_RE = re.compile(r"[a-z]+|[0-9]|[^\sa-z0-9]")


class Vocab:
    """Immutable token <-> id mapping with reserved ids 0=PAD, 1=UNK."""

    def __init__(self, tokens: Sequence[str]):
        if list(tokens[:2]) != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocab must start with the reserved PAD/UNK tokens")
        self.id_to_token: tuple[str, ...] = tuple(tokens)
        self.token_to_id: dict[str, int] = {
            t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("vocab contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def ids(self, tokens: Sequence[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK) for t in tokens]

    def to_json(self) -> str:
        return json.dumps(list(self.id_to_token), ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        return cls(json.loads(text))


def tokenize(text: str) -> list[str]:
    """Lowercased tokens; deterministic and idempotent on its own output."""
    return _TOKEN_RE.findall(text.lower())


def build_vocab(corpus: Sequence[str], cap: int = 2048) -> Vocab:
    """Most frequent tokens up to ``cap`` (reserved ids included in the cap).

    Ties break lexicographically, so construction is stable for a fixed
    corpus and cap.
    """
    if not corpus:
        raise ValueError("build_vocab: empty corpus")
    if cap < 2:
        raise ValueError("build_vocab: cap must leave room for PAD and UNK")
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(tokenize(text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: cap - 2]]
    return Vocab([PAD_TOKEN, UNK_TOKEN] + kept)


def text_ids(text: str, vocab: Vocab) -> list[int]:
    return vocab.ids(tokenize(text))


def encode(id_batches: Sequence[Sequence[int]], table: Tensor) -> Tensor:
    """Mean-pooled embeddings, one row per id list; participates in autodiff."""
    if not id_batches:
        raise ValueError("encode: empty batch")
    return embedding_mean(table, id_batches)
