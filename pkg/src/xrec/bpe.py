"""Byte-pair-encoding tokenizer with reserved rating tokens.

Word-internal BPE: text is lowercased, whitespace-collapsed, and split into
words; each word becomes a character sequence terminated by an end-of-word
sentinel, and merge rules are learned greedily by pair frequency.  The five
rating words "1".."5" are injected as atomic single tokens before training
and are never produced by merging apart.
"""

from __future__ import annotations

import json
import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field

WORD_END = "</w>"

PAD = "<pad>"
UNK = "<unk>"
BOS = "<bos>"
EOS = "<eos>"
SPECIALS = (PAD, UNK, BOS, EOS)

RATING_WORDS = ("1", "2", "3", "4", "5")

_ws = re.compile(r"\s+")


def normalize(text: str) -> str:
    """Lowercase and collapse whitespace runs to single spaces."""
    return _ws.sub(" ", text.lower()).strip()


def _word_symbols(word: str) -> tuple[str, ...]:
    # Rating words are atomic: never decomposed, so never merged away.
    if word in RATING_WORDS:
        return (word + WORD_END,)
    return tuple(word) + (WORD_END,)


@dataclass
class BpeModel:
    """Learned merge rules plus token/id tables.

    Token ids are assigned in a fixed order (specials, rating tokens, base
    alphabet, merge outputs) so that training is reproducible byte for byte.
    """

    merges: list[tuple[str, str]]
    token_to_id: dict[str, int]
    id_to_token: list[str] = field(init=False)
    _word_cache: dict[str, list[int]] = field(init=False, default_factory=dict, repr=False)

    def __post_init__(self):
        self.id_to_token = [""] * len(self.token_to_id)
        for tok, i in self.token_to_id.items():
            self.id_to_token[i] = tok

    @property
    def vocab_size(self) -> int:
        return len(self.token_to_id)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    @property
    def bos_id(self) -> int:
        return self.token_to_id[BOS]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    def rating_token_ids(self) -> dict[int, int]:
        """Map each rating class 1..5 to its single atomic token id."""
        return {int(w): self.token_to_id[w + WORD_END] for w in RATING_WORDS}

    def _encode_word(self, word: str) -> list[int]:
        cached = self._word_cache.get(word)
        if cached is not None:
            return cached
        symbols = list(_word_symbols(word))
        for a, b in self.merges:
            i = 0
            while i < len(symbols) - 1:
                if symbols[i] == a and symbols[i + 1] == b:
                    symbols[i] = a + b
                    del symbols[i + 1]
                else:
                    i += 1
        ids = [self.token_to_id.get(s, self.token_to_id[UNK]) for s in symbols]
        self._word_cache[word] = ids
        return ids

    def encode(self, text: str) -> list[int]:
        """Encode text to token ids under the declared normalization."""
        out: list[int] = []
        for word in normalize(text).split(" "):
            if word:
                out.extend(self._encode_word(word))
        return out

    def decode(self, ids: list[int]) -> str:
        """Inverse of encode up to normalization; specials are dropped."""
        skip = {self.pad_id, self.bos_id, self.eos_id}
        pieces = []
        for i in ids:
            if i in skip:
                continue
            pieces.append(self.id_to_token[i] if i != self.unk_id else UNK + WORD_END)
        return "".join(pieces).replace(WORD_END, " ").strip()

    def save(self, path: str) -> None:
        payload = {
            "merges": [list(m) for m in self.merges],
            "token_to_id": self.token_to_id,
            "specials": list(SPECIALS),
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, ensure_ascii=False, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "BpeModel":
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
        return cls(
            merges=[tuple(m) for m in payload["merges"]],
            token_to_id={t: int(i) for t, i in payload["token_to_id"].items()},
        )

    def content_hash(self) -> str:
        """Stable hash of the serialized model, used to pin checkpoints."""
        blob = json.dumps(
            {"merges": self.merges, "token_to_id": self.token_to_id},
            sort_keys=True,
        ).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def train_bpe(texts: list[str], vocab_size: int) -> BpeModel:
    """Learn merge rules from a text corpus.

    Greedy most-frequent-pair merging until the vocabulary reaches
    vocab_size or no adjacent pair occurs at least twice.  Ties on count are
    broken toward the lexicographically smallest pair, which makes training
    order-independent and platform-deterministic.
    """
    if not texts:
        raise ValueError("BPE training corpus is empty")

    word_freq: Counter[str] = Counter()
    for text in texts:
        for word in normalize(text).split(" "):
            if word:
                word_freq[word] += 1

    seqs: list[tuple[tuple[str, ...], int]] = [
        (_word_symbols(w), c) for w, c in sorted(word_freq.items())
    ]

    base: set[str] = set()
    for symbols, _ in seqs:
        base.update(symbols)
    base.update(w + WORD_END for w in RATING_WORDS)

    floor = len(SPECIALS) + len(base)
    if vocab_size <= floor:
        raise ValueError(
            f"vocab_size {vocab_size} too small: need more than {floor} "
            f"({len(SPECIALS)} specials + {len(base)} base symbols)"
        )

    token_to_id: dict[str, int] = {t: i for i, t in enumerate(SPECIALS)}
    for w in RATING_WORDS:
        token_to_id[w + WORD_END] = len(token_to_id)
    for sym in sorted(base - set(token_to_id)):
        token_to_id[sym] = len(token_to_id)

    merges: list[tuple[str, str]] = []
    while len(token_to_id) < vocab_size:
        pair_counts: Counter[tuple[str, str]] = Counter()
        for symbols, freq in seqs:
            for a, b in zip(symbols, symbols[1:]):
                pair_counts[(a, b)] += freq
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        if best_count < 2:
            break
        pair = min(p for p, c in pair_counts.items() if c == best_count)
        merges.append(pair)
        a, b = pair
        merged = a + b
        new_seqs = []
        for symbols, freq in seqs:
            if a in symbols:
                out, i = [], 0
                while i < len(symbols):
                    if i < len(symbols) - 1 and symbols[i] == a and symbols[i + 1] == b:
                        out.append(merged)
                        i += 2
                    else:
                        out.append(symbols[i])
                        i += 1
                symbols = tuple(out)
            new_seqs.append((symbols, freq))
        seqs = new_seqs
        if merged not in token_to_id:
            token_to_id[merged] = len(token_to_id)

    return BpeModel(merges=merges, token_to_id=token_to_id)
