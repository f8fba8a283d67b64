"""Dataset records, JSONL ingestion, and train/valid/test splitting."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .bpe import BpeModel

MIN_RATING = 1
MAX_RATING = 5


@dataclass(frozen=True)
class InteractionRecord:
    """One (user, item, rating, explanation, features) example."""

    user_id: str
    item_id: str
    rating: int
    explanation: str
    features: tuple[str, ...] = ()

    def __post_init__(self):
        if not isinstance(self.rating, int) or not MIN_RATING <= self.rating <= MAX_RATING:
            raise ValueError(f"rating must be an integer in [1,5], got {self.rating!r}")
        if not self.explanation.strip():
            raise ValueError("explanation must be non-empty after trimming")


def _coerce_features(raw) -> tuple[str, ...]:
    if raw is None:
        return ()
    if isinstance(raw, str):
        raw = [raw]
    return tuple(str(f).lower() for f in raw)


def record_from_json(obj: dict) -> InteractionRecord:
    rating = obj["rating"]
    if isinstance(rating, bool) or not isinstance(rating, int):
        raise ValueError(f"rating must be an integer, got {rating!r}")
    return InteractionRecord(
        user_id=str(obj["user"]),
        item_id=str(obj["item"]),
        rating=rating,
        explanation=str(obj["explanation"]),
        features=_coerce_features(obj.get("feature", obj.get("features"))),
    )


def ingest(path: str, format: str = "jsonl") -> list[InteractionRecord]:
    """Read and validate records from a JSONL file, preserving order.

    Any malformed or invalid line raises a ValueError naming the line number.
    An empty file yields an empty list.
    """
    if format != "jsonl":
        raise ValueError(f"unsupported format {format!r}")
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(record_from_json(obj))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: invalid record: {exc}") from exc
    return records


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint index lists covering all records exactly once."""

    train: tuple[int, ...]
    valid: tuple[int, ...]
    test: tuple[int, ...]
    repeat_id: int
    seed: int

    def __post_init__(self):
        n = len(self.train) + len(self.valid) + len(self.test)
        if len(set(self.train) | set(self.valid) | set(self.test)) != n:
            raise ValueError("split lists overlap or repeat indices")


def make_splits(n_records: int, seed: int, repeats: int = 5) -> list[DatasetSplit]:
    """Shuffle indices into 8:1:1 train/valid/test, repeated independently.

    |train| = round(0.8 * n); the remainder goes half to valid (floor) and
    the rest to test.  Deterministic: the same (n_records, seed) always
    yields the same splits.
    """
    if n_records < 10:
        raise ValueError(f"need at least 10 records to split 8:1:1, got {n_records}")
    splits = []
    for repeat_id in range(repeats):
        rng = random.Random(seed * 100003 + repeat_id)
        idx = list(range(n_records))
        rng.shuffle(idx)
        n_train = round(0.8 * n_records)
        n_valid = (n_records - n_train) // 2
        splits.append(
            DatasetSplit(
                train=tuple(idx[:n_train]),
                valid=tuple(idx[n_train : n_train + n_valid]),
                test=tuple(idx[n_train + n_valid :]),
                repeat_id=repeat_id,
                seed=seed,
            )
        )
    return splits


def save_split(split: DatasetSplit, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(
            {
                "seed": split.seed,
                "repeat_id": split.repeat_id,
                "train": list(split.train),
                "valid": list(split.valid),
                "test": list(split.test),
            },
            f,
        )


def load_split(path: str) -> DatasetSplit:
    with open(path, encoding="utf-8") as f:
        obj = json.load(f)
    return DatasetSplit(
        train=tuple(obj["train"]),
        valid=tuple(obj["valid"]),
        test=tuple(obj["test"]),
        repeat_id=int(obj["repeat_id"]),
        seed=int(obj["seed"]),
    )


def keyword_targets(record: InteractionRecord, bpe: BpeModel) -> list[list[int]]:
    """Encode each feature as one keyword target sequence.

    Records without features get a single UNK target so the keyword task is
    always defined.
    """
    if not record.features:
        return [[bpe.unk_id]]
    return [bpe.encode(feat) for feat in record.features]
