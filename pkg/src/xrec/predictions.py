"""Prediction file schema: one JSON object per evaluated (user, item) pair."""

from __future__ import annotations

import json
from dataclasses import dataclass


@dataclass(frozen=True)
class PredictionRow:
    user: str
    item: str
    rating_true: int
    rating_pred: float
    explanation_true: str
    explanation_pred: str
    features: tuple[str, ...] = ()


def write_predictions(rows: list[PredictionRow], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(
                json.dumps(
                    {
                        "user": r.user,
                        "item": r.item,
                        "rating_true": r.rating_true,
                        "rating_pred": r.rating_pred,
                        "explanation_true": r.explanation_true,
                        "explanation_pred": r.explanation_pred,
                        "features": list(r.features),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_predictions(path: str) -> list[PredictionRow]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rows.append(
                    PredictionRow(
                        user=str(obj["user"]),
                        item=str(obj["item"]),
                        rating_true=int(obj["rating_true"]),
                        rating_pred=float(obj["rating_pred"]),
                        explanation_true=str(obj["explanation_true"]),
                        explanation_pred=str(obj["explanation_pred"]),
                        features=tuple(obj.get("features", ())),
                    )
                )
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: invalid prediction row: {exc}") from exc
    return rows
