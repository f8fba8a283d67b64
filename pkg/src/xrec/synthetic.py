"""Offline synthetic review corpus.

Ratings follow additive user/item biases plus noise, so rating prediction
can generalize to unseen pairs.  Explanation sentiment is a deterministic
function of the rating: each explanation contains exactly one sentiment
word drawn from the rating's band, and those words carry matching
polarities in the bundled lexicon.  That makes the corpus suitable for
measuring rating-explanation coherence mechanically.
"""

from __future__ import annotations

import json
import random

from .corpus import InteractionRecord

SENTIMENT_WORDS = {
    1: ("terrible", "awful", "horrible", "dreadful"),
    2: ("poor", "disappointing", "mediocre", "shabby"),
    3: ("okay", "average", "ordinary", "passable"),
    4: ("good", "nice", "pleasant", "solid"),
    5: ("great", "excellent", "wonderful", "fantastic"),
}

FEATURES = (
    "pool", "room", "lobby", "location", "staff", "breakfast", "wifi",
    "view", "bed", "gym", "parking", "bathroom", "restaurant", "balcony",
)

# Filler vocabulary stays out of the lexicon so only the sentiment word
# drives the lexicon score.
TEMPLATES = (
    "the {feature} is {word}",
    "the {feature} was {word}",
    "{feature} is really {word}",
    "overall the {feature} seemed {word}",
)


def generate_records(
    n_users: int = 40,
    n_items: int = 40,
    n_records: int = 1000,
    seed: int = 0,
    rating_noise: float = 0.3,
) -> list[InteractionRecord]:
    """Sample distinct (user, item) pairs with biased ratings and templated text.

    rating_noise sets the per-pair gaussian jitter on top of the additive
    user/item biases; larger values make ratings on unseen pairs
    irreducibly uncertain.
    """
    if n_records > n_users * n_items:
        raise ValueError(
            f"cannot sample {n_records} distinct pairs from a {n_users}x{n_items} grid"
        )
    rng = random.Random(seed)
    user_bias = [rng.uniform(-1.5, 1.5) for _ in range(n_users)]
    item_bias = [rng.uniform(-1.5, 1.5) for _ in range(n_items)]
    item_features = [rng.sample(FEATURES, 2) for _ in range(n_items)]

    pairs = rng.sample(range(n_users * n_items), n_records)
    records = []
    for p in pairs:
        u, i = divmod(p, n_items)
        raw = 3.0 + user_bias[u] + item_bias[i] + rng.gauss(0.0, rating_noise)
        rating = min(5, max(1, round(raw)))
        feature = rng.choice(item_features[i])
        word = rng.choice(SENTIMENT_WORDS[rating])
        text = rng.choice(TEMPLATES).format(feature=feature, word=word)
        records.append(
            InteractionRecord(
                user_id=f"u{u}",
                item_id=f"i{i}",
                rating=rating,
                explanation=text,
                features=(feature,),
            )
        )
    return records


def write_records(records: list[InteractionRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(
                json.dumps(
                    {
                        "user": r.user_id,
                        "item": r.item_id,
                        "rating": r.rating,
                        "explanation": r.explanation,
                        "feature": list(r.features),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
