import pytest

from xrec.backbone import Backbone, BackboneConfig
from xrec.bpe import train_bpe
from xrec.corpus import InteractionRecord
from xrec.pipeline import PromptSet


def tiny_corpus() -> list[InteractionRecord]:
    rows = [
        ("u1", "i1", 5, "the pool is great", ("pool",)),
        ("u1", "i2", 1, "the room was terrible", ("room",)),
        ("u2", "i1", 4, "the lobby is nice", ("lobby",)),
        ("u2", "i2", 2, "the wifi was poor", ("wifi",)),
        ("u3", "i1", 3, "the view is okay", ("view",)),
        ("u3", "i3", 5, "breakfast is excellent", ("breakfast",)),
        ("u4", "i2", 1, "the bed was awful", ("bed",)),
        ("u4", "i3", 4, "the staff is pleasant", ("staff",)),
        ("u1", "i3", 3, "the gym is average", ("gym",)),
        ("u2", "i3", 2, "parking was disappointing", ("parking",)),
        ("u3", "i2", 4, "the location is good", ("location",)),
        ("u4", "i1", 5, "the balcony is wonderful", ("balcony",)),
    ]
    return [
        InteractionRecord(user_id=u, item_id=i, rating=r, explanation=e, features=f)
        for u, i, r, e, f in rows
    ]


@pytest.fixture(scope="session")
def records():
    return tiny_corpus()


@pytest.fixture(scope="session")
def prompts():
    return PromptSet()


@pytest.fixture(scope="session")
def bpe(records, prompts):
    texts = [r.explanation for r in records]
    texts += [f for r in records for f in r.features]
    texts += prompts.training_texts()
    return train_bpe(texts, 220)


@pytest.fixture()
def tiny_model(bpe, records):
    users = sorted({r.user_id for r in records})
    items = sorted({r.item_id for r in records})
    cfg = BackboneConfig(
        vocab_size=bpe.vocab_size,
        n_users=len(users),
        n_items=len(items),
        d_model=16,
        n_layers=2,
        n_heads=2,
        ffn_width=32,
        context_length=48,
    )
    return Backbone(cfg, users, items, seed=1)
