"""Two-stage rating-then-explanation pipeline.

Stage one scores the five rating classes by reading the logits of the five
reserved rating tokens at the end of a [user, item, prompt] sequence and
softmaxing over exactly those five (so the class probabilities sum to one
by construction).  Stage two embeds that soft distribution as a convex
combination of the five rating-token embedding rows and splices it into the
generation input as a dedicated rating slot, so explanation decoding is
conditioned on the predicted rating.

The masked variant (rating ablation) replaces the rating slot with the PAD
token embedding, keeping the slot in-distribution for the position table
while hiding the rating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .backbone import Backbone
from .bpe import BpeModel

# Sentinel for the rating-ablated variant: the rating slot is filled with
# the PAD embedding instead of the soft rating embedding.
MASKED = object()

N_CLASSES = 5


@dataclass(frozen=True)
class RatingDistribution:
    """Probability vector over the five rating classes (index 0 = rating 1)."""

    probs: tuple[float, float, float, float, float]

    def __post_init__(self):
        if len(self.probs) != N_CLASSES:
            raise ValueError("rating distribution needs exactly 5 probabilities")
        if any(p < 0 for p in self.probs):
            raise ValueError("rating probabilities must be non-negative")
        if abs(sum(self.probs) - 1.0) > 1e-6:
            raise ValueError(f"rating probabilities must sum to 1, got {sum(self.probs)}")

    @classmethod
    def one_hot(cls, rating: int) -> "RatingDistribution":
        if not 1 <= rating <= N_CLASSES:
            raise ValueError(f"rating must be in [1,5], got {rating}")
        return cls(tuple(1.0 if x == rating else 0.0 for x in range(1, N_CLASSES + 1)))


class Verbalizer:
    """Fixed injective map from rating classes 1..5 to single token ids."""

    def __init__(self, bpe: BpeModel):
        ids = bpe.rating_token_ids()
        if len(set(ids.values())) != N_CLASSES:
            raise ValueError("rating tokens must map to 5 distinct ids")
        for x in range(1, N_CLASSES + 1):
            enc = bpe.encode(str(x))
            if enc != [ids[x]]:
                raise ValueError(f"rating word {x} does not encode to a single atomic token")
        self.ids = ids
        self.id_list = [ids[x] for x in range(1, N_CLASSES + 1)]


@dataclass
class PromptSet:
    """Literal prompt strings for the three tasks.

    The keyword prompt is the explanation prompt with the word "explanation"
    swapped for "keyword", mirroring how the keyword task is derived from
    the explanation task.
    """

    rating: str = "predict the rating"
    explanation: str = "generate the explanation"

    @property
    def keyword(self) -> str:
        return self.explanation.replace("explanation", "keyword")

    def training_texts(self) -> list[str]:
        return [self.rating, self.explanation, self.keyword]


@dataclass(frozen=True)
class SequenceLayout:
    """Positions of the ordered segments [user, item, rating?, prompt, target]."""

    rating_pos: int | None
    prompt_start: int
    prompt_end: int
    target_start: int
    target_end: int

    user_pos: int = 0
    item_pos: int = 1

    @property
    def length(self) -> int:
        return self.target_end

    @property
    def target_len(self) -> int:
        return self.target_end - self.target_start


def build_rating_input(
    model: Backbone, user_id: str, item_id: str, prompt_ids: list[int]
) -> tuple[SequenceLayout, torch.Tensor]:
    """Assemble the [user, item, prompt] embedding sequence for rating prediction."""
    u, i, toks = model.embed(user_id, item_id, prompt_ids)
    emb = torch.cat([u.unsqueeze(0), i.unsqueeze(0), toks], dim=0)
    n = emb.shape[0]
    if n > model.cfg.context_length:
        raise ValueError(f"rating input length {n} exceeds context {model.cfg.context_length}")
    layout = SequenceLayout(
        rating_pos=None,
        prompt_start=2,
        prompt_end=2 + len(prompt_ids),
        target_start=n,
        target_end=n,
    )
    return layout, emb


def rating_probs_from_logits(logits_last: torch.Tensor, verbalizer: Verbalizer) -> torch.Tensor:
    """Softmax restricted to the five rating-token logits.

    Works on (V,) or (B, V) final-position logits; keeps gradients.
    """
    idx = torch.tensor(verbalizer.id_list, dtype=torch.long, device=logits_last.device)
    restricted = logits_last.index_select(-1, idx)
    return torch.softmax(restricted, dim=-1)


def predict_rating(
    model: Backbone,
    verbalizer: Verbalizer,
    user_id: str,
    item_id: str,
    prompt_ids: list[int],
) -> RatingDistribution:
    """Probability of each rating class for a (user, item) pair."""
    layout, emb = build_rating_input(model, user_id, item_id, prompt_ids)
    with torch.no_grad():
        logits = model.forward(emb)
        probs = rating_probs_from_logits(logits[-1], verbalizer)
    return RatingDistribution(tuple(float(p) for p in probs))


def rating_score(dist: RatingDistribution) -> float:
    """Expected rating: the probability-weighted sum over classes 1..5."""
    return float(sum(x * p for x, p in zip(range(1, N_CLASSES + 1), dist.probs)))


def soft_rating_embedding(model: Backbone, verbalizer: Verbalizer, dist) -> torch.Tensor:
    """Convex combination of the five rating-token embedding rows.

    Accepts a RatingDistribution or a length-5 tensor; the tensor form keeps
    gradients, which the training loop relies on.
    """
    rows = model.token_emb.weight[torch.tensor(verbalizer.id_list, dtype=torch.long)]
    if isinstance(dist, RatingDistribution):
        weights = torch.tensor(dist.probs, dtype=rows.dtype)
    else:
        weights = dist
    return weights @ rows


def build_explanation_input(
    model: Backbone,
    user_id: str,
    item_id: str,
    rating_slot,
    prompt_ids: list[int],
    target_ids: list[int],
    pad_id: int,
) -> tuple[SequenceLayout, torch.Tensor]:
    """Assemble [user, item, rating slot, prompt, target] embeddings.

    rating_slot is a d_model tensor (the soft rating embedding) or the
    module-level MASKED sentinel, which substitutes the PAD embedding.
    """
    u, i, prompt = model.embed(user_id, item_id, prompt_ids)
    if rating_slot is MASKED:
        slot = model.token_emb.weight[pad_id]
    else:
        slot = rating_slot
    parts = [u.unsqueeze(0), i.unsqueeze(0), slot.unsqueeze(0), prompt]
    if target_ids:
        parts.append(model.token_emb.weight[torch.tensor(target_ids, dtype=torch.long)])
    emb = torch.cat(parts, dim=0)
    n = emb.shape[0]
    if n > model.cfg.context_length:
        raise ValueError(f"explanation input length {n} exceeds context {model.cfg.context_length}")
    p0 = 3
    layout = SequenceLayout(
        rating_pos=2,
        prompt_start=p0,
        prompt_end=p0 + len(prompt_ids),
        target_start=p0 + len(prompt_ids),
        target_end=n,
    )
    return layout, emb


@dataclass(frozen=True)
class GenerationResult:
    distribution: RatingDistribution
    score: float
    explanation_ids: tuple[int, ...]
    explanation_text: str


def infer(
    model: Backbone,
    bpe: BpeModel,
    verbalizer: Verbalizer,
    prompts: PromptSet,
    user_id: str,
    item_id: str,
    max_len: int = 20,
    mask_rating: bool = False,
) -> GenerationResult:
    """Predict a rating, embed it, then greedily decode an explanation.

    Decoding is deterministic argmax and stops at EOS or max_len tokens.
    PAD and BOS are never emitted.  Unseen user/item ids fall back to the
    cold-start rows, so valid input never errors.
    """
    rating_prompt = bpe.encode(prompts.rating)
    expl_prompt = bpe.encode(prompts.explanation)

    with torch.no_grad():
        dist = predict_rating(model, verbalizer, user_id, item_id, rating_prompt)
        score = rating_score(dist)
        slot = MASKED if mask_rating else soft_rating_embedding(model, verbalizer, dist)

        generated: list[int] = []
        banned = (bpe.pad_id, bpe.bos_id)
        for _ in range(max_len):
            _, emb = build_explanation_input(
                model, user_id, item_id, slot, expl_prompt, generated, bpe.pad_id
            )
            logits = model.forward(emb)[-1].clone()
            logits[list(banned)] = -math.inf
            nxt = int(torch.argmax(logits))
            if nxt == bpe.eos_id:
                break
            generated.append(nxt)

    return GenerationResult(
        distribution=dist,
        score=score,
        explanation_ids=tuple(generated),
        explanation_text=bpe.decode(generated),
    )
