"""Training loop: rating smoothing, curriculum scheduling, joint objective.

Each optimization step teacher-forces the rating context: the ground-truth
rating is (stochastically) smoothed, embedded through the rating-token rows,
and spliced into the generation input, while the rating head is trained
against the unsmoothed one-hot truth.  The text task per batch follows the
linear curriculum from keyword generation toward full explanations.

Randomness (smoothing gates, task draws, epoch shuffles) is consumed from a
single seeded stream, so a fixed config and seed reproduce the run exactly.
Loss computation itself is a pure function of the parameters, which is what
makes finite-difference gradient verification possible.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace

import torch

from .backbone import Backbone, BackboneConfig
from .bpe import BpeModel
from .corpus import DatasetSplit, InteractionRecord, keyword_targets
from .pipeline import (
    N_CLASSES,
    PromptSet,
    RatingDistribution,
    Verbalizer,
    rating_probs_from_logits,
)

LOG_CLAMP = 1e-12

STRATEGIES = ("hard", "neighbor", "uniform", "gaussian")


@dataclass
class TrainerConfig:
    rating_loss_weight: float = 0.1   # weight on the rating loss in the joint objective
    smoothing_prob: float = 0.2       # chance a rating gets smoothed before embedding
    smoothing_mass: float = 0.2       # probability mass moved off the true rating
    neighbor_count: int = 2           # how many nearest ratings receive that mass
    strategy: str = "neighbor"
    gaussian_sigma: float = 1.0
    epochs: int = 3
    batch_size: int = 16
    lr_adapter: float = 1e-4
    lr_other: float = 1e-3
    weight_decay: float = 0.01
    max_target_len: int = 20
    mode: str = "full"                # full | adapter
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.smoothing_prob <= 1.0:
            raise ValueError("smoothing_prob must be in [0,1]")
        if not 1 <= self.neighbor_count <= 4:
            raise ValueError("neighbor_count must be in 1..4")
        limit = self.neighbor_count / (self.neighbor_count + 1)
        if not 0.0 <= self.smoothing_mass <= limit + 1e-12:
            raise ValueError(f"smoothing_mass must be in [0, {limit:.4f}]")
        if self.rating_loss_weight < 0:
            raise ValueError("rating_loss_weight must be >= 0")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown smoothing strategy {self.strategy!r}")
        if self.mode not in ("full", "adapter"):
            raise ValueError(f"unknown training mode {self.mode!r}")


def neighbor_classes(rating: int, k: int) -> list[int]:
    """The k valid ratings nearest to `rating`, ties broken toward lower."""
    others = sorted((x for x in range(1, N_CLASSES + 1) if x != rating), key=lambda x: (abs(x - rating), x))
    return sorted(others[:k])


def smooth_rating(rating: int, cfg: TrainerConfig, rng: random.Random) -> RatingDistribution:
    """Stochastically soften a ground-truth rating into a distribution.

    With probability smoothing_prob the configured strategy is applied,
    otherwise (and always under "hard") the one-hot distribution is
    returned.  The neighbor strategy keeps 1 - mass on the truth and spreads
    mass/k over the k numerically nearest ratings; uniform spreads it over
    all four other classes; gaussian reweights all five classes by distance.
    """
    if not isinstance(rating, int) or not 1 <= rating <= N_CLASSES:
        raise ValueError(f"rating must be an integer in [1,5], got {rating!r}")
    if cfg.strategy == "hard":
        return RatingDistribution.one_hot(rating)
    if rng.random() >= cfg.smoothing_prob:
        return RatingDistribution.one_hot(rating)

    if cfg.strategy == "neighbor":
        probs = [0.0] * N_CLASSES
        probs[rating - 1] = 1.0 - cfg.smoothing_mass
        for x in neighbor_classes(rating, cfg.neighbor_count):
            probs[x - 1] = cfg.smoothing_mass / cfg.neighbor_count
    elif cfg.strategy == "uniform":
        probs = [cfg.smoothing_mass / (N_CLASSES - 1)] * N_CLASSES
        probs[rating - 1] = 1.0 - cfg.smoothing_mass
    else:  # gaussian
        weights = [math.exp(-((x - rating) ** 2) / (2.0 * cfg.gaussian_sigma**2)) for x in range(1, N_CLASSES + 1)]
        total = sum(weights)
        probs = [w / total for w in weights]
    return RatingDistribution(tuple(probs))


def curriculum_task(t: int, total_batches: int, rng: random.Random) -> str:
    """Draw the text task for batch t: explanation with probability t / total."""
    if total_batches <= 0:
        raise ValueError("total_batches must be positive")
    if not 0 <= t < total_batches:
        raise ValueError(f"batch index {t} outside [0, {total_batches})")
    return "explanation" if rng.random() < t / total_batches else "keyword"


def rating_loss(pred_probs: torch.Tensor, target_ratings: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of the 5-way rating head against the one-hot truth."""
    picked = pred_probs.gather(1, (target_ratings - 1).view(-1, 1)).clamp_min(LOG_CLAMP)
    return -torch.log(picked).mean()


def text_loss(
    logits: torch.Tensor,
    target_ids: torch.Tensor,
    target_lens: torch.Tensor,
    target_start: int,
) -> torch.Tensor:
    """Per-pair mean negative log-likelihood of the target span, batch-averaged.

    The target occupies the final span of each sequence; the token at
    sequence position q is scored by the logits at q - 1 (teacher forcing).
    Padded positions beyond each record's true target length are ignored.
    """
    if int(target_lens.min()) < 1:
        raise ValueError("every record needs a non-empty target")
    max_t = target_ids.shape[1]
    pred_pos = torch.arange(max_t) + target_start - 1
    log_probs = torch.log_softmax(logits[:, pred_pos, :], dim=-1)
    token_lp = log_probs.gather(2, target_ids.unsqueeze(2)).squeeze(2)
    mask = torch.arange(max_t).unsqueeze(0) < target_lens.unsqueeze(1)
    per_record = -(token_lp * mask).sum(dim=1) / target_lens
    return per_record.mean()


@dataclass(frozen=True)
class EncodedRecord:
    """A record with its targets pre-tokenized for training."""

    user_id: str
    item_id: str
    rating: int
    explanation_ids: tuple[int, ...]
    keyword_ids: tuple[int, ...]


def encode_record(record: InteractionRecord, bpe: BpeModel, max_target_len: int = 20) -> EncodedRecord:
    expl = bpe.encode(record.explanation)[:max_target_len] + [bpe.eos_id]
    kw: list[int] = []
    for seq in keyword_targets(record, bpe):
        kw.extend(seq)
    kw = kw[:max_target_len] + [bpe.eos_id]
    return EncodedRecord(
        user_id=record.user_id,
        item_id=record.item_id,
        rating=record.rating,
        explanation_ids=tuple(expl),
        keyword_ids=tuple(kw),
    )


@dataclass
class TaskContext:
    """Static per-run pieces shared by every training and validation step."""

    verbalizer: Verbalizer
    rating_prompt: tuple[int, ...]
    explanation_prompt: tuple[int, ...]
    keyword_prompt: tuple[int, ...]
    pad_id: int
    mask_rating: bool = False

    @classmethod
    def build(cls, bpe: BpeModel, prompts: PromptSet, mask_rating: bool = False) -> "TaskContext":
        return cls(
            verbalizer=Verbalizer(bpe),
            rating_prompt=tuple(bpe.encode(prompts.rating)),
            explanation_prompt=tuple(bpe.encode(prompts.explanation)),
            keyword_prompt=tuple(bpe.encode(prompts.keyword)),
            pad_id=bpe.pad_id,
            mask_rating=mask_rating,
        )


def _id_rows(model: Backbone, batch: list[EncodedRecord]):
    uidx = torch.tensor([model.user_row(r.user_id) for r in batch], dtype=torch.long)
    iidx = torch.tensor([model.item_row(r.item_id) for r in batch], dtype=torch.long)
    return model.user_emb.weight[uidx].unsqueeze(1), model.item_emb.weight[iidx].unsqueeze(1)


def compute_losses(
    model: Backbone,
    batch: list[EncodedRecord],
    smoothed: torch.Tensor,
    task: str,
    ctx: TaskContext,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Text loss and rating loss for one batch; pure in the parameters.

    `smoothed` is the (B, 5) teacher-forced rating context (already drawn);
    the rating head is always scored against the unsmoothed truth.
    """
    b = len(batch)
    users, items = _id_rows(model, batch)

    # Rating head: [user, item, rating prompt] -> 5-way probabilities.
    rp = torch.tensor(ctx.rating_prompt, dtype=torch.long)
    rp_rows = model.token_emb.weight[rp].unsqueeze(0).expand(b, -1, -1)
    rating_emb = torch.cat([users, items, rp_rows], dim=1)
    rating_logits = model.forward(rating_emb)
    probs = rating_probs_from_logits(rating_logits[:, -1, :], ctx.verbalizer)
    truth = torch.tensor([r.rating for r in batch], dtype=torch.long)
    loss_r = rating_loss(probs, truth)

    # Text head: [user, item, rating slot, task prompt, target].
    if task == "explanation":
        prompt = ctx.explanation_prompt
        targets = [r.explanation_ids for r in batch]
    elif task == "keyword":
        prompt = ctx.keyword_prompt
        targets = [r.keyword_ids for r in batch]
    else:
        raise ValueError(f"unknown task {task!r}")

    if ctx.mask_rating:
        slot = model.token_emb.weight[ctx.pad_id].view(1, 1, -1).expand(b, 1, -1)
    else:
        verb_rows = model.token_emb.weight[torch.tensor(ctx.verbalizer.id_list, dtype=torch.long)]
        slot = (smoothed.to(verb_rows.dtype) @ verb_rows).unsqueeze(1)

    lens = torch.tensor([len(t) for t in targets], dtype=torch.long)
    max_t = int(lens.max())
    padded = torch.full((b, max_t), ctx.pad_id, dtype=torch.long)
    for row, ids in enumerate(targets):
        padded[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)

    pp = torch.tensor(prompt, dtype=torch.long)
    pp_rows = model.token_emb.weight[pp].unsqueeze(0).expand(b, -1, -1)
    target_rows = model.token_emb.weight[padded]
    text_emb = torch.cat([users, items, slot, pp_rows, target_rows], dim=1)
    if text_emb.shape[1] > model.cfg.context_length:
        raise ValueError(
            f"text input length {text_emb.shape[1]} exceeds context {model.cfg.context_length}"
        )
    text_logits = model.forward(text_emb)
    target_start = 3 + len(prompt)
    loss_e = text_loss(text_logits, padded, lens, target_start)
    return loss_e, loss_r


def smoothed_batch(batch: list[EncodedRecord], cfg: TrainerConfig, rng: random.Random) -> torch.Tensor:
    """Draw the per-record smoothed rating contexts for one batch."""
    rows = [smooth_rating(r.rating, cfg, rng).probs for r in batch]
    return torch.tensor(rows, dtype=torch.float64)


@dataclass
class TrainState:
    t: int
    total_batches: int
    epoch: int = 0
    rng: random.Random = field(default_factory=lambda: random.Random(0))
    sum_loss_e: float = 0.0
    sum_loss_r: float = 0.0
    n_steps_epoch: int = 0
    n_explanation_epoch: int = 0

    def reset_epoch(self):
        self.sum_loss_e = 0.0
        self.sum_loss_r = 0.0
        self.n_steps_epoch = 0
        self.n_explanation_epoch = 0


def build_optimizer(model: Backbone, cfg: TrainerConfig) -> torch.optim.Optimizer:
    """AdamW with the two-tier learning rates: adapters low, the rest high."""
    trainable = model.trainable_parameters(cfg.mode)
    adapters = [p for n, p in trainable.items() if ".adapter_" in n]
    others = [p for n, p in trainable.items() if ".adapter_" not in n]
    groups = []
    if adapters:
        groups.append({"params": adapters, "lr": cfg.lr_adapter})
    if others:
        groups.append({"params": others, "lr": cfg.lr_other})
    return torch.optim.AdamW(groups, weight_decay=cfg.weight_decay)


def joint_step(
    model: Backbone,
    optimizer: torch.optim.Optimizer,
    batch: list[EncodedRecord],
    state: TrainState,
    cfg: TrainerConfig,
    ctx: TaskContext,
) -> tuple[float, float, str]:
    """One optimization step of the joint objective on one batch."""
    smoothed = smoothed_batch(batch, cfg, state.rng)
    task = curriculum_task(state.t, state.total_batches, state.rng)
    loss_e, loss_r = compute_losses(model, batch, smoothed, task, ctx)
    loss = loss_e + cfg.rating_loss_weight * loss_r
    if not torch.isfinite(loss):
        raise RuntimeError(
            f"non-finite loss at batch {state.t}: text={loss_e.item()} rating={loss_r.item()}"
        )
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()

    state.t += 1
    state.n_steps_epoch += 1
    state.sum_loss_e += loss_e.item()
    state.sum_loss_r += loss_r.item()
    if task == "explanation":
        state.n_explanation_epoch += 1
    return loss_e.item(), loss_r.item(), task


def validation_loss(
    model: Backbone,
    encoded: list[EncodedRecord],
    cfg: TrainerConfig,
    ctx: TaskContext,
    batch_size: int | None = None,
) -> float:
    """Deterministic joint loss: smoothing off, task fixed to explanation."""
    bs = batch_size or cfg.batch_size
    total, count = 0.0, 0
    with torch.no_grad():
        for lo in range(0, len(encoded), bs):
            chunk = encoded[lo : lo + bs]
            onehot = torch.tensor(
                [RatingDistribution.one_hot(r.rating).probs for r in chunk], dtype=torch.float64
            )
            loss_e, loss_r = compute_losses(model, chunk, onehot, "explanation", ctx)
            total += (loss_e.item() + cfg.rating_loss_weight * loss_r.item()) * len(chunk)
            count += len(chunk)
    return total / count


def fit(
    records: list[InteractionRecord],
    split: DatasetSplit,
    bpe: BpeModel,
    prompts: PromptSet,
    backbone_cfg: BackboneConfig,
    cfg: TrainerConfig,
    mask_rating: bool = False,
    model: Backbone | None = None,
) -> tuple[Backbone, list[dict]]:
    """Train for cfg.epochs epochs and keep the best-validation checkpoint.

    When no model is given, one is built with user/item tables sized from
    the training split.  Returns the model restored to its best epoch plus
    one log entry per epoch.
    """
    train_recs = [records[i] for i in split.train]
    valid_recs = [records[i] for i in split.valid]
    if not train_recs or not valid_recs:
        raise ValueError("split has an empty train or valid partition")

    if model is None:
        users = sorted({r.user_id for r in train_recs})
        items = sorted({r.item_id for r in train_recs})
        model_cfg = replace(
            backbone_cfg, vocab_size=bpe.vocab_size, n_users=len(users), n_items=len(items)
        )
        model = Backbone(model_cfg, users, items, seed=cfg.seed)

    ctx = TaskContext.build(bpe, prompts, mask_rating=mask_rating)
    prompt_len = max(len(ctx.explanation_prompt), len(ctx.keyword_prompt))
    needed = 3 + prompt_len + cfg.max_target_len + 1  # ids, slot, prompt, target, EOS
    if model.cfg.context_length < needed:
        raise ValueError(
            f"context_length {model.cfg.context_length} too short: need {needed} "
            f"for ids + rating slot + prompt + {cfg.max_target_len}-token target"
        )
    train_enc = [encode_record(r, bpe, cfg.max_target_len) for r in train_recs]
    valid_enc = [encode_record(r, bpe, cfg.max_target_len) for r in valid_recs]

    trainable = set(model.trainable_parameters(cfg.mode))
    for name, p in model.named_parameters():
        p.requires_grad_(name in trainable)
    optimizer = build_optimizer(model, cfg)

    per_epoch = math.ceil(len(train_enc) / cfg.batch_size)
    state = TrainState(t=0, total_batches=cfg.epochs * per_epoch, rng=random.Random(cfg.seed))

    best_val = math.inf
    best_state: dict[str, torch.Tensor] | None = None
    log: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        state.epoch = epoch
        state.reset_epoch()
        order = list(range(len(train_enc)))
        state.rng.shuffle(order)
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train_enc[i] for i in order[lo : lo + cfg.batch_size]]
            joint_step(model, optimizer, batch, state, cfg, ctx)

        val = validation_loss(model, valid_enc, cfg, ctx)
        saved = val < best_val
        if saved:
            best_val = val
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        log.append(
            {
                "epoch": epoch,
                "train_loss_e": state.sum_loss_e / max(state.n_steps_epoch, 1),
                "train_loss_r": state.sum_loss_r / max(state.n_steps_epoch, 1),
                "val_loss": val,
                "task_fraction": state.n_explanation_epoch / max(state.n_steps_epoch, 1),
                "saved": saved,
            }
        )

    if best_state is not None:
        model.load_state_dict(best_state)
    return model, log


def pretrain_lm(
    model: Backbone,
    sequences: list[list[int]],
    bos_id: int,
    epochs: int = 2,
    batch_size: int = 16,
    lr: float = 1e-3,
    seed: int = 0,
) -> None:
    """Next-token pretraining of the base on raw token sequences.

    Used before adapter-mode fine-tuning: the tiny base learns the corpus
    language model task, then gets frozen while adapters and ID tables train.
    """
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(params, lr=lr, weight_decay=0.01)
    rng = random.Random(seed)
    pad_fill = 0
    for _ in range(epochs):
        order = list(range(len(sequences)))
        rng.shuffle(order)
        for lo in range(0, len(order), batch_size):
            chunk = [[bos_id] + list(sequences[i]) for i in order[lo : lo + batch_size]]
            lens = torch.tensor([len(c) - 1 for c in chunk], dtype=torch.long)
            max_len = max(len(c) for c in chunk)
            ids = torch.full((len(chunk), max_len), pad_fill, dtype=torch.long)
            for row, c in enumerate(chunk):
                ids[row, : len(c)] = torch.tensor(c, dtype=torch.long)
            emb = model.token_emb.weight[ids]
            logits = model.forward(emb)
            log_probs = torch.log_softmax(logits[:, :-1, :], dim=-1)
            token_lp = log_probs.gather(2, ids[:, 1:].unsqueeze(2)).squeeze(2)
            mask = torch.arange(max_len - 1).unsqueeze(0) < lens.unsqueeze(1)
            loss = (-(token_lp * mask).sum(dim=1) / lens).mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
