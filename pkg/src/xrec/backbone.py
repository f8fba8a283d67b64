"""Small causal decoder transformer over embedding sequences.

The model consumes pre-assembled embedding sequences (user row, item row,
rating slot, prompt and target token rows) rather than token ids, because
the rating slot is a dense vector with no token id.  Learned absolute
position embeddings are added to every slot, ids and rating slot included.

All parameters are float64: training at this scale is cheap and double
precision makes gradient checks and bit-level determinism contracts easy
to honor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64

CHECKPOINT_MAGIC = b"XRECKPT1"


@dataclass
class BackboneConfig:
    # vocab_size / n_users / n_items of 0 mean "fill from data before building"
    vocab_size: int = 0
    n_users: int = 0
    n_items: int = 0
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    ffn_width: int = 512
    context_length: int = 64
    adapter_rank: int = 0
    adapter_scale: float = 1.0
    adapted_projections: tuple[str, ...] = ("q", "v")

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.adapter_rank < 0:
            raise ValueError("adapter_rank must be >= 0")
        bad = set(self.adapted_projections) - {"q", "k", "v", "o"}
        if bad:
            raise ValueError(f"unknown adapted projections: {sorted(bad)}")


class AdaptedLinear(nn.Module):
    """Linear map with an optional low-rank additive adapter.

    Output is W x + scale * B (A x).  B starts at zero, so a freshly
    attached adapter is an exact identity on the base behavior.
    """

    def __init__(self, d_in: int, d_out: int, rank: int, scale: float, generator):
        super().__init__()
        w = torch.empty(d_out, d_in, dtype=DTYPE)
        w.normal_(0.0, 0.02, generator=generator)
        self.weight = nn.Parameter(w)
        self.scale = scale
        if rank > 0:
            a = torch.empty(rank, d_in, dtype=DTYPE)
            a.normal_(0.0, 0.02, generator=generator)
            self.adapter_a = nn.Parameter(a)
            self.adapter_b = nn.Parameter(torch.zeros(d_out, rank, dtype=DTYPE))
        else:
            self.adapter_a = None
            self.adapter_b = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = x @ self.weight.T
        if self.adapter_a is not None:
            out = out + self.scale * ((x @ self.adapter_a.T) @ self.adapter_b.T)
        return out


class Block(nn.Module):
    """Pre-LN decoder block: causal multi-head attention + GELU FFN."""

    def __init__(self, cfg: BackboneConfig, generator):
        super().__init__()
        d, r, s = cfg.d_model, cfg.adapter_rank, cfg.adapter_scale
        adapted = set(cfg.adapted_projections)

        def proj(name):
            rank = r if name in adapted else 0
            return AdaptedLinear(d, d, rank, s, generator)

        self.n_heads = cfg.n_heads
        self.ln1 = nn.LayerNorm(d, dtype=DTYPE)
        self.q_proj = proj("q")
        self.k_proj = proj("k")
        self.v_proj = proj("v")
        self.o_proj = proj("o")
        self.ln2 = nn.LayerNorm(d, dtype=DTYPE)
        self.ffn_in = nn.Linear(d, cfg.ffn_width, dtype=DTYPE)
        self.ffn_out = nn.Linear(cfg.ffn_width, d, dtype=DTYPE)
        with torch.no_grad():
            self.ffn_in.weight.normal_(0.0, 0.02, generator=generator)
            self.ffn_in.bias.zero_()
            self.ffn_out.weight.normal_(0.0, 0.02, generator=generator)
            self.ffn_out.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        h = self.n_heads
        hd = d // h

        y = self.ln1(x)
        q = self.q_proj(y).view(b, t, h, hd).transpose(1, 2)
        k = self.k_proj(y).view(b, t, h, hd).transpose(1, 2)
        v = self.v_proj(y).view(b, t, h, hd).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) / (hd**0.5)
        causal = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1)
        scores = scores.masked_fill(causal, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        y = (attn @ v).transpose(1, 2).reshape(b, t, d)
        x = x + self.o_proj(y)

        y = self.ln2(x)
        x = x + self.ffn_out(torch.nn.functional.gelu(self.ffn_in(y)))
        return x


class Backbone(nn.Module):
    """Decoder transformer with user/item ID tables and an LM head.

    The user and item tables carry one extra final row each, shared by all
    ids unseen during training (cold start).  The LM head is zero at
    initialization, so an untrained model scores every token equally.
    """

    def __init__(self, cfg: BackboneConfig, user_ids: list[str], item_ids: list[str], seed: int = 0):
        super().__init__()
        if cfg.vocab_size < 1 or cfg.n_users < 1 or cfg.n_items < 1:
            raise ValueError("vocab_size, n_users and n_items must be positive")
        if len(user_ids) != cfg.n_users or len(item_ids) != cfg.n_items:
            raise ValueError("id list lengths must match n_users / n_items")
        self.cfg = cfg
        self.seed = seed
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        self.user_index = {u: i for i, u in enumerate(user_ids)}
        self.item_index = {v: i for i, v in enumerate(item_ids)}

        g = torch.Generator().manual_seed(seed)
        d = cfg.d_model
        self.token_emb = nn.Embedding(cfg.vocab_size, d, dtype=DTYPE)
        self.pos_emb = nn.Embedding(cfg.context_length, d, dtype=DTYPE)
        self.user_emb = nn.Embedding(cfg.n_users + 1, d, dtype=DTYPE)
        self.item_emb = nn.Embedding(cfg.n_items + 1, d, dtype=DTYPE)
        with torch.no_grad():
            for emb in (self.token_emb, self.pos_emb, self.user_emb, self.item_emb):
                emb.weight.normal_(0.0, 0.02, generator=g)
        self.blocks = nn.ModuleList(Block(cfg, g) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(d, dtype=DTYPE)
        self.lm_head = nn.Parameter(torch.zeros(cfg.vocab_size, d, dtype=DTYPE))

    def user_row(self, user_id: str) -> int:
        return self.user_index.get(user_id, self.cfg.n_users)

    def item_row(self, item_id: str) -> int:
        return self.item_index.get(item_id, self.cfg.n_items)

    def embed(self, user_id: str, item_id: str, token_ids: list[int]):
        """Look up the user, item, and token embedding rows.

        Unseen user or item ids map to the shared cold-start row instead of
        erroring.
        """
        u = self.user_emb.weight[self.user_row(user_id)]
        i = self.item_emb.weight[self.item_row(item_id)]
        toks = self.token_emb.weight[torch.tensor(token_ids, dtype=torch.long)]
        return u, i, toks

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        """Per-position logits over the vocabulary for an embedding sequence.

        Accepts (T, d) or (B, T, d); causal masking guarantees logits at
        position t depend only on positions <= t.
        """
        squeeze = embeddings.dim() == 2
        if squeeze:
            embeddings = embeddings.unsqueeze(0)
        b, t, d = embeddings.shape
        if t == 0:
            raise ValueError("empty input sequence")
        if t > self.cfg.context_length:
            raise ValueError(f"sequence length {t} exceeds context {self.cfg.context_length}")
        pos = self.pos_emb.weight[:t]
        x = embeddings + pos.unsqueeze(0)
        for block in self.blocks:
            x = block(x)
        x = self.ln_f(x)
        logits = x @ self.lm_head.T
        return logits.squeeze(0) if squeeze else logits

    def trainable_parameters(self, mode: str = "full") -> dict[str, nn.Parameter]:
        """Named parameter subset optimized in the given training mode.

        "adapter" covers exactly the adapter factors plus the user and item
        tables; "full" covers everything.
        """
        named = dict(self.named_parameters())
        if mode == "full":
            return named
        if mode == "adapter":
            if self.cfg.adapter_rank == 0:
                raise ValueError("adapter mode requires adapter_rank > 0")
            keep = {}
            for name, p in named.items():
                if ".adapter_a" in name or ".adapter_b" in name:
                    keep[name] = p
                elif name in ("user_emb.weight", "item_emb.weight"):
                    keep[name] = p
            return keep
        raise ValueError(f"unknown training mode {mode!r}")


def save_checkpoint(model: Backbone, path: str, vocab_hash: str) -> None:
    """Write a self-describing checkpoint: JSON header + little-endian f8 tensors."""
    params = dict(model.named_parameters())
    names = sorted(params)
    header = {
        "config": asdict(model.cfg),
        "seed": model.seed,
        "vocab_hash": vocab_hash,
        "user_ids": model.user_ids,
        "item_ids": model.item_ids,
        "tensors": [
            {"name": n, "shape": list(params[n].shape), "dtype": "<f8"} for n in names
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(len(header_bytes).to_bytes(8, "little"))
        f.write(header_bytes)
        for n in names:
            arr = params[n].detach().numpy().astype("<f8", copy=False)
            f.write(arr.tobytes())


def load_checkpoint(path: str, expected_vocab_hash: str | None = None) -> Backbone:
    """Load a checkpoint, verifying the vocabulary hash when given."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        hlen = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(hlen).decode("utf-8"))
        if expected_vocab_hash is not None and header["vocab_hash"] != expected_vocab_hash:
            raise ValueError(
                f"{path}: checkpoint was trained with a different vocabulary "
                f"(hash {header['vocab_hash'][:12]}..., expected {expected_vocab_hash[:12]}...)"
            )
        cfg_d = dict(header["config"])
        cfg_d["adapted_projections"] = tuple(cfg_d["adapted_projections"])
        cfg = BackboneConfig(**cfg_d)
        model = Backbone(cfg, header["user_ids"], header["item_ids"], seed=header["seed"])
        state = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            arr = np.frombuffer(buf, dtype="<f8").reshape(shape)
            state[spec["name"]] = torch.from_numpy(arr.copy())
        model.load_state_dict(state)
    return model
