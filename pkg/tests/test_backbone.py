import pytest
import torch

from xrec.backbone import (
    AdaptedLinear,
    Backbone,
    BackboneConfig,
    load_checkpoint,
    save_checkpoint,
)


def small_cfg(**over):
    base = dict(
        vocab_size=40, n_users=3, n_items=3, d_model=16, n_layers=2,
        n_heads=2, ffn_width=32, context_length=32,
    )
    base.update(over)
    return BackboneConfig(**base)


def make_model(seed=0, **over):
    cfg = small_cfg(**over)
    return Backbone(cfg, [f"u{k}" for k in range(cfg.n_users)],
                    [f"i{k}" for k in range(cfg.n_items)], seed=seed)


class TestForward:
    def test_causality_prefix_invariance(self):
        model = make_model()
        g = torch.Generator().manual_seed(3)
        with torch.no_grad():
            model.lm_head.normal_(0, 0.02, generator=g)
        x = torch.randn(10, 16, generator=g, dtype=torch.float64)
        base = model.forward(x)
        perturbed = x.clone()
        perturbed[6, 3] += 0.5  # single coordinate: LayerNorm ignores uniform shifts
        out = model.forward(perturbed)
        assert torch.equal(out[:6], base[:6])
        assert not torch.allclose(out[6:], base[6:])

    def test_zero_length_input_rejected(self):
        model = make_model()
        with pytest.raises(ValueError, match="empty"):
            model.forward(torch.zeros(0, 16, dtype=torch.float64))

    def test_overlong_sequence_rejected(self):
        model = make_model()
        with pytest.raises(ValueError, match="exceeds context"):
            model.forward(torch.zeros(33, 16, dtype=torch.float64))

    def test_bit_identical_across_runs(self):
        g = torch.Generator().manual_seed(5)
        x = torch.randn(8, 16, generator=g, dtype=torch.float64)
        a = make_model(seed=11).forward(x)
        b = make_model(seed=11).forward(x)
        assert torch.equal(a, b)

    def test_untrained_head_gives_equal_logits(self):
        model = make_model()
        x = torch.randn(4, 16, dtype=torch.float64)
        logits = model.forward(x)
        assert torch.equal(logits, torch.zeros_like(logits))


class TestEmbed:
    def test_known_user_returns_its_row(self):
        model = make_model()
        u, _, _ = model.embed("u1", "i0", [2])
        assert torch.equal(u, model.user_emb.weight[1])

    def test_unseen_ids_use_cold_start_rows(self):
        model = make_model()
        u, i, _ = model.embed("nobody", "nothing", [2])
        assert torch.equal(u, model.user_emb.weight[model.cfg.n_users])
        assert torch.equal(i, model.item_emb.weight[model.cfg.n_items])

    def test_single_token(self):
        model = make_model()
        _, _, toks = model.embed("u0", "i0", [3])
        assert toks.shape == (1, 16)


class TestAdapters:
    def test_zero_b_is_exact_identity(self):
        g = torch.Generator().manual_seed(0)
        layer = AdaptedLinear(8, 8, rank=2, scale=1.0, generator=g)
        x = torch.randn(5, 8, generator=g, dtype=torch.float64)
        assert torch.equal(layer(x), x @ layer.weight.T)

    def test_rank_zero_disables_adapter(self):
        g = torch.Generator().manual_seed(0)
        layer = AdaptedLinear(8, 8, rank=0, scale=1.0, generator=g)
        assert layer.adapter_a is None
        x = torch.randn(2, 8, generator=g, dtype=torch.float64)
        assert torch.equal(layer(x), x @ layer.weight.T)

    def test_scale_zero_is_identity_with_nonzero_b(self):
        g = torch.Generator().manual_seed(0)
        layer = AdaptedLinear(8, 8, rank=2, scale=0.0, generator=g)
        with torch.no_grad():
            layer.adapter_b.normal_(0, 1, generator=g)
        x = torch.randn(2, 8, generator=g, dtype=torch.float64)
        assert torch.equal(layer(x), x @ layer.weight.T)

    def test_shape_mismatch_rejected(self):
        g = torch.Generator().manual_seed(0)
        layer = AdaptedLinear(8, 8, rank=2, scale=1.0, generator=g)
        with pytest.raises(RuntimeError):
            layer(torch.randn(2, 7, dtype=torch.float64))


class TestTrainableParameters:
    def test_adapter_mode_excludes_base_weights(self):
        model = make_model(adapter_rank=2)
        names = set(model.trainable_parameters("adapter"))
        assert "user_emb.weight" in names
        assert "item_emb.weight" in names
        assert all(".adapter_" in n or n.endswith("_emb.weight") for n in names)
        assert "blocks.0.q_proj.weight" not in names
        assert "lm_head" not in names

    def test_full_mode_is_superset(self):
        model = make_model(adapter_rank=2)
        adapter = set(model.trainable_parameters("adapter"))
        full = set(model.trainable_parameters("full"))
        assert adapter < full

    def test_adapter_mode_requires_positive_rank(self):
        model = make_model(adapter_rank=0)
        with pytest.raises(ValueError, match="adapter_rank"):
            model.trainable_parameters("adapter")


class TestConfig:
    def test_heads_must_divide_width(self):
        with pytest.raises(ValueError, match="divisible"):
            small_cfg(d_model=16, n_heads=3)

    def test_unknown_projection_rejected(self):
        with pytest.raises(ValueError, match="projections"):
            small_cfg(adapted_projections=("q", "z"))


class TestCheckpoint:
    def test_round_trip_preserves_everything(self, tmp_path):
        model = make_model(seed=4, adapter_rank=2)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(model, path, vocab_hash="abc123")
        loaded = load_checkpoint(path, expected_vocab_hash="abc123")
        assert loaded.cfg == model.cfg
        assert loaded.user_ids == model.user_ids
        for (n1, p1), (n2, p2) in zip(
            sorted(model.named_parameters()), sorted(loaded.named_parameters())
        ):
            assert n1 == n2
            assert torch.equal(p1, p2)

    def test_vocab_hash_mismatch_rejected(self, tmp_path):
        model = make_model()
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(model, path, vocab_hash="abc123")
        with pytest.raises(ValueError, match="vocabulary"):
            load_checkpoint(path, expected_vocab_hash="different")

    def test_save_is_byte_deterministic(self, tmp_path):
        p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
        save_checkpoint(make_model(seed=9), p1, vocab_hash="h")
        save_checkpoint(make_model(seed=9), p2, vocab_hash="h")
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_garbage_file_rejected(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"not a checkpoint at all")
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_checkpoint(str(p))
