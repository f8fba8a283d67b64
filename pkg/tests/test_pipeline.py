import random

import pytest
import torch

from xrec.pipeline import (
    MASKED,
    PromptSet,
    RatingDistribution,
    Verbalizer,
    build_explanation_input,
    build_rating_input,
    infer,
    predict_rating,
    rating_score,
    soft_rating_embedding,
)


def random_distribution(rng):
    raw = [rng.random() for _ in range(5)]
    total = sum(raw)
    return RatingDistribution(tuple(x / total for x in raw))


class TestRatingDistribution:
    def test_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            RatingDistribution((0.5, 0.1, 0.1, 0.1, 0.1))

    def test_negative_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            RatingDistribution((-0.1, 0.3, 0.3, 0.3, 0.2))

    def test_one_hot(self):
        assert RatingDistribution.one_hot(3).probs == (0.0, 0.0, 1.0, 0.0, 0.0)


class TestVerbalizer:
    def test_five_distinct_single_ids(self, bpe):
        v = Verbalizer(bpe)
        assert len(set(v.ids.values())) == 5
        for x in range(1, 6):
            assert bpe.encode(str(x)) == [v.ids[x]]


class TestPredictRating:
    def test_untrained_model_is_uniform(self, tiny_model, bpe, prompts):
        v = Verbalizer(bpe)
        dist = predict_rating(tiny_model, v, "u1", "i1", bpe.encode(prompts.rating))
        assert dist.probs == pytest.approx((0.2,) * 5, abs=1e-12)

    def test_probs_sum_to_one(self, tiny_model, bpe, prompts):
        v = Verbalizer(bpe)
        with torch.no_grad():
            tiny_model.lm_head.normal_(0, 0.5, generator=torch.Generator().manual_seed(2))
        dist = predict_rating(tiny_model, v, "u2", "i2", bpe.encode(prompts.rating))
        assert sum(dist.probs) == pytest.approx(1.0, abs=1e-6)

    def test_shift_invariance_of_restricted_softmax(self, tiny_model, bpe, prompts):
        from xrec.pipeline import rating_probs_from_logits

        v = Verbalizer(bpe)
        with torch.no_grad():
            tiny_model.lm_head.normal_(0, 0.5, generator=torch.Generator().manual_seed(4))
        before = predict_rating(tiny_model, v, "u1", "i2", bpe.encode(prompts.rating))
        _, emb = build_rating_input(tiny_model, "u1", "i2", bpe.encode(prompts.rating))
        with torch.no_grad():
            logits = tiny_model.forward(emb)[-1]
        shifted = logits.clone()
        shifted[v.id_list] += 7.3  # same constant on all five rating-token logits
        p0 = rating_probs_from_logits(logits, v)
        p1 = rating_probs_from_logits(shifted, v)
        assert torch.allclose(p0, p1, atol=1e-12)
        assert before.probs == pytest.approx(tuple(float(x) for x in p0), abs=1e-12)

    def test_prompt_overflow_rejected(self, tiny_model, bpe):
        v = Verbalizer(bpe)
        too_long = [bpe.unk_id] * 60
        with pytest.raises(ValueError, match="exceeds context"):
            predict_rating(tiny_model, v, "u1", "i1", too_long)


class TestRatingScore:
    def test_one_hot(self):
        assert rating_score(RatingDistribution.one_hot(3)) == 3.0

    def test_split_mass(self):
        assert rating_score(RatingDistribution((0, 0, 0, 0.5, 0.5))) == pytest.approx(4.5)

    def test_uniform(self):
        assert rating_score(RatingDistribution((0.2,) * 5)) == pytest.approx(3.0)

    def test_monotone_under_upward_shift(self):
        rng = random.Random(0)
        for _ in range(500):
            dist = random_distribution(rng)
            x = rng.randrange(5)
            y = rng.randrange(5)
            if x == y:
                continue
            lo, hi = min(x, y), max(x, y)
            delta = dist.probs[lo] * rng.random()
            probs = list(dist.probs)
            probs[lo] -= delta
            probs[hi] += delta
            total = sum(probs)
            shifted = RatingDistribution(tuple(p / total for p in probs))
            assert rating_score(shifted) >= rating_score(dist) - 1e-12


class TestSoftRatingEmbedding:
    def test_one_hot_returns_exact_row(self, tiny_model, bpe):
        v = Verbalizer(bpe)
        out = soft_rating_embedding(tiny_model, v, RatingDistribution.one_hot(4))
        assert torch.equal(out, tiny_model.token_emb.weight[v.ids[4]])

    def test_uniform_is_mean_of_rows(self, tiny_model, bpe):
        v = Verbalizer(bpe)
        out = soft_rating_embedding(tiny_model, v, RatingDistribution((0.2,) * 5))
        rows = tiny_model.token_emb.weight[torch.tensor(v.id_list)]
        assert torch.allclose(out, rows.mean(dim=0), atol=1e-12)

    def test_output_in_convex_hull(self, tiny_model, bpe):
        v = Verbalizer(bpe)
        rows = tiny_model.token_emb.weight[torch.tensor(v.id_list)]
        rng = random.Random(7)
        for _ in range(50):
            dist = random_distribution(rng)
            out = soft_rating_embedding(tiny_model, v, dist)
            assert torch.all(out >= rows.min(dim=0).values - 1e-12)
            assert torch.all(out <= rows.max(dim=0).values + 1e-12)

    def test_linearity(self, tiny_model, bpe):
        v = Verbalizer(bpe)
        rng = random.Random(9)
        for _ in range(20):
            p = random_distribution(rng)
            q = random_distribution(rng)
            lam = rng.random()
            mixed = RatingDistribution(
                tuple(lam * a + (1 - lam) * b for a, b in zip(p.probs, q.probs))
            )
            lhs = soft_rating_embedding(tiny_model, v, mixed)
            rhs = lam * soft_rating_embedding(tiny_model, v, p) + (1 - lam) * soft_rating_embedding(
                tiny_model, v, q
            )
            assert torch.allclose(lhs, rhs, atol=1e-12)


class TestBuildExplanationInput:
    def test_one_hot_slot_equals_rating_token_row(self, tiny_model, bpe, prompts):
        v = Verbalizer(bpe)
        s_r = soft_rating_embedding(tiny_model, v, RatingDistribution.one_hot(5))
        layout, emb = build_explanation_input(
            tiny_model, "u1", "i1", s_r, bpe.encode(prompts.explanation), [], bpe.pad_id
        )
        assert torch.equal(emb[layout.rating_pos], tiny_model.token_emb.weight[v.ids[5]])

    def test_masked_slot_is_pad_embedding(self, tiny_model, bpe, prompts):
        layout, emb = build_explanation_input(
            tiny_model, "u1", "i1", MASKED, bpe.encode(prompts.explanation), [], bpe.pad_id
        )
        assert torch.equal(emb[layout.rating_pos], tiny_model.token_emb.weight[bpe.pad_id])

    def test_empty_target_layout_ends_at_prompt(self, tiny_model, bpe, prompts):
        prompt = bpe.encode(prompts.explanation)
        layout, emb = build_explanation_input(
            tiny_model, "u1", "i1", MASKED, prompt, [], bpe.pad_id
        )
        assert layout.target_start == layout.target_end == emb.shape[0]
        assert layout.prompt_end == 3 + len(prompt)

    def test_overflow_rejected(self, tiny_model, bpe, prompts):
        with pytest.raises(ValueError, match="exceeds context"):
            build_explanation_input(
                tiny_model, "u1", "i1", MASKED, bpe.encode(prompts.explanation),
                [bpe.unk_id] * 60, bpe.pad_id,
            )


class TestInfer:
    def test_deterministic(self, tiny_model, bpe, prompts):
        v = Verbalizer(bpe)
        a = infer(tiny_model, bpe, v, prompts, "u1", "i1")
        b = infer(tiny_model, bpe, v, prompts, "u1", "i1")
        assert a == b

    def test_length_cap_and_no_pad(self, tiny_model, bpe, prompts):
        v = Verbalizer(bpe)
        with torch.no_grad():
            tiny_model.lm_head.normal_(0, 0.3, generator=torch.Generator().manual_seed(6))
        for user, item in [("u1", "i1"), ("u9", "i9"), ("u2", "i3")]:
            res = infer(tiny_model, bpe, v, prompts, user, item, max_len=20)
            assert len(res.explanation_ids) <= 20
            assert bpe.pad_id not in res.explanation_ids

    def test_masked_run_shares_rating_distribution(self, tiny_model, bpe, prompts):
        v = Verbalizer(bpe)
        with torch.no_grad():
            tiny_model.lm_head.normal_(0, 0.3, generator=torch.Generator().manual_seed(8))
        plain = infer(tiny_model, bpe, v, prompts, "u2", "i1")
        masked = infer(tiny_model, bpe, v, prompts, "u2", "i1", mask_rating=True)
        assert plain.distribution == masked.distribution
        assert plain.score == masked.score

    def test_unseen_ids_never_error(self, tiny_model, bpe, prompts):
        v = Verbalizer(bpe)
        res = infer(tiny_model, bpe, v, prompts, "stranger", "mystery")
        assert 1.0 <= res.score <= 5.0

    def test_score_equals_weighted_sum(self, tiny_model, bpe, prompts):
        v = Verbalizer(bpe)
        res = infer(tiny_model, bpe, v, prompts, "u3", "i2")
        expected = sum(x * p for x, p in zip(range(1, 6), res.distribution.probs))
        assert res.score == pytest.approx(expected, abs=1e-12)


class TestPromptSet:
    def test_keyword_prompt_substitutes_word(self):
        prompts = PromptSet(rating="predict the rating", explanation="generate the explanation")
        assert prompts.keyword == "generate the keyword"
