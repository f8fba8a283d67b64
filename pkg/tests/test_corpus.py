import json

import pytest

from xrec.corpus import (
    DatasetSplit,
    InteractionRecord,
    ingest,
    keyword_targets,
    load_split,
    make_splits,
    save_split,
)


def write_jsonl(path, objs):
    with open(path, "w", encoding="utf-8") as f:
        for o in objs:
            f.write(json.dumps(o) + "\n")


class TestIngest:
    def test_single_valid_line(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_jsonl(p, [{"user": "u1", "item": "i1", "rating": 5,
                         "explanation": "the pool is great", "feature": ["pool"]}])
        recs = ingest(str(p))
        assert len(recs) == 1
        assert recs[0].rating == 5
        assert recs[0].features == ("pool",)

    def test_rating_out_of_range_names_line(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_jsonl(p, [
            {"user": "u", "item": "i", "rating": 3, "explanation": "ok", "feature": []},
            {"user": "u", "item": "i", "rating": 0, "explanation": "bad", "feature": []},
        ])
        with pytest.raises(ValueError, match=":2:"):
            ingest(str(p))

    def test_empty_file_gives_empty_list(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text("")
        assert ingest(str(p)) == []

    def test_malformed_json_names_line(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text('{"user": "u"\n')
        with pytest.raises(ValueError, match=":1:"):
            ingest(str(p))

    def test_order_preserved(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_jsonl(p, [
            {"user": f"u{k}", "item": "i", "rating": 3, "explanation": "fine", "feature": []}
            for k in range(5)
        ])
        assert [r.user_id for r in ingest(str(p))] == [f"u{k}" for k in range(5)]

    def test_features_key_variants(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_jsonl(p, [
            {"user": "a", "item": "i", "rating": 3, "explanation": "x", "features": ["Pool"]},
            {"user": "b", "item": "i", "rating": 3, "explanation": "x", "feature": "GYM"},
        ])
        recs = ingest(str(p))
        assert recs[0].features == ("pool",)
        assert recs[1].features == ("gym",)


class TestRecordInvariants:
    def test_blank_explanation_rejected(self):
        with pytest.raises(ValueError, match="explanation"):
            InteractionRecord("u", "i", 3, "   ")

    def test_non_integer_rating_rejected(self):
        with pytest.raises(ValueError):
            InteractionRecord("u", "i", 3.5, "fine")


class TestSplits:
    def test_ten_records_split_8_1_1(self):
        s = make_splits(10, seed=7)[0]
        assert (len(s.train), len(s.valid), len(s.test)) == (8, 1, 1)

    def test_determinism(self):
        assert make_splits(50, seed=3) == make_splits(50, seed=3)

    def test_thousand_records_cover_all_indices_once(self):
        # oracle: set-union coverage check
        for s in make_splits(1000, seed=1):
            assert (len(s.train), len(s.valid), len(s.test)) == (800, 100, 100)
            union = set(s.train) | set(s.valid) | set(s.test)
            assert union == set(range(1000))
            assert len(s.train) + len(s.valid) + len(s.test) == 1000

    def test_repeats_differ(self):
        splits = make_splits(100, seed=0)
        assert len({s.train for s in splits}) == 5

    def test_too_few_records_rejected(self):
        with pytest.raises(ValueError, match="at least 10"):
            make_splits(9, seed=0)

    def test_overlapping_lists_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            DatasetSplit(train=(0, 1), valid=(1,), test=(2,), repeat_id=0, seed=0)

    def test_manifest_round_trip(self, tmp_path):
        s = make_splits(20, seed=5)[2]
        path = str(tmp_path / "split.json")
        save_split(s, path)
        assert load_split(path) == s


class TestKeywordTargets:
    def test_single_feature(self, records, bpe):
        rec = records[0]
        assert keyword_targets(rec, bpe) == [bpe.encode("pool")]

    def test_two_features_two_targets(self, bpe):
        rec = InteractionRecord("u", "i", 4, "fine", ("lobby", "location"))
        targets = keyword_targets(rec, bpe)
        assert len(targets) == 2
        assert targets[0] == bpe.encode("lobby")

    def test_no_features_gives_unk_target(self, bpe):
        rec = InteractionRecord("u", "i", 4, "fine", ())
        assert keyword_targets(rec, bpe) == [[bpe.unk_id]]
