from __future__ import annotations

import json
import math
import random

import pytest

from prefalign.datasets import (
    DatasetError,
    PreferenceDataset,
    PreferenceRecord,
    QuestionnaireItem,
    ResponseOption,
    Split,
    UserProfile,
    load_preferences,
    load_profiles,
    load_questionnaire,
    load_split,
    make_splits,
    save_preferences,
    save_profiles,
    save_questionnaire,
    save_split,
)

from conftest import make_item


class TestQuestionnaireValidation:
    def test_needs_two_responses(self):
        with pytest.raises(DatasetError, match="at least 2"):
            QuestionnaireItem("c0", "text", (ResponseOption("r0", "only one"),))

    def test_duplicate_response_ids(self):
        with pytest.raises(DatasetError, match="duplicate response_id"):
            QuestionnaireItem(
                "c0",
                "text",
                (ResponseOption("r0", "a"), ResponseOption("r0", "b")),
            )

    def test_response_index(self):
        item = make_item("c0", k=3)
        assert item.response_index("r2") == 2
        with pytest.raises(DatasetError, match="unknown response_id"):
            item.response_index("r9")

    def test_empty_texts_rejected(self):
        with pytest.raises(DatasetError):
            ResponseOption("r0", "")
        with pytest.raises(DatasetError):
            QuestionnaireItem("c0", "", (ResponseOption("r0", "a"), ResponseOption("r1", "b")))


class TestPreferenceDataset:
    def test_one_record_per_context(self):
        records = (
            PreferenceRecord("u", "c0", "r0"),
            PreferenceRecord("u", "c0", "r1"),
        )
        with pytest.raises(DatasetError, match="duplicate record"):
            PreferenceDataset("u", records)

    def test_foreign_user_rejected(self):
        with pytest.raises(DatasetError, match="user"):
            PreferenceDataset("u", (PreferenceRecord("other", "c0", "r0"),))

    def test_subset_preserves_order(self):
        records = tuple(PreferenceRecord("u", f"c{i}", "r0") for i in range(5))
        ds = PreferenceDataset("u", records)
        sub = ds.subset(["c3", "c1"])
        assert sub.context_ids == ("c1", "c3")


class TestMakeSplits:
    def test_four_ids_half_quarter_quarter(self):
        split = make_splits(["a", "b", "c", "d"], (0.5, 0.25, 0.25), seed=7)
        assert len(split.train) == 2
        assert len(split.val) == 1
        assert len(split.test) == 1

    def test_floor_arithmetic_oracle(self):
        # independent oracle: val and test take floor(ratio * n), train the rest
        for n in (4, 8, 10, 100, 129, 131):
            ids = [f"x{i}" for i in range(n)]
            split = make_splits(ids, (0.5, 0.25, 0.25), seed=0)
            assert len(split.val) == math.floor(0.25 * n)
            assert len(split.test) == math.floor(0.25 * n)
            assert len(split.train) == n - 2 * math.floor(0.25 * n)

    def test_partition_property(self):
        rng = random.Random(0)
        for trial in range(50):
            n = rng.randint(4, 60)
            ids = [f"x{i}" for i in range(n)]
            split = make_splits(ids, (0.5, 0.25, 0.25), seed=trial)
            parts = set(split.train) | set(split.val) | set(split.test)
            assert parts == set(ids)
            assert len(split.train) + len(split.val) + len(split.test) == n

    def test_deterministic_for_seed(self):
        ids = [f"x{i}" for i in range(20)]
        assert make_splits(ids, (0.5, 0.25, 0.25), 3) == make_splits(
            ids, (0.5, 0.25, 0.25), 3
        )
        assert make_splits(ids, (0.5, 0.25, 0.25), 3) != make_splits(
            ids, (0.5, 0.25, 0.25), 4
        )

    def test_bad_ratios(self):
        ids = list("abcdefgh")
        with pytest.raises(DatasetError, match="sum to 1"):
            make_splits(ids, (0.5, 0.3, 0.3), 0)
        with pytest.raises(DatasetError, match="negative"):
            make_splits(ids, (1.5, -0.25, -0.25), 0)
        with pytest.raises(DatasetError, match="duplicates"):
            make_splits(["a", "a", "b", "c"], (0.5, 0.25, 0.25), 0)

    def test_empty_part_rejected(self):
        with pytest.raises(DatasetError, match="empty part"):
            make_splits(["a", "b", "c"], (0.5, 0.25, 0.25), 0)

    def test_split_overlap_rejected(self):
        with pytest.raises(DatasetError, match="overlap"):
            Split(seed=0, train=("a", "b"), val=("b",), test=("c",))


class TestRoundTrips:
    def test_questionnaire(self, tmp_path, tiny_questionnaire):
        path = tmp_path / "q.jsonl"
        save_questionnaire(tiny_questionnaire, path)
        assert load_questionnaire(path) == tiny_questionnaire

    def test_split(self, tmp_path):
        split = make_splits([f"x{i}" for i in range(10)], (0.5, 0.25, 0.25), 5)
        path = tmp_path / "split.json"
        save_split(split, path)
        assert load_split(path) == split

    def test_preferences(self, tmp_path, tiny_questionnaire):
        records = [
            PreferenceRecord("u2", "c0", "r1"),
            PreferenceRecord("u1", "c0", "r0"),
            PreferenceRecord("u1", "c1", "r2"),
        ]
        path = tmp_path / "prefs.jsonl"
        save_preferences(records, path)
        loaded = load_preferences(path, tiny_questionnaire)
        assert list(loaded) == ["u1", "u2"]  # sorted by user
        assert loaded["u1"].chosen("c1") == "r2"
        assert loaded["u2"].chosen("c0") == "r1"

    def test_profiles(self, tmp_path):
        profiles = [
            UserProfile("u1", "terse expert", {"style": "blunt"}),
            UserProfile("u2", "curious novice"),
        ]
        path = tmp_path / "profiles.jsonl"
        save_profiles(profiles, path)
        loaded = load_profiles(path)
        assert loaded["u1"].tags == {"style": "blunt"}
        assert loaded["u2"].description == "curious novice"


class TestLoaderErrors:
    def test_line_number_in_error(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"context_id": "c0", "context_text": "t", "responses": []}\nnot json\n')
        with pytest.raises(DatasetError, match="bad.jsonl:1"):
            load_questionnaire(path)

    def test_invalid_json_line(self, tmp_path, tiny_questionnaire):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"user_id": "u", "context_id": "c0", "chosen_response_id": "r0"}\n{oops\n')
        with pytest.raises(DatasetError, match=":2"):
            load_preferences(path, tiny_questionnaire)

    def test_unknown_context(self, tmp_path, tiny_questionnaire):
        path = tmp_path / "prefs.jsonl"
        save_preferences([PreferenceRecord("u", "nope", "r0")], path)
        with pytest.raises(DatasetError, match="unknown context_id"):
            load_preferences(path, tiny_questionnaire)

    def test_unknown_response(self, tmp_path, tiny_questionnaire):
        path = tmp_path / "prefs.jsonl"
        save_preferences([PreferenceRecord("u", "c0", "r99")], path)
        with pytest.raises(DatasetError, match="has no response"):
            load_preferences(path, tiny_questionnaire)

    def test_duplicate_user_context_pair(self, tmp_path, tiny_questionnaire):
        path = tmp_path / "prefs.jsonl"
        save_preferences(
            [PreferenceRecord("u", "c0", "r0"), PreferenceRecord("u", "c0", "r1")], path
        )
        with pytest.raises(DatasetError, match="duplicate record"):
            load_preferences(path, tiny_questionnaire)

    def test_duplicate_context_id(self, tmp_path):
        item = make_item("c0")
        path = tmp_path / "q.jsonl"
        save_questionnaire([item, item], path)
        with pytest.raises(DatasetError, match="duplicate context_id"):
            load_questionnaire(path)

    def test_empty_questionnaire(self, tmp_path):
        path = tmp_path / "q.jsonl"
        path.write_text("")
        with pytest.raises(DatasetError, match="empty questionnaire"):
            load_questionnaire(path)

    def test_missing_key(self, tmp_path):
        path = tmp_path / "q.jsonl"
        path.write_text(json.dumps({"context_id": "c0", "responses": []}) + "\n")
        with pytest.raises(DatasetError, match="context_text"):
            load_questionnaire(path)
