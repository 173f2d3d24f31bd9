from __future__ import annotations

import json

import pytest

from prefalign.discovery import (
    DiscoveryError,
    FeatureSet,
    FeatureSpec,
    build_discovery_prompt,
    discover_features,
    format_contexts,
    load_feature_set,
    parse_feature_json,
    save_feature_set,
)

from conftest import make_item, stub_gateway


def feature_json(names):
    return json.dumps(
        {
            "FEATURES": {
                name: {
                    "attribute_desc": f"How much {name}?",
                    "attr_min": "not at all",
                    "attr_max": "very much",
                }
                for name in names
            }
        }
    )


class TestPromptBuilding:
    def test_contains_all_contexts_and_choices(self, tiny_questionnaire):
        system, user = build_discovery_prompt(tiny_questionnaire, 5)
        assert "preference dataset" in system
        for item in tiny_questionnaire:
            assert item.context_text in user
            for option in item.responses:
                assert option.response_text in user
        assert "a set of 5 unique and diverse features" in user

    def test_context_block_order(self, tiny_questionnaire):
        block = format_contexts(tiny_questionnaire)
        positions = [block.index(item.context_text) for item in tiny_questionnaire]
        assert positions == sorted(positions)

    def test_empty_inputs_rejected(self, tiny_questionnaire):
        with pytest.raises(DiscoveryError):
            build_discovery_prompt([], 5)
        with pytest.raises(DiscoveryError):
            build_discovery_prompt(tiny_questionnaire, 0)


class TestParseFeatureJson:
    def test_plain_object(self):
        specs = parse_feature_json(feature_json(["depth", "wit"]), 2)
        assert [s.name for s in specs] == ["depth", "wit"]
        assert specs[0].attribute_desc == "How much depth?"

    def test_fenced_block_with_prose(self):
        text = "Here are the features:\n```json\n" + feature_json(["a", "b"]) + "\n```\nDone."
        assert len(parse_feature_json(text, 2)) == 2

    def test_template_shape_without_outer_braces(self):
        inner = feature_json(["x"])[1:-1]  # '"FEATURES": {...}'
        text = "```json\n" + inner + "\n```"
        assert parse_feature_json(text, 1)[0].name == "x"

    def test_prose_around_bare_object(self):
        text = "Sure thing.\n" + feature_json(["x", "y", "z"]) + "\nHope that helps."
        assert len(parse_feature_json(text, 3)) == 3

    def test_count_mismatch_is_hard_error(self):
        with pytest.raises(DiscoveryError, match="expected 3 features, got 2"):
            parse_feature_json(feature_json(["a", "b"]), 3)

    def test_duplicate_names_rejected(self):
        text = '{"FEATURES": {"a": %s, "a": %s}}' % (
            '{"attribute_desc": "d", "attr_min": "lo", "attr_max": "hi"}',
            '{"attribute_desc": "d2", "attr_min": "lo", "attr_max": "hi"}',
        )
        with pytest.raises(DiscoveryError, match="duplicate key"):
            parse_feature_json(text, 2)

    def test_missing_field_rejected(self):
        text = '{"FEATURES": {"a": {"attribute_desc": "d", "attr_min": "lo"}}}'
        with pytest.raises(DiscoveryError, match="attr_max"):
            parse_feature_json(text, 1)

    def test_no_json_rejected(self):
        with pytest.raises(DiscoveryError, match="no JSON object"):
            parse_feature_json("I could not think of any features.", 5)

    def test_missing_features_key_rejected(self):
        with pytest.raises(DiscoveryError, match="FEATURES"):
            parse_feature_json('{"things": {}}', 1)

    def test_order_preserved(self):
        names = [f"f{i}" for i in range(10)]
        specs = parse_feature_json(feature_json(names), 10)
        assert [s.name for s in specs] == names


class TestFeatureSet:
    def make_set(self, names, provenance=None):
        return FeatureSet(
            features=tuple(
                FeatureSpec(n, f"How much {n}?", "low", "high") for n in names
            ),
            provenance=provenance or {},
        )

    def test_digest_ignores_provenance(self):
        a = self.make_set(["x", "y"], {"model": "m1"})
        b = self.make_set(["x", "y"], {"model": "m2", "seed": 3})
        assert a.digest == b.digest

    def test_digest_sensitive_to_content_and_order(self):
        assert self.make_set(["x", "y"]).digest != self.make_set(["y", "x"]).digest
        base = self.make_set(["x", "y"])
        tweaked = FeatureSet(
            features=(base.features[0], FeatureSpec("y", "How much y?", "low", "HIGH")),
        )
        assert base.digest != tweaked.digest

    def test_duplicate_names_rejected(self):
        with pytest.raises(DiscoveryError, match="duplicate feature names"):
            self.make_set(["x", "x"])

    def test_round_trip(self, tmp_path):
        fs = self.make_set(["depth", "wit", "calm"], {"source": "llm", "model": "m"})
        path = tmp_path / "features.json"
        save_feature_set(fs, path)
        loaded = load_feature_set(path)
        assert loaded.features == fs.features
        assert loaded.digest == fs.digest
        assert loaded.provenance["model"] == "m"


class TestDiscoverFeatures:
    def test_end_to_end_via_stub(self, tiny_questionnaire):
        gw = stub_gateway(lambda payload: "```json\n" + feature_json(["a", "b", "c"]) + "\n```")
        fs = discover_features(gw, tiny_questionnaire, 3, model="stub-model")
        assert fs.names == ("a", "b", "c")
        assert fs.provenance["source"] == "llm"

    def test_count_mismatch_propagates(self, tiny_questionnaire):
        gw = stub_gateway(lambda payload: feature_json(["a", "b"]))
        with pytest.raises(DiscoveryError, match="expected 3"):
            discover_features(gw, tiny_questionnaire, 3, model="stub-model")
