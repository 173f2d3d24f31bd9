"""Feature discovery: ask an LLM for a fixed-size set of scoring criteria.

The discovery prompt shows every training context with its candidate
responses and requests exactly N features as JSON. Each feature is a
question (attribute_desc) plus anchor phrases for the low and high ends of
the 1-5 scale. The parsed set is content-addressed by a digest so score
tables and fitted weights can assert they were built against the same
features.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .datasets import QuestionnaireItem
from .gateway import Gateway, LlmRequest, Message
from .templates import prompt_pair, render


class DiscoveryError(ValueError):
    """Raised when the feature JSON is missing, malformed, or wrong-sized."""


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    attribute_desc: str
    attr_min: str
    attr_max: str

    def __post_init__(self) -> None:
        for fieldname in ("name", "attribute_desc", "attr_min", "attr_max"):
            if not getattr(self, fieldname):
                raise DiscoveryError(f"feature field {fieldname!r} must be non-empty")


@dataclass(frozen=True)
class FeatureSet:
    features: tuple[FeatureSpec, ...]
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.features:
            raise DiscoveryError("feature set is empty")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise DiscoveryError("duplicate feature names")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @property
    def digest(self) -> str:
        """Content digest over the features only, not the provenance."""
        canonical = json.dumps(
            [
                [f.name, f.attribute_desc, f.attr_min, f.attr_max]
                for f in self.features
            ],
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def format_contexts(items: Sequence[QuestionnaireItem]) -> str:
    """Human-readable block listing every context with its choices."""
    blocks = []
    for item in items:
        lines = [f"## Context {item.context_id}: {item.context_text}"]
        for i, option in enumerate(item.responses, start=1):
            lines.append(f"Choice {i}: {option.response_text}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def build_discovery_prompt(
    items: Sequence[QuestionnaireItem], num_features: int
) -> tuple[str, str]:
    if not items:
        raise DiscoveryError("no questionnaire items to describe")
    if num_features < 1:
        raise DiscoveryError(f"num_features must be >= 1, got {num_features}")
    pair = prompt_pair("discovery")
    user = render(
        pair.user,
        {"contexts": format_contexts(items), "num_features": str(num_features)},
    )
    return pair.system, user


_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


def _reject_duplicate_keys(pairs: list[tuple[str, object]]) -> dict:
    out: dict = {}
    for key, value in pairs:
        if key in out:
            raise DiscoveryError(f"duplicate key {key!r} in feature JSON")
        out[key] = value
    return out


def _try_load(candidate: str) -> dict | None:
    for text in (candidate, "{" + candidate + "}"):
        try:
            obj = json.loads(text, object_pairs_hook=_reject_duplicate_keys)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def parse_feature_json(text: str, expected_count: int) -> list[FeatureSpec]:
    """Extract the FEATURES object from raw LLM output.

    Tolerates code fences and surrounding prose, and the template's own
    quirk of emitting '"FEATURES": {...}' without enclosing braces. A count
    mismatch is a hard error: downstream digests assume the requested size.
    """
    fence = _FENCE_RE.search(text)
    candidate = fence.group(1) if fence else text
    obj = _try_load(candidate.strip())
    if obj is None:
        start, end = candidate.find("{"), candidate.rfind("}")
        if start != -1 and end > start:
            obj = _try_load(candidate[start : end + 1])
    if obj is None:
        raise DiscoveryError(f"no JSON object found in output: {text[:200]!r}")
    if "FEATURES" not in obj:
        raise DiscoveryError(f"JSON lacks a 'FEATURES' key: {sorted(obj)!r}")
    raw = obj["FEATURES"]
    if not isinstance(raw, dict):
        raise DiscoveryError("'FEATURES' must be an object keyed by feature name")
    features = []
    for name, body in raw.items():
        if not isinstance(body, dict):
            raise DiscoveryError(f"feature {name!r}: expected an object")
        try:
            features.append(
                FeatureSpec(
                    name=str(name),
                    attribute_desc=str(body["attribute_desc"]),
                    attr_min=str(body["attr_min"]),
                    attr_max=str(body["attr_max"]),
                )
            )
        except KeyError as exc:
            raise DiscoveryError(f"feature {name!r}: missing field {exc}") from None
    if len(features) != expected_count:
        raise DiscoveryError(
            f"expected {expected_count} features, got {len(features)}: "
            f"{[f.name for f in features]!r}"
        )
    return features


def discover_features(
    gateway: Gateway,
    items: Sequence[QuestionnaireItem],
    num_features: int,
    model: str,
    max_tokens: int = 4096,
) -> FeatureSet:
    system, user = build_discovery_prompt(items, num_features)
    response = gateway.complete(
        LlmRequest(
            model=model,
            messages=(Message("system", system), Message("user", user)),
            temperature=0.0,
            max_tokens=max_tokens,
        )
    )
    features = parse_feature_json(response.text, num_features)
    return FeatureSet(
        features=tuple(features),
        provenance={"source": "llm", "model": model, "num_features": num_features},
    )


def save_feature_set(feature_set: FeatureSet, path: str | Path) -> None:
    payload = {
        "provenance": dict(feature_set.provenance),
        "FEATURES": {
            f.name: {
                "attribute_desc": f.attribute_desc,
                "attr_min": f.attr_min,
                "attr_max": f.attr_max,
            }
            for f in feature_set.features
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def load_feature_set(path: str | Path) -> FeatureSet:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh, object_pairs_hook=_reject_duplicate_keys)
        except json.JSONDecodeError as exc:
            raise DiscoveryError(f"{path}: invalid JSON: {exc}") from exc
    if "FEATURES" not in obj:
        raise DiscoveryError(f"{path}: missing 'FEATURES' key")
    features = tuple(
        FeatureSpec(
            name=str(name),
            attribute_desc=str(body["attribute_desc"]),
            attr_min=str(body["attr_min"]),
            attr_max=str(body["attr_max"]),
        )
        for name, body in obj["FEATURES"].items()
    )
    return FeatureSet(features=features, provenance=obj.get("provenance", {}))
