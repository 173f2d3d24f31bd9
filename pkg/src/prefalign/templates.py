"""Prompt template loading and placeholder substitution.

Templates live as plain text files under templates/ and may contain literal
braces (JSON examples, \\boxed{}), so rendering replaces only the known
placeholder names in a single pass instead of using str.format.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from typing import Mapping

KNOWN_PLACEHOLDERS = frozenset(
    {
        "contexts",
        "num_features",
        "attribute_desc",
        "attr_min",
        "attr_max",
        "context",
        "response",
        "profile_desc",
        "generated_response",
        "generated_response1",
        "generated_response2",
    }
)

_PLACEHOLDER_RE = re.compile(
    r"\{(" + "|".join(sorted(KNOWN_PLACEHOLDERS)) + r")\}"
)

DOMAINS = ("dnd", "elip", "generic")


class TemplateError(ValueError):
    """Raised for unknown templates or placeholder mismatches."""


def load_template(name: str) -> str:
    ref = resources.files("prefalign") / "templates" / f"{name}.txt"
    if not ref.is_file():
        raise TemplateError(f"no such template: {name!r}")
    return ref.read_text(encoding="utf-8")


def placeholders(template: str) -> set[str]:
    """Known placeholder names that occur in the template."""
    return set(_PLACEHOLDER_RE.findall(template))


def render(template: str, values: Mapping[str, str]) -> str:
    """Substitute every placeholder exactly once.

    The value set must match the template's placeholders exactly; a missing
    value or a value with no slot is a hard error, since either one silently
    produces a broken prompt. Substitution is a single regex pass, so braces
    inside substituted values are never re-expanded.
    """
    unknown = set(values) - KNOWN_PLACEHOLDERS
    if unknown:
        raise TemplateError(f"unknown placeholder names: {sorted(unknown)}")
    expected = placeholders(template)
    missing = expected - set(values)
    if missing:
        raise TemplateError(f"missing values for placeholders: {sorted(missing)}")
    unused = set(values) - expected
    if unused:
        raise TemplateError(f"values with no matching placeholder: {sorted(unused)}")
    return _PLACEHOLDER_RE.sub(lambda m: str(values[m.group(1)]), template)


@dataclass(frozen=True)
class PromptPair:
    system: str
    user: str

    def render_user(self, values: Mapping[str, str]) -> str:
        return render(self.user, values)


def prompt_pair(kind: str, domain: str = "generic") -> PromptPair:
    """Load a system/user template pair.

    Kinds: 'discovery' (domain-independent), 'score', 'generate',
    'judge_score', 'judge_pair'.
    """
    if kind == "discovery":
        return PromptPair(
            system=load_template("discovery_system"),
            user=load_template("discovery_user"),
        )
    if domain not in DOMAINS:
        raise TemplateError(f"unknown domain {domain!r}, expected one of {DOMAINS}")
    if kind not in ("score", "generate", "judge_score", "judge_pair"):
        raise TemplateError(f"unknown template kind {kind!r}")
    return PromptPair(
        system=load_template(f"{kind}_{domain}_system"),
        user=load_template(f"{kind}_{domain}_user"),
    )
