"""Synthetic worlds: random feature scores and rule-following users.

Used to validate the fitting stack end to end with a known ground truth:
draw a score table from a seeded RNG, let a synthetic user with known
weights choose responses, then check that fitting recovers those weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import numpy.typing as npt

from .choice import ChoiceModelError
from .datasets import PreferenceDataset, PreferenceRecord, QuestionnaireItem, ResponseOption
from .discovery import FeatureSet, FeatureSpec
from .scoring import ScoreTable, table_from_fixture


@dataclass(frozen=True, eq=False)
class SyntheticUser:
    """A user whose choices follow a known weight vector."""

    user_id: str
    weights: npt.NDArray[np.float64]
    choice_rule: str = "argmax"
    temperature: float = 1.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.weights, dtype=np.float64)
        if arr.ndim != 1 or not np.all(np.isfinite(arr)):
            raise ChoiceModelError("weights must be a finite 1-D vector")
        if self.choice_rule not in ("argmax", "softmax"):
            raise ChoiceModelError(f"unknown choice_rule {self.choice_rule!r}")
        if self.choice_rule == "softmax" and self.temperature <= 0:
            raise ChoiceModelError(f"temperature must be positive, got {self.temperature}")
        object.__setattr__(self, "weights", arr)


@dataclass(frozen=True)
class SyntheticWorld:
    questionnaire: tuple[QuestionnaireItem, ...]
    feature_set: FeatureSet
    score_table: ScoreTable


def make_synthetic_world(
    num_features: int,
    num_contexts: int,
    k: int,
    seed: int,
    mixing: npt.NDArray[np.float64] | None = None,
) -> SyntheticWorld:
    """Questionnaire plus a score table drawn uniformly from [1, 5].

    An optional (F, F) mixing matrix correlates features: raw uniform draws
    are linearly mixed, then rescaled back into [1, 5] per feature.
    """
    if num_features < 1 or num_contexts < 1 or k < 2:
        raise ChoiceModelError(
            f"need num_features >= 1, num_contexts >= 1, k >= 2; "
            f"got ({num_features}, {num_contexts}, {k})"
        )
    rng = np.random.default_rng(seed)
    scores = rng.uniform(1.0, 5.0, size=(num_contexts, k, num_features))
    if mixing is not None:
        mix = np.asarray(mixing, dtype=np.float64)
        if mix.shape != (num_features, num_features):
            raise ChoiceModelError(
                f"mixing must be ({num_features}, {num_features}), got {mix.shape}"
            )
        mixed = (scores - 1.0) / 4.0 @ mix.T
        flat = mixed.reshape(-1, num_features)
        lo, hi = flat.min(axis=0), flat.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        scores = 1.0 + 4.0 * (mixed - lo) / span

    items = []
    fixture = {}
    for c in range(num_contexts):
        context_id = f"ctx-{c:04d}"
        responses = tuple(
            ResponseOption(
                response_id=f"r{j}",
                response_text=f"synthetic response r{j} for {context_id}",
            )
            for j in range(k)
        )
        items.append(
            QuestionnaireItem(
                context_id=context_id,
                context_text=f"synthetic context {context_id}",
                responses=responses,
            )
        )
        for j in range(k):
            fixture[(context_id, f"r{j}")] = scores[c, j].tolist()

    feature_set = FeatureSet(
        features=tuple(
            FeatureSpec(
                name=f"feat_{i:02d}",
                attribute_desc=f"How strongly does the response express synthetic trait {i}?",
                attr_min="not at all",
                attr_max="extremely",
            )
            for i in range(num_features)
        ),
        provenance={"source": "synthetic", "seed": seed},
    )
    return SyntheticWorld(
        questionnaire=tuple(items),
        feature_set=feature_set,
        score_table=table_from_fixture(feature_set, fixture),
    )


def simulate_choices(
    user: SyntheticUser, world: SyntheticWorld, seed: int = 0
) -> PreferenceDataset:
    """One preference record per context, following the user's choice rule."""
    if world.score_table.num_features != len(user.weights):
        raise ChoiceModelError(
            f"user has {len(user.weights)} weights, world has "
            f"{world.score_table.num_features} features"
        )
    rng = np.random.default_rng(seed)
    records = []
    for item in world.questionnaire:
        rewards = world.score_table.matrix(item) @ user.weights
        if user.choice_rule == "argmax":
            choice = int(np.argmax(rewards))
        else:
            z = rewards / user.temperature
            p = np.exp(z - z.max())
            p /= p.sum()
            choice = int(rng.choice(len(rewards), p=p))
        records.append(
            PreferenceRecord(
                user_id=user.user_id,
                context_id=item.context_id,
                chosen_response_id=item.responses[choice].response_id,
            )
        )
    return PreferenceDataset(user_id=user.user_id, records=tuple(records))


def random_user(
    user_id: str, num_features: int, seed: int, choice_rule: str = "argmax",
    temperature: float = 1.0,
) -> SyntheticUser:
    """User with standard-normal weights, so signs are mixed by design."""
    rng = np.random.default_rng(seed)
    return SyntheticUser(
        user_id=user_id,
        weights=rng.standard_normal(num_features),
        choice_rule=choice_rule,
        temperature=temperature,
    )
