"""Per-user linear reward over feature scores, plus choice prediction.

The reward of a response is the dot product of its feature vector with the
user's fitted weights. Prediction picks the highest-reward response of a
context; held-out accuracy over a split is the evaluation currency for
comparing fit variants.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import numpy.typing as npt

from .choice import WeightVector
from .datasets import PreferenceDataset, QuestionnaireItem, index_questionnaire
from .discovery import FeatureSet
from .scoring import ScoreTable


class RewardModelError(ValueError):
    """Raised for digest or shape mismatches between weights and features."""


@dataclass(frozen=True)
class RewardModel:
    user_id: str
    feature_set: FeatureSet
    weight_vector: WeightVector

    def __post_init__(self) -> None:
        digest = self.weight_vector.feature_set_digest
        if digest and digest != self.feature_set.digest:
            raise RewardModelError(
                f"weights were fitted against feature set {digest[:12]}..., "
                f"got {self.feature_set.digest[:12]}..."
            )
        if len(self.weight_vector.weights) != len(self.feature_set):
            raise RewardModelError(
                f"{len(self.weight_vector.weights)} weights for "
                f"{len(self.feature_set)} features"
            )

    def reward(self, scores: npt.NDArray[np.float64] | Sequence[float]) -> float:
        arr = np.asarray(scores, dtype=np.float64)
        if arr.shape != (len(self.feature_set),):
            raise RewardModelError(
                f"expected {len(self.feature_set)} scores, got shape {arr.shape}"
            )
        return float(arr @ self.weight_vector.weights)

    def rank(self, matrix: npt.NDArray[np.float64]) -> npt.NDArray[np.intp]:
        """Response indices sorted by descending reward, ties by low index."""
        rewards = matrix @ self.weight_vector.weights
        # stable sort on negated rewards keeps earlier rows first on ties
        return np.argsort(-rewards, kind="stable")

    def predict_choice(self, matrix: npt.NDArray[np.float64]) -> int:
        """Index of the highest-reward row; ties go to the lowest index."""
        rewards = matrix @ self.weight_vector.weights
        return int(np.argmax(rewards))


@dataclass(frozen=True)
class AccuracyReport:
    user_id: str
    split: str
    n: int
    accuracy: float
    per_context: tuple[dict, ...]


def accuracy(
    model: RewardModel,
    questionnaire: Sequence[QuestionnaireItem],
    table: ScoreTable,
    dataset: PreferenceDataset,
    context_ids: Iterable[str] | None = None,
    split_name: str = "all",
) -> AccuracyReport:
    """Fraction of contexts where the argmax-reward response was chosen."""
    index = index_questionnaire(questionnaire)
    keep = set(context_ids) if context_ids is not None else None
    rows = []
    hits = 0
    for record in dataset.records:
        if keep is not None and record.context_id not in keep:
            continue
        item = index[record.context_id]
        predicted = model.predict_choice(table.matrix(item))
        predicted_id = item.responses[predicted].response_id
        hit = predicted_id == record.chosen_response_id
        hits += hit
        rows.append(
            {
                "context_id": record.context_id,
                "predicted": predicted_id,
                "chosen": record.chosen_response_id,
                "correct": bool(hit),
            }
        )
    if not rows:
        raise RewardModelError(
            f"user {dataset.user_id!r}: no records in split {split_name!r}"
        )
    return AccuracyReport(
        user_id=dataset.user_id,
        split=split_name,
        n=len(rows),
        accuracy=hits / len(rows),
        per_context=tuple(rows),
    )


def save_report(report: AccuracyReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "user_id": report.user_id,
                "split": report.split,
                "n": report.n,
                "accuracy": report.accuracy,
                "per_context": list(report.per_context),
            },
            fh,
            ensure_ascii=False,
            indent=2,
        )
        fh.write("\n")
