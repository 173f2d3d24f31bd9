"""Prompted feature functions: score every (context, response) cell on 1-5.

A scoring request asks for a single next token and reads the integer scale
tokens out of its top-logprob distribution. The feature score is the
probability-weighted average over the captured scale tokens, renormalized
by the captured mass. Weighted averages are computed in exact rational
arithmetic and rounded once, so point-mass and uniform distributions give
exact identities.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import numpy.typing as npt

from .choice import ChoiceInstance
from .datasets import (
    PreferenceDataset,
    QuestionnaireItem,
    index_questionnaire,
)
from .discovery import FeatureSet, FeatureSpec
from .gateway import Gateway, LlmRequest, LlmResponse, Message
from .templates import PromptPair, prompt_pair


class ScoringError(ValueError):
    """Raised for invalid scales, incomplete tables, or failed score calls."""


class ScoreParseError(ScoringError):
    """Raised when no scale token carries probability mass."""


def _check_scale(score_min: int, score_max: int) -> None:
    # single-character tokens only: a two-digit scale cannot be read from
    # one next-token distribution
    if not (0 <= score_min < score_max <= 9):
        raise ScoringError(
            f"scale must satisfy 0 <= min < max <= 9, got [{score_min}, {score_max}]"
        )


@dataclass(frozen=True)
class TokenScoreDistribution:
    """Probability mass observed on each integer scale token."""

    mass: Mapping[int, float]
    score_min: int = 1
    score_max: int = 5

    def __post_init__(self) -> None:
        _check_scale(self.score_min, self.score_max)
        for score, p in self.mass.items():
            if not self.score_min <= score <= self.score_max:
                raise ScoringError(
                    f"score {score} outside scale [{self.score_min}, {self.score_max}]"
                )
            if not math.isfinite(p) or p < 0:
                raise ScoringError(f"invalid probability {p!r} for score {score}")

    @property
    def captured_mass(self) -> float:
        return float(sum(Fraction(p) for p in self.mass.values()))


def weighted_score(distribution: TokenScoreDistribution) -> float:
    """Probability-weighted average score, renormalized over captured mass."""
    num = Fraction(0)
    den = Fraction(0)
    for score, p in distribution.mass.items():
        if p > 0:
            num += score * Fraction(p)
            den += Fraction(p)
    if den == 0:
        raise ScoreParseError("no probability mass on any scale token")
    return float(num / den)


def argmax_score(distribution: TokenScoreDistribution) -> int:
    """Most likely scale token; ties resolve to the lower score."""
    if not distribution.mass or all(p == 0 for p in distribution.mass.values()):
        raise ScoreParseError("no probability mass on any scale token")
    best = max(sorted(distribution.mass), key=lambda s: distribution.mass[s])
    return best


def extract_score_distribution(
    response: LlmResponse, score_min: int = 1, score_max: int = 5
) -> TokenScoreDistribution:
    """Collect mass on scale tokens from the first-token logprobs.

    Tokens are stripped of surrounding whitespace before matching, so ' 3'
    and '3' both count toward score 3.
    """
    _check_scale(score_min, score_max)
    if not response.first_token_logprobs:
        raise ScoreParseError("response has no first-token logprobs")
    mass: dict[int, float] = {}
    for token, logprob in response.first_token_logprobs.items():
        stripped = token.strip()
        if len(stripped) == 1 and stripped.isdigit():
            score = int(stripped)
            if score_min <= score <= score_max:
                mass[score] = mass.get(score, 0.0) + math.exp(logprob)
    if not mass:
        top = sorted(
            response.first_token_logprobs.items(), key=lambda kv: -kv[1]
        )[:5]
        raise ScoreParseError(
            f"no scale token in [{score_min}, {score_max}] among top tokens {top!r}"
        )
    return TokenScoreDistribution(mass=mass, score_min=score_min, score_max=score_max)


@dataclass(frozen=True)
class FeatureVector:
    context_id: str
    response_id: str
    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.scores:
            raise ScoringError("empty score vector")
        if any(not math.isfinite(s) for s in self.scores):
            raise ScoringError(
                f"non-finite score for ({self.context_id}, {self.response_id})"
            )

    def as_array(self) -> npt.NDArray[np.float64]:
        return np.asarray(self.scores, dtype=np.float64)


class ScoreTable:
    """All feature vectors for a questionnaire, tied to one feature set."""

    def __init__(self, feature_set_digest: str, vectors: Iterable[FeatureVector]):
        self.feature_set_digest = feature_set_digest
        self._cells: dict[tuple[str, str], FeatureVector] = {}
        width: int | None = None
        for vec in vectors:
            key = (vec.context_id, vec.response_id)
            if key in self._cells:
                raise ScoringError(f"duplicate score cell {key!r}")
            if width is None:
                width = len(vec.scores)
            elif len(vec.scores) != width:
                raise ScoringError(
                    f"cell {key!r} has {len(vec.scores)} scores, expected {width}"
                )
            self._cells[key] = vec
        if width is None:
            raise ScoringError("score table is empty")
        self.num_features = width

    def __len__(self) -> int:
        return len(self._cells)

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self._cells

    def vector(self, context_id: str, response_id: str) -> FeatureVector:
        try:
            return self._cells[(context_id, response_id)]
        except KeyError:
            raise ScoringError(
                f"no scores for context {context_id!r}, response {response_id!r}"
            ) from None

    def matrix(self, item: QuestionnaireItem) -> npt.NDArray[np.float64]:
        """(K, F) score matrix with rows in the item's response order."""
        return np.stack(
            [self.vector(item.context_id, r.response_id).as_array() for r in item.responses]
        )

    def require_complete(self, questionnaire: Sequence[QuestionnaireItem]) -> None:
        missing = [
            (item.context_id, r.response_id)
            for item in questionnaire
            for r in item.responses
            if (item.context_id, r.response_id) not in self._cells
        ]
        if missing:
            raise ScoringError(
                f"score table missing {len(missing)} cells, first: {missing[:5]!r}"
            )

    def rows(self) -> list[FeatureVector]:
        return [self._cells[key] for key in sorted(self._cells)]


def save_score_table(table: ScoreTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for vec in table.rows():
            fh.write(
                json.dumps(
                    {
                        "context_id": vec.context_id,
                        "response_id": vec.response_id,
                        "scores": list(vec.scores),
                        "feature_set": table.feature_set_digest,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_score_table(path: str | Path) -> ScoreTable:
    vectors = []
    digest: str | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ScoringError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                vec = FeatureVector(
                    context_id=str(obj["context_id"]),
                    response_id=str(obj["response_id"]),
                    scores=tuple(float(s) for s in obj["scores"]),
                )
                line_digest = str(obj["feature_set"])
            except KeyError as exc:
                raise ScoringError(f"{path}:{lineno}: missing key {exc}") from None
            if digest is None:
                digest = line_digest
            elif line_digest != digest:
                raise ScoringError(
                    f"{path}:{lineno}: feature-set digest changed mid-file"
                )
            vectors.append(vec)
    if digest is None:
        raise ScoringError(f"{path}: empty score table")
    return ScoreTable(feature_set_digest=digest, vectors=vectors)


def table_from_fixture(
    feature_set: FeatureSet,
    fixture: Mapping[tuple[str, str], Sequence[float]],
) -> ScoreTable:
    """Build a table from an explicit score map (tests, synthetic worlds)."""
    vectors = []
    for (context_id, response_id), scores in fixture.items():
        if len(scores) != len(feature_set):
            raise ScoringError(
                f"cell ({context_id!r}, {response_id!r}) has {len(scores)} scores, "
                f"feature set has {len(feature_set)}"
            )
        vectors.append(
            FeatureVector(
                context_id=context_id,
                response_id=response_id,
                scores=tuple(float(s) for s in scores),
            )
        )
    return ScoreTable(feature_set_digest=feature_set.digest, vectors=vectors)


def _score_request(
    model: str,
    templates: PromptPair,
    feature: FeatureSpec,
    context_text: str,
    response_text: str,
    top_logprobs: int,
) -> LlmRequest:
    user = templates.render_user(
        {
            "attribute_desc": feature.attribute_desc,
            "attr_min": feature.attr_min,
            "attr_max": feature.attr_max,
            "context": context_text,
            "response": response_text,
        }
    )
    return LlmRequest(
        model=model,
        messages=(Message("system", templates.system), Message("user", user)),
        temperature=0.0,
        max_tokens=1,
        want_logprobs=True,
        top_logprobs=top_logprobs,
    )


def score_response(
    gateway: Gateway,
    model: str,
    feature: FeatureSpec,
    context_text: str,
    response_text: str,
    templates: PromptPair | None = None,
    score_min: int = 1,
    score_max: int = 5,
    top_logprobs: int = 20,
) -> float:
    """Score one response against one feature via a single-token completion."""
    templates = templates or prompt_pair("score", "generic")
    request = _score_request(
        model, templates, feature, context_text, response_text, top_logprobs
    )
    distribution = extract_score_distribution(
        gateway.complete(request), score_min, score_max
    )
    return weighted_score(distribution)


def build_score_table(
    gateway: Gateway,
    model: str,
    feature_set: FeatureSet,
    questionnaire: Sequence[QuestionnaireItem],
    templates: PromptPair | None = None,
    score_min: int = 1,
    score_max: int = 5,
    parallelism: int = 1,
    top_logprobs: int = 20,
) -> ScoreTable:
    """Score every (context, response, feature) cell of the questionnaire.

    Failures are collected per cell and reported together so one flaky call
    does not waste the rest of a large scoring run.
    """
    templates = templates or prompt_pair("score", "generic")
    jobs = [
        (item.context_id, option.response_id, item.context_text, option.response_text, feature)
        for item in questionnaire
        for option in item.responses
        for feature in feature_set.features
    ]

    def run(job: tuple) -> float:
        context_id, response_id, context_text, response_text, feature = job
        return score_response(
            gateway, model, feature, context_text, response_text,
            templates, score_min, score_max, top_logprobs,
        )

    results: dict[tuple, float] = {}
    failures: list[tuple[str, str, str, str]] = []
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(lambda j: _guarded(run, j), jobs))
    else:
        outcomes = [_guarded(run, job) for job in jobs]
    for job, outcome in zip(jobs, outcomes):
        context_id, response_id, _, _, feature = job
        if isinstance(outcome, Exception):
            failures.append((context_id, response_id, feature.name, str(outcome)))
        else:
            results[(context_id, response_id, feature.name)] = outcome
    if failures:
        shown = "; ".join(
            f"({c}, {r}, {f}): {msg}" for c, r, f, msg in failures[:5]
        )
        raise ScoringError(f"{len(failures)} score cells failed: {shown}")

    vectors = [
        FeatureVector(
            context_id=item.context_id,
            response_id=option.response_id,
            scores=tuple(
                results[(item.context_id, option.response_id, f.name)]
                for f in feature_set.features
            ),
        )
        for item in questionnaire
        for option in item.responses
    ]
    return ScoreTable(feature_set_digest=feature_set.digest, vectors=vectors)


def _guarded(fn: Callable, job: tuple) -> "float | Exception":
    try:
        return fn(job)
    except Exception as exc:  # collected and re-raised with context by caller
        return exc


def choice_instances(
    questionnaire: Sequence[QuestionnaireItem],
    table: ScoreTable,
    dataset: PreferenceDataset,
    context_ids: Iterable[str] | None = None,
) -> list[ChoiceInstance]:
    """Bridge preferences and scores into fit-ready instances.

    Instances follow the dataset's record order, optionally restricted to a
    split's context ids.
    """
    index = index_questionnaire(questionnaire)
    keep = set(context_ids) if context_ids is not None else None
    instances = []
    for record in dataset.records:
        if keep is not None and record.context_id not in keep:
            continue
        item = index.get(record.context_id)
        if item is None:
            raise ScoringError(f"unknown context {record.context_id!r} in preferences")
        instances.append(
            ChoiceInstance(
                features=table.matrix(item),
                chosen_index=item.response_index(record.chosen_response_id),
            )
        )
    return instances


CandidateScorer = Callable[[QuestionnaireItem, str], npt.NDArray[np.float64]]


def llm_candidate_scorer(
    gateway: Gateway,
    model: str,
    feature_set: FeatureSet,
    templates: PromptPair | None = None,
    score_min: int = 1,
    score_max: int = 5,
) -> CandidateScorer:
    """Scorer for free-form candidate texts (sampling loops, reranking)."""
    templates = templates or prompt_pair("score", "generic")

    def score(item: QuestionnaireItem, text: str) -> npt.NDArray[np.float64]:
        return np.asarray(
            [
                score_response(
                    gateway, model, feature, item.context_text, text,
                    templates, score_min, score_max,
                )
                for feature in feature_set.features
            ],
            dtype=np.float64,
        )

    return score


def fixture_candidate_scorer(
    fixture: Mapping[tuple[str, str], Sequence[float]],
) -> CandidateScorer:
    """Offline candidate scorer keyed by (context_id, candidate text)."""

    def score(item: QuestionnaireItem, text: str) -> npt.NDArray[np.float64]:
        try:
            return np.asarray(fixture[(item.context_id, text)], dtype=np.float64)
        except KeyError:
            raise ScoringError(
                f"fixture has no scores for context {item.context_id!r}, "
                f"text {text[:60]!r}"
            ) from None

    return score
