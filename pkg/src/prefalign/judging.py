"""LLM-judge evaluation: rubric scores, pairwise matches, winrate, and Elo.

Judges answer with free-form feedback ending in a \\boxed{} verdict. Scored
evaluation reads an integer 0-5; pairwise evaluation reads the winning
response id after the two texts were presented in a randomized order (and
maps the verdict back). Tournaments aggregate pairwise outcomes into
winrates and shuffle-averaged Elo ratings.
"""

from __future__ import annotations

import itertools
import json
import math
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .datasets import QuestionnaireItem, UserProfile
from .gateway import Gateway, LlmRequest, Message
from .templates import PromptPair, prompt_pair


class JudgeError(RuntimeError):
    """Raised for unusable judge inputs or repeated verdict failures."""


class VerdictParseError(JudgeError):
    """Raised when no valid \\boxed{} verdict can be read from the output."""


_BOXED_RE = re.compile(r"\\boxed\{\s*(-?\d+)\s*\}")


def parse_boxed_verdict(text: str, kind: str = "score") -> int:
    """Read the last \\boxed{integer} from judge output.

    kind='score' accepts 0..5; kind='id' accepts 1 or 2.
    """
    if kind not in ("score", "id"):
        raise ValueError(f"kind must be 'score' or 'id', got {kind!r}")
    matches = _BOXED_RE.findall(text)
    if not matches:
        raise VerdictParseError(f"no \\boxed{{}} verdict in output: {text[-200:]!r}")
    value = int(matches[-1])
    low, high = (0, 5) if kind == "score" else (1, 2)
    if not low <= value <= high:
        raise VerdictParseError(
            f"verdict {value} outside [{low}, {high}] for kind {kind!r}"
        )
    return value


@dataclass(frozen=True)
class JudgeVerdictScore:
    context_id: str
    approach: str
    raw_feedback: str
    score: int
    user_id: str = ""


@dataclass(frozen=True)
class Matchup:
    user_id: str
    context_id: str
    approach_a: str
    approach_b: str


OUTCOMES = ("a_wins", "b_wins", "draw")


@dataclass(frozen=True)
class MatchResult:
    approach_a: str
    approach_b: str
    context_id: str
    outcome: str
    presented_order: tuple[str, str]
    user_id: str = ""

    def __post_init__(self) -> None:
        if self.outcome not in OUTCOMES:
            raise JudgeError(f"unknown outcome {self.outcome!r}")
        if set(self.presented_order) != {self.approach_a, self.approach_b}:
            raise JudgeError(
                f"presented_order {self.presented_order!r} does not match "
                f"({self.approach_a!r}, {self.approach_b!r})"
            )


@dataclass(frozen=True)
class EloConfig:
    initial_rating: float = 1500.0
    k_factor: float = 16.0
    num_shuffles: int = 25
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k_factor <= 0:
            raise JudgeError(f"k_factor must be positive, got {self.k_factor}")
        if self.num_shuffles < 1:
            raise JudgeError(f"num_shuffles must be >= 1, got {self.num_shuffles}")


def _judge_request(
    model: str, templates: PromptPair, values: Mapping[str, str], max_tokens: int
) -> LlmRequest:
    return LlmRequest(
        model=model,
        messages=(
            Message("system", templates.system),
            Message("user", templates.render_user(values)),
        ),
        temperature=0.0,
        max_tokens=max_tokens,
    )


def judge_score(
    gateway: Gateway,
    model: str,
    profile: UserProfile,
    context_text: str,
    response_text: str,
    templates: PromptPair | None = None,
    context_id: str = "",
    approach: str = "",
    max_tokens: int = 1024,
    retries: int = 1,
) -> JudgeVerdictScore:
    """Rubric-score one response for one user; retries once on a bad verdict."""
    templates = templates or prompt_pair("judge_score", "generic")
    request = _judge_request(
        model,
        templates,
        {
            "profile_desc": profile.description,
            "context": context_text,
            "generated_response": response_text,
        },
        max_tokens,
    )
    last: Exception | None = None
    for _ in range(retries + 1):
        text = gateway.complete(request).text
        try:
            score = parse_boxed_verdict(text, kind="score")
        except VerdictParseError as exc:
            last = exc
            continue
        return JudgeVerdictScore(
            context_id=context_id,
            approach=approach,
            raw_feedback=text,
            score=score,
            user_id=profile.user_id,
        )
    raise JudgeError(f"no parseable score after {retries + 1} attempts: {last}")


def pairwise_judge(
    gateway: Gateway,
    model: str,
    profile: UserProfile,
    item: QuestionnaireItem,
    candidate_a: tuple[str, str],
    candidate_b: tuple[str, str],
    rng: random.Random,
    templates: PromptPair | None = None,
    max_tokens: int = 1024,
    retries: int = 1,
) -> MatchResult:
    """Judge one (approach, text) pair in randomized presentation order.

    The swap decision comes from the caller's RNG so tournaments are
    replayable; an unparseable verdict (after one retry) counts as a draw.
    """
    templates = templates or prompt_pair("judge_pair", "generic")
    approach_a, text_a = candidate_a
    approach_b, text_b = candidate_b
    swapped = rng.random() < 0.5
    first, second = ((approach_b, text_b), (approach_a, text_a)) if swapped else (
        (approach_a, text_a),
        (approach_b, text_b),
    )
    request = _judge_request(
        model,
        templates,
        {
            "profile_desc": profile.description,
            "context": item.context_text,
            "generated_response1": first[1],
            "generated_response2": second[1],
        },
        max_tokens,
    )
    verdict: int | None = None
    for _ in range(retries + 1):
        text = gateway.complete(request).text
        try:
            verdict = parse_boxed_verdict(text, kind="id")
            break
        except VerdictParseError:
            continue
    if verdict is None:
        outcome = "draw"
    else:
        winner = first[0] if verdict == 1 else second[0]
        outcome = "a_wins" if winner == approach_a else "b_wins"
    return MatchResult(
        approach_a=approach_a,
        approach_b=approach_b,
        context_id=item.context_id,
        outcome=outcome,
        presented_order=(first[0], second[0]),
        user_id=profile.user_id,
    )


def winrate(results: Sequence[MatchResult], approach: str) -> float:
    """Percentage of points (win=1, draw=0.5) in matches involving approach."""
    involved = [
        r for r in results if approach in (r.approach_a, r.approach_b)
    ]
    if not involved:
        raise JudgeError(f"no matches involving approach {approach!r}")
    points = 0.0
    for r in involved:
        if r.outcome == "draw":
            points += 0.5
        elif (r.outcome == "a_wins") == (r.approach_a == approach):
            points += 1.0
    return 100.0 * points / len(involved)


def generate_matchups(
    approaches: Sequence[str],
    user_contexts: Mapping[str, Sequence[str]],
    contexts_per_user: int,
    rng: random.Random,
) -> list[Matchup]:
    """Every unordered approach pair on a per-user sample of contexts."""
    if len(approaches) < 2:
        raise JudgeError(f"need at least 2 approaches, got {len(approaches)}")
    if len(set(approaches)) != len(approaches):
        raise JudgeError("duplicate approach names")
    if contexts_per_user < 1:
        raise JudgeError(f"contexts_per_user must be >= 1, got {contexts_per_user}")
    matchups = []
    for user_id in sorted(user_contexts):
        pool = list(user_contexts[user_id])
        if not pool:
            raise JudgeError(f"user {user_id!r} has no contexts")
        if contexts_per_user >= len(pool):
            chosen = pool
        else:
            chosen = rng.sample(pool, contexts_per_user)
        for approach_a, approach_b in itertools.combinations(approaches, 2):
            for context_id in chosen:
                matchups.append(
                    Matchup(
                        user_id=user_id,
                        context_id=context_id,
                        approach_a=approach_a,
                        approach_b=approach_b,
                    )
                )
    return matchups


def _approaches_in(results: Sequence[MatchResult]) -> list[str]:
    seen: dict[str, None] = {}
    for r in results:
        seen.setdefault(r.approach_a)
        seen.setdefault(r.approach_b)
    return list(seen)


def elo_sequential(
    results: Sequence[MatchResult],
    initial_rating: float = 1500.0,
    k_factor: float = 16.0,
    approaches: Sequence[str] | None = None,
) -> dict[str, float]:
    """One sequential Elo pass over results in the given order.

    Each match moves the two ratings by exactly +delta and -delta, so the
    total stays at n * initial_rating.
    """
    if not results:
        raise JudgeError("no match results")
    known = list(approaches) if approaches is not None else _approaches_in(results)
    ratings = {a: float(initial_rating) for a in known}
    for r in results:
        if r.approach_a not in ratings or r.approach_b not in ratings:
            raise JudgeError(
                f"result names unknown approach: {r.approach_a!r} vs {r.approach_b!r}"
            )
        ra, rb = ratings[r.approach_a], ratings[r.approach_b]
        expected_a = 1.0 / (1.0 + 10.0 ** ((rb - ra) / 400.0))
        actual_a = {"a_wins": 1.0, "b_wins": 0.0, "draw": 0.5}[r.outcome]
        delta = k_factor * (actual_a - expected_a)
        ratings[r.approach_a] = ra + delta
        ratings[r.approach_b] = rb - delta
    return ratings


def elo_ratings(
    results: Sequence[MatchResult],
    config: EloConfig = EloConfig(),
    approaches: Sequence[str] | None = None,
) -> dict[str, float]:
    """Elo averaged over seeded shuffles of the match order.

    Single-pass Elo is order-dependent; averaging num_shuffles independent
    passes (each from fresh initial ratings) removes the order artifact.
    """
    if not results:
        raise JudgeError("no match results")
    known = list(approaches) if approaches is not None else _approaches_in(results)
    base = random.Random(config.seed)
    totals: dict[str, list[float]] = {a: [] for a in known}
    for _ in range(config.num_shuffles):
        order = list(results)
        random.Random(base.getrandbits(64)).shuffle(order)
        ratings = elo_sequential(
            order, config.initial_rating, config.k_factor, approaches=known
        )
        for a, rating in ratings.items():
            totals[a].append(rating)
    return {a: math.fsum(vals) / config.num_shuffles for a, vals in totals.items()}


def save_match_results(results: Iterable[MatchResult], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(
                json.dumps(
                    {
                        "approach_a": r.approach_a,
                        "approach_b": r.approach_b,
                        "user_id": r.user_id,
                        "context_id": r.context_id,
                        "outcome": r.outcome,
                        "presented_order": list(r.presented_order),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_match_results(path: str | Path) -> list[MatchResult]:
    results = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise JudgeError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                results.append(
                    MatchResult(
                        approach_a=str(obj["approach_a"]),
                        approach_b=str(obj["approach_b"]),
                        context_id=str(obj["context_id"]),
                        outcome=str(obj["outcome"]),
                        presented_order=tuple(obj["presented_order"]),
                        user_id=str(obj.get("user_id", "")),
                    )
                )
            except KeyError as exc:
                raise JudgeError(f"{path}:{lineno}: missing key {exc}") from None
    return results


def load_generations(path: str | Path) -> dict[tuple[str, str, str], str]:
    """Generations JSONL keyed by (approach, user_id, context_id)."""
    generations: dict[tuple[str, str, str], str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                key = (str(obj["approach"]), str(obj["user_id"]), str(obj["context_id"]))
                text = str(obj["text"])
            except (json.JSONDecodeError, KeyError) as exc:
                raise JudgeError(f"{path}:{lineno}: {exc}") from exc
            if key in generations:
                raise JudgeError(f"{path}:{lineno}: duplicate generation for {key!r}")
            generations[key] = text
    return generations


def save_generations(
    generations: Mapping[tuple[str, str, str], str], path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (approach, user_id, context_id), text in sorted(generations.items()):
            fh.write(
                json.dumps(
                    {
                        "approach": approach,
                        "user_id": user_id,
                        "context_id": context_id,
                        "text": text,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def play_matchups(
    gateway: Gateway,
    model: str,
    matchups: Sequence[Matchup],
    generations: Mapping[tuple[str, str, str], str],
    items_by_id: Mapping[str, QuestionnaireItem],
    profiles: Mapping[str, UserProfile],
    rng: random.Random,
    templates: PromptPair | None = None,
    max_tokens: int = 1024,
) -> list[MatchResult]:
    """Judge every matchup; missing generations or profiles fail fast."""
    results = []
    for m in matchups:
        try:
            profile = profiles[m.user_id]
            item = items_by_id[m.context_id]
            text_a = generations[(m.approach_a, m.user_id, m.context_id)]
            text_b = generations[(m.approach_b, m.user_id, m.context_id)]
        except KeyError as exc:
            raise JudgeError(f"matchup {m!r}: missing data for {exc}") from None
        results.append(
            pairwise_judge(
                gateway,
                model,
                profile,
                item,
                (m.approach_a, text_a),
                (m.approach_b, text_b),
                rng,
                templates,
                max_tokens,
            )
        )
    return results


def mean_judge_score(verdicts: Sequence[JudgeVerdictScore]) -> float:
    if not verdicts:
        raise JudgeError("no verdicts to average")
    return math.fsum(v.score for v in verdicts) / len(verdicts)
