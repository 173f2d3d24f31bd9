"""Reward-guided sampling loops: best-of-N reranking and iterative tuning.

Each round samples candidates per context, scores them with the user's
reward model, and carries the incumbent best forward so the per-context
best reward can never decrease. Rounds emit trainer-ready datasets (SFT
top-1 or DPO best-vs-rest pairs) and optionally invoke an external trainer
between rounds.
"""

from __future__ import annotations

import dataclasses
import json
import random
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

from .datasets import QuestionnaireItem
from .gateway import Gateway, LlmRequest, Message
from .reward import RewardModel
from .scoring import CandidateScorer
from .templates import PromptPair, prompt_pair


class TuningError(ValueError):
    """Raised for bad loop configuration or unusable candidate sets."""


class TrainerError(RuntimeError):
    """Raised when an external trainer command fails."""


ORIGINS = ("sampled", "carryover", "initial_chosen")


@dataclass(frozen=True)
class CandidateSample:
    context_id: str
    text: str
    reward: float | None = None
    origin: str = "sampled"

    def __post_init__(self) -> None:
        if not self.text:
            raise TuningError(f"empty candidate text for context {self.context_id!r}")
        if self.origin not in ORIGINS:
            raise TuningError(f"unknown origin {self.origin!r}")


@dataclass(frozen=True)
class LoopConfig:
    num_samples: int = 10
    sample_temperature: float = 1.2
    num_iters: int = 5
    trainer_mode: str = "none"

    def __post_init__(self) -> None:
        if self.num_samples < 1:
            raise TuningError(f"num_samples must be >= 1, got {self.num_samples}")
        if self.sample_temperature < 0:
            raise TuningError(
                f"sample_temperature must be >= 0, got {self.sample_temperature}"
            )
        if self.num_iters < 1:
            raise TuningError(f"num_iters must be >= 1, got {self.num_iters}")
        if self.trainer_mode not in ("none", "sft", "dpo-pairs"):
            raise TuningError(f"unknown trainer_mode {self.trainer_mode!r}")


class Policy(Protocol):
    def sample(self, item: QuestionnaireItem, temperature: float) -> str: ...


class GatewayPolicy:
    """Samples candidate texts from a chat-completions endpoint."""

    def __init__(
        self,
        gateway: Gateway,
        model: str,
        templates: PromptPair | None = None,
        max_tokens: int = 512,
    ):
        self._gateway = gateway
        self._model = model
        self._templates = templates or prompt_pair("generate", "generic")
        self._max_tokens = max_tokens

    def sample(self, item: QuestionnaireItem, temperature: float) -> str:
        user = self._templates.render_user({"context": item.context_text})
        response = self._gateway.complete(
            LlmRequest(
                model=self._model,
                messages=(
                    Message("system", self._templates.system),
                    Message("user", user),
                ),
                temperature=temperature,
                max_tokens=self._max_tokens,
            )
        )
        text = response.text.strip()
        if not text:
            raise TuningError(f"policy returned empty text for {item.context_id!r}")
        return text


class FixturePolicy:
    """Draws from per-context text pools with a seeded RNG (offline runs)."""

    def __init__(self, pools: Mapping[str, Sequence[str]], seed: int = 0):
        if not pools:
            raise TuningError("fixture policy needs at least one pool")
        self._pools = {cid: list(texts) for cid, texts in pools.items()}
        for cid, texts in self._pools.items():
            if not texts:
                raise TuningError(f"empty pool for context {cid!r}")
        self._rng = random.Random(seed)

    def sample(self, item: QuestionnaireItem, temperature: float) -> str:
        try:
            pool = self._pools[item.context_id]
        except KeyError:
            raise TuningError(f"no pool for context {item.context_id!r}") from None
        return self._rng.choice(pool)


def sample_candidates(
    policy: Policy, item: QuestionnaireItem, num_samples: int, temperature: float
) -> list[CandidateSample]:
    return [
        CandidateSample(context_id=item.context_id, text=policy.sample(item, temperature))
        for _ in range(num_samples)
    ]


def rank_with_carryover(
    candidates: Sequence[CandidateSample],
    carryover: CandidateSample | None,
    model: RewardModel,
    score_fn: CandidateScorer,
    item: QuestionnaireItem,
) -> list[CandidateSample]:
    """Score, dedup, and sort candidates by descending reward.

    The carryover is prepended before dedup so a re-sampled duplicate of the
    incumbent collapses into it, and the stable sort keeps it ahead on
    reward ties. With the carryover present, the top reward can never drop
    below the previous round's best.
    """
    pool = ([carryover] if carryover is not None else []) + list(candidates)
    if not pool:
        raise TuningError(f"no candidates for context {item.context_id!r}")
    seen: set[str] = set()
    unique = []
    for candidate in pool:
        if candidate.text in seen:
            continue
        seen.add(candidate.text)
        unique.append(candidate)
    scored = [
        dataclasses.replace(c, reward=model.reward(score_fn(item, c.text)))
        for c in unique
    ]
    return sorted(scored, key=lambda c: -c.reward)


def emit_sft_dataset(
    ranked: Mapping[str, Sequence[CandidateSample]],
    items_by_id: Mapping[str, QuestionnaireItem],
    path: str | Path,
) -> None:
    """One line per context: the context text and its best response."""
    with open(path, "w", encoding="utf-8") as fh:
        for context_id in sorted(ranked):
            best = ranked[context_id][0]
            fh.write(
                json.dumps(
                    {
                        "context": items_by_id[context_id].context_text,
                        "response": best.text,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def emit_dpo_pairs(
    ranked: Mapping[str, Sequence[CandidateSample]],
    items_by_id: Mapping[str, QuestionnaireItem],
    path: str | Path,
) -> None:
    """Best-vs-rest pairs: the top candidate against each lower-ranked one."""
    for context_id, candidates in ranked.items():
        if len(candidates) < 2:
            raise TuningError(
                f"context {context_id!r} has {len(candidates)} distinct candidates; "
                "need at least 2 to form preference pairs"
            )
    with open(path, "w", encoding="utf-8") as fh:
        for context_id in sorted(ranked):
            candidates = ranked[context_id]
            context_text = items_by_id[context_id].context_text
            for lower in candidates[1:]:
                fh.write(
                    json.dumps(
                        {
                            "context": context_text,
                            "chosen": candidates[0].text,
                            "rejected": lower.text,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )


TrainerHook = Callable[[Path, int, Policy], Policy]


def shell_trainer(command_template: str) -> TrainerHook:
    """Trainer hook that shells out; {dataset} and {round} are substituted."""

    def hook(dataset_path: Path, round_index: int, policy: Policy) -> Policy:
        command = command_template.replace("{dataset}", str(dataset_path)).replace(
            "{round}", str(round_index)
        )
        result = subprocess.run(command, shell=True, capture_output=True, text=True)
        if result.returncode != 0:
            raise TrainerError(
                f"trainer command failed (exit {result.returncode}): "
                f"{command!r}: {result.stderr[:500]}"
            )
        return policy

    return hook


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    dataset_path: str
    best_rewards: Mapping[str, float]
    best_texts: Mapping[str, str]


@dataclass(frozen=True)
class LoopReport:
    config: LoopConfig
    pairing: str
    rounds: tuple[RoundRecord, ...]


def save_loop_report(report: LoopReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "config": dataclasses.asdict(report.config),
                "pairing": report.pairing,
                "rounds": [
                    {
                        "round": r.round_index,
                        "dataset": r.dataset_path,
                        "best_rewards": dict(sorted(r.best_rewards.items())),
                        "best_texts": dict(sorted(r.best_texts.items())),
                    }
                    for r in report.rounds
                ],
            },
            fh,
            ensure_ascii=False,
            indent=2,
        )
        fh.write("\n")


def _write_state(
    out_dir: Path, next_round: int, carryover: Mapping[str, CandidateSample]
) -> None:
    tmp = out_dir / "state.json.tmp"
    tmp.write_text(
        json.dumps(
            {
                "next_round": next_round,
                "carryover": {
                    cid: {"text": c.text, "origin": c.origin}
                    for cid, c in sorted(carryover.items())
                },
            },
            ensure_ascii=False,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    tmp.replace(out_dir / "state.json")


def run_loop(
    policy: Policy,
    items: Sequence[QuestionnaireItem],
    model: RewardModel,
    score_fn: CandidateScorer,
    config: LoopConfig,
    initial_chosen: Mapping[str, str],
    out_dir: str | Path,
    trainer_hook: TrainerHook | None = None,
    resume: bool = False,
) -> LoopReport:
    """Run the sample/rank/emit/train loop for config.num_iters rounds.

    Round 1 seeds the carryover with each context's user-chosen response;
    later rounds carry the incumbent best. State is checkpointed after every
    round so an interrupted run can resume.
    """
    if not items:
        raise TuningError("no contexts to tune on")
    if config.trainer_mode != "none" and trainer_hook is None:
        raise TuningError(f"trainer_mode {config.trainer_mode!r} needs a trainer_hook")
    missing = [i.context_id for i in items if i.context_id not in initial_chosen]
    if missing:
        raise TuningError(f"initial_chosen missing contexts: {missing[:5]!r}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    items_by_id = {item.context_id: item for item in items}

    carryover = {
        item.context_id: CandidateSample(
            context_id=item.context_id,
            text=initial_chosen[item.context_id],
            origin="initial_chosen",
        )
        for item in items
    }
    start_round = 1
    state_path = out / "state.json"
    if resume and state_path.exists():
        state = json.loads(state_path.read_text(encoding="utf-8"))
        start_round = int(state["next_round"])
        carryover = {
            cid: CandidateSample(context_id=cid, text=body["text"], origin=body["origin"])
            for cid, body in state["carryover"].items()
        }

    emit_pairs = config.trainer_mode == "dpo-pairs"
    rounds = []
    for round_index in range(start_round, config.num_iters + 1):
        ranked: dict[str, list[CandidateSample]] = {}
        for item in items:
            samples = sample_candidates(
                policy, item, config.num_samples, config.sample_temperature
            )
            ranked[item.context_id] = rank_with_carryover(
                samples, carryover[item.context_id], model, score_fn, item
            )
        suffix = "dpo" if emit_pairs else "sft"
        dataset_path = out / f"round_{round_index}.{suffix}.jsonl"
        if emit_pairs:
            emit_dpo_pairs(ranked, items_by_id, dataset_path)
        else:
            emit_sft_dataset(ranked, items_by_id, dataset_path)
        carryover = {
            cid: dataclasses.replace(candidates[0], origin="carryover")
            for cid, candidates in ranked.items()
        }
        rounds.append(
            RoundRecord(
                round_index=round_index,
                dataset_path=dataset_path.name,
                best_rewards={
                    cid: float(candidates[0].reward)
                    for cid, candidates in ranked.items()
                },
                best_texts={
                    cid: candidates[0].text for cid, candidates in ranked.items()
                },
            )
        )
        _write_state(out, round_index + 1, carryover)
        if config.trainer_mode != "none":
            assert trainer_hook is not None
            policy = trainer_hook(dataset_path, round_index, policy)

    report = LoopReport(
        config=config, pairing="best_vs_rest", rounds=tuple(rounds)
    )
    save_loop_report(report, out / "loop_report.json")
    return report


def best_of_n(
    policy: Policy,
    item: QuestionnaireItem,
    model: RewardModel,
    score_fn: CandidateScorer,
    n: int = 10,
    temperature: float = 1.2,
) -> CandidateSample:
    """Sample n candidates and return the highest-reward one (ties: earliest)."""
    if n < 1:
        raise TuningError(f"n must be >= 1, got {n}")
    best: CandidateSample | None = None
    for candidate in sample_candidates(policy, item, n, temperature):
        scored = dataclasses.replace(
            candidate, reward=model.reward(score_fn(item, candidate.text))
        )
        if best is None or scored.reward > best.reward:
            best = scored
    assert best is not None
    return best
