"""Command-line workflows tying the modules together.

Every subcommand reads plain files, writes plain files, and drops a
manifest next to its outputs recording the effective options, input
digests, and output digests. Re-running a command with the same inputs
and seed reproduces every artifact byte for byte.

Options resolve in three layers: built-in defaults, then the [command]
table of a TOML config file passed with --config, then explicit flags.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import random
import sys
from pathlib import Path
from typing import Mapping, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .choice import (
    ChoiceModelError,
    FitConfig,
    fit_mcfadden,
    fit_pairwise_logistic,
    load_model,
    save_model,
    score_averaged_lambda,
)
from .datasets import (
    DatasetError,
    PreferenceDataset,
    load_preferences,
    load_profiles,
    load_questionnaire,
    load_split,
    make_splits,
    save_preferences,
    save_questionnaire,
    save_split,
)
from .discovery import (
    DiscoveryError,
    discover_features,
    load_feature_set,
    save_feature_set,
)
from .gateway import Gateway, GatewayConfig, GatewayError
from .judging import (
    EloConfig,
    JudgeError,
    elo_ratings,
    generate_matchups,
    load_generations,
    load_match_results,
    play_matchups,
    save_match_results,
    winrate,
)
from .reward import RewardModel, RewardModelError, accuracy
from .scoring import (
    ScoringError,
    build_score_table,
    choice_instances,
    fixture_candidate_scorer,
    llm_candidate_scorer,
    load_score_table,
    save_score_table,
)
from .simulate import make_synthetic_world, random_user, simulate_choices
from .templates import TemplateError
from .tuning import (
    FixturePolicy,
    GatewayPolicy,
    LoopConfig,
    TrainerError,
    TuningError,
    best_of_n,
    run_loop,
    shell_trainer,
)


class CliError(RuntimeError):
    """Raised for bad command lines, config entries, or missing options."""


_ERRORS = (
    CliError,
    ChoiceModelError,
    DatasetError,
    DiscoveryError,
    GatewayError,
    JudgeError,
    RewardModelError,
    ScoringError,
    TemplateError,
    TrainerError,
    TuningError,
    OSError,
)

_VARIANTS = {
    "mcfadden": fit_mcfadden,
    "pairwise-logistic": fit_pairwise_logistic,
}

DEFAULTS: dict[str, dict] = {
    "simulate": {
        "num_features": 5,
        "num_contexts": 50,
        "num_responses": 4,
        "num_users": 1,
        "choice_rule": "argmax",
        "temperature": 1.0,
        "seed": 0,
    },
    "split": {"val_ratio": 0.25, "test_ratio": 0.25, "seed": 0},
    "discover": {
        "num_features": 20,
        "model": "",
        "base_url": "",
        "api_key_env": "",
        "cache_dir": "",
        "domain": "generic",
        "max_contexts": 0,
    },
    "score": {
        "model": "",
        "base_url": "",
        "api_key_env": "",
        "cache_dir": "",
        "domain": "generic",
        "score_min": 1,
        "score_max": 5,
        "jobs": 1,
    },
    "fit": {
        "variant": "mcfadden",
        "user": "",
        "split": "",
        "part": "train",
        "learning_rate": 0.1,
        "max_iter": 500,
        "tol": 0.1,
    },
    "eval-accuracy": {"user": "", "split": "", "part": "all"},
    "predict": {"out": ""},
    "tune": {
        "user": "",
        "rounds": 5,
        "samples": 10,
        "temperature": 1.2,
        "seed": 0,
        "trainer_mode": "none",
        "trainer_cmd": "",
        "resume": False,
        "pools": "",
        "candidate_scores": "",
        "base_url": "",
        "api_key_env": "",
        "cache_dir": "",
        "policy_model": "",
        "scorer_model": "",
        "domain": "generic",
    },
    "best-of-n": {
        "n": 10,
        "temperature": 1.2,
        "seed": 0,
        "pools": "",
        "candidate_scores": "",
        "base_url": "",
        "api_key_env": "",
        "cache_dir": "",
        "policy_model": "",
        "scorer_model": "",
        "domain": "generic",
    },
    "judge": {
        "model": "",
        "base_url": "",
        "api_key_env": "",
        "cache_dir": "",
        "domain": "generic",
        "contexts_per_user": 5,
        "seed": 0,
        "approaches": "",
    },
    "winrate": {"approach": "", "out": ""},
    "elo": {
        "initial_rating": 1500.0,
        "k_factor": 16.0,
        "num_shuffles": 25,
        "seed": 0,
        "csv": "",
    },
    "serve": {
        "host": "127.0.0.1",
        "port": 8000,
        "seed": 0,
        "ui_dir": "",
        "allow_overwrite": False,
        "preferences": "",
    },
}


def _sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return "sha256:" + digest.hexdigest()


def _write_manifest(
    command: str,
    options: Mapping[str, object],
    inputs: Sequence[str | Path],
    outputs: Sequence[str | Path],
    manifest_path: str | Path,
) -> None:
    """Record what produced which bytes, so runs are auditable and comparable."""
    body = {
        "command": command,
        "version": __version__,
        "options": {k: options[k] for k in sorted(options)},
        "inputs": {str(p): _sha256_file(p) for p in sorted(map(str, inputs))},
        "outputs": {str(p): _sha256_file(p) for p in sorted(map(str, outputs))},
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(path: str, command: str) -> dict:
    try:
        with open(path, "rb") as fh:
            config = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise CliError(f"{path}: invalid TOML: {exc}") from exc
    section = config.get(command, {})
    if not isinstance(section, dict):
        raise CliError(f"{path}: [{command}] must be a table")
    return section


def _merge_options(args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags (argparse.SUPPRESS trick)."""
    command = args.command
    options = dict(DEFAULTS.get(command, {}))
    given = {
        k: v for k, v in vars(args).items() if k not in ("command", "func", "config")
    }
    if getattr(args, "config", None):
        section = _load_config(args.config, command)
        known = set(options) | set(given) | _REQUIRED.get(command, set())
        for key in section:
            if key not in known:
                raise CliError(f"unknown option {key!r} in [{command}] config")
        options.update(section)
    options.update(given)
    return options


def _opt(options: Mapping[str, object], key: str) -> object:
    try:
        return options[key]
    except KeyError:
        raise CliError(f"missing required option --{key.replace('_', '-')}") from None


# options that have no default and must come from a flag or the config file
_REQUIRED = {
    "simulate": {"out_dir"},
    "split": {"questionnaire", "out"},
    "discover": {"questionnaire", "out"},
    "score": {"questionnaire", "features", "out"},
    "fit": {"questionnaire", "scores", "preferences", "out_dir"},
    "eval-accuracy": {"questionnaire", "scores", "preferences", "features", "model_dir", "out"},
    "predict": {"questionnaire", "scores", "features", "model", "context_id"},
    "tune": {"questionnaire", "features", "model", "preferences", "out_dir"},
    "best-of-n": {"questionnaire", "features", "model", "context_id", "out"},
    "judge": {"questionnaire", "profiles", "generations", "out"},
    "winrate": {"matches"},
    "elo": {"matches", "out"},
    "serve": {"questionnaire", "scores", "features"},
}


def _gateway(options: Mapping[str, object]) -> Gateway:
    base_url = str(_opt(options, "base_url"))
    if not base_url:
        raise CliError("this workflow calls an LLM endpoint; set --base-url")
    api_key_env = str(options.get("api_key_env") or "")
    api_key = os.environ.get(api_key_env, "") if api_key_env else ""
    cache_dir = str(options.get("cache_dir") or "") or None
    return Gateway(GatewayConfig(base_url=base_url, api_key=api_key, cache_dir=cache_dir))


def _split_part(options: Mapping[str, object]) -> tuple[str, list[str] | None]:
    """Resolve --split/--part into a context-id restriction (None = all)."""
    split_path = str(options.get("split") or "")
    part = str(options.get("part") or "all")
    if part not in ("train", "val", "test", "all"):
        raise CliError(f"unknown split part {part!r}; use train, val, test, or all")
    if not split_path or part == "all":
        return "all", None
    split = load_split(split_path)
    return part, list(getattr(split, part))


def _load_reward_model(model_path: str, features_path: str) -> RewardModel:
    feature_set = load_feature_set(features_path)
    user_id, weight_vector = load_model(model_path)
    return RewardModel(user_id, feature_set, weight_vector)


def _user_dataset(
    options: Mapping[str, object], datasets: Mapping[str, PreferenceDataset]
) -> PreferenceDataset:
    user = str(options.get("user") or "")
    if user:
        if user not in datasets:
            raise CliError(f"user {user!r} not present in preferences file")
        return datasets[user]
    if len(datasets) != 1:
        raise CliError(
            f"preferences file has {len(datasets)} users; pick one with --user"
        )
    return next(iter(datasets.values()))


def _fixture_scorer(options: Mapping[str, object]):
    """Candidate scorer from a JSONL of {context_id, text, scores} rows."""
    path = str(_opt(options, "candidate_scores"))
    if not path:
        raise CliError("offline runs need --candidate-scores (or set --base-url)")
    fixture: dict[tuple[str, str], list[float]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                key = (str(obj["context_id"]), str(obj["text"]))
                scores = [float(s) for s in obj["scores"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CliError(f"{path}:{lineno}: bad candidate score row: {exc}") from None
            if key in fixture:
                raise CliError(f"{path}:{lineno}: duplicate candidate {key!r}")
            fixture[key] = scores
    return fixture_candidate_scorer(fixture)


def _fixture_pools(options: Mapping[str, object]) -> dict[str, list[str]]:
    path = str(_opt(options, "pools"))
    if not path:
        raise CliError("offline runs need --pools (or set --base-url)")
    pools: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                context_id = str(obj["context_id"])
                candidates = [str(t) for t in obj["candidates"]]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CliError(f"{path}:{lineno}: bad pool row: {exc}") from None
            if context_id in pools:
                raise CliError(f"{path}:{lineno}: duplicate pool for {context_id!r}")
            pools[context_id] = candidates
    return pools


def _policy_and_scorer(options: Mapping[str, object], feature_set):
    """Gateway-backed policy/scorer when --base-url is set, fixtures otherwise."""
    if str(options.get("base_url") or ""):
        gateway = _gateway(options)
        policy_model = str(_opt(options, "policy_model"))
        scorer_model = str(_opt(options, "scorer_model"))
        if not policy_model or not scorer_model:
            raise CliError("gateway runs need --policy-model and --scorer-model")
        policy = GatewayPolicy(gateway, policy_model)
        scorer = llm_candidate_scorer(gateway, scorer_model, feature_set)
        return policy, scorer
    policy = FixturePolicy(_fixture_pools(options), seed=int(options.get("seed", 0)))
    return policy, _fixture_scorer(options)


def cmd_simulate(options: Mapping[str, object]) -> None:
    out_dir = Path(str(_opt(options, "out_dir")))
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = int(options["seed"])
    num_features = int(options["num_features"])
    world = make_synthetic_world(
        num_features=num_features,
        num_contexts=int(options["num_contexts"]),
        k=int(options["num_responses"]),
        seed=seed,
    )
    latent = {}
    all_records = []
    for i in range(int(options["num_users"])):
        user_seed = 1000 * (seed + 1) + i
        user = random_user(
            f"user_{i:02d}",
            num_features,
            seed=user_seed,
            choice_rule=str(options["choice_rule"]),
            temperature=float(options["temperature"]),
        )
        dataset = simulate_choices(user, world, seed=user_seed)
        all_records.extend(dataset.records)
        latent[user.user_id] = {
            "weights": [float(w) for w in user.weights],
            "choice_rule": user.choice_rule,
            "temperature": user.temperature,
            "seed": user_seed,
        }
    paths = {
        "questionnaire": out_dir / "questionnaire.jsonl",
        "scores": out_dir / "scores.jsonl",
        "features": out_dir / "features.json",
        "preferences": out_dir / "preferences.jsonl",
        "latent": out_dir / "latent_users.json",
    }
    save_questionnaire(world.questionnaire, paths["questionnaire"])
    save_score_table(world.score_table, paths["scores"])
    save_feature_set(world.feature_set, paths["features"])
    save_preferences(all_records, paths["preferences"])
    with open(paths["latent"], "w", encoding="utf-8") as fh:
        json.dump(latent, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(
        "simulate", options, [], list(paths.values()), out_dir / "manifest.json"
    )
    print(f"simulated world with {len(world.questionnaire)} contexts -> {out_dir}")


def cmd_split(options: Mapping[str, object]) -> None:
    questionnaire_path = str(_opt(options, "questionnaire"))
    out = str(_opt(options, "out"))
    items = load_questionnaire(questionnaire_path)
    val_ratio = float(options["val_ratio"])
    test_ratio = float(options["test_ratio"])
    split = make_splits(
        [item.context_id for item in items],
        (1.0 - val_ratio - test_ratio, val_ratio, test_ratio),
        seed=int(options["seed"]),
    )
    save_split(split, out)
    _write_manifest("split", options, [questionnaire_path], [out], f"{out}.manifest.json")
    print(
        f"split {len(items)} contexts into "
        f"{len(split.train)}/{len(split.val)}/{len(split.test)} -> {out}"
    )


def cmd_discover(options: Mapping[str, object]) -> None:
    questionnaire_path = str(_opt(options, "questionnaire"))
    out = str(_opt(options, "out"))
    model = str(_opt(options, "model"))
    if not model:
        raise CliError("discover needs --model")
    items = load_questionnaire(questionnaire_path)
    max_contexts = int(options["max_contexts"])
    if max_contexts > 0:
        items = items[:max_contexts]
    gateway = _gateway(options)
    try:
        feature_set = discover_features(
            gateway, items, int(options["num_features"]), model
        )
    finally:
        gateway.close()
    save_feature_set(feature_set, out)
    _write_manifest(
        "discover", options, [questionnaire_path], [out], f"{out}.manifest.json"
    )
    print(f"discovered {len(feature_set)} features -> {out}")


def cmd_score(options: Mapping[str, object]) -> None:
    questionnaire_path = str(_opt(options, "questionnaire"))
    features_path = str(_opt(options, "features"))
    out = str(_opt(options, "out"))
    model = str(_opt(options, "model"))
    if not model:
        raise CliError("score needs --model")
    items = load_questionnaire(questionnaire_path)
    feature_set = load_feature_set(features_path)
    gateway = _gateway(options)
    try:
        table = build_score_table(
            gateway,
            model,
            feature_set,
            items,
            score_min=int(options["score_min"]),
            score_max=int(options["score_max"]),
            parallelism=int(options["jobs"]),
        )
    finally:
        gateway.close()
    save_score_table(table, out)
    _write_manifest(
        "score",
        options,
        [questionnaire_path, features_path],
        [out],
        f"{out}.manifest.json",
    )
    print(f"scored {len(table)} (context, response) cells -> {out}")


def cmd_fit(options: Mapping[str, object]) -> None:
    questionnaire_path = str(_opt(options, "questionnaire"))
    scores_path = str(_opt(options, "scores"))
    preferences_path = str(_opt(options, "preferences"))
    out_dir = Path(str(_opt(options, "out_dir")))
    out_dir.mkdir(parents=True, exist_ok=True)
    variant = str(options["variant"])
    items = load_questionnaire(questionnaire_path)
    table = load_score_table(scores_path)
    datasets = load_preferences(preferences_path, items)
    user = str(options.get("user") or "")
    if user:
        datasets = {user: _user_dataset(options, datasets)}
    part, context_ids = _split_part(options)
    config = FitConfig(
        learning_rate=float(options["learning_rate"]),
        max_iter=int(options["max_iter"]),
        tolerance=float(options["tol"]),
    )
    inputs = [questionnaire_path, scores_path, preferences_path]
    if str(options.get("split") or ""):
        inputs.append(str(options["split"]))
    outputs = []
    for user_id, dataset in datasets.items():
        instances = choice_instances(items, table, dataset, context_ids=context_ids)
        if not instances:
            raise CliError(f"user {user_id!r} has no records in part {part!r}")
        if variant == "score-averaged":
            weights = score_averaged_lambda(instances)
        elif variant in _VARIANTS:
            weights = _VARIANTS[variant](instances, config)
        else:
            raise CliError(
                f"unknown variant {variant!r}; use mcfadden, pairwise-logistic, "
                "or score-averaged"
            )
        model_path = out_dir / f"{user_id}.model.json"
        save_model(model_path, user_id, weights.with_digest(table.feature_set_digest))
        outputs.append(model_path)
        fit = weights.fit
        print(
            f"fit {user_id}: variant={fit.variant} iterations={fit.iterations} "
            f"final_nll={fit.final_nll:.6f} converged={fit.converged}"
        )
    _write_manifest("fit", options, inputs, outputs, out_dir / "manifest.json")


def cmd_eval_accuracy(options: Mapping[str, object]) -> None:
    questionnaire_path = str(_opt(options, "questionnaire"))
    scores_path = str(_opt(options, "scores"))
    preferences_path = str(_opt(options, "preferences"))
    features_path = str(_opt(options, "features"))
    model_dir = Path(str(_opt(options, "model_dir")))
    out = str(_opt(options, "out"))
    items = load_questionnaire(questionnaire_path)
    table = load_score_table(scores_path)
    feature_set = load_feature_set(features_path)
    datasets = load_preferences(preferences_path, items)
    user = str(options.get("user") or "")
    if user:
        datasets = {user: _user_dataset(options, datasets)}
    part, context_ids = _split_part(options)
    inputs = [questionnaire_path, scores_path, preferences_path, features_path]
    if str(options.get("split") or ""):
        inputs.append(str(options["split"]))
    reports = []
    for user_id, dataset in datasets.items():
        model_path = model_dir / f"{user_id}.model.json"
        if not model_path.exists():
            raise CliError(f"no fitted model for user {user_id!r} at {model_path}")
        inputs.append(str(model_path))
        model = _load_reward_model(str(model_path), features_path)
        reports.append(
            accuracy(model, items, table, dataset, context_ids=context_ids, split_name=part)
        )
    mean_accuracy = sum(r.accuracy for r in reports) / len(reports)
    body = {
        "part": part,
        "num_users": len(reports),
        "mean_accuracy": mean_accuracy,
        "users": [
            {
                "user_id": r.user_id,
                "n": r.n,
                "accuracy": r.accuracy,
                "per_context": list(r.per_context),
            }
            for r in reports
        ],
    }
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(body, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    _write_manifest("eval-accuracy", options, inputs, [out], f"{out}.manifest.json")
    print(f"accuracy over {len(reports)} user(s), part {part}: {mean_accuracy:.4f}")


def cmd_predict(options: Mapping[str, object]) -> None:
    questionnaire_path = str(_opt(options, "questionnaire"))
    scores_path = str(_opt(options, "scores"))
    features_path = str(_opt(options, "features"))
    model_path = str(_opt(options, "model"))
    context_id = str(_opt(options, "context_id"))
    items = load_questionnaire(questionnaire_path)
    table = load_score_table(scores_path)
    model = _load_reward_model(model_path, features_path)
    by_id = {item.context_id: item for item in items}
    if context_id not in by_id:
        raise CliError(f"unknown context_id {context_id!r}")
    item = by_id[context_id]
    matrix = table.matrix(item)
    order = model.rank(matrix)
    ranking = [
        {
            "response_id": item.responses[i].response_id,
            "text": item.responses[i].response_text,
            "reward": model.reward(matrix[i]),
        }
        for i in order
    ]
    body = {"user_id": model.user_id, "context_id": context_id, "ranking": ranking}
    rendered = json.dumps(body, ensure_ascii=False, indent=2) + "\n"
    out = str(options.get("out") or "")
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(rendered)
        _write_manifest(
            "predict",
            options,
            [questionnaire_path, scores_path, features_path, model_path],
            [out],
            f"{out}.manifest.json",
        )
    else:
        sys.stdout.write(rendered)


def cmd_tune(options: Mapping[str, object]) -> None:
    questionnaire_path = str(_opt(options, "questionnaire"))
    features_path = str(_opt(options, "features"))
    model_path = str(_opt(options, "model"))
    preferences_path = str(_opt(options, "preferences"))
    out_dir = Path(str(_opt(options, "out_dir")))
    items = load_questionnaire(questionnaire_path)
    model = _load_reward_model(model_path, features_path)
    datasets = load_preferences(preferences_path, items)
    dataset = _user_dataset(options, datasets)
    by_id = {item.context_id: item for item in items}
    tune_items = [by_id[r.context_id] for r in dataset.records]
    initial_chosen = {
        r.context_id: by_id[r.context_id]
        .responses[by_id[r.context_id].response_index(r.chosen_response_id)]
        .response_text
        for r in dataset.records
    }
    policy, scorer = _policy_and_scorer(options, model.feature_set)
    trainer_cmd = str(options.get("trainer_cmd") or "")
    config = LoopConfig(
        num_samples=int(options["samples"]),
        sample_temperature=float(options["temperature"]),
        num_iters=int(options["rounds"]),
        trainer_mode=str(options["trainer_mode"]),
    )
    report = run_loop(
        policy=policy,
        items=tune_items,
        model=model,
        score_fn=scorer,
        config=config,
        initial_chosen=initial_chosen,
        out_dir=out_dir,
        trainer_hook=shell_trainer(trainer_cmd) if trainer_cmd else None,
        resume=bool(options["resume"]),
    )
    inputs = [questionnaire_path, features_path, model_path, preferences_path]
    for key in ("pools", "candidate_scores"):
        if str(options.get(key) or ""):
            inputs.append(str(options[key]))
    outputs = [out_dir / r.dataset_path for r in report.rounds]
    outputs += [out_dir / "loop_report.json", out_dir / "state.json"]
    _write_manifest("tune", options, inputs, outputs, out_dir / "manifest.json")
    last = report.rounds[-1]
    print(
        f"tuned {len(tune_items)} contexts for {len(report.rounds)} round(s); "
        f"final best rewards in {last.dataset_path}"
    )


def cmd_best_of_n(options: Mapping[str, object]) -> None:
    questionnaire_path = str(_opt(options, "questionnaire"))
    features_path = str(_opt(options, "features"))
    model_path = str(_opt(options, "model"))
    context_id = str(_opt(options, "context_id"))
    out = str(_opt(options, "out"))
    items = load_questionnaire(questionnaire_path)
    by_id = {item.context_id: item for item in items}
    if context_id not in by_id:
        raise CliError(f"unknown context_id {context_id!r}")
    model = _load_reward_model(model_path, features_path)
    policy, scorer = _policy_and_scorer(options, model.feature_set)
    best = best_of_n(
        policy,
        by_id[context_id],
        model,
        scorer,
        n=int(options["n"]),
        temperature=float(options["temperature"]),
    )
    body = {
        "user_id": model.user_id,
        "context_id": context_id,
        "n": int(options["n"]),
        "text": best.text,
        "reward": best.reward,
    }
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(body, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    inputs = [questionnaire_path, features_path, model_path]
    for key in ("pools", "candidate_scores"):
        if str(options.get(key) or ""):
            inputs.append(str(options[key]))
    _write_manifest("best-of-n", options, inputs, [out], f"{out}.manifest.json")
    print(f"best of {body['n']} for {context_id}: reward {best.reward:.4f}")


def cmd_judge(options: Mapping[str, object]) -> None:
    questionnaire_path = str(_opt(options, "questionnaire"))
    profiles_path = str(_opt(options, "profiles"))
    generations_path = str(_opt(options, "generations"))
    out = str(_opt(options, "out"))
    model = str(_opt(options, "model"))
    if not model:
        raise CliError("judge needs --model")
    items = load_questionnaire(questionnaire_path)
    profiles = load_profiles(profiles_path)
    generations = load_generations(generations_path)
    approaches_opt = str(options.get("approaches") or "")
    if approaches_opt:
        approaches = [a.strip() for a in approaches_opt.split(",") if a.strip()]
    else:
        approaches = sorted({approach for approach, _, _ in generations})
    # a context only qualifies if every approach generated for it
    user_contexts = {
        user_id: sorted(
            {
                context_id
                for _, u, context_id in generations
                if u == user_id
                and all((a, user_id, context_id) in generations for a in approaches)
            }
        )
        for user_id in profiles
    }
    rng = random.Random(int(options["seed"]))
    matchups = generate_matchups(
        approaches, user_contexts, int(options["contexts_per_user"]), rng
    )
    by_id = {item.context_id: item for item in items}
    gateway = _gateway(options)
    try:
        results = play_matchups(
            gateway, model, matchups, generations, by_id, profiles, rng
        )
    finally:
        gateway.close()
    save_match_results(results, out)
    _write_manifest(
        "judge",
        options,
        [questionnaire_path, profiles_path, generations_path],
        [out],
        f"{out}.manifest.json",
    )
    print(f"judged {len(results)} matchups -> {out}")


def cmd_winrate(options: Mapping[str, object]) -> None:
    matches_path = str(_opt(options, "matches"))
    results = load_match_results(matches_path)
    approach = str(options.get("approach") or "")
    if approach:
        rates = {approach: winrate(results, approach)}
    else:
        names = sorted({r.approach_a for r in results} | {r.approach_b for r in results})
        rates = {name: winrate(results, name) for name in names}
    for name in sorted(rates):
        print(f"{name}\t{rates[name]:.2f}")
    out = str(options.get("out") or "")
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(rates, fh, ensure_ascii=False, indent=2, sort_keys=True)
            fh.write("\n")
        _write_manifest("winrate", options, [matches_path], [out], f"{out}.manifest.json")


def cmd_elo(options: Mapping[str, object]) -> None:
    matches_path = str(_opt(options, "matches"))
    out = str(_opt(options, "out"))
    results = load_match_results(matches_path)
    config = EloConfig(
        initial_rating=float(options["initial_rating"]),
        k_factor=float(options["k_factor"]),
        num_shuffles=int(options["num_shuffles"]),
        seed=int(options["seed"]),
    )
    ratings = elo_ratings(results, config)
    body = {
        "config": {
            "initial_rating": config.initial_rating,
            "k_factor": config.k_factor,
            "num_shuffles": config.num_shuffles,
            "seed": config.seed,
        },
        "ratings": {name: ratings[name] for name in sorted(ratings)},
    }
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(body, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    outputs = [out]
    csv_path = str(options.get("csv") or "")
    if csv_path:
        ranked = sorted(ratings, key=lambda name: (-ratings[name], name))
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("approach,matches,winrate,elo\n")
            for name in ranked:
                involved = sum(name in (r.approach_a, r.approach_b) for r in results)
                fh.write(
                    f"{name},{involved},{winrate(results, name):.2f},{ratings[name]:.2f}\n"
                )
        outputs.append(csv_path)
    _write_manifest("elo", options, [matches_path], outputs, f"{out}.manifest.json")
    for name in sorted(ratings, key=lambda n: (-ratings[n], n)):
        print(f"{name}\t{ratings[name]:.2f}")


def cmd_serve(options: Mapping[str, object]) -> None:
    import uvicorn

    from .service import build_app

    app = build_app(
        questionnaire_path=str(_opt(options, "questionnaire")),
        scores_path=str(_opt(options, "scores")),
        features_path=str(_opt(options, "features")),
        preferences_path=str(options.get("preferences") or "preferences.jsonl"),
        session_seed=int(options["seed"]),
        allow_overwrite=bool(options["allow_overwrite"]),
        ui_dir=str(options.get("ui_dir") or "") or None,
    )
    uvicorn.run(app, host=str(options["host"]), port=int(options["port"]))


def _add(parser: argparse.ArgumentParser, *flags: str, **kwargs) -> None:
    kwargs.setdefault("default", argparse.SUPPRESS)
    parser.add_argument(*flags, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefalign",
        description="Per-user preference alignment: questionnaire scoring, "
        "choice-model fitting, reward-guided tuning, and judged evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def subparser(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument(
            "--config",
            default=None,
            help=f"TOML config file; the [{name}] table supplies option defaults",
        )
        return sub

    sub = subparser("simulate", "generate a synthetic world with known user weights")
    _add(sub, "--out-dir", help="directory for the generated artifacts")
    _add(sub, "--num-features", type=int, help="feature count F (default 5)")
    _add(sub, "--num-contexts", type=int, help="context count (default 50)")
    _add(sub, "--num-responses", type=int, help="responses per context K (default 4)")
    _add(sub, "--num-users", type=int, help="synthetic users to sample (default 1)")
    _add(sub, "--choice-rule", choices=["argmax", "softmax"], help="default argmax")
    _add(sub, "--temperature", type=float, help="softmax temperature (default 1.0)")
    _add(sub, "--seed", type=int, help="world seed (default 0)")
    sub.set_defaults(func=cmd_simulate)

    sub = subparser("split", "partition questionnaire contexts into train/val/test")
    _add(sub, "--questionnaire", help="questionnaire JSONL")
    _add(sub, "--out", help="output split JSON")
    _add(sub, "--val-ratio", type=float, help="validation share (default 0.25)")
    _add(sub, "--test-ratio", type=float, help="test share (default 0.25)")
    _add(sub, "--seed", type=int, help="shuffle seed (default 0)")
    sub.set_defaults(func=cmd_split)

    sub = subparser("discover", "elicit a feature set from questionnaire contexts")
    _add(sub, "--questionnaire", help="questionnaire JSONL")
    _add(sub, "--out", help="output feature-set JSON")
    _add(sub, "--num-features", type=int, help="features to request (default 20)")
    _add(sub, "--max-contexts", type=int, help="limit contexts in the prompt (0 = all)")
    _add(sub, "--model", help="model name for the endpoint")
    _add(sub, "--base-url", help="chat-completions endpoint base URL")
    _add(sub, "--api-key-env", help="environment variable holding the API key")
    _add(sub, "--cache-dir", help="response cache directory")
    sub.set_defaults(func=cmd_discover)

    sub = subparser("score", "score every (context, response, feature) cell")
    _add(sub, "--questionnaire", help="questionnaire JSONL")
    _add(sub, "--features", help="feature-set JSON")
    _add(sub, "--out", help="output score-table JSONL")
    _add(sub, "--model", help="model name for the endpoint")
    _add(sub, "--base-url", help="chat-completions endpoint base URL")
    _add(sub, "--api-key-env", help="environment variable holding the API key")
    _add(sub, "--cache-dir", help="response cache directory")
    _add(sub, "--score-min", type=int, help="scale lower bound (default 1)")
    _add(sub, "--score-max", type=int, help="scale upper bound (default 5)")
    _add(sub, "--jobs", type=int, help="parallel scoring workers (default 1)")
    sub.set_defaults(func=cmd_score)

    sub = subparser("fit", "fit per-user weights from preferences and scores")
    _add(sub, "--questionnaire", help="questionnaire JSONL")
    _add(sub, "--scores", help="score-table JSONL")
    _add(sub, "--preferences", help="preference JSONL")
    _add(sub, "--out-dir", help="directory for per-user model files")
    _add(
        sub,
        "--variant",
        choices=["mcfadden", "pairwise-logistic", "score-averaged"],
        help="fit variant (default mcfadden)",
    )
    _add(sub, "--user", help="fit a single user id (default: all users in the file)")
    _add(sub, "--split", help="split JSON restricting the contexts used")
    _add(sub, "--part", help="split part: train, val, test, or all (default train)")
    _add(sub, "--learning-rate", type=float, help="gradient step size (default 0.1)")
    _add(sub, "--max-iter", type=int, help="iteration cap (default 500)")
    _add(sub, "--tol", type=float, help="NLL improvement stop threshold (default 0.1)")
    sub.set_defaults(func=cmd_fit)

    sub = subparser(
        "eval-accuracy",
        "held-out choice prediction accuracy (ties resolve to the lowest index, "
        "so a zero-weight model scores the index-0 rate)",
    )
    _add(sub, "--questionnaire", help="questionnaire JSONL")
    _add(sub, "--scores", help="score-table JSONL")
    _add(sub, "--preferences", help="preference JSONL")
    _add(sub, "--features", help="feature-set JSON")
    _add(sub, "--model-dir", help="directory holding {user_id}.model.json files")
    _add(sub, "--out", help="output report JSON")
    _add(sub, "--user", help="evaluate a single user id")
    _add(sub, "--split", help="split JSON restricting the contexts used")
    _add(sub, "--part", help="split part (default all)")
    sub.set_defaults(func=cmd_eval_accuracy)

    sub = subparser("predict", "rank one context's responses under a fitted model")
    _add(sub, "--questionnaire", help="questionnaire JSONL")
    _add(sub, "--scores", help="score-table JSONL")
    _add(sub, "--features", help="feature-set JSON")
    _add(sub, "--model", help="fitted model JSON")
    _add(sub, "--context-id", help="context to rank")
    _add(sub, "--out", help="write JSON here instead of stdout")
    sub.set_defaults(func=cmd_predict)

    sub = subparser("tune", "iterative sample/rank/emit loop with carryover")
    _add(sub, "--questionnaire", help="questionnaire JSONL")
    _add(sub, "--features", help="feature-set JSON")
    _add(sub, "--model", help="fitted model JSON")
    _add(sub, "--preferences", help="preference JSONL seeding round 1 carryover")
    _add(sub, "--out-dir", help="directory for round datasets and state")
    _add(sub, "--user", help="user id when the preferences file has several")
    _add(sub, "--rounds", type=int, help="loop rounds (default 5)")
    _add(sub, "--samples", type=int, help="candidates per context per round (default 10)")
    _add(sub, "--temperature", type=float, help="sampling temperature (default 1.2)")
    _add(sub, "--seed", type=int, help="fixture policy seed (default 0)")
    _add(
        sub,
        "--trainer-mode",
        choices=["none", "sft", "dpo-pairs"],
        help="dataset flavor handed to the trainer (default none)",
    )
    _add(sub, "--trainer-cmd", help="shell command run per round; {dataset} and {round} substituted")
    _add(sub, "--resume", action="store_true", help="continue from state.json")
    _add(sub, "--pools", help="offline candidate pools JSONL {context_id, candidates}")
    _add(sub, "--candidate-scores", help="offline scorer JSONL {context_id, text, scores}")
    _add(sub, "--base-url", help="sample and score through an endpoint instead")
    _add(sub, "--api-key-env", help="environment variable holding the API key")
    _add(sub, "--cache-dir", help="response cache directory")
    _add(sub, "--policy-model", help="generation model name (gateway mode)")
    _add(sub, "--scorer-model", help="feature-scoring model name (gateway mode)")
    sub.set_defaults(func=cmd_tune)

    sub = subparser("best-of-n", "sample n candidates and keep the reward argmax")
    _add(sub, "--questionnaire", help="questionnaire JSONL")
    _add(sub, "--features", help="feature-set JSON")
    _add(sub, "--model", help="fitted model JSON")
    _add(sub, "--context-id", help="context to generate for")
    _add(sub, "--out", help="output JSON")
    _add(sub, "-n", "--n", type=int, dest="n", help="sample count (default 10)")
    _add(sub, "--temperature", type=float, help="sampling temperature (default 1.2)")
    _add(sub, "--seed", type=int, help="fixture policy seed (default 0)")
    _add(sub, "--pools", help="offline candidate pools JSONL")
    _add(sub, "--candidate-scores", help="offline scorer JSONL")
    _add(sub, "--base-url", help="sample and score through an endpoint instead")
    _add(sub, "--api-key-env", help="environment variable holding the API key")
    _add(sub, "--cache-dir", help="response cache directory")
    _add(sub, "--policy-model", help="generation model name (gateway mode)")
    _add(sub, "--scorer-model", help="feature-scoring model name (gateway mode)")
    sub.set_defaults(func=cmd_best_of_n)

    sub = subparser("judge", "play pairwise matchups with an LLM judge")
    _add(sub, "--questionnaire", help="questionnaire JSONL")
    _add(sub, "--profiles", help="user profiles JSONL")
    _add(sub, "--generations", help="generations JSONL {approach, user_id, context_id, text}")
    _add(sub, "--out", help="output match results JSONL")
    _add(sub, "--approaches", help="comma-separated approach names (default: all present)")
    _add(sub, "--contexts-per-user", type=int, help="contexts sampled per user (default 5)")
    _add(sub, "--seed", type=int, help="sampling and position-swap seed (default 0)")
    _add(sub, "--model", help="judge model name")
    _add(sub, "--base-url", help="chat-completions endpoint base URL")
    _add(sub, "--api-key-env", help="environment variable holding the API key")
    _add(sub, "--cache-dir", help="response cache directory")
    sub.set_defaults(func=cmd_judge)

    sub = subparser("winrate", "winrates from a match results file")
    _add(sub, "--matches", help="match results JSONL")
    _add(sub, "--approach", help="report one approach only")
    _add(sub, "--out", help="optional output JSON")
    sub.set_defaults(func=cmd_winrate)

    sub = subparser("elo", "shuffle-averaged Elo ratings from match results")
    _add(sub, "--matches", help="match results JSONL")
    _add(sub, "--out", help="output ratings JSON")
    _add(sub, "--csv", help="optional CSV table (approach, matches, winrate, elo)")
    _add(sub, "--initial-rating", type=float, help="starting rating (default 1500)")
    _add(sub, "--k-factor", type=float, help="update step (default 16)")
    _add(sub, "--num-shuffles", type=int, help="order shuffles averaged (default 25)")
    _add(sub, "--seed", type=int, help="shuffle seed (default 0)")
    sub.set_defaults(func=cmd_elo)

    sub = subparser("serve", "run the local annotation and fitting service")
    _add(sub, "--questionnaire", help="questionnaire JSONL")
    _add(sub, "--scores", help="score-table JSONL")
    _add(sub, "--features", help="feature-set JSON")
    _add(sub, "--preferences", help="preference JSONL to append to (default preferences.jsonl)")
    _add(sub, "--host", help="bind address (default 127.0.0.1)")
    _add(sub, "--port", type=int, help="port (default 8000)")
    _add(sub, "--seed", type=int, help="session shuffle seed (default 0)")
    _add(sub, "--ui-dir", help="static UI bundle to serve at /")
    _add(sub, "--allow-overwrite", action="store_true", help="let re-annotation replace records")
    sub.set_defaults(func=cmd_serve)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        options = _merge_options(args)
        args.func(options)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
