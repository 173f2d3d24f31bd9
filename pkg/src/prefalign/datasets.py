"""Questionnaire, preference, split, and profile containers plus their JSONL codecs.

Everything downstream (scoring, fitting, the service) goes through these
types, so validation is front-loaded here: malformed lines fail with the
line number, and cross-referential invariants (chosen response exists, one
record per user and context) are enforced at load time.
"""

from __future__ import annotations

import dataclasses
import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class DatasetError(ValueError):
    """Raised for malformed or inconsistent dataset files."""


@dataclass(frozen=True)
class ResponseOption:
    response_id: str
    response_text: str

    def __post_init__(self) -> None:
        if not self.response_id:
            raise DatasetError("response_id must be non-empty")
        if not self.response_text:
            raise DatasetError(f"response {self.response_id!r}: empty response_text")


@dataclass(frozen=True)
class QuestionnaireItem:
    """One context with its fixed, ordered set of candidate responses."""

    context_id: str
    context_text: str
    responses: tuple[ResponseOption, ...]

    def __post_init__(self) -> None:
        if not self.context_id:
            raise DatasetError("context_id must be non-empty")
        if not self.context_text:
            raise DatasetError(f"context {self.context_id!r}: empty context_text")
        if len(self.responses) < 2:
            raise DatasetError(
                f"context {self.context_id!r}: needs at least 2 responses, got {len(self.responses)}"
            )
        seen: set[str] = set()
        for option in self.responses:
            if option.response_id in seen:
                raise DatasetError(
                    f"context {self.context_id!r}: duplicate response_id {option.response_id!r}"
                )
            seen.add(option.response_id)

    @property
    def k(self) -> int:
        return len(self.responses)

    @property
    def response_ids(self) -> tuple[str, ...]:
        return tuple(option.response_id for option in self.responses)

    def response_index(self, response_id: str) -> int:
        for i, option in enumerate(self.responses):
            if option.response_id == response_id:
                return i
        raise DatasetError(
            f"context {self.context_id!r}: unknown response_id {response_id!r}"
        )


@dataclass(frozen=True)
class PreferenceRecord:
    user_id: str
    context_id: str
    chosen_response_id: str


@dataclass(frozen=True)
class PreferenceDataset:
    """All recorded choices of one user, at most one per context."""

    user_id: str
    records: tuple[PreferenceRecord, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for record in self.records:
            if record.user_id != self.user_id:
                raise DatasetError(
                    f"record for user {record.user_id!r} in dataset of {self.user_id!r}"
                )
            if record.context_id in seen:
                raise DatasetError(
                    f"user {self.user_id!r}: duplicate record for context {record.context_id!r}"
                )
            seen.add(record.context_id)

    @property
    def context_ids(self) -> tuple[str, ...]:
        return tuple(record.context_id for record in self.records)

    def chosen(self, context_id: str) -> str:
        for record in self.records:
            if record.context_id == context_id:
                return record.chosen_response_id
        raise DatasetError(f"user {self.user_id!r}: no record for context {context_id!r}")

    def subset(self, context_ids: Iterable[str]) -> "PreferenceDataset":
        keep = set(context_ids)
        return PreferenceDataset(
            user_id=self.user_id,
            records=tuple(r for r in self.records if r.context_id in keep),
        )


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    description: str
    tags: Mapping[str, str] = dataclasses.field(default_factory=dict)


@dataclass(frozen=True)
class Split:
    """Disjoint train/val/test partition of context ids, tagged with its seed."""

    seed: int
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def __post_init__(self) -> None:
        parts = (set(self.train), set(self.val), set(self.test))
        total = len(self.train) + len(self.val) + len(self.test)
        if len(parts[0] | parts[1] | parts[2]) != total:
            raise DatasetError("split parts overlap or contain duplicates")

    def part(self, name: str) -> tuple[str, ...]:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise DatasetError(f"unknown split part {name!r}") from None


def _read_jsonl(path: str | Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise DatasetError(f"{path}:{lineno}: expected an object")
            yield lineno, obj


def _require(obj: dict, key: str, where: str) -> object:
    if key not in obj:
        raise DatasetError(f"{where}: missing key {key!r}")
    return obj[key]


def load_questionnaire(path: str | Path) -> list[QuestionnaireItem]:
    items: list[QuestionnaireItem] = []
    seen: set[str] = set()
    for lineno, obj in _read_jsonl(path):
        where = f"{path}:{lineno}"
        raw_responses = _require(obj, "responses", where)
        if not isinstance(raw_responses, list):
            raise DatasetError(f"{where}: 'responses' must be a list")
        try:
            item = QuestionnaireItem(
                context_id=str(_require(obj, "context_id", where)),
                context_text=str(_require(obj, "context_text", where)),
                responses=tuple(
                    ResponseOption(
                        response_id=str(_require(r, "response_id", where)),
                        response_text=str(_require(r, "response_text", where)),
                    )
                    for r in raw_responses
                ),
            )
        except DatasetError as exc:
            raise DatasetError(f"{where}: {exc}") from None
        if item.context_id in seen:
            raise DatasetError(f"{where}: duplicate context_id {item.context_id!r}")
        seen.add(item.context_id)
        items.append(item)
    if not items:
        raise DatasetError(f"{path}: empty questionnaire")
    return items


def save_questionnaire(items: Sequence[QuestionnaireItem], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(
                json.dumps(
                    {
                        "context_id": item.context_id,
                        "context_text": item.context_text,
                        "responses": [
                            {"response_id": r.response_id, "response_text": r.response_text}
                            for r in item.responses
                        ],
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def index_questionnaire(items: Sequence[QuestionnaireItem]) -> dict[str, QuestionnaireItem]:
    return {item.context_id: item for item in items}


def load_preferences(
    path: str | Path, questionnaire: Sequence[QuestionnaireItem]
) -> dict[str, PreferenceDataset]:
    """Read a preference JSONL and return one validated dataset per user.

    Users come back sorted by id so downstream iteration order does not
    depend on how annotation sessions were interleaved in the file.
    """
    index = index_questionnaire(questionnaire)
    per_user: dict[str, list[PreferenceRecord]] = {}
    for lineno, obj in _read_jsonl(path):
        where = f"{path}:{lineno}"
        record = PreferenceRecord(
            user_id=str(_require(obj, "user_id", where)),
            context_id=str(_require(obj, "context_id", where)),
            chosen_response_id=str(_require(obj, "chosen_response_id", where)),
        )
        item = index.get(record.context_id)
        if item is None:
            raise DatasetError(f"{where}: unknown context_id {record.context_id!r}")
        if record.chosen_response_id not in item.response_ids:
            raise DatasetError(
                f"{where}: context {record.context_id!r} has no response "
                f"{record.chosen_response_id!r}"
            )
        per_user.setdefault(record.user_id, []).append(record)
    datasets: dict[str, PreferenceDataset] = {}
    for user_id in sorted(per_user):
        try:
            datasets[user_id] = PreferenceDataset(user_id, tuple(per_user[user_id]))
        except DatasetError as exc:
            raise DatasetError(f"{path}: {exc}") from None
    return datasets


def save_preferences(records: Iterable[PreferenceRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(
                json.dumps(
                    {
                        "user_id": record.user_id,
                        "context_id": record.context_id,
                        "chosen_response_id": record.chosen_response_id,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def make_splits(
    context_ids: Sequence[str], ratios: tuple[float, float, float], seed: int
) -> Split:
    """Partition ids into train/val/test by seeded shuffle.

    Val and test take floor(ratio * N) ids each; train absorbs the
    remainder, so no id is ever dropped. Each part with a positive ratio
    must end up non-empty.
    """
    if len(set(context_ids)) != len(context_ids):
        raise DatasetError("context_ids contain duplicates")
    if len(ratios) != 3:
        raise DatasetError("ratios must be (train, val, test)")
    if any(r < 0 for r in ratios):
        raise DatasetError(f"negative ratio in {ratios}")
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise DatasetError(f"ratios {ratios} do not sum to 1")
    n = len(context_ids)
    n_val = math.floor(ratios[1] * n)
    n_test = math.floor(ratios[2] * n)
    n_train = n - n_val - n_test
    for count, ratio, name in (
        (n_train, ratios[0], "train"),
        (n_val, ratios[1], "val"),
        (n_test, ratios[2], "test"),
    ):
        if ratio > 0 and count == 0:
            raise DatasetError(
                f"{name} ratio {ratio} yields an empty part for {n} context ids"
            )
    shuffled = list(context_ids)
    random.Random(seed).shuffle(shuffled)
    return Split(
        seed=seed,
        train=tuple(sorted(shuffled[:n_train])),
        val=tuple(sorted(shuffled[n_train : n_train + n_val])),
        test=tuple(sorted(shuffled[n_train + n_val :])),
    )


def save_split(split: Split, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "seed": split.seed,
                "train": list(split.train),
                "val": list(split.val),
                "test": list(split.test),
            },
            fh,
            ensure_ascii=False,
            indent=2,
        )
        fh.write("\n")


def load_split(path: str | Path) -> Split:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: invalid JSON: {exc}") from exc
    for key in ("seed", "train", "val", "test"):
        _require(obj, key, str(path))
    return Split(
        seed=int(obj["seed"]),
        train=tuple(str(c) for c in obj["train"]),
        val=tuple(str(c) for c in obj["val"]),
        test=tuple(str(c) for c in obj["test"]),
    )


def load_profiles(path: str | Path) -> dict[str, UserProfile]:
    profiles: dict[str, UserProfile] = {}
    for lineno, obj in _read_jsonl(path):
        where = f"{path}:{lineno}"
        user_id = str(_require(obj, "user_id", where))
        if user_id in profiles:
            raise DatasetError(f"{where}: duplicate profile for user {user_id!r}")
        tags = obj.get("tags", {})
        if not isinstance(tags, dict):
            raise DatasetError(f"{where}: 'tags' must be an object")
        profiles[user_id] = UserProfile(
            user_id=user_id,
            description=str(_require(obj, "description", where)),
            tags={str(k): str(v) for k, v in tags.items()},
        )
    return profiles


def save_profiles(profiles: Iterable[UserProfile], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for profile in profiles:
            fh.write(
                json.dumps(
                    {
                        "user_id": profile.user_id,
                        "description": profile.description,
                        "tags": dict(profile.tags),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
