"""Local HTTP service for questionnaire annotation and per-user fitting.

The preference JSONL on disk is the single source of truth: every POST
appends (or, with overwrite enabled, atomically rewrites) that file, and
restarting the service replays it. Response order in GET /questionnaire is
shuffled per (session, context) from a recorded seed so annotation events
stay auditable without exposing a fixed position bias.
"""

from __future__ import annotations

import hashlib
import json
import random
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .choice import FitConfig, fit_mcfadden
from .datasets import (
    PreferenceDataset,
    PreferenceRecord,
    index_questionnaire,
    load_questionnaire,
)
from .discovery import load_feature_set
from .reward import RewardModel
from .scoring import choice_instances, load_score_table


class ServiceError(RuntimeError):
    """Raised for unusable service configuration."""


class PreferencePayload(BaseModel):
    user_id: str = Field(min_length=1)
    context_id: str = Field(min_length=1)
    chosen_response_id: str = Field(min_length=1)
    overwrite: bool = False


def shuffle_seed(server_seed: int, session: str, context_id: str) -> int:
    """Stable per-(session, context) seed, recorded for auditability."""
    material = f"{server_seed}:{session}:{context_id}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")


class ServiceState:
    """Questionnaire, scores, and the append-only preference log."""

    def __init__(
        self,
        questionnaire_path: str | Path,
        scores_path: str | Path,
        features_path: str | Path,
        preferences_path: str | Path,
        session_seed: int = 0,
        allow_overwrite: bool = False,
    ):
        self.items = load_questionnaire(questionnaire_path)
        self.index = index_questionnaire(self.items)
        self.table = load_score_table(scores_path)
        self.feature_set = load_feature_set(features_path)
        self.table.require_complete(self.items)
        if self.table.num_features != len(self.feature_set):
            raise ServiceError(
                f"score table has {self.table.num_features} features, "
                f"feature set has {len(self.feature_set)}"
            )
        self.preferences_path = Path(preferences_path)
        self.session_seed = session_seed
        self.allow_overwrite = allow_overwrite
        self.records: list[PreferenceRecord] = []
        self.positions: dict[tuple[str, str], int] = {}
        self.models: dict[str, RewardModel] = {}
        self.fit_payloads: dict[str, dict] = {}
        self._state_lock = threading.Lock()
        self._user_locks: dict[str, threading.Lock] = {}
        if self.preferences_path.exists():
            self._replay_file()

    def _replay_file(self) -> None:
        with open(self.preferences_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                obj = json.loads(line)
                record = PreferenceRecord(
                    user_id=str(obj["user_id"]),
                    context_id=str(obj["context_id"]),
                    chosen_response_id=str(obj["chosen_response_id"]),
                )
                self._validate(record, where=f"{self.preferences_path}:{lineno}")
                key = (record.user_id, record.context_id)
                if key in self.positions:
                    raise ServiceError(
                        f"{self.preferences_path}:{lineno}: duplicate record for {key!r}"
                    )
                self.positions[key] = len(self.records)
                self.records.append(record)

    def _validate(self, record: PreferenceRecord, where: str = "request") -> None:
        item = self.index.get(record.context_id)
        if item is None:
            raise KeyError(f"{where}: unknown context_id {record.context_id!r}")
        if record.chosen_response_id not in item.response_ids:
            raise KeyError(
                f"{where}: context {record.context_id!r} has no response "
                f"{record.chosen_response_id!r}"
            )

    def user_lock(self, user_id: str) -> threading.Lock:
        with self._state_lock:
            return self._user_locks.setdefault(user_id, threading.Lock())

    def _append_line(self, record: PreferenceRecord) -> None:
        with open(self.preferences_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(self._row(record), ensure_ascii=False) + "\n")

    @staticmethod
    def _row(record: PreferenceRecord) -> dict:
        return {
            "user_id": record.user_id,
            "context_id": record.context_id,
            "chosen_response_id": record.chosen_response_id,
        }

    def _rewrite_file(self) -> None:
        tmp = self.preferences_path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(json.dumps(self._row(record), ensure_ascii=False) + "\n")
        tmp.replace(self.preferences_path)

    def store(self, record: PreferenceRecord, overwrite: bool) -> dict:
        """Append or replace one annotation; the file mirrors memory exactly."""
        self._validate(record)
        key = (record.user_id, record.context_id)
        with self._state_lock:
            position = self.positions.get(key)
            if position is not None:
                if not (overwrite and self.allow_overwrite):
                    raise FileExistsError(
                        f"user {record.user_id!r} already answered "
                        f"{record.context_id!r}"
                    )
                self.records[position] = record
                self._rewrite_file()
                return {"stored": self._row(record), "replaced": True}
            self.positions[key] = len(self.records)
            self.records.append(record)
            self._append_line(record)
            return {"stored": self._row(record), "replaced": False}

    def user_records(self, user_id: str) -> list[PreferenceRecord]:
        return [r for r in self.records if r.user_id == user_id]

    def fit_user(self, user_id: str) -> dict:
        records = self.user_records(user_id)
        if not records:
            raise LookupError(f"user {user_id!r} has no annotations to fit")
        dataset = PreferenceDataset(user_id=user_id, records=tuple(records))
        instances = choice_instances(self.items, self.table, dataset)
        weights = fit_mcfadden(instances, FitConfig())
        model = RewardModel(
            user_id,
            self.feature_set,
            weights.with_digest(self.table.feature_set_digest),
        )
        payload = {
            "user_id": user_id,
            "weights": [float(w) for w in weights.weights],
            "features": [
                {
                    "name": f.name,
                    "description": f.attribute_desc,
                    "low": f.attr_min,
                    "high": f.attr_max,
                }
                for f in self.feature_set.features
            ],
            "final_nll": weights.fit.final_nll,
            "iterations": weights.fit.iterations,
            "converged": weights.fit.converged,
            "n_records": len(records),
        }
        self.models[user_id] = model
        self.fit_payloads[user_id] = payload
        return payload


def build_app(
    questionnaire_path: str | Path,
    scores_path: str | Path,
    features_path: str | Path,
    preferences_path: str | Path = "preferences.jsonl",
    session_seed: int = 0,
    allow_overwrite: bool = False,
    ui_dir: str | Path | None = None,
    cors_origins: tuple[str, ...] = ("*",),
) -> FastAPI:
    state = ServiceState(
        questionnaire_path,
        scores_path,
        features_path,
        preferences_path,
        session_seed=session_seed,
        allow_overwrite=allow_overwrite,
    )
    app = FastAPI(title="prefalign annotation service")
    app.state.service = state
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/questionnaire")
    def questionnaire(session: str = "default") -> dict:
        items = []
        for item in state.items:
            seed = shuffle_seed(state.session_seed, session, item.context_id)
            responses = [
                {"response_id": r.response_id, "text": r.response_text}
                for r in item.responses
            ]
            random.Random(seed).shuffle(responses)
            items.append(
                {
                    "context_id": item.context_id,
                    "context_text": item.context_text,
                    "responses": responses,
                    "shuffle_seed": seed,
                }
            )
        return {"session": session, "items": items}

    @app.post("/preferences")
    def preferences(payload: PreferencePayload) -> dict:
        record = PreferenceRecord(
            user_id=payload.user_id,
            context_id=payload.context_id,
            chosen_response_id=payload.chosen_response_id,
        )
        with state.user_lock(payload.user_id):
            try:
                return state.store(record, overwrite=payload.overwrite)
            except KeyError as exc:
                raise HTTPException(status_code=404, detail=str(exc)) from None
            except FileExistsError as exc:
                detail = str(exc)
                if not state.allow_overwrite:
                    detail += " (service started without --allow-overwrite)"
                else:
                    detail += " (resend with overwrite=true to replace)"
                raise HTTPException(status_code=409, detail=detail) from None

    @app.get("/progress/{user_id}")
    def progress(user_id: str) -> dict:
        answered = [r.context_id for r in state.user_records(user_id)]
        return {
            "user_id": user_id,
            "answered": len(answered),
            "remaining": len(state.items) - len(answered),
            "total": len(state.items),
            "answered_ids": answered,
        }

    @app.post("/fit/{user_id}")
    def fit(user_id: str) -> dict:
        with state.user_lock(user_id):
            try:
                return state.fit_user(user_id)
            except LookupError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from None

    @app.get("/weights/{user_id}")
    def weights(user_id: str) -> dict:
        payload = state.fit_payloads.get(user_id)
        if payload is None:
            raise HTTPException(
                status_code=404, detail=f"user {user_id!r} has no fitted model yet"
            )
        return payload

    @app.get("/predict/{user_id}")
    def predict(user_id: str, context_id: str) -> dict:
        model = state.models.get(user_id)
        if model is None:
            raise HTTPException(
                status_code=409,
                detail=f"no fit for user {user_id!r} yet; POST /fit/{user_id} first",
            )
        item = state.index.get(context_id)
        if item is None:
            raise HTTPException(
                status_code=404, detail=f"unknown context_id {context_id!r}"
            )
        matrix = state.table.matrix(item)
        order = model.rank(matrix)
        return {
            "user_id": user_id,
            "context_id": context_id,
            "ranking": [
                {
                    "response_id": item.responses[i].response_id,
                    "text": item.responses[i].response_text,
                    "reward": model.reward(matrix[i]),
                }
                for i in order
            ],
        }

    if ui_dir is not None:
        ui_path = Path(ui_dir)
        if not ui_path.is_dir():
            raise ServiceError(f"ui_dir {ui_dir!r} is not a directory")
        app.mount("/", StaticFiles(directory=ui_path, html=True), name="ui")

    return app
