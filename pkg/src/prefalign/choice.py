"""Linear choice models over feature-scored responses.

A user picking one of K responses is modeled with a conditional logit: the
probability of response k is softmax over the linear rewards phi_k . lambda.
Fitting is full-batch gradient descent with the pinned defaults (step 0.1 on
the summed objective, stop when the objective moves less than 0.1). Two
ablation fits share the machinery: a pairwise-logistic expansion and a
gradient-free score average.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import numpy.typing as npt


class ChoiceModelError(ValueError):
    """Raised for malformed instances or invalid fit inputs."""


class FitDivergedError(RuntimeError):
    """Raised when the objective becomes non-finite during descent."""

    def __init__(self, iteration: int, nll: float):
        super().__init__(f"objective became {nll!r} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True, eq=False)
class ChoiceInstance:
    """One observed choice: a (K, F) score matrix and the chosen row."""

    features: npt.NDArray[np.float64]
    chosen_index: int

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.features, dtype=np.float64)
        if arr.ndim != 2:
            raise ChoiceModelError(f"features must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 2:
            raise ChoiceModelError(f"need at least 2 responses, got {arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise ChoiceModelError("features contain non-finite values")
        if not 0 <= self.chosen_index < arr.shape[0]:
            raise ChoiceModelError(
                f"chosen_index {self.chosen_index} out of range for K={arr.shape[0]}"
            )
        object.__setattr__(self, "features", arr)

    @property
    def k(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 0.1
    max_iter: int = 500
    tolerance: float = 0.1

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ChoiceModelError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_iter < 0:
            raise ChoiceModelError(f"max_iter must be >= 0, got {self.max_iter}")
        if self.tolerance < 0:
            raise ChoiceModelError(f"tolerance must be >= 0, got {self.tolerance}")


@dataclass(frozen=True)
class FitInfo:
    variant: str
    iterations: int
    final_nll: float
    converged: bool
    config: FitConfig


@dataclass(frozen=True, eq=False)
class WeightVector:
    weights: npt.NDArray[np.float64]
    feature_set_digest: str = ""
    fit: FitInfo | None = None

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.weights, dtype=np.float64)
        if arr.ndim != 1:
            raise ChoiceModelError(f"weights must be 1-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ChoiceModelError("weights contain non-finite values")
        object.__setattr__(self, "weights", arr)

    def with_digest(self, digest: str) -> "WeightVector":
        return dataclasses.replace(self, feature_set_digest=digest)


def _groups(
    instances: Sequence[ChoiceInstance],
) -> list[tuple[npt.NDArray[np.float64], npt.NDArray[np.intp]]]:
    """Stack instances by K, keeping first-appearance group order."""
    if not instances:
        raise ChoiceModelError("no choice instances")
    num_features = instances[0].num_features
    by_k: dict[int, tuple[list[npt.NDArray[np.float64]], list[int]]] = {}
    for inst in instances:
        if inst.num_features != num_features:
            raise ChoiceModelError(
                f"inconsistent feature count: {inst.num_features} vs {num_features}"
            )
        mats, chosen = by_k.setdefault(inst.k, ([], []))
        mats.append(inst.features)
        chosen.append(inst.chosen_index)
    return [
        (np.stack(mats), np.asarray(chosen, dtype=np.intp))
        for mats, chosen in by_k.values()
    ]


def choice_probabilities(
    instance: ChoiceInstance, weights: npt.NDArray[np.float64]
) -> npt.NDArray[np.float64]:
    """Softmax of the per-response rewards, computed with max subtraction."""
    z = instance.features @ np.asarray(weights, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def _nll_grad(
    groups: list[tuple[npt.NDArray[np.float64], npt.NDArray[np.intp]]],
    weights: npt.NDArray[np.float64],
    want_grad: bool,
) -> tuple[float, npt.NDArray[np.float64] | None]:
    nll = 0.0
    grad = None
    for phi, chosen in groups:
        z = phi @ weights                      # (B, K)
        m = z.max(axis=1, keepdims=True)
        e = np.exp(z - m)
        s = e.sum(axis=1)
        rows = np.arange(len(chosen))
        nll += float((m[:, 0] + np.log(s) - z[rows, chosen]).sum())
        if want_grad:
            p = e / s[:, None]
            # expected minus observed features; the K-axis is reduced first so
            # the result is invariant to row order within an instance for K=2
            g = (p[:, :, None] * phi).sum(axis=1).sum(axis=0) - phi[rows, chosen].sum(axis=0)
            grad = g if grad is None else grad + g
    return nll, grad


def negative_log_likelihood(
    instances: Sequence[ChoiceInstance], weights: npt.NDArray[np.float64]
) -> float:
    """Summed (not averaged) negative log likelihood of the observed choices."""
    w = np.asarray(weights, dtype=np.float64)
    nll, _ = _nll_grad(_groups(instances), w, want_grad=False)
    return nll


def nll_gradient(
    instances: Sequence[ChoiceInstance], weights: npt.NDArray[np.float64]
) -> npt.NDArray[np.float64]:
    w = np.asarray(weights, dtype=np.float64)
    _, grad = _nll_grad(_groups(instances), w, want_grad=True)
    assert grad is not None
    return grad


def _descend(
    instances: Sequence[ChoiceInstance], config: FitConfig, variant: str
) -> WeightVector:
    groups = _groups(instances)
    weights = np.zeros(instances[0].num_features)
    nll_prev, _ = _nll_grad(groups, weights, want_grad=False)
    nll = nll_prev
    iterations = 0
    converged = False
    for t in range(1, config.max_iter + 1):
        _, grad = _nll_grad(groups, weights, want_grad=True)
        weights = weights - config.learning_rate * grad
        nll, _ = _nll_grad(groups, weights, want_grad=False)
        if not math.isfinite(nll):
            raise FitDivergedError(iteration=t, nll=nll)
        iterations = t
        if abs(nll - nll_prev) < config.tolerance:
            converged = True
            break
        nll_prev = nll
    return WeightVector(
        weights=weights,
        fit=FitInfo(
            variant=variant,
            iterations=iterations,
            final_nll=nll,
            converged=converged,
            config=config,
        ),
    )


def fit_mcfadden(
    instances: Sequence[ChoiceInstance], config: FitConfig = FitConfig()
) -> WeightVector:
    """Fit the K-way conditional logit by full-batch gradient descent."""
    return _descend(instances, config, variant="mcfadden")


def expand_to_pairs(instances: Sequence[ChoiceInstance]) -> list[ChoiceInstance]:
    """Expand each K-way choice into K-1 chosen-vs-rejected pairs."""
    pairs: list[ChoiceInstance] = []
    for inst in instances:
        chosen_row = inst.features[inst.chosen_index]
        for j in range(inst.k):
            if j == inst.chosen_index:
                continue
            pairs.append(
                ChoiceInstance(
                    features=np.stack([chosen_row, inst.features[j]]),
                    chosen_index=0,
                )
            )
    return pairs


def fit_pairwise_logistic(
    instances: Sequence[ChoiceInstance], config: FitConfig = FitConfig()
) -> WeightVector:
    """Ablation: logistic regression on all chosen-vs-rejected pairs.

    For K=2 data the expansion is the identity up to row order, and the
    descent reduces the two responses with order-invariant float ops, so the
    trajectory matches fit_mcfadden bit for bit.
    """
    return _descend(expand_to_pairs(instances), config, variant="pairwise_logistic")


def score_averaged_lambda(instances: Sequence[ChoiceInstance]) -> WeightVector:
    """Ablation: weights = mean feature vector of the chosen responses."""
    if not instances:
        raise ChoiceModelError("no choice instances")
    chosen_rows = np.stack([inst.features[inst.chosen_index] for inst in instances])
    weights = chosen_rows.mean(axis=0)
    nll, _ = _nll_grad(_groups(instances), weights, want_grad=False)
    return WeightVector(
        weights=weights,
        fit=FitInfo(
            variant="score_averaged",
            iterations=0,
            final_nll=nll,
            converged=True,
            config=FitConfig(max_iter=0),
        ),
    )


def save_model(path: str | Path, user_id: str, weight_vector: WeightVector) -> None:
    fit = weight_vector.fit
    payload = {
        "user_id": user_id,
        "feature_set_digest": weight_vector.feature_set_digest,
        "weights": [float(w) for w in weight_vector.weights],
        "fit": None
        if fit is None
        else {
            "variant": fit.variant,
            "iterations": fit.iterations,
            "final_nll": fit.final_nll,
            "converged": fit.converged,
            "config": dataclasses.asdict(fit.config),
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def load_model(path: str | Path) -> tuple[str, WeightVector]:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    for key in ("user_id", "feature_set_digest", "weights"):
        if key not in obj:
            raise ChoiceModelError(f"{path}: missing key {key!r}")
    fit = None
    if obj.get("fit") is not None:
        raw = obj["fit"]
        fit = FitInfo(
            variant=str(raw["variant"]),
            iterations=int(raw["iterations"]),
            final_nll=float(raw["final_nll"]),
            converged=bool(raw["converged"]),
            config=FitConfig(**raw["config"]),
        )
    return str(obj["user_id"]), WeightVector(
        weights=np.asarray(obj["weights"], dtype=np.float64),
        feature_set_digest=str(obj["feature_set_digest"]),
        fit=fit,
    )


def instances_from_matrices(
    matrices: Iterable[npt.NDArray[np.float64]], chosen: Iterable[int]
) -> list[ChoiceInstance]:
    return [
        ChoiceInstance(features=m, chosen_index=c) for m, c in zip(matrices, chosen)
    ]
