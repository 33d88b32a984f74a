"""Accuracy, ensemble averaging and the mixed clean/adversarial score."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, SchemaMismatchError
from .model import ModelParams, predict_logit, predict_proba, sigmoid

PROB = "prob"
LOGIT = "logit"


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class Metrics:
    clean_acc: float
    adv_acc: float
    mixed_score: float
    n_clean: int
    n_adv: int
    attack_success_rate: float | None = None

    def to_json(self) -> dict:
        d = asdict(self)
        if d["attack_success_rate"] is None:
            del d["attack_success_rate"]
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def _check_models(models: Sequence[ModelParams]) -> None:
    if not models:
        raise EvaluationError("ensemble needs at least one model")
    schema = models[0].schema
    if any(m.schema != schema for m in models[1:]):
        raise SchemaMismatchError("ensemble members have different schemas")


def ensemble_prob(models: Sequence[ModelParams], X, mode: str = PROB) -> np.ndarray:
    """Mean of member probabilities (``mode="prob"``) or sigmoid of mean logit."""
    _check_models(models)
    if mode == PROB:
        return sum(predict_proba(m, X) for m in models) / len(models)
    if mode == LOGIT:
        return sigmoid(sum(predict_logit(m, X) for m in models) / len(models))
    raise ValueError(f"unknown averaging mode {mode!r}")


def ensemble_predict(models: Sequence[ModelParams], X, mode: str = PROB) -> np.ndarray:
    return (ensemble_prob(models, X, mode) >= 0.5).astype(np.uint8)


def ensemble_victim(models: Sequence[ModelParams], mode: str = PROB) -> Callable[[np.ndarray], np.ndarray]:
    _check_models(models)
    return lambda X: ensemble_predict(models, X, mode)


def accuracy(predictor, ds: Dataset) -> float:
    """Fraction of rows where ``predictor(ds.X)`` equals the label.

    ``predictor`` may also be a precomputed label array.
    """
    if ds.n == 0:
        raise EvaluationError("accuracy of an empty dataset is undefined")
    pred = predictor(ds.X) if callable(predictor) else predictor
    pred = np.asarray(pred).reshape(-1)
    if pred.shape != (ds.n,):
        raise EvaluationError(f"predictor returned {pred.shape[0]} labels for {ds.n} rows")
    correct = int(np.sum(pred.astype(np.int64) == ds.y.astype(np.int64)))
    return float(Fraction(correct, ds.n))


def mixed_score(clean_acc: float, adv_acc: float) -> float:
    for name, v in (("clean_acc", clean_acc), ("adv_acc", adv_acc)):
        if not 0.0 <= v <= 1.0:
            raise EvaluationError(f"{name} must be in [0, 1], got {v}")
    return (clean_acc + adv_acc) / 2


def evaluate(models: Sequence[ModelParams], clean_ds: Dataset, adv_ds: Dataset, *,
             mode: str = PROB, attack_success_rate: float | None = None) -> Metrics:
    _check_models(models)
    if clean_ds.schema != adv_ds.schema or clean_ds.schema != models[0].schema:
        raise SchemaMismatchError("models, clean and adversarial data must share one schema")
    predictor = lambda X: ensemble_predict(models, X, mode)
    clean = accuracy(predictor, clean_ds)
    adv = accuracy(predictor, adv_ds)
    return Metrics(clean, adv, mixed_score(clean, adv), clean_ds.n, adv_ds.n, attack_success_rate)
