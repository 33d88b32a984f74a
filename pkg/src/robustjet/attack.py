"""Query-based Random Distribution Shuffle Attack (RDSA).

For each correctly classified row the attacker repeatedly draws a fresh
histogram-resampled variant (same kernel as the augmentation) and queries the
victim until the predicted label flips or ``max_tries`` is exhausted.  Failed
rows are kept unchanged.

The candidate for try ``k`` of row ``r`` is the ``k``-th block of the stream
keyed by ``(seed, r)``, so raising ``max_tries`` only appends candidates and can
only turn failures into successes.  Victims are called on batches in a
schedule that depends only on row chunking, never on the worker count.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import rng as rngmod
from .augment import block_width, perturb_rows
from .data import Dataset, N_FEATURES, Sample
from .empirical import EmpiricalModel, fit

log = logging.getLogger(__name__)

Victim = Callable[[np.ndarray], np.ndarray]

ROWS_PER_TASK = 128
TRIES_PER_ROUND = 8


@dataclass(frozen=True)
class AttackConfig:
    n_bins: int = 100
    n_vars: int = 5
    max_tries: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError(f"n_bins must be >= 1, got {self.n_bins}")
        if not 0 <= self.n_vars <= N_FEATURES:
            raise ValueError(f"n_vars must be in [0, {N_FEATURES}], got {self.n_vars}")
        if self.max_tries < 1:
            raise ValueError(f"max_tries must be >= 1, got {self.max_tries}")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AttackResult:
    adversarial: Sample
    success: bool
    tries_used: int


def _labels(victim: Victim, X: np.ndarray) -> np.ndarray:
    return np.asarray(victim(np.atleast_2d(X))).reshape(-1).astype(np.int64)


def attack_one(victim: Victim, x: Sample, em: EmpiricalModel, cfg: AttackConfig,
               rng: np.random.Generator) -> AttackResult:
    """Attack a single sample; ``victim`` maps a (B, 87) array to B labels."""
    if _labels(victim, x.features)[0] != x.label:
        return AttackResult(x, True, 0)
    width = block_width(cfg.n_vars)
    for k in range(1, cfg.max_tries + 1):
        cand = perturb_rows(x.features, em, cfg.n_vars, rng.random((1, width)))
        if _labels(victim, cand)[0] != x.label:
            return AttackResult(Sample(cand[0], x.label), True, k)
    return AttackResult(x, False, cfg.max_tries)


def _attack_rows(victim: Victim, ds: Dataset, em: EmpiricalModel, cfg: AttackConfig, start: int, stop: int):
    X = ds.X[start:stop].copy()
    y = ds.y[start:stop].astype(np.int64)
    n = stop - start
    tries = np.zeros(n, dtype=np.int64)
    success = _labels(victim, X) != y
    active = np.flatnonzero(~success)
    width = block_width(cfg.n_vars)
    if cfg.n_vars == 0:
        # identity perturbations can never flip a correct prediction
        tries[active] = cfg.max_tries
        return X, success, tries
    gens = {int(i): rngmod.stream(cfg.seed, rngmod.ATTACK, start + int(i)) for i in active}
    done = 0
    while active.size and done < cfg.max_tries:
        k = min(TRIES_PER_ROUND, cfg.max_tries - done)
        cands = np.stack([perturb_rows(X[i], em, cfg.n_vars, gens[int(i)].random((k, width))) for i in active])
        pred = _labels(victim, cands.reshape(-1, N_FEATURES)).reshape(len(active), k)
        flipped = pred != y[active, None]
        hit = flipped.any(axis=1)
        first = np.argmax(flipped, axis=1)
        for j in np.flatnonzero(hit):
            i = active[j]
            X[i] = cands[j, first[j]]
            success[i] = True
            tries[i] = done + first[j] + 1
        done += k
        tries[active[~hit]] = done
        active = active[~hit]
    return X, success, tries


@dataclass
class AttackReport:
    success_rate: float
    n_rows: int
    n_success: int
    n_already_wrong: int
    tries_histogram: dict[int, int]
    config: dict

    def to_json(self) -> dict:
        d = asdict(self)
        d["tries_histogram"] = {str(k): v for k, v in sorted(self.tries_histogram.items())}
        return d


def build_adversarial_set(victim: Victim, ds: Dataset, cfg: AttackConfig, *,
                          em: EmpiricalModel | None = None, workers: int = 1):
    """Attack every row of ``ds``.

    Returns ``(adversarial_dataset, success_rate, report)``.  Labels and row
    order are kept; ``em`` defaults to histograms fit on ``ds``.
    """
    if ds.n == 0:
        raise ValueError("cannot attack an empty dataset")
    if em is None:
        em = fit(ds, cfg.n_bins)
    tasks = [(s, min(s + ROWS_PER_TASK, ds.n)) for s in range(0, ds.n, ROWS_PER_TASK)]
    if workers <= 1:
        parts = [_attack_rows(victim, ds, em, cfg, s, e) for s, e in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda t: _attack_rows(victim, ds, em, cfg, *t), tasks))
    X = np.concatenate([p[0] for p in parts])
    success = np.concatenate([p[1] for p in parts])
    tries = np.concatenate([p[2] for p in parts])
    adv = Dataset(ds.schema, X, ds.y, copy=False)
    hist: dict[int, int] = {}
    for t in tries[success]:
        hist[int(t)] = hist.get(int(t), 0) + 1
    n_success = int(success.sum())
    rate = n_success / ds.n
    report = AttackReport(rate, ds.n, n_success, int(np.sum(success & (tries == 0))), hist, cfg.to_json())
    log.info("attack: %d/%d rows flipped (%.3f)", n_success, ds.n, rate)
    return adv, rate, report
