"""Label-preserving histogram resampling augmentation (antiRDSA).

Each variant of a source row copies the row, picks ``n_vars`` distinct
feature indices uniformly at random and overwrites them with draws from the
per-feature empirical histograms.  The label is carried over unchanged.

Randomness for source row ``r`` comes from a stream keyed by ``(seed, r)``;
variant ``i`` consumes the ``i``-th fixed-size block of that stream, so the
output does not depend on how rows are split across workers.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import rng as rngmod
from .data import Dataset, N_FEATURES, Sample
from .empirical import EmpiricalModel, fit

log = logging.getLogger(__name__)

VARIANTS_PER_SAMPLE = 50
ROWS_PER_TASK = 256

# Table of generation presets: (name, split) -> (n_bins, n_vars)
PRESETS = {
    ("DataGen1", "train"): (100, 5),
    ("DataGen1", "val"): (200, 5),
    ("DataGen1", "test"): (200, 5),
    ("DataGen2", "train"): (100, 10),
    ("DataGen2", "val"): (200, 10),
    ("DataGen2", "test"): (200, 10),
}


class GenerationError(RuntimeError):
    def __init__(self, msg, rows_written=0):
        super().__init__(msg)
        self.rows_written = rows_written


@dataclass(frozen=True)
class GenConfig:
    n_bins: int
    n_vars: int
    variants_per_sample: int = VARIANTS_PER_SAMPLE
    seed: int = 0
    preset_name: str = "custom"

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError(f"n_bins must be >= 1, got {self.n_bins}")
        if not 0 <= self.n_vars <= N_FEATURES:
            raise ValueError(f"n_vars must be in [0, {N_FEATURES}], got {self.n_vars}")
        if self.variants_per_sample < 1:
            raise ValueError(f"variants_per_sample must be >= 1, got {self.variants_per_sample}")

    def to_json(self) -> dict:
        return asdict(self)


def preset(name: str, split: str, seed: int = 0) -> GenConfig:
    key = (name, split.lower())
    if key not in PRESETS:
        raise KeyError(f"unknown preset {name!r} / split {split!r}")
    n_bins, n_vars = PRESETS[key]
    return GenConfig(n_bins=n_bins, n_vars=n_vars, variants_per_sample=VARIANTS_PER_SAMPLE,
                     seed=seed, preset_name=name)


def block_width(n_vars: int) -> int:
    """Uniforms consumed per perturbation: 87 selection keys + 2 per resampled feature."""
    return N_FEATURES + 2 * n_vars


def perturb_rows(x: np.ndarray, em: EmpiricalModel, n_vars: int, u: np.ndarray) -> np.ndarray:
    """Apply one perturbation per row of ``u`` to the single feature vector ``x``.

    ``u`` has shape (k, block_width(n_vars)); returns (k, 87).
    """
    k = u.shape[0]
    out = np.repeat(np.asarray(x, dtype=np.float64)[None, :], k, axis=0)
    if n_vars == 0:
        return out
    feats = np.argsort(u[:, :N_FEATURES], axis=1, kind="stable")[:, :n_vars]
    u_bin = u[:, N_FEATURES:N_FEATURES + n_vars]
    u_pos = u[:, N_FEATURES + n_vars:]
    vals = em.draw(feats, u_bin, u_pos)
    np.put_along_axis(out, feats, vals, axis=1)
    return out


def perturb_once(x: Sample, em: EmpiricalModel, n_vars: int, rng: np.random.Generator) -> Sample:
    if not 0 <= n_vars <= N_FEATURES:
        raise ValueError(f"n_vars must be in [0, {N_FEATURES}], got {n_vars}")
    u = rng.random((1, block_width(n_vars)))
    return Sample(perturb_rows(x.features, em, n_vars, u)[0], x.label)


def _variants_for_rows(ds: Dataset, em: EmpiricalModel, cfg: GenConfig, start: int, stop: int):
    V = cfg.variants_per_sample
    X = np.empty(((stop - start) * V, N_FEATURES))
    width = block_width(cfg.n_vars)
    for j, r in enumerate(range(start, stop)):
        u = rngmod.stream(cfg.seed, rngmod.GEN, r).random((V, width))
        X[j * V:(j + 1) * V] = perturb_rows(ds.X[r], em, cfg.n_vars, u)
    y = np.repeat(ds.y[start:stop], V)
    return X, y


def generate(
    ds: Dataset,
    cfg: GenConfig,
    sink: Callable[[np.ndarray, np.ndarray], None],
    *,
    em: EmpiricalModel | None = None,
    workers: int = 1,
) -> int:
    """Stream ``ds.n * cfg.variants_per_sample`` variants into ``sink(X, y)``.

    Rows arrive in (source row, variant) order.  ``em`` defaults to histograms
    fit on ``ds`` itself with ``cfg.n_bins``.  Returns the number of rows emitted.
    """
    if ds.n == 0:
        raise GenerationError("source dataset is empty")
    if em is None:
        em = fit(ds, cfg.n_bins)
    tasks = [(s, min(s + ROWS_PER_TASK, ds.n)) for s in range(0, ds.n, ROWS_PER_TASK)]
    written = 0

    def emit(X, y):
        nonlocal written
        try:
            sink(X, y)
        except OSError as exc:
            raise GenerationError(f"sink failed: {exc}", written) from exc
        written += len(y)

    if workers <= 1:
        for s, e in tasks:
            emit(*_variants_for_rows(ds, em, cfg, s, e))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            # bounded lookahead keeps memory at O(workers * task) rather than O(n)
            pending = []
            for s, e in tasks:
                pending.append(pool.submit(_variants_for_rows, ds, em, cfg, s, e))
                if len(pending) >= 2 * workers:
                    emit(*pending.pop(0).result())
            for fut in pending:
                emit(*fut.result())
    log.debug("generated %d rows from %d sources", written, ds.n)
    return written


def generate_dataset(ds: Dataset, cfg: GenConfig, *, em: EmpiricalModel | None = None,
                     workers: int = 1) -> Dataset:
    """In-memory convenience wrapper around :func:`generate`."""
    Xs, ys = [], []
    generate(ds, cfg, lambda X, y: (Xs.append(X), ys.append(y)), em=em, workers=workers)
    return Dataset(ds.schema, np.concatenate(Xs), np.concatenate(ys), copy=False)
