"""Single-pass minibatch Adam training and the 2+2 ensemble protocol.

Data is consumed either from an in-memory :class:`Dataset` or streamed from
CSV/ARDS files.  Rows are shuffled inside windows of ``shuffle_window`` rows,
so memory stays bounded by the window plus the model.

Each batch is split into fixed-size micro-batches whose regularization draws
come from streams keyed by (seed, epoch, step, micro-batch).  Gradients are
summed in micro-batch order, which makes results independent of ``workers``.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import rng as rngmod
from .data import Dataset, FeatureSchema, default_schema, iter_chunks
from .model import (
    PARAM_NAMES,
    TRAIN,
    ModelParams,
    RegularizerConfig,
    backward,
    draw_noise,
    forward,
    init_params,
)

log = logging.getLogger(__name__)

MICRO_BATCH = 256
PROB_CLAMP = 1e-12

DATA_AUG1 = "DataAug1"
DATA_AUG2 = "DataAug2"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 1024
    epochs: int = 1
    seed: int = 0
    reg: RegularizerConfig = field(default_factory=RegularizerConfig)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle_window: int = 2 ** 20

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.shuffle_window < 1:
            raise ValueError("shuffle_window must be >= 1")

    def to_json(self) -> dict:
        d = asdict(self)
        reg = d.pop("reg")
        d["hidden_dropout"] = reg["hidden_dropout"]
        d["noise_sigma"] = reg["noise_sigma"]
        return d

    @classmethod
    def from_json(cls, doc: Mapping) -> "TrainConfig":
        doc = dict(doc)
        reg = RegularizerConfig(
            hidden_dropout=float(doc.pop("hidden_dropout", 0.2)),
            noise_sigma=float(doc.pop("noise_sigma", 0.01)),
        )
        known = {f for f in cls.__dataclass_fields__} - {"reg"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(reg=reg, **doc)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def bce_loss(prob, y):
    """Binary cross-entropy with the probability clamped to [1e-12, 1 - 1e-12]."""
    p = np.clip(prob, PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    out = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(out) if np.ndim(out) == 0 else out


# -- Adam --------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.arrays.items()},
                   {k: np.zeros_like(a) for k, a in params.arrays.items()})


def adam_step(params: ModelParams, grads: Mapping[str, np.ndarray], state: AdamState, t: int,
              cfg: TrainConfig) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update.  Inputs are not modified."""
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    new_arrays, new_m, new_v = {}, {}, {}
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name in PARAM_NAMES:
        p, g = params[name], np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        new_arrays[name] = p - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        new_m[name], new_v[name] = m, v
    out = ModelParams(new_arrays, params.input_dropout, params.schema, params.use_bias)
    return out, AdamState(new_m, new_v, t)


# -- data streaming ----------------------------------------------------------


class RowSource:
    """Replayable sequence of (X, y) chunks: an in-memory dataset or files."""

    def __init__(self, data: Dataset | str | Sequence, schema: FeatureSchema | None = None,
                 chunk_rows: int = 65536):
        if isinstance(data, Dataset):
            self.datasets, self.paths = [data], []
            schema = data.schema
        elif isinstance(data, (str, bytes)) or hasattr(data, "__fspath__"):
            self.datasets, self.paths = [], [data]
        else:
            items = list(data)
            self.datasets = [d for d in items if isinstance(d, Dataset)]
            self.paths = [d for d in items if not isinstance(d, Dataset)]
            if self.datasets and self.paths:
                raise TypeError("mix of datasets and paths is not supported")
            if self.datasets:
                schema = self.datasets[0].schema
        self.schema = schema or default_schema()
        self.chunk_rows = chunk_rows

    def chunks(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for ds in self.datasets:
            for s in range(0, ds.n, self.chunk_rows):
                yield ds.X[s:s + self.chunk_rows], ds.y[s:s + self.chunk_rows]
        for p in self.paths:
            yield from iter_chunks(p, self.schema, self.chunk_rows)


def shuffled_batches(source: RowSource, batch_size: int, window: int, seed: int,
                     epoch: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Windowed shuffle: each window of rows is permuted, leftovers roll forward."""
    window = max(window, batch_size)
    bufX: list[np.ndarray] = []
    bufy: list[np.ndarray] = []
    buffered = 0
    n_window = 0

    def flush(final):
        nonlocal bufX, bufy, buffered, n_window
        X = np.concatenate(bufX)
        y = np.concatenate(bufy)
        perm = rngmod.stream(seed, rngmod.TRAIN_SHUFFLE, epoch, n_window).permutation(len(y))
        n_window += 1
        X, y = X[perm], y[perm]
        n_full = len(y) // batch_size * batch_size
        stop = len(y) if final else n_full
        for s in range(0, stop, batch_size):
            yield X[s:s + batch_size], y[s:s + batch_size]
        bufX, bufy = ([X[n_full:]], [y[n_full:]]) if not final else ([], [])
        buffered = len(y) - n_full if not final else 0

    for X, y in source.chunks():
        pos = 0
        while pos < len(y):
            take = min(window - buffered, len(y) - pos)
            bufX.append(X[pos:pos + take])
            bufy.append(y[pos:pos + take])
            buffered += take
            pos += take
            if buffered >= window:
                yield from flush(False)
    if buffered:
        yield from flush(True)


# -- training loop -----------------------------------------------------------


@dataclass
class TrainReport:
    steps: int
    rows: int
    final_loss: float
    losses: list[float]
    wall_time_seconds: float
    seed: int
    input_dropout: float

    def to_json(self) -> dict:
        return asdict(self)


def _micro_grads(m: ModelParams, X, y, cfg: TrainConfig, epoch: int, step: int, k: int):
    g = rngmod.stream(cfg.seed, rngmod.TRAIN_NOISE, epoch, step, k)
    noise = draw_noise(g, len(y), m.input_dropout, cfg.reg)
    prob, cache = forward(m, X, TRAIN, noise=noise)
    grads = backward(m, cache, y, reduction="sum")
    return grads, float(np.sum(bce_loss(prob, y)))


def train_run(data, cfg: TrainConfig | None = None, input_dropout: float = 0.0, *,
              workers: int = 1, schema: FeatureSchema | None = None,
              init: ModelParams | None = None) -> tuple[ModelParams, TrainReport]:
    cfg = cfg or TrainConfig()
    source = data if isinstance(data, RowSource) else RowSource(data, schema)
    params = init.copy() if init is not None else init_params(cfg.seed, input_dropout, source.schema)
    state = AdamState.zeros_like(params)
    t0 = time.perf_counter()
    step, rows = 0, 0
    losses: list[float] = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for epoch in range(cfg.epochs):
            for X, y in shuffled_batches(source, cfg.batch_size, cfg.shuffle_window, cfg.seed, epoch):
                step += 1
                spans = [(s, min(s + MICRO_BATCH, len(y))) for s in range(0, len(y), MICRO_BATCH)]
                args = [(params, X[s:e], y[s:e], cfg, epoch, step, k) for k, (s, e) in enumerate(spans)]
                if pool is None:
                    results = [_micro_grads(*a) for a in args]
                else:
                    results = list(pool.map(lambda a: _micro_grads(*a), args))
                grads = {name: sum(r[0][name] for r in results) / len(y) for name in PARAM_NAMES}
                losses.append(sum(r[1] for r in results) / len(y))
                params, state = adam_step(params, grads, state, step, cfg)
                rows += len(y)
            log.info("epoch %d: %d steps, last loss %.4f", epoch + 1, step, losses[-1] if losses else float("nan"))
    finally:
        if pool is not None:
            pool.shutdown()
    if rows == 0:
        raise ValueError("training data is empty")
    report = TrainReport(step, rows, losses[-1], losses, time.perf_counter() - t0, cfg.seed,
                         params.input_dropout)
    return params, report


def train(data, cfg: TrainConfig | None = None, input_dropout: float = 0.0, *,
          workers: int = 1, schema: FeatureSchema | None = None) -> ModelParams:
    return train_run(data, cfg, input_dropout, workers=workers, schema=schema)[0]


def expected_steps(n: int, cfg: TrainConfig) -> int:
    return math.ceil(n / cfg.batch_size) * cfg.epochs


# -- ensembles ---------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleMember:
    input_dropout: float
    dataset_id: str
    seed: int


@dataclass(frozen=True)
class EnsembleSpec:
    members: tuple[EnsembleMember, ...]

    @classmethod
    def reference_preset(cls, seed: int = 0) -> "EnsembleSpec":
        """Input dropout {0.075, 0.125} x {DataAug1, DataAug2}."""
        members = []
        for p in (0.075, 0.125):
            for ds_id in (DATA_AUG1, DATA_AUG2):
                members.append(EnsembleMember(p, ds_id, seed + len(members)))
        return cls(tuple(members))

    def to_json(self) -> dict:
        return {"members": [asdict(m) for m in self.members]}

    @classmethod
    def from_json(cls, doc: Mapping) -> "EnsembleSpec":
        return cls(tuple(EnsembleMember(float(m["input_dropout"]), str(m["dataset_id"]), int(m["seed"]))
                         for m in doc["members"]))


def train_ensemble(spec: EnsembleSpec, datasets: Mapping[str, object], cfg: TrainConfig | None = None,
                   *, workers: int = 1) -> list[ModelParams]:
    """Train every member independently, in spec order.

    ``datasets`` maps a dataset id to anything :class:`RowSource` accepts.
    Each member's seed replaces ``cfg.seed``.
    """
    cfg = cfg or TrainConfig()
    missing = [m.dataset_id for m in spec.members if m.dataset_id not in datasets]
    if missing:
        raise KeyError(f"ensemble references unknown dataset ids: {sorted(set(missing))}")
    models = []
    for member in spec.members:
        member_cfg = TrainConfig(**{**cfg.__dict__, "seed": member.seed})
        log.info("training member dropout=%.3f data=%s seed=%d", member.input_dropout, member.dataset_id, member.seed)
        models.append(train(datasets[member.dataset_id], member_cfg, member.input_dropout, workers=workers))
    return models
