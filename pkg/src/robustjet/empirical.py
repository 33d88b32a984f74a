"""Per-feature fixed-width histograms and resampling from them.

Bin ``b`` of a feature covers ``[lo + b*w, lo + (b+1)*w)`` with
``w = (hi - lo) / n_bins``; the maximum is clamped into the last bin.  A draw
picks a bin with probability ``counts[b] / total`` and then a uniform point
inside it.  Constant features (``lo == hi``) always return the constant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset, FeatureSchema, N_FEATURES

FORMAT_TAG = "robustjet-hist-v1"


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureHistogram:
    lo: float
    hi: float
    counts: tuple[int, ...]

    @property
    def n_bins(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    @property
    def degenerate(self) -> bool:
        return self.lo == self.hi

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.n_bins

    def edges(self) -> np.ndarray:
        return self.lo + self.width * np.arange(self.n_bins + 1)


def bin_index(values: np.ndarray, lo, hi, n_bins: int) -> np.ndarray:
    """Bin index per value, broadcasting ``lo``/``hi`` over the last axis."""
    values = np.asarray(values, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    width = (np.asarray(hi, dtype=np.float64) - lo) / n_bins
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.floor((values - lo) / width)
    b = np.where(width > 0, b, 0.0)
    return np.clip(b, 0, n_bins - 1).astype(np.intp)


class EmpiricalModel:
    """87 histograms sharing one bin count, stored as dense arrays.

    ``lo``, ``hi`` have shape (87,), ``counts`` has shape (87, n_bins).
    """

    def __init__(self, schema: FeatureSchema, lo, hi, counts):
        self.schema = schema
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != N_FEATURES:
            raise FitError(f"counts must be (87, n_bins), got {self.counts.shape}")
        totals = self.counts.sum(axis=1)
        if np.any(totals != totals[0]) or totals[0] <= 0:
            raise FitError("all histograms must share the same positive total")
        if np.any(self.lo > self.hi):
            raise FitError("histogram lo must not exceed hi")
        self.total = int(totals[0])
        self.n_bins = self.counts.shape[1]
        self.width = (self.hi - self.lo) / self.n_bins
        # flattened cumulative counts: feature f occupies [f*total, (f+1)*total)
        self._cum = np.cumsum(self.counts.reshape(-1))
        for a in (self.lo, self.hi, self.counts, self.width, self._cum):
            a.setflags(write=False)

    def __len__(self):
        return N_FEATURES

    def hist(self, f: int) -> FeatureHistogram:
        return FeatureHistogram(float(self.lo[f]), float(self.hi[f]), tuple(int(c) for c in self.counts[f]))

    @property
    def hists(self) -> list[FeatureHistogram]:
        return [self.hist(f) for f in range(N_FEATURES)]

    def draw(self, features: np.ndarray, u_bin: np.ndarray, u_pos: np.ndarray) -> np.ndarray:
        """Map uniforms in [0, 1) to resampled values of the given features.

        ``u_bin`` selects the bin (inverse CDF over integer counts) and ``u_pos``
        the position inside it.  All three arrays broadcast together.
        """
        features = np.asarray(features, dtype=np.intp)
        k = np.minimum((np.asarray(u_bin) * self.total).astype(np.int64), self.total - 1)
        flat = np.searchsorted(self._cum, features * self.total + k, side="right")
        b = flat - features * self.n_bins
        lo = self.lo[features]
        hi = self.hi[features]
        v = lo + (b + u_pos) * self.width[features]
        return np.clip(v, lo, hi)

    def sample_feature(self, f: int, rng: np.random.Generator) -> float:
        if not 0 <= f < N_FEATURES:
            raise IndexError(f"feature index {f} out of range [0, {N_FEATURES})")
        u = rng.random(2)
        return float(self.draw(np.array(f), u[0], u[1]))

    def to_json(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "schema": self.schema.to_json(),
            "n_bins": self.n_bins,
            "total": self.total,
            "hists": [
                {"lo": float(self.lo[f]), "hi": float(self.hi[f]), "counts": self.counts[f].tolist()}
                for f in range(N_FEATURES)
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EmpiricalModel":
        if doc.get("format") != FORMAT_TAG:
            raise FitError(f"not a histogram document (format={doc.get('format')!r})")
        schema = FeatureSchema.from_json(doc["schema"])
        hists = doc["hists"]
        return cls(
            schema,
            [h["lo"] for h in hists],
            [h["hi"] for h in hists],
            [h["counts"] for h in hists],
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "EmpiricalModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def fit(ds: Dataset, n_bins: int) -> EmpiricalModel:
    if n_bins < 1:
        raise FitError(f"n_bins must be >= 1, got {n_bins}")
    if ds.n == 0:
        raise FitError("cannot fit histograms to an empty dataset")
    lo = ds.X.min(axis=0)
    hi = ds.X.max(axis=0)
    b = bin_index(ds.X, lo, hi, n_bins)
    counts = np.zeros((N_FEATURES, n_bins), dtype=np.int64)
    for f in range(N_FEATURES):
        counts[f] = np.bincount(b[:, f], minlength=n_bins)
    return EmpiricalModel(ds.schema, lo, hi, counts)


def sample_feature(em: EmpiricalModel, f: int, rng: np.random.Generator) -> float:
    return em.sample_feature(f, rng)
