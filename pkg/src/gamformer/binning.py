"""Quantile and categorical binning of feature columns."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_N_BINS = 16


@dataclass(frozen=True)
class BinSpec:
    """Fitted bins of one feature.

    Numeric features keep strictly increasing cut points; bin ``k`` covers
    ``(edges[k-1], edges[k]]``. Categorical features keep a
    ``category -> (lo, hi)`` table of contiguous bin ranges instead.
    """

    n_bins: int
    edges: np.ndarray = field(default_factory=lambda: np.empty(0))
    categorical_map: dict[float, tuple[int, int]] | None = None

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "edges", edges)
        if len(edges) > self.n_bins - 1:
            raise ValueError("more edges than n_bins - 1")
        if len(edges) > 1 and not np.all(np.diff(edges) > 0):
            raise ValueError("edges must be strictly increasing")

    @property
    def is_categorical(self) -> bool:
        return self.categorical_map is not None

    @property
    def n_effective(self) -> int:
        """Number of bins that can receive values."""
        if self.is_categorical:
            return self.n_bins
        return len(self.edges) + 1

    def bounds(self, k: int) -> tuple[float, float]:
        """Lower/upper value bounds of numeric bin ``k``."""
        lo = -np.inf if k == 0 else self.edges[k - 1]
        hi = np.inf if k == len(self.edges) else self.edges[k]
        return float(lo), float(hi)

    def __eq__(self, other):
        if not isinstance(other, BinSpec):
            return NotImplemented
        return (
            self.n_bins == other.n_bins
            and np.array_equal(self.edges, other.edges)
            and self.categorical_map == other.categorical_map
        )


@dataclass(frozen=True)
class BinnedMatrix:
    indices: np.ndarray  # (n, p) int64
    specs: tuple[BinSpec, ...]


def fit_bins(column, n_bins: int = DEFAULT_N_BINS) -> BinSpec:
    """Cut points at the empirical ``k / n_bins`` quantiles, ties collapsed."""
    col = np.asarray(column, dtype=np.float64).reshape(-1)
    if col.size == 0:
        raise ValueError("cannot fit bins on an empty column")
    if np.isnan(col).any():
        raise ValueError("NaN in column")
    qs = np.arange(1, n_bins) / n_bins
    edges = np.unique(np.quantile(col, qs, method="inverted_cdf"))
    # an edge at the max would only create an empty trailing bin
    edges = edges[edges < col.max()]
    return BinSpec(n_bins=n_bins, edges=edges)


def fit_categorical_bins(column, n_bins: int = DEFAULT_N_BINS) -> BinSpec:
    """Allocate contiguous bin ranges to categories proportional to frequency.

    Categories are ordered by id. Range sizes come from largest-remainder
    rounding of ``n_bins * share`` with every category getting at least one
    bin.
    """
    col = np.asarray(column, dtype=np.float64).reshape(-1)
    if np.isnan(col).any():
        raise ValueError("NaN in categorical column")
    cats, counts = np.unique(col, return_counts=True)
    k = len(cats)
    if k > n_bins:
        raise ValueError(f"{k} categories do not fit into {n_bins} bins")
    sizes = _largest_remainder(counts / counts.sum(), n_bins)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    table = {float(c): (int(bounds[i]), int(bounds[i + 1])) for i, c in enumerate(cats)}
    return BinSpec(n_bins=n_bins, categorical_map=table)


def _largest_remainder(shares: np.ndarray, total: int) -> np.ndarray:
    k = len(shares)
    # reserve one bin per category, distribute the rest by share
    free = total - k
    raw = shares * free
    sizes = np.floor(raw).astype(np.int64)
    short = free - sizes.sum()
    order = sorted(range(k), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:short]:
        sizes[i] += 1
    return sizes + 1


def assign_bin(spec: BinSpec, value: float) -> int:
    """Bin index of a single value; out-of-range values clamp."""
    return int(assign_bins(spec, np.asarray([value], dtype=np.float64))[0])


def assign_bins(spec: BinSpec, values) -> np.ndarray:
    vals = np.asarray(values, dtype=np.float64)
    if np.isnan(vals).any():
        raise ValueError("NaN value cannot be binned")
    if spec.is_categorical:
        out = np.empty(vals.shape, dtype=np.int64)
        cats = np.array(sorted(spec.categorical_map))
        centers = np.array([(lo + hi - 1) // 2 for lo, hi in (spec.categorical_map[c] for c in cats)])
        # unseen categories fall to the nearest known id
        pos = np.clip(np.searchsorted(cats, vals), 0, len(cats) - 1)
        left = np.clip(pos - 1, 0, len(cats) - 1)
        use_left = np.abs(vals - cats[left]) <= np.abs(vals - cats[pos])
        out[...] = centers[np.where(use_left, left, pos)]
        return out
    return np.searchsorted(spec.edges, vals, side="left").astype(np.int64)


def bin_matrix(X, specs) -> BinnedMatrix:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(specs):
        raise ValueError(f"expected {len(specs)} columns, got shape {X.shape}")
    idx = np.column_stack([assign_bins(s, X[:, i]) for i, s in enumerate(specs)]) if specs else np.empty((len(X), 0), np.int64)
    return BinnedMatrix(indices=idx.astype(np.int64), specs=tuple(specs))


def fit_specs(X, n_bins: int = DEFAULT_N_BINS, categorical_mask=None) -> list[BinSpec]:
    X = np.asarray(X, dtype=np.float64)
    mask = np.zeros(X.shape[1], bool) if categorical_mask is None else np.asarray(categorical_mask, bool)
    return [
        fit_categorical_bins(X[:, i], n_bins) if mask[i] else fit_bins(X[:, i], n_bins)
        for i in range(X.shape[1])
    ]


def one_hot(index: int, n_bins: int) -> np.ndarray:
    if not 0 <= index < n_bins:
        raise ValueError(f"index {index} outside [0, {n_bins})")
    out = np.zeros(n_bins)
    out[index] = 1.0
    return out


def bin_centers(spec: BinSpec, lo: float, hi: float) -> np.ndarray:
    """Midpoints of the effective numeric bins, outer bins clipped to ``[lo, hi]``."""
    if spec.is_categorical:
        raise ValueError("categorical bins have no numeric centers")
    bounds = np.array([spec.bounds(k) for k in range(spec.n_effective)], dtype=np.float64)
    bounds = np.clip(bounds, lo, hi)
    return bounds.mean(axis=1)
