"""Second-order terms: FAST pair ranking, product features, pair-count selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .binning import assign_bins, fit_bins
from .model import GAMformerNet, estimate_shapes
from .shapes import ShapeModel

log = logging.getLogger(__name__)

PAIR_RATIOS = (0.01, 0.05, 0.1, 0.2, 0.4, 0.8, 0.9)


class FeatureBudgetError(ValueError):
    """Augmented feature count exceeds what the model was pretrained on."""


@dataclass
class PairRanking:
    """Scored feature pairs, strongest first."""

    pairs: list[tuple[int, int, float]]
    ratios: tuple[float, ...] = PAIR_RATIOS

    def top(self, k: int) -> list[tuple[int, int]]:
        return [(i, j) for i, j, _ in self.pairs[:k]]

    def grid(self, p: int, cap: int | None = None) -> list[int]:
        """Candidate pair counts: rounded ``ratio * p`` values plus 0, deduplicated.

        Values are clipped to the number of ranked pairs and to ``cap``.
        """
        hi = len(self.pairs) if cap is None else min(cap, len(self.pairs))
        hi = max(hi, 0)
        counts = {0} | {min(int(np.floor(r * p + 0.5)), hi) for r in self.ratios}
        return sorted(counts)

    def to_csv(self, path=None) -> str:
        lines = ["i,j,strength"] + [f"{i},{j},{s!r}" for i, j, s in self.pairs]
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _cut_gains(a: np.ndarray, b: np.ndarray, r: np.ndarray, na: int, nb: int) -> np.ndarray:
    """RSS reduction of the best constant-per-quadrant fit for every cut pair.

    Returns an ``(na - 1, nb - 1)`` array; entry ``[ci, cj]`` splits rows into
    ``a <= ci`` / ``a > ci`` and ``b <= cj`` / ``b > cj``.
    """
    S = np.zeros((na, nb))
    N = np.zeros((na, nb))
    np.add.at(S, (a, b), r)
    np.add.at(N, (a, b), 1.0)
    CS = S.cumsum(0).cumsum(1)
    CN = N.cumsum(0).cumsum(1)
    tot_s, tot_n = CS[-1, -1], CN[-1, -1]
    # quadrant sums from the 2-D prefix tables
    ll_s, ll_n = CS[:-1, :-1], CN[:-1, :-1]
    lo_s, lo_n = CS[:-1, -1:], CN[:-1, -1:]  # a <= ci, any b
    bo_s, bo_n = CS[-1:, :-1], CN[-1:, :-1]  # any a, b <= cj
    quads = [
        (ll_s, ll_n),
        (lo_s - ll_s, lo_n - ll_n),
        (bo_s - ll_s, bo_n - ll_n),
        (tot_s - lo_s - bo_s + ll_s, tot_n - lo_n - bo_n + ll_n),
    ]
    fit = np.zeros((na - 1, nb - 1))
    for s, n in quads:
        fit += np.divide(s * s, n, out=np.zeros_like(fit), where=n > 0)
    return np.maximum(fit - tot_s * tot_s / tot_n, 0.0)


def fast_scores(X, residuals, n_cut_bins: int = 8, categorical_mask=None) -> PairRanking:
    """Rank all feature pairs by how much a 4-quadrant step explains residuals.

    Both features of a pair are quantile-binned into ``n_cut_bins`` bins; every
    pair of cut points is scored exactly using cumulative-sum tables.
    Categorical features are skipped.
    """
    X = np.asarray(X, dtype=np.float64)
    r = np.asarray(residuals, dtype=np.float64)
    n, p = X.shape
    mask = np.zeros(p, bool) if categorical_mask is None else np.asarray(categorical_mask, bool)
    binned = {}
    for i in range(p):
        if not mask[i]:
            spec = fit_bins(X[:, i], n_cut_bins)
            binned[i] = (assign_bins(spec, X[:, i]), spec.n_effective)
    scored = []
    for i, j in combinations(sorted(binned), 2):
        (a, na), (b, nb) = binned[i], binned[j]
        strength = 0.0
        if na > 1 and nb > 1:
            strength = float(_cut_gains(a, b, r, na, nb).max())
        scored.append((i, j, strength))
    scored.sort(key=lambda t: (-t[2], t[0], t[1]))
    return PairRanking(scored)


def build_pair_features(X, pairs, categorical_mask=None, budget: int | None = None, feature_names=None):
    """Append one ``x_i * x_j`` column per pair.

    Returns:
        ``(X_augmented, categorical_mask, feature_names)``.
    """
    X = np.asarray(X, dtype=np.float64)
    p = X.shape[1]
    mask = np.zeros(p, bool) if categorical_mask is None else np.asarray(categorical_mask, bool)
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(p)]
    pairs = [tuple(int(v) for v in pr[:2]) for pr in pairs]
    for i, j in pairs:
        if i == j:
            raise ValueError(f"pair ({i}, {j}) repeats a feature")
        if not (0 <= i < p and 0 <= j < p):
            raise ValueError(f"pair ({i}, {j}) out of range")
        if mask[i] or mask[j]:
            raise ValueError(f"pair ({i}, {j}) involves a categorical feature")
    if budget is not None and p + len(pairs) > budget and pairs:
        raise FeatureBudgetError(f"{p} features + {len(pairs)} pairs exceed the budget of {budget}")
    if not pairs:
        return X, mask, names
    cols = np.column_stack([X[:, i] * X[:, j] for i, j in pairs])
    return (
        np.hstack([X, cols]),
        np.concatenate([mask, np.zeros(len(pairs), bool)]),
        names + [f"{names[i]}*{names[j]}" for i, j in pairs],
    )


def main_effect_residuals(model: ShapeModel, X, y) -> np.ndarray:
    """``1[y == c] - P(c | x)`` for c = class 1 (binary) or the most frequent class."""
    y = np.asarray(y)
    proba = model.predict_proba(X)
    c = 1 if proba.shape[1] == 2 else int(np.bincount(y, minlength=proba.shape[1]).argmax())
    return (y == c).astype(np.float64) - proba[:, c]


def rank_pairs(net: GAMformerNet, X, y, m=None, categorical_mask=None, n_cut_bins: int = 8) -> PairRanking:
    main = estimate_shapes(net, X, y, m, categorical_mask)
    return fast_scores(X, main_effect_residuals(main, X, y), n_cut_bins, categorical_mask)


@dataclass
class PairSelection:
    n_pairs: int
    pairs: list[tuple[int, int]]
    model: ShapeModel
    val_auc: dict[int, float]
    passes: int
    grid: list[int] = field(default_factory=list)


def select_num_pairs(
    net: GAMformerNet,
    X,
    y,
    ranking: PairRanking,
    m: int | None = None,
    categorical_mask=None,
    feature_names=None,
    seed: int = 0,
    grid: list[int] | None = None,
    max_pairs: int | None = None,
    val_fraction: float = 0.2,
) -> PairSelection:
    """Pick the number of top-ranked pairs by hold-out AUC, then refit.

    The train data is split 80/20 (stratified). Each candidate count runs one
    shape-estimation pass on the 80% part and is scored on the 20% part; the
    best count (smallest on ties) is refit on all rows, one more pass.
    """
    from .bench.datasets import stratified_split
    from .bench.metrics import multiclass_auc

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    m = int(y.max()) + 1 if m is None else m
    p = X.shape[1]
    cap = max(net.config.max_features - p, 0)
    if max_pairs is not None:
        cap = min(cap, max_pairs)
    if grid is None:
        grid = ranking.grid(p, cap)
    else:
        grid = sorted(set(grid))
    fit_rows, val_rows = stratified_split(y, 1.0 - val_fraction, np.random.default_rng(seed))
    passes = 0
    scores: dict[int, float] = {}
    budget = max(net.config.max_features, p)
    for k in grid:
        Xa, mask, _ = build_pair_features(X, ranking.top(k), categorical_mask, budget)
        model = estimate_shapes(net, Xa[fit_rows], y[fit_rows], m, mask)
        passes += 1
        try:
            scores[k] = multiclass_auc(model.predict_proba(Xa[val_rows]), y[val_rows])
        except ValueError:
            scores[k] = float("nan")
    valid = {k: s for k, s in scores.items() if not np.isnan(s)}
    best = min(valid, key=lambda k: (-valid[k], k)) if valid else 0
    pairs = ranking.top(best)
    Xa, mask, names = build_pair_features(X, pairs, categorical_mask, budget, feature_names)
    full = estimate_shapes(net, Xa, y, m, mask, names)
    model = ShapeModel(full.values, full.specs, full.intercept, full.provenance, names, pairs)
    passes += 1
    log.info("shape-estimation passes: %d (grid %s, chosen %d pairs)", passes, grid, best)
    return PairSelection(best, pairs, model, scores, passes, list(grid))
