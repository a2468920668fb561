"""EBM-lite: cyclic gradient boosting of binned shape tables.

Each round visits the features in a fixed order; for the current feature the
logistic-loss negative gradient (``y - p``) is averaged per bin and added to
that feature's table, scaled by the learning rate. With ``lr < 8`` every such
update is a descent step on the training loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binning import DEFAULT_N_BINS, bin_matrix, fit_specs
from .shapes import ShapeModel


@dataclass(frozen=True)
class BoostConfig:
    rounds: int = 500
    learning_rate: float = 0.05
    n_bins: int = DEFAULT_N_BINS

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")


def _log_loss(y, z) -> float:
    # mean of log(1 + e^z) - y z, computed stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def fit_ebm_lite(
    X,
    y,
    cfg: BoostConfig = BoostConfig(),
    categorical_mask=None,
    feature_order=None,
    feature_names=None,
    return_history: bool = False,
):
    """Fit a binary main-effects GAM by round-robin per-bin boosting.

    Args:
        X: ``(n, p)`` features.
        y: binary labels in ``{0, 1}``.
        cfg: rounds, learning rate and bin count.
        feature_order: permutation of feature ids visited each round.
        return_history: also return the training log-loss after every round
            (index 0 is the loss of the intercept-only start).

    Returns:
        A two-class :class:`ShapeModel` whose class-1 column carries the
        log-odds tables and whose class-0 column is zero.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes = np.unique(y)
    if not set(classes.tolist()) <= {0, 1}:
        raise ValueError("EBM-lite supports binary labels only")
    y = y.astype(np.float64)
    n, p = X.shape
    specs = fit_specs(X, cfg.n_bins, categorical_mask)
    idx = bin_matrix(X, specs).indices
    counts = [np.bincount(idx[:, i], minlength=cfg.n_bins).astype(np.float64) for i in range(p)]
    rate = np.clip(y.mean(), 1e-6, 1 - 1e-6)
    beta = float(np.log(rate / (1 - rate)))
    tables = np.zeros((p, cfg.n_bins))
    z = np.full(n, beta)
    order = np.arange(p) if feature_order is None else np.asarray(feature_order)
    history = [_log_loss(y, z)]
    for _ in range(cfg.rounds):
        for i in order:
            resid = y - 1.0 / (1.0 + np.exp(-z))
            sums = np.bincount(idx[:, i], weights=resid, minlength=cfg.n_bins)
            step = cfg.learning_rate * np.divide(sums, counts[i], out=np.zeros(cfg.n_bins), where=counts[i] > 0)
            tables[i] += step
            z += step[idx[:, i]]
        if return_history:
            history.append(_log_loss(y, z))
    values = np.zeros((p, cfg.n_bins, 2))
    values[:, :, 1] = tables
    model = ShapeModel(values, specs, np.array([0.0, beta]), "ebm-lite", feature_names)
    if return_history:
        return model, history
    return model
