"""scikit-learn compatible classifiers around the in-context GAM and EBM-lite."""

from __future__ import annotations

import functools
from importlib import resources
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .ebm import BoostConfig, fit_ebm_lite
from .interactions import rank_pairs, select_num_pairs
from .model import GAMformerNet, estimate_shapes
from .shapes import ShapeModel
from .training import load_net

DEFAULT_CHECKPOINT = "desk.gamf"


def default_checkpoint_path() -> Path:
    return Path(str(resources.files("gamformer") / "data" / DEFAULT_CHECKPOINT))


@functools.lru_cache(maxsize=8)
def _cached_net(path: str) -> GAMformerNet:
    return load_net(path)


def resolve_net(checkpoint) -> GAMformerNet:
    """Accept a loaded network, a checkpoint path, or ``None`` for the bundled one."""
    if isinstance(checkpoint, GAMformerNet):
        return checkpoint
    path = default_checkpoint_path() if checkpoint is None else Path(checkpoint)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found; train one with `gamformer train`")
    return _cached_net(str(path.resolve()))


def _categorical_mask(spec, n_features: int) -> np.ndarray:
    mask = np.zeros(n_features, bool)
    if spec is None:
        return mask
    spec = np.asarray(spec)
    if spec.dtype == bool:
        if len(spec) != n_features:
            raise ValueError("boolean categorical_features must have one entry per feature")
        return spec.copy()
    mask[spec.astype(int)] = True
    return mask


class _GAMClassifierBase(ClassifierMixin, BaseEstimator):
    def _validate_fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes to fit")
        self.n_features_in_ = X.shape[1]
        return X, y_enc

    def decision_function(self, X):
        check_is_fitted(self, "shape_model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        logits = self.shape_model_.predict_logits(X)
        if len(self.classes_) == 2:
            return logits[:, 1] - logits[:, 0]
        return logits

    def predict_proba(self, X):
        check_is_fitted(self, "shape_model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.shape_model_.predict_proba(X)

    def predict(self, X):
        check_is_fitted(self, "shape_model_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def shape_functions(self) -> ShapeModel:
        check_is_fitted(self, "shape_model_")
        return self.shape_model_


class GAMformerClassifier(_GAMClassifierBase):
    """GAM whose shape functions come from one transformer forward pass.

    ``fit`` performs no optimization: the training rows are the context.

    Parameters:
        checkpoint: path to a ``.gamf`` file, a loaded ``GAMformerNet``, or
            ``None`` for the bundled desk-scale checkpoint.
        pairs: ``0`` for main effects only, ``"auto"`` to select the number
            of FAST-ranked pair products on a hold-out split, or an int to
            force that many top pairs.
        max_pairs: upper bound on pairs considered with ``pairs="auto"``.
        categorical_features: boolean mask or integer indices.
        random_state: seed for the hold-out split used by ``pairs="auto"``.
    """

    def __init__(self, checkpoint=None, pairs=0, max_pairs=None, categorical_features=None, random_state=0):
        self.checkpoint = checkpoint
        self.pairs = pairs
        self.max_pairs = max_pairs
        self.categorical_features = categorical_features
        self.random_state = random_state

    def fit(self, X, y):
        X, y_enc = self._validate_fit(X, y)
        net = resolve_net(self.checkpoint)
        m = len(self.classes_)
        if m > net.config.max_classes:
            raise ValueError(f"{m} classes exceed the model's limit of {net.config.max_classes}")
        mask = _categorical_mask(self.categorical_features, X.shape[1])
        self.passes_ = 1
        if self.pairs in (0, None):
            self.shape_model_ = estimate_shapes(net, X, y_enc, m, mask)
            self.pair_ranking_ = None
            return self
        self.pair_ranking_ = rank_pairs(net, X, y_enc, m, mask)
        grid = None if self.pairs == "auto" else [int(self.pairs)]
        sel = select_num_pairs(
            net, X, y_enc, self.pair_ranking_, m, mask,
            seed=self.random_state or 0, grid=grid, max_pairs=self.max_pairs,
        )
        self.shape_model_ = sel.model
        self.selection_ = sel
        self.passes_ = sel.passes
        return self


class EBMLiteClassifier(_GAMClassifierBase):
    """Binary GAM fitted by cyclic per-bin gradient boosting."""

    def __init__(self, rounds=500, learning_rate=0.05, n_bins=16, categorical_features=None):
        self.rounds = rounds
        self.learning_rate = learning_rate
        self.n_bins = n_bins
        self.categorical_features = categorical_features

    def fit(self, X, y):
        X, y_enc = self._validate_fit(X, y)
        if len(self.classes_) != 2:
            raise ValueError("EBMLiteClassifier is binary-only")
        cfg = BoostConfig(self.rounds, self.learning_rate, self.n_bins)
        mask = _categorical_mask(self.categorical_features, X.shape[1])
        self.shape_model_ = fit_ebm_lite(X, y_enc, cfg, mask)
        return self
