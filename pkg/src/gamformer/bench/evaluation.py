"""Cross-validation and robustness studies for the in-context GAM and EBM-lite."""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import clone
from sklearn.model_selection import StratifiedKFold

from ..estimators import EBMLiteClassifier, GAMformerClassifier, default_checkpoint_path
from ..priors import SupervisedTask
from ..training import read_train_config
from .datasets import DataError, generate_toy
from .metrics import multiclass_auc

NOISE_RATES = (0.0, 0.1, 0.2, 0.3, 0.4)
IMBALANCE_RATIOS = (0.5, 0.7, 0.8, 0.9)
CONTEXT_MULTIPLIERS = (0.5, 1.0, 2.0)
STUDIES = ("label_noise", "imbalance", "context_scaling")
MAX_REFOLDS = 5


def make_estimator(model="icl", checkpoint=None, pairs=0, seed: int = 0):
    """Resolve a model spec: ``"icl"``, ``"ebm"`` or an unfitted estimator."""
    if model == "icl":
        return GAMformerClassifier(checkpoint=checkpoint, pairs=pairs, random_state=seed)
    if model == "ebm":
        return EBMLiteClassifier()
    if hasattr(model, "fit"):
        return clone(model)
    raise ValueError(f"unknown model spec {model!r}; use 'icl', 'ebm' or an estimator")


def config_hash(estimator, **extra) -> str:
    params = {k: str(v) for k, v in estimator.get_params().items()}
    blob = json.dumps({"estimator": type(estimator).__name__, "params": params, **extra}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class EvalReport:
    """Per-fold AUCs of one model on one dataset."""

    fold_auc: list[float]
    seconds: float
    provenance: str
    config_hash: str
    folds: np.ndarray = field(repr=False)
    scores: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return len(self.fold_auc)

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_auc))

    @property
    def stderr(self) -> float:
        if self.k < 2:
            return 0.0
        return float(np.std(self.fold_auc, ddof=1) / np.sqrt(self.k))

    def records(self) -> list[dict]:
        rows = [{"fold": i, "auc": a} for i, a in enumerate(self.fold_auc)]
        rows.append(
            {
                "summary": True,
                "mean": self.mean,
                "stderr": self.stderr,
                "seconds": self.seconds,
                "provenance": self.provenance,
                "config_hash": self.config_hash,
            }
        )
        return rows

    def to_ndjson(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records())


def _assign_folds(y: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Stratified fold ids; reshuffles when a fold would miss a class."""
    classes = np.unique(y)
    for attempt in range(MAX_REFOLDS):
        folds = np.empty(len(y), np.int64)
        skf = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed + attempt)
        for f, (_, test) in enumerate(skf.split(np.zeros(len(y)), y)):
            folds[test] = f
        ok = all(
            len(np.unique(y[folds != f])) == len(classes) and len(np.unique(y[folds == f])) >= 2
            for f in range(k)
        )
        if ok:
            return folds
    raise DataError(f"could not build {k} folds with every class in each training split")


def _class_scores(est, X) -> np.ndarray:
    proba = est.predict_proba(X)
    return proba[:, 1] if proba.shape[1] == 2 else proba


def cross_validate(task: SupervisedTask, model="icl", k: int = 5, seed: int = 0, checkpoint=None, pairs=0) -> EvalReport:
    """Stratified k-fold ROC-AUC over all rows of ``task``.

    Out-of-fold scores are kept in the report (``P(class 1)`` for binary
    tasks, the full probability matrix otherwise).
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    X, y = task.X, np.asarray(task.y)
    counts = np.bincount(y)
    if (counts[counts > 0] < 2).any():
        raise DataError("every class needs at least two rows for cross-validation")
    est = make_estimator(model, checkpoint, pairs, seed)
    folds = _assign_folds(y, k, seed)
    t0 = time.perf_counter()
    aucs, provenance = [], ""
    scores = np.zeros(len(y)) if task.m == 2 else np.zeros((len(y), task.m))
    for f in range(k):
        tr, te = folds != f, folds == f
        fitted = clone(est).fit(X[tr], y[tr])
        s = _class_scores(fitted, X[te])
        if s.ndim == 2 and s.shape[1] != task.m:
            full = np.zeros((len(s), task.m))
            full[:, fitted.classes_] = s
            s = full
        scores[te] = s
        aucs.append(multiclass_auc(s, y[te]))
        provenance = fitted.shape_model_.provenance
    return EvalReport(
        aucs,
        time.perf_counter() - t0,
        provenance,
        config_hash(est, k=k, seed=seed),
        folds,
        scores,
    )


def holdout_scores(task: SupervisedTask, model="icl", seed: int = 0, checkpoint=None, pairs=0):
    """Fit on the task's train split and score its test split.

    Returns:
        ``(scores, auc)`` for the test rows in index order.
    """
    est = make_estimator(model, checkpoint, pairs, seed).fit(task.X_train, task.y_train)
    s = _class_scores(est, task.X_test)
    return s, multiclass_auc(s, task.y_test)


# robustness ------------------------------------------------------------------


@dataclass
class RobustnessReport:
    """AUC-vs-knob table: ``auc[model][knob]`` holds one value per seed."""

    study: str
    knob: str
    values: tuple
    auc: dict[str, dict[float, list[float]]]

    def median(self, model: str) -> list[float]:
        return [float(np.median(self.auc[model][v])) for v in self.values]

    def records(self) -> list[dict]:
        rows = []
        for model, table in self.auc.items():
            for v in self.values:
                a = table[v]
                rows.append({"study": self.study, "model": model, self.knob: v, "median_auc": float(np.median(a)), "auc": a})
        return rows

    def table(self) -> str:
        lines = [f"{self.knob:>10} " + " ".join(f"{m:>8}" for m in self.auc)]
        meds = {m: self.median(m) for m in self.auc}
        for i, v in enumerate(self.values):
            lines.append(f"{v:>10} " + " ".join(f"{meds[m][i]:8.4f}" for m in self.auc))
        return "\n".join(lines)


def flip_labels(y, rate: float, u) -> np.ndarray:
    """Flip binary labels where ``u < rate``.

    Sharing one uniform draw ``u`` across rates nests the flipped sets, so a
    higher rate corrupts a superset of the rows corrupted by a lower one.
    """
    y = np.asarray(y).copy()
    flip = np.asarray(u) < rate
    y[flip] = 1 - y[flip]
    return y


def _auc(model, checkpoint, X_tr, y_tr, X_te, y_te) -> float:
    if len(np.unique(y_tr)) < 2:
        return 0.5
    est = make_estimator(model, checkpoint).fit(X_tr, y_tr)
    return multiclass_auc(_class_scores(est, X_te), y_te)


def _label_noise_point(args):
    checkpoint, seed, models = args
    task = generate_toy("centroids", seed=seed)
    u = np.random.default_rng((seed, 1)).uniform(size=len(task.train_idx))
    out = {}
    for model in models:
        out[model] = [
            _auc(model, checkpoint, task.X_train, flip_labels(task.y_train, r, u), task.X_test, task.y_test)
            for r in NOISE_RATES
        ]
    return out


def _imbalance_point(args):
    checkpoint, seed, models = args
    out = {m: [] for m in models}
    for ratio in IMBALANCE_RATIOS:
        task = generate_toy("centroids", seed=seed, positive_ratio=ratio)
        for model in models:
            out[model].append(_auc(model, checkpoint, task.X_train, task.y_train, task.X_test, task.y_test))
    return out


def _context_point(args):
    checkpoint, seed, models, train_len = args
    n_test = 500
    out = {m: [] for m in models}
    for mult in CONTEXT_MULTIPLIERS:
        n_ctx = int(round(mult * train_len))
        task = generate_toy("centroids", n=n_ctx + n_test, seed=seed, train_fraction=n_ctx / (n_ctx + n_test))
        for model in models:
            out[model].append(_auc(model, checkpoint, task.X_train, task.y_train, task.X_test, task.y_test))
    return out


def robustness_suite(checkpoint=None, study: str = "label_noise", seed: int = 0, n_seeds: int = 10, models=("icl", "ebm"), workers: int = 1) -> RobustnessReport:
    """Sweep one perturbation on centroid tasks for each model.

    Studies:
        ``label_noise``: flip train labels at rates ``NOISE_RATES``.
        ``imbalance``: positive share ``IMBALANCE_RATIOS``.
        ``context_scaling``: context of ``CONTEXT_MULTIPLIERS`` times the
        checkpoint's pretraining rows per task.

    Each seed is an independent work item with its own data and RNG stream.
    """
    checkpoint = str(default_checkpoint_path() if checkpoint is None else checkpoint)
    models = tuple(models)
    seeds = [seed * 1000 + s for s in range(n_seeds)]
    if study == "label_noise":
        fn, knob, values = _label_noise_point, "noise_rate", NOISE_RATES
        jobs = [(checkpoint, s, models) for s in seeds]
    elif study == "imbalance":
        fn, knob, values = _imbalance_point, "positive_ratio", IMBALANCE_RATIOS
        jobs = [(checkpoint, s, models) for s in seeds]
    elif study == "context_scaling":
        train_len = read_train_config(checkpoint).prior.samples_per_task
        fn, knob, values = _context_point, "context_multiplier", CONTEXT_MULTIPLIERS
        jobs = [(checkpoint, s, models, train_len) for s in seeds]
    else:
        raise ValueError(f"unknown study {study!r}; choose from {STUDIES}")
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(fn, jobs))
    else:
        results = [fn(j) for j in jobs]
    auc = {m: {v: [r[m][i] for r in results] for i, v in enumerate(values)} for m in models}
    return RobustnessReport(study, knob, values, auc)
