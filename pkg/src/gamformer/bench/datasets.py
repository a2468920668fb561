"""Toy tasks and CSV loading."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..priors import SupervisedTask, split_rows

TOYS = ("linear3", "poly2", "xor", "centroids")


class DataError(ValueError):
    """Input data could not be parsed into a task."""


def toy_labels(name: str, X: np.ndarray) -> np.ndarray:
    if name == "linear3":
        return (-X[:, 0] + 0 * X[:, 1] + X[:, 2] > 0).astype(np.int64)
    if name == "poly2":
        return (X[:, 0] + X[:, 1] ** 2 > 0).astype(np.int64)
    if name == "xor":
        return ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(np.int64)
    raise DataError(f"no closed-form labels for {name!r}")


def generate_toy(
    name: str,
    n: int | None = None,
    seed: int = 0,
    train_fraction: float | None = None,
    positive_ratio: float = 0.5,
    n_features: int = 20,
    separation: float = 2.0,
) -> SupervisedTask:
    """Illustrative binary tasks.

    ``linear3``, ``poly2`` and ``xor`` draw features uniformly from
    ``[-2, 2]`` (2000 rows, 1500/500 split by default). ``centroids`` draws
    ``n_features``-dimensional Gaussian blobs with unit covariance whose
    means are ``separation`` apart, with ``positive_ratio`` of rows in class 1
    (300 rows, 75/25 split by default).
    """
    rng = np.random.default_rng(seed)
    if name in ("linear3", "poly2", "xor"):
        n = 2000 if n is None else n
        p = {"linear3": 3, "poly2": 2, "xor": 2}[name]
        X = rng.uniform(-2.0, 2.0, size=(n, p))
        y = toy_labels(name, X)
        train_fraction = 0.75 if train_fraction is None else train_fraction
    elif name == "centroids":
        n = 300 if n is None else n
        n_pos = int(round(positive_ratio * n))
        y = np.zeros(n, np.int64)
        y[rng.choice(n, size=n_pos, replace=False)] = 1
        direction = rng.normal(size=n_features)
        direction /= np.linalg.norm(direction)
        X = rng.normal(size=(n, n_features)) + np.outer(y - 0.5, direction * separation)
        train_fraction = 0.75 if train_fraction is None else train_fraction
    else:
        raise DataError(f"unknown toy task {name!r}; choose from {TOYS}")
    tr, te = stratified_split(y, train_fraction, rng)
    return SupervisedTask(X, y, 2, np.zeros(X.shape[1], bool), tr, te, source=name)


def stratified_split(y, train_fraction: float, rng):
    """Per-class row split keeping class shares in both parts."""
    y = np.asarray(y)
    tr, te = [], []
    for c in np.unique(y):
        rows = np.flatnonzero(y == c)
        a, b = split_rows(len(rows), train_fraction, rng) if len(rows) > 1 else (np.arange(1), np.arange(0))
        tr.append(rows[a])
        te.append(rows[b])
    return np.sort(np.concatenate(tr)), np.sort(np.concatenate(te))


def load_csv(path, target: str | None = None, categorical=(), train_fraction: float = 1.0, seed: int = 0) -> SupervisedTask:
    """Parse a headed CSV into a task.

    Numeric cells become floats; columns named in ``categorical`` get integer
    ids by order of first appearance; labels are factorized (numeric sort when
    all labels parse as numbers, string sort otherwise). ``target`` defaults to
    the last column. All rows go to the train split unless ``train_fraction``
    is below 1.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names")
    target = header[-1] if target is None else target
    if target not in header:
        raise DataError(f"{path}: target column {target!r} missing")
    unknown = set(categorical) - set(header)
    if unknown:
        raise DataError(f"{path}: categorical columns {sorted(unknown)} missing")
    ti = header.index(target)
    feat_cols = [i for i in range(len(header)) if i != ti]
    cat_ids: dict[int, dict[str, int]] = {i: {} for i in feat_cols if header[i] in categorical}
    X, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
        vals = []
        for i in feat_cols:
            cell = row[i].strip()
            if i in cat_ids:
                vals.append(float(cat_ids[i].setdefault(cell, len(cat_ids[i]))))
                continue
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {lineno}, column {header[i]!r}: non-numeric value {cell!r}") from None
            if np.isnan(v):
                raise DataError(f"{path}: row {lineno}, column {header[i]!r}: missing value")
            vals.append(v)
        lab = row[ti].strip()
        if lab == "":
            raise DataError(f"{path}: row {lineno}: missing target")
        X.append(vals)
        labels.append(lab)
    if not X:
        raise DataError(f"{path}: no data rows")
    try:
        keys = sorted(set(labels), key=float)
    except ValueError:
        keys = sorted(set(labels))
    code = {k: j for j, k in enumerate(keys)}
    y = np.array([code[l] for l in labels], np.int64)
    # stored at f32 precision so the task dump format round-trips exactly
    Xa = np.array(X, dtype=np.float32).astype(np.float64)
    mask = np.array([i in cat_ids for i in feat_cols])
    if train_fraction < 1.0:
        tr, te = stratified_split(y, train_fraction, np.random.default_rng(seed))
    else:
        tr, te = np.arange(len(y)), np.arange(0)
    return SupervisedTask(Xa, y, len(keys), mask, tr, te, source=Path(path).name,
                          feature_names=[header[i] for i in feat_cols])


def save_csv(task: SupervisedTask, path, target: str = "y") -> None:
    names = task.feature_names or [f"x{i}" for i in range(task.p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, target])
        for row, lab in zip(task.X, task.y):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])
