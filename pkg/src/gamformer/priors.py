"""Synthetic classification tasks from random SCM and GP priors.

Every sampler is a pure function of ``(config, seed)``. The task dump format
(``.gamt``, little-endian) is::

    b"GAMT"  u16 version  u32 n  u32 p  u32 m
    p x u8 categorical flag
    n*p x f32 X (row-major)
    n x u16 y
    n x u8 train-membership flag
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

ACTIVATIONS = {
    "identity": lambda z: z,
    "tanh": np.tanh,
    "relu": lambda z: np.maximum(z, 0.0),
    "sign": np.sign,
    # even response; opt-in so the default set stays monotone per edge
    "abs": np.abs,
}

TASK_MAGIC = b"GAMT"
TASK_VERSION = 1
MAX_RESAMPLE = 10


class PriorError(RuntimeError):
    """A sampler could not produce a usable task."""


@dataclass(frozen=True)
class PriorConfig:
    max_features: int = 4
    samples_per_task: int = 128
    max_classes: int = 4
    scm_probability: float = 0.96
    # SCM
    node_range: tuple[int, int] = (3, 12)
    edge_prob_range: tuple[float, float] = (0.2, 0.6)
    activations: tuple[str, ...] = ("identity", "tanh", "relu", "sign")
    noise_range: tuple[float, float] = (1e-2, 1.0)
    weight_scale: float = 1.5
    # GP
    length_scale_range: tuple[float, float] = (0.1, 2.0)
    output_scale_range: tuple[float, float] = (0.5, 2.0)
    gp_noise_range: tuple[float, float] = (1e-4, 0.1)
    input_modes: tuple[str, ...] = ("uniform", "normal", "equidistant")
    # split
    train_fraction_range: tuple[float, float] = (0.2, 0.8)

    def __post_init__(self):
        if not 0.0 <= self.scm_probability <= 1.0:
            raise ValueError("scm_probability must lie in [0, 1]")
        if self.max_features < 1:
            raise ValueError("max_features must be >= 1")
        if self.max_classes < 2:
            raise ValueError("max_classes must be >= 2")
        if self.samples_per_task < 2:
            raise ValueError("samples_per_task must be >= 2")
        bad = set(self.activations) - set(ACTIVATIONS)
        if bad:
            raise ValueError(f"unknown activations {sorted(bad)}")

    @classmethod
    def from_dict(cls, d: dict) -> "PriorConfig":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in known:
                raise KeyError(f"unknown prior option {k!r}")
            kw[k] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)


@dataclass
class SupervisedTask:
    X: np.ndarray
    y: np.ndarray
    m: int
    categorical_mask: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    source: str = ""
    feature_names: list[str] | None = field(default=None)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.categorical_mask = np.asarray(self.categorical_mask, dtype=bool)
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("X must be (n, p) with one label per row")
        if len(self.categorical_mask) != self.X.shape[1]:
            raise ValueError("categorical_mask length must equal feature count")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.m):
            raise ValueError("labels outside [0, m)")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def X_train(self):
        return self.X[self.train_idx]

    @property
    def y_train(self):
        return self.y[self.train_idx]

    @property
    def X_test(self):
        return self.X[self.test_idx]

    @property
    def y_test(self):
        return self.y[self.test_idx]

    def with_features(self, X, categorical_mask=None, feature_names=None) -> "SupervisedTask":
        mask = np.zeros(X.shape[1], bool) if categorical_mask is None else categorical_mask
        return SupervisedTask(X, self.y, self.m, mask, self.train_idx, self.test_idx, self.source, feature_names)


def _log_uniform(rng, lo, hi):
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


@dataclass
class SCMGraph:
    """Sampled DAG: ``parents[j]`` lists parent node ids of node ``j``."""

    order: np.ndarray
    parents: list[list[int]]

    def is_acyclic(self) -> bool:
        pos = {int(v): k for k, v in enumerate(self.order)}
        return all(pos[a] < pos[j] for j, ps in enumerate(self.parents) for a in ps)

    def adjacent(self, a: int, b: int) -> bool:
        """Whether one node is a direct parent of the other."""
        return a in self.parents[b] or b in self.parents[a]

    def connected(self, a: int, b: int) -> bool:
        """Whether ``a`` and ``b`` share an undirected path."""
        adj = {j: set() for j in range(len(self.parents))}
        for j, ps in enumerate(self.parents):
            for q in ps:
                adj[j].add(q)
                adj[q].add(j)
        seen, stack = {a}, [a]
        while stack:
            u = stack.pop()
            if u == b:
                return True
            for w in adj[u] - seen:
                seen.add(w)
                stack.append(w)
        return False


def sample_scm_graph(n_nodes: int, edge_prob: float, rng) -> SCMGraph:
    order = rng.permutation(n_nodes)
    parents: list[list[int]] = [[] for _ in range(n_nodes)]
    for k in range(n_nodes):
        for q in range(k):
            if rng.random() < edge_prob:
                parents[int(order[k])].append(int(order[q]))
    return SCMGraph(order, parents)


def sample_scm_task(cfg: PriorConfig, seed, n_features: int | None = None):
    """Propagate noise through a random DAG; pick feature and target nodes.

    Returns:
        ``(X, target, graph)`` with ``X`` of shape ``(n, p)``.
    """
    rng = np.random.default_rng(seed)
    n = cfg.samples_per_task
    for _ in range(MAX_RESAMPLE):
        p = int(rng.integers(1, cfg.max_features + 1)) if n_features is None else n_features
        n_nodes = max(int(rng.integers(cfg.node_range[0], cfg.node_range[1] + 1)), p + 1)
        edge_prob = rng.uniform(*cfg.edge_prob_range)
        graph = sample_scm_graph(n_nodes, edge_prob, rng)
        values = np.zeros((n, n_nodes))
        for node in graph.order:
            node = int(node)
            ps = graph.parents[node]
            sigma = _log_uniform(rng, *cfg.noise_range)
            noise = rng.normal(0.0, sigma, size=n)
            if not ps:
                # roots carry unit-scale exogenous variation
                values[:, node] = rng.normal(0.0, 1.0, size=n) + noise
                continue
            w = rng.normal(0.0, cfg.weight_scale, size=len(ps)) / np.sqrt(len(ps))
            act = ACTIVATIONS[cfg.activations[rng.integers(len(cfg.activations))]]
            values[:, node] = act(values[:, ps] @ w + noise)
        feats = rng.choice(n_nodes, size=p, replace=False)
        rest = np.setdiff1d(np.arange(n_nodes), feats)
        # prefer a direct cause or effect of some feature; nodes joined only
        # through a shared child would be independent of every feature
        linked = [r for r in rest if any(graph.adjacent(int(r), int(f)) for f in feats)]
        target = int(rng.choice(linked if linked else rest))
        y = values[:, target]
        if np.ptp(y) > 0:
            return values[:, feats], y, graph
    raise PriorError("SCM sampler kept producing a constant target")


def rbf_kernel(X, length_scale: float, output_scale: float) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    sq = np.sum(X**2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0.0)
    return output_scale * np.exp(-0.5 * d2 / length_scale**2)


def gp_inputs(mode: str, n: int, p: int, rng) -> np.ndarray:
    if mode == "uniform":
        return rng.uniform(-1.0, 1.0, size=(n, p))
    if mode == "normal":
        return rng.normal(size=(n, p))
    if mode == "equidistant":
        grid = np.linspace(-1.0, 1.0, n)
        return np.column_stack([rng.permutation(grid) for _ in range(p)])
    raise ValueError(f"unknown input mode {mode!r}")


def gp_cholesky(K: np.ndarray, max_jitter: float = 1e-6) -> np.ndarray:
    jitter = 0.0
    while True:
        try:
            return np.linalg.cholesky(K + jitter * np.eye(len(K)))
        except np.linalg.LinAlgError:
            if jitter >= max_jitter:
                raise PriorError("GP kernel not positive definite after max jitter")
            jitter = 1e-10 if jitter == 0 else jitter * 10


def sample_gp_task(cfg: PriorConfig, seed, n_features: int | None = None, hyper: dict | None = None):
    """Draw inputs, then one function sample from a zero-mean RBF GP.

    ``hyper`` may pin ``length_scale``, ``output_scale``, ``noise`` or
    ``mode``; the rest are drawn from the configured ranges.

    Returns:
        ``(X, target, hyperparameters)``.
    """
    rng = np.random.default_rng(seed)
    n = cfg.samples_per_task
    if n > 512:
        raise ValueError("GP prior limited to n <= 512")
    p = int(rng.integers(1, cfg.max_features + 1)) if n_features is None else n_features
    h = {
        "length_scale": _log_uniform(rng, *cfg.length_scale_range),
        "output_scale": _log_uniform(rng, *cfg.output_scale_range),
        "noise": _log_uniform(rng, *cfg.gp_noise_range),
        "mode": cfg.input_modes[rng.integers(len(cfg.input_modes))],
    }
    h.update(hyper or {})
    X = gp_inputs(h["mode"], n, p, rng)
    K = rbf_kernel(X, h["length_scale"], h["output_scale"]) + h["noise"] * np.eye(n)
    L = gp_cholesky(K)
    y = L @ rng.normal(size=n)
    return X, y, h


def discretize_labels(target, m: int, seed=None, quantiles=None) -> np.ndarray:
    """Cut a scalar target into ``m`` intervals at random quantile positions.

    Thresholds sit at the empirical quantiles ``quantiles`` (sorted, length
    ``m - 1``; drawn uniformly when omitted). A value equal to a threshold
    falls into the lower class.
    """
    t = np.asarray(target, dtype=np.float64)
    if np.ptp(t) == 0:
        raise PriorError("constant target cannot be discretized")
    if m < 2:
        raise ValueError("need at least two classes")
    m = min(m, len(np.unique(t)))
    if quantiles is None:
        rng = np.random.default_rng(seed)
        quantiles = rng.uniform(0.0, 1.0, size=m - 1)
    q = np.sort(np.asarray(quantiles, dtype=np.float64))
    if len(q) != m - 1:
        raise ValueError(f"need {m - 1} quantile positions")
    thresholds = np.quantile(t, q)
    return np.searchsorted(thresholds, t, side="left").astype(np.int64)


def _compact_labels(y: np.ndarray) -> tuple[np.ndarray, int]:
    present = np.unique(y)
    remap = np.full(y.max() + 1, -1)
    remap[present] = np.arange(len(present))
    return remap[y], len(present)


def split_rows(n: int, train_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    n_train = int(round(train_fraction * n))
    n_train = min(max(n_train, 1), n - 1)
    perm = rng.permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


class _Counter:
    def __init__(self):
        self.scm = 0
        self.gp = 0


SAMPLER_CALLS = _Counter()


def sample_task(cfg: PriorConfig, seed, train_fraction: float | None = None) -> SupervisedTask:
    """One labelled task: prior choice, labels, train/test split.

    Guarantees at least two classes and every class present in the train
    split; absent classes are dropped and labels remapped as a last resort.
    """
    ss = np.random.SeedSequence(seed if isinstance(seed, (list, tuple)) else [int(seed)])
    rng = np.random.default_rng(ss)
    for attempt in range(MAX_RESAMPLE):
        sub = ss.spawn(1)[0]
        use_scm = rng.random() < cfg.scm_probability
        try:
            if use_scm:
                SAMPLER_CALLS.scm += 1
                X, t, _ = sample_scm_task(cfg, sub)
                source = "scm"
            else:
                SAMPLER_CALLS.gp += 1
                X, t, _ = sample_gp_task(cfg, sub)
                source = "gp"
            m = int(rng.integers(2, cfg.max_classes + 1))
            y = discretize_labels(t, m, rng)
        except PriorError:
            continue
        y, m = _compact_labels(y)
        if m < 2:
            continue
        frac = rng.uniform(*cfg.train_fraction_range) if train_fraction is None else train_fraction
        for _ in range(MAX_RESAMPLE):
            tr, te = split_rows(len(y), frac, rng)
            if len(np.unique(y[tr])) == m:
                break
        else:
            keep = np.isin(y, np.unique(y[tr]))
            y_k, m = _compact_labels(y[keep])
            if m < 2:
                continue
            pos = np.cumsum(keep) - 1
            tr, te = pos[tr[keep[tr]]], pos[te[keep[te]]]
            X, y = X[keep], y_k
        return SupervisedTask(
            X.astype(np.float32).astype(np.float64),
            y,
            m,
            np.zeros(X.shape[1], bool),
            tr,
            te,
            source,
        )
    raise PriorError(f"no usable task after {MAX_RESAMPLE} attempts (seed {seed})")


# task dump -----------------------------------------------------------------


def task_to_bytes(task: SupervisedTask) -> bytes:
    n, p = task.X.shape
    if task.m > 65535:
        raise ValueError("too many classes for the u16 label field")
    train = np.zeros(n, np.uint8)
    train[task.train_idx] = 1
    return b"".join(
        [
            TASK_MAGIC,
            struct.pack("<HIII", TASK_VERSION, n, p, task.m),
            task.categorical_mask.astype(np.uint8).tobytes(),
            task.X.astype("<f4").tobytes(),
            task.y.astype("<u2").tobytes(),
            train.tobytes(),
        ]
    )


def task_from_bytes(buf: bytes) -> SupervisedTask:
    from .shapes import FormatError

    if buf[:4] != TASK_MAGIC:
        raise FormatError("not a task dump (bad magic)")
    if len(buf) < 18:
        raise FormatError("truncated task dump")
    version, n, p, m = struct.unpack_from("<HIII", buf, 4)
    if version != TASK_VERSION:
        raise FormatError(f"unsupported task dump version {version}")
    expected = 18 + p + 4 * n * p + 2 * n + n
    if len(buf) != expected:
        raise FormatError(f"task dump size {len(buf)} != expected {expected}")
    off = 18
    mask = np.frombuffer(buf, np.uint8, p, off).astype(bool)
    off += p
    X = np.frombuffer(buf, "<f4", n * p, off).reshape(n, p).astype(np.float64)
    off += 4 * n * p
    y = np.frombuffer(buf, "<u2", n, off).astype(np.int64)
    off += 2 * n
    train = np.frombuffer(buf, np.uint8, n, off).astype(bool)
    return SupervisedTask(X, y, m, mask, np.flatnonzero(train), np.flatnonzero(~train))


def save_task(task: SupervisedTask, path) -> None:
    Path(path).write_bytes(task_to_bytes(task))


def load_task(path) -> SupervisedTask:
    return task_from_bytes(Path(path).read_bytes())
