"""The fitted GAM: binned shape tables, additive prediction and file formats.

Binary layout of a ``.gams`` file (all little-endian)::

    b"GAMS"  u16 version  u32 p  u32 m  u32 n_bins
    str provenance                      (u32 length + utf-8)
    p x { str name, u8 categorical,
          numeric:     u32 n_edges, n_edges x f64
          categorical: u32 n_cats, n_cats x (f64 id, u32 lo, u32 hi) }
    u32 n_pairs, n_pairs x (u32 i, u32 j)
    m x f32 intercept
    p*n_bins*m x f32 shape values       (row-major [feature, bin, class])
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binning import BinSpec, assign_bins

MAGIC = b"GAMS"
VERSION = 1
CSV_HEADER = ["feature", "class", "bin_index", "lower_edge", "upper_edge", "value"]


class FormatError(ValueError):
    """A model or task file is malformed or has an unsupported version."""


@dataclass(eq=False)
class ShapeModel:
    """Per-feature, per-bin, per-class log-odds contributions.

    Attributes:
        values: float32 array of shape ``(p, n_bins, m)``.
        specs: one fitted :class:`BinSpec` per feature.
        intercept: float32 array of shape ``(m,)``.
        provenance: ``"icl"`` or ``"ebm-lite"``.
        feature_names: display names, ``x0 .. x{p-1}`` by default.
        pairs: base-feature index pairs whose products occupy the last
            ``len(pairs)`` feature slots; raw inputs are expanded on the fly.
    """

    values: np.ndarray
    specs: list[BinSpec]
    intercept: np.ndarray | None = None
    provenance: str = "icl"
    feature_names: list[str] | None = None
    pairs: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ValueError("shape values must be (p, n_bins, m)")
        p, n_bins, m = self.values.shape
        if len(self.specs) != p:
            raise ValueError(f"{len(self.specs)} bin specs for {p} features")
        if any(s.n_bins != n_bins for s in self.specs):
            raise ValueError("bin spec n_bins disagrees with shape table")
        if not np.isfinite(self.values).all():
            raise ValueError("shape values must be finite")
        if self.intercept is None:
            self.intercept = np.zeros(m, np.float32)
        self.intercept = np.asarray(self.intercept, dtype=np.float32).reshape(m)
        if self.feature_names is None:
            self.feature_names = [f"x{i}" for i in range(p)]
        if len(self.feature_names) != p:
            raise ValueError("feature_names length must equal feature count")
        self.pairs = [(int(i), int(j)) for i, j in self.pairs]
        if any(not (0 <= i < self.n_base and 0 <= j < self.n_base) for i, j in self.pairs):
            raise ValueError("pair indices must refer to base features")

    @property
    def n_features(self) -> int:
        return self.values.shape[0]

    @property
    def n_base(self) -> int:
        """Raw input width (features before pair products)."""
        return self.values.shape[0] - len(self.pairs)

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]

    @property
    def n_classes(self) -> int:
        return self.values.shape[2]

    def bin_indices(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.pairs and X.shape[1] == self.n_base:
            X = np.hstack([X, np.column_stack([X[:, i] * X[:, j] for i, j in self.pairs])])
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        if np.isnan(X).any():
            raise ValueError("NaN feature value")
        return np.column_stack([assign_bins(s, X[:, i]) for i, s in enumerate(self.specs)])

    def predict_logits(self, X) -> np.ndarray:
        """Intercept plus one table lookup per feature, for each row."""
        idx = self.bin_indices(X)
        out = np.broadcast_to(self.intercept.astype(np.float64), (len(idx), self.n_classes)).copy()
        for i in range(self.n_features):
            out += self.values[i, idx[:, i], :]
        return out

    def predict_proba(self, X) -> np.ndarray:
        return softmax_link(self.predict_logits(X))

    def term_contributions(self, X) -> np.ndarray:
        """Per-feature looked-up values, shape ``(n, p, m)``."""
        idx = self.bin_indices(X)
        return np.stack([self.values[i, idx[:, i], :] for i in range(self.n_features)], axis=1)

    def centered(self, weights=None) -> "ShapeModel":
        """Copy with each feature's table mean-centered, offsets moved to the intercept."""
        vals = self.values.astype(np.float64)
        w = np.ones(vals.shape[:2]) if weights is None else np.asarray(weights, np.float64)
        w = w / w.sum(axis=1, keepdims=True)
        means = np.einsum("pb,pbm->pm", w, vals)
        return ShapeModel(
            values=vals - means[:, None, :],
            specs=list(self.specs),
            intercept=self.intercept + means.sum(axis=0),
            provenance=self.provenance,
            feature_names=list(self.feature_names),
            pairs=list(self.pairs),
        )

    def __eq__(self, other):
        if not isinstance(other, ShapeModel):
            return NotImplemented
        return (
            np.array_equal(self.values, other.values)
            and np.array_equal(self.intercept, other.intercept)
            and self.specs == other.specs
            and self.provenance == other.provenance
            and self.feature_names == other.feature_names
            and self.pairs == other.pairs
        )


def softmax_link(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_logits(model: ShapeModel, x) -> np.ndarray:
    """Logits of a single row."""
    return model.predict_logits(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]


def predict_proba(model: ShapeModel, x) -> np.ndarray:
    return softmax_link(predict_logits(model, x))


# binary format ------------------------------------------------------------


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise FormatError("truncated file")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        size = dt.itemsize * count
        if self.pos + size > len(self.buf):
            raise FormatError("truncated file")
        out = np.frombuffer(self.buf, dtype=dt, count=count, offset=self.pos).copy()
        self.pos += size
        return out

    def string(self) -> str:
        (n,) = self.take("<I")
        if self.pos + n > len(self.buf):
            raise FormatError("truncated file")
        s = self.buf[self.pos : self.pos + n].decode("utf-8")
        self.pos += n
        return s


def shape_model_to_bytes(model: ShapeModel) -> bytes:
    p, n_bins, m = model.values.shape
    parts = [MAGIC, struct.pack("<HIII", VERSION, p, m, n_bins), _pack_str(model.provenance)]
    for name, spec in zip(model.feature_names, model.specs):
        parts.append(_pack_str(name))
        if spec.is_categorical:
            items = sorted(spec.categorical_map.items())
            parts.append(struct.pack("<BI", 1, len(items)))
            for cat, (lo, hi) in items:
                parts.append(struct.pack("<dII", cat, lo, hi))
        else:
            parts.append(struct.pack("<BI", 0, len(spec.edges)))
            parts.append(spec.edges.astype("<f8").tobytes())
    parts.append(struct.pack("<I", len(model.pairs)))
    for i, j in model.pairs:
        parts.append(struct.pack("<II", i, j))
    parts.append(model.intercept.astype("<f4").tobytes())
    parts.append(model.values.astype("<f4").tobytes())
    return b"".join(parts)


def shape_model_from_bytes(buf: bytes) -> ShapeModel:
    if buf[:4] != MAGIC:
        raise FormatError("not a shape model file (bad magic)")
    r = _Reader(buf)
    r.pos = 4
    version, p, m, n_bins = r.take("<HIII")
    if version != VERSION:
        raise FormatError(f"unsupported shape model version {version}")
    provenance = r.string()
    names, specs = [], []
    for _ in range(p):
        names.append(r.string())
        kind, count = r.take("<BI")
        if kind == 1:
            table = {}
            for _ in range(count):
                cat, lo, hi = r.take("<dII")
                table[cat] = (lo, hi)
            specs.append(BinSpec(n_bins=n_bins, categorical_map=table))
        elif kind == 0:
            specs.append(BinSpec(n_bins=n_bins, edges=r.array("<f8", count)))
        else:
            raise FormatError(f"unknown bin spec kind {kind}")
    (n_pairs,) = r.take("<I")
    pairs = [r.take("<II") for _ in range(n_pairs)]
    intercept = r.array("<f4", m)
    values = r.array("<f4", p * n_bins * m).reshape(p, n_bins, m)
    if r.pos != len(buf):
        raise FormatError("trailing bytes after shape table")
    return ShapeModel(values, specs, intercept, provenance, names, pairs)


def save_shape_model(model: ShapeModel, path) -> None:
    Path(path).write_bytes(shape_model_to_bytes(model))


def load_shape_model(path) -> ShapeModel:
    return shape_model_from_bytes(Path(path).read_bytes())


# CSV ----------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def export_shapes_csv(model: ShapeModel, path=None, center: bool = False) -> str:
    """Write one row per (feature, class, bin).

    Numeric bins carry their ``(lower, upper]`` value bounds; bins past the
    last effective one have empty bounds. Categorical bins carry the category
    id as both bounds. Leading ``# provenance=`` and ``# intercept=`` comment
    lines make the file self-contained for :func:`import_shapes_csv`.
    Returns the CSV text; writes it to ``path`` if given.
    """
    if center:
        model = model.centered()
    buf = io.StringIO()
    buf.write(f"# provenance={model.provenance}\n")
    buf.write("# intercept=" + ";".join(_fmt(v) for v in model.intercept) + "\n")
    if model.pairs:
        buf.write("# pairs=" + ";".join(f"{i}:{j}" for i, j in model.pairs) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for i, (name, spec) in enumerate(zip(model.feature_names, model.specs)):
        if spec.is_categorical:
            owner = {}
            for cat, (lo, hi) in spec.categorical_map.items():
                for b in range(lo, hi):
                    owner[b] = cat
        for c in range(model.n_classes):
            for b in range(model.n_bins):
                if spec.is_categorical:
                    lo_s = hi_s = _fmt(owner[b])
                elif b < spec.n_effective:
                    lo, hi = spec.bounds(b)
                    lo_s, hi_s = _fmt(lo), _fmt(hi)
                else:
                    lo_s = hi_s = ""
                w.writerow([name, c, b, lo_s, hi_s, _fmt(model.values[i, b, c])])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def import_shapes_csv(path_or_text) -> ShapeModel:
    text = str(path_or_text)
    if "\n" not in text:
        text = Path(path_or_text).read_text()
    lines = text.splitlines()
    provenance = "icl"
    intercept = None
    pairs = []
    while lines and lines[0].startswith("#"):
        key, _, val = lines[0][1:].strip().partition("=")
        if key == "provenance":
            provenance = val
        elif key == "intercept":
            intercept = [float(v) for v in val.split(";")]
        elif key == "pairs":
            pairs = [tuple(int(t) for t in pr.split(":")) for pr in val.split(";")]
        lines = lines[1:]
    reader = csv.reader(lines)
    if next(reader, None) != CSV_HEADER:
        raise FormatError("unexpected CSV header")
    names: list[str] = []
    rows: dict[str, dict] = {}
    for lineno, row in enumerate(reader, start=3):
        if len(row) != 6:
            raise FormatError(f"line {lineno}: expected 6 fields")
        name, c, b, lo, hi, v = row
        if name not in rows:
            names.append(name)
            rows[name] = {"vals": {}, "bounds": {}}
        rows[name]["vals"][(int(b), int(c))] = float(v)
        rows[name]["bounds"][int(b)] = (lo, hi)
    if not names:
        raise FormatError("no shape rows")
    n_bins = 1 + max(b for b, _ in rows[names[0]]["vals"])
    m = 1 + max(c for _, c in rows[names[0]]["vals"])
    values = np.zeros((len(names), n_bins, m), np.float32)
    specs = []
    for i, name in enumerate(names):
        for (b, c), v in rows[name]["vals"].items():
            values[i, b, c] = v
        bounds = rows[name]["bounds"]
        filled = [(b, lo, hi) for b, (lo, hi) in sorted(bounds.items()) if lo != ""]
        if all(lo == hi for _, lo, hi in filled):
            table: dict[float, list[int]] = {}
            for b, lo, _ in filled:
                table.setdefault(float(lo), []).append(b)
            specs.append(BinSpec(n_bins, categorical_map={k: (min(v), max(v) + 1) for k, v in table.items()}))
        else:
            edges = [float(hi) for _, _, hi in filled if not math.isinf(float(hi))]
            specs.append(BinSpec(n_bins, edges=np.array(edges)))
    icpt = None if intercept is None else np.array(intercept, np.float32)
    return ShapeModel(values, specs, icpt, provenance, names, pairs)
