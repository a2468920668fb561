"""Transformer mapping a labelled context to binned shape functions.

Pipeline: one-hot bins -> affine embedding + label embedding -> L layers of
(attention across features, attention across rows, feedforward) -> per-class
mean over rows -> shared decoder MLP -> ``(p, n_bins, m)`` shape table.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from . import numkernel as nk
from .binning import BinnedMatrix, bin_matrix, fit_specs
from .shapes import ShapeModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    n_bins: int = 16
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    max_classes: int = 4
    ff_mult: int = 4
    decoder_hidden: int | None = None
    max_features: int = 4

    def to_dict(self) -> dict:
        return asdict(self)


class Attention(nn.Module):
    def __init__(self, d: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        scale = 1.0 / math.sqrt(d)
        for name in ("q", "k", "v", "o"):
            self.register_parameter(f"w_{name}", nn.Parameter(torch.randn(d, d) * scale))
            self.register_parameter(f"b_{name}", nn.Parameter(torch.zeros(d)))

    def forward(self, x):
        return nk.multi_head_attention(
            x, x, x, self.n_heads,
            self.w_q, self.w_k, self.w_v, self.w_o,
            self.b_q, self.b_k, self.b_v, self.b_o,
        )


class Norm(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(d))
        self.bias = nn.Parameter(torch.zeros(d))

    def forward(self, x):
        return nk.layer_norm(x, self.gain, self.bias)


class MLP(nn.Module):
    def __init__(self, d_in: int, d_hidden: int, d_out: int):
        super().__init__()
        self.w1 = nn.Parameter(torch.randn(d_hidden, d_in) * math.sqrt(2.0 / d_in))
        self.b1 = nn.Parameter(torch.zeros(d_hidden))
        self.w2 = nn.Parameter(torch.randn(d_out, d_hidden) / math.sqrt(d_hidden))
        self.b2 = nn.Parameter(torch.zeros(d_out))

    def forward(self, x):
        return nk.linear(nk.gelu(nk.linear(x, self.w1, self.b1)), self.w2, self.b2)


class Layer(nn.Module):
    """Pre-norm residual block: feature attention, row attention, feedforward."""

    def __init__(self, d: int, n_heads: int, ff_mult: int):
        super().__init__()
        self.norm_feat = Norm(d)
        self.attn_feat = Attention(d, n_heads)
        self.norm_row = Norm(d)
        self.attn_row = Attention(d, n_heads)
        self.norm_ff = Norm(d)
        self.ff = MLP(d, ff_mult * d, d)
        with torch.no_grad():
            # small residual branches keep the untrained stack near identity
            for w in (self.attn_feat.w_o, self.attn_row.w_o, self.ff.w2):
                w.mul_(0.5)

    def forward(self, h):
        # h: (n, p, d); tokens along p for feature attention
        h = h + self.attn_feat(self.norm_feat(h))
        ht = h.transpose(0, 1)  # (p, n, d): tokens along rows
        ht = ht + self.attn_row(self.norm_row(ht))
        h = ht.transpose(0, 1)
        return h + self.ff(self.norm_ff(h))


class GAMformerNet(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        d = config.d_model
        self.embed_w = nn.Parameter(torch.randn(d, config.n_bins) * 0.5)
        self.embed_b = nn.Parameter(torch.zeros(d))
        # last row reserved for "no label"
        self.label_table = nn.Parameter(torch.randn(config.max_classes + 1, d) * 0.5)
        self.layers = nn.ModuleList(
            [Layer(d, config.n_heads, config.ff_mult) for _ in range(config.n_layers)]
        )
        self.final_norm = Norm(d)
        self.decoder = MLP(d, config.decoder_hidden or d, config.n_bins)
        with torch.no_grad():
            self.decoder.w2.mul_(0.1)

    # the stages are exposed individually so they can be checked in isolation

    def embed_tokens(self, indices: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        """Cell ``(r, i)`` = affine(one_hot(bin[r, i])) + label_table[y_r]."""
        if labels.numel() and int(labels.max()) >= self.config.max_classes:
            raise ValueError(f"label {int(labels.max())} >= max_classes {self.config.max_classes}")
        onehot = torch.nn.functional.one_hot(indices, self.config.n_bins).to(self.embed_w.dtype)
        tokens = nk.linear(onehot, self.embed_w, self.embed_b)
        return tokens + self.label_table[labels][:, None, :]

    def encode(self, tokens: torch.Tensor) -> torch.Tensor:
        h = tokens
        for layer in self.layers:
            h = layer(h)
        return self.final_norm(h)

    def decode_shapes(self, pooled: torch.Tensor) -> torch.Tensor:
        """Shared decoder over ``(p, m, d)`` pooled vectors -> ``(p, n_bins, m)``."""
        return self.decoder(pooled).transpose(1, 2)

    def forward(self, indices: torch.Tensor, labels: torch.Tensor, m: int) -> torch.Tensor:
        h = self.encode(self.embed_tokens(indices, labels))
        return self.decode_shapes(pool_classes(h, labels, m))


def pool_classes(h: torch.Tensor, labels: torch.Tensor, m: int) -> torch.Tensor:
    """Per-class mean over rows: ``(n, p, d)`` -> ``(p, m, d)``.

    A class with no rows gets a zero vector and a logged warning.
    """
    onehot = torch.nn.functional.one_hot(labels, m).to(h.dtype)  # (n, m)
    counts = onehot.sum(0)
    if (counts == 0).any():
        log.warning("classes %s have no context rows; pooling to zero", torch.nonzero(counts == 0).flatten().tolist())
    weights = onehot / counts.clamp(min=1.0)
    return torch.einsum("nm,npd->pmd", weights, h)


def prepare_context(X_train, y_train, n_bins: int, categorical_mask=None) -> BinnedMatrix:
    specs = fit_specs(X_train, n_bins, categorical_mask)
    return bin_matrix(X_train, specs)


def estimate_shapes(
    net: GAMformerNet,
    X_train,
    y_train,
    m: int | None = None,
    categorical_mask=None,
    feature_names=None,
) -> ShapeModel:
    """Fit bins on the context, run one forward pass, package a ShapeModel."""
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    m = int(y_train.max()) + 1 if m is None else m
    if len(y_train) < m:
        raise ValueError("context needs at least one row per class")
    binned = prepare_context(X_train, y_train, net.config.n_bins, categorical_mask)
    dtype = next(net.parameters()).dtype
    with torch.no_grad():
        f = net(torch.from_numpy(binned.indices), torch.from_numpy(y_train), m)
    values = f.to(dtype).cpu().numpy()
    return ShapeModel(values, list(binned.specs), provenance="icl", feature_names=feature_names)
