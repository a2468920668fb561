"""Dense-array primitives used by the shape-estimation transformer.

Tensors and reverse-mode differentiation come from torch; this module pins
down the exact numerical definitions of the handful of ops the model uses
(softmax, layer norm, multi-head attention) plus an independent
central-difference gradient checker.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import torch
import torch.nn.functional as F

LN_EPS = 1e-5


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf enters a computation that forbids it."""


def _check_finite(x: torch.Tensor, name: str) -> None:
    if not torch.isfinite(x).all():
        raise NonFiniteError(f"{name} contains NaN or Inf")


def softmax(v: torch.Tensor, axis: int = -1) -> torch.Tensor:
    """Max-subtracted softmax along ``axis``."""
    _check_finite(v, "softmax input")
    shifted = v - v.amax(dim=axis, keepdim=True).detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=axis, keepdim=True)


def layer_norm(
    x: torch.Tensor,
    gain: torch.Tensor | None = None,
    bias: torch.Tensor | None = None,
    eps: float = LN_EPS,
) -> torch.Tensor:
    """Normalize the last axis to zero mean / unit (biased) variance."""
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    out = (x - mu) / torch.sqrt(var + eps)
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out


def gelu(x: torch.Tensor) -> torch.Tensor:
    return F.gelu(x)


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """``x @ weight.T + bias`` with weight stored as (out, in)."""
    out = x @ weight.transpose(0, 1)
    if bias is not None:
        out = out + bias
    return out


def multi_head_attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    n_heads: int,
    w_q: torch.Tensor,
    w_k: torch.Tensor,
    w_v: torch.Tensor,
    w_o: torch.Tensor,
    b_q: torch.Tensor | None = None,
    b_k: torch.Tensor | None = None,
    b_v: torch.Tensor | None = None,
    b_o: torch.Tensor | None = None,
    return_weights: bool = False,
):
    """Scaled dot-product attention with ``n_heads`` heads.

    Token matrices have shape ``(..., seq, dim)``; leading axes are treated as
    independent batches. Projection weights are ``(dim, dim)`` in (out, in)
    layout. No masking and no positional information is used, so the op is
    equivariant to permutations of the sequence axis.

    Returns:
        The attended tokens, same shape as ``q``; with ``return_weights`` also
        the attention weights of shape ``(..., heads, seq_q, seq_k)``.
    """
    dim = q.shape[-1]
    if k.shape[-1] != dim or v.shape[-1] != dim:
        raise ValueError("query/key/value embedding dims differ")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError("key and value sequence lengths differ")
    if dim % n_heads:
        raise ValueError(f"embedding dim {dim} not divisible by {n_heads} heads")
    head_dim = dim // n_heads

    def split(t: torch.Tensor) -> torch.Tensor:
        return t.reshape(*t.shape[:-1], n_heads, head_dim).transpose(-2, -3)

    qh = split(linear(q, w_q, b_q))
    kh = split(linear(k, w_k, b_k))
    vh = split(linear(v, w_v, b_v))
    scores = qh @ kh.transpose(-1, -2) / math.sqrt(head_dim)
    weights = softmax(scores, axis=-1)
    ctx = (weights @ vh).transpose(-2, -3)
    ctx = ctx.reshape(*ctx.shape[:-2], dim)
    out = linear(ctx, w_o, b_o)
    if return_weights:
        return out, weights
    return out


def backward(loss: torch.Tensor, leaves: Iterable[torch.Tensor]) -> list[torch.Tensor]:
    """Gradients of a scalar ``loss`` with respect to ``leaves``.

    Leaves that do not influence the loss get a zero gradient.
    """
    if loss.numel() != 1:
        raise ValueError(f"loss must be scalar, got shape {tuple(loss.shape)}")
    _check_finite(loss, "loss")
    leaves = list(leaves)
    grads = torch.autograd.grad(loss.reshape(()), leaves, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(leaves, grads)]


def finite_difference_check(
    fn: Callable[[], torch.Tensor],
    leaves: Sequence[torch.Tensor],
    n_samples: int = 50,
    h: float = 1e-3,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Max relative error between autodiff and central differences.

    ``fn`` recomputes the scalar loss from the current values of ``leaves``.
    ``n_samples`` scalar coordinates are drawn uniformly from all leaves; each
    is perturbed by ``±h`` in place and restored afterwards. Relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    analytic = backward(fn(), leaves)
    sizes = [p.numel() for p in leaves]
    total = sum(sizes)
    gen = torch.Generator().manual_seed(seed)
    picks = torch.randperm(total, generator=gen)[: min(n_samples, total)].tolist()
    offsets = [0]
    for s in sizes:
        offsets.append(offsets[-1] + s)

    worst = 0.0
    with torch.no_grad():
        for flat in picks:
            li = next(i for i in range(len(leaves)) if offsets[i] <= flat < offsets[i + 1])
            idx = flat - offsets[li]
            view = leaves[li].view(-1)
            orig = view[idx].item()
            view[idx] = orig + h
            up = fn().item()
            view[idx] = orig - h
            down = fn().item()
            view[idx] = orig
            numeric = (up - down) / (2 * h)
            a = analytic[li].reshape(-1)[idx].item()
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
