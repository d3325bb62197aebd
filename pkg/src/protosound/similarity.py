"""Prototype similarity layers.

All functions accept a batch of encoder outputs ``f`` of shape (B, C, T, R)
and a stack of prototypes ``p`` of shape (K, C, T, R); unbatched (C, T, R)
operands are also accepted and the corresponding output axis is dropped.
Cosines use ``dot / (|a| |b| + EPS)`` with norms taken over the channel axis
at a fixed time-frequency bin.
"""
from __future__ import annotations

import numpy as np

from .autograd import (Variable, as_variable, einsum, max_, mean, mul, norm, reshape,
                       softmax, sum_)

EPS = 1e-8


def _batched(f, p, spatial: bool):
    f, p = as_variable(f), as_variable(p)
    base = 3 if spatial else 1
    f_single, p_single = f.ndim == base, p.ndim == base
    if f_single:
        f = reshape(f, (1,) + f.shape)
    if p_single:
        p = reshape(p, (1,) + p.shape)
    if f.shape[1:] != p.shape[1:]:
        raise ValueError(f"feature shape {f.shape[1:]} != prototype shape {p.shape[1:]}")
    return f, p, f_single, p_single


def _unbatch(out: Variable, f_single: bool, p_single: bool) -> Variable:
    shape = out.shape
    if f_single and p_single:
        return reshape(out, shape[2:])
    if f_single:
        return reshape(out, shape[1:])
    if p_single:
        return reshape(out, shape[:1] + shape[2:])
    return out


def _flatten(f: Variable, p: Variable):
    B, C, T, R = f.shape
    return reshape(f, (B, C, T * R)), reshape(p, (p.shape[0], C, T * R)), (T, R)


def sim_1d(f, p) -> Variable:
    """Cosine between vectors: (B, C) x (K, C) -> (B, K)."""
    f, p, fs, ps = _batched(f, p, spatial=False)
    dot = einsum("bc,kc->bk", f, p)
    den = mul(reshape(norm(f, -1), (-1, 1)), reshape(norm(p, -1), (1, -1))) + EPS
    return _unbatch(dot / den, fs, ps)


def sim_2ev(f, p) -> Variable:
    """Per-bin cosine between f[:, t, r] and p[:, t, r]: -> (B, K, T, R)."""
    f, p, fs, ps = _batched(f, p, spatial=True)
    ff, pf, (T, R) = _flatten(f, p)
    out = _ev_flat(ff, pf)
    return _unbatch(reshape(out, out.shape[:2] + (T, R)), fs, ps)


def _ev_flat(ff: Variable, pf: Variable) -> Variable:
    dot = einsum("bcs,kcs->bks", ff, pf)
    nf = reshape(norm(ff, 1), (ff.shape[0], 1, -1))
    npr = reshape(norm(pf, 1), (1, pf.shape[0], -1))
    return dot / (mul(nf, npr) + EPS)


def pairwise_cosine(f, p) -> Variable:
    """(B, C, S) x (K, C, U) -> (B, K, S, U) cosine between every pair of bins."""
    f, p = as_variable(f), as_variable(p)
    dot = einsum("bcs,kcu->bksu", f, p)
    nf = reshape(norm(f, 1), (f.shape[0], 1, -1, 1))
    npr = reshape(norm(p, 1), (1, p.shape[0], 1, -1))
    return dot / (mul(nf, npr) + EPS)


def sim_2av(f, p) -> Variable:
    """Cell (t, r): mean cosine of f[:, t, r] against every prototype bin."""
    f, p, fs, ps = _batched(f, p, spatial=True)
    ff, pf, (T, R) = _flatten(f, p)
    out = mean(pairwise_cosine(ff, pf), axis=-1)
    return _unbatch(reshape(out, out.shape[:2] + (T, R)), fs, ps)


def sim_2mv(f, p, return_argmax: bool = False):
    """Cell (t, r): best cosine of f[:, t, r] over prototype bins.

    With ``return_argmax`` also returns the flat index (t' * R + r') of the
    chosen prototype bin per cell, first index on ties.
    """
    f, p, fs, ps = _batched(f, p, spatial=True)
    ff, pf, (T, R) = _flatten(f, p)
    cos = pairwise_cosine(ff, pf)
    out = max_(cos, axis=-1)
    out = _unbatch(reshape(out, out.shape[:2] + (T, R)), fs, ps)
    if not return_argmax:
        return out
    idx = np.argmax(cos.data, axis=-1).reshape(cos.shape[:2] + (T, R))
    if ps:
        idx = idx[:, 0]
    if fs:
        idx = idx[0]
    return out, idx


def scalarize(sim_map) -> Variable:
    """Mean over the trailing (T, R) axes."""
    return mean(as_variable(sim_map), axis=(-2, -1))


def sim_2ea(f, p, return_attention: bool = False):
    """Attention over the element-wise cosine map, weighting per-bin inner products."""
    f, p, fs, ps = _batched(f, p, spatial=True)
    ff, pf, (T, R) = _flatten(f, p)
    attn = softmax(_ev_flat(ff, pf), axis=-1)
    inner = einsum("bcs,kcs->bks", ff, pf)
    out = _unbatch(sum_(mul(attn, inner), axis=-1), fs, ps)
    if return_attention:
        return out, _unbatch(reshape(attn, attn.shape[:2] + (T, R)), fs, ps)
    return out


def sim_2ma(f, p, return_attention: bool = False):
    """Attention over the max-cosine map; each bin is paired with its best prototype bin."""
    f, p, fs, ps = _batched(f, p, spatial=True)
    ff, pf, (T, R) = _flatten(f, p)
    cos = pairwise_cosine(ff, pf)
    attn = softmax(max_(cos, axis=-1), axis=-1)
    best = np.argmax(cos.data, axis=-1)
    onehot = np.zeros(cos.shape, dtype=cos.dtype)
    np.put_along_axis(onehot, best[..., None], 1.0, axis=-1)
    raw = einsum("bcs,kcu->bksu", ff, pf)
    inner = sum_(mul(raw, onehot), axis=-1)
    out = _unbatch(sum_(mul(attn, inner), axis=-1), fs, ps)
    if return_attention:
        return out, _unbatch(reshape(attn, attn.shape[:2] + (T, R)), fs, ps)
    return out
