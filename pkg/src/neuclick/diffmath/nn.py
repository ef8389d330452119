"""Layers built on the primitives: GRU cell, attention, encoder, losses.

Parameters live in flat ``dict[str, Tensor]`` stores keyed by dotted names;
``init_*`` helpers populate a store under a prefix and the matching forward
function reads from it.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import ConfigurationError, DimensionError, EmptyBatchError
from . import ops
from .rng import Rng
from .tensor import Tensor, as_tensor, parameter

Params = dict[str, Tensor]

BCE_EPS = 1e-7


# -- initialisation ------------------------------------------------------------


def init_linear(params: Params, prefix: str, d_in: int, d_out: int, rng: Rng, bias: bool = True) -> None:
    bound = np.sqrt(6.0 / (d_in + d_out))
    params[f"{prefix}.weight"] = parameter(rng.uniform(-bound, bound, (d_in, d_out)), f"{prefix}.weight")
    if bias:
        params[f"{prefix}.bias"] = parameter(np.zeros(d_out), f"{prefix}.bias")


def linear(x, params: Params, prefix: str) -> Tensor:
    out = ops.matmul(x, params[f"{prefix}.weight"])
    b = params.get(f"{prefix}.bias")
    return out if b is None else ops.add(out, b)


def init_gru(params: Params, prefix: str, d_in: int, d_h: int, rng: Rng) -> None:
    """Gate blocks are packed ``[reset | update | candidate]`` along the last axis."""
    bound = 1.0 / np.sqrt(d_h)
    params[f"{prefix}.w_ih"] = parameter(rng.uniform(-bound, bound, (d_in, 3 * d_h)), f"{prefix}.w_ih")
    params[f"{prefix}.w_hh"] = parameter(rng.uniform(-bound, bound, (d_h, 3 * d_h)), f"{prefix}.w_hh")
    params[f"{prefix}.b_ih"] = parameter(rng.uniform(-bound, bound, 3 * d_h), f"{prefix}.b_ih")
    params[f"{prefix}.b_hh"] = parameter(rng.uniform(-bound, bound, 3 * d_h), f"{prefix}.b_hh")


def init_layer_norm(params: Params, prefix: str, d: int) -> None:
    params[f"{prefix}.gamma"] = parameter(np.ones(d), f"{prefix}.gamma")
    params[f"{prefix}.beta"] = parameter(np.zeros(d), f"{prefix}.beta")


def init_attention(params: Params, prefix: str, d: int, rng: Rng) -> None:
    for name in ("q", "k", "v", "o"):
        init_linear(params, f"{prefix}.{name}", d, d, rng)


def init_encoder(params: Params, prefix: str, d: int, n_layers: int, d_ff: int, rng: Rng) -> None:
    for i in range(n_layers):
        p = f"{prefix}.{i}"
        init_attention(params, f"{p}.attn", d, rng)
        init_layer_norm(params, f"{p}.ln1", d)
        init_linear(params, f"{p}.ff1", d, d_ff, rng)
        init_linear(params, f"{p}.ff2", d_ff, d, rng)
        init_layer_norm(params, f"{p}.ln2", d)


# -- recurrent -----------------------------------------------------------------


def gru_cell(x, h, params: Params, prefix: str = "gru") -> Tensor:
    """One GRU step, fused into a single graph node.

    r = s(x W_ir + b_ir + h W_hr + b_hr)
    z = s(x W_iz + b_iz + h W_hz + b_hz)
    n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
    h' = (1 - z) * n + z * h
    """
    x, h = as_tensor(x), as_tensor(h)
    w_ih, w_hh = params[f"{prefix}.w_ih"], params[f"{prefix}.w_hh"]
    b_ih, b_hh = params[f"{prefix}.b_ih"], params[f"{prefix}.b_hh"]
    d_h = h.shape[-1]
    if x.ndim != 2 or h.ndim != 2:
        raise DimensionError(f"gru_cell expects 2-d x and h, got {x.shape} and {h.shape}")
    if x.shape[0] != h.shape[0]:
        raise DimensionError(f"gru_cell batch axis (axis 0) mismatch: x {x.shape[0]} vs h {h.shape[0]}")
    if w_ih.shape[0] != x.shape[1]:
        raise DimensionError(f"gru_cell input axis (axis 1) mismatch: x has {x.shape[1]}, weights expect {w_ih.shape[0]}")
    if w_hh.shape != (d_h, 3 * d_h):
        raise DimensionError(f"gru_cell hidden axis (axis 1) mismatch: h has {d_h}, weights are {w_hh.shape}")

    gi = x.data @ w_ih.data + b_ih.data
    gh = h.data @ w_hh.data + b_hh.data
    r = expit(gi[:, :d_h] + gh[:, :d_h])
    z = expit(gi[:, d_h:2 * d_h] + gh[:, d_h:2 * d_h])
    ghn = gh[:, 2 * d_h:]
    n = np.tanh(gi[:, 2 * d_h:] + r * ghn)
    out = (1.0 - z) * n + z * h.data

    def backward(g):
        dn = g * (1.0 - z)
        dz = g * (h.data - n)
        dn_pre = dn * (1.0 - n * n)
        dr_pre = dn_pre * ghn * r * (1.0 - r)
        dz_pre = dz * z * (1.0 - z)
        dgi = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
        dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
        dx = dgi @ w_ih.data.T
        dh = g * z + dgh @ w_hh.data.T
        return dx, dh, x.data.T @ dgi, h.data.T @ dgh, dgi.sum(0), dgh.sum(0)

    return Tensor._make(out, (x, h, w_ih, w_hh, b_ih, b_hh), backward, "gru_cell")


# -- attention -----------------------------------------------------------------


def multi_head_attention(q, k, v, mask, heads: int, params: Params | None = None, prefix: str = "attn") -> Tensor:
    """Scaled dot-product attention over ``heads`` heads.

    ``q``, ``k``, ``v`` are ``[batch, len, d]``.  ``mask[..., i, j]`` false
    forbids query ``i`` attending to key ``j``; it may be ``[len, len]`` or
    ``[batch, len, len]``.  Without ``params`` the projections are identities.
    Query rows whose mask is entirely false return zeros.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    if d % heads:
        raise ConfigurationError(f"model width {d} is not divisible by {heads} heads")
    if k.shape != v.shape or k.shape[0] != q.shape[0] or k.shape[-1] != d:
        raise DimensionError(f"attention shapes disagree: q {q.shape}, k {k.shape}, v {v.shape}")
    b, lq, lk = q.shape[0], q.shape[1], k.shape[1]
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[-2:] != (lq, lk):
        raise DimensionError(f"attention mask trailing axes {mask.shape[-2:]} != ({lq}, {lk})")
    if params is not None:
        q = linear(q, params, f"{prefix}.q")
        k = linear(k, params, f"{prefix}.k")
        v = linear(v, params, f"{prefix}.v")
    dh = d // heads

    def split(t, n):
        return ops.transpose(ops.reshape(t, (b, n, heads, dh)), (0, 2, 1, 3))

    qh, kh, vh = split(q, lq), split(k, lk), split(v, lk)
    scores = ops.mul(ops.matmul(qh, ops.transpose(kh, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    head_mask = mask[:, None] if mask.ndim == 3 else mask
    attn = ops.masked_softmax(scores, head_mask, axis=-1)
    out = ops.reshape(ops.transpose(ops.matmul(attn, vh), (0, 2, 1, 3)), (b, lq, d))
    if params is not None:
        out = linear(out, params, f"{prefix}.o")
    live = np.broadcast_to(mask.any(axis=-1), (b, lq))
    if not live.all():
        out = ops.mul(out, live[..., None].astype(np.float64))
    return out


def encoder(x, mask, params: Params, prefix: str, n_layers: int, heads: int,
            dropout: float = 0.0, rng: Rng | None = None, train: bool = False) -> Tensor:
    """Post-norm Transformer encoder stack."""
    for i in range(n_layers):
        p = f"{prefix}.{i}"
        a = multi_head_attention(x, x, x, mask, heads, params, f"{p}.attn")
        x = ops.layer_norm(ops.add(x, ops.dropout(a, dropout, rng, train)),
                           params[f"{p}.ln1.gamma"], params[f"{p}.ln1.beta"])
        f = linear(ops.gelu(linear(x, params, f"{p}.ff1")), params, f"{p}.ff2")
        x = ops.layer_norm(ops.add(x, ops.dropout(f, dropout, rng, train)),
                           params[f"{p}.ln2.gamma"], params[f"{p}.ln2.beta"])
    return x


# -- discrete reparametrisation ------------------------------------------------


def gumbel_sigmoid(logit, temperature: float, rng: Rng) -> tuple[Tensor, Tensor]:
    """Relaxed Bernoulli sample with a straight-through hard companion.

    soft = sigmoid((logit + g1 - g2) / temperature), g ~ Gumbel(0, 1);
    hard = 1[soft > 0.5] in the forward pass, with soft's gradient.
    The difference of two Gumbels is logistic, so P(hard = 1) = sigmoid(logit).
    """
    if not temperature > 0:
        raise ConfigurationError(f"Gumbel temperature must be positive, got {temperature}")
    logit = as_tensor(logit)
    noise = rng.gumbel(logit.shape) - rng.gumbel(logit.shape)
    soft = ops.sigmoid(ops.mul(ops.add(logit, noise), 1.0 / temperature))
    hard = ops.straight_through((soft.data > 0.5).astype(np.float64), soft)
    return soft, hard


# -- losses --------------------------------------------------------------------


def binary_cross_entropy(p, y, mask=None) -> Tensor:
    """Mean BCE over unmasked positions, probabilities clamped to [1e-7, 1 - 1e-7]."""
    p = as_tensor(p)
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if y.shape != p.shape:
        raise DimensionError(f"BCE: probabilities {p.shape} vs labels {y.shape}")
    m = np.ones(p.shape, bool) if mask is None else np.broadcast_to(np.asarray(mask, bool), p.shape)
    count = int(m.sum())
    if count == 0:
        raise EmptyBatchError("binary_cross_entropy over an all-masked batch")
    pc = ops.clamp(p, BCE_EPS, 1.0 - BCE_EPS)
    w = m.astype(np.float64) / count
    ll = ops.add(ops.mul(ops.log(pc), y * w), ops.mul(ops.log(ops.sub(1.0, pc)), (1.0 - y) * w))
    return ops.neg(ops.sum(ll))


def bce_with_logits(logit, y, mask=None) -> Tensor:
    """Same loss as :func:`binary_cross_entropy` but from logits."""
    return binary_cross_entropy(ops.sigmoid(logit), y, mask)
