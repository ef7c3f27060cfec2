"""Forward/backward pairs for the network's building blocks (float64, batched).

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache.
"""

from __future__ import annotations

import math

import numpy as np

LN_EPS = 1e-5
GELU_C = math.sqrt(2.0 / math.pi)


def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(dy, x, w):
    """Returns (dx, dw, db)."""
    d_in, d_out = w.shape
    x2 = x.reshape(-1, d_in)
    dy2 = dy.reshape(-1, d_out)
    return dy @ w.T, x2.T @ dy2, dy2.sum(axis=0)


def layernorm_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def layernorm_backward(dy, cache):
    xhat, rstd, g = cache
    n = xhat.shape[-1]
    dg = (dy * xhat).reshape(-1, n).sum(axis=0)
    db = dy.reshape(-1, n).sum(axis=0)
    dxhat = dy * g
    dx = (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)) * rstd
    return dx, dg, db


def gelu_forward(x):
    """tanh-form GELU."""
    t = np.tanh(GELU_C * x * (1.0 + 0.044715 * x * x))
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(dy, cache):
    x, t = cache
    dt = GELU_C * (1.0 + 3 * 0.044715 * x * x) * (1.0 - t * t)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention_forward(x, wqkv, bqkv, wo, bo, n_heads):
    """Bidirectional multi-head self-attention over ``x`` of shape [B, T, d]."""
    B, T, d = x.shape
    dh = d // n_heads
    qkv, _ = linear_forward(x, wqkv, bqkv)
    qkv = qkv.reshape(B, T, 3, n_heads, dh).transpose(2, 0, 3, 1, 4)  # [3, B, H, T, dh]
    q, k, v = qkv[0], qkv[1], qkv[2]
    scale = 1.0 / math.sqrt(dh)
    att = softmax((q @ k.transpose(0, 1, 3, 2)) * scale)
    o = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
    out, _ = linear_forward(o, wo, bo)
    return out, (x, q, k, v, att, o, scale)


def attention_backward(dy, cache, wqkv, wo, n_heads):
    """Returns (dx, dwqkv, dbqkv, dwo, dbo)."""
    x, q, k, v, att, o, scale = cache
    B, T, d = x.shape
    dh = d // n_heads
    do, dwo, dbo = linear_backward(dy, o, wo)
    do = do.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)
    datt = do @ v.transpose(0, 1, 3, 2)
    dv = att.transpose(0, 1, 3, 2) @ do
    ds = att * (datt - (datt * att).sum(axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(B, T, 3 * d)
    dx, dwqkv, dbqkv = linear_backward(dqkv, x, wqkv)
    return dx, dwqkv, dbqkv, dwo, dbo


def cross_entropy(logits, labels):
    """Mean cross-entropy over all leading positions and its logit gradient."""
    z = logits.reshape(-1, logits.shape[-1])
    idx = labels.reshape(-1)
    n = idx.size
    rows = np.arange(n)
    zs = z - z.max(axis=-1, keepdims=True)
    e = np.exp(zs)
    s = e.sum(axis=-1)
    loss = float((np.log(s) - zs[rows, idx]).mean())
    grad = e / s[:, None]
    grad[rows, idx] -= 1.0
    return loss, (grad / n).reshape(logits.shape)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))
