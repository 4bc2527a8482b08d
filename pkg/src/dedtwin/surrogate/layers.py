"""Numpy layer primitives with explicit backward passes.

Gate layout for LSTM weights is ``[i, f, o, g]`` along the last axis;
weights act on the concatenation ``[x_t, h_{t-1}]``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError, ShapeError


def sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_cell_forward(x_t, h_prev, c_prev, W, b):
    """One LSTM step.

    ``x_t`` (..., D), ``h_prev``/``c_prev`` (..., H), ``W`` (D+H, 4H),
    ``b`` (4H,).  Returns ``(h_t, c_t)``.
    """
    x_t = np.asarray(x_t, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    c_prev = np.asarray(c_prev, dtype=float)
    H = h_prev.shape[-1]
    if W.shape != (x_t.shape[-1] + H, 4 * H) or b.shape != (4 * H,) or c_prev.shape != h_prev.shape:
        raise ShapeError(
            f"LSTM shapes disagree: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape}, "
            f"W {W.shape}, b {b.shape}"
        )
    z = np.concatenate([x_t, h_prev], axis=-1) @ W + b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    o = sigmoid(z[..., 2 * H : 3 * H])
    g = np.tanh(z[..., 3 * H :])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


def lstm_layer_forward(X, W, b):
    """Run an LSTM over ``X`` (B, L, D) from zero state; returns (Hseq, cache)."""
    B, L, D = X.shape
    H = b.shape[0] // 4
    if W.shape != (D + H, 4 * H):
        raise ShapeError(f"LSTM weight {W.shape} does not fit input width {D} and hidden {H}")
    Wx, Wh = W[:D], W[D:]
    zx = X @ Wx + b
    hs = np.zeros((B, L + 1, H))
    cs = np.zeros((B, L + 1, H))
    gates = np.empty((B, L, 4 * H))
    for t in range(L):
        z = zx[:, t] + hs[:, t] @ Wh
        ifo = sigmoid(z[:, : 3 * H])
        g = np.tanh(z[:, 3 * H :])
        c = ifo[:, H : 2 * H] * cs[:, t] + ifo[:, :H] * g
        cs[:, t + 1] = c
        hs[:, t + 1] = ifo[:, 2 * H :] * np.tanh(c)
        gates[:, t, : 3 * H] = ifo
        gates[:, t, 3 * H :] = g
    return hs[:, 1:], (X, W, hs, cs, gates)


def lstm_layer_backward(dHseq, cache):
    """Backprop through time.  Returns (dX, dW, db)."""
    X, W, hs, cs, gates = cache
    B, L, D = X.shape
    H = hs.shape[-1]
    Wh = W[D:]
    dz_all = np.empty((B, L, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in reversed(range(L)):
        i = gates[:, t, :H]
        f = gates[:, t, H : 2 * H]
        o = gates[:, t, 2 * H : 3 * H]
        g = gates[:, t, 3 * H :]
        tc = np.tanh(cs[:, t + 1])
        dh = dHseq[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dz_all[:, t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * cs[:, t] * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H :] = dc * i * (1.0 - g * g)
        dh_next = dz @ Wh.T
        dc_next = dc * f
    flat_dz = dz_all.reshape(B * L, 4 * H)
    inp = np.concatenate([X, hs[:, :-1]], axis=-1).reshape(B * L, D + H)
    dW = inp.T @ flat_dz
    db = flat_dz.sum(0)
    dX = dz_all @ W[:D].T
    return dX, dW, db


def softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def attention_pool(Hs, Wk, Wv, bv, q):
    """Single-query scaled dot-product attention over time.

    Keys carry no bias: with one query it would shift every score equally
    and cancel in the softmax.

    ``Hs`` (B, L, H) or (L, H).  Returns ``(context, weights, cache)`` with
    context (B, V) and weights (B, L); unbatched input drops the B axis.
    """
    Hs = np.asarray(Hs, dtype=float)
    single = Hs.ndim == 2
    if single:
        Hs = Hs[None]
    if Hs.shape[1] < 1:
        raise ParameterError("attention needs at least one time step")
    K = Hs @ Wk
    V = Hs @ Wv + bv
    scale = 1.0 / np.sqrt(Wk.shape[1])
    a = softmax((K @ q) * scale, axis=1)
    ctx = np.einsum("bl,blv->bv", a, V)
    cache = (Hs, Wk, Wv, q, K, V, a, scale)
    if single:
        return ctx[0], a[0], cache
    return ctx, a, cache


def attention_backward(dctx, cache):
    """Returns (dHs, dWk, dWv, dbv, dq)."""
    Hs, Wk, Wv, q, K, V, a, scale = cache
    dV = a[:, :, None] * dctx[:, None, :]
    da = np.einsum("blv,bv->bl", V, dctx)
    ds = a * (da - (a * da).sum(1, keepdims=True))
    dK = ds[:, :, None] * q[None, None, :] * scale
    dq = np.einsum("bl,bla->a", ds, K) * scale
    B, L, H = Hs.shape
    Hf = Hs.reshape(B * L, H)
    dWk = Hf.T @ dK.reshape(B * L, -1)
    dWv = Hf.T @ dV.reshape(B * L, -1)
    dbv = dV.sum((0, 1))
    dHs = dK @ Wk.T + dV @ Wv.T
    return dHs, dWk, dWv, dbv, dq
