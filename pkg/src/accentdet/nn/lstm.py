"""Bidirectional LSTM with fused, mask-aware backpropagation through time.

The whole layer is a single tape node: the forward loop caches activated
gates and runs the recurrence with the kernel backend's fused gate math;
the backward closure replays the loop in reverse. Padding is handled by a
{0,1} mask that freezes h/c at padded steps, which makes the reverse
direction start cleanly from each sequence's true last token.

Cell equations are the standard ones: input/forget/output gates and cell
candidate with sigmoid/tanh nonlinearities,
    c_t = f*c_{t-1} + i*g,   h_t = o*tanh(c_t),
and the output at t of the bidirectional layer concatenates the forward
state at t with the backward state at t.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import kernels
from .ops import concat
from .tensor import Tensor, op_node


def lstm_layer(x: Tensor, mask: np.ndarray, Wx: Tensor, Wh: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """One direction of one LSTM layer.

    x: [B, T, D]; mask: [B, T] with 1 at real steps; Wx: [D, 4H];
    Wh: [H, 4H]; b: [4H]. Returns hidden states [B, T, H].
    """
    B, T, D = x.data.shape
    H = Wh.data.shape[0]
    dtype = x.data.dtype
    mask = np.asarray(mask, dtype=dtype)

    # all input projections in one BLAS call
    xw = x.data.reshape(B * T, D) @ Wx.data + b.data
    xw = xw.reshape(B, T, 4 * H)

    order = range(T - 1, -1, -1) if reverse else range(T)
    order = list(order)

    acts = np.empty((T, B, 4 * H), dtype=dtype)  # activated gates per step
    tcs = np.empty((T, B, H), dtype=dtype)  # tanh(c_tilde) per step
    hs = np.empty((T, B, H), dtype=dtype)  # post-mask h per step
    cs = np.empty((T, B, H), dtype=dtype)  # post-mask c per step

    h = np.zeros((B, H), dtype=dtype)
    c = np.zeros((B, H), dtype=dtype)
    y = np.empty((B, T, H), dtype=dtype)
    for p, t in enumerate(order):
        G = np.ascontiguousarray(xw[:, t, :] + h @ Wh.data)
        m = np.ascontiguousarray(mask[:, t : t + 1])
        h, c, tc = kernels.lstm_pointwise_fwd(G, c, h, m)
        acts[p] = G
        tcs[p] = tc
        hs[p] = h
        cs[p] = c
        y[:, t, :] = h

    out = op_node(y, (x, Wx, Wh, b), "lstm")
    if out.requires_grad:
        zeros = np.zeros((B, H), dtype=dtype)

        def _bwd():
            dY = out.grad  # [B, T, H]
            dXW = np.empty((B, T, 4 * H), dtype=dtype)
            dWh = np.zeros_like(Wh.data)
            WhT = Wh.data.T
            dh_carry = np.zeros((B, H), dtype=dtype)
            dc_carry = np.zeros((B, H), dtype=dtype)
            for p in range(T - 1, -1, -1):
                t = order[p]
                m = mask[:, t : t + 1]
                c_prev = cs[p - 1] if p > 0 else zeros
                h_prev = hs[p - 1] if p > 0 else zeros
                dh = dY[:, t, :] + dh_carry
                dG, dc_carry, dh_mask = kernels.lstm_pointwise_bwd(
                    acts[p], tcs[p], np.ascontiguousarray(c_prev),
                    np.ascontiguousarray(m), np.ascontiguousarray(dh),
                    np.ascontiguousarray(dc_carry),
                )
                dXW[:, t, :] = dG
                if Wh.requires_grad:
                    dWh += h_prev.T @ dG
                dh_carry = dh_mask + dG @ WhT
            dXW2 = dXW.reshape(B * T, 4 * H)
            if x.requires_grad:
                x.accumulate_grad((dXW2 @ Wx.data.T).reshape(B, T, D))
            if Wx.requires_grad:
                Wx.accumulate_grad(x.data.reshape(B * T, D).T @ dXW2)
            if Wh.requires_grad:
                Wh.accumulate_grad(dWh)
            if b.requires_grad:
                b.accumulate_grad(dXW2.sum(axis=0))

        out._backward = _bwd
    return out


def bilstm(x: Tensor, mask: np.ndarray, layers: Sequence[dict]) -> Tensor:
    """Stacked bidirectional LSTM.

    `layers` holds one dict per layer with keys fwd_Wx, fwd_Wh, fwd_b,
    bwd_Wx, bwd_Wh, bwd_b. Layer l consumes the concatenated [B, T, 2H]
    output of layer l-1. Returns [B, T, 2H].
    """
    h = x
    for prm in layers:
        f = lstm_layer(h, mask, prm["fwd_Wx"], prm["fwd_Wh"], prm["fwd_b"], reverse=False)
        r = lstm_layer(h, mask, prm["bwd_Wx"], prm["bwd_Wh"], prm["bwd_b"], reverse=True)
        h = concat([f, r], axis=2)
    return h
