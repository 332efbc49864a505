"""Numpy implementations of the training hot-spot kernels.

These are the reference kernels; `accentdet.kernels._fastops` provides
compiled equivalents with identical signatures and semantics. Everything
here operates on plain C-contiguous float32/float64 arrays, never on
autodiff tensors.
"""

import numpy as np


def im2col(xp: np.ndarray, width: int, stride: int) -> np.ndarray:
    """Gather sliding windows of a padded signal batch.

    xp: [B, C, Lp] padded input. Returns cols [B, C*width, Lo] with
    cols[b, c*width + t, j] = xp[b, c, j*stride + t].
    """
    B, C, Lp = xp.shape
    Lo = (Lp - width) // stride + 1
    s0, s1, s2 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(B, C, width, Lo), strides=(s0, s1, s2, s2 * stride)
    )
    return np.ascontiguousarray(view).reshape(B, C * width, Lo)


def col2im(dcols: np.ndarray, Lp: int, width: int, stride: int) -> np.ndarray:
    """Scatter-add of window gradients back onto the padded signal.

    Inverse-adjoint of im2col: dcols [B, C*width, Lo] -> dxp [B, C, Lp].
    """
    B, CW, Lo = dcols.shape
    C = CW // width
    d4 = dcols.reshape(B, C, width, Lo)
    dxp = np.zeros((B, C, Lp), dtype=dcols.dtype)
    for t in range(width):
        dxp[:, :, t : t + stride * Lo : stride] += d4[:, :, t, :]
    return dxp


def _sigmoid(x):
    # evaluated in two branches to stay overflow-free in float32
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_pointwise_fwd(G, c_prev, h_prev, mask):
    """Fused LSTM gate math for one timestep.

    G: [B, 4H] pre-activation gates laid out (input, forget, cell, output);
    activated in place. mask: [B, 1] with 1 for real steps, 0 for padding,
    which holds state at padded steps. Returns (h_new, c_new, tanh_c) where
    tanh_c is kept for the backward pass.
    """
    H = G.shape[1] // 4
    i = _sigmoid(G[:, :H])
    f = _sigmoid(G[:, H : 2 * H])
    g = np.tanh(G[:, 2 * H : 3 * H])
    o = _sigmoid(G[:, 3 * H :])
    G[:, :H] = i
    G[:, H : 2 * H] = f
    G[:, 2 * H : 3 * H] = g
    G[:, 3 * H :] = o
    c_tilde = f * c_prev + i * g
    tc = np.tanh(c_tilde)
    h_tilde = o * tc
    inv = 1.0 - mask
    c_new = mask * c_tilde + inv * c_prev
    h_new = mask * h_tilde + inv * h_prev
    return h_new, c_new, tc


def lstm_pointwise_bwd(G, tc, c_prev, mask, dh, dc):
    """Backward of lstm_pointwise_fwd.

    G holds the *activated* gates from the forward pass. dh/dc are the
    gradients flowing into h_new/c_new. Returns (dG, dc_prev, dh_prev)
    where dh_prev is only the mask-passthrough part; the recurrent
    matmul contribution is added by the caller.
    """
    H = G.shape[1] // 4
    i = G[:, :H]
    f = G[:, H : 2 * H]
    g = G[:, 2 * H : 3 * H]
    o = G[:, 3 * H :]
    inv = 1.0 - mask
    dh_t = mask * dh
    dh_prev = inv * dh
    do = dh_t * tc
    dct = dh_t * o * (1.0 - tc * tc) + mask * dc
    dc_prev = dct * f + inv * dc
    dG = np.empty_like(G)
    dG[:, :H] = dct * g * i * (1.0 - i)
    dG[:, H : 2 * H] = dct * c_prev * f * (1.0 - f)
    dG[:, 2 * H : 3 * H] = dct * i * (1.0 - g * g)
    dG[:, 3 * H :] = do * o * (1.0 - o)
    return dG, dc_prev, dh_prev


def adam_update(p, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """One fused Adam step, in place on p/m/v.

    L2 term is folded into the gradient before the moment updates
    (grad' = grad + wd*p), then bias-corrected moments drive the update.
    """
    if weight_decay != 0.0:
        grad = grad + weight_decay * p
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    denom = np.sqrt(v / bc2)
    denom += eps
    p -= (lr / bc1) * m / denom
