# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled kernels: conv gather/scatter, fused LSTM gates, fused Adam.

Signatures and semantics mirror accentdet.kernels.npops exactly; both
float32 and float64 are supported through a fused type so the gradient
check suite can run either backend.
"""

import numpy as np

from libc.math cimport exp, sqrt, tanh

ctypedef fused real:
    float
    double


cdef inline real _sigmoid_one(real x) nogil:
    cdef real e
    if x >= 0:
        e = <real>exp(-x)
        return <real>1.0 / (<real>1.0 + e)
    e = <real>exp(x)
    return e / (<real>1.0 + e)


def im2col(real[:, :, ::1] xp, Py_ssize_t width, Py_ssize_t stride):
    cdef Py_ssize_t B = xp.shape[0], C = xp.shape[1], Lp = xp.shape[2]
    cdef Py_ssize_t Lo = (Lp - width) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_np = np.empty((B, C * width, Lo), dtype=dtype)
    cdef real[:, :, ::1] out = out_np
    cdef Py_ssize_t b, c, t, j
    with nogil:
        for b in range(B):
            for c in range(C):
                for t in range(width):
                    for j in range(Lo):
                        out[b, c * width + t, j] = xp[b, c, j * stride + t]
    return out_np


def col2im(real[:, :, ::1] dcols, Py_ssize_t Lp, Py_ssize_t width, Py_ssize_t stride):
    cdef Py_ssize_t B = dcols.shape[0], CW = dcols.shape[1], Lo = dcols.shape[2]
    cdef Py_ssize_t C = CW // width
    dtype = np.float32 if real is float else np.float64
    out_np = np.zeros((B, C, Lp), dtype=dtype)
    cdef real[:, :, ::1] out = out_np
    cdef Py_ssize_t b, c, t, j
    with nogil:
        for b in range(B):
            for c in range(C):
                for t in range(width):
                    for j in range(Lo):
                        out[b, c, j * stride + t] += dcols[b, c * width + t, j]
    return out_np


def lstm_pointwise_fwd(real[:, ::1] G, real[:, ::1] c_prev, real[:, ::1] h_prev,
                       real[:, ::1] mask):
    cdef Py_ssize_t B = G.shape[0], H = G.shape[1] // 4
    dtype = np.float32 if real is float else np.float64
    h_np = np.empty((B, H), dtype=dtype)
    c_np = np.empty((B, H), dtype=dtype)
    tc_np = np.empty((B, H), dtype=dtype)
    cdef real[:, ::1] h_new = h_np, c_new = c_np, tc_out = tc_np
    cdef Py_ssize_t b, j
    cdef real i, f, g, o, ct, tc, m, inv
    with nogil:
        for b in range(B):
            m = mask[b, 0]
            inv = <real>1.0 - m
            for j in range(H):
                i = _sigmoid_one(G[b, j])
                f = _sigmoid_one(G[b, H + j])
                g = <real>tanh(G[b, 2 * H + j])
                o = _sigmoid_one(G[b, 3 * H + j])
                G[b, j] = i
                G[b, H + j] = f
                G[b, 2 * H + j] = g
                G[b, 3 * H + j] = o
                ct = f * c_prev[b, j] + i * g
                tc = <real>tanh(ct)
                tc_out[b, j] = tc
                c_new[b, j] = m * ct + inv * c_prev[b, j]
                h_new[b, j] = m * (o * tc) + inv * h_prev[b, j]
    return h_np, c_np, tc_np


def lstm_pointwise_bwd(real[:, ::1] G, real[:, ::1] tc, real[:, ::1] c_prev,
                       real[:, ::1] mask, real[:, ::1] dh, real[:, ::1] dc):
    cdef Py_ssize_t B = G.shape[0], H = G.shape[1] // 4
    dtype = np.float32 if real is float else np.float64
    dG_np = np.empty((B, 4 * H), dtype=dtype)
    dcp_np = np.empty((B, H), dtype=dtype)
    dhp_np = np.empty((B, H), dtype=dtype)
    cdef real[:, ::1] dG = dG_np, dc_prev = dcp_np, dh_prev = dhp_np
    cdef Py_ssize_t b, j
    cdef real i, f, g, o, t, m, inv, dh_t, do, dct
    with nogil:
        for b in range(B):
            m = mask[b, 0]
            inv = <real>1.0 - m
            for j in range(H):
                i = G[b, j]
                f = G[b, H + j]
                g = G[b, 2 * H + j]
                o = G[b, 3 * H + j]
                t = tc[b, j]
                dh_t = m * dh[b, j]
                dh_prev[b, j] = inv * dh[b, j]
                do = dh_t * t
                dct = dh_t * o * (<real>1.0 - t * t) + m * dc[b, j]
                dc_prev[b, j] = dct * f + inv * dc[b, j]
                dG[b, j] = dct * g * i * (<real>1.0 - i)
                dG[b, H + j] = dct * c_prev[b, j] * f * (<real>1.0 - f)
                dG[b, 2 * H + j] = dct * i * (<real>1.0 - g * g)
                dG[b, 3 * H + j] = do * o * (<real>1.0 - o)
    return dG_np, dcp_np, dhp_np


cdef void _adam(real[::1] p, real[::1] g, real[::1] m, real[::1] v,
                double step, double lr, double b1, double b2, double eps,
                double wd) nogil:
    cdef Py_ssize_t n = p.shape[0], k
    cdef real rb1 = <real>b1
    cdef real rb2 = <real>b2
    cdef real omb1 = <real>(1.0 - b1)
    cdef real omb2 = <real>(1.0 - b2)
    cdef real rwd = <real>wd
    cdef real reps = <real>eps
    cdef real lr_eff = <real>(lr / (1.0 - b1 ** step))
    cdef real inv_bc2 = <real>(1.0 / (1.0 - b2 ** step))
    cdef real gk, mk, vk
    for k in range(n):
        gk = g[k] + rwd * p[k]
        mk = rb1 * m[k] + omb1 * gk
        vk = rb2 * v[k] + omb2 * gk * gk
        m[k] = mk
        v[k] = vk
        p[k] = p[k] - lr_eff * mk / (<real>sqrt(vk * inv_bc2) + reps)


def adam_update(p, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """Fused Adam step, in place on p/m/v (same contract as npops)."""
    pf = p.reshape(-1)
    gf = np.ascontiguousarray(grad, dtype=p.dtype).reshape(-1)
    mf = m.reshape(-1)
    vf = v.reshape(-1)
    if p.dtype == np.float32:
        _adam[float](pf, gf, mf, vf, float(step), lr, beta1, beta2, eps, weight_decay)
    elif p.dtype == np.float64:
        _adam[double](pf, gf, mf, vf, float(step), lr, beta1, beta2, eps, weight_decay)
    else:
        raise TypeError(f"unsupported dtype {p.dtype}")
