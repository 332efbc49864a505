"""Differentiable operations for the pitch-accent model family.

Each op computes its forward value with numpy (convolution gather/scatter
and other hot spots go through accentdet.kernels) and attaches a backward
closure to the output node. Shapes follow the conventions used by the
models: signals are [B, C, L], token sequences [B, T, D], logits [T, 2].
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .. import kernels
from .tensor import Tensor, op_node


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out = op_node(a.data + b.data, (a, b), "add")
    if out.requires_grad:

        def _bwd():
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(out.grad, b.data.shape))

        out._backward = _bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = op_node(a.data * b.data, (a, b), "mul")
    if out.requires_grad:

        def _bwd():
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(out.grad * b.data, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(out.grad * a.data, b.data.shape))

        out._backward = _bwd
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = op_node(a.data * s, (a,), "scale")
    if out.requires_grad:

        def _bwd():
            a.accumulate_grad(out.grad * s)

        out._backward = _bwd
    return out


def relu(x: Tensor) -> Tensor:
    out = op_node(np.maximum(x.data, 0), (x,), "relu")
    if out.requires_grad:

        def _bwd():
            x.accumulate_grad(out.grad * (x.data > 0))

        out._backward = _bwd
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = op_node(y, (x,), "tanh")
    if out.requires_grad:

        def _bwd():
            x.accumulate_grad(out.grad * (1.0 - y * y))

        out._backward = _bwd
    return out


def sigmoid(x: Tensor) -> Tensor:
    from ..kernels.npops import _sigmoid

    y = _sigmoid(np.asarray(x.data))
    out = op_node(y, (x,), "sigmoid")
    if out.requires_grad:

        def _bwd():
            x.accumulate_grad(out.grad * y * (1.0 - y))

        out._backward = _bwd
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a [..., D] @ b [D, O]; b is 2-D (a weight matrix)."""
    out = op_node(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:

        def _bwd():
            g = out.grad
            if a.requires_grad:
                a.accumulate_grad(g @ b.data.T)
            if b.requires_grad:
                ga = a.data.reshape(-1, a.data.shape[-1])
                gg = g.reshape(-1, g.shape[-1])
                b.accumulate_grad(ga.T @ gg)

        out._backward = _bwd
    return out


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x [..., D] @ w [D, O] + b [O]."""
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    data = np.concatenate([p.data for p in parts], axis=axis)
    out = op_node(data, tuple(parts), "concat")
    if out.requires_grad:
        sizes = [p.data.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]

        def _bwd():
            pieces = np.split(out.grad, splits, axis=axis)
            for p, g in zip(parts, pieces):
                if p.requires_grad:
                    p.accumulate_grad(g)

        out._backward = _bwd
    return out


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: eval mode is the identity, training preserves E[x]."""
    if not training or p <= 0.0:
        return x
    keep = 1.0 - p
    mask = (rng.random(x.data.shape) < keep).astype(x.data.dtype) / keep
    out = op_node(x.data * mask, (x,), "dropout")
    if out.requires_grad:

        def _bwd():
            x.accumulate_grad(out.grad * mask)

        out._backward = _bwd
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup into a trainable [V, E] matrix."""
    ids = np.asarray(ids)
    if ids.size and ids.max() >= table.data.shape[0]:
        raise IndexError(
            f"token id {int(ids.max())} out of range for vocabulary of {table.data.shape[0]}"
        )
    out = op_node(table.data[ids], (table,), "embedding")
    if out.requires_grad:

        def _bwd():
            g = np.zeros_like(table.data)
            np.add.at(g, ids, out.grad)
            table.accumulate_grad(g)

        out._backward = _bwd
    return out


def conv1d(x: Tensor, w: Tensor, b: Optional[Tensor], stride: int, padding: int) -> Tensor:
    """Cross-correlation of x [B, C, L] with kernels w [O, C, W].

    Output length L' = floor((L + 2*padding - W)/stride) + 1.
    """
    B, C, L = x.data.shape
    O, C2, W = w.data.shape
    if C != C2:
        raise ValueError(f"conv1d channel mismatch: input {C}, kernels {C2}")
    if L + 2 * padding < W:
        raise ValueError(f"conv1d input too short: L={L}, width={W}, padding={padding}")
    if padding > 0:
        xp = np.zeros((B, C, L + 2 * padding), dtype=x.data.dtype)
        xp[:, :, padding : padding + L] = x.data
    else:
        xp = np.ascontiguousarray(x.data)
    cols = kernels.im2col(xp, W, stride)  # [B, C*W, Lo]
    w2 = w.data.reshape(O, C * W)
    y = np.matmul(w2, cols)  # [B, O, Lo]
    if b is not None:
        y += b.data[:, None]
    parents = (x, w, b) if b is not None else (x, w)
    out = op_node(y, parents, "conv1d")
    if out.requires_grad:

        def _bwd():
            g = out.grad  # [B, O, Lo]
            if b is not None and b.requires_grad:
                b.accumulate_grad(g.sum(axis=(0, 2)))
            if w.requires_grad:
                dw2 = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
                w.accumulate_grad(dw2.reshape(O, C, W))
            if x.requires_grad:
                dcols = np.matmul(w2.T, g)  # [B, C*W, Lo]
                dxp = kernels.col2im(np.ascontiguousarray(dcols), L + 2 * padding, W, stride)
                x.accumulate_grad(dxp[:, :, padding : padding + L])

        out._backward = _bwd
    return out


def pool_spans(x: Tensor, batch_index: int, spans: Sequence[tuple], mode: str = "sum") -> Tensor:
    """Collapse CNN frames into per-token vectors for one utterance.

    x: [B, C, K]; spans: [i, j) frame intervals in the K axis. Sum mode
    adds the columns (grad fans out equally); max mode keeps the columnwise
    maximum (grad routes to the argmax frame).
    """
    xb = x.data[batch_index]  # [C, K]
    C, K = xb.shape
    for i, j in spans:
        if not (0 <= i < j <= K):
            raise ValueError(f"empty or out-of-range span [{i}, {j}) for {K} frames")
    if mode == "sum":
        pooled = np.stack([xb[:, i:j].sum(axis=1) for i, j in spans])
        out = op_node(pooled, (x,), "pool_spans.sum")
        if out.requires_grad:

            def _bwd():
                g = np.zeros_like(x.data)
                for k, (i, j) in enumerate(spans):
                    g[batch_index, :, i:j] += out.grad[k][:, None]
                x.accumulate_grad(g)

            out._backward = _bwd
        return out
    if mode == "max":
        arg = [i + xb[:, i:j].argmax(axis=1) for i, j in spans]
        pooled = np.stack([xb[np.arange(C), a] for a in arg])
        out = op_node(pooled, (x,), "pool_spans.max")
        if out.requires_grad:

            def _bwd():
                g = np.zeros_like(x.data)
                rows = np.arange(C)
                for k, a in enumerate(arg):
                    g[batch_index, rows, a] += out.grad[k]
                x.accumulate_grad(g)

            out._backward = _bwd
        return out
    raise ValueError(f"unknown pooling mode {mode!r}")


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack [D]-shaped or [m, D]-shaped tensors along a new first axis."""
    data = np.stack([r.data for r in rows])
    out = op_node(data, tuple(rows), "stack_rows")
    if out.requires_grad:

        def _bwd():
            for k, r in enumerate(rows):
                if r.requires_grad:
                    r.accumulate_grad(out.grad[k])

        out._backward = _bwd
    return out


def pad_stack(seqs: Sequence[Tensor], pad_to: Optional[int] = None) -> tuple:
    """Stack variable-length [m_i, D] token sequences into [B, M, D] + mask.

    Returns (batch Tensor, lengths array, mask [B, M] float array).
    """
    lengths = np.array([s.data.shape[0] for s in seqs], dtype=np.int64)
    M = int(lengths.max()) if pad_to is None else pad_to
    B = len(seqs)
    D = seqs[0].data.shape[1]
    dtype = seqs[0].data.dtype
    data = np.zeros((B, M, D), dtype=dtype)
    mask = np.zeros((B, M), dtype=dtype)
    for i, s in enumerate(seqs):
        data[i, : lengths[i]] = s.data
        mask[i, : lengths[i]] = 1.0
    out = op_node(data, tuple(seqs), "pad_stack")
    if out.requires_grad:

        def _bwd():
            for i, s in enumerate(seqs):
                if s.requires_grad:
                    s.accumulate_grad(out.grad[i, : lengths[i]])

        out._backward = _bwd
    return out, lengths, mask


def softmax_xent(logits: Tensor, labels: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean per-token 2-class cross-entropy.

    logits: [T, 2]; labels: int array [T]; mask: optional {0,1} array [T]
    selecting the real (unpadded) tokens the mean runs over.
    """
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    probs = ez / ez.sum(axis=1, keepdims=True)
    logp = (z - zmax) - np.log(ez.sum(axis=1, keepdims=True))
    nll = -logp[np.arange(z.shape[0]), labels]
    if mask is None:
        mask = np.ones(z.shape[0], dtype=z.dtype)
    mask = np.asarray(mask, dtype=z.dtype)
    n_real = mask.sum()
    if n_real <= 0:
        raise ValueError("softmax_xent: mask selects no tokens")
    loss = (nll * mask).sum() / n_real
    out = op_node(np.asarray(loss, dtype=z.dtype), (logits,), "softmax_xent")
    if out.requires_grad:

        def _bwd():
            one_hot = np.zeros_like(z)
            one_hot[np.arange(z.shape[0]), labels] = 1.0
            g = (probs - one_hot) * mask[:, None] / n_real
            logits.accumulate_grad(g * out.grad)

        out._backward = _bwd
    return out


def select_tokens(x: Tensor, positions: Sequence[int]) -> Tensor:
    """Pick one token per batch row: x [B, M, D] -> [B, D]."""
    idx = np.asarray(positions, dtype=np.int64)
    rows = np.arange(x.data.shape[0])
    out = op_node(x.data[rows, idx], (x,), "select_tokens")
    if out.requires_grad:

        def _bwd():
            g = np.zeros_like(x.data)
            g[rows, idx] = out.grad
            x.accumulate_grad(g)

        out._backward = _bwd
    return out


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Plain (non-differentiable) softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    out = op_node(x.data.reshape(shape), (x,), "reshape")
    if out.requires_grad:

        def _bwd():
            x.accumulate_grad(out.grad.reshape(x.data.shape))

        out._backward = _bwd
    return out
