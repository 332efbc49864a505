"""Finite-difference gradient checks for every differentiable op.

Each check builds a float64 graph, backpropagates dL/dx for
L = sum(output * R) with a fixed random projection R, and compares
against central differences with h = 1e-5.
"""

import numpy as np
import pytest

from accentdet.nn import ops
from accentdet.nn.lstm import bilstm, lstm_layer
from accentdet.nn.tensor import Tensor, parameter

H = 1e-5
TOL = 1e-4
N_INSTANCES = 5


def numeric_grad(f, x: np.ndarray, h: float = H) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def check_grads(make_output, leaves: dict, seed: int):
    """Backprop through make_output() and compare each leaf's gradient."""
    rng = np.random.default_rng(seed)
    out = make_output()
    R = rng.standard_normal(out.data.shape)
    for t in leaves.values():
        t.grad = None
    out.backward(R)

    def scalar():
        return float((make_output().data * R).sum())

    for name, t in leaves.items():
        num = numeric_grad(scalar, t.data)
        assert t.grad is not None, f"no grad for {name}"
        err = rel_err(t.grad, num)
        assert err < TOL, f"{name}: rel err {err:.2e} >= {TOL}"


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_conv1d_grad(seed):
    rng = np.random.default_rng(100 + seed)
    x = parameter(rng.standard_normal((2, 2, 7)))
    w = parameter(rng.standard_normal((3, 2, 3)))
    b = parameter(rng.standard_normal(3))
    stride = 2 if seed % 2 == 0 else 1
    pad = seed % 3
    check_grads(lambda: ops.conv1d(x, w, b, stride=stride, padding=pad), {"x": x, "w": w, "b": b}, seed)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_lstm_cell_grad(seed):
    # single timestep exercises the cell equations in isolation
    rng = np.random.default_rng(200 + seed)
    x = parameter(rng.standard_normal((2, 1, 4)))
    Wx = parameter(rng.standard_normal((4, 12)))
    Wh = parameter(rng.standard_normal((3, 12)))
    b = parameter(rng.standard_normal(12))
    mask = np.ones((2, 1))
    check_grads(
        lambda: lstm_layer(x, mask, Wx, Wh, b),
        {"x": x, "Wx": Wx, "Wh": Wh, "b": b},
        seed,
    )


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_lstm_layer_grad_with_mask(seed):
    rng = np.random.default_rng(300 + seed)
    B, T, D, Hh = 3, 3, 4, 3
    x = parameter(rng.standard_normal((B, T, D)))
    Wx = parameter(rng.standard_normal((D, 4 * Hh)) * 0.5)
    Wh = parameter(rng.standard_normal((Hh, 4 * Hh)) * 0.5)
    b = parameter(rng.standard_normal(4 * Hh) * 0.5)
    mask = np.ones((B, T))
    mask[1, 2:] = 0.0
    mask[2, 1:] = 0.0
    reverse = seed % 2 == 1
    check_grads(
        lambda: lstm_layer(x, mask, Wx, Wh, b, reverse=reverse),
        {"x": x, "Wx": Wx, "Wh": Wh, "b": b},
        seed,
    )


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_bilstm_grad(seed):
    rng = np.random.default_rng(400 + seed)
    B, T, D, Hh = 2, 3, 4, 3
    x = parameter(rng.standard_normal((B, T, D)))
    layers = []
    leaves = {"x": x}
    in_dim = D
    for layer_idx in range(2):
        prm = {}
        for direction in ("fwd", "bwd"):
            prm[f"{direction}_Wx"] = parameter(rng.standard_normal((in_dim, 4 * Hh)) * 0.5)
            prm[f"{direction}_Wh"] = parameter(rng.standard_normal((Hh, 4 * Hh)) * 0.5)
            prm[f"{direction}_b"] = parameter(rng.standard_normal(4 * Hh) * 0.5)
        for k, v in prm.items():
            leaves[f"l{layer_idx}.{k}"] = v
        layers.append(prm)
        in_dim = 2 * Hh
    mask = np.ones((B, T))
    mask[1, 2:] = 0.0
    check_grads(lambda: bilstm(x, mask, layers), leaves, seed)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_linear_grad(seed):
    rng = np.random.default_rng(500 + seed)
    x = parameter(rng.standard_normal((4, 5)))
    w = parameter(rng.standard_normal((5, 3)))
    b = parameter(rng.standard_normal(3))
    check_grads(lambda: ops.linear(x, w, b), {"x": x, "w": w, "b": b}, seed)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_embedding_grad(seed):
    rng = np.random.default_rng(600 + seed)
    table = parameter(rng.standard_normal((6, 4)))
    ids = rng.integers(0, 6, size=5)  # repeats exercise grad accumulation
    check_grads(lambda: ops.embedding(table, ids), {"table": table}, seed)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
@pytest.mark.parametrize("mode", ["sum", "max"])
def test_pool_spans_grad(seed, mode):
    rng = np.random.default_rng(700 + seed)
    x = parameter(rng.standard_normal((2, 3, 8)))
    spans = [(0, 3), (3, 4), (4, 8)]
    check_grads(lambda: ops.pool_spans(x, 1, spans, mode=mode), {"x": x}, seed)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_softmax_xent_grad(seed):
    rng = np.random.default_rng(800 + seed)
    logits = parameter(rng.standard_normal((6, 2)))
    labels = rng.integers(0, 2, size=6)
    mask = np.ones(6)
    mask[4:] = 0.0
    check_grads(lambda: ops.softmax_xent(logits, labels, mask), {"logits": logits}, seed)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_elementwise_and_concat_grads(seed):
    rng = np.random.default_rng(900 + seed)
    a = parameter(rng.standard_normal((3, 4)))
    b = parameter(rng.standard_normal((3, 4)))
    check_grads(lambda: ops.relu(ops.add(a, b)), {"a": a, "b": b}, seed)
    check_grads(lambda: ops.tanh(ops.mul(a, b)), {"a": a, "b": b}, seed + 50)
    check_grads(lambda: ops.sigmoid(a), {"a": a}, seed + 100)
    check_grads(lambda: ops.concat([a, b], axis=1), {"a": a, "b": b}, seed + 150)


def test_grad_accumulates_across_uses():
    # a parameter feeding two branches receives the sum of both gradients
    a = parameter(np.array([2.0, 3.0]))
    out = ops.add(ops.mul(a, a), a)  # a^2 + a -> d/da = 2a + 1
    out.backward(np.ones(2))
    assert np.allclose(a.grad, 2 * a.data + 1)
