import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hbe.rnn import (
    CELL_TYPES, COST_CONSTANTS, CellState, DenseLayer, RnnLayer, cell_cost, cell_step,
    dense_softmax, dump_arrays, layer_arrays, layer_backward, layer_forward, layer_from_arrays,
    parse_arrays, pca_fit, pca_inverse, pca_transform, sequence_final_state, sigmoid, softmax,
    stack_final_state,
)


def sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def scalar_step(layer, x, h, c):
    """Element-by-element re-implementation of one cell step in plain Python."""
    nh, nx = layer.n_hidden, layer.n_in
    kind = layer.cell_type

    def pre(gate, vec):
        w, u, b = layer.gate(gate)
        return [b[r] + sum(w[r, j] * x[j] for j in range(nx)) + sum(u[r, j] * vec[j] for j in range(nh))
                for r in range(nh)]

    if kind == "gru":
        z = [sig(v) for v in pre("z", c)]
        r = [sig(v) for v in pre("r", c)]
        g = [math.tanh(v) for v in pre("g", [r[j] * c[j] for j in range(nh)])]
        c_new = [(1 - z[j]) * c[j] + z[j] * g[j] for j in range(nh)]
        return c_new, c_new
    if kind == "simple":
        m = [math.tanh(v) for v in pre("m", h)]
        c_new = [c[j] + m[j] for j in range(nh)]
        return [math.tanh(v) for v in c_new], c_new
    am, af, ai, ao = (pre(gname, h) for gname in ("m", "f", "i", "o"))
    if kind == "peephole":
        af = [af[j] + layer.p[0, j] * c[j] for j in range(nh)]
        ai = [ai[j] + layer.p[1, j] * c[j] for j in range(nh)]
        ao = [ao[j] + layer.p[2, j] * c[j] for j in range(nh)]
    c_new = [sig(af[j]) * c[j] + sig(ai[j]) * math.tanh(am[j]) for j in range(nh)]
    h_new = [sig(ao[j]) * math.tanh(c_new[j]) for j in range(nh)]
    return h_new, c_new


def random_layer(kind, nx, nh, rng, scale=0.7):
    layer = RnnLayer.init(kind, nx, nh, rng)
    layer.w[:] = rng.normal(scale=scale, size=layer.w.shape)
    layer.u[:] = rng.normal(scale=scale, size=layer.u.shape)
    layer.b[:] = rng.normal(scale=scale, size=layer.b.shape)
    if layer.p is not None:
        layer.p[:] = rng.normal(scale=scale, size=layer.p.shape)
    return layer


def test_lstm_zero_weights_example():
    layer = RnnLayer.zeros("lstm", 3, 2)
    state, h = cell_step(layer, CellState(np.zeros(2), np.ones(2)), np.array([0.3, -1.0, 2.0]))
    np.testing.assert_allclose(state.c, 0.5)
    np.testing.assert_allclose(h, 0.5 * np.tanh(0.5))
    assert h[0] == pytest.approx(0.2311, abs=1e-4)


def test_simple_zero_weights_example():
    layer = RnnLayer.zeros("simple", 3, 2)
    state, h = cell_step(layer, CellState(np.zeros(2), np.zeros(2)), np.ones(3))
    np.testing.assert_array_equal(state.c, 0.0)
    np.testing.assert_array_equal(h, 0.0)


def test_gru_zero_weights_halves_state():
    layer = RnnLayer.zeros("gru", 3, 2)
    c = np.array([0.8, -0.4])
    state, h = cell_step(layer, CellState(c, c), np.ones(3))
    np.testing.assert_allclose(state.c, 0.5 * c)
    np.testing.assert_allclose(h, 0.5 * c)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        cell_step(RnnLayer.zeros("lstm", 3, 2), CellState(np.zeros(2), np.zeros(2)), np.ones(4))


def test_weight_shape_validation():
    with pytest.raises(ValueError):
        RnnLayer("lstm", np.zeros((4, 3)), np.zeros((4, 2)), np.zeros(4))
    with pytest.raises(ValueError):
        RnnLayer("peephole", np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
    with pytest.raises(ValueError):
        RnnLayer("bogus", np.zeros((2, 3)), np.zeros((2, 2)), np.zeros(2))


@pytest.mark.parametrize("kind", CELL_TYPES)
def test_length_one_equals_step(kind, rng):
    layer = random_layer(kind, 3, 4, rng)
    x = rng.normal(size=(1, 3))
    hs = layer_forward(layer, x)
    _, h = cell_step(layer, CellState(np.zeros(4), np.zeros(4)), x[0])
    np.testing.assert_allclose(hs[0], h, atol=1e-15)


@pytest.mark.parametrize("kind", CELL_TYPES)
def test_zero_weights_ignore_input(kind, rng):
    layer = RnnLayer.zeros(kind, 3, 4)
    a = layer_forward(layer, rng.normal(size=(6, 3)))
    b = layer_forward(layer, rng.normal(size=(6, 3)))
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("kind", CELL_TYPES)
def test_forward_matches_scalar_oracle(kind, rng):
    layer = random_layer(kind, 3, 4, rng)
    xs = rng.normal(size=(7, 3))
    c0 = rng.uniform(-0.1, 0.1, size=4)
    hs = layer_forward(layer, xs, c0=c0)
    h, c = [0.0] * 4, list(c0)
    if kind == "gru":
        h = list(c0)  # h and c are one state for the GRU
    for t in range(7):
        h, c = scalar_step(layer, xs[t], h, c)
        np.testing.assert_allclose(hs[t], h, atol=1e-10)


@pytest.mark.parametrize("kind", CELL_TYPES)
@pytest.mark.parametrize("backend", ["numpy", "numba"])
def test_sequence_kernel_matches_forward(kind, backend, rng):
    layers = [random_layer(kind, 5, 6, rng), random_layer(kind, 6, 3, rng)]
    xs = rng.normal(size=(9, 5))
    want = layer_forward(layers[1], layer_forward(layers[0], xs))[-1]
    np.testing.assert_allclose(stack_final_state(layers, xs, use=backend), want, atol=1e-12)
    np.testing.assert_allclose(sequence_final_state(layers[0], xs, use=backend),
                               layer_forward(layers[0], xs)[-1], atol=1e-12)


@pytest.mark.parametrize("kind", CELL_TYPES)
def test_layer_backward_finite_differences(kind, rng):
    layer = random_layer(kind, 3, 4, rng, scale=0.5)
    xs = rng.normal(size=(2, 5, 3))
    proj = rng.normal(size=(2, 5, 4))

    def loss():
        return float(np.sum(layer_forward(layer, xs) * proj))

    _, caches = layer_forward(layer, xs, return_cache=True)
    grads, dxs, _, _ = layer_backward(layer, caches, proj)
    eps = 1e-6
    for name, arr in layer.params().items():
        flat = arr.reshape(-1)
        for k in range(0, flat.size, max(1, flat.size // 7)):
            old = flat[k]
            flat[k] = old + eps
            up = loss()
            flat[k] = old - eps
            down = loss()
            flat[k] = old
            num = (up - down) / (2 * eps)
            assert grads[name].reshape(-1)[k] == pytest.approx(num, rel=1e-5, abs=1e-8)
    # input gradient too
    k = (1, 2, 0)
    old = xs[k]
    xs[k] = old + eps
    up = loss()
    xs[k] = old - eps
    down = loss()
    xs[k] = old
    assert dxs[k] == pytest.approx((up - down) / (2 * eps), rel=1e-5, abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(("lstm", "peephole")), st.integers(0, 2 ** 31),
       st.floats(-50, 50, allow_nan=False))
def test_lstm_gates_in_unit_interval(kind, seed, scale):
    rng = np.random.default_rng(seed)
    layer = random_layer(kind, 3, 4, rng, scale=3.0)
    x = rng.normal(size=3) * scale
    h = rng.normal(size=4)
    c = rng.normal(size=4) * 3
    a = x @ layer.w.T + h @ layer.u.T + layer.b
    for g in (a[4:8], a[8:12], a[12:16]):
        s = sigmoid(g)
        assert np.all((s >= 0) & (s <= 1))
    state, out = cell_step(layer, CellState(h, c), x)
    assert np.all(np.isfinite(out)) and np.all(np.abs(out) <= 1)


def test_empty_sequence_rejected():
    with pytest.raises(ValueError):
        layer_forward(RnnLayer.zeros("lstm", 3, 2), np.zeros((0, 3)))


def test_dense_softmax_examples(rng):
    d = DenseLayer(np.zeros((7, 5)), np.zeros(7))
    np.testing.assert_allclose(dense_softmax(d, rng.normal(size=5)), np.full(7, 1 / 7))
    z = np.array([30.0, 0, 0, 0, 0, 0, 0])
    assert np.argmax(softmax(z)) == 0
    z = rng.normal(size=(4, 7))
    np.testing.assert_allclose(softmax(z + 123.4), softmax(z), atol=1e-12)
    with pytest.raises(ValueError):
        dense_softmax(d, np.zeros(4))


def test_pca_line(rng):
    t = rng.normal(size=50)
    direction = np.array([3.0, 4.0]) / 5.0
    data = np.outer(t, direction) + np.array([1.0, -2.0])
    basis = pca_fit(data, 1)
    y = pca_transform(basis, data)[:, 0]
    centred = t - t.mean()
    assert np.allclose(y, centred, atol=1e-10) or np.allclose(y, -centred, atol=1e-10)
    np.testing.assert_allclose(pca_inverse(basis, pca_transform(basis, data)), data, atol=1e-10)


def test_pca_full_rank_isometry(rng):
    data = rng.normal(size=(100, 20))
    basis = pca_fit(data, 20)
    np.testing.assert_allclose(basis.components @ basis.components.T, np.eye(20), atol=1e-8)
    y = pca_transform(basis, data)
    np.testing.assert_allclose(pca_inverse(basis, y), data, atol=1e-8)
    d0 = np.linalg.norm(data[:10, None] - data[None, :10], axis=-1)
    d1 = np.linalg.norm(y[:10, None] - y[None, :10], axis=-1)
    np.testing.assert_allclose(d0, d1, atol=1e-8)


def test_pca_errors(rng):
    with pytest.raises(ValueError):
        pca_fit(rng.normal(size=(10, 3)), 4)
    with pytest.raises(ValueError):
        pca_fit(rng.normal(size=(2, 5)), 3)


def test_cost_examples():
    a, b, c, d = COST_CONSTANTS["lstm"]
    assert 2 * b * 30 ** 2 == 7200 and b * 60 ** 2 == 14400
    assert cell_cost("lstm", 10, 0) == d
    assert cell_cost("lstm", 20, 7) - cell_cost("lstm", 10, 7) == a * 10 * 7
    for kind in CELL_TYPES:
        costs = [cell_cost(kind, 9, nh) for nh in range(1, 80)]
        assert all(x < y for x, y in zip(costs, costs[1:]))


@pytest.mark.parametrize("kind", CELL_TYPES)
def test_two_small_cheaper_than_one_large(kind):
    for x in range(1, 200):
        assert 2 * cell_cost(kind, 9, x) < cell_cost(kind, 9, 2 * x) + cell_cost(kind, 9, 0)
    assert 2 * cell_cost("lstm", 9, 30) < cell_cost("lstm", 9, 60)


def test_hbe1_round_trip(rng):
    layer = random_layer("peephole", 3, 4, rng)
    blob = dump_arrays(layer_arrays("b1.0", layer), {"k": 1})
    meta, arrays = parse_arrays(blob)
    assert meta == {"k": 1}
    back = layer_from_arrays("b1.0", "peephole", arrays)
    np.testing.assert_array_equal(back.w, layer.w.astype(np.float32))
    np.testing.assert_array_equal(back.p, layer.p.astype(np.float32))
    assert blob[:4] == b"HBE1"
    with pytest.raises(ValueError):
        parse_arrays(b"XXXX" + blob[4:])
    with pytest.raises(ValueError):
        parse_arrays(blob[:-4])
