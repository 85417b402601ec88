import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urbangraph.ingest import Kind
from urbangraph.network import NodeRef, ShapeMismatch, UrbanNetwork
from urbangraph.nn import (
    GnnConfig,
    NonFiniteLoss,
    TrainedGnn,
    gcn_forward,
    gcn_propagator,
    grad_check,
    init_params,
    load_model,
    predict,
    sage_forward,
    save_model,
    softmax,
    train_gnn,
)


def graph(n, edges, weights=None, ids=None):
    ids = ids or [f"t{i:03d}" for i in range(n)]
    nodes = [NodeRef(Kind.TRACT, i) for i in ids]
    w = np.ones(len(edges)) if weights is None else weights
    return UrbanNetwork(nodes, np.zeros((n, 2)), np.zeros(n), np.array(edges, dtype=np.int64).reshape(-1, 2), w)


def test_gcn_two_nodes():
    net = graph(2, [(0, 1)])
    out = gcn_forward(net, np.array([[1.0], [3.0]]), [(np.array([[1.0]]), np.zeros(1))])
    np.testing.assert_allclose(out[:, 0], [2.0, 2.0], atol=1e-12)


def test_gcn_isolated_node():
    net = graph(1, [])
    W1, W2 = np.eye(2), np.eye(2)
    x = np.array([[0.7, -0.2]])
    out = gcn_forward(net, x, [(W1, np.zeros(2)), (W2, np.zeros(2))])
    np.testing.assert_allclose(out, np.maximum(x, 0))


def test_sage_isolated_node():
    net = graph(1, [])
    W = np.array([[1.0, -2.0], [5.0, 5.0]])
    out = sage_forward(net, np.array([[3.0]]), [(W, np.zeros(2))])
    np.testing.assert_allclose(out, [[3.0, -6.0]])


def test_sage_star():
    # centre 0, leaves 1 and 2; identity blocks pass [h_c, mean] straight through
    net = graph(3, [(0, 1), (0, 2)])
    X = np.array([[5.0], [1.0], [3.0]])
    out = sage_forward(net, X, [(np.eye(2), np.zeros(2))])
    np.testing.assert_allclose(out[0], [5.0, 2.0])
    np.testing.assert_allclose(out[1], [1.0, 5.0])


def test_shape_mismatch():
    net = graph(3, [(0, 1)])
    with pytest.raises(ShapeMismatch):
        gcn_forward(net, np.zeros((2, 1)), [(np.ones((1, 2)), np.zeros(2))])
    with pytest.raises(ShapeMismatch):
        sage_forward(net, np.zeros((3, 2)), [(np.ones((2, 2)), np.zeros(2))])


def test_normalized_adjacency_rows():
    net = graph(5, [(0, 1), (1, 2), (0, 2), (2, 3)])  # node 4 isolated
    A = gcn_propagator(net).dense()
    assert np.array_equal(A, A.T)
    r = A @ np.ones(5)
    assert np.all(r > 0) and r[4] == 1.0
    # row sums can exceed 1 off regular graphs; the spectral radius is exactly 1
    # with eigenvector sqrt(deg + 1)
    s = np.sqrt(np.array([3.0, 3, 4, 2, 1]))
    np.testing.assert_allclose(A @ s, s, atol=1e-12)
    assert np.max(np.abs(np.linalg.eigvalsh(A))) == pytest.approx(1.0, abs=1e-12)


def random_graph(r, n):
    pairs = {(int(a), int(b)) for a, b in r.integers(0, n, size=(2 * n, 2)) if a != b}
    return sorted({(min(p), max(p)) for p in pairs})


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["gcn", "graphsage"]))
def test_equivariance(seed, arch):
    r = np.random.default_rng(seed)
    n = int(r.integers(2, 15))
    edges = random_graph(r, n)
    X = r.normal(size=(n, 3))
    params = init_params(arch, 3, (4, 2), r)
    perm = r.permutation(n)  # old node i gets the id of position perm[i]
    ids = [f"t{i:03d}" for i in range(n)]
    a = graph(n, edges)
    b = graph(n, edges, ids=[ids[perm[i]] for i in range(n)])
    fwd = gcn_forward if arch == "gcn" else sage_forward
    Xb = np.empty_like(X)
    Xb[perm] = X
    out_a = fwd(a, X, params)
    out_b = fwd(b, Xb, params)
    np.testing.assert_allclose(out_b[perm], out_a, atol=1e-12)


def test_grad_check_gcn_path(rng):
    net = graph(4, [(0, 1), (1, 2), (2, 3)])
    X = rng.normal(size=(4, 3))
    params = init_params("gcn", 3, (5, 2), rng)
    assert grad_check("gcn", net, X, params, np.array([0, 1, 1, 0]), np.ones(4, bool)) < 1e-4


def test_grad_check_sage_star(rng):
    net = graph(5, [(0, 1), (0, 2), (0, 3), (0, 4)])
    X = rng.normal(size=(5, 2))
    params = init_params("graphsage", 2, (4, 3, 2), rng)
    mask = np.array([1, 1, 0, 1, 1], bool)
    assert grad_check("graphsage", net, X, params, np.array([1, 0, 0, 1, 0]), mask) < 1e-4


def test_grad_check_linear(rng):
    net = graph(3, [(0, 1), (1, 2)], weights=np.array([0.5, 2.0]))
    X = rng.normal(size=(3, 2))
    for arch in ("gcn", "graphsage"):
        params = init_params(arch, 2, (2,), rng)
        err = grad_check(arch, net, X, params, np.array([0, 1, 0]), np.ones(3, bool), edge_weight_mode="inverse_distance")
        assert err < 1e-6


def test_softmax_examples():
    assert softmax(np.array([[0.0, 0.0]]))[0, 1] == 0.5
    assert softmax(np.array([[-10.0, 10.0]]))[0, 1] == pytest.approx(1.0, abs=1e-4)
    z = np.random.default_rng(0).normal(scale=30, size=(50, 2))
    np.testing.assert_allclose(softmax(z).sum(axis=1), 1.0, atol=1e-9)


def planted_toy(seed=0, n=60):
    """Two dense clusters; the feature carries the cluster with noise."""
    r = np.random.default_rng(seed)
    half = n // 2
    y = np.r_[np.zeros(half), np.ones(n - half)]
    edges = set()
    for lo, hi in ((0, half), (half, n)):
        for i in range(lo, hi):
            for j in r.choice(np.arange(lo, hi), 4, replace=False):
                if i != j:
                    edges.add((min(i, j), int(max(i, j))))
    X = np.column_stack([y + r.normal(scale=0.6, size=n), r.normal(size=n)])
    return graph(n, sorted(edges)), X, y


@pytest.mark.parametrize("arch", ["gcn", "graphsage"])
def test_training_planted_toy(arch):
    net, X, y = planted_toy()
    cfg = GnnConfig(arch=arch, layer_dims=(8, 2), epochs=300, batch_size=20, learning_rate=0.01, seed=3)
    model = train_gnn(cfg, net, X, y, np.ones(len(y), bool))
    assert model.loss_history[-1] < 0.3
    acc = np.mean((predict(model, net, X) > 0.5) == y)
    assert acc > 0.9


def test_loss_drops_early_default_lr():
    net, X, y = planted_toy(1)
    model = train_gnn(GnnConfig(epochs=11, seed=2), net, X, y, np.ones(len(y), bool))
    assert model.loss_history[10] < model.loss_history[0]


def test_zero_lr_constant_history():
    net, X, y = planted_toy(2)
    h = train_gnn(GnnConfig(epochs=5, learning_rate=0.0), net, X, y, np.ones(len(y), bool)).loss_history
    assert len(set(h)) == 1


def test_deterministic_training():
    net, X, y = planted_toy(3)
    cfg = GnnConfig(epochs=20, seed=7)
    a = train_gnn(cfg, net, X, y, np.ones(len(y), bool))
    b = train_gnn(cfg, net, X, y, np.ones(len(y), bool))
    assert a.loss_history == b.loss_history
    for (Wa, ba), (Wb, bb) in zip(a.params, b.params):
        assert np.array_equal(Wa, Wb) and np.array_equal(ba, bb)


def test_huge_lr_signals():
    net, X, y = planted_toy(4)
    with pytest.raises(NonFiniteLoss):
        train_gnn(GnnConfig(epochs=50, learning_rate=1e30, layer_dims=(2,)), net, X * 1e300, y, np.ones(len(y), bool))


def test_config_validation():
    with pytest.raises(ValueError):
        GnnConfig(layer_dims=(4, 3))
    with pytest.raises(ValueError):
        GnnConfig(arch="gat")
    with pytest.raises(ValueError):
        GnnConfig(edge_weight_mode="gaussian")


def test_save_load(tmp_path):
    net, X, y = planted_toy(5)
    model = train_gnn(GnnConfig(epochs=3), net, X, y, np.ones(len(y), bool))
    model = TrainedGnn(model.config, model.params, model.loss_history, ("a", "b"))
    save_model(model, tmp_path / "m.npz")
    again = load_model(tmp_path / "m.npz", columns=("a", "b"))
    np.testing.assert_array_equal(predict(again, net, X), predict(model, net, X))
    with pytest.raises(ShapeMismatch):
        load_model(tmp_path / "m.npz", columns=("a", "c"))
    with pytest.raises(ShapeMismatch):
        predict(again, net, X[:, :1])
