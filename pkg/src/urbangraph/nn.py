"""GCN and GraphSAGE node classifiers with hand-written backpropagation.

Both architectures run full-graph forward passes (no neighbour sampling).
Per layer, with ``P`` the propagation operator:

    GCN        Z = (A_hat H) W + b,          A_hat = D^-1/2 (A + I) D^-1/2
    GraphSAGE  Z = [H | M H] W + b,          M = row-normalised A (mean of neighbours)

followed by ReLU on every layer except the last. Training minimises the mean
softmax cross-entropy over a minibatch of labeled tract nodes per step, with
Adam.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .featpipe import FeatureMatrix
from .network import ShapeMismatch, UrbanNetwork

ARCHS = ("gcn", "graphsage")
FORMAT_VERSION = 1


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class GnnConfig:
    arch: str = "graphsage"
    layer_dims: tuple = (16, 4, 2)
    epochs: int = 400
    batch_size: int = 150
    learning_rate: float = 0.001
    seed: int = 0
    edge_weight_mode: str = "binary"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}")
        if not self.layer_dims or self.layer_dims[-1] != 2:
            raise ValueError("last layer must have width 2")
        if min(self.layer_dims) < 1:
            raise ValueError("layer widths must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.edge_weight_mode not in ("binary", "inverse_distance"):
            raise ValueError(f"unknown edge_weight_mode {self.edge_weight_mode!r}")


class Propagator:
    """Sparse propagation operator ``P`` (and its transpose) for one architecture."""

    def __init__(self, indptr, indices, data, t_indptr=None, t_indices=None, t_data=None):
        self.indptr, self.indices, self.data = indptr, indices, data
        self.symmetric = t_indptr is None
        self.t = (t_indptr, t_indices, t_data)

    def __call__(self, H):
        return kernels.csr_spmm(self.indptr, self.indices, self.data, H)

    def transpose(self, G):
        if self.symmetric:
            return self(G)
        return kernels.csr_spmm(*self.t, G)

    def dense(self):
        n = len(self.indptr) - 1
        out = np.zeros((n, n))
        rows = np.repeat(np.arange(n), np.diff(self.indptr))
        np.add.at(out, (rows, self.indices), self.data)
        return out


def _csr_from_coo(n, rows, cols, vals):
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return indptr, cols.astype(np.int64), vals.astype(np.float64)


def gcn_propagator(net: UrbanNetwork, mode: str = "binary") -> Propagator:
    indptr, indices, data = net.adjacency(mode)
    n = len(net)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    rows = np.concatenate([rows, np.arange(n)])
    cols = np.concatenate([indices, np.arange(n)])
    vals = np.concatenate([data, np.ones(n)])
    deg = np.bincount(rows, weights=vals, minlength=n)
    inv = 1.0 / np.sqrt(deg)
    return Propagator(*_csr_from_coo(n, rows, cols, vals * inv[rows] * inv[cols]))


def sage_propagator(net: UrbanNetwork, mode: str = "binary") -> Propagator:
    indptr, indices, data = net.adjacency(mode)
    n = len(net)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    tot = np.bincount(rows, weights=data, minlength=n)
    vals = data / tot[rows] if len(rows) else data
    fwd = _csr_from_coo(n, rows, indices, vals)
    bwd = _csr_from_coo(n, indices, rows, vals)
    return Propagator(*fwd, *bwd)


def make_propagator(net: UrbanNetwork, arch: str, mode: str = "binary") -> Propagator:
    if arch == "gcn":
        return gcn_propagator(net, mode)
    if arch == "graphsage":
        return sage_propagator(net, mode)
    raise ValueError(f"unknown arch {arch!r}")


HIDDEN_BIAS_INIT = 0.1


def init_params(arch: str, in_dim: int, layer_dims, rng) -> list[tuple[np.ndarray, np.ndarray]]:
    """Uniform(+-1/sqrt(fan_in)) weights; GraphSAGE layers see 2x the width.

    Hidden biases start at a small positive constant so the narrow ReLU layers
    do not start (or quickly become) dead; the output bias starts at zero.
    """
    params = []
    d = in_dim
    last = len(layer_dims) - 1
    for l, out in enumerate(layer_dims):
        fan_in = 2 * d if arch == "graphsage" else d
        bound = 1.0 / np.sqrt(max(fan_in, 1))
        W = rng.uniform(-bound, bound, size=(fan_in, out))
        b = np.zeros(out) if l == last else np.full(out, HIDDEN_BIAS_INIT)
        params.append((W, b))
        d = out
    return params


def forward(arch: str, P: Propagator, X, params, first=None, keep=False):
    """Logits for every node. ``first`` may carry a precomputed ``P @ X``."""
    H = X
    caches = []
    last = len(params) - 1
    for l, (W, b) in enumerate(params):
        PH = first if (l == 0 and first is not None) else P(H)
        if arch == "gcn":
            Z = PH @ W
        else:
            d = H.shape[1]
            # [H | PH] W without materialising the concatenation
            Z = H @ W[:d]
            Z += PH @ W[d:]
        Z += b
        if keep:
            caches.append((H, PH, Z))
        H = Z if l == last else np.maximum(Z, 0.0)
    return (H, caches) if keep else H


def backward(arch: str, P: Propagator, params, caches, dlogits, grads=None):
    """Backpropagate ``dlogits``; writes into ``grads`` (same layout as params) if given."""
    if grads is None:
        grads = [(np.empty_like(W), np.empty_like(b)) for W, b in params]
    dZ = dlogits
    for l in range(len(params) - 1, -1, -1):
        W, _ = params[l]
        H, PH, _ = caches[l]
        gW, gb = grads[l]
        if arch == "gcn":
            np.matmul(PH.T, dZ, out=gW)
        else:
            d = H.shape[1]
            np.matmul(H.T, dZ, out=gW[:d])
            np.matmul(PH.T, dZ, out=gW[d:])
        np.sum(dZ, axis=0, out=gb)
        if l == 0:
            break
        if arch == "gcn":
            dH = P.transpose(dZ @ W.T)
        else:
            d = H.shape[1]
            dH = dZ @ W[:d].T
            dH += P.transpose(dZ @ W[d:].T)
        dZ = dH * (caches[l - 1][2] > 0.0)
    return grads


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, rows, targets):
    """Mean softmax cross-entropy over ``rows`` and its gradient w.r.t. all logits."""
    z = logits[rows]
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(len(rows)), targets]))
    p = np.exp(z - logsum[:, None])
    p[np.arange(len(rows)), targets] -= 1.0
    grad = np.zeros_like(logits)
    grad[rows] = p / len(rows)  # rows are unique
    return loss, grad


def _as_array(net, X):
    if isinstance(X, FeatureMatrix):
        if X.rows != net.nodes:
            raise ShapeMismatch("feature rows do not match the network's nodes")
        return X.values
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != len(net):
        raise ShapeMismatch(f"expected {len(net)} feature rows, got {X.shape}")
    return X


def _check_params(params, in_dim, arch):
    d = in_dim
    for W, b in params:
        need = 2 * d if arch == "graphsage" else d
        if W.shape[0] != need or b.shape != (W.shape[1],):
            raise ShapeMismatch(f"weight {W.shape} / bias {b.shape} do not fit input width {d}")
        d = W.shape[1]


def gcn_forward(net: UrbanNetwork, X, weights, edge_weight_mode: str = "binary") -> np.ndarray:
    X = _as_array(net, X)
    _check_params(weights, X.shape[1], "gcn")
    return forward("gcn", gcn_propagator(net, edge_weight_mode), X, weights)


def sage_forward(net: UrbanNetwork, X, weights, edge_weight_mode: str = "binary") -> np.ndarray:
    X = _as_array(net, X)
    _check_params(weights, X.shape[1], "graphsage")
    return forward("graphsage", sage_propagator(net, edge_weight_mode), X, weights)


@dataclass
class TrainedGnn:
    config: GnnConfig
    params: list
    loss_history: list = field(default_factory=list)
    columns: tuple = ()

    @property
    def in_dim(self) -> int:
        W = self.params[0][0]
        return W.shape[0] // 2 if self.config.arch == "graphsage" else W.shape[0]


def _flat_views(shapes, buf):
    out, pos = [], 0
    for ws, bs in shapes:
        nw, nb = int(np.prod(ws)), int(np.prod(bs))
        out.append((buf[pos : pos + nw].reshape(ws), buf[pos + nw : pos + nw + nb].reshape(bs)))
        pos += nw + nb
    return out


class _Adam:
    def __init__(self, size, lr, b1, b2, eps):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta, g):
        self.t += 1
        self.m *= self.b1
        self.m += (1.0 - self.b1) * g
        self.v *= self.b2
        self.v += (1.0 - self.b2) * (g * g)
        mhat = self.m / (1.0 - self.b1**self.t)
        vhat = self.v / (1.0 - self.b2**self.t)
        theta -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train_gnn(config: GnnConfig, net: UrbanNetwork, X, labels, train_mask, callback=None) -> TrainedGnn:
    """Fit a GNN on the nodes selected by ``train_mask``.

    ``labels`` holds 0/1 per node (anything for unmasked nodes). Each epoch
    shuffles the masked nodes into ``batch_size`` minibatches; every step does
    a full-graph forward pass and backpropagates the batch loss. The recorded
    history is the full-mask loss after each epoch.
    """
    columns = X.columns if isinstance(X, FeatureMatrix) else ()
    X = _as_array(net, X)
    mask = np.asarray(train_mask, dtype=bool)
    if mask.shape != (len(net),):
        raise ShapeMismatch("train_mask must have one entry per node")
    nodes = np.nonzero(mask)[0]
    if nodes.size == 0:
        raise ValueError("train_mask selects no nodes")
    y = np.asarray(labels, dtype=np.float64)
    if not np.isin(y[nodes], (0.0, 1.0)).all():
        raise ValueError("masked nodes need 0/1 labels")
    y_int = np.zeros(len(net), dtype=np.int64)
    y_int[nodes] = y[nodes].astype(np.int64)

    ss = np.random.SeedSequence([int(config.seed), 0x6E6E])
    init_rng, order_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    arch = config.arch
    init = init_params(arch, X.shape[1], config.layer_dims, init_rng)
    shapes = [(W.shape, b.shape) for W, b in init]
    theta = np.concatenate([a.reshape(-1) for pair in init for a in pair])
    gbuf = np.zeros_like(theta)
    params = _flat_views(shapes, theta)
    grads = _flat_views(shapes, gbuf)
    P = make_propagator(net, arch, config.edge_weight_mode)
    first = P(X)
    opt = _Adam(theta.size, config.learning_rate, config.beta1, config.beta2, config.eps)
    history = []
    bs = config.batch_size
    for epoch in range(config.epochs):
        perm = nodes[order_rng.permutation(nodes.size)]
        for s in range(0, perm.size, bs):
            batch = perm[s : s + bs]
            logits, caches = forward(arch, P, X, params, first=first, keep=True)
            loss, dlog = cross_entropy(logits, batch, y_int[batch])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss is {loss} at epoch {epoch}; lower the learning rate")
            backward(arch, P, params, caches, dlog, grads)
            opt.step(theta, gbuf)
        full, _ = cross_entropy(forward(arch, P, X, params, first=first), nodes, y_int[nodes])
        if not np.isfinite(full):
            raise NonFiniteLoss(f"loss is {full} at epoch {epoch}; lower the learning rate")
        history.append(full)
        if callback is not None:
            callback(epoch, full)
    params = [(W.copy(), b.copy()) for W, b in params]
    return TrainedGnn(config, params, history, tuple(columns))


def predict(model: TrainedGnn, net: UrbanNetwork, X) -> np.ndarray:
    """Class-1 probability for every node."""
    X = _as_array(net, X)
    if X.shape[1] != model.in_dim:
        raise ShapeMismatch(f"model expects {model.in_dim} features, got {X.shape[1]}")
    P = make_propagator(net, model.config.arch, model.config.edge_weight_mode)
    return softmax(forward(model.config.arch, P, X, model.params))[:, 1]


def masked_loss(arch, net, X, params, labels, mask, edge_weight_mode="binary") -> float:
    X = _as_array(net, X)
    P = make_propagator(net, arch, edge_weight_mode)
    rows = np.nonzero(np.asarray(mask, dtype=bool))[0]
    y = np.asarray(labels).astype(np.int64)
    return cross_entropy(forward(arch, P, X, params), rows, y[rows])[0]


def analytic_grads(arch, net, X, params, labels, mask, edge_weight_mode="binary"):
    X = _as_array(net, X)
    P = make_propagator(net, arch, edge_weight_mode)
    rows = np.nonzero(np.asarray(mask, dtype=bool))[0]
    y = np.asarray(labels).astype(np.int64)
    logits, caches = forward(arch, P, X, params, keep=True)
    _, dlog = cross_entropy(logits, rows, y[rows])
    return backward(arch, P, params, caches, dlog)


def grad_check(arch, net, X, params, labels, mask, delta: float = 1e-5, edge_weight_mode="binary") -> float:
    """Max relative error between backprop and central finite differences over all weights."""
    g = analytic_grads(arch, net, X, params, labels, mask, edge_weight_mode)
    worst = 0.0
    for l, (W, b) in enumerate(params):
        for k, arr in enumerate((W, b)):
            flat = arr.reshape(-1)
            ga = g[l][k].reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + delta
                up = masked_loss(arch, net, X, params, labels, mask, edge_weight_mode)
                flat[i] = old - delta
                down = masked_loss(arch, net, X, params, labels, mask, edge_weight_mode)
                flat[i] = old
                fd = (up - down) / (2.0 * delta)
                err = abs(ga[i] - fd) / max(1e-8, abs(ga[i]) + abs(fd))
                worst = max(worst, err)
    return worst


def save_model(model: TrainedGnn, path):
    meta = {
        "format": "urbangraph-gnn",
        "version": FORMAT_VERSION,
        "config": asdict(model.config),
        "columns": list(model.columns),
        "loss_history": list(model.loss_history),
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for l, (W, b) in enumerate(model.params):
        arrays[f"W{l}"] = W
        arrays[f"b{l}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path, columns=None) -> TrainedGnn:
    """Load a saved GNN; ``columns`` (if given) must match the saved feature columns."""
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("format") != "urbangraph-gnn":
            raise ValueError(f"{path} is not a saved GNN")
        if meta.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {meta.get('version')}")
        cfg = GnnConfig(**meta["config"])
        params = [(z[f"W{l}"].copy(), z[f"b{l}"].copy()) for l in range(len(cfg.layer_dims))]
    model = TrainedGnn(cfg, params, meta["loss_history"], tuple(meta["columns"]))
    _check_params(params, model.in_dim, cfg.arch)
    if columns is not None and tuple(columns) != model.columns:
        raise ShapeMismatch("feature columns differ from the ones the model was trained on")
    return model
