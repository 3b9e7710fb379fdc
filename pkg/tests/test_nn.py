import math

import numpy as np
import pytest

from ddsfraud.nn import (Adam, GatLayer, GcnLayer, Mlp, NnError, bce_loss, grad_check,
                         sigmoid, softplus)


def random_typed_edges(rng, n, kinds=("a", "b"), p=0.4):
    nbrs = {}
    for kind in kinds:
        src, dst = [], []
        for u in range(n):
            for v in range(n):
                if rng.random() < p:
                    src.append(u)
                    dst.append(v)
        nbrs[kind] = (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64))
    return nbrs


def gcn_oracle(h, edges, params, nbr_dims):
    """Scalar-loop recomputation of the GCN layer formula."""
    n, d_out = h.shape[0], params["b"].shape[0]
    out = np.zeros((n, d_out))
    for v in range(n):
        pre = params["b"].copy()
        for j in range(d_out):
            for i in range(h.shape[1]):
                pre[j] += h[v, i] * params["W_self"][i, j]
        for kind, (src, dst) in edges.items():
            inn = [int(s) for s, d in zip(src, dst) if d == v]
            if not inn:
                continue
            mean = np.zeros(nbr_dims[kind])
            for u in inn:
                mean += h[u]
            mean /= len(inn)
            for j in range(d_out):
                for i in range(len(mean)):
                    pre[j] += mean[i] * params[f"W.{kind}"][i, j]
        out[v] = np.maximum(pre, 0.0)
    return out


def gat_oracle(h, edges, params, slope=0.2):
    n, d_out = h.shape[0], params["b"].shape[0]
    sp = h @ params["W_self"]
    out = np.zeros((n, d_out))
    for v in range(n):
        pre = sp[v] + params["b"]
        for kind, (src, dst) in edges.items():
            inn = [int(s) for s, d in zip(src, dst) if d == v]
            if not inn:
                continue
            W = params[f"W.{kind}"]
            logits = []
            for u in inn:
                g = h[u] @ W
                e = float(g @ params[f"a_src.{kind}"] + sp[v] @ params[f"a_dst.{kind}"])
                logits.append(e if e > 0 else slope * e)
            mx = max(logits)
            ws = [math.exp(e - mx) for e in logits]
            z = sum(ws)
            for u, w in zip(inn, ws):
                pre = pre + (w / z) * (h[u] @ W)
        out[v] = np.maximum(pre, 0.0)
    return out


class TestGcnLayer:
    def test_zero_params_zero_output(self, rng):
        layer = GcnLayer(rng, 3, 4, {"a": 3})
        for p in layer.params.values():
            p[...] = 0.0
        h = rng.standard_normal((5, 3))
        nbrs = {"a": (h, np.array([0, 1]), np.array([1, 2]))}
        out, _ = layer.forward(h, nbrs)
        assert (out == 0).all()

    def test_identity_on_isolated_vertex(self, rng):
        layer = GcnLayer(rng, 3, 3, {"a": 3})
        layer.params["W_self"] = np.eye(3)
        layer.params["b"][...] = 0.0
        h = np.array([[1.0, 2.0, 3.0]])
        empty = np.zeros(0, dtype=np.int64)
        out, _ = layer.forward(h, {"a": (h, empty, empty)})
        assert np.allclose(out, h)

    def test_matches_scalar_oracle(self, rng):
        n = 4
        layer = GcnLayer(rng, 3, 2, {"a": 3, "b": 3})
        h = rng.standard_normal((n, 3))
        edges = random_typed_edges(rng, n)
        nbrs = {k: (h, s, d) for k, (s, d) in edges.items()}
        out, _ = layer.forward(h, nbrs)
        expect = gcn_oracle(h, edges, layer.params, layer.nbr_dims)
        assert np.abs(out - expect).max() < 1e-12

    def test_permutation_equivariance(self, rng):
        n = 6
        layer = GcnLayer(rng, 3, 4, {"a": 3})
        h = rng.standard_normal((n, 3))
        src, dst = random_typed_edges(rng, n, kinds=("a",))["a"]
        out, _ = layer.forward(h, {"a": (h, src, dst)})
        perm = rng.permutation(n)
        inv = np.argsort(perm)
        h_p = h[perm]
        out_p, _ = layer.forward(h_p, {"a": (h_p, inv[src], inv[dst])})
        assert np.allclose(out_p, out[perm], atol=1e-12)

    def test_shape_mismatch_errors(self, rng):
        layer = GcnLayer(rng, 3, 2, {"a": 3})
        with pytest.raises(ValueError):
            layer.forward(rng.standard_normal((2, 5)), {})


class TestGatLayer:
    def test_single_neighbor_weight_one(self, rng):
        """With one in-neighbor, attention must be exactly 1 whatever the params:
        output equals self term + that neighbor's projection."""
        layer = GatLayer(rng, 3, 3, {"a": 3})
        h = rng.standard_normal((2, 3))
        out, cache = layer.forward(h, {"a": (h, np.array([0]), np.array([1]))})
        _, alpha, _ = cache["kinds"]["a"]
        assert alpha[0] == 1.0

    def test_identical_neighbors_half_half(self, rng):
        layer = GatLayer(rng, 3, 3, {"a": 3})
        h = rng.standard_normal((3, 3))
        h[1] = h[0]
        out, cache = layer.forward(h, {"a": (h, np.array([0, 1]), np.array([2, 2]))})
        _, alpha, _ = cache["kinds"]["a"]
        assert np.allclose(alpha, [0.5, 0.5])

    def test_matches_scalar_oracle(self, rng):
        n = 5
        layer = GatLayer(rng, 3, 4, {"a": 3, "b": 3})
        h = rng.standard_normal((n, 3))
        edges = random_typed_edges(rng, n)
        nbrs = {k: (h, s, d) for k, (s, d) in edges.items()}
        out, _ = layer.forward(h, nbrs)
        expect = gat_oracle(h, edges, layer.params)
        assert np.abs(out - expect).max() < 1e-10


class TestMlp:
    def test_zero_weights_gives_bias(self, rng):
        net = Mlp(rng, [3, 4, 1])
        for k, v in net.params.items():
            v[...] = 0.0
        net.params["b1"][...] = 0.7
        out, _ = net.forward(rng.standard_normal((6, 3)))
        assert np.allclose(out, 0.7)

    def test_identity_single_layer(self, rng):
        net = Mlp(rng, [3, 3])
        net.params["W0"] = np.eye(3)
        net.params["b0"][...] = 0.0
        x = np.abs(rng.standard_normal((4, 3)))
        out, _ = net.forward(x)
        assert np.allclose(out, x)

    def test_matches_scalar_oracle(self, rng):
        net = Mlp(rng, [3, 5, 4, 1])
        x = rng.standard_normal((7, 3))
        out, _ = net.forward(x)
        h = x
        for i in range(3):
            pre = h @ net.params[f"W{i}"] + net.params[f"b{i}"]
            h = np.maximum(pre, 0.0) if i < 2 else pre
        assert np.abs(out - h).max() < 1e-12


class TestBceLoss:
    def test_analytic_ln2(self):
        loss, _ = bce_loss(np.array([0.0]), np.array([1.0]))
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_softplus_asymptotics(self):
        lo, _ = bce_loss(np.array([40.0]), np.array([1.0]))
        hi, _ = bce_loss(np.array([-40.0]), np.array([1.0]))
        assert lo < 1e-15
        assert hi == pytest.approx(40.0, abs=1e-12)

    def test_empty_errors(self):
        with pytest.raises(NnError):
            bce_loss(np.zeros(0), np.zeros(0))

    def test_gradient_vs_central_differences(self, rng):
        for _ in range(10):
            n = int(rng.integers(1, 8))
            z = rng.standard_normal(n) * 3
            y = (rng.random(n) < 0.5).astype(float)
            pw = float(rng.uniform(0.5, 4.0))
            _, grad = bce_loss(z, y, pw)
            for i in range(n):
                eps = 1e-6
                zp, zm = z.copy(), z.copy()
                zp[i] += eps
                zm[i] -= eps
                fd = (bce_loss(zp, y, pw)[0] - bce_loss(zm, y, pw)[0]) / (2 * eps)
                assert abs(fd - grad[i]) / max(abs(fd), 1e-8) < 1e-6


class TestAdam:
    def test_zero_gradient_no_change(self):
        params = {"w": np.array([1.0, -2.0])}
        Adam(lr=0.1).step(params, {"w": np.zeros(2)})
        assert np.allclose(params["w"], [1.0, -2.0])

    def test_first_step_magnitude(self):
        params = {"w": np.array([0.0])}
        Adam(lr=0.1).step(params, {"w": np.array([1.0])})
        assert params["w"][0] == pytest.approx(-0.1, rel=1e-6)

    def test_matches_scalar_reimplementation(self, rng):
        lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
        opt = Adam(lr=lr, beta1=b1, beta2=b2, eps=eps)
        w = np.array([0.3])
        params = {"w": w}
        ws = 0.3
        m = v = 0.0
        for t in range(1, 101):
            g = math.sin(t * 0.1)
            opt.step(params, {"w": np.array([g])})
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            ws -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        assert abs(params["w"][0] - ws) < 1e-12


class TestGradCheck:
    def _graph_loss(self, layer, h, nbrs, y):
        def fn():
            layer.zero_grads()
            out, cache = layer.forward(h, nbrs)
            logits = out.sum(axis=1)
            loss, d = bce_loss(logits, y)
            layer.backward(cache, np.repeat(d[:, None], out.shape[1], axis=1))
            return loss, dict(layer.grads)
        return fn

    def test_gcn_plus_bce(self, rng):
        n = 4
        layer = GcnLayer(rng, 3, 3, {"a": 3, "b": 3})
        h = rng.standard_normal((n, 3))
        edges = random_typed_edges(rng, n)
        nbrs = {k: (h, s, d) for k, (s, d) in edges.items()}
        y = np.array([0.0, 1.0, 1.0, 0.0])
        err = grad_check(self._graph_loss(layer, h, nbrs, y), layer.params, rng=rng)
        assert err < 1e-4

    def test_gat_plus_bce(self, rng):
        n = 5
        layer = GatLayer(rng, 3, 3, {"a": 3, "b": 3})
        h = rng.standard_normal((n, 3))
        edges = random_typed_edges(rng, n)
        nbrs = {k: (h, s, d) for k, (s, d) in edges.items()}
        y = np.array([0.0, 1.0, 1.0, 0.0, 1.0])
        err = grad_check(self._graph_loss(layer, h, nbrs, y), layer.params, rng=rng)
        assert err < 1e-4

    def test_mlp_plus_bce(self, rng):
        net = Mlp(rng, [4, 6, 1])
        x = rng.standard_normal((8, 4))
        y = (rng.random(8) < 0.5).astype(float)

        def fn():
            net.zero_grads()
            out, cache = net.forward(x)
            loss, d = bce_loss(out[:, 0], y)
            net.backward(cache, d[:, None])
            return loss, dict(net.grads)

        assert grad_check(fn, net.params, rng=rng) < 1e-4

    def test_linear_layer_nearly_exact(self, rng):
        net = Mlp(rng, [3, 1])
        x = rng.standard_normal((5, 3))
        y = rng.standard_normal(5)

        def fn():
            net.zero_grads()
            out, cache = net.forward(x)
            diff = out[:, 0] - y
            loss = float((diff ** 2).mean())
            net.backward(cache, (2 * diff / len(y))[:, None])
            return loss, dict(net.grads)

        assert grad_check(fn, net.params, rng=rng) < 1e-7


def test_non_finite_trips_error(rng):
    layer = GcnLayer(rng, 2, 2, {})
    h = np.array([[np.inf, 0.0]])
    with pytest.raises(NnError):
        layer.forward(h, {})


def test_seeded_init_deterministic():
    a = GcnLayer(np.random.default_rng(42), 3, 4, {"a": 3})
    b = GcnLayer(np.random.default_rng(42), 3, 4, {"a": 3})
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
