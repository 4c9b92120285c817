import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from specalign.errors import ConfigError, SizeError, TrainingError
from specalign.net import (Mlp, MlpSpec, contrastive_loss_grad, cross_entropy_loss_grad,
                           mse_loss_grad)

REL_TOL = 1e-4


def rel_err(a, b):
    """Max-norm relative error of two gradients, each a list of arrays.

    Measured over the flattened full gradient, so blocks that are exactly
    zero (dead units) do not turn finite-difference round-off into 100%.
    """
    a = np.concatenate([np.ravel(x) for x in a])
    b = np.concatenate([np.ravel(x) for x in b])
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12)


def numeric_grads(f, params, h=1e-6):
    out = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = f()
            p[idx] = old - h
            down = f()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def small_net(seed=0, widths=(3, 5, 4, 2), **kw):
    net = Mlp.init(MlpSpec(widths, seed), **kw)
    # nonzero biases move pre-activations away from the ReLU kink at 0
    r = np.random.default_rng(seed + 100)
    for b in net.biases:
        b += 0.1 * r.standard_normal(b.shape)
    return net


class TestGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_mse_pipeline(self, seed):
        r = np.random.default_rng(seed)
        net = small_net(seed, input_mean=r.standard_normal(3), input_std=r.random(3) + 0.5,
                        output_scale=0.3)
        X, T = r.standard_normal((8, 3)), r.standard_normal((8, 2))

        def loss():
            return mse_loss_grad(net.predict(X), T)[0]

        Y, cache = net.forward(X)
        _, g = mse_loss_grad(Y, T)
        grads, gx = net.backward(cache, g)
        assert rel_err(grads, numeric_grads(loss, net.params())) < REL_TOL
        Xv = X.copy()

        def loss_x():
            return mse_loss_grad(net.predict(Xv), T)[0]

        assert rel_err([gx], numeric_grads(loss_x, [Xv])) < REL_TOL

    @pytest.mark.parametrize("seed", range(5))
    def test_contrastive_pipeline(self, seed):
        r = np.random.default_rng(seed)
        net = small_net(seed, widths=(3, 6, 4))
        Xi, Xj = r.standard_normal((10, 3)), r.standard_normal((10, 3))
        same = r.random(10) < 0.5
        margin = 2.0
        d = np.linalg.norm(net.predict(Xi) - net.predict(Xj), axis=1)
        # keep away from the hinge kink at distance == margin
        assert np.all(np.abs(d - margin) > 1e-3)

        def loss():
            return contrastive_loss_grad(net.predict(Xi), net.predict(Xj), same, margin)[0]

        Zi, ci = net.forward(Xi)
        Zj, cj = net.forward(Xj)
        _, gi, gj = contrastive_loss_grad(Zi, Zj, same, margin)
        gsum = [a + b for a, b in zip(net.backward(ci, gi)[0], net.backward(cj, gj)[0])]
        assert rel_err(gsum, numeric_grads(loss, net.params())) < REL_TOL

    @pytest.mark.parametrize("seed", range(5))
    def test_cross_entropy_pipeline(self, seed):
        r = np.random.default_rng(seed)
        net = Mlp.init(MlpSpec((4, 3), seed))
        X, y = r.standard_normal((12, 4)), r.integers(0, 3, 12)

        def loss():
            return cross_entropy_loss_grad(net.predict(X), y)[0]

        logits, cache = net.forward(X)
        _, g = cross_entropy_loss_grad(logits, y)
        assert rel_err(net.backward(cache, g)[0], numeric_grads(loss, net.params())) < REL_TOL


class TestLosses:
    def test_mse_zero(self):
        Y = np.ones((3, 2))
        loss, g = mse_loss_grad(Y, Y)
        assert loss == 0.0 and not g.any()

    def test_mse_value(self):
        loss, _ = mse_loss_grad(np.array([[3.0, 4.0], [0.0, 0.0]]), np.zeros((2, 2)))
        assert loss == 12.5

    def test_contrastive_values(self):
        Zi = np.array([[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
        Zj = np.array([[3.0, 4.0], [0.3, 0.4], [3.0, 4.0]])
        loss, _, _ = contrastive_loss_grad(Zi, Zj, np.array([True, False, False]), 1.0)
        assert loss == pytest.approx((25.0 + 0.25 + 0.0) / 3)

    def test_contrastive_zero_distance_subgradient(self):
        Z = np.ones((2, 2))
        _, gi, gj = contrastive_loss_grad(Z, Z, np.array([False, True]), 1.0)
        assert not gi.any() and not gj.any()

    def test_contrastive_bad_margin(self):
        with pytest.raises(ConfigError):
            contrastive_loss_grad(np.ones((1, 2)), np.ones((1, 2)), np.array([True]), 0.0)

    @given(seed=st.integers(0, 2**31))
    def test_cross_entropy_grad_rows_sum_zero(self, seed):
        r = np.random.default_rng(seed)
        _, g = cross_entropy_loss_grad(r.standard_normal((6, 4)), r.integers(0, 4, 6))
        assert np.allclose(g.sum(axis=1), 0.0)


class TestMlp:
    def test_init_seeded(self):
        a, b = Mlp.init(MlpSpec((2, 8, 3), 4)), Mlp.init(MlpSpec((2, 8, 3), 4))
        assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))

    def test_he_variance(self):
        net = Mlp.init(MlpSpec((400, 400), 0))
        assert net.weights[0].var() == pytest.approx(2.0 / 400, rel=0.05)

    def test_width_mismatch(self):
        with pytest.raises(SizeError):
            Mlp.init(MlpSpec((3, 2))).predict(np.ones((4, 2)))

    def test_bad_spec(self):
        with pytest.raises(ConfigError):
            MlpSpec((3,))

    def test_bad_normalization(self):
        with pytest.raises(ConfigError):
            Mlp.init(MlpSpec((2, 2)), input_std=np.array([1.0, 0.0]))
        with pytest.raises(ConfigError):
            Mlp.init(MlpSpec((2, 2)), output_scale=0.0)

    @given(seed=st.integers(0, 2**31), alpha=st.floats(0.01, 100))
    def test_positive_homogeneity(self, seed, alpha):
        net = Mlp.init(MlpSpec((3, 7, 7, 2), seed % 1000))
        X = np.random.default_rng(seed).standard_normal((5, 3))
        assert np.allclose(net.predict(alpha * X), alpha * net.predict(X), rtol=1e-9, atol=1e-12)

    def test_duplicate_rows(self):
        net = Mlp.init(MlpSpec((2, 5, 2), 1))
        Y = net.predict(np.array([[0.3, 0.1], [0.3, 0.1]]))
        assert np.array_equal(Y[0], Y[1])

    def test_roundtrip_bitwise(self, tmp_path):
        net = small_net(3, input_mean=np.array([0.1, 0.2, 0.3]), output_scale=0.0625)
        X = np.random.default_rng(0).standard_normal((4, 3))
        _, cache = net.forward(X)
        net.step(net.backward(cache, np.ones((4, 2)))[0], 1e-2)
        net.save(tmp_path / "m.json", optimizer=True)
        back = Mlp.load(tmp_path / "m.json")
        assert back.step_count == net.step_count
        for a, b in zip(back.params() + back._m + back._v, net.params() + net._m + net._v):
            assert np.array_equal(a, b)
        assert np.array_equal(back.input_mean, net.input_mean)
        assert back.output_scale == net.output_scale
        back.save(tmp_path / "m2.json", optimizer=True)
        assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()

    def test_adam_first_step_size(self):
        # bias-corrected Adam moves every parameter by about lr on step one
        net = Mlp.init(MlpSpec((2, 2), 0))
        before = [p.copy() for p in net.params()]
        net.step([np.full_like(p, 3.0) for p in net.params()], 0.01)
        for a, b in zip(before, net.params()):
            assert np.allclose(a - b, 0.01, rtol=1e-6)

    def test_nonfinite_gradient(self):
        net = Mlp.init(MlpSpec((2, 2), 0))
        with pytest.raises(TrainingError):
            net.step([np.full_like(p, np.nan) for p in net.params()], 0.01)

    def test_copy_independent(self):
        net = Mlp.init(MlpSpec((2, 3), 0))
        cp = net.copy()
        cp.weights[0] += 1.0
        assert not np.array_equal(cp.weights[0], net.weights[0])

    def test_dict_is_json(self):
        json.dumps(Mlp.init(MlpSpec((2, 3, 1), 0)).to_dict(optimizer=True))
