import numpy as np
import pytest

from specalign import metrics as M
from specalign.dataset import Dataset, generate_toy, train_test_split
from specalign.errors import ConfigError, PreconditionError, SizeError, TrainingError
from specalign.graph import GraphConfig
from specalign.trainer import (JointConfig, TrainConfig, anchor_consistency, infer, init_model,
                               init_reference, train, train_joint)


@pytest.fixture(scope="module")
def blobs():
    return generate_toy("gaussian_blobs", 1200, 0.3, seed=0)


def fast_cfg(**kw):
    base = dict(K=3, m=128, l=15, iterations=60, hidden=(32, 32), skip_trivial=False, seed=0)
    return TrainConfig(**{**base, **kw})


class TestConfig:
    @pytest.mark.parametrize("kw", [{"l": 2}, {"m": 10, "l": 15}, {"iterations": -1},
                                    {"min_eigengap": 1.0}, {"output_scale": 0.0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            fast_cfg(**kw).validate(1000)

    def test_m_above_n(self):
        with pytest.raises(ConfigError):
            fast_cfg(m=2000).validate(1000)

    def test_default_output_scale(self):
        assert TrainConfig(m=256).resolved_output_scale() == pytest.approx(1 / 16)


class TestInitReference:
    def test_deterministic(self, blobs):
        a, _ = init_reference(blobs, fast_cfg())
        b, _ = init_reference(blobs, fast_cfg())
        assert np.array_equal(a.anchor_ids, b.anchor_ids)
        assert np.array_equal(a.ref_coords, b.ref_coords)

    def test_l_equals_m(self, blobs):
        frame, ref = init_reference(blobs, fast_cfg(m=30, l=30))
        assert np.array_equal(np.sort(ref.node_ids), np.sort(frame.anchor_ids))
        assert np.array_equal(frame.ref_coords, ref.rows(frame.anchor_ids))

    def test_same_cluster_anchors_closer(self, blobs):
        frame, _ = init_reference(blobs, fast_cfg())
        y = blobs.labels[frame.anchor_ids]
        D = np.linalg.norm(frame.ref_coords[:, None] - frame.ref_coords[None], axis=2)
        same = (y[:, None] == y[None]) & ~np.eye(y.size, dtype=bool)
        assert D[same].max() < D[y[:, None] != y[None]].min()


class TestTrain:
    def test_zero_iterations(self, blobs):
        cfg = fast_cfg(iterations=0)
        st = train(blobs, cfg)
        assert st.history == []
        init = init_model(blobs, cfg)
        assert all(np.array_equal(a, b) for a, b in zip(st.model.params(), init.params()))

    def test_history_and_frame(self, blobs):
        st = train(blobs, fast_cfg(iterations=20))
        assert [r["iter"] for r in st.history] == list(range(1, 21))
        assert all(np.isfinite(r["loss"]) and r["align_rmse"] >= 0 for r in st.history)
        frame, _ = init_reference(blobs, fast_cfg())
        assert np.array_equal(st.frame.ref_coords, frame.ref_coords)

    def test_deterministic(self, blobs):
        a = train(blobs, fast_cfg(iterations=15))
        b = train(blobs, fast_cfg(iterations=15))
        assert a.history == b.history
        assert all(np.array_equal(x, y) for x, y in zip(a.model.params(), b.model.params()))

    def test_learns_blobs(self, blobs):
        st = train(blobs, fast_cfg(iterations=150))
        pred = M.kmeans(infer(st.model, blobs.features), 3, seed=0)
        assert M.nmi(blobs.labels, pred) > 0.95
        early = np.mean([r["loss"] for r in st.history[:20]])
        late = np.mean([r["loss"] for r in st.history[-20:]])
        assert late < early

    def test_eval_metrics_recorded(self, blobs):
        st = train(blobs, fast_cfg(iterations=10, eval_every=5), eval_ds=blobs)
        assert [("metrics" in r) for r in st.history] == [i % 5 == 4 for i in range(10)]

    def test_ransac_path(self, blobs):
        from specalign.align import RansacConfig
        st = train(blobs, fast_cfg(iterations=5, ransac=RansacConfig(50, min_inliers=4)))
        assert len(st.history) == 5

    def test_undetermined_subspace_aborts(self):
        # three far clusters, one non-trivial vector: the zero eigenvalue is
        # repeated at the cut, every batch is rejected and training aborts
        r = np.random.default_rng(0)
        X = np.vstack([r.normal(c, 0.01, (200, 2)) for c in (0, 100, 200)])
        ds = Dataset(X, np.repeat([0, 1, 2], 200))
        cfg = TrainConfig(K=1, m=60, l=9, iterations=3, skip_trivial=True, hidden=(8,),
                          graph=GraphConfig(5))
        with pytest.raises(TrainingError) as info:
            train(ds, cfg)
        assert info.value.iteration == 0


class TestInfer:
    def test_width_check(self, blobs):
        model = init_model(blobs, fast_cfg())
        with pytest.raises(SizeError):
            infer(model, np.ones((3, 5)))

    def test_anchor_rmse_after_training(self, blobs):
        st = train(blobs, fast_cfg(iterations=300))
        A = infer(st.model, blobs.features[st.frame.anchor_ids])
        rmse = np.sqrt(np.mean(np.sum((A - st.frame.ref_coords) ** 2, axis=1)))
        assert rmse < 0.05

    def test_extrapolation_finite_and_lipschitz(self, blobs):
        model = train(blobs, fast_cfg(iterations=50)).model
        g = np.linspace(-6, 6, 61)
        G = np.array(np.meshgrid(g, g)).reshape(2, -1).T
        Y = infer(model, G).reshape(61, 61, -1)
        assert np.all(np.isfinite(Y))
        step = np.linalg.norm(np.diff(Y, axis=0), axis=2).max() / (g[1] - g[0])
        # a ReLU network is Lipschitz with constant at most the product of
        # the layer norms (inputs are standardized first)
        bound = model.output_scale * np.prod([np.linalg.norm(W, 2) for W in model.weights])
        assert step <= bound / model.input_std.min() + 1e-9


class TestAnchorConsistency:
    def test_alignment_shrinks_spread(self, blobs):
        raw, reg = anchor_consistency(blobs, fast_cfg(), n_batches=6, seed=1)
        assert raw.shape == reg.shape == (6, 15, 3)
        assert reg.std(axis=0).max() < raw.std(axis=0).max()


@pytest.fixture(scope="module")
def moons():
    ds = generate_toy("three_moons", 1500, 0.02, seed=0)
    tr, te = train_test_split(ds, 0.2, 0)
    return ds.subset(tr), ds.subset(te)


class TestJoint:
    def jcfg(self, **kw):
        base = dict(K=2, m=128, l=15, feature_iters=60, spectral_period=10, eval_every=2,
                    spectral_hidden=(32, 32), feature_hidden=(16,), seed=0)
        return JointConfig(**{**base, **kw})

    def test_needs_labels(self, moons):
        with pytest.raises(PreconditionError):
            train_joint(Dataset(moons[0].features), self.jcfg())

    def test_history_layout(self, moons):
        res = train_joint(moons[0], self.jcfg(), val_ds=moons[1])
        assert [r["spectral_step"] for r in res.history] == [1, 2, 3, 4, 5, 6]
        assert [r["iter"] for r in res.history] == [10, 20, 30, 40, 50, 60]
        with_metrics = [r for r in res.history if "metrics" in r]
        assert len(with_metrics) == 3
        assert {"nmi_train", "nmi_val", "nmi_analytic"} <= set(with_metrics[0]["metrics"])

    def test_frozen_features_identity(self, moons):
        res = train_joint(moons[0], self.jcfg(feature_lr=0.0, eval_every=0))
        devs = [r["tg_deviation"] for r in res.history]
        assert all(r["frame_rolled"] for r in res.history)
        assert max(devs) < 1e-8

    def test_ablation_identity(self, moons):
        res = train_joint(moons[0], self.jcfg(align_features=False, eval_every=0))
        assert all(r["tg_deviation"] in (0.0, None) for r in res.history)

    def test_deterministic(self, moons):
        a = train_joint(moons[0], self.jcfg(), val_ds=moons[1])
        b = train_joint(moons[0], self.jcfg(), val_ds=moons[1])
        assert a.history == b.history
