import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from specalign.errors import ConfigError, ConnectivityError, DegenerateScaleError, SizeError
from specalign.graph import GraphConfig, build_graph, dump_coo, knn_mask, laplacian

from conftest import cliques

points = arrays(np.float64, st.tuples(st.integers(12, 40), st.just(2)),
                elements=st.floats(-10, 10), unique=True)


def _spread(X):
    # unique entries can still give duplicate rows; jitter keeps rows distinct
    return X + 1e-3 * np.arange(X.shape[0])[:, None]


class TestConfig:
    @pytest.mark.parametrize("kw", [{"k_neighbors": 0}, {"k_neighbors": 2.5}, {"sigma": -1.0},
                                    {"sigma": float("inf")}, {"laplacian_kind": "other"},
                                    {"self_loop_epsilon": -1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            GraphConfig(**kw)


class TestBuildGraph:
    @given(X=points, k=st.integers(1, 8))
    def test_symmetric_nonnegative(self, X, k):
        g = build_graph(_spread(X), GraphConfig(k))
        W = g.W.toarray()
        assert np.array_equal(W, W.T)
        assert W.min() >= 0 and np.all(np.diag(W) == 0)
        assert np.allclose(g.degrees, W.sum(axis=1))

    @given(X=points, k=st.integers(1, 8))
    def test_union_symmetrization(self, X, k):
        X = _spread(X)
        g = build_graph(X, GraphConfig(k))
        sq = ((X[:, None] - X[None]) ** 2).sum(-1)
        M = knn_mask(sq, k)
        assert np.array_equal(g.W.toarray() > 0, M | M.T)
        # every node keeps at least its own k neighbours
        assert np.all((g.W.toarray() > 0).sum(axis=1) >= k)

    def test_median_sigma(self):
        X = np.array([[0.0, 0], [1, 0], [3, 0], [6, 0]])
        g = build_graph(X, GraphConfig(1))
        # nearest-neighbour distances 1, 1, 2, 3 -> median 1.5
        assert g.sigma == pytest.approx(1.5)
        assert g.W[0, 1] == pytest.approx(np.exp(-1.0 / (2 * 1.5 ** 2)))

    def test_fixed_sigma(self):
        g = build_graph(np.array([[0.0], [2.0], [5.0]]), GraphConfig(1, sigma=2.0))
        assert g.sigma == 2.0 and g.W[0, 1] == pytest.approx(np.exp(-0.5))

    def test_duplicates_need_fixed_sigma(self):
        X = np.zeros((5, 2))
        with pytest.raises(DegenerateScaleError):
            build_graph(X, GraphConfig(2))

    def test_too_few_nodes(self):
        with pytest.raises(SizeError):
            build_graph(np.zeros((3, 2)), GraphConfig(3))

    def test_underflow_isolates(self):
        X = np.array([[0.0], [1.0], [1000.0], [1001.0]])
        with pytest.raises(ConnectivityError) as info:
            build_graph(X, GraphConfig(2, sigma=0.01), node_ids=[10, 11, 12, 13])
        assert info.value.node in (10, 11, 12, 13)

    def test_self_loops(self):
        g = build_graph(np.array([[0.0], [1.0], [2.0]]), GraphConfig(1, self_loop_epsilon=0.5))
        assert np.all(g.W.diagonal() == 0.5)


class TestLaplacian:
    @given(X=points, kind=st.sampled_from(["unnormalized", "sym_normalized"]))
    def test_psd_and_nullspace(self, X, kind):
        g = build_graph(_spread(X), GraphConfig(4))
        L = laplacian(g, kind)
        w = np.linalg.eigvalsh(L)
        assert w.min() > -1e-10
        v = np.ones(g.m) if kind == "unnormalized" else np.sqrt(g.degrees)
        assert np.linalg.norm(L @ v) < 1e-10 * max(1.0, np.linalg.norm(v))
        if kind == "sym_normalized":
            assert w.max() <= 2 + 1e-10

    @given(X=points)
    def test_random_walk_stochastic(self, X):
        g = build_graph(_spread(X), GraphConfig(4))
        rw = laplacian(g, "random_walk")
        assert np.allclose(rw.P.sum(axis=0), 1.0)
        Ln = laplacian(g, "sym_normalized")
        assert np.allclose(rw.S, np.eye(g.m) - Ln, atol=1e-14)
        assert np.allclose(np.sort(np.linalg.eigvals(rw.P).real),
                           np.sort(1.0 - np.linalg.eigvalsh(Ln)), atol=1e-10)

    def test_components_in_nullspace(self):
        X, _ = cliques([5, 6, 7])
        g = build_graph(X, GraphConfig(3))
        w = np.linalg.eigvalsh(laplacian(g, "unnormalized"))
        assert np.sum(w < 1e-10) == 3

    def test_unknown_kind(self):
        g = build_graph(np.array([[0.0], [1.0], [2.0]]), GraphConfig(1))
        with pytest.raises(ConfigError):
            laplacian(g, "bogus")


def test_dump_coo(tmp_path):
    g = build_graph(np.array([[0.0], [1.0], [3.0]]), GraphConfig(1))
    dump_coo(g, tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert [ln.split(",")[:2] for ln in lines] == [["0", "1"], ["1", "2"]]
    assert float(lines[0].split(",")[2]) == g.W[0, 1]
