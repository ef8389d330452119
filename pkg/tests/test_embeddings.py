import numpy as np
import pytest

from conftest import make_session
from neuclick.embeddings import (
    _ridge_rows,
    als_objective,
    build_embeddings,
    init_user_from_history,
    score_mf,
    train_als,
)
from neuclick.errors import CatalogError, ConfigurationError


class TestALS:
    def test_rank_one_reconstruction(self):
        src = train_als(np.ones((2, 2)), rank=1, iterations=15, reg=1e-6, seed=0)
        np.testing.assert_allclose(src.user_table.data @ src.item_table.data.T, 1.0, atol=1e-3)

    def test_zero_matrix_shrinks_to_zero(self):
        src = train_als(np.zeros((4, 5)), rank=2, iterations=3, reg=0.1)
        assert np.abs(src.user_table.data @ src.item_table.data.T).max() < 1e-12

    def test_objective_non_increasing(self):
        r = (np.random.default_rng(0).random((20, 30)) < 0.2).astype(float)
        src = train_als(r, rank=5, iterations=10, reg=0.1, seed=1)
        trace = np.array(src.objective_trace)
        assert len(trace) == 20
        assert (np.diff(trace) <= 1e-9 * trace[:-1]).all()

    def test_half_step_local_optimality(self):
        rng = np.random.default_rng(2)
        r = (rng.random((6, 8)) < 0.3).astype(float)
        q = rng.normal(size=(8, 3))
        p = _ridge_rows(r, q, 0.1)
        base = als_objective(r, p, q, 0.1)
        for u in range(6):
            for k in range(3):
                for delta in (1e-3, -1e-3):
                    p2 = p.copy()
                    p2[u, k] += delta
                    assert als_objective(r, p2, q, 0.1) >= base

    def test_rank_bounds(self):
        with pytest.raises(ConfigurationError):
            train_als(np.ones((2, 3)), rank=3)


class TestUserInit:
    def test_average(self):
        np.testing.assert_array_equal(init_user_from_history([0, 1], np.eye(2)), [0.5, 0.5])

    def test_empty_history(self):
        np.testing.assert_array_equal(init_user_from_history([], np.ones((3, 4))), np.zeros(4))

    def test_single_click(self):
        table = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_array_equal(init_user_from_history([3], table), table[3])


class TestScoreMF:
    def test_orthogonal(self):
        src = _manual([[1.0, 0.0]], [[0.0, 1.0]])
        assert score_mf(0, 0, src) == 0.0

    def test_ones(self):
        assert score_mf(0, 0, _manual([[1.0, 1.0]], [[1.0, 1.0]])) == 2.0

    def test_brute_force(self):
        rng = np.random.default_rng(5)
        p, q = rng.normal(size=(4, 3)), rng.normal(size=(6, 3))
        src = _manual(p, q)
        for u in range(4):
            for i in range(6):
                assert score_mf(u, i, src) == pytest.approx(sum(p[u, k] * q[i, k] for k in range(3)), abs=1e-12)

    def test_out_of_range(self):
        with pytest.raises(CatalogError):
            score_mf(3, 0, _manual([[1.0]], [[1.0]]))


def _manual(p, q):
    from neuclick.diffmath import Tensor
    from neuclick.embeddings import EmbeddingSource
    p, q = np.asarray(p, float), np.asarray(q, float)
    return EmbeddingSource("svd", Tensor(q), Tensor(p), {str(i): i for i in range(len(p))})


class TestBuild:
    sessions = [make_session([4, 4], user=f"u{i % 3}", seed=i, sid=f"s{i}") for i in range(9)]

    @pytest.mark.parametrize("kind", ["svd", "learnable"])
    def test_shapes(self, kind):
        src = build_embeddings(kind, self.sessions, 20, dim=3, seed=1)
        assert src.item_table.shape == (20, 3) and src.user_table.shape == (3, 3)
        assert src.trainable == (kind == "learnable")
        assert bool(src.parameters()) == (kind == "learnable")

    def test_learnable_init_range(self):
        src = build_embeddings("learnable", self.sessions, 20, dim=4, seed=1)
        assert np.abs(src.item_table.data).max() <= 0.1

    def test_unknown_user_falls_back(self, caplog):
        src = build_embeddings("svd", self.sessions, 20, dim=3, seed=1)
        with caplog.at_level("INFO"):
            out = src.users(["u0", "new"], {"new": [1, 2]})
            src.users(["new"], {"new": [1, 2]})
        np.testing.assert_allclose(out.data[1], src.item_table.data[[1, 2]].mean(0))
        np.testing.assert_array_equal(src.users(["ghost"]).data, 0.0)
        assert sum("'new'" in r.message for r in caplog.records) == 1

    def test_external_requires_table(self):
        with pytest.raises(ConfigurationError):
            build_embeddings("external", self.sessions, 20)
