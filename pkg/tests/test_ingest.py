import json
import shutil
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from conftest import sessions as session_strategy
from neuclick.datamodel import validate_catalog
from neuclick.diffmath import Rng
from neuclick.errors import CatalogError, ConfigurationError, ParseError
from neuclick.evaluation import roc_auc
from neuclick.ingest import (
    OracleUserModel,
    generate_synthetic,
    load_canonical,
    load_contentwise,
    load_external_embeddings,
    load_rl4rs,
    write_canonical,
    write_embedding_table,
)

FIXTURES = Path(__file__).parent / "fixtures"


class TestCanonical:
    def test_single_line(self, tmp_path):
        path = tmp_path / "one.jsonl"
        path.write_text(json.dumps({"user_id": "a", "session_id": "s",
                                    "slates": [{"items": [1, 2, 3], "clicks": [0, 1, 0]}]}) + "\n")
        (sess,) = load_canonical(path)
        assert len(sess.slates) == 1 and sum(sess.slates[0].clicks) == 1

    def test_click_order_permutation_rule(self, tmp_path):
        ok = {"user_id": "a", "session_id": "s",
              "slates": [{"items": [1, 2, 3], "clicks": [0, 1, 1], "click_order": [2, 1]}]}
        bad = {"user_id": "a", "session_id": "t",
               "slates": [{"items": [1, 2, 3], "clicks": [0, 1, 0], "click_order": [0]}]}
        path = tmp_path / "x.jsonl"
        path.write_text(json.dumps(ok) + "\n")
        assert load_canonical(path)[0].slates[0].click_order == (2, 1)
        path.write_text(json.dumps(ok) + "\n" + json.dumps(bad) + "\n")
        with pytest.raises(ParseError, match="line 2"):
            load_canonical(path)

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "x.jsonl"
        path.write_text('{"user_id": "a", "session_id": "s", "slates": [{"items": [1], "clicks": [0]}]}\n{oops\n')
        with pytest.raises(ParseError, match="line 2"):
            load_canonical(path)

    def test_unknown_item(self, tmp_path):
        path = tmp_path / "x.jsonl"
        path.write_text('{"user_id": "a", "session_id": "s", "slates": [{"items": [9], "clicks": [0]}]}\n')
        with pytest.raises(CatalogError):
            load_canonical(path, n_items=5)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(session_strategy(), min_size=1, max_size=6))
    def test_round_trip(self, sess):
        import tempfile
        with tempfile.TemporaryDirectory() as d:
            path = Path(d) / "rt.jsonl"
            write_canonical(sess, path)
            assert load_canonical(path) == sess


class TestContentWise:
    def test_fixture(self):
        data = load_contentwise(FIXTURES / "contentwise")
        assert data.item_keys == ["10", "20", "30", "40"]
        got = [(s.user_id, [(sl.items, sl.clicks, list(sl.click_order)) for sl in s.slates]) for s in data.sessions]
        assert got == [
            ("7", [([0, 1], [1, 0], [0]), ([2, 0, 3], [1, 0, 1], [0, 2])]),
            ("7", [([3, 2], [0, 0], [])]),
            ("9", [([1, 3], [1, 0], [0])]),
        ]

    def _single(self, tmp_path, interactions):
        (tmp_path / "impressions.csv").write_text("user_id,utc_ts_milliseconds,recommended_series_list\n"
                                                  '1,0,"[5, 6]"\n')
        (tmp_path / "interactions.csv").write_text("user_id,utc_ts_milliseconds,series_id\n" + interactions)
        return load_contentwise(tmp_path).sessions[0].slates[0].clicks

    def test_join_inside_window(self, tmp_path):
        assert self._single(tmp_path, "1,60000,5\n") == [1, 0]

    def test_interaction_outside_window(self, tmp_path):
        assert self._single(tmp_path, "1,1860000,5\n") == [0, 0]

    def test_empty_interactions(self, tmp_path):
        assert self._single(tmp_path, "") == [0, 0]

    def test_missing_columns_listed(self, tmp_path):
        shutil.copy(FIXTURES / "contentwise" / "interactions.csv", tmp_path)
        (tmp_path / "impressions.csv").write_text("uid,ts\n1,2\n")
        with pytest.raises(ConfigurationError, match="recommended_series_list.*user_id.*utc_ts_milliseconds"):
            load_contentwise(tmp_path)

    def test_column_map(self, tmp_path):
        (tmp_path / "impressions.csv").write_text("who,when,list\n1,0,\"[5, 6]\"\n")
        (tmp_path / "interactions.csv").write_text("who,when,series\n1,10,6\n")
        cmap = {"user": "who", "timestamp": "when", "series_list": "list", "interaction_user": "who",
                "interaction_timestamp": "when", "interaction_series": "series"}
        assert load_contentwise(tmp_path, cmap).sessions[0].slates[0].clicks == [0, 1]


class TestRL4RS:
    def test_fixture(self):
        data = load_rl4rs(FIXTURES / "rl4rs")
        first = data.sessions[0]
        assert first.session_id == "100"
        assert len(first.slates[0]) == 9 and sum(first.slates[0].clicks) == 3
        assert all(sl.click_order is None for s in data.sessions for sl in s.slates)
        assert not data.has_click_order
        assert data.n_items == 18 and data.external.dim == 3
        np.testing.assert_allclose(data.external.item_vectors[0], [0.1, -0.05, 1.0])
        validate_catalog(data.sessions, data.n_items)

    def test_mismatched_embedding_dimension(self, tmp_path):
        for f in ("slates.csv", "item_embeddings.csv"):
            shutil.copy(FIXTURES / "rl4rs" / f, tmp_path)
        (tmp_path / "user_embeddings.csv").write_text("id,dim0,dim1\n100,1,2\n")
        with pytest.raises(ConfigurationError):
            load_rl4rs(tmp_path)

    def test_ragged_embedding_rows(self, tmp_path):
        (tmp_path / "e.csv").write_text("id,dim0,dim1\n1,0.5,0.5\n2,0.5\n")
        with pytest.raises(ConfigurationError):
            load_external_embeddings(tmp_path / "e.csv")


class TestSyntheticOracle:
    def test_probabilities_in_open_interval(self):
        o = OracleUserModel.random(5, 10, 4, seed=1)
        sess = generate_synthetic(o, 20, 2, 5, Rng(0))
        probs = np.concatenate([o.session_probabilities(s) for s in sess])
        assert ((probs > 0) & (probs < 1)).all()

    def test_zero_affinity_click_rate(self):
        o = OracleUserModel(np.zeros((3, 2)), np.zeros((20, 2)), np.zeros(10), 0.0)
        sess = generate_synthetic(o, 10_000, 1, 10, Rng(3))
        rate = np.mean([c for s in sess for c in s.slates[0].clicks])
        assert abs(rate - 0.5) <= 0.01

    def test_position_bias_concentrates_clicks(self):
        bias = np.array([0.0] + [-30.0] * 4)
        o = OracleUserModel(np.zeros((2, 2)), np.zeros((10, 2)), bias, 0.0)
        sess = generate_synthetic(o, 500, 2, 5, Rng(4))
        clicks = np.array([sl.clicks for s in sess for sl in s.slates])
        assert clicks[:, 1:].sum() == 0 and clicks[:, 0].sum() > 0

    def test_monte_carlo_matches_closed_form(self):
        rng = np.random.default_rng(11)
        o = OracleUserModel(rng.normal(size=(1, 3)), rng.normal(size=(2, 3)), np.array([0.2, -0.4]), 0.7)
        sess = generate_synthetic(o, 10_000, 1, 2, Rng(12))
        counts = {}
        for s in sess:
            c = 0
            for imp in s.slates[0].impressions:
                key = (imp.item_id, imp.position, c)
                hits, n = counts.get(key, (0, 0))
                counts[key] = (hits + imp.clicked, n + 1)
                c += imp.clicked
        assert len(counts) == 6
        for (item, pos, c), (hits, n) in counts.items():
            assert abs(hits / n - o.click_probability(0, item, pos, c)) < 0.02, (item, pos, c, n)

    def test_byte_reproducible(self, tmp_path):
        o = OracleUserModel.random(5, 30, 4, seed=2)
        write_canonical(generate_synthetic(o, 50, 3, 8, Rng(9)), tmp_path / "a.jsonl")
        write_canonical(generate_synthetic(o, 50, 3, 8, Rng(9)), tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_click_order_is_draw_order(self):
        o = OracleUserModel.random(5, 30, 4, seed=2)
        for s in generate_synthetic(o, 20, 2, 8, Rng(1)):
            for sl in s.slates:
                assert list(sl.click_order) == [p for p, c in enumerate(sl.clicks) if c]

    def test_bayes_auc_above_half(self):
        o = OracleUserModel.random(20, 50, 4, seed=5)
        sess = generate_synthetic(o, 300, 3, 8, Rng(6))
        scores = np.concatenate([o.session_probabilities(s) for s in sess])
        labels = np.concatenate([[c for sl in s.slates for c in sl.clicks] for s in sess])
        assert roc_auc(scores, labels) > 0.5

    def test_slate_longer_than_catalog(self):
        o = OracleUserModel.random(2, 4, 2, max_slate_len=8)
        with pytest.raises(ConfigurationError):
            generate_synthetic(o, 1, 1, 5, Rng(0))

    def test_external_export_round_trip(self, tmp_path):
        o = OracleUserModel.random(3, 6, 2, seed=8)
        ext = o.external_embeddings()
        write_embedding_table(tmp_path / "i.csv", [str(i) for i in range(6)], ext.item_vectors)
        write_embedding_table(tmp_path / "u.csv", list(ext.user_vectors), np.stack(list(ext.user_vectors.values())))
        back = load_external_embeddings(tmp_path / "i.csv", tmp_path / "u.csv")
        np.testing.assert_array_equal(back.item_vectors, o.item_vectors)
        np.testing.assert_array_equal(back.user_vectors["u2"], o.user_vectors[2])
