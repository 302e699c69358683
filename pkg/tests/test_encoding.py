"""Embedding tables and the (q, v, u) encoder."""

import numpy as np
import pytest

from drp.data import Dataset, SessionExample
from drp.encoding import Encoder, FeatureSpec, encode, init_tables
from drp.errors import ConfigurationError, VocabularyError
from drp.numerics import check_gradients

from conftest import random_batch


def _example(history=(), user=0, query=0, item=0):
    return SessionExample(user, query, item, tuple(history), 1, 0, 0)


class TestInitTables:
    def test_shapes_and_determinism(self):
        spec = FeatureSpec(2, 2, 2, dim=4)
        a, b = init_tables(spec, 7), init_tables(spec, 7)
        assert {k: t.shape for k, t in a.items()} == {"user": (2, 4), "query": (2, 4), "item": (2, 4)}
        for k in a:
            np.testing.assert_array_equal(a[k].value, b[k].value)

    def test_single_row_vocabulary(self):
        tables = init_tables(FeatureSpec(1, 1, 1, dim=3), 0)
        assert tables["user"].shape == (1, 3)

    def test_seeds_differ(self):
        spec = FeatureSpec(3, 3, 3, dim=4)
        assert not np.array_equal(init_tables(spec, 0)["item"].value, init_tables(spec, 1)["item"].value)

    @pytest.mark.parametrize("field", ["n_users", "n_queries", "n_items", "dim"])
    def test_invalid_sizes(self, field):
        kwargs = dict(n_users=2, n_queries=2, n_items=2, dim=4)
        kwargs[field] = 0
        with pytest.raises(ConfigurationError):
            init_tables(FeatureSpec(**kwargs), 0)


class TestEncode:
    def setup_method(self):
        self.spec = FeatureSpec(3, 3, 5, dim=4)
        self.enc = Encoder(self.spec, seed=2)
        self.items = self.enc.tables["item"].value

    def test_empty_history_pools_to_zero(self):
        encode(_example(()), self.enc)
        np.testing.assert_array_equal(self.enc.pooled[0], np.zeros(4))

    def test_repeated_item_pools_to_its_row(self):
        encode(_example((2, 2, 2)), self.enc)
        np.testing.assert_allclose(self.enc.pooled[0], self.items[2], rtol=0, atol=1e-15)

    def test_two_items_pool_to_mean(self):
        encode(_example((1, 4)), self.enc)
        np.testing.assert_allclose(self.enc.pooled[0], (self.items[1] + self.items[4]) / 2, rtol=0, atol=1e-15)

    def test_q_v_are_table_rows_and_u_is_affine(self):
        t = encode(_example((1,), user=2, query=1, item=3), self.enc)
        np.testing.assert_array_equal(t.q, self.enc.tables["query"].value[1])
        np.testing.assert_array_equal(t.v, self.items[3])
        W, b = self.enc.user_proj.W.value, self.enc.user_proj.b.value
        expected = W @ np.concatenate([self.enc.tables["user"].value[2], self.items[1]]) + b
        np.testing.assert_allclose(t.u, expected, rtol=0, atol=1e-14)

    def test_pure_function(self):
        ex = _example((0, 3), user=1, query=2, item=4)
        a, b = encode(ex, self.enc), encode(ex, self.enc)
        for x, y in zip((a.q, a.v, a.u), (b.q, b.v, b.u)):
            np.testing.assert_array_equal(x, y)

    def test_history_truncated_to_most_recent_50(self):
        spec = FeatureSpec(1, 1, 60, dim=2)
        enc = Encoder(spec, 0)
        encode(_example(range(60)), enc)
        np.testing.assert_allclose(enc.pooled[0], enc.tables["item"].value[10:60].mean(axis=0), atol=1e-15)

    @pytest.mark.parametrize("field,kwargs", [
        ("user_id", dict(user=3)), ("query_id", dict(query=9)), ("item_id", dict(item=5)),
        ("history", dict(history=(1, 7))),
    ])
    def test_out_of_vocabulary_names_field(self, field, kwargs):
        with pytest.raises(VocabularyError) as err:
            encode(_example(**kwargs), self.enc)
        assert err.value.field == field


def test_encoder_gradients(small_spec):
    enc = Encoder(small_spec, seed=1)
    batch = random_batch(small_spec, 9, seed=4)
    rng = np.random.default_rng(0)
    cq, cv, cu = (rng.normal(size=(9, small_spec.dim)) for _ in range(3))

    def closure(backward):
        t = enc.forward(batch)
        if backward:
            enc.backward(cq, cv, cu)
        return float(np.sum(cq * t.q) + np.sum(cv * t.v) + np.sum(cu * t.u))

    report = check_gradients(closure, enc.params, tolerance=1e-5, n_samples=200)
    assert report.passed, report.summary()


def test_pooled_gradient_is_upstream_over_length():
    spec = FeatureSpec(1, 1, 4, dim=3)
    enc = Encoder(spec, 0)
    batch = Dataset.from_examples([_example((1, 3, 3))])
    enc.forward(batch)
    enc.tables["item"].grad[:] = 0
    du = np.array([[1.0, -2.0, 0.5]])
    enc.backward(np.zeros((1, 3)), np.zeros((1, 3)), du)
    d_pooled = (du @ enc.user_proj.W.value)[0, 3:]
    g = enc.tables["item"].grad
    item0 = np.zeros(3)  # item 0 is the candidate, whose dv is zero here
    np.testing.assert_allclose(g[1], d_pooled / 3, atol=1e-15)
    np.testing.assert_allclose(g[3], 2 * d_pooled / 3, atol=1e-15)
    np.testing.assert_array_equal(g[0], item0)
