"""Venn-area taxonomy and the synthetic search-log generator."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from drp.errors import ConfigurationError, ContradictionError, GenerationError
from drp.numerics import sigmoid
from drp.synthworld import (
    AREA_TABLE,
    WorldConfig,
    calibrate_offset,
    generate_world,
    label_area,
    pr_correlation,
    summarize,
)

from conftest import SMALL_WORLD

MID_WORLD = dict(n_users=500, n_queries=1000, n_items=5000, n_interactions=100_000)


class TestLabelArea:
    @pytest.mark.parametrize("triple,area", [
        ((0, 0, 0), 0), ((1, 0, 0), 1), ((1, 0, 1), 2), ((1, 1, 1), 3), ((0, 1, 1), 4), ((0, 1, 0), 5),
    ])
    def test_table(self, triple, area):
        assert label_area(*triple) == area
        assert AREA_TABLE[triple] == area

    @pytest.mark.parametrize("triple", [(0, 0, 1), (1, 1, 0)])
    def test_forbidden(self, triple):
        with pytest.raises(ContradictionError):
            label_area(*triple)

    def test_non_bits(self):
        with pytest.raises(ValueError):
            label_area(2, 0, 0)


class TestCalibration:
    @pytest.mark.parametrize("scale,target", [(4.0, 0.25), (2.0, 0.5), (6.0, 0.1)])
    def test_closed_form_k3(self, scale, target):
        # for k = 3 the cosine is uniform on [-1, 1], so the mean has a softplus closed form
        c = calibrate_offset(scale, target, 3)
        a = scale * math.sqrt(3)
        softplus = lambda x: math.log1p(math.exp(x))
        assert (softplus(a + c) - softplus(c - a)) / (2 * a) == pytest.approx(target, abs=1e-10)

    def test_monte_carlo_k8(self):
        c = calibrate_offset(4.0, 0.25, 8)
        rng = np.random.default_rng(0)
        a = rng.standard_normal((400_000, 8))
        b = rng.standard_normal((400_000, 8))
        cos = np.einsum("nk,nk->n", a, b) / np.linalg.norm(a, axis=1) / np.linalg.norm(b, axis=1)
        est = sigmoid(4.0 * math.sqrt(8) * cos + c).mean()
        assert est == pytest.approx(0.25, abs=3e-3)


class TestConfig:
    @pytest.mark.parametrize("bad", [
        dict(gamma=1.5), dict(pi_p=-0.1), dict(n_users=0), dict(latent_dim=1),
        dict(relevance_rate=1.0), dict(pi_r=0.6), dict(pi_p=0.6), dict(scale=0.0),
    ])
    def test_invalid(self, bad):
        with pytest.raises(ConfigurationError):
            WorldConfig(**bad).validate()


class TestGenerator:
    def test_deterministic(self):
        a = generate_world(WorldConfig(**SMALL_WORLD, seed=9))
        b = generate_world(WorldConfig(**SMALL_WORLD, seed=9))
        for name in ("user_id", "query_id", "item_id", "hist", "label", "timestamp", "sensitivity", "area"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
        c = generate_world(WorldConfig(**SMALL_WORLD, seed=10))
        assert not np.array_equal(a.item_id, c.item_id)

    def test_shapes_and_invariants(self, small_world):
        cfg, d = small_world
        assert len(d) == cfg.n_interactions
        assert np.all(np.diff(d.timestamp) > 0)
        assert d.user_id.max() < cfg.n_users and d.item_id.max() < cfg.n_items
        np.testing.assert_array_equal(d.area, AREA_TABLE[d.oracle_p, d.oracle_r, d.label])
        assert ((d.sensitivity >= 0) & (d.sensitivity <= 1)).all()
        # a session shares its user and query
        for col in (d.user_id, d.query_id):
            first = np.zeros(d.session_id.max() + 1, dtype=np.int64)
            first[d.session_id[::-1]] = col[::-1]
            np.testing.assert_array_equal(first[d.session_id], col)

    def test_no_forbidden_triples_and_both_and_gives_click(self, small_world):
        _, d = small_world
        assert (d.area >= 0).all()
        both = (d.oracle_p == 1) & (d.oracle_r == 1)
        assert both.any() and (d.label[both] == 1).all()
        assert not ((d.oracle_p == 0) & (d.oracle_r == 0) & (d.label == 1)).any()

    def test_histories_are_prior_clicks(self, small_world):
        _, d = small_world
        clicked: dict[int, set] = {}
        start = {}
        for i in range(len(d)):
            sid, uid = int(d.session_id[i]), int(d.user_id[i])
            if sid not in start:
                start[sid] = set(clicked.get(uid, set()))
            hist = set(d.hist[i, : d.hist_len[i]].tolist())
            assert hist <= start[sid]
            if d.label[i]:
                clicked.setdefault(uid, set()).add(int(d.item_id[i]))

    def test_degenerate_rates_only_diagonal_areas(self):
        d = generate_world(WorldConfig(**SMALL_WORLD, gamma=0.0, pi_p=0.0, pi_r=0.0, seed=1))
        assert set(np.unique(d.area).tolist()) <= {0, 1, 3, 5}

    def test_area_rates_track_pi(self):
        d = generate_world(WorldConfig(**MID_WORLD, pi_p=0.3, pi_r=0.3, seed=2))
        P, R, y = d.oracle_p == 1, d.oracle_r == 1, d.label == 1
        assert y[P & ~R].mean() == pytest.approx(0.3, abs=0.01)
        assert y[~P & R].mean() == pytest.approx(0.3, abs=0.01)

    def test_sensitivity_shifts_relevance_clicks(self):
        d = generate_world(WorldConfig(**MID_WORLD, seed=4))
        only_r = (d.oracle_p == 0) & (d.oracle_r == 1)
        hi = only_r & (d.sensitivity > 0.5)
        lo = only_r & (d.sensitivity <= 0.5)
        assert d.label[hi].mean() > d.label[lo].mean() + 0.1

    def test_entanglement(self):
        assert pr_correlation(generate_world(WorldConfig(**MID_WORLD, gamma=0.5, seed=5))) > 0.05
        assert abs(pr_correlation(generate_world(WorldConfig(**MID_WORLD, gamma=0.0, seed=5)))) < 0.02

    def test_infeasible_relevant_pool(self):
        cfg = WorldConfig(**SMALL_WORLD, relevance_rate=1e-6, scale=0.1, max_tries=5, gamma=0.5)
        with pytest.raises(GenerationError):
            generate_world(cfg)

    def test_summary(self, small_world):
        cfg, d = small_world
        summ = summarize(d)
        assert sum(summ.area_counts) == cfg.n_interactions
        assert summ.area_counts == np.bincount(d.area, minlength=6).tolist()
        assert "correlation" in summ.format()


@given(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1))
def test_label_area_total(P, R, B):
    if (P, R, B) in ((0, 0, 1), (1, 1, 0)):
        with pytest.raises(ContradictionError):
            label_area(P, R, B)
    else:
        assert 0 <= label_area(P, R, B) <= 5
