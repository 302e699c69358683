"""Preference editing, retraction, and the fixed/global/local fusion rules."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from drp.errors import DegeneracyError, DimensionError, DomainError
from drp.numerics import make_rng
from drp.reconstruction import (
    CLAMP_LO,
    EditLayer,
    FusionParams,
    area_probabilities,
    decode_preference,
    edit_preference,
    fixed_fusion,
    global_fusion,
    local_fusion,
    orthonormality_defect,
    random_projection,
    retract,
)

H, D = 32, 16
unit = st.floats(0.0, 1.0)
open_unit = st.floats(1e-6, 1 - 1e-6)


class TestRetract:
    def test_orthonormal_input_unchanged(self):
        O = random_projection(D, H, make_rng(0))
        np.testing.assert_allclose(retract(O), O, atol=1e-12)

    def test_scaled_axes_normalized(self):
        O = np.zeros((2, 5))
        O[0, 0], O[1, 1] = 2.0, 3.0
        np.testing.assert_allclose(retract(O), np.eye(2, 5), atol=1e-15)

    @pytest.mark.parametrize("seed", range(100))
    def test_gaussian_becomes_orthonormal(self, seed):
        O = retract(make_rng(seed).normal(size=(D, H)))
        assert orthonormality_defect(O) < 1e-10

    def test_preserves_row_space(self):
        A = make_rng(1).normal(size=(4, 9))
        O = retract(A)
        # every original row is reproduced by projecting onto the new rows
        np.testing.assert_allclose(A @ O.T @ O, A, atol=1e-12)

    def test_rank_deficient(self):
        O = np.ones((2, 4))
        with pytest.raises(DegeneracyError):
            retract(O)

    def test_more_rows_than_columns(self):
        with pytest.raises(DimensionError):
            retract(np.ones((5, 3)))


class TestEdit:
    def setup_method(self):
        self.O = random_projection(D, H, make_rng(3))
        self.rng = make_rng(4)

    def test_equal_inputs_vanish(self):
        e = self.rng.normal(size=H)
        np.testing.assert_array_equal(edit_preference(e, e, self.O), np.zeros(H))

    def test_full_rank_identity(self):
        e_p, e_r = self.rng.normal(size=(2, H))
        np.testing.assert_allclose(edit_preference(e_p, e_r, np.eye(H)), e_p - e_r, atol=1e-15)

    def test_matches_explicit_projector(self):
        e_p = self.rng.normal(size=H)
        P = self.O.T @ self.O
        np.testing.assert_allclose(edit_preference(e_p, np.zeros(H), self.O), P @ e_p, atol=1e-13)

    @given(st.integers(0, 2**31))
    def test_projection_laws(self, seed):
        rng = make_rng(seed)
        e_p, e_r = rng.normal(size=(2, H))
        O = self.O
        once = edit_preference(e_p, e_r, O)
        np.testing.assert_allclose(once, edit_preference(e_p - e_r, np.zeros(H), O), atol=1e-10)
        np.testing.assert_allclose(edit_preference(once, np.zeros(H), O), once, atol=1e-10)
        residual = once - O.T @ (O @ once)
        assert np.linalg.norm(residual) < 1e-10

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            edit_preference(np.ones(H), np.ones(H - 1), self.O)

    def test_layer_matches_function(self):
        layer = EditLayer(D, H, make_rng(0))
        e_p, e_r = self.rng.normal(size=(2, 5, H))
        np.testing.assert_allclose(layer.forward(e_p, e_r), edit_preference(e_p, e_r, layer.O.value), atol=1e-14)

    def test_non_orthogonal_layer_never_retracts(self):
        layer = EditLayer(D, H, make_rng(0), orthogonal=False)
        layer.enc.value += 0.3
        before = layer.enc.value.copy()
        layer.retract_()
        assert layer.retractions == 0
        np.testing.assert_array_equal(layer.enc.value, before)


class TestDecode:
    def test_zero_weights(self):
        assert decode_preference(np.ones(4), np.zeros(4), np.zeros(1)) == 0.5

    def test_zero_input(self):
        assert decode_preference(np.zeros(4), np.arange(4.0), np.zeros(1)) == 0.5

    def test_ln3(self):
        e = np.array([math.log(3.0), 0.0])
        assert decode_preference(e, np.array([1.0, 5.0]), np.zeros(1)) == pytest.approx(0.75, abs=1e-15)


class TestFixedFusion:
    def test_product(self):
        assert fixed_fusion(0.8, 0.5, 1.0) == pytest.approx(0.4, abs=1e-16)

    @given(open_unit, open_unit)
    def test_delta_zero_ignores_relevance(self, p, r):
        assert fixed_fusion(p, r, 0.0) == p

    @given(open_unit, st.floats(0.0, 3.0))
    def test_unit_relevance(self, p, delta):
        assert fixed_fusion(p, 1.0, delta) == p

    def test_zero_relevance_negative_delta(self):
        with pytest.raises(DomainError):
            fixed_fusion(0.5, 0.0, -1.0)


class TestAreas:
    def test_corner(self):
        assert area_probabilities(1.0, 1.0).as_tuple() == (1.0, 0.0, 0.0, 0.0)

    def test_symmetric(self):
        assert area_probabilities(0.5, 0.5).as_tuple() == (0.25, 0.25, 0.25, 0.25)

    def test_hand_values(self):
        np.testing.assert_allclose(area_probabilities(0.8, 0.5).as_tuple(), (0.4, 0.4, 0.1, 0.1), atol=1e-16)

    @given(unit, unit)
    def test_normalized(self, p, r):
        ap = area_probabilities(p, r)
        assert abs(float(ap.total()) - 1.0) < 1e-12
        assert all(0.0 <= float(x) <= 1.0 for x in ap.as_tuple())


class TestGlobalFusion:
    def test_hand_value(self):
        ap = area_probabilities(0.8, 0.5)
        assert global_fusion(ap, 0.5, 1.0, (1, 0.5), (1, 0.5)) == pytest.approx(0.675, abs=1e-15)

    @given(open_unit, open_unit, st.floats(0.0, 3.0))
    def test_reduces_to_fixed_fusion(self, p, r, delta):
        ap = area_probabilities(p, r)
        assert abs(global_fusion(ap, r, delta, (1, 0), (1, 0)) - fixed_fusion(p, r, delta)) < 1e-12

    @given(open_unit, open_unit, st.floats(0.0, 3.0))
    def test_all_ones_collapses(self, p, r, delta):
        ap = area_probabilities(p, r)
        assert global_fusion(ap, r, delta, (1, 1), (1, 1)) == pytest.approx(r ** (delta - 1), rel=1e-12)

    def test_zero_relevance_small_delta(self):
        with pytest.raises(DomainError):
            global_fusion(area_probabilities(0.5, 0.0), 0.0, 0.5, (1, 0.5), (1, 0.5))

    def test_default_init(self):
        fp = FusionParams(8, make_rng(0))
        assert tuple(fp.alpha.value) == (1.0, 0.5) and tuple(fp.beta.value) == (1.0, 0.5)


class TestLocalFusion:
    def setup_method(self):
        self.fp = FusionParams(4, make_rng(0))
        rng = make_rng(1)
        self.q, self.v, self.u = rng.normal(size=(3, 4))

    def _set_logit(self, logit):
        hidden, out = self.fp.corrector.layers
        hidden.W.value[:] = 0.0
        out.W.value[:] = 0.0
        out.b.value[:] = logit

    def test_neutral(self):
        self._set_logit(0.0)
        assert local_fusion(0.37, self.q, self.v, self.u, self.fp) == 0.37

    def test_ln3_gives_factor_one_and_half(self):
        self._set_logit(math.log(3.0))
        assert local_fusion(0.6, self.q, self.v, self.u, self.fp) == pytest.approx(0.9, abs=1e-15)

    def test_saturates_to_clamp_floor(self):
        self._set_logit(-1e4)
        assert local_fusion(0.6, self.q, self.v, self.u, self.fp) == CLAMP_LO

    def test_upper_clamp(self):
        self._set_logit(1e4)
        assert local_fusion(0.9, self.q, self.v, self.u, self.fp) == 1 - 1e-7
