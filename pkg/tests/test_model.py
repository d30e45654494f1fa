"""Validation, stationary law, and transient-matrix tests."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmisq import (
    ModelSpec,
    NonGeneratorError,
    NonpositiveServiceError,
    ReducibleError,
    duplicate_groups,
    model_spec_from_dict,
    model_spec_to_dict,
    stationary,
    transient_matrix,
    validate,
)
from conftest import random_model


class TestValidate:
    def test_showcase_model_valid(self, ex3):
        assert ex3.d == 2
        assert np.allclose(ex3.q, [1.0, 1.0])

    def test_single_state_valid(self, single_state):
        assert single_state.q[0] == 0.0

    def test_row_sum_rejected(self):
        with pytest.raises(NonGeneratorError):
            validate(ModelSpec(Q=[[-1, 2], [1, -1]], lam=[1, 2], mu=[1, 5]))

    def test_negative_offdiagonal_rejected(self):
        with pytest.raises(NonGeneratorError):
            validate(ModelSpec(Q=[[1, -1], [1, -1]], lam=[1, 2], mu=[1, 5]))

    def test_reducible_rejected(self):
        Q = [[0.0, 0.0], [1.0, -1.0]]
        with pytest.raises(ReducibleError):
            validate(ModelSpec(Q=Q, lam=[1, 2], mu=[1, 5]))

    def test_nonpositive_service_rejected(self):
        with pytest.raises(NonpositiveServiceError):
            validate(ModelSpec(Q=[[-1, 1], [1, -1]], lam=[1, 2], mu=[1, 0]))

    def test_negative_arrival_rejected(self):
        with pytest.raises(ValueError):
            validate(ModelSpec(Q=[[-1, 1], [1, -1]], lam=[1, -2], mu=[1, 5]))


class TestStationary:
    def test_symmetric(self, ex3):
        assert np.allclose(stationary(ex3).pi, [0.5, 0.5], atol=1e-12)

    def test_asymmetric_hand_solved(self):
        m = validate(ModelSpec(Q=[[-2, 2], [1, -1]], lam=[1, 2], mu=[1, 5]))
        assert np.allclose(stationary(m).pi, [1 / 3, 2 / 3], atol=1e-12)

    def test_single_state(self, single_state):
        assert stationary(single_state).pi == pytest.approx([1.0])

    def test_balance_and_normalization_random(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            m = random_model(rng)
            pi = stationary(m).pi
            assert abs(pi.sum() - 1.0) < 1e-12
            assert np.all(pi >= 0)
            assert np.max(np.abs(pi @ m.Q)) < 1e-10


class TestTransientMatrix:
    def test_identity_at_zero(self, ex3):
        assert np.allclose(transient_matrix(ex3, 0.0), np.eye(2), atol=0)

    def test_symmetric_closed_form(self, ex3):
        # two symmetric states mix at rate 2
        for t in (0.3, 1.0, 2.5):
            e = math.exp(-2 * t)
            expected = np.array([[(1 + e) / 2, (1 - e) / 2],
                                 [(1 - e) / 2, (1 + e) / 2]])
            assert np.allclose(transient_matrix(ex3, t), expected, atol=1e-13)

    def test_rows_stochastic_random(self):
        rng = np.random.default_rng(6)
        for _ in range(15):
            m = random_model(rng)
            t = float(rng.uniform(0.01, 20.0))
            E = transient_matrix(m, t)
            assert np.all(E >= -1e-15)
            assert np.allclose(E.sum(axis=1), 1.0, atol=1e-12)

    def test_semigroup_property(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            m = random_model(rng)
            s, t = rng.uniform(0.05, 3.0, size=2)
            lhs = transient_matrix(m, s + t)
            rhs = transient_matrix(m, s) @ transient_matrix(m, t)
            assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_convergence_to_stationary(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            m = random_model(rng, d=3)
            t = 100.0 / np.max(np.abs(m.Q))
            E = transient_matrix(m, t)
            pi = stationary(m).pi
            assert np.max(np.abs(E - pi[None, :])) < 1e-6

    def test_stationary_fixed_point(self, ex3):
        pi = stationary(ex3).pi
        for t in (0.5, 3.0, 40.0):
            assert np.max(np.abs(pi @ transient_matrix(ex3, t) - pi)) < 1e-10

    @given(t=st.floats(min_value=0.0, max_value=50.0),
           seed=st.integers(min_value=0, max_value=2 ** 16))
    @settings(max_examples=25, deadline=None)
    def test_stochasticity_fuzz(self, t, seed):
        m = random_model(np.random.default_rng(seed), d=3)
        E = transient_matrix(m, t)
        assert np.allclose(E.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(E >= -1e-15)


class TestDuplicateGroups:
    def test_all_distinct(self, ex3):
        assert duplicate_groups(ex3) == ((0,), (1,))

    def test_one_pair(self):
        m = validate(ModelSpec(Q=[[-1, 1, 0], [1, -2, 1], [0, 1, -1]],
                               lam=[1, 1, 2], mu=[1, 1, 5]))
        assert duplicate_groups(m) == ((0, 1), (2,))

    def test_all_equal(self):
        m = validate(ModelSpec(Q=[[-1, 1, 0], [1, -2, 1], [0, 1, -1]],
                               lam=[1, 1, 1], mu=[1, 1, 1]))
        assert duplicate_groups(m) == ((0, 1, 2),)


class TestModelFiles:
    def test_round_trip(self, ex3):
        doc = model_spec_to_dict(ex3)
        again = validate(model_spec_from_dict(doc))
        assert np.array_equal(again.Q, ex3.Q)
        assert np.array_equal(again.lam, ex3.lam)
        assert again.variant == ex3.variant
        assert again.initial is None

    def test_one_based_initial(self):
        doc = {"d": 2, "Q": [[-1, 1], [1, -1]], "lambda": [1, 2],
               "mu": [1, 5], "variant": "I", "initial": {"fixed": 2}}
        spec = model_spec_from_dict(doc)
        assert spec.initial == 1
        assert model_spec_to_dict(spec)["initial"] == {"fixed": 2}

    def test_malformed_rejected(self):
        with pytest.raises(ValueError):
            model_spec_from_dict({"d": 2, "Q": [[-1, 1], [1, -1]],
                                  "lambda": [1, 2], "mu": [1, 5],
                                  "initial": {"foo": 1}})
