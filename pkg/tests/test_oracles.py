import numpy as np
import pytest
import sympy

from qdistill.oracles import (
    P,
    PG,
    ToyMDP,
    bell_coefficients,
    bell_diagonal_matrix,
    check_dejmps,
    check_group_frequencies,
    default_context,
    dejmps_density_matrix,
    symbolic_total,
    transition_groups,
)
from qdistill.policy import FourierBasisSpec, SoftmaxPolicy


class TestDensityMatrixCircuit:
    def test_bell_round_trip(self):
        c = np.array([0.6, 0.2, 0.15, 0.05])
        rho = bell_diagonal_matrix(c)
        assert np.trace(rho) == pytest.approx(1.0)
        assert bell_coefficients(rho) == pytest.approx(c)

    def test_perfect_pairs(self):
        out, ps = dejmps_density_matrix([1, 0, 0, 0], [1, 0, 0, 0])
        assert ps == pytest.approx(1.0) and out == pytest.approx([1, 0, 0, 0], abs=1e-12)

    def test_maximally_mixed_pairs(self):
        out, ps = dejmps_density_matrix([0.25] * 4, [0.25] * 4)
        assert ps == pytest.approx(0.5) and out == pytest.approx([0.25] * 4)

    def test_closed_form_agreement(self):
        assert check_dejmps(100, seed=8) < 1e-12


class TestTransitionTables:
    def test_group_counts(self):
        assert len(transition_groups("wn2m2")) == 9
        assert len(transition_groups("bn2m2")) == 9
        assert len(transition_groups("wn2m3")) == 18

    @pytest.mark.parametrize("group", transition_groups(), ids=lambda g: f"{g.env}:{g.label}")
    def test_probabilities_sum_to_one(self, group):
        assert sympy.simplify(symbolic_total(group) - 1) == 0

    def test_probabilities_use_only_table_symbols(self):
        for g in transition_groups():
            for r in g.rows:
                assert r.prob.free_symbols <= {PG, P}

    @pytest.mark.parametrize("env_name", ["wn2m2", "bn2m2", "wn2m3"])
    def test_quick_frequency_check(self, env_name):
        ctx = default_context(env_name)
        for g in transition_groups(env_name):
            res = check_group_frequencies(g, ctx, 20_000, seed=5)
            assert res.passed, res

    def test_detects_wrong_probability(self):
        g = transition_groups("wn2m2")[0]
        broken = type(g)(g.env, g.label, g.state, g.action, list(g.rows))
        broken.rows[0] = type(g.rows[0])(g.rows[0].prob * 0.9, g.rows[0].next_state, g.rows[0].reward)
        res = check_group_frequencies(broken, default_context("wn2m2"), 50_000, seed=1)
        assert not res.passed


class TestToyMDP:
    def test_episode_probabilities_sum_to_one(self, rng):
        toy = ToyMDP()
        pol = SoftmaxPolicy(toy, FourierBasisSpec(1, 2, 1))
        pol.weights = rng.normal(size=pol.weights.shape)
        assert sum(p for p, *_ in toy.episodes(pol)) == pytest.approx(1.0)

    def test_uniform_policy_returns(self):
        toy = ToyMDP()
        J = toy.expected_returns(SoftmaxPolicy(toy, FourierBasisSpec(1, 1, 1)))
        # s0: half WAIT (time 1, then s1 or s2), half CONSUME (time 0.5, fidelity 0.8)
        assert J["time"] == pytest.approx(0.5 * 0.5 + 0.5 * (1 + 0.6 * 0.5 + 0.4 * 0.5))
        assert J["fidelity"] == pytest.approx(0.5 * 0.8 + 0.5 * (0.6 * 0.86 + 0.4 * 0.9))
