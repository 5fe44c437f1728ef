import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdistill.environments import Action, EpisodeHistory, MdpState, WN2M2, make_env, run_episode
from qdistill.optimizer import (
    Adam,
    BB84BDS,
    BB84Werner,
    LinearUtility,
    SixStateBDS,
    SixStateWerner,
    TrainerConfig,
    chunk_seeds,
    discounted_returns,
    episode_returns,
    estimate_policy_gradients,
    make_utility,
    per_channel_returns,
    train,
    utility_gradient,
)
from qdistill.oracles import ToyMDP, check_gradients
from qdistill.policy import FourierBasisSpec, SoftmaxPolicy
from qdistill.quantum import BellDiagonalState, skr_bb84_bds, skr_six_state

# frozen with mpmath: 1 - 2 h(1/15) and -(4/3) log2(beta / (1 - beta)) at beta = 1/15
BB84_W09 = 0.293281329957157275
BB84_W09_DF = 5.07647322941013881


def numeric_partials(utility, J, h=1e-7):
    out = {}
    for k in J:
        up, down = dict(J), dict(J)
        up[k] += h
        down[k] -= h
        out[k] = (utility.value(up) - utility.value(down)) / (2 * h)
    return out


class TestReturns:
    def test_suffix_sums(self):
        G = discounted_returns(np.array([[5e-5, 0.0], [5e-5, 0.0], [0.0, 0.0]]))
        assert G[:, 0] == pytest.approx([1e-4, 5e-5, 0.0])

    def test_terminal_reward_propagates(self):
        G = discounted_returns(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 0.91]]))
        assert np.all(G[:, 1] == 0.91)

    def test_discounted(self):
        assert discounted_returns(np.ones((3, 1)), 0.5)[0, 0] == pytest.approx(1.75)

    def test_per_channel_returns(self):
        h = EpisodeHistory([None, None], [Action.WAIT, Action.CONSUME], np.array([[2.0, 0.0], [0.0, 0.8]]),
                           ("time", "fidelity"))
        out = per_channel_returns(h)
        assert out["time"] == [(0, 2.0), (1, 0.0)]
        assert out["fidelity"] == [(0, 0.8), (1, 0.8)]

    def test_episode_returns(self):
        h = EpisodeHistory([None], [Action.CONSUME], np.array([[1.0, 0.5]]), ("time", "fidelity"))
        assert episode_returns([h, h]).tolist() == [[1.0, 0.5], [1.0, 0.5]]


class TestGradientEstimator:
    def test_empty_batch(self):
        with pytest.raises(ValueError):
            estimate_policy_gradients([], None)

    def test_zero_returns_zero_gradient(self, link10, rng):
        env = WN2M2(link10)
        pol = SoftmaxPolicy(env, FourierBasisSpec(1, 1, 3))
        hs = [run_episode(env, pol, rng) for _ in range(20)]
        for h in hs:
            h.rewards[:, 1] = 0.0
        assert np.all(estimate_policy_gradients(hs, pol)["fidelity"] == 0.0)

    def test_single_admissible_action_zero_gradient(self):
        toy = ToyMDP()
        pol = SoftmaxPolicy(toy, FourierBasisSpec(1, 1, 1))
        h = EpisodeHistory([toy.S2], [Action.CONSUME], np.array([[0.5, 0.9]]), toy.channels)
        grads = estimate_policy_gradients([h] * 5, pol)
        assert all(np.all(g == 0.0) for g in grads.values())

    def test_matches_per_step_sum(self, link10, rng):
        env = WN2M2(link10)
        pol = SoftmaxPolicy(env, FourierBasisSpec(1, 2, 3))
        pol.weights = rng.normal(scale=0.3, size=pol.weights.shape)
        hs = [run_episode(env, pol, rng) for _ in range(30)]
        grads = estimate_policy_gradients(hs, pol, gamma=0.9)
        for c, name in enumerate(env.channels):
            ref = np.zeros_like(pol.weights)
            for h in hs:
                G = discounted_returns(h.rewards, 0.9)
                for t, (s, a) in enumerate(zip(h.states, h.actions)):
                    ref += 0.9**t * G[t, c] * pol.log_prob_gradient(s, a)
            assert np.allclose(grads[name], ref / len(hs), atol=1e-12)

    def test_converges_to_exact_gradient(self):
        toy = ToyMDP()
        pol = SoftmaxPolicy(toy, FourierBasisSpec(1, 1, 1))
        pol.weights = np.random.default_rng(1).normal(scale=0.5, size=pol.weights.shape)
        exact = toy.exact_gradients(pol)["fidelity"]

        def rmse(n, reps=20):
            errs = []
            for r in range(reps):
                rng = np.random.default_rng([n, r])
                hs = [run_episode(toy, pol, rng) for _ in range(n)]
                errs.append(np.sum((estimate_policy_gradients(hs, pol)["fidelity"] - exact) ** 2))
            return math.sqrt(np.mean(errs))

        small, large = rmse(250), rmse(4000)
        # 16x more episodes should shrink the error about 4x
        assert 2.5 < small / large < 6.5


class TestUtilities:
    def test_bb84_werner_value(self):
        assert BB84Werner().value({"fidelity": 0.9, "time": 1.0}) == pytest.approx(BB84_W09, abs=1e-12)

    def test_bb84_werner_partials(self):
        d = BB84Werner().partials({"fidelity": 0.9, "time": 1.0})
        assert d["time"] == pytest.approx(-BB84_W09, abs=1e-12)
        assert d["fidelity"] == pytest.approx(BB84_W09_DF, abs=1e-12)

    def test_bb84_singular_at_perfect_fidelity(self):
        with pytest.raises(ValueError):
            BB84Werner().partials({"fidelity": 1.0, "time": 1.0})

    def test_guard_clamps(self):
        J, hit = BB84Werner().guard({"fidelity": 1.0, "time": 1.0})
        assert hit and J["fidelity"] < 1.0
        BB84Werner().partials(J)
        J, hit = BB84Werner().guard({"fidelity": 0.9, "time": 1.0})
        assert not hit

    def test_nonpositive_time(self):
        with pytest.raises(ValueError):
            BB84Werner().value({"fidelity": 0.9, "time": 0.0})

    def test_skr_clamps_but_value_does_not(self):
        J = {"fidelity": 0.6, "time": 1.0}
        assert BB84Werner().value(J) < 0
        assert BB84Werner().skr(J) == 0.0

    @given(st.floats(0.3, 0.99), st.floats(1e-3, 10))
    def test_werner_partials_match_finite_differences(self, f, t):
        J = {"fidelity": f, "time": t}
        for u in (BB84Werner(), SixStateWerner()):
            num = numeric_partials(u, J)
            ana = u.partials(J)
            for k in J:
                assert ana[k] == pytest.approx(num[k], rel=1e-5, abs=1e-6)

    @settings(max_examples=50)
    @given(st.lists(st.floats(0.02, 1.0), min_size=4, max_size=4), st.floats(0.1, 10))
    def test_bds_partials_match_finite_differences(self, v, t):
        a, b, c, d = np.asarray(v) / sum(v)
        J = {"b": b, "c": c, "d": d, "time": t}
        for u in (BB84BDS(), SixStateBDS()):
            num = numeric_partials(u, J)
            ana = u.partials(J)
            for k in J:
                assert ana[k] == pytest.approx(num[k], rel=1e-4, abs=1e-5)

    @given(st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4))
    def test_bds_values_match_key_rates(self, v):
        s = BellDiagonalState.from_vector(np.asarray(v) / sum(v))
        J = {"b": s.b, "c": s.c, "d": s.d, "time": 2.0}
        assert BB84BDS().skr(J) == pytest.approx(skr_bb84_bds(s, 2.0), abs=1e-12)
        assert SixStateBDS().skr(J) == pytest.approx(skr_six_state(s, 2.0), abs=1e-12)

    def test_make_utility(self, link10):
        assert isinstance(make_utility("bb84", make_env("wn2m2", link10)), BB84Werner)
        assert isinstance(make_utility("bb84", make_env("bn2m2", link10)), BB84BDS)
        assert isinstance(make_utility("six-state", make_env("wn2m3", link10)), SixStateWerner)
        assert isinstance(make_utility("six_state_bds"), SixStateBDS)
        with pytest.raises(ValueError):
            make_utility("bb84")
        with pytest.raises(ValueError):
            make_utility("e91")


class TestChainRule:
    def test_missing_channel(self):
        with pytest.raises(ValueError):
            utility_gradient({"fidelity": np.zeros(2)}, {"fidelity": 0.9}, BB84Werner())

    def test_linear_utility_is_weighted_sum(self):
        g = {"time": np.array([1.0, 2.0]), "fidelity": np.array([3.0, -1.0])}
        u = LinearUtility({"time": -2.0, "fidelity": 0.5})
        assert utility_gradient(g, {"time": 1, "fidelity": 1}, u).tolist() == [-0.5, -4.5]

    def test_toy_mdp_against_finite_differences(self):
        errors = check_gradients(seed=3)
        assert max(errors.values()) < 1e-4


class TestAdam:
    def test_first_step_size_is_learning_rate(self):
        opt = Adam((3,), lr=0.01)
        out = opt.step(np.zeros(3), np.array([2.0, -0.5, 1e-3]))
        assert out == pytest.approx([0.01, -0.01, 0.01], rel=1e-4)

    def test_ascends_concave_objective(self):
        opt = Adam((2,), lr=0.05)
        x = np.array([3.0, -2.0])
        target = np.array([1.0, 0.5])
        for _ in range(2000):
            x = opt.step(x, -2 * (x - target))
        assert x == pytest.approx(target, abs=1e-3)

    def test_matches_reference_recursion(self, rng):
        opt = Adam((4,), lr=1e-3, beta1=0.8, beta2=0.99, eps=1e-6)
        x = rng.normal(size=4)
        m = v = np.zeros(4)
        ref = x.copy()
        for t in range(1, 6):
            g = rng.normal(size=4)
            x = opt.step(x, g)
            m = 0.8 * m + 0.2 * g
            v = 0.99 * v + 0.01 * g * g
            ref = ref + 1e-3 * (m / (1 - 0.8**t)) / (np.sqrt(v / (1 - 0.99**t)) + 1e-6)
        assert np.allclose(x, ref, atol=1e-15)


class TestTrain:
    @pytest.fixture
    def setup(self, link10):
        env = WN2M2(link10)
        return env, make_utility("bb84", env)

    def test_zero_learning_rate(self, setup):
        env, u = setup
        pol = SoftmaxPolicy(env, FourierBasisSpec(1, 2, 3))
        res = train(env, pol, u, TrainerConfig(learning_rate=0.0, episodes_per_iteration=50, iterations=3))
        assert np.all(res.weights == 0.0) and np.all(pol.weights == 0.0)

    def test_curve_records(self, setup):
        env, u = setup
        pol = SoftmaxPolicy(env, FourierBasisSpec(1, 2, 3))
        seen = []
        res = train(env, pol, u, TrainerConfig(1e-3, 50, 4, seed=2), callback=seen.append)
        assert [r["iteration"] for r in res.curve] == [0, 1, 2, 3]
        assert set(res.curve[0]) == {"iteration", "J_time", "J_fidelity", "utility", "wall_time"}
        assert seen == res.curve

    def test_deterministic(self, setup):
        env, u = setup
        runs = []
        for _ in range(2):
            pol = SoftmaxPolicy(env, FourierBasisSpec(2, 3, 3))
            res = train(env, pol, u, TrainerConfig(1e-3, 100, 5, seed=9))
            runs.append((res.weights, [{k: v for k, v in r.items() if k != "wall_time"} for r in res.curve]))
        assert np.array_equal(runs[0][0], runs[1][0]) and runs[0][1] == runs[1][1]

    def test_parallel_workers_reproducible(self, setup):
        env, u = setup
        out = []
        for _ in range(2):
            pol = SoftmaxPolicy(env, FourierBasisSpec(1, 2, 3))
            out.append(train(env, pol, u, TrainerConfig(1e-3, 60, 2, seed=4, workers=2)).weights)
        assert np.array_equal(out[0], out[1])

    def test_chunk_seeds_independent(self):
        a = [s.generate_state(2).tolist() for s in chunk_seeds(1, 0, 3)]
        b = [s.generate_state(2).tolist() for s in chunk_seeds(1, 1, 3)]
        assert len({tuple(x) for x in a + b}) == 6

    def test_divergence_guard(self, setup):
        env, _ = setup

        class Exploding(BB84Werner):
            def value(self, J):
                return math.inf

        pol = SoftmaxPolicy(env, FourierBasisSpec(1, 1, 3))
        with pytest.raises(RuntimeError, match="diverged"):
            train(env, pol, Exploding(), TrainerConfig(1e-3, 10, 2))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainerConfig(discount=1.5)
        with pytest.raises(ValueError):
            TrainerConfig(episodes_per_iteration=0)
        with pytest.raises(ValueError):
            TrainerConfig(workers=0)

    def test_improves_on_uniform_policy(self, setup):
        env, u = setup
        pol = SoftmaxPolicy(env, FourierBasisSpec(2, 5, 3))
        res = train(env, pol, u, TrainerConfig(1e-3, 500, 20, seed=1))
        assert res.curve[-1]["utility"] > res.curve[0]["utility"]
        assert pol.greedy()(MdpState((0.9, 0.0), 1.0)) == Action.CONSUME
