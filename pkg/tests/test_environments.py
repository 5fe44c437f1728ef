import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdistill.environments import (
    BN2M2,
    TERMINAL,
    WN2M2,
    WN2M3,
    Action,
    MdpState,
    consume_asap,
    make_env,
    rollout_totals,
    run_episode,
)
from qdistill.quantum import BellDiagonalState, LinkParameters, distill_werner

A = Action


class TestConstruction:
    def test_make_env(self, link10):
        assert isinstance(make_env("WN2M2", link10), WN2M2)
        assert isinstance(make_env("bn2m2", link10), BN2M2)
        assert isinstance(make_env("wn2m3", link10), WN2M3)

    def test_unknown_env(self, link10):
        with pytest.raises(ValueError, match="unknown environment"):
            make_env("wn9m9", link10)

    def test_zero_length_rejected(self):
        with pytest.raises(ValueError):
            WN2M2(LinkParameters(0.0))

    def test_terminal_pickles_to_singleton(self):
        assert pickle.loads(pickle.dumps(TERMINAL)) is TERMINAL

    def test_initial_states(self, link10):
        assert WN2M2(link10).initial_state() == MdpState((0.0, 0.0), 1.0)
        assert WN2M3(link10).initial_state() == MdpState((0.0, 0.0, 0.0), 1.0)
        assert BN2M2(link10).initial_state() == MdpState(((0.0,) * 4, (0.0,) * 4), 1.0)


class TestAdmissibleActions:
    def test_empty_memory_only_waits(self, link10):
        assert WN2M2(link10).admissible_actions(MdpState((0.0, 0.0), 1.0)) == (A.WAIT,)

    def test_full_two_memory(self, link10):
        acts = WN2M2(link10).admissible_actions(MdpState((0.9, 0.8), 1.0))
        assert set(acts) == {A.CONSUME, A.DISCARD, A.PURIFY_12}

    def test_one_pair_known(self, link10):
        acts = WN2M2(link10).admissible_actions(MdpState((0.9, 0.0), 1.0))
        assert set(acts) == {A.WAIT, A.CONSUME, A.DISCARD}

    def test_one_pair_pending(self, link10):
        acts = WN2M2(link10).admissible_actions(MdpState((0.9, 0.0), 0.8))
        assert set(acts) == {A.WAIT, A.CONSUME}

    def test_three_memory_two_pending(self, link10):
        acts = WN2M3(link10).admissible_actions(MdpState((0.9, 0.83, 0.0), 0.87))
        assert set(acts) == {A.CONSUME, A.PURIFY_12, A.WAIT}

    def test_three_memory_full(self, link10):
        acts = WN2M3(link10).admissible_actions(MdpState((0.9, 0.83, 0.88), 1.0))
        assert set(acts) == {A.CONSUME, A.DISCARD, A.PURIFY_12, A.PURIFY_13, A.PURIFY_23}

    def test_terminal_has_no_actions(self, any_env):
        with pytest.raises(ValueError):
            any_env.admissible_actions(TERMINAL)

    def test_full_and_pending_is_unreachable(self, link10):
        with pytest.raises(ValueError):
            WN2M2(link10).admissible_actions(MdpState((0.9, 0.8), 0.5))

    def test_inadmissible_step_rejected(self, link10, rng):
        with pytest.raises(ValueError, match="not admissible"):
            WN2M2(link10).step(MdpState((0.0, 0.0), 1.0), A.CONSUME, rng)

    def test_mask_matches_actions(self, any_env):
        s = any_env.initial_state()
        mask = any_env.admissible_mask(s)
        assert list(np.flatnonzero(mask)) == [int(a) for a in any_env.admissible_actions(s)]


class TestTransitions:
    def test_wait_both_succeed_probability(self, link10, rng):
        env = WN2M2(link10)
        n = 40_000
        hits = sum(env.step(env.initial_state(), A.WAIT, rng)[0] == MdpState((0.9, 0.9), 1.0) for _ in range(n))
        p = env.p_gen**2
        assert abs(hits / n - p) < 4 * math.sqrt(p * (1 - p) / n)

    def test_wait_reward_is_dt(self, link10, rng):
        env = WN2M2(link10)
        _, r = env.step(env.initial_state(), A.WAIT, rng)
        assert r == (env.dt, 0.0)

    def test_purify_two_memory(self, link10, rng):
        env = WN2M2(link10)
        nxt, r = env.step(MdpState((0.87, 0.91), 1.0), A.PURIFY_12, rng)
        f, ps = distill_werner(0.87, 0.91)
        assert nxt == MdpState((f, 0.0), ps)
        assert r == (0.0, 0.0)

    def test_purify_places_result_first(self, link10, rng):
        env = WN2M3(link10)
        nxt, _ = env.step(MdpState((0.86, 0.93, 0.88), 1.0), A.PURIFY_23, rng)
        f, ps = distill_werner(0.93, 0.88)
        assert nxt == MdpState((f, 0.86, 0.0), ps)

    def test_optimistic_purify_multiplies_p(self, link10, rng):
        env = WN2M3(link10)
        nxt, _ = env.step(MdpState((0.92, 0.85, 0.0), 0.7), A.PURIFY_12, rng)
        f, ps = distill_werner(0.92, 0.85)
        assert nxt.p == pytest.approx(0.7 * ps)

    def test_consume_pending_three_memory(self, link10):
        env = WN2M3(link10)
        s = MdpState((0.92, 0.85, 0.0), 0.7)
        outcomes = {}
        rng = np.random.default_rng(5)
        for _ in range(20_000):
            nxt, r = env.step(s, A.CONSUME, rng)
            outcomes.setdefault(nxt, set()).add(r)
        assert set(outcomes) == {TERMINAL, MdpState((0.85, 0.0, 0.0), 1.0)}
        assert outcomes[TERMINAL] == {(0.0, 0.92)}
        assert outcomes[MdpState((0.85, 0.0, 0.0), 1.0)] == {(0.0, 0.0)}

    def test_consume_takes_best_pair(self, link10, rng):
        nxt, r = WN2M2(link10).step(MdpState((0.87, 0.91), 1.0), A.CONSUME, rng)
        assert nxt is TERMINAL and r == (0.0, 0.91)

    def test_discard_drops_worst_pair(self, link10, rng):
        nxt, _ = WN2M3(link10).step(MdpState((0.86, 0.93, 0.88), 1.0), A.DISCARD, rng)
        assert nxt == MdpState((0.93, 0.88, 0.0), 1.0)

    def test_bds_rewards_are_b_c_d(self, link10, rng):
        env = BN2M2(link10)
        v = BellDiagonalState(0.86, 0.07, 0.04, 0.03)
        nxt, r = env.step(MdpState((v, (0.0,) * 4), 1.0), A.CONSUME, rng)
        assert nxt is TERMINAL
        assert r == pytest.approx((0.0, 0.07, 0.04, 0.03))

    def test_wait_decoheres_stored_pairs(self, link10, rng):
        env = WN2M3(link10)
        nxt, _ = env.step(MdpState((0.86, 0.93, 0.0), 1.0), A.WAIT, rng)
        lam = math.exp(-2 * env.dt / link10.coherence_time_s)
        assert nxt.slots[:2] == pytest.approx((lam * 0.86 + (1 - lam) / 4, lam * 0.93 + (1 - lam) / 4))

    def test_step_from_terminal_raises(self, any_env, rng):
        with pytest.raises(ValueError):
            any_env.step(TERMINAL, A.WAIT, rng)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["wn2m2", "bn2m2", "wn2m3"]))
    def test_random_walk_keeps_invariants(self, seed, name):
        env = make_env(name, LinkParameters(15.0, 0.83))
        rng = np.random.default_rng(seed)
        s = env.initial_state()
        for _ in range(60):
            acts = env.admissible_actions(s)
            assert acts
            s, r = env.step(s, acts[rng.integers(len(acts))], rng)
            assert len(r) == len(env.channels) and all(x >= 0 for x in r)
            if s is TERMINAL:
                s = env.initial_state()
                continue
            fids = [env.fidelity(x) for x in s.slots]
            n_occ = sum(f > 0 for f in fids)
            # occupied pairs are packed to the front
            assert all(f > 0 for f in fids[:n_occ]) and all(f == 0 for f in fids[n_occ:])
            assert all(0.25 - 1e-9 <= f <= 1.0 for f in fids[:n_occ])
            assert 0.0 < s.p <= 1.0
            if name == "bn2m2":
                for v in s.slots[:n_occ]:
                    assert sum(v) == pytest.approx(1.0, abs=1e-9)


class TestFeatures:
    def test_two_memory(self, link10):
        assert list(WN2M2(link10).state_features(MdpState((0.0, 0.0), 1.0))) == [0, 0, 1]

    def test_three_memory_passthrough(self, link10):
        feats = WN2M3(link10).state_features(MdpState((0.9, 0.83, 0.0), 0.87))
        assert list(feats) == [0.9, 0.83, 0.0, 0.87]

    def test_bds(self, link10):
        env = BN2M2(link10)
        feats = env.state_features(MdpState(((1.0, 0.0, 0.0, 0.0), (0.0,) * 4), 1.0))
        assert list(feats) == [1, 0, 0, 0, 0, 0, 0, 0, 1]
        assert env.feature_dim == 9

    def test_terminal_has_no_features(self, any_env):
        with pytest.raises(ValueError):
            any_env.state_features(TERMINAL)


class TestEpisodes:
    def test_consume_asap_rewards(self, link10, rng):
        env = WN2M2(link10)
        for _ in range(200):
            h = run_episode(env, consume_asap(env), rng)
            assert h.terminated
            assert h.actions[-1] == A.CONSUME and all(a == A.WAIT for a in h.actions[:-1])
            time, fid = h.totals()
            assert fid == 0.9
            assert time == pytest.approx(env.dt * (len(h) - 1))

    def test_always_wait_is_truncated(self, link10, rng):
        env = WN2M2(link10)

        def waiter(state, _rng):
            acts = env.admissible_actions(state)
            return A.WAIT if A.WAIT in acts else (A.PURIFY_12 if A.PURIFY_12 in acts else acts[0])

        h = run_episode(env, waiter, rng)
        assert len(h) == 1000 and not h.terminated
        assert h.totals()[1] == 0.0

    def test_mean_wait_count_is_geometric(self, link10):
        env = WN2M2(link10)
        totals = rollout_totals(env, consume_asap(env), 40_000, np.random.default_rng(11))
        waits = totals[:, 0] / env.dt
        expected = 1.0 / (1.0 - (1.0 - env.p_gen) ** 2)
        assert abs(waits.mean() - expected) < 3 * waits.std(ddof=1) / math.sqrt(len(waits))

    def test_rollout_totals_matches_run_episode(self, link10):
        env = WN2M3(link10)
        pol = consume_asap(env)
        a = rollout_totals(env, pol, 50, np.random.default_rng(3))
        rng = np.random.default_rng(3)
        b = np.array([run_episode(env, pol, rng).totals() for _ in range(50)])
        assert np.array_equal(a, b)

    def test_history_shapes(self, any_env, rng):
        h = run_episode(any_env, consume_asap(any_env), rng)
        assert h.rewards.shape == (len(h), len(any_env.channels))
        assert len(h.states) == len(h.actions)
