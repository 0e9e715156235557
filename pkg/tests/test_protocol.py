from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from conftest import sustainable, weighted_configs
from diverse_pop.protocol import (DARK, LIGHT, Configuration, ConfigurationError, CountEngine,
                                  FunctionObserver, InvariantViolation, NoPartnerError,
                                  ObserverError, TrackedAgent, WeightTable, agents_from_config,
                                  check_compatible, config_from_agents, enumerate_kernel, run,
                                  step_agentwise, step_counts, step_with_tracking)
from diverse_pop.rng import make_rng, spawn_seeds


class TestWeightTable:
    def test_rejects_light_weights(self):
        with pytest.raises(ConfigurationError):
            WeightTable.of([1, 0.5])
        with pytest.raises(ConfigurationError):
            WeightTable.of([float("nan")])

    def test_integer_only(self):
        WeightTable.of([1, 2], integer_only=True)
        with pytest.raises(ConfigurationError):
            WeightTable.of([1, 2.5], integer_only=True)

    def test_totals_and_ids(self):
        wt = WeightTable({0: 1, 2: 3}, retired={1})
        assert wt.total_weight == 4
        assert wt.num_colours == 2
        assert wt.next_id() == 3
        with pytest.raises(ConfigurationError):
            WeightTable({0: 1}, retired={0})


class TestConfiguration:
    def test_json_round_trip(self):
        cfg = Configuration.from_lists([3, 1], [2, 0], step=7)
        data = cfg.to_json()
        assert data == {"step": 7, "dark_counts": {"0": 3, "1": 1},
                        "light_counts": {"0": 2, "1": 0}, "n": 6}
        assert Configuration.from_json(data) == cfg

    def test_bad_counts(self):
        with pytest.raises(ConfigurationError):
            Configuration.from_lists([-1, 2])
        with pytest.raises(ConfigurationError):
            Configuration.from_json({"dark_counts": {"0": 2}, "light_counts": {"0": 0}, "n": 3})

    def test_compatibility(self):
        with pytest.raises(NoPartnerError):
            check_compatible(Configuration.from_lists([1]), WeightTable.of([1]))
        with pytest.raises(ConfigurationError):
            check_compatible(Configuration.from_lists([2, 2]), WeightTable.of([1]))
        with pytest.raises(ConfigurationError):
            check_compatible(Configuration.from_lists([2]), WeightTable.of([1, 1]))


class TestKernel:
    def test_four_agent_example(self):
        cfg = Configuration.from_lists([2, 1], [1, 0])
        dist = enumerate_kernel(cfg, WeightTable.of([1, 1])).next_states(cfg)
        assert dist == {
            (1, 1, 2, 0): Fraction(1, 6),
            (3, 1, 0, 0): Fraction(1, 6),
            (2, 2, 0, 0): Fraction(1, 12),
            (2, 1, 1, 0): Fraction(7, 12),
        }

    def test_no_light_means_no_adoption(self):
        cfg = Configuration.from_lists([3, 2])
        kern = enumerate_kernel(cfg, WeightTable.of([1, 2]))
        assert all(o.src is None or o.src[0] == DARK for o in kern.outcomes)

    def test_all_light_is_frozen(self):
        cfg = Configuration.from_lists([0, 0], [3, 2])
        assert enumerate_kernel(cfg, WeightTable.of([1, 1])).next_states(cfg) == {cfg.key(): 1}

    @given(weighted_configs())
    def test_masses_sum_to_one_exactly(self, case):
        cfg, wt = case
        kern = enumerate_kernel(cfg, wt)
        assert kern.total() == 1
        assert all(isinstance(o.probability, Fraction) and o.probability >= 0 for o in kern.outcomes)

    @given(weighted_configs())
    def test_float_mode_agrees(self, case):
        cfg, wt = case
        exact = enumerate_kernel(cfg, wt).next_states(cfg)
        approx = enumerate_kernel(cfg, wt, exact=False).next_states(cfg)
        assert set(exact) == set(approx)
        for key, p in exact.items():
            assert abs(float(p) - approx[key]) < 1e-12

    @given(weighted_configs())
    def test_single_change_and_conservation(self, case):
        cfg, wt = case
        before = np.array(cfg.key())
        for key in enumerate_kernel(cfg, wt).next_states(cfg):
            diff = np.array(key) - before
            assert diff.sum() == 0
            assert np.abs(diff).sum() in (0, 2)

    @given(weighted_configs(all_dark=False))
    def test_sustainability_step(self, case):
        cfg, wt = case
        assume(sustainable(cfg))
        kern = enumerate_kernel(cfg, wt)
        for o in kern.outcomes:
            if o.probability:
                assert sustainable(kern.apply(cfg, o))


class TestSteppers:
    def test_two_dark_agents_weight_one(self, rng):
        cfg = Configuration.from_lists([2])
        nxt = step_counts(cfg, WeightTable.of([1]), rng)
        assert nxt.key() == (1, 1) and nxt.step == 1
        agents = step_agentwise([(0, DARK), (0, DARK)], WeightTable.of([1]), rng)
        assert sorted(agents) == [(0, LIGHT), (0, DARK)]

    def test_light_adopts_dark(self, rng):
        wt = WeightTable.of([1, 1])
        out = step_agentwise([(0, LIGHT), (1, DARK)], wt, make_rng(0))
        # whichever agent is scheduled, the light one ends dark colour 1
        assert (1, DARK) in out and len(out) == 2
        assert out in ([(1, DARK), (1, DARK)], [(0, LIGHT), (1, DARK)])

    def test_dark_meets_light_does_nothing(self):
        wt = WeightTable.of([1, 1])
        for s in range(20):
            out = step_agentwise([(0, DARK), (1, LIGHT)], wt, make_rng(s))
            assert out in ([(0, DARK), (1, LIGHT)], [(0, DARK), (0, DARK)])

    def test_errors(self, rng):
        with pytest.raises(NoPartnerError):
            step_agentwise([(0, DARK)], WeightTable.of([1]), rng)
        with pytest.raises(ConfigurationError):
            step_counts(Configuration.from_lists([2, 1]), WeightTable.of([1]), rng)

    def test_agents_round_trip(self):
        cfg = Configuration.from_lists([2, 0, 1], [1, 3, 0])
        agents = agents_from_config(cfg)
        assert config_from_agents(agents, cfg.colours, cfg.step) == cfg

    @given(weighted_configs(), st.integers(0, 2**32))
    def test_step_counts_lands_in_kernel_support(self, case, seed):
        cfg, wt = case
        support = enumerate_kernel(cfg, wt).next_states(cfg)
        nxt = step_counts(cfg, wt, make_rng(seed))
        assert support[nxt.key()] > 0


class TestTracking:
    def test_two_agent_split(self):
        wt = WeightTable.of([1])
        cfg = Configuration.from_lists([2])
        light = 0
        trials = 4000
        for seed in spawn_seeds(5, trials):
            _, tr = step_with_tracking(cfg, TrackedAgent(0, DARK), wt, make_rng(seed))
            light += tr.shade == LIGHT
            assert tr.steps_tracked == 1
        assert abs(light / trials - 0.5) < 4 * np.sqrt(0.25 / trials)

    def test_inconsistent_tracked_state(self, rng):
        with pytest.raises(InvariantViolation):
            step_with_tracking(Configuration.from_lists([2, 0], [0, 0]), TrackedAgent(1, DARK),
                               WeightTable.of([1, 1]), rng)

    @given(weighted_configs(max_n=6), st.integers(0, 2**32))
    def test_tracked_moves_follow_rule(self, case, seed):
        cfg, wt = case
        assume(cfg.population >= 2)
        c = cfg.colours[0]
        shade = DARK if cfg.dark_counts[c] else LIGHT
        assume(cfg.dark_counts[c] + cfg.light_counts[c] > 0)
        tr = TrackedAgent(c, shade)
        rng = make_rng(seed)
        for _ in range(30):
            before = tr.state
            cfg, tr = step_with_tracking(cfg, tr, wt, rng)
            if tr.state != before:
                if before[1] == LIGHT:
                    assert tr.shade == DARK
                else:
                    assert tr.state == (before[0], LIGHT)
        assert tr.steps_tracked == 30


class TestRun:
    def test_zero_steps(self, rng):
        cfg = Configuration.from_lists([5, 3])
        assert run(cfg, WeightTable.of([1, 2]), 0, rng) == cfg

    @pytest.mark.parametrize("method", ["jump", "tick"])
    def test_deterministic(self, method):
        cfg = Configuration.from_lists([50, 1, 1])
        wt = WeightTable.of([1, 2, 3])
        a = run(cfg, wt, 20_000, make_rng(9), method=method)
        b = run(cfg, wt, 20_000, make_rng(9), method=method)
        assert a == b and a.step == 20_000

    def test_observer_cadence_and_conservation(self):
        seen = []
        obs = FunctionObserver(lambda c: seen.append((c.step, c.population)), every=1000)
        run(Configuration.from_lists([90, 5, 5]), WeightTable.of([1, 2, 3]), 10_500, make_rng(1), [obs])
        assert [s for s, _ in seen] == list(range(1000, 10_001, 1000))
        assert {n for _, n in seen} == {100}

    def test_observer_failure_names_step(self):
        def boom(cfg):
            if cfg.step >= 300:
                raise RuntimeError("nope")
        with pytest.raises(ObserverError) as info:
            run(Configuration.from_lists([10, 10]), WeightTable.of([1, 1]), 1000, make_rng(1),
                [FunctionObserver(boom, 100)])
        assert info.value.step == 300

    def test_min_dark_tracks_every_tick(self):
        eng = CountEngine(Configuration.from_lists([30, 1]), WeightTable.of([1, 1]), make_rng(3))
        eng.advance(50_000)
        assert eng.min_dark.min() >= 1

    def test_tracked_visits_sum_to_steps(self):
        cfg = Configuration.from_lists([40, 10], [10, 0])
        trs = [TrackedAgent(0, DARK), TrackedAgent(0, LIGHT)]
        out = run(cfg, WeightTable.of([1, 3]), 70_000, make_rng(2), tracked=trs)
        for tr in trs:
            assert tr.steps_tracked == 70_000
            # a tracked agent's final state is a populated class
            table = out.dark_counts if tr.shade == DARK else out.light_counts
            assert table[tr.colour] >= 1

    def test_tick_method_rejects_tracking(self, rng):
        with pytest.raises(ValueError):
            CountEngine(Configuration.from_lists([3]), WeightTable.of([1]), rng,
                        [TrackedAgent(0, DARK)], method="tick")

    @pytest.mark.slow
    def test_long_soak(self):
        n = 10_000
        seen = []
        obs = FunctionObserver(lambda c: seen.append(c.population), every=100_000)
        out = run(Configuration.from_lists([n - 2, 1, 1]), WeightTable.of([1, 2, 3]), 10**7,
                  make_rng(4), [obs])
        assert set(seen) == {n} and out.step == 10**7
