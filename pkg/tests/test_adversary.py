import json

import numpy as np
import pytest

from diverse_pop.adversary import (AddAgents, AddColour, EventSchedule, RecolourAll,
                                   StrictModeViolation, apply_event, event_from_json,
                                   event_to_json, run_with_schedule)
from diverse_pop.metrics import SustainabilityMonitor, equilibrium_config
from diverse_pop.protocol import (DARK, LIGHT, Configuration, ConfigurationError,
                                  TrackedAgent, WeightTable, run)
from diverse_pop.rng import make_rng


def base():
    return equilibrium_config(WeightTable.of([1, 2]), 99), WeightTable.of([1, 2])


def test_add_colour():
    cfg, wt = Configuration.from_lists([60, 40]), WeightTable.of([1, 1])
    cfg2, wt2 = apply_event(cfg, wt, AddColour(0, 2.0, 1))
    assert cfg2.population == 101 and wt2.num_colours == 3
    assert cfg2.dark_counts[2] == 1 and wt2.total_weight == wt.total_weight + 2
    # inputs untouched
    assert cfg.population == 100 and wt.num_colours == 2


def test_recolour_all():
    cfg = Configuration.from_lists([7, 10, 4], [1, 5, 2])
    wt = WeightTable.of([1, 2, 3])
    cfg2, wt2 = apply_event(cfg, wt, RecolourAll(0, 1, 2, DARK))
    assert cfg2.dark_counts[2] == 4 + 15 and 1 not in cfg2.dark_counts
    assert cfg2.population == cfg.population
    assert wt2.total_weight == 4 and 1 in wt2.retired
    # retired ids are never handed out again
    _, wt3 = apply_event(cfg2, wt2, AddColour(0, 1.0, 1))
    assert wt3.colours == [0, 2, 3]
    with pytest.raises(ConfigurationError):
        apply_event(cfg2, wt2, AddColour(0, 1.0, 1, colour=1))


def test_add_agents_counts():
    cfg, wt = base()
    cfg2, _ = apply_event(cfg, wt, AddAgents(0, 1, LIGHT, 5))
    assert cfg2.population == cfg.population + 5
    assert cfg2.light_counts[1] == cfg.light_counts[1] + 5


def test_strict_mode_rejections():
    cfg, wt = base()
    with pytest.raises(StrictModeViolation):
        apply_event(cfg, wt, AddAgents(0, 7, LIGHT, 3, weight=2.0))
    with pytest.raises(StrictModeViolation):
        apply_event(cfg, wt, AddColour(0, 2.0, 0))
    with pytest.raises(ConfigurationError):
        apply_event(cfg, wt, AddColour(0, 0.5, 1))
    with pytest.raises(ConfigurationError):
        apply_event(cfg, wt, AddAgents(0, 5, DARK, 3))
    with pytest.raises(ConfigurationError):
        apply_event(cfg, wt, RecolourAll(0, 0, 9))
    with pytest.raises(ConfigurationError):
        apply_event(cfg, wt, AddAgents(0, 0, DARK, 1, weight=3.0))
    # lenient mode lets the light-only colour in
    cfg2, wt2 = apply_event(cfg, wt, AddAgents(0, 7, LIGHT, 3, weight=2.0), strict=False)
    assert cfg2.dark_counts[7] == 0 and wt2.weights[7] == 2.0


def test_lenient_light_only_colour_is_flagged_by_monitor():
    cfg, wt = base()
    mon = SustainabilityMonitor(every=10, fail_fast=False)
    sched = EventSchedule([AddAgents(50, 9, LIGHT, 2, weight=1.0)], strict_sustainability=False)
    run_with_schedule(cfg, wt, 200, sched, make_rng(1), [mon], snapshot_every=10)
    assert not mon.passed and mon.failed_colour == 9


class Every:
    # the jump engine redraws its gap at each stop, so paths match only at equal cadences
    def __init__(self, every):
        self.every = every

    def __call__(self, config):
        pass


def test_empty_schedule_equals_plain_run():
    cfg, wt = base()
    traj = run_with_schedule(cfg, wt, 30_000, EventSchedule(), make_rng(5), snapshot_every=100)
    assert traj.final == run(cfg, wt, 30_000, make_rng(5), [Every(100)])


def test_event_at_zero_equals_modified_start():
    cfg, wt = base()
    ev = AddColour(0, 3.0, 2)
    traj = run_with_schedule(cfg, wt, 20_000, EventSchedule([ev]), make_rng(6), snapshot_every=100)
    cfg2, wt2 = apply_event(cfg, wt, ev)
    assert traj.final == run(cfg2, wt2, 20_000, make_rng(6), [Every(100)])
    assert traj.weights.weights == wt2.weights


def test_ties_apply_in_list_order():
    cfg, wt = base()
    sched = EventSchedule([AddAgents(10, 0, DARK, 2), RecolourAll(10, 0, 1, LIGHT),
                           AddAgents(5, 1, DARK, 1)])
    assert [type(e).__name__ for e in sched.events] == ["AddAgents", "AddAgents", "RecolourAll"]
    traj = run_with_schedule(cfg, wt, 10, sched, make_rng(2))
    # the recolour came after the two agents joined colour 0, so all of them moved
    assert traj.final.population == cfg.population + 3
    assert traj.final.colours == [1]
    assert [r.step for r in traj.recoveries] == [5, 10, 10]


def test_n_and_weight_bookkeeping_over_schedule():
    cfg, wt = base()
    sched = EventSchedule([AddColour(1000, 2.0, 1), AddAgents(2000, 0, DARK, 4),
                           RecolourAll(3000, 1, 2)])
    mon = SustainabilityMonitor(every=100)
    traj = run_with_schedule(cfg, wt, 5000, sched, make_rng(3), [mon], snapshot_every=100)
    assert traj.final.population == cfg.population + 5
    assert traj.weights.total_weight == 3.0 and traj.weights.colours == [0, 2]
    assert mon.passed and mon.removed == [(3000, 1)]
    for seg in traj.segments:
        arr = seg.array()
        if len(arr):
            assert len(set(arr.sum(axis=1))) == 1


def test_tracked_agent_follows_recolour():
    cfg, wt = base()
    tr = TrackedAgent(1, DARK)
    run_with_schedule(cfg, wt, 1000, EventSchedule([RecolourAll(500, 1, 0, LIGHT)]),
                      make_rng(4), tracked=[tr])
    assert tr.colour == 0 and tr.steps_tracked == 1000
    assert any(step == 500 and c == 0 for step, c, _ in tr.history)


def test_recovery_after_add_colour():
    wt = WeightTable.of([1, 2])
    n = 1000
    sched = EventSchedule([AddColour(10 * n, 2.0, 1)])
    traj = run_with_schedule(equilibrium_config(wt, n), wt, 4_000_000, sched, make_rng(8),
                             snapshot_every=n, band=0.1)
    rec = traj.recoveries[0]
    assert rec.to_band is not None and rec.to_band < 4_000_000
    assert rec.to_region_E is not None


def test_schedule_json(tmp_path):
    data = [{"at": 500000, "kind": "add_colour", "weight": 2, "dark": 1},
            {"at": 10, "kind": "add_agents", "colour": 0, "shade": "light", "count": 3},
            {"at": 20, "kind": "recolour_all", "from": 0, "to": 1, "shade": "dark"}]
    path = tmp_path / "events.json"
    path.write_text(json.dumps(data))
    sched = EventSchedule.load(path)
    assert [e.at_step for e in sched.events] == [10, 20, 500000]
    assert sched.strict_sustainability
    for d in data:
        assert event_from_json(event_to_json(event_from_json(d))) == event_from_json(d)
    with pytest.raises(ConfigurationError):
        event_from_json({"at": 1, "kind": "explode"})
    with pytest.raises(ConfigurationError):
        EventSchedule([AddColour(-1, 1.0)])
