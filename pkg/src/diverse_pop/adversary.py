"""Scripted structural changes: adding agents, adding colours, recolouring.

Strict mode enforces the two provisos under which sustainability survives
structural change: new colours arrive dark, and no event leaves a colour's
light agents as its only representation. A full recolour of a colour is a
sanctioned removal, not a violation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .metrics import RegionParams, regions_array
from .protocol import (DARK, LIGHT, ColourId, Configuration, ConfigurationError, CountEngine,
                       Observer, TrackedAgent, WeightTable, drive)


class StrictModeViolation(ConfigurationError):
    pass


@dataclass(frozen=True)
class AddAgents:
    at_step: int
    colour: ColourId
    shade: int
    count: int
    # only for a colour not yet in the system
    weight: float | None = None


@dataclass(frozen=True)
class AddColour:
    at_step: int
    weight: float
    initial_dark_count: int = 1
    colour: ColourId | None = None


@dataclass(frozen=True)
class RecolourAll:
    at_step: int
    from_colour: ColourId
    to_colour: ColourId
    to_shade: int = DARK


AdversaryEvent = Union[AddAgents, AddColour, RecolourAll]


@dataclass
class EventSchedule:
    events: list[AdversaryEvent] = field(default_factory=list)
    strict_sustainability: bool = True

    def __post_init__(self):
        for e in self.events:
            if e.at_step < 0:
                raise ConfigurationError(f"event {e} scheduled before step 0")
        # stable: ties keep list order
        self.events = sorted(self.events, key=lambda e: e.at_step)

    @classmethod
    def from_json(cls, data, strict: bool = True) -> "EventSchedule":
        if isinstance(data, dict):
            strict = data.get("strict", strict)
            data = data["events"]
        return cls([event_from_json(d) for d in data], strict)

    @classmethod
    def load(cls, path: str | Path, strict: bool = True) -> "EventSchedule":
        return cls.from_json(json.loads(Path(path).read_text()), strict)


def _shade(value) -> int:
    if value in (1, "dark", DARK):
        return DARK
    if value in (0, "light"):
        return LIGHT
    raise ConfigurationError(f"unknown shade {value!r}")


def event_from_json(d: dict) -> AdversaryEvent:
    kind = d.get("kind")
    at = int(d["at"])
    if kind == "add_agents":
        w = d.get("weight")
        return AddAgents(at, int(d["colour"]), _shade(d.get("shade", "dark")), int(d["count"]),
                         None if w is None else float(w))
    if kind == "add_colour":
        c = d.get("colour")
        return AddColour(at, float(d["weight"]), int(d.get("dark", 1)), None if c is None else int(c))
    if kind == "recolour_all":
        return RecolourAll(at, int(d["from"]), int(d["to"]), _shade(d.get("shade", "dark")))
    raise ConfigurationError(f"unknown event kind {kind!r}")


def event_to_json(e: AdversaryEvent) -> dict:
    shade = lambda s: "dark" if s == DARK else "light"
    if isinstance(e, AddAgents):
        d = {"at": e.at_step, "kind": "add_agents", "colour": e.colour, "shade": shade(e.shade),
             "count": e.count}
        if e.weight is not None:
            d["weight"] = e.weight
        return d
    if isinstance(e, AddColour):
        d = {"at": e.at_step, "kind": "add_colour", "weight": e.weight, "dark": e.initial_dark_count}
        if e.colour is not None:
            d["colour"] = e.colour
        return d
    return {"at": e.at_step, "kind": "recolour_all", "from": e.from_colour, "to": e.to_colour,
            "shade": shade(e.to_shade)}


@dataclass
class EventEffect:
    added: list[ColourId] = field(default_factory=list)
    removed: list[ColourId] = field(default_factory=list)


def apply_event(config: Configuration, weights: WeightTable, event: AdversaryEvent,
                strict: bool = True) -> tuple[Configuration, WeightTable]:
    cfg, wt, _ = apply_event_detailed(config, weights, event, strict)
    return cfg, wt


def apply_event_detailed(config: Configuration, weights: WeightTable, event: AdversaryEvent,
                         strict: bool = True) -> tuple[Configuration, WeightTable, EventEffect]:
    cfg = config.copy()
    wt = weights.copy()
    eff = EventEffect()

    def fresh(colour):
        if colour in wt.weights or colour in wt.retired:
            raise ConfigurationError(f"colour id {colour} already used")

    if isinstance(event, AddAgents):
        if event.count < 1:
            raise ConfigurationError("add_agents needs count >= 1")
        if event.colour not in wt.weights:
            if event.weight is None:
                raise ConfigurationError(f"unknown colour {event.colour}")
            fresh(event.colour)
            if strict and event.shade != DARK:
                raise StrictModeViolation(
                    f"colour {event.colour} would enter with light agents only")
            _add_colour(cfg, wt, event.colour, event.weight)
            eff.added.append(event.colour)
        elif event.weight is not None and event.weight != wt.weights[event.colour]:
            raise ConfigurationError("changing a colour's weight in place is not supported")
        table = cfg.dark_counts if event.shade == DARK else cfg.light_counts
        table[event.colour] += event.count
    elif isinstance(event, AddColour):
        if event.initial_dark_count < 1:
            raise StrictModeViolation("a new colour must arrive with at least one dark agent")
        colour = wt.next_id() if event.colour is None else event.colour
        fresh(colour)
        _add_colour(cfg, wt, colour, event.weight)
        cfg.dark_counts[colour] = event.initial_dark_count
        eff.added.append(colour)
    elif isinstance(event, RecolourAll):
        src, dst = event.from_colour, event.to_colour
        for c in (src, dst):
            if c not in wt.weights:
                raise ConfigurationError(f"unknown colour {c}")
        if src == dst:
            raise ConfigurationError("recolour source and destination coincide")
        if len(wt.weights) < 2:
            raise ConfigurationError("cannot remove the only colour")
        moved = cfg.dark_counts.pop(src) + cfg.light_counts.pop(src)
        table = cfg.dark_counts if event.to_shade == DARK else cfg.light_counts
        table[dst] += moved
        del wt.weights[src]
        wt.retired.add(src)
        eff.removed.append(src)
    else:
        raise ConfigurationError(f"unknown event {event!r}")
    if strict:
        for c in wt.colours:
            if cfg.dark_counts[c] < 1:
                raise StrictModeViolation(f"colour {c} left without a dark agent by {event}")
    return cfg, wt, eff


def _add_colour(cfg: Configuration, wt: WeightTable, colour: ColourId, weight: float):
    if not math.isfinite(weight) or weight < 1:
        raise ConfigurationError(f"new colour weight {weight} violates w_i >= 1")
    if wt.integer_only and weight != int(weight):
        raise ConfigurationError("integer weights required")
    wt.weights[colour] = float(weight)
    cfg.dark_counts[colour] = 0
    cfg.light_counts[colour] = 0


# -- scheduled runs ------------------------------------------------------------

@dataclass
class Segment:
    """Snapshots between two structural changes, under one weight table."""

    colours: list[ColourId]
    weights: WeightTable
    steps: list[int] = field(default_factory=list)
    rows: list[np.ndarray] = field(default_factory=list)

    def array(self) -> np.ndarray:
        k = len(self.colours)
        return np.array(self.rows, dtype=np.int64).reshape(-1, 2 * k)

    def ws(self) -> np.ndarray:
        return np.array([self.weights.weights[c] for c in self.colours])


@dataclass
class Recovery:
    event: AdversaryEvent
    step: int
    to_region_E: int | None = None  # ticks until first snapshot in E(delta)
    to_band: int | None = None  # ticks until every diversity error is within the band


@dataclass
class Trajectory:
    final: Configuration
    weights: WeightTable
    segments: list[Segment]
    recoveries: list[Recovery]


class _Recorder(Observer):
    def __init__(self, every: int, segment: Segment):
        self.every = every
        self.segment = segment

    def __call__(self, config):
        cs = self.segment.colours
        self.segment.steps.append(config.step)
        self.segment.rows.append(np.concatenate([config.dark_vector(cs), config.light_vector(cs)]))


def run_with_schedule(config: Configuration, weights: WeightTable, steps: int,
                      schedule: EventSchedule, rng: np.random.Generator,
                      observers: Sequence[Observer] = (), snapshot_every: int | None = None,
                      band: float | None = None, params: RegionParams = RegionParams(),
                      tracked: Sequence[TrackedAgent] = ()) -> Trajectory:
    """Interleave scheduled events with protocol ticks.

    An event with ``at_step = s`` applies after tick ``s`` and before tick
    ``s + 1``. Recovery times are measured on snapshots taken every
    ``snapshot_every`` ticks against the weight table in force after the event.
    """
    if snapshot_every is None:
        snapshot_every = max(1, config.population // 10)
    end = config.step + steps
    cfg, wt = config.copy(), weights.copy()
    segments: list[Segment] = []
    recoveries: list[Recovery] = []
    pending = [e for e in schedule.events if e.at_step <= end]
    idx = 0
    while True:
        while idx < len(pending) and pending[idx].at_step <= cfg.step:
            ev = pending[idx]
            cfg, wt, eff = apply_event_detailed(cfg, wt, ev, schedule.strict_sustainability)
            cfg.step = max(cfg.step, ev.at_step)
            _move_tracked(tracked, ev, cfg.step)
            for o in observers:
                if hasattr(o, "weights_changed"):
                    o.weights_changed(wt.copy())
                for c in eff.removed:
                    if hasattr(o, "colour_removed"):
                        o.colour_removed(c, cfg.step)
                for c in eff.added:
                    if hasattr(o, "colour_added"):
                        o.colour_added(c)
            recoveries.append(Recovery(ev, cfg.step))
            idx += 1
        stop = pending[idx].at_step if idx < len(pending) else end
        seg = Segment(wt.colours, wt.copy())
        segments.append(seg)
        if stop > cfg.step:
            engine = CountEngine(cfg, wt, rng, tracked)
            drive(engine, stop - cfg.step, [_Recorder(snapshot_every, seg), *observers])
            cfg = engine.config()
        if idx >= len(pending):
            break
    _score_recoveries(recoveries, segments, params, band)
    return Trajectory(cfg, wt, segments, recoveries)


def _move_tracked(tracked: Sequence[TrackedAgent], ev: AdversaryEvent, step: int):
    if not isinstance(ev, RecolourAll):
        return
    for tr in tracked:
        if tr.colour == ev.from_colour:
            tr.colour, tr.shade = ev.to_colour, ev.to_shade
            tr.transitions += 1
            tr.history.append((step, tr.colour, tr.shade))


def _score_recoveries(recoveries, segments, params, band):
    for rec in recoveries:
        later = [s for s in segments if s.steps and s.steps[-1] > rec.step]
        for seg in later:
            arr = seg.array()
            steps = np.array(seg.steps)
            keep = steps > rec.step
            if not keep.any():
                continue
            arr, steps = arr[keep], steps[keep]
            ws = seg.ws()
            if rec.to_region_E is None:
                hit = np.flatnonzero(regions_array(arr, ws, params)["E"])
                if hit.size:
                    rec.to_region_E = int(steps[hit[0]] - rec.step)
            if rec.to_band is None:
                n = arr.sum(axis=1)
                tol = band if band is not None else 10 / np.sqrt(n)
                err = np.abs(arr[:, : ws.size] + arr[:, ws.size:]) / n[:, None] - ws / ws.sum()
                hit = np.flatnonzero(np.abs(err).max(axis=1) <= tol)
                if hit.size:
                    rec.to_band = int(steps[hit[0]] - rec.step)
            # only the segment directly following the event counts
            break
