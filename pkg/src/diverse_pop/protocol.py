"""Diversification protocol on the complete graph.

Each agent holds a colour and a shade bit (1 = dark, 0 = light). A scheduled
agent ``u`` samples a partner ``v != u`` uniformly and

* adopts ``v``'s colour as dark if ``u`` is light and ``v`` is dark;
* turns light with probability ``1 / w_i`` if both are dark of colour ``i``;
* otherwise does nothing.

The aggregate state is the vector of dark and light counts per colour. The
fast engines live in :mod:`diverse_pop._engine`; this module holds the domain
types, the exact one-step kernel and the reference single-tick steppers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _engine

ColourId = int
DARK = 1
LIGHT = 0


class ProtocolError(Exception):
    pass


class NoPartnerError(ProtocolError):
    """Population too small for the scheduled agent to find a partner."""


class ConfigurationError(ProtocolError):
    pass


class InvariantViolation(ProtocolError):
    pass


class ObserverError(ProtocolError):
    def __init__(self, step: int, observer, cause: BaseException):
        super().__init__(f"observer {observer!r} failed at step {step}: {cause!r}")
        self.step = step
        self.observer = observer
        self.__cause__ = cause


@dataclass
class WeightTable:
    """Weights of the active colours.

    ``retired`` remembers ids of removed colours so they are never reused.
    """

    weights: dict[ColourId, float]
    retired: set[ColourId] = field(default_factory=set)
    integer_only: bool = False

    def __post_init__(self):
        self.weights = {int(c): float(w) for c, w in self.weights.items()}
        for c, w in self.weights.items():
            if not math.isfinite(w) or w < 1:
                raise ConfigurationError(f"colour {c}: weight {w} violates w_i >= 1")
            if self.integer_only and w != int(w):
                raise ConfigurationError(f"colour {c}: weight {w} is not an integer")
        overlap = self.retired & set(self.weights)
        if overlap:
            raise ConfigurationError(f"colours {sorted(overlap)} are both active and retired")

    @classmethod
    def of(cls, weights: Sequence[float], **kw) -> "WeightTable":
        return cls(dict(enumerate(weights)), **kw)

    @property
    def colours(self) -> list[ColourId]:
        return sorted(self.weights)

    @property
    def total_weight(self) -> float:
        return float(sum(self.weights.values()))

    @property
    def num_colours(self) -> int:
        return len(self.weights)

    def next_id(self) -> ColourId:
        used = set(self.weights) | self.retired
        return max(used) + 1 if used else 0

    def coins(self) -> np.ndarray:
        return np.array([1.0 / self.weights[c] for c in self.colours])

    def copy(self) -> "WeightTable":
        return WeightTable(dict(self.weights), set(self.retired), self.integer_only)

    def to_json(self) -> dict:
        return {str(c): self.weights[c] for c in self.colours}


@dataclass
class Configuration:
    """Aggregate state: dark and light counts per colour, plus the tick counter."""

    dark_counts: dict[ColourId, int]
    light_counts: dict[ColourId, int]
    step: int = 0

    def __post_init__(self):
        self.dark_counts = {int(c): int(v) for c, v in self.dark_counts.items()}
        self.light_counts = {int(c): int(v) for c, v in self.light_counts.items()}
        for c in set(self.dark_counts) | set(self.light_counts):
            self.dark_counts.setdefault(c, 0)
            self.light_counts.setdefault(c, 0)
            if self.dark_counts[c] < 0 or self.light_counts[c] < 0:
                raise ConfigurationError(f"negative count for colour {c}")

    @classmethod
    def from_lists(cls, dark: Sequence[int], light: Sequence[int] | None = None, step: int = 0):
        light = [0] * len(dark) if light is None else light
        if len(light) != len(dark):
            raise ConfigurationError("dark and light count vectors differ in length")
        return cls(dict(enumerate(dark)), dict(enumerate(light)), step)

    @property
    def colours(self) -> list[ColourId]:
        return sorted(self.dark_counts)

    @property
    def population(self) -> int:
        return sum(self.dark_counts.values()) + sum(self.light_counts.values())

    n = population

    def colour_count(self, c: ColourId) -> int:
        return self.dark_counts[c] + self.light_counts[c]

    def dark_vector(self, colours=None) -> np.ndarray:
        colours = self.colours if colours is None else colours
        return np.array([self.dark_counts.get(c, 0) for c in colours], dtype=np.int64)

    def light_vector(self, colours=None) -> np.ndarray:
        colours = self.colours if colours is None else colours
        return np.array([self.light_counts.get(c, 0) for c in colours], dtype=np.int64)

    def key(self) -> tuple:
        cs = self.colours
        return tuple(self.dark_counts[c] for c in cs) + tuple(self.light_counts[c] for c in cs)

    def copy(self) -> "Configuration":
        return Configuration(dict(self.dark_counts), dict(self.light_counts), self.step)

    def to_json(self) -> dict:
        cs = self.colours
        return {
            "step": self.step,
            "dark_counts": {str(c): self.dark_counts[c] for c in cs},
            "light_counts": {str(c): self.light_counts[c] for c in cs},
            "n": self.population,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Configuration":
        cfg = cls(
            {int(c): v for c, v in data["dark_counts"].items()},
            {int(c): v for c, v in data["light_counts"].items()},
            int(data.get("step", 0)),
        )
        if "n" in data and cfg.population != data["n"]:
            raise ConfigurationError(f"counts sum to {cfg.population}, record says n={data['n']}")
        return cfg


def check_compatible(config: Configuration, weights: WeightTable) -> list[ColourId]:
    """Return the shared colour order, or raise if config and weights disagree."""
    unknown = set(config.colours) - set(weights.weights)
    if unknown:
        raise ConfigurationError(f"colours {sorted(unknown)} have no weight")
    missing = set(weights.weights) - set(config.colours)
    if missing:
        raise ConfigurationError(f"weighted colours {sorted(missing)} absent from configuration")
    if config.population < 2:
        raise NoPartnerError(f"population {config.population} < 2: no partner to sample")
    return weights.colours


def pack(config: Configuration, colours: Sequence[ColourId]) -> np.ndarray:
    return np.concatenate([config.dark_vector(colours), config.light_vector(colours)])


def unpack(counts: np.ndarray, colours: Sequence[ColourId], step: int) -> Configuration:
    k = len(colours)
    return Configuration(
        {c: int(counts[i]) for i, c in enumerate(colours)},
        {c: int(counts[k + i]) for i, c in enumerate(colours)},
        step,
    )


# -- exact one-step kernel -------------------------------------------------

@dataclass(frozen=True)
class Outcome:
    """One agent moves ``src -> dst``; classes are ``(shade, colour)``. No-op has both None."""

    src: tuple[int, ColourId] | None
    dst: tuple[int, ColourId] | None
    probability: Fraction | float

    @property
    def is_noop(self) -> bool:
        return self.src is None


@dataclass
class TransitionKernel:
    outcomes: list[Outcome]

    def total(self):
        return sum(o.probability for o in self.outcomes)

    def apply(self, config: Configuration, outcome: Outcome) -> Configuration:
        nxt = config.copy()
        nxt.step += 1
        if outcome.is_noop:
            return nxt
        for (shade, c), d in ((outcome.src, -1), (outcome.dst, +1)):
            table = nxt.dark_counts if shade == DARK else nxt.light_counts
            table[c] += d
        return nxt

    def next_states(self, config: Configuration) -> dict[tuple, Fraction | float]:
        """Distribution of the next state's count key (merging identical states)."""
        out: dict[tuple, Fraction | float] = {}
        for o in self.outcomes:
            key = self.apply(config, o).key()
            out[key] = out.get(key, 0) + o.probability
        return out


def enumerate_kernel(config: Configuration, weights: WeightTable, exact: bool = True) -> TransitionKernel:
    """Full one-step law of the count process.

    With ``exact=True`` masses are ``Fraction``s (weights are converted exactly
    from their float values) and sum to exactly 1.
    """
    colours = check_compatible(config, weights)
    n = config.population
    num = Fraction if exact else float
    denom = num(n * (n - 1))
    dark_total = sum(config.dark_counts.values())
    outcomes = []
    for i in colours:
        A = config.dark_counts[i]
        if A >= 2:
            p = num(A * (A - 1)) / (num(weights.weights[i]) * denom)
            outcomes.append(Outcome((DARK, i), (LIGHT, i), p))
    if dark_total:
        for i in colours:
            a = config.light_counts[i]
            if not a:
                continue
            for j in colours:
                A = config.dark_counts[j]
                if A:
                    outcomes.append(Outcome((LIGHT, i), (DARK, j), num(a * A) / denom))
    rest = num(1) - sum((o.probability for o in outcomes), num(0))
    if exact and rest < 0:
        raise InvariantViolation("kernel masses exceed 1")
    outcomes.append(Outcome(None, None, max(rest, num(0))))
    return TransitionKernel(outcomes)


# -- single-tick reference steppers ----------------------------------------

def _pick(counts: Sequence[int], idx: int) -> int:
    acc = 0
    for c, size in enumerate(counts):
        acc += size
        if idx < acc:
            return c
    raise InvariantViolation(f"index {idx} outside population {acc}")


def _apply_rule(cu_shade, cu_colour, cv_shade, cv_colour, weights, rng):
    """New (shade, colour) of the scheduled agent, or None for no change."""
    if cu_shade == LIGHT:
        if cv_shade == DARK:
            return DARK, cv_colour
        return None
    if cv_shade == DARK and cu_colour == cv_colour:
        if rng.random() < 1.0 / weights.weights[cu_colour]:
            return LIGHT, cu_colour
    return None


def step_counts(config: Configuration, weights: WeightTable, rng: np.random.Generator) -> Configuration:
    """One tick on the aggregate counts: sample u's class, then v's class with u removed."""
    colours = check_compatible(config, weights)
    classes = [(DARK, c) for c in colours] + [(LIGHT, c) for c in colours]
    counts = list(config.dark_vector(colours)) + list(config.light_vector(colours))
    n = sum(counts)
    cu = _pick(counts, int(rng.integers(0, n)))
    counts_v = list(counts)
    counts_v[cu] -= 1
    cv = _pick(counts_v, int(rng.integers(0, n - 1)))
    nxt = config.copy()
    nxt.step += 1
    new = _apply_rule(*classes[cu], *classes[cv], weights, rng)
    if new is not None:
        _move(nxt, classes[cu], new)
    return nxt


def _move(config: Configuration, src, dst):
    for (shade, c), d in ((src, -1), (dst, +1)):
        table = config.dark_counts if shade == DARK else config.light_counts
        table[c] += d
        if table[c] < 0:
            raise InvariantViolation(f"count of {(shade, c)} went negative")


def step_agentwise(agents: Sequence[tuple[ColourId, int]], weights: WeightTable,
                   rng: np.random.Generator) -> list[tuple[ColourId, int]]:
    """Literal per-agent tick over a list of ``(colour, shade)`` pairs."""
    n = len(agents)
    if n < 2:
        raise NoPartnerError(f"population {n} < 2: no partner to sample")
    for c, _ in agents:
        if c not in weights.weights:
            raise ConfigurationError(f"colour {c} has no weight")
    u = int(rng.integers(0, n))
    v = int(rng.integers(0, n - 1))
    if v >= u:
        v += 1
    out = list(agents)
    (cu, su), (cv, sv) = agents[u], agents[v]
    new = _apply_rule(su, cu, sv, cv, weights, rng)
    if new is not None:
        out[u] = (new[1], new[0])
    return out


def agents_from_config(config: Configuration) -> list[tuple[ColourId, int]]:
    agents = []
    for c in config.colours:
        agents += [(c, DARK)] * config.dark_counts[c] + [(c, LIGHT)] * config.light_counts[c]
    return agents


def config_from_agents(agents: Iterable[tuple[ColourId, int]], colours: Sequence[ColourId],
                       step: int = 0) -> Configuration:
    dark = {c: 0 for c in colours}
    light = {c: 0 for c in colours}
    for c, s in agents:
        (dark if s == DARK else light)[c] += 1
    return Configuration(dark, light, step)


# -- tracked agents ----------------------------------------------------------

@dataclass
class TrackedAgent:
    """One distinguished agent's trajectory.

    ``visit_counts[(colour, shade)]`` counts post-tick states since
    ``start_step``; ``history`` lists ``(step, colour, shade)`` at each change,
    starting with the state held at ``start_step``.
    """

    colour: ColourId
    shade: int
    start_step: int = 0
    visit_counts: dict[tuple[ColourId, int], int] = field(default_factory=dict)
    transitions: int = 0
    history: list[tuple[int, ColourId, int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.history:
            self.history.append((self.start_step, self.colour, self.shade))

    @property
    def steps_tracked(self) -> int:
        return sum(self.visit_counts.values())

    @property
    def state(self) -> tuple[ColourId, int]:
        return self.colour, self.shade

    def _record(self, step: int, colour: ColourId, shade: int, visits: int = 1):
        if (colour, shade) != (self.colour, self.shade):
            self.colour, self.shade = colour, shade
            self.transitions += 1
            self.history.append((step, colour, shade))
        key = (colour, shade)
        self.visit_counts[key] = self.visit_counts.get(key, 0) + visits

    def occupancy(self, start: int, end: int) -> dict[tuple[ColourId, int], int]:
        """Ticks in ``(start, end]`` spent in each state (post-tick convention)."""
        lo = self.history[0][0]
        last = self.start_step + self.steps_tracked
        if not (lo <= start < end <= last):
            raise ValueError(f"window ({start}, {end}] outside tracked span ({lo}, {last}]")
        occ: dict[tuple[ColourId, int], int] = {}
        marks = self.history + [(last + 1, None, None)]
        for (s0, c, sh), (s1, _, _) in zip(marks, marks[1:]):
            # state (c, sh) holds after ticks s0 .. s1-1
            a, b = max(s0, start + 1), min(s1 - 1, end)
            if b >= a:
                occ[(c, sh)] = occ.get((c, sh), 0) + b - a + 1
        return occ


def _check_tracked(config: Configuration, tracked: TrackedAgent):
    table = config.dark_counts if tracked.shade == DARK else config.light_counts
    if table.get(tracked.colour, 0) < 1:
        raise InvariantViolation(
            f"tracked agent in {(tracked.colour, tracked.shade)} but that class is empty")


def step_with_tracking(config: Configuration, tracked: TrackedAgent, weights: WeightTable,
                       rng: np.random.Generator) -> tuple[Configuration, TrackedAgent]:
    """One tick in which the tracked agent is a distinguished member of its class."""
    colours = check_compatible(config, weights)
    _check_tracked(config, tracked)
    classes = [(DARK, c) for c in colours] + [(LIGHT, c) for c in colours]
    counts = list(config.dark_vector(colours)) + list(config.light_vector(colours))
    own = classes.index((tracked.shade, tracked.colour))
    # slot 0 is the tracked agent itself; the rest are the other agents by class
    ext_classes = [classes[own]] + classes
    ext_counts = [1] + counts
    ext_counts[1 + own] -= 1
    n = sum(ext_counts)
    cu = _pick(ext_counts, int(rng.integers(0, n)))
    counts_v = list(ext_counts)
    counts_v[cu] -= 1
    cv = _pick(counts_v, int(rng.integers(0, n - 1)))
    nxt = config.copy()
    nxt.step += 1
    new = _apply_rule(*ext_classes[cu], *ext_classes[cv], weights, rng)
    tr = TrackedAgent(tracked.colour, tracked.shade, tracked.start_step,
                      dict(tracked.visit_counts), tracked.transitions, list(tracked.history))
    post = tr.state
    if new is not None:
        _move(nxt, ext_classes[cu], new)
        if cu == 0:
            post = (new[1], new[0])
    tr._record(nxt.step, *post)
    return nxt, tr


# -- runs --------------------------------------------------------------------

class Observer:
    """Callback invoked every ``every`` ticks with the current configuration.

    Subclasses may also define ``on_interval(start, end, min_dark)`` to receive
    the per-colour minimum dark count reached at any tick in ``(start, end]``.
    """

    every: int = 1

    def __call__(self, config: Configuration) -> None:
        raise NotImplementedError


class FunctionObserver(Observer):
    def __init__(self, fn: Callable[[Configuration], None], every: int = 1):
        if every < 1:
            raise ValueError("observer cadence must be >= 1")
        self.fn = fn
        self.every = every

    def __call__(self, config):
        self.fn(config)

    def __repr__(self):
        return f"FunctionObserver({getattr(self.fn, '__name__', self.fn)}, every={self.every})"


LOG_CAPACITY = 1 << 14


class CountEngine:
    """Stateful wrapper around the compiled aggregate engines.

    ``method="jump"`` skips no-op ticks in geometric blocks; ``"tick"``
    samples every tick explicitly. Both realise the same chain.
    """

    def __init__(self, config: Configuration, weights: WeightTable, rng: np.random.Generator,
                 tracked: Sequence[TrackedAgent] = (), method: str = "jump"):
        if method not in ("jump", "tick"):
            raise ValueError(f"unknown method {method!r}")
        if method == "tick" and tracked:
            raise ValueError("tracked agents require method='jump'")
        self.colours = check_compatible(config, weights)
        self.weights = weights
        self.rng = rng
        self.method = method
        self.k = len(self.colours)
        self.coin = weights.coins()
        self.counts = pack(config, self.colours)
        self.step = config.step
        self.tracked = list(tracked)
        for tr in self.tracked:
            _check_tracked(config, tr)
        self._cls = [(DARK, c) for c in self.colours] + [(LIGHT, c) for c in self.colours]
        self._tracked_cls = np.array(
            [self._cls.index((t.shade, t.colour)) for t in self.tracked], dtype=np.int64)
        self._visits = np.zeros((len(self.tracked), 2 * self.k), dtype=np.int64)
        self._log = [np.empty(LOG_CAPACITY, dtype=np.int64) for _ in range(3)]
        self._log_pos = np.zeros(1, dtype=np.int64)
        self.reset_minima()

    def reset_minima(self):
        self.min_dark = self.counts[: self.k].copy()

    def config(self) -> Configuration:
        return unpack(self.counts, self.colours, self.step)

    def advance(self, ticks: int):
        if ticks < 0:
            raise ValueError("ticks must be >= 0")
        if self.method == "tick":
            _engine.count_tick(self.counts, self.coin, self.k, ticks, self.rng, self.min_dark)
            self.step += ticks
            return
        left = ticks
        while left > 0:
            self._log_pos[0] = 0
            done = _engine.count_jump(self.counts, self.coin, self.k, left, self.rng,
                                      self._tracked_cls, self._visits, self.min_dark,
                                      *self._log, self._log_pos, self.step)
            self._sync_tracked(self.step + done)
            self.step += done
            left -= done

    def _sync_tracked(self, end_step: int):
        if not self.tracked:
            return
        ticks, agents, cls = (a[: self._log_pos[0]] for a in self._log)
        for s, j, c in zip(ticks.tolist(), agents.tolist(), cls.tolist()):
            shade, colour = self._cls[c]
            tr = self.tracked[j]
            tr.colour, tr.shade = colour, shade
            tr.transitions += 1
            tr.history.append((s, colour, shade))
        for j, tr in enumerate(self.tracked):
            for c in np.flatnonzero(self._visits[j]):
                shade, colour = self._cls[c]
                key = (colour, shade)
                tr.visit_counts[key] = tr.visit_counts.get(key, 0) + int(self._visits[j, c])
        self._visits[:] = 0

    def record(self, every: int, count: int) -> np.ndarray:
        """Advance ``every * count`` ticks, returning the packed state after each block."""
        if self.tracked or self.method != "jump":
            out = np.empty((count, 2 * self.k), dtype=np.int64)
            for r in range(count):
                self.advance(every)
                out[r] = self.counts
            return out
        out = np.empty((count, 2 * self.k), dtype=np.int64)
        _engine.count_jump_record(self.counts, self.coin, self.k, every, out, self.rng, self.min_dark)
        self.step += every * count
        return out


def run(config: Configuration, weights: WeightTable, steps: int, rng: np.random.Generator,
        observers: Sequence[Observer] = (), tracked: Sequence[TrackedAgent] = (),
        method: str = "jump") -> Configuration:
    """Advance ``steps`` ticks, calling each observer at multiples of its cadence."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0:
        return config.copy()
    engine = CountEngine(config, weights, rng, tracked, method)
    drive(engine, steps, observers)
    return engine.config()


def drive(engine, steps: int, observers: Sequence[Observer]):
    """Advance ``engine`` by ``steps`` ticks with observer callbacks at their cadences."""
    end = engine.step + steps
    while engine.step < end:
        due = [((engine.step // o.every) + 1) * o.every for o in observers]
        nxt = min(due + [end])
        start = engine.step
        engine.reset_minima()
        engine.advance(nxt - engine.step)
        cfg = None
        for o in observers:
            try:
                hook = getattr(o, "on_interval", None)
                if hook is not None:
                    hook(start, engine.step, dict(zip(engine.colours, engine.min_dark.tolist())))
                if engine.step % o.every == 0:
                    cfg = cfg or engine.config()
                    o(cfg)
            except ObserverError:
                raise
            except Exception as exc:
                raise ObserverError(engine.step, o, exc) from exc
