"""Potentials, region predicates and property verdicts.

Scalar functions take a :class:`Configuration`; the ``*_array`` variants take
a packed trajectory of shape ``(T, 2k)`` (dark counts then light counts) and
the weight vector, and are what the experiment code uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .protocol import (DARK, LIGHT, ColourId, Configuration, Observer, TrackedAgent,
                       WeightTable)

REGION_NAMES = ("Omega", "R1", "S1", "R2", "S2", "S3", "S4", "E", "E_prime", "E_hat")


def _ratios(counts: dict[ColourId, int], weights: WeightTable) -> np.ndarray:
    return np.array([counts.get(c, 0) / weights.weights[c] for c in weights.colours])


def _double_sum(q: np.ndarray) -> float:
    return float(((q[:, None] - q[None, :]) ** 2).sum())


def potential_phi(config: Configuration, weights: WeightTable) -> float:
    """Sum over ordered colour pairs of (A_i/w_i - A_j/w_j)^2."""
    return _double_sum(_ratios(config.dark_counts, weights))


def potential_psi(config: Configuration, weights: WeightTable) -> float:
    """Sum over ordered colour pairs of (a_i/w_i - a_j/w_j)^2."""
    return _double_sum(_ratios(config.light_counts, weights))


def potential_sigma_sq(config: Configuration, weights: WeightTable) -> float:
    dark = sum(config.dark_counts.values())
    light = sum(config.light_counts.values())
    return (dark / weights.total_weight - light) ** 2


def phi_moments(config: Configuration, weights: WeightTable) -> float:
    """phi via 2k*Q2 - 2*Q1^2 with Q_r the power sums of A_i/w_i."""
    q = _ratios(config.dark_counts, weights)
    return float(2 * len(q) * (q ** 2).sum() - 2 * q.sum() ** 2)


def diversity_error(config: Configuration, weights: WeightTable) -> dict[ColourId, float]:
    n = config.population
    w = weights.total_weight
    return {c: abs(config.colour_count(c) / n - weights.weights[c] / w) for c in weights.colours}


def equilibrium_targets(weights: WeightTable, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Balanced dark and light counts w_i n/(1+w) and w_i n/((1+w) w)."""
    ws = np.array([weights.weights[c] for c in weights.colours])
    w = ws.sum()
    return ws * n / (1 + w), ws * n / ((1 + w) * w)


def equilibrium_config(weights: WeightTable, n: int) -> Configuration:
    """Integer configuration nearest the balanced targets (largest remainders)."""
    dark, light = equilibrium_targets(weights, n)
    target = np.concatenate([dark, light])
    base = np.floor(target).astype(np.int64)
    short = n - int(base.sum())
    order = np.argsort(-(target - base), kind="stable")
    base[order[:short]] += 1
    k = weights.num_colours
    cs = weights.colours
    return Configuration({c: int(base[i]) for i, c in enumerate(cs)},
                         {c: int(base[k + i]) for i, c in enumerate(cs)})


# -- vectorised over trajectories -------------------------------------------

def _pair_sum(q: np.ndarray) -> np.ndarray:
    k = q.shape[1]
    return 2 * k * (q ** 2).sum(axis=1) - 2 * q.sum(axis=1) ** 2


def potentials_array(traj: np.ndarray, ws: np.ndarray) -> dict[str, np.ndarray]:
    traj = np.atleast_2d(traj)
    ws = np.asarray(ws, dtype=float)
    k = ws.size
    dark = traj[:, :k].astype(float)
    light = traj[:, k:].astype(float)
    n = traj.sum(axis=1)
    w = ws.sum()
    # the moment form can round just below zero
    phi = np.maximum(_pair_sum(dark / ws), 0.0)
    psi = np.maximum(_pair_sum(light / ws), 0.0)
    sigma_sq = (dark.sum(axis=1) / w - light.sum(axis=1)) ** 2
    div_err = np.abs((dark + light) / n[:, None] - ws / w)
    return {"phi": phi, "psi": psi, "sigma_sq": sigma_sq, "div_err": div_err}


# -- regions -----------------------------------------------------------------

@dataclass(frozen=True)
class RegionParams:
    epsilon: float = 0.1
    delta: float = 0.05
    # calibrated: equilibrium at n = 1e4, w = (1, 2, 3) has phi/(w n) <= 1.0 on 99% of samples
    potential_bound_const: float = 2.0

    def __post_init__(self):
        if not 0 < self.epsilon < 0.25:
            raise ValueError("epsilon must lie in (0, 1/4)")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.potential_bound_const <= 0:
            raise ValueError("potential bound constant must be positive")


def regions_array(traj: np.ndarray, ws: np.ndarray, params: RegionParams) -> dict[str, np.ndarray]:
    traj = np.atleast_2d(traj)
    ws = np.asarray(ws, dtype=float)
    k = ws.size
    eps, dlt, C = params.epsilon, params.delta, params.potential_bound_const
    dark = traj[:, :k].astype(float)
    light = traj[:, k:].astype(float)
    n = traj.sum(axis=1).astype(float)
    w = ws.sum()
    a_frac = light.sum(axis=1) / n
    A_frac = dark / n[:, None]
    share = ws / (1 + w)

    omega = (traj[:, :k] >= 1).all(axis=1)
    R1 = omega & (a_frac >= (1 - eps) / (w + 1))
    S1 = omega & (a_frac >= (1 - 2 * eps) / (w + 1))
    R2 = S1 & (A_frac >= (1 - 3 * eps) * share).all(axis=1)
    S2 = S1 & (A_frac >= (1 - 4 * eps) * share).all(axis=1)
    S3 = S2 & (A_frac <= (1 + 4 * eps * w) * share).all(axis=1)
    S4 = S3 & (a_frac <= (1 + 4 * eps * w) / (1 + w))
    lo = (1 - dlt) * n / (1 + w)
    hi = (1 + dlt) * n / (1 + w)
    q = dark / ws
    a = light.sum(axis=1)
    E = omega & ((q >= lo[:, None]) & (q <= hi[:, None])).all(axis=1) & (a >= lo) & (a <= hi)
    pots = potentials_array(traj, ws)
    E_prime = E & (pots["phi"] <= C * w * n)
    log_n = np.log(n)
    E_hat = omega & (pots["phi"] <= C * w * n * log_n) & (pots["psi"] <= C * w * n * log_n)
    return {"Omega": omega, "R1": R1, "S1": S1, "R2": R2, "S2": S2, "S3": S3, "S4": S4,
            "E": E, "E_prime": E_prime, "E_hat": E_hat}


def _pack(config: Configuration, weights: WeightTable) -> tuple[np.ndarray, np.ndarray]:
    cs = weights.colours
    row = np.concatenate([config.dark_vector(cs), config.light_vector(cs)])
    return row[None, :], np.array([weights.weights[c] for c in cs])


def classify_regions(config: Configuration, weights: WeightTable,
                     params: RegionParams = RegionParams()) -> dict[str, bool]:
    traj, ws = _pack(config, weights)
    return {name: bool(v[0]) for name, v in regions_array(traj, ws, params).items()}


# -- snapshots -----------------------------------------------------------------

@dataclass
class PotentialSnapshot:
    step: int
    n: int
    phi: float
    psi: float
    sigma_sq: float
    diversity_errors: dict[ColourId, float]
    region_flags: dict[str, bool]

    @classmethod
    def take(cls, config: Configuration, weights: WeightTable,
             params: RegionParams = RegionParams()) -> "PotentialSnapshot":
        traj, ws = _pack(config, weights)
        pots = potentials_array(traj, ws)
        regions = regions_array(traj, ws, params)
        return cls(
            step=config.step,
            n=config.population,
            phi=float(pots["phi"][0]),
            psi=float(pots["psi"][0]),
            sigma_sq=float(pots["sigma_sq"][0]),
            diversity_errors=dict(zip(weights.colours, pots["div_err"][0].tolist())),
            region_flags={k: bool(v[0]) for k, v in regions.items()},
        )

    def to_record(self) -> dict:
        return {
            "t": self.step,
            "parallel_t": self.step / self.n,
            "phi": self.phi,
            "psi": self.psi,
            "sigma_sq": self.sigma_sq,
            "colours": sorted(self.diversity_errors),
            "err": [self.diversity_errors[c] for c in sorted(self.diversity_errors)],
            "regions": {name: self.region_flags[name] for name in REGION_NAMES},
        }


# -- fairness --------------------------------------------------------------------

@dataclass
class FairnessReport:
    window_start: int
    window_end: int
    colour_fraction: dict[ColourId, float]
    shade_fraction: dict[tuple[ColourId, int], float]
    target: dict[ColourId, float]
    shade_target: dict[tuple[ColourId, int], float]
    max_relative_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= self.tolerance

    def dark_light_ratio(self, colour: ColourId) -> float:
        light = self.shade_fraction.get((colour, LIGHT), 0.0)
        dark = self.shade_fraction.get((colour, DARK), 0.0)
        return math.inf if light == 0 else dark / light

    def to_json(self) -> dict:
        return {
            "window": [self.window_start, self.window_end],
            "colour_fraction": {str(c): v for c, v in self.colour_fraction.items()},
            "shade_fraction": {f"{c}:{s}": v for (c, s), v in self.shade_fraction.items()},
            "target": {str(c): v for c, v in self.target.items()},
            "max_relative_error": self.max_relative_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def fairness_report(tracked: TrackedAgent, weights: WeightTable,
                    window: tuple[int, int] | None = None,
                    tolerance: float = 0.05) -> FairnessReport:
    """Occupancy of one tracked agent over ticks ``(start, end]``.

    Relative error is taken over the per-colour targets ``w_i / w``.
    """
    if window is None:
        window = (tracked.start_step, tracked.start_step + tracked.steps_tracked)
    start, end = window
    if end <= start:
        raise ValueError("empty fairness window")
    occ = tracked.occupancy(start, end)
    total = end - start
    w = weights.total_weight
    colours = weights.colours
    shade_fraction = {(c, s): occ.get((c, s), 0) / total for c in colours for s in (DARK, LIGHT)}
    # colours retired mid-window still count towards the fractions
    for (c, s), v in occ.items():
        shade_fraction.setdefault((c, s), v / total)
    colour_fraction: dict[ColourId, float] = {}
    for (c, _), v in shade_fraction.items():
        colour_fraction[c] = colour_fraction.get(c, 0.0) + v
    target = {c: weights.weights[c] / w for c in colours}
    shade_target = {}
    for c in colours:
        shade_target[(c, DARK)] = weights.weights[c] / (1 + w)
        shade_target[(c, LIGHT)] = weights.weights[c] / w / (1 + w)
    max_rel = max(abs(colour_fraction.get(c, 0.0) - target[c]) / target[c] for c in colours)
    return FairnessReport(start, end, colour_fraction, shade_fraction, target, shade_target,
                          max_rel, tolerance)


# -- sustainability --------------------------------------------------------------

class SustainabilityViolation(Exception):
    def __init__(self, step: int, colour: ColourId, strict: bool):
        what = "dark count" if strict else "support"
        super().__init__(f"colour {colour} {what} hit zero at step {step}")
        self.step = step
        self.colour = colour


@dataclass
class SustainabilityMonitor(Observer):
    """No active colour may lose all support (strict: all dark agents).

    Colours removed by a scheduled event are reported through
    :meth:`colour_removed` and leave the active set.
    """

    strict: bool = True
    every: int = 1
    fail_fast: bool = True
    active: set[ColourId] | None = None
    failed_at: int | None = None
    failed_colour: ColourId | None = None
    removed: list[tuple[int, ColourId]] = field(default_factory=list)
    checks: int = 0

    @property
    def passed(self) -> bool:
        return self.failed_at is None

    def colour_removed(self, colour: ColourId, step: int):
        if self.active is not None:
            self.active.discard(colour)
        self.removed.append((step, colour))

    def colour_added(self, colour: ColourId):
        if self.active is not None:
            self.active.add(colour)

    def _fail(self, step, colour):
        if self.failed_at is None:
            self.failed_at, self.failed_colour = step, colour
        if self.fail_fast:
            raise SustainabilityViolation(step, colour, self.strict)

    def __call__(self, config: Configuration):
        if self.active is None:
            self.active = set(config.colours)
        self.checks += 1
        for c in sorted(self.active):
            dark = config.dark_counts.get(c, 0)
            support = dark + config.light_counts.get(c, 0)
            if (dark if self.strict else support) < 1:
                self._fail(config.step, c)

    def on_interval(self, start: int, end: int, min_dark: dict[ColourId, int]):
        # per-tick minima reported by the engine; support >= dark, so strict covers both
        if self.active is None:
            self.active = set(min_dark)
        self.checks += end - start
        if not self.strict:
            return
        for c in sorted(self.active):
            if min_dark.get(c, 1) < 1:
                self._fail(end, c)

    def verdict(self) -> dict:
        return {"passed": self.passed, "strict": self.strict, "failed_at": self.failed_at,
                "failed_colour": self.failed_colour,
                "removed": [[s, c] for s, c in self.removed]}
