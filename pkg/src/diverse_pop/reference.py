"""Analytic and brute-force reference models.

* the 2k-state chain followed by one agent in a perfectly balanced population,
  its closed-form stationary law and the err-perturbed comparison chains;
* gambler's ruin closed forms and an absorbing-chain linear solve;
* brute-force pair enumeration of the one-step law, and the exact finite
  chain on all configurations of a small population.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import _engine
from .protocol import (DARK, LIGHT, Configuration, ConfigurationError, WeightTable,
                       agents_from_config, enumerate_kernel)


class OracleError(Exception):
    """A reference computation disagrees with itself beyond tolerance."""


class ErrTooLarge(ValueError):
    pass


def state_labels(k: int) -> list[str]:
    return [f"D{i}" for i in range(k)] + [f"L{i}" for i in range(k)]


# -- equilibrium chain -------------------------------------------------------

@dataclass
class EquilibriumChain:
    """Transition matrix over ``[D_0..D_{k-1}, L_0..L_{k-1}]``.

    ``transition`` is a float array, or a nested list of ``Fraction`` when
    built with ``exact=True``.
    """

    transition: np.ndarray | list
    n: int
    weights: WeightTable

    @property
    def k(self) -> int:
        return self.weights.num_colours

    def matrix(self) -> np.ndarray:
        return np.array(self.transition, dtype=float)


def build_equilibrium_chain(weights: WeightTable, n: int, exact: bool = False) -> EquilibriumChain:
    if n < 2:
        raise ConfigurationError("n must be >= 2")
    num = Fraction if exact else float
    ws = [num(weights.weights[c]) for c in weights.colours]
    k = len(ws)
    w = sum(ws, num(0))
    scale = (1 + w) * n
    P = [[num(0)] * (2 * k) for _ in range(2 * k)]
    for i in range(k):
        for j in range(k):
            P[k + j][i] = ws[i] / scale
        P[k + i][k + i] = 1 - w / scale
        P[i][k + i] = 1 / scale
        P[i][i] = 1 - 1 / scale
    return EquilibriumChain(P if exact else np.array(P), n, weights)


def stationary_closed_form(weights: WeightTable) -> np.ndarray:
    ws = np.array([weights.weights[c] for c in weights.colours], dtype=float)
    w = ws.sum()
    return np.concatenate([ws / (1 + w), (ws / w) / (1 + w)])


def solve_stationary(P: np.ndarray) -> np.ndarray:
    """Stationary row vector of an irreducible stochastic matrix by linear solve."""
    P = np.asarray(P, dtype=float)
    m = P.shape[0]
    M = P.T - np.eye(m)
    M[-1, :] = 1.0
    rhs = np.zeros(m)
    rhs[-1] = 1.0
    return np.linalg.solve(M, rhs)


def stationary_residual(pi: np.ndarray, P: np.ndarray) -> float:
    return float(np.max(np.abs(pi @ np.asarray(P, dtype=float) - pi)))


def stationary_distribution(chain: EquilibriumChain, tol: float = 1e-12) -> dict[str, float]:
    """Closed-form stationary law, cross-checked against ``pi P = pi``."""
    pi = stationary_closed_form(chain.weights)
    res = stationary_residual(pi, chain.matrix())
    if res > tol:
        raise OracleError(f"closed-form pi has residual {res:.3e} > {tol:.0e}")
    return dict(zip(state_labels(chain.k), pi.tolist()))


@dataclass
class PerturbedChain:
    base: EquilibriumChain
    target: tuple[str, int]  # ("D", l) or ("L", l)
    direction: int  # +1 or -1
    err: float
    transition: np.ndarray
    unit: str = "schedule"

    def stationary(self) -> np.ndarray:
        return solve_stationary(self.transition)


def build_perturbed_chain(base: EquilibriumChain, target: tuple[str, int], direction: int,
                          err: float, unit: str = "schedule") -> PerturbedChain:
    """Shift ``err`` of mass towards (``+1``) or away from (``-1``) the target state.

    With ``unit="schedule"`` err is a deviation in the law of the tracked
    agent's move given that it is scheduled, so each entry moves by
    ``err / n``; ``unit="absolute"`` moves the per-tick entries by ``err``.

    For ``D_l`` the shifts are: D_l->L_l -e, D_l->D_l +e; D_i->L_i +e and
    D_i->D_i -e for i != l; L_i->D_l +k e, L_i->D_j -e for j != l, L_i->L_i -e.
    For ``L_l``: L_l->L_l +k e, L_l->D_j -e for all j; D_l->L_l +e,
    D_l->D_l -e; the other rows shift as for ``D_l``.
    """
    kind, l = target
    if kind not in ("D", "L") or direction not in (1, -1):
        raise ValueError(f"bad target/direction {target!r}/{direction!r}")
    k = base.k
    if not 0 <= l < k:
        raise ValueError(f"target colour {l} out of range")
    if unit not in ("schedule", "absolute"):
        raise ValueError(f"unknown err unit {unit!r}")
    e = direction * (err / base.n if unit == "schedule" else err)
    P = base.matrix().copy()
    D = lambda i: i
    L = lambda i: k + i
    for i in range(k):
        if kind == "D" and i == l:
            P[D(i), L(i)] -= e
            P[D(i), D(i)] += e
        else:
            P[D(i), L(i)] += e
            P[D(i), D(i)] -= e
    for i in range(k):
        if kind == "L" and i == l:
            P[L(i), L(i)] += k * e
            for j in range(k):
                P[L(i), D(j)] -= e
            continue
        P[L(i), D(l)] += k * e
        for j in range(k):
            if j != l:
                P[L(i), D(j)] -= e
        P[L(i), L(i)] -= e
    if P.min() < 0 or P.max() > 1:
        raise ErrTooLarge(f"err={err} pushes an entry outside [0, 1]")
    if np.max(np.abs(P.sum(axis=1) - 1)) > 1e-12:
        raise OracleError("perturbed rows do not sum to 1")
    return PerturbedChain(base, (kind, l), direction, err, P, unit)


def max_admissible_err(base: EquilibriumChain, target: tuple[str, int],
                       unit: str = "schedule") -> float:
    """Largest err for which both the plus and minus chains stay stochastic."""
    lo, hi = 0.0, 1.0 if unit == "absolute" else float(base.n)
    for _ in range(60):
        mid = (lo + hi) / 2
        try:
            build_perturbed_chain(base, target, 1, mid, unit)
            build_perturbed_chain(base, target, -1, mid, unit)
            lo = mid
        except ErrTooLarge:
            hi = mid
    return lo


def simulate_hits(P: np.ndarray, start: int, target: int, steps: int, trials: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Visit counts of ``target`` over ``steps`` steps for ``trials`` independent paths."""
    P = np.ascontiguousarray(P, dtype=float)
    return np.array([_engine.chain_hits(P, start, target, steps, rng) for _ in range(trials)])


# -- gambler's ruin ----------------------------------------------------------

@dataclass(frozen=True)
class GamblersRuinSpec:
    p: float  # probability of stepping up
    b: int
    s: int

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if abs(self.p - 0.5) < 1e-6:
            raise ValueError("p = 1/2 makes the closed form singular (need |p - 1/2| >= 1e-6)")
        if not 0 <= self.s <= self.b:
            raise ValueError("need 0 <= s <= b")


def gamblers_ruin(spec: GamblersRuinSpec) -> tuple[float, float, float]:
    """``(P(hit b), P(hit 0), E[T])`` for the walk absorbed at 0 and b."""
    p, s, b = spec.p, spec.s, spec.b
    if b == 0:
        return 0.0, 1.0, 0.0
    log_r = math.log((1 - p) / p)
    if log_r > 0:
        # reflect so that r < 1 and powers of r cannot overflow
        up, down, _ = gamblers_ruin(GamblersRuinSpec(1 - p, b, b - s))
        return down, up, _expected_time(p, s, b, down)
    hit_b = math.expm1(s * log_r) / math.expm1(b * log_r)
    hit_0 = math.exp(s * log_r) * math.expm1((b - s) * log_r) / math.expm1(b * log_r)
    return hit_b, hit_0, _expected_time(p, s, b, hit_b)


def _expected_time(p, s, b, hit_b):
    return (s - b * hit_b) / (1 - 2 * p)


def absorbing_chain_solve(p: float, s: int, b: int) -> tuple[float, float, float]:
    """Same quantities from the fundamental matrix of the absorbing chain."""
    if s in (0, b):
        return float(s == b), float(s == 0), 0.0
    m = b - 1  # transient states 1..b-1
    Q = np.zeros((m, m))
    R = np.zeros((m, 2))  # columns: absorbed at 0, at b
    for idx, z in enumerate(range(1, b)):
        if z + 1 == b:
            R[idx, 1] = p
        else:
            Q[idx, idx + 1] = p
        if z - 1 == 0:
            R[idx, 0] = 1 - p
        else:
            Q[idx, idx - 1] = 1 - p
    I = np.eye(m)
    absorb = np.linalg.solve(I - Q, R)
    times = np.linalg.solve(I - Q, np.ones(m))
    return float(absorb[s - 1, 1]), float(absorb[s - 1, 0]), float(times[s - 1])


def simulate_ruin(p: float, s: int, b: int, trials: int, rng: np.random.Generator):
    """Monte Carlo: arrays of hit-b indicators and absorption times."""
    z = np.full(trials, s, dtype=np.int64)
    t = np.zeros(trials, dtype=np.int64)
    live = np.flatnonzero((z > 0) & (z < b))
    while live.size:
        up = rng.random(live.size) < p
        z[live] += np.where(up, 1, -1)
        t[live] += 1
        live = live[(z[live] > 0) & (z[live] < b)]
    return z == b, t


# -- brute-force one-step law and the exact small chain ---------------------

def pair_enumeration_kernel(config: Configuration, weights: WeightTable) -> dict[tuple, Fraction]:
    """Next-state law by enumerating every ordered agent pair and the coin."""
    agents = agents_from_config(config)
    n = len(agents)
    colours = config.colours
    if n < 2:
        raise ConfigurationError("need at least two agents")
    base = Fraction(1, n * (n - 1))
    out: dict[tuple, Fraction] = {}

    def add(new_agents, mass):
        dark = {c: 0 for c in colours}
        light = {c: 0 for c in colours}
        for c, sh in new_agents:
            (dark if sh == DARK else light)[c] += 1
        key = tuple(dark[c] for c in colours) + tuple(light[c] for c in colours)
        out[key] = out.get(key, Fraction(0)) + mass

    for u in range(n):
        for v in range(n):
            if u == v:
                continue
            (cu, su), (cv, sv) = agents[u], agents[v]
            if su == LIGHT and sv == DARK:
                nxt = list(agents)
                nxt[u] = (cv, DARK)
                add(nxt, base)
            elif su == DARK and sv == DARK and cu == cv:
                coin = 1 / Fraction(weights.weights[cu])
                nxt = list(agents)
                nxt[u] = (cu, LIGHT)
                add(nxt, base * coin)
                add(agents, base * (1 - coin))
            else:
                add(agents, base)
    return out


def compositions(total: int, parts: int):
    """All tuples of ``parts`` non-negative integers summing to ``total``."""
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(total + parts - 2 - prev)
        yield tuple(out)


@dataclass
class SmallChain:
    states: list[tuple]
    index: dict[tuple, int]
    P: np.ndarray
    weights: WeightTable
    n: int

    @property
    def k(self) -> int:
        return self.weights.num_colours

    def in_omega(self) -> np.ndarray:
        k = self.k
        return np.array([all(s[i] >= 1 for i in range(k)) for s in self.states])

    def distribution_after(self, start: Configuration, t: int) -> np.ndarray:
        x = np.zeros(len(self.states))
        x[self.index[start.key()]] = 1.0
        return x @ np.linalg.matrix_power(self.P, t)

    def stationary(self) -> np.ndarray:
        """Stationary law of the chain restricted to states with every A_i >= 1."""
        mask = self.in_omega()
        sub = self.P[np.ix_(mask, mask)]
        if np.max(np.abs(sub.sum(axis=1) - 1)) > 1e-12:
            raise OracleError("states with all A_i >= 1 do not form a closed class")
        pi = np.zeros(len(self.states))
        pi[mask] = solve_stationary(sub)
        return pi

    def expected_colour_counts(self, start: Configuration, t: int) -> np.ndarray:
        """Exact E[C_i(t)] for each colour from ``start``."""
        dist = self.distribution_after(start, t)
        S = np.array(self.states, dtype=float)
        k = self.k
        return dist @ (S[:, :k] + S[:, k:])


MAX_SMALL_STATES = 5000


def exact_small_chain_oracle(weights: WeightTable, n: int) -> SmallChain:
    k = weights.num_colours
    colours = weights.colours
    states = list(compositions(n, 2 * k))
    if len(states) > MAX_SMALL_STATES:
        raise ConfigurationError(f"{len(states)} states exceed the limit of {MAX_SMALL_STATES}")
    index = {s: i for i, s in enumerate(states)}
    P = np.zeros((len(states), len(states)))
    for s in states:
        cfg = Configuration({c: s[i] for i, c in enumerate(colours)},
                            {c: s[k + i] for i, c in enumerate(colours)})
        for key, mass in enumerate_kernel(cfg, weights, exact=False).next_states(cfg).items():
            P[index[s], index[key]] += mass
    return SmallChain(states, index, P, weights, n)


def chain_to_json(chain: EquilibriumChain) -> dict:
    return {
        "states": state_labels(chain.k),
        "n": chain.n,
        "weights": chain.weights.to_json(),
        "transition": chain.matrix().tolist(),
    }
