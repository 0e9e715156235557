"""Desk-scale acceptance experiments.

Each probe returns a :class:`ProbeResult`; ``tests/test_acceptance.py`` runs
them all and prints one line per probe.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from . import _engine
from .adversary import AddColour, EventSchedule, run_with_schedule
from .derandomized import ShadedConfiguration, ShadedEngine, projected_kernel
from .metrics import (SustainabilityMonitor, equilibrium_config, equilibrium_targets,
                      fairness_report, potentials_array)
from .protocol import (DARK, LIGHT, Configuration, CountEngine, TrackedAgent, WeightTable,
                       enumerate_kernel, pack)
from .reference import (ErrTooLarge, GamblersRuinSpec, absorbing_chain_solve,
                        build_equilibrium_chain, build_perturbed_chain, compositions,
                        gamblers_ruin, pair_enumeration_kernel, simulate_ruin,
                        solve_stationary, stationary_closed_form, stationary_residual)
from .rng import make_rng, spawn_seeds

BASE_SEED = 20240601


@dataclass
class ProbeResult:
    name: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.summary} ({self.seconds:.1f}s)"


def _timed(fn):
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def burn_in(weights, n: int) -> int:
    w = sum(weights)
    return math.ceil(4 * w * w * n * math.log(n))


def worst_start(n: int, k: int) -> Configuration:
    return Configuration.from_lists([n - k + 1] + [1] * (k - 1))


# -- 1, 2: kernel and engine equivalence ---------------------------------------

KERNEL_WEIGHTS = [(1,), (1, 1), (1, 2), (2, 3), (1, 2, 3)]


@_timed
def kernel_exactness(max_n: int = 5, weight_sets=KERNEL_WEIGHTS) -> ProbeResult:
    checked, bad = 0, []
    for ws in weight_sets:
        wt = WeightTable.of(ws)
        k = len(ws)
        for n in range(2, max_n + 1):
            for comp in compositions(n, 2 * k):
                cfg = Configuration.from_lists(comp[:k], comp[k:])
                fast = {key: p for key, p in enumerate_kernel(cfg, wt).next_states(cfg).items() if p}
                brute = {key: p for key, p in pair_enumeration_kernel(cfg, wt).items() if p}
                if fast != brute or sum(fast.values(), Fraction(0)) != 1:
                    bad.append((ws, comp))
                checked += 1
    res = ProbeResult("1 kernel exactness", not bad, f"{checked} configurations, {len(bad)} mismatches")
    return res


def _final_c1_counts(n, ws, steps, seeds):
    wt = WeightTable.of(ws)
    start = worst_start(n, len(ws))
    out = np.empty(len(seeds), dtype=np.int64)
    for r, s in enumerate(seeds):
        eng = CountEngine(start, wt, make_rng(s))
        eng.advance(steps)
        out[r] = eng.counts[0] + eng.counts[len(ws)]
    return out


def _final_c1_agentwise(n, ws, steps, seeds):
    wt = WeightTable.of(ws)
    start = worst_start(n, len(ws))
    coin = wt.coins()
    out = np.empty(len(seeds), dtype=np.int64)
    for r, s in enumerate(seeds):
        colour = np.repeat(np.arange(len(ws)), [start.dark_counts[c] for c in start.colours]).astype(np.int64)
        shade = np.ones(n, dtype=np.int64)
        _engine.agent_tick(colour, shade, coin, steps, make_rng(s))
        out[r] = np.count_nonzero(colour == 0)
    return out


@_timed
def engine_equivalence(n: int = 50, ws=(1, 2), steps: int = 10_000, runs: int = 500,
                       repeats: int = 3, alpha: float = 0.01) -> ProbeResult:
    seeds = spawn_seeds(BASE_SEED + 2, 2 * runs * repeats)
    pvals = []
    for r in range(repeats):
        block = seeds[2 * runs * r: 2 * runs * (r + 1)]
        a = _final_c1_counts(n, ws, steps, block[:runs])
        b = _final_c1_agentwise(n, ws, steps, block[runs:])
        pvals.append(float(stats.ks_2samp(a, b).pvalue))
    ok = sum(p > alpha for p in pvals) >= (repeats // 2 + 1)
    return ProbeResult("2 engine equivalence", ok,
                       "KS p-values " + ", ".join(f"{p:.3f}" for p in pvals) + f" (need > {alpha} on majority)",
                       {"pvalues": pvals})


# -- 3-6: long runs from the worst-case start ----------------------------------

@dataclass
class LongRun:
    seed: int
    steps: np.ndarray
    traj: np.ndarray
    min_dark: np.ndarray
    burn_in: int
    ticks_per_sec: float


def long_runs(n: int = 10_000, ws=(1, 2, 3), seeds: int = 10, sample_steps: int = 10_000_000,
              engine: str = "counts") -> list[LongRun]:
    """Runs sampled every ``n`` ticks from step 0 through burn-in plus ``sample_steps``."""
    wt = WeightTable.of(ws, integer_only=engine == "derandomized")
    B = burn_in(ws, n)
    rows = -(-(B + sample_steps) // n)
    out = []
    start = worst_start(n, len(ws))
    for s in spawn_seeds(BASE_SEED + 3, seeds):
        rng = make_rng(s)
        t0 = time.perf_counter()
        if engine == "counts":
            eng = CountEngine(start, wt, rng)
            traj = eng.record(n, rows)
            min_dark = eng.min_dark.copy()
            init = pack(start, wt.colours)
        else:
            sh = ShadedConfiguration.all_dark(start.dark_counts, wt)
            eng = ShadedEngine(sh, wt, rng)
            traj = eng.record(n, rows)
            min_dark = traj[:, : len(ws)].min(axis=0)
            init = pack(start, wt.colours)
        rate = rows * n / (time.perf_counter() - t0)
        traj = np.vstack([init[None, :], traj])
        steps = np.arange(rows + 1, dtype=np.int64) * n
        out.append(LongRun(s, steps, traj, min_dark, B, rate))
    return out


def _post(run: LongRun, sample_steps: int):
    keep = (run.steps > run.burn_in) & (run.steps <= run.burn_in + sample_steps)
    return run.traj[keep]


def _div_err(traj: np.ndarray, ws: np.ndarray) -> np.ndarray:
    k = ws.size
    n = traj.sum(axis=1, keepdims=True)
    return np.abs((traj[:, :k] + traj[:, k:]) / n - ws / ws.sum()).max(axis=1)


def diversity(runs: list[LongRun], ws=(1, 2, 3), sample_steps: int = 10_000_000,
              band_factor: float = 1.0, name: str = "3 diversity", need: float = 0.99) -> ProbeResult:
    ws = np.asarray(ws, dtype=float)
    fracs = []
    n = int(runs[0].traj[0].sum())
    band = band_factor * 10 / math.sqrt(n)
    for r in runs:
        err = _div_err(_post(r, sample_steps), ws)
        fracs.append(float(np.mean(err <= band)))
    ok = min(fracs) >= need
    return ProbeResult(name, ok, f"band {band:.3f}: worst seed {min(fracs):.4f} of samples in band "
                       f"(need >= {need}), {len(runs)} seeds", {"fractions": fracs})


def shade_split(runs: list[LongRun], ws=(1, 2, 3), sample_steps: int = 10_000_000,
                need: float = 0.95) -> ProbeResult:
    n = int(runs[0].traj[0].sum())
    wt = WeightTable.of(ws)
    A, a = equilibrium_targets(wt, n)
    bound = 10 * n ** 0.75 * math.log(n) ** 0.25
    k = len(ws)
    fracs, worst = [], 0.0
    for r in runs:
        post = _post(r, sample_steps)
        dev = np.maximum(np.abs(post[:, :k] - A).max(axis=1), np.abs(post[:, k:] - a).max(axis=1))
        worst = max(worst, float(dev.max()))
        fracs.append(float(np.mean(dev <= bound)))
    ok = min(fracs) >= need
    return ProbeResult("4 shade split", ok, f"bound {bound:.0f}, largest deviation {worst:.0f}; worst seed "
                       f"{min(fracs):.4f} in bound (need >= {need})", {"fractions": fracs})


PHI_Q = 3


def potential_decay(runs: list[LongRun], ws=(1, 2, 3), q: int = PHI_Q) -> ProbeResult:
    """phi every ceil(w n) ticks; the sampling grid of the runs must divide that cadence."""
    wsa = np.asarray(ws, dtype=float)
    n = int(runs[0].traj[0].sum())
    w = wsa.sum()
    cadence = math.ceil(w * n)
    stride = cadence // n
    if stride * n != cadence:
        raise ValueError("phi cadence must be a multiple of the sampling interval")
    unit = w * n * math.log(n)
    stays, segments_ok, ratios = 0, 0, []
    for r in runs:
        phi = potentials_array(r.traj[::stride], wsa)["phi"]
        below = np.flatnonzero(phi < 20 * unit)
        if below.size and (phi[below[0]:] < 20 * unit).all():
            stays += 1
        # decay segment: the initial stretch above 40 w n ln n
        cool = np.flatnonzero(phi <= 40 * unit)
        end = cool[0] if cool.size else phi.size
        rs = [phi[j + q] / phi[j] for j in range(end) if j + q < phi.size]
        ratios.extend(rs)
        if all(x <= 0.75 for x in rs):
            segments_ok += 1
    m = len(runs)
    ok = stays >= math.ceil(0.9 * m) and segments_ok >= math.ceil(0.9 * m)
    worst = max(ratios) if ratios else float("nan")
    return ProbeResult("5 potential decay", ok,
                       f"{stays}/{m} seeds settle below 20wn ln n; {segments_ok}/{m} decay segments "
                       f"contract by 0.75 per {q}wn ticks (worst ratio {worst:.3f})",
                       {"q": q, "ratios": ratios})


def sustainability(runs: list[LongRun], extra: list[dict] = ()) -> ProbeResult:
    mins = [int(r.min_dark.min()) for r in runs]
    failed = [e for e in extra if not e["passed"]]
    ok = min(mins) >= 1 and not failed
    return ProbeResult("6 sustainability", ok,
                       f"min dark count over {len(runs)} long runs = {min(mins)}; "
                       f"{len(extra) - len(failed)}/{len(extra)} adversarial runs clean")


# -- 7: fairness ----------------------------------------------------------------

@_timed
def fairness(n: int = 500, ws=(1, 3), steps: int = 100_000_000, seeds: int = 5) -> ProbeResult:
    wt = WeightTable.of(ws)
    w = sum(ws)
    B = burn_in(ws, n)
    start = worst_start(n, len(ws))
    lines, ok = [], True
    occ_all, ratio_all = [], []
    for s in spawn_seeds(BASE_SEED + 7, seeds):
        rng = make_rng(s)
        eng = CountEngine(start, wt, rng)
        eng.advance(B)
        cfg = eng.config()
        # a uniformly chosen agent's class
        cls = [(c, DARK) for c in cfg.colours] + [(c, LIGHT) for c in cfg.colours]
        edges = np.cumsum(pack(cfg, cfg.colours))
        c, shade = cls[int(np.searchsorted(edges, rng.integers(0, n), side="right"))]
        tr = TrackedAgent(c, shade, cfg.step)
        eng = CountEngine(cfg, wt, rng, [tr])
        eng.advance(steps)
        rep = fairness_report(tr, wt, (B, B + steps))
        occ = rep.colour_fraction[1]
        ratios = [rep.dark_light_ratio(c) for c in wt.colours]
        good = 0.70 <= occ <= 0.80 and all(0.8 * w <= x <= 1.2 * w for x in ratios)
        ok &= good
        occ_all.append(occ)
        ratio_all.append(ratios)
    return ProbeResult("7 fairness", ok,
                       f"colour-2 occupancy {min(occ_all):.3f}..{max(occ_all):.3f} (need [0.70, 0.80]); "
                       f"dark:light {min(map(min, ratio_all)):.2f}..{max(map(max, ratio_all)):.2f} "
                       f"(need [{0.8 * w:.1f}, {1.2 * w:.1f}])",
                       {"occupancy": occ_all, "ratios": ratio_all})


# -- 8, 9: analytic oracles -------------------------------------------------------

@_timed
def stationary_oracle(instances: int = 100, errs=(1e-5, 1e-4, 1e-3)) -> ProbeResult:
    rng = make_rng(BASE_SEED + 8)
    worst_res = 0.0
    for _ in range(instances):
        k = int(rng.integers(1, 6))
        ws = np.round(1 + 9 * rng.random(k), 3)
        n = int(rng.integers(2, 100_001))
        wt = WeightTable.of(ws.tolist())
        P = build_equilibrium_chain(wt, n).matrix()
        worst_res = max(worst_res, stationary_residual(stationary_closed_form(wt), P))
    # perturbed chains: the k=2, n=100 instance plus a few others
    cases = [((1, 1), 100), ((1, 2), 100), ((1, 2, 3), 50), ((1, 1), 1000), ((2, 5), 300)]
    worst_ratio, literal = 0.0, []
    for ws, n in cases:
        base = build_equilibrium_chain(WeightTable.of(ws), n)
        pi = stationary_closed_form(base.weights)
        for l in range(len(ws)):
            for err in errs:
                for d in (1, -1):
                    pc = build_perturbed_chain(base, ("D", l), d, err)
                    res = stationary_residual(pc.stationary(), pc.transition)
                    worst_res = max(worst_res, res)
                    worst_ratio = max(worst_ratio, abs(pc.stationary()[l] - pi[l]) / err)
                    try:
                        lit = build_perturbed_chain(base, ("D", l), d, err, unit="absolute")
                        literal.append(abs(solve_stationary(lit.transition)[l] - pi[l]) / err)
                    except ErrTooLarge:
                        literal.append(math.inf)
    ok = worst_res <= 1e-12 and worst_ratio <= 10
    lit = max(literal)
    return ProbeResult("8 stationary oracle", ok,
                       f"max residual {worst_res:.2e}; max |pi+ - pi|/err = {worst_ratio:.2f} "
                       f"(need <= 10; absolute-err reading gives {lit:.1f})",
                       {"literal_ratio": lit})


@_timed
def gamblers_ruin_probe(trials: int = 1_000_000) -> ProbeResult:
    worst = 0.0
    for p in np.round(np.arange(0.55, 0.951, 0.05), 2):
        for b in (5, 10, 50):
            for s in range(b + 1):
                closed = gamblers_ruin(GamblersRuinSpec(float(p), b, s))
                solved = absorbing_chain_solve(float(p), s, b)
                worst = max(worst, max(abs(x - y) for x, y in zip(closed, solved)))
    p, s, b = 0.6, 5, 10
    hit_b, _, ET = gamblers_ruin(GamblersRuinSpec(p, b, s))
    hits, times = simulate_ruin(p, s, b, trials, make_rng(BASE_SEED + 9))
    z_hit = abs(hits.mean() - hit_b) / math.sqrt(hit_b * (1 - hit_b) / trials)
    z_T = abs(times.mean() - ET) / (times.std(ddof=1) / math.sqrt(trials))
    ok = worst <= 1e-10 and z_hit <= 4 and z_T <= 4
    return ProbeResult("9 gambler's ruin", ok,
                       f"max closed-vs-linear gap {worst:.1e}; Monte Carlo z = {z_hit:.2f} (hit b), "
                       f"{z_T:.2f} (E[T])")


# -- 10: adversarial recovery -----------------------------------------------------

@_timed
def adversarial_recovery(n: int = 10_000, ws=(1, 2, 3), new_weight: float = 2.0,
                         seeds: int = 10, warm: int | None = None) -> ProbeResult:
    wt = WeightTable.of(ws)
    w_new = sum(ws) + new_weight
    bound = 2 * math.ceil(4 * w_new ** 2 * n * math.log(n))
    warm = warm if warm is not None else 10 * n
    times, verdicts = [], []
    for s in spawn_seeds(BASE_SEED + 10, seeds):
        mon = SustainabilityMonitor(every=n, fail_fast=False)
        sched = EventSchedule([AddColour(warm, new_weight, 1)])
        traj = run_with_schedule(equilibrium_config(wt, n), wt, warm + bound, sched, make_rng(s),
                                 observers=[mon], snapshot_every=n)
        times.append(traj.recoveries[0].to_band)
        verdicts.append(mon.verdict())
    good = sum(t is not None and t <= bound for t in times)
    ok = good >= math.ceil(0.9 * seeds)
    shown = sorted(t for t in times if t is not None)
    med = shown[len(shown) // 2] if shown else None
    return ProbeResult("10 adversarial recovery", ok,
                       f"{good}/{seeds} seeds back in band within {bound} ticks (median {med})",
                       {"times": times, "sustainability": verdicts})


# -- 11, 12 ------------------------------------------------------------------------

@_timed
def derandomized_kernel(max_n: int = 5, max_k: int = 3) -> ProbeResult:
    checked, bad = 0, 0
    for k in range(1, max_k + 1):
        wt = WeightTable.of([1] * k)
        for n in range(2, max_n + 1):
            for comp in compositions(n, 2 * k):
                cfg = Configuration.from_lists(comp[:k], comp[k:])
                counts = {}
                for c in range(k):
                    counts[(c, 1)] = comp[c]
                    counts[(c, 0)] = comp[k + c]
                sh = ShadedConfiguration(counts)
                a = projected_kernel(sh, wt)
                b = {key: p for key, p in enumerate_kernel(cfg, wt).next_states(cfg).items() if p}
                bad += a != b
                checked += 1
    return ProbeResult("11a derandomized kernel (w=1)", bad == 0, f"{checked} configurations, {bad} mismatches")


@_timed
def performance(n: int = 10_000, ws=(1, 2, 3), ticks: int = 50_000_000, floor: float = 1e7) -> ProbeResult:
    wt = WeightTable.of(ws)
    eng = CountEngine(equilibrium_config(wt, n), wt, make_rng(BASE_SEED + 12))
    eng.advance(1000)  # compile
    best = 0.0
    for _ in range(3):
        t0 = time.perf_counter()
        eng.advance(ticks)
        best = max(best, ticks / (time.perf_counter() - t0))
    return ProbeResult("12 performance", best >= floor, f"{best:.3g} ticks/s (need >= {floor:.0e})",
                       {"rate": best})


@_timed
def derandomized_diversity(n: int = 10_000, ws=(1, 2), seeds: int = 5,
                           sample_steps: int = 10_000_000) -> ProbeResult:
    """Gated at twice the band; the fraction inside the plain band is reported alongside."""
    runs = long_runs(n, ws, seeds, sample_steps, engine="derandomized")
    gated = diversity(runs, ws, sample_steps, band_factor=2.0, name="11b derandomized diversity")
    plain = diversity(runs, ws, sample_steps, band_factor=1.0)
    gated.summary += f"; at the plain band worst seed {min(plain.details['fractions']):.4f}"
    gated.details["plain_fractions"] = plain.details["fractions"]
    gated.details["min_dark"] = int(min(r.min_dark.min() for r in runs))
    return gated
