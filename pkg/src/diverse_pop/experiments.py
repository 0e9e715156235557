"""Experiment configs, single runs, and seed sweeps."""

from __future__ import annotations

import concurrent.futures as cf
import csv
import json
import math
import multiprocessing as mp
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import _engine
from .adversary import EventSchedule, run_with_schedule
from .derandomized import ShadedConfiguration, ShadedEngine, project_to_binary
from .metrics import (FairnessReport, RegionParams, SustainabilityMonitor,
                      SustainabilityViolation, fairness_report)
from .protocol import (DARK, LIGHT, Configuration, ConfigurationError, ObserverError,
                       ProtocolError, TrackedAgent, WeightTable, check_compatible, drive)
from .rng import make_rng
from .telemetry import TelemetryWriter

ENGINES = ("counts", "agentwise", "derandomized")


class ConfigError(ConfigurationError):
    pass


@dataclass
class ExperimentConfig:
    n: int
    weights: list[float]
    steps: int
    initial: Any = "adversarial-worst"
    engine: str = "counts"
    seed: int = 0
    seeds: list[int] | None = None
    snapshot_every: int | None = None
    epsilon: float = 0.1
    delta: float = 0.05
    potential_bound_const: float = 2.0
    band: float | None = None  # default 10 / sqrt(n)
    confirm_window: int | None = None  # ticks; default 10 n
    burn_in: int = 0
    tracked: int = 0
    fairness_tolerance: float = 0.05
    events: str | None = None
    strict: bool = True
    allow_light_start: bool = False
    out: str | None = None

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 2:
            raise ConfigError(f"n must be an integer >= 2, got {self.n!r}")
        if not self.weights:
            raise ConfigError("weights must be a non-empty list")
        for w in self.weights:
            if not isinstance(w, (int, float)) or not math.isfinite(w) or w < 1:
                raise ConfigError(f"weight {w!r} violates w_i >= 1")
        if len(self.weights) > self.n:
            raise ConfigError("more colours than agents")
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.engine == "derandomized" and any(w != int(w) for w in self.weights):
            raise ConfigError("the derandomized engine needs integer weights")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.snapshot_every is not None and self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be >= 1")
        if self.tracked and self.engine != "counts":
            raise ConfigError("tracked agents are supported by the counts engine only")
        if self.events and self.engine != "counts":
            raise ConfigError("event schedules are supported by the counts engine only")
        if self.tracked < 0:
            raise ConfigError("tracked must be >= 0")
        RegionParams(self.epsilon, self.delta, self.potential_bound_const)

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def cadence(self) -> int:
        return self.snapshot_every or max(1, self.n // 10)

    @property
    def band_value(self) -> float:
        return self.band if self.band is not None else 10 / math.sqrt(self.n)

    @property
    def window(self) -> int:
        return self.confirm_window if self.confirm_window is not None else 10 * self.n

    @property
    def params(self) -> RegionParams:
        return RegionParams(self.epsilon, self.delta, self.potential_bound_const)

    def weight_table(self) -> WeightTable:
        return WeightTable.of(self.weights, integer_only=self.engine == "derandomized")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"n", "weights", "steps"} - set(data)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def to_json(self) -> dict:
        return asdict(self)


def initial_configuration(cfg: ExperimentConfig) -> Configuration:
    n, k = cfg.n, cfg.k
    init = cfg.initial
    if init == "adversarial-worst":
        return Configuration.from_lists([n - k + 1] + [1] * (k - 1))
    if init == "uniform":
        q, r = divmod(n, k)
        return Configuration.from_lists([q + (i < r) for i in range(k)])
    if isinstance(init, dict):
        dark = list(init.get("dark", []))
        light = list(init.get("light", [0] * k))
        if len(dark) != k or len(light) != k:
            raise ConfigError("explicit initial counts need one entry per colour")
        if any(light) and not cfg.allow_light_start:
            raise ConfigError("light agents at start need allow_light_start (off-model)")
        if sum(dark) + sum(light) != n:
            raise ConfigError(f"initial counts sum to {sum(dark) + sum(light)}, expected n={n}")
        return Configuration.from_lists(dark, light)
    raise ConfigError(f"unknown initial configuration {init!r}")


# -- engines behind one interface ----------------------------------------------

class _AgentEngine:
    """Per-agent engine; sustainability is checked at snapshots only."""

    def __init__(self, config: Configuration, weights: WeightTable, rng):
        self.colours = check_compatible(config, weights)
        self.k = len(self.colours)
        cls_colour, cls_shade = [], []
        for i, c in enumerate(self.colours):
            cls_colour += [i] * (config.dark_counts[c] + config.light_counts[c])
            cls_shade += [DARK] * config.dark_counts[c] + [LIGHT] * config.light_counts[c]
        self.colour = np.array(cls_colour, dtype=np.int64)
        self.shade = np.array(cls_shade, dtype=np.int64)
        self.coin = weights.coins()
        self.rng = rng
        self.step = config.step

    @property
    def min_dark(self) -> np.ndarray:
        return np.bincount(self.colour[self.shade == DARK], minlength=self.k)

    def reset_minima(self):
        pass

    def advance(self, ticks: int):
        _engine.agent_tick(self.colour, self.shade, self.coin, ticks, self.rng)
        self.step += ticks

    def config(self) -> Configuration:
        dark = self.min_dark
        light = np.bincount(self.colour[self.shade == LIGHT], minlength=self.k)
        return Configuration(dict(zip(self.colours, dark.tolist())),
                             dict(zip(self.colours, light.tolist())), self.step)


class _ProjectedEngine:
    """Derandomized engine seen through the dark/light projection."""

    def __init__(self, config: Configuration, weights: WeightTable, rng):
        self.colours = check_compatible(config, weights)
        tops = {c: int(weights.weights[c]) for c in self.colours}
        counts = {}
        for c in self.colours:
            counts[(c, tops[c])] = config.dark_counts[c]
            counts[(c, 0)] = config.light_counts[c]
        self.inner = ShadedEngine(ShadedConfiguration(counts, config.step), weights, rng)

    @property
    def step(self) -> int:
        return self.inner.step

    @property
    def min_dark(self) -> np.ndarray:
        cfg = self.config()
        return cfg.dark_vector(self.colours)

    def reset_minima(self):
        pass

    def advance(self, ticks: int):
        self.inner.advance(ticks)

    def config(self) -> Configuration:
        return project_to_binary(self.inner.config())


# -- reports -------------------------------------------------------------------

@dataclass
class RunReport:
    seed: int
    engine: str
    final: dict
    convergence_step: int | None
    convergence_confirmed: bool
    max_err_after_burn_in: float | None
    phi_halving_steps: list[int]
    psi_halving_steps: list[int]
    fairness: list[dict]
    sustainability: dict
    recoveries: list[dict]
    wall_clock: float
    steps_per_sec: float
    steps: int
    error: str | None = None

    @property
    def passed(self) -> bool:
        return (self.error is None and self.sustainability.get("passed", False)
                and all(f["passed"] for f in self.fairness))

    def to_json(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def convergence_step(steps: np.ndarray, max_err: np.ndarray, band: float,
                     window: int) -> tuple[int | None, bool]:
    """First snapshot in band that stays in band for ``window`` ticks.

    Returns ``(step, confirmed)``; ``confirmed`` is False when the run ended
    before the window closed (but every later snapshot was in band).
    """
    out = max_err > band
    # index of the next out-of-band snapshot at or after each position
    nxt_bad = np.full(len(steps) + 1, len(steps))
    for i in range(len(steps) - 1, -1, -1):
        nxt_bad[i] = i if out[i] else nxt_bad[i + 1]
    for i in np.flatnonzero(~out):
        j = nxt_bad[i]
        end = steps[i] + window
        if j == len(steps):
            return int(steps[i]), bool(steps[-1] >= end)
        if steps[j] > end:
            return int(steps[i]), True
    return None, False


def halving_steps(steps: np.ndarray, values: np.ndarray, floor: float) -> list[int]:
    """Gaps between successive halvings of a decaying series, stopping at ``floor``."""
    gaps = []
    if len(values) == 0:
        return gaps
    ref_step, ref = steps[0], values[0]
    for s, v in zip(steps[1:], values[1:]):
        if ref <= floor:
            break
        if v <= ref / 2:
            gaps.append(int(s - ref_step))
            ref_step, ref = s, v
    return gaps


def run_experiment(cfg: ExperimentConfig, seed: int | None = None,
                   out_dir: str | Path | None = None) -> RunReport:
    """One run; writes ``telemetry.jsonl`` and ``report.json`` into ``out_dir`` if given."""
    seed = cfg.seed if seed is None else seed
    rng = make_rng(seed)
    weights = cfg.weight_table()
    config = initial_configuration(cfg)
    stream = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stream = open(out_dir / "telemetry.jsonl", "w")
    telemetry = TelemetryWriter(cfg.cadence, weights, cfg.params, stream)
    monitor = SustainabilityMonitor(strict=True, every=cfg.cadence, fail_fast=False)
    tracked = _pick_tracked(config, cfg.tracked, rng)
    error = None
    recoveries = []
    final_weights = weights
    t0 = time.perf_counter()
    try:
        if cfg.engine == "counts":
            schedule = EventSchedule.load(cfg.events, cfg.strict) if cfg.events else EventSchedule()
            traj = run_with_schedule(config, weights, cfg.steps, schedule, rng,
                                     [telemetry, monitor], cfg.cadence,
                                     cfg.band, cfg.params, tracked)
            final = traj.final
            final_weights = traj.weights
            recoveries = [{"at": r.step, "kind": type(r.event).__name__,
                           "to_region_E": r.to_region_E, "to_band": r.to_band}
                          for r in traj.recoveries]
        else:
            cls = _AgentEngine if cfg.engine == "agentwise" else _ProjectedEngine
            engine = cls(config, weights, rng)
            drive(engine, cfg.steps, [telemetry, monitor])
            final = engine.config()
    except (ProtocolError, SustainabilityViolation) as exc:
        cause = exc.cause if isinstance(exc, ObserverError) else exc
        error = f"{type(cause).__name__}: {exc}"
        final = config
    finally:
        if stream is not None:
            stream.close()
    wall = time.perf_counter() - t0

    snaps = telemetry.snapshots
    steps = np.array([s.step for s in snaps], dtype=np.int64)
    err = np.array([max(s.diversity_errors.values()) for s in snaps]) if snaps else np.zeros(0)
    conv, confirmed = convergence_step(steps, err, cfg.band_value, cfg.window)
    post = err[steps >= cfg.burn_in]
    w = sum(cfg.weights)
    floor = w * cfg.n * math.log(cfg.n)
    fairness = []
    if tracked and cfg.steps > cfg.burn_in and error is None:
        for tr in tracked:
            rep: FairnessReport = fairness_report(tr, final_weights, (cfg.burn_in, cfg.steps),
                                                  cfg.fairness_tolerance)
            fairness.append(rep.to_json())
    report = RunReport(
        seed=seed,
        engine=cfg.engine,
        final=final.to_json(),
        convergence_step=conv,
        convergence_confirmed=confirmed,
        max_err_after_burn_in=float(post.max()) if post.size else None,
        phi_halving_steps=halving_steps(steps, np.array([s.phi for s in snaps]), floor),
        psi_halving_steps=halving_steps(steps, np.array([s.psi for s in snaps]), floor),
        fairness=fairness,
        sustainability=monitor.verdict(),
        recoveries=recoveries,
        wall_clock=wall,
        steps_per_sec=cfg.steps / wall if wall > 0 else math.inf,
        steps=cfg.steps,
        error=error,
    )
    if out_dir is not None:
        (out_dir / "report.json").write_text(json.dumps(report.to_json(), indent=2) + "\n")
    return report


def _pick_tracked(config: Configuration, m: int, rng) -> list[TrackedAgent]:
    if m == 0:
        return []
    if m > config.population:
        raise ConfigError("more tracked agents than agents")
    colours = config.colours
    classes = [(c, DARK) for c in colours] + [(c, LIGHT) for c in colours]
    counts = np.array([config.dark_counts[c] for c in colours]
                      + [config.light_counts[c] for c in colours])
    # distinct agents: draw agent indices without replacement, map to classes
    idx = rng.choice(config.population, size=m, replace=False)
    edges = np.cumsum(counts)
    out = []
    for a in np.sort(idx):
        c, s = classes[int(np.searchsorted(edges, a, side="right"))]
        out.append(TrackedAgent(c, s, config.step))
    return out


# -- sweeps ----------------------------------------------------------------------

SWEEP_HEADER = ["seed", "status", "convergence_step", "convergence_confirmed",
                "max_err_after_burn_in", "max_fairness_error", "sustainability_passed",
                "steps_per_sec", "error"]


def _sweep_row(report: RunReport) -> dict:
    fair = [f["max_relative_error"] for f in report.fairness]
    return {
        "seed": report.seed,
        "status": "ok" if report.error is None else "failed",
        "convergence_step": report.convergence_step,
        "convergence_confirmed": report.convergence_confirmed,
        "max_err_after_burn_in": report.max_err_after_burn_in,
        "max_fairness_error": max(fair) if fair else None,
        "sustainability_passed": report.sustainability["passed"],
        "steps_per_sec": round(report.steps_per_sec, 1),
        "error": report.error or "",
    }


def _sweep_worker(cfg_json: dict, seed: int, out_dir: str | None) -> dict:
    cfg = ExperimentConfig.from_dict(cfg_json)
    sub = None if out_dir is None else Path(out_dir) / f"seed_{seed}"
    try:
        return _sweep_row(run_experiment(cfg, seed, sub))
    except Exception as exc:  # reported per seed, sweep carries on
        return {"seed": seed, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def default_workers() -> int:
    cap = os.environ.get("DIVERSE_POP_THREADS")
    n = os.cpu_count() or 1
    return max(1, min(n, int(cap))) if cap else n


@dataclass
class SweepResult:
    rows: list[dict]
    aggregate: dict
    complete: bool = field(default=True)


def _quantiles(values) -> dict | None:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    q = np.quantile(np.array(vals, dtype=float), [0.1, 0.5, 0.9])
    return {"q10": float(q[0]), "median": float(q[1]), "q90": float(q[2]), "count": len(vals)}


def run_sweep(cfg: ExperimentConfig, seeds: list[int], workers: int | None = None,
              out_dir: str | Path | None = None) -> SweepResult:
    if len(set(seeds)) != len(seeds):
        raise ConfigError("sweep seeds must be distinct")
    workers = workers or default_workers()
    cfg_json = cfg.to_json()
    sub = None if out_dir is None else str(out_dir)
    if workers == 1:
        rows = [_sweep_worker(cfg_json, s, sub) for s in seeds]
    else:
        ctx = mp.get_context("spawn")
        with cf.ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            futures = [pool.submit(_sweep_worker, cfg_json, s, sub) for s in seeds]
            rows = [f.result() for f in futures]
    complete = all(r["status"] == "ok" for r in rows)
    aggregate = {
        "seeds": len(seeds),
        "complete": complete,
        "failed_seeds": [r["seed"] for r in rows if r["status"] != "ok"],
        "convergence_step": _quantiles(r.get("convergence_step") for r in rows),
        "max_err_after_burn_in": _quantiles(r.get("max_err_after_burn_in") for r in rows),
        "max_fairness_error": _quantiles(r.get("max_fairness_error") for r in rows),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(out / "sweep.csv", rows, aggregate)
        (out / "aggregate.json").write_text(json.dumps(aggregate, indent=2) + "\n")
    return SweepResult(rows, aggregate, complete)


def write_sweep_csv(path: str | Path, rows: list[dict], aggregate: dict):
    """One row per seed, then a ``summary`` row holding medians."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_HEADER, restval="")
        writer.writeheader()
        for r in rows:
            writer.writerow(r)
        med = lambda key: (aggregate[key] or {}).get("median", "")
        writer.writerow({
            "seed": "summary",
            "status": "complete" if aggregate["complete"] else "incomplete",
            "convergence_step": med("convergence_step"),
            "max_err_after_burn_in": med("max_err_after_burn_in"),
            "max_fairness_error": med("max_fairness_error"),
            "sustainability_passed": all(r.get("sustainability_passed") for r in rows),
        })
