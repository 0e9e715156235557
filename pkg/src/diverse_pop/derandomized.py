"""Derandomized variant: shade levels 0..w_i instead of a dark/light bit.

A scheduled agent at positive shade meeting a same-colour partner at positive
shade lowers its shade by one; an agent at shade 0 meeting any partner at
positive shade adopts that partner's colour ``j`` at shade ``w_j``. Randomness
enters only through scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import _engine
from .protocol import (ColourId, Configuration, ConfigurationError, NoPartnerError,
                       WeightTable)


def integer_weights(weights: WeightTable) -> dict[ColourId, int]:
    out = {}
    for c, w in weights.weights.items():
        if w != int(w) or w < 1:
            raise ConfigurationError(f"derandomized protocol needs positive integer weights; colour {c} has {w}")
        out[c] = int(w)
    return out


def shade_bits(weight: int) -> int:
    """Bits needed to store a shade level in 0..weight."""
    return math.ceil(math.log2(1 + weight))


@dataclass
class ShadedConfiguration:
    counts: dict[tuple[ColourId, int], int]
    step: int = 0

    def __post_init__(self):
        self.counts = {(int(c), int(s)): int(v) for (c, s), v in self.counts.items()}
        for key, v in self.counts.items():
            if v < 0 or key[1] < 0:
                raise ConfigurationError(f"invalid entry {key}: {v}")

    @property
    def population(self) -> int:
        return sum(self.counts.values())

    n = population

    @property
    def colours(self) -> list[ColourId]:
        return sorted({c for c, _ in self.counts})

    def validate(self, weights: WeightTable):
        tops = integer_weights(weights)
        for (c, s), v in self.counts.items():
            if c not in tops:
                raise ConfigurationError(f"colour {c} has no weight")
            if s > tops[c] and v:
                raise ConfigurationError(f"shade {s} exceeds weight {tops[c]} of colour {c}")
        return tops

    @classmethod
    def all_dark(cls, sizes: dict[ColourId, int], weights: WeightTable) -> "ShadedConfiguration":
        """Every agent starts at the top shade of its colour."""
        tops = integer_weights(weights)
        return cls({(c, tops[c]): v for c, v in sizes.items()})

    def to_json(self) -> dict:
        rows = [[c, s, v] for (c, s), v in sorted(self.counts.items()) if v]
        return {"step": self.step, "counts": rows, "n": self.population}

    @classmethod
    def from_json(cls, data: dict) -> "ShadedConfiguration":
        cfg = cls({(c, s): v for c, s, v in data["counts"]}, int(data.get("step", 0)))
        if "n" in data and cfg.population != data["n"]:
            raise ConfigurationError("counts do not sum to n")
        return cfg


def project_to_binary(config: ShadedConfiguration) -> Configuration:
    """Shade 0 becomes light, any positive shade dark."""
    dark: dict[ColourId, int] = {}
    light: dict[ColourId, int] = {}
    for (c, s), v in config.counts.items():
        dark.setdefault(c, 0)
        light.setdefault(c, 0)
        if s == 0:
            light[c] += v
        else:
            dark[c] += v
    return Configuration(dark, light, config.step)


class _Layout:
    """Flattened class indexing: class ``base[i] + s`` is (colour i, shade s)."""

    def __init__(self, weights: WeightTable):
        tops = integer_weights(weights)
        self.colours = weights.colours
        self.top = np.array([tops[c] for c in self.colours], dtype=np.int64)
        self.base = np.concatenate([[0], np.cumsum(self.top + 1)[:-1]]).astype(np.int64)
        size = int((self.top + 1).sum())
        self.cls_colour = np.repeat(np.arange(len(self.colours)), self.top + 1).astype(np.int64)
        self.cls_shade = np.concatenate([np.arange(t + 1) for t in self.top]).astype(np.int64)
        self.size = size

    def pack(self, config: ShadedConfiguration) -> np.ndarray:
        out = np.zeros(self.size, dtype=np.int64)
        pos = {c: i for i, c in enumerate(self.colours)}
        for (c, s), v in config.counts.items():
            out[self.base[pos[c]] + s] += v
        return out

    def unpack(self, counts: np.ndarray, step: int) -> ShadedConfiguration:
        out = {}
        for idx, v in enumerate(counts.tolist()):
            out[(self.colours[self.cls_colour[idx]], int(self.cls_shade[idx]))] = v
        return ShadedConfiguration(out, step)

    def project(self, traj: np.ndarray) -> np.ndarray:
        """Packed shaded trajectory (T, classes) -> packed binary trajectory (T, 2k)."""
        k = len(self.colours)
        out = np.zeros((traj.shape[0], 2 * k), dtype=np.int64)
        for i in range(k):
            b = self.base[i]
            out[:, k + i] = traj[:, b]
            out[:, i] = traj[:, b + 1: b + 1 + self.top[i]].sum(axis=1)
        return out


def _check(config: ShadedConfiguration, weights: WeightTable) -> _Layout:
    config.validate(weights)
    missing = set(config.colours) - set(weights.weights)
    if missing:
        raise ConfigurationError(f"colours {sorted(missing)} have no weight")
    if config.population < 2:
        raise NoPartnerError("population < 2")
    return _Layout(weights)


def step_derandomized(config: ShadedConfiguration, weights: WeightTable,
                      rng: np.random.Generator) -> ShadedConfiguration:
    layout = _check(config, weights)
    counts = layout.pack(config)
    _engine.shaded_tick(counts, layout.cls_colour, layout.cls_shade, layout.base, layout.top, 1, rng)
    return layout.unpack(counts, config.step + 1)


class ShadedEngine:
    def __init__(self, config: ShadedConfiguration, weights: WeightTable, rng: np.random.Generator):
        self.layout = _check(config, weights)
        self.counts = self.layout.pack(config)
        self.step = config.step
        self.rng = rng
        self.colours = self.layout.colours

    def advance(self, ticks: int):
        L = self.layout
        _engine.shaded_tick(self.counts, L.cls_colour, L.cls_shade, L.base, L.top, ticks, self.rng)
        self.step += ticks

    def record(self, every: int, count: int) -> np.ndarray:
        """Projected binary states after each of ``count`` blocks of ``every`` ticks."""
        L = self.layout
        out = np.empty((count, L.size), dtype=np.int64)
        _engine.shaded_tick_record(self.counts, L.cls_colour, L.cls_shade, L.base, L.top,
                                   every, out, self.rng)
        self.step += every * count
        return L.project(out)

    def config(self) -> ShadedConfiguration:
        return self.layout.unpack(self.counts, self.step)


def enumerate_shaded_kernel(config: ShadedConfiguration, weights: WeightTable) -> dict[tuple, Fraction]:
    """Exact next-state law over shaded states, keyed by sorted nonzero (colour, shade, count) rows."""
    tops = config.validate(weights)
    n = config.population
    if n < 2:
        raise NoPartnerError("population < 2")
    denom = Fraction(1, n * (n - 1))
    items = [(key, v) for key, v in config.counts.items() if v]
    out: dict[tuple, Fraction] = {}

    def key_of(counts):
        return tuple(sorted((c, s, v) for (c, s), v in counts.items() if v))

    for (cu, su), nu in items:
        for (cv, sv), nv in items:
            pairs = nu * (nv - 1 if (cu, su) == (cv, sv) else nv)
            if not pairs:
                continue
            nxt = dict(config.counts)
            if sv > 0 and su > 0 and cu == cv:
                dst = (cu, su - 1)
            elif su == 0 and sv > 0:
                dst = (cv, tops[cv])
            else:
                dst = None
            if dst is not None:
                nxt[(cu, su)] -= 1
                nxt[dst] = nxt.get(dst, 0) + 1
            k = key_of(nxt)
            out[k] = out.get(k, Fraction(0)) + pairs * denom
    return out


def projected_kernel(config: ShadedConfiguration, weights: WeightTable) -> dict[tuple, Fraction]:
    """Shaded kernel pushed through the binary projection, keyed like ``Configuration.key``."""
    colours = weights.colours
    out: dict[tuple, Fraction] = {}
    for key, p in enumerate_shaded_kernel(config, weights).items():
        shaded = ShadedConfiguration({(c, s): v for c, s, v in key})
        binary = project_to_binary(shaded)
        dark = binary.dark_vector(colours)
        light = binary.light_vector(colours)
        k2 = tuple(dark.tolist()) + tuple(light.tolist())
        out[k2] = out.get(k2, Fraction(0)) + p
    return out
