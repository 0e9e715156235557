"""Compiled inner loops.

Count-class layout used throughout: ``counts[0:k]`` are dark counts A_i and
``counts[k:2k]`` are light counts a_i, in the order of the run's active colour
list. ``coin[i] = 1 / w_i``.
"""

import math

import numba
import numpy as np

_JIT = dict(cache=True, nogil=True)


@numba.njit(**_JIT)
def _fade_mass(counts, coin, k):
    f = 0.0
    for i in range(k):
        c = counts[i]
        f += c * (c - 1) * coin[i]
    return f


@numba.njit(**_JIT)
def count_jump(counts, coin, k, ticks, gen, tracked, visits, min_dark,
               log_tick, log_agent, log_cls, log_pos, t0):
    """Advance the aggregate chain by up to ``ticks`` ticks, skipping no-ops.

    The number of ticks until the next state change is geometric with the
    exact one-step activity probability; the change itself is sampled from the
    kernel conditioned on activity. A tracked agent in the scheduled agent's
    class is the scheduled agent with probability 1 / (class size).

    Returns the number of ticks advanced. Stops early only when the tracked
    transition log is full; callers resume from there.
    """
    n = 0
    for c in range(2 * k):
        n += counts[c]
    nn1 = n * (n - 1.0)
    m = tracked.shape[0]
    cap = log_tick.shape[0]
    t = 0
    while t < ticks:
        if m > 0 and log_pos[0] >= cap:
            break
        dark = 0
        light = 0
        for i in range(k):
            dark += counts[i]
            light += counts[k + i]
        fade = _fade_mass(counts, coin, k)
        adopt = float(light) * float(dark)
        mass = fade + adopt
        p = mass / nn1
        if p <= 0.0:
            # frozen state: nothing can ever change again
            for j in range(m):
                visits[j, tracked[j]] += ticks - t
            t = ticks
            break
        if p >= 1.0:
            gap = 1
        else:
            u = 1.0 - gen.random()
            gap = 1 + int(math.floor(math.log(u) / math.log1p(-p)))
        if gap > ticks - t:
            for j in range(m):
                visits[j, tracked[j]] += ticks - t
            t = ticks
            break
        for j in range(m):
            visits[j, tracked[j]] += gap - 1
        t += gap

        x = gen.random() * mass
        if x < fade:
            i = 0
            acc = counts[0] * (counts[0] - 1) * coin[0]
            while x >= acc and i < k - 1:
                i += 1
                acc += counts[i] * (counts[i] - 1) * coin[i]
            src = i
            dst = k + i
        else:
            y = gen.random() * light
            i = 0
            acc = counts[k]
            while y >= acc and i < k - 1:
                i += 1
                acc += counts[k + i]
            z = gen.random() * dark
            j = 0
            acc = counts[0]
            while z >= acc and j < k - 1:
                j += 1
                acc += counts[j]
            src = k + i
            dst = j

        if m > 0:
            here = 0
            for j in range(m):
                if tracked[j] == src:
                    here += 1
            if here > 0:
                r = int(gen.random() * counts[src])
                if r < here:
                    seen = 0
                    for j in range(m):
                        if tracked[j] == src:
                            if seen == r:
                                tracked[j] = dst
                                pos = log_pos[0]
                                log_tick[pos] = t0 + t
                                log_agent[pos] = j
                                log_cls[pos] = dst
                                log_pos[0] = pos + 1
                                break
                            seen += 1

        counts[src] -= 1
        counts[dst] += 1
        if src < k and counts[src] < min_dark[src]:
            min_dark[src] = counts[src]
        for j in range(m):
            visits[j, tracked[j]] += 1
    return t


@numba.njit(**_JIT)
def count_jump_record(counts, coin, k, every, out, gen, min_dark):
    """Run ``out.shape[0] * every`` ticks, storing the state after each block."""
    tracked = np.empty(0, dtype=np.int64)
    visits = np.empty((0, 2 * k), dtype=np.int64)
    log_tick = np.empty(0, dtype=np.int64)
    log_pos = np.zeros(1, dtype=np.int64)
    for r in range(out.shape[0]):
        count_jump(counts, coin, k, every, gen, tracked, visits, min_dark,
                   log_tick, log_tick, log_tick, log_pos, 0)
        for c in range(2 * k):
            out[r, c] = counts[c]


@numba.njit(**_JIT)
def _class_of(counts, idx, skip):
    # class containing position idx when one member of class `skip` is removed
    c = 0
    acc = counts[0] - (1 if skip == 0 else 0)
    while idx >= acc:
        c += 1
        acc += counts[c] - (1 if skip == c else 0)
    return c


@numba.njit(**_JIT)
def count_tick(counts, coin, k, ticks, gen, min_dark):
    """Tick-by-tick aggregate engine: sample (u-class, v-class), apply the rule."""
    n = 0
    for c in range(2 * k):
        n += counts[c]
    for _ in range(ticks):
        cu = _class_of(counts, gen.integers(0, n), -1)
        cv = _class_of(counts, gen.integers(0, n - 1), cu)
        if cu >= k:
            if cv < k:
                counts[cu] -= 1
                counts[cv] += 1
        elif cu == cv:
            if gen.random() < coin[cu]:
                counts[cu] -= 1
                counts[cu + k] += 1
                if counts[cu] < min_dark[cu]:
                    min_dark[cu] = counts[cu]


@numba.njit(**_JIT)
def agent_tick(colour, shade, coin, ticks, gen):
    """Literal per-agent engine. ``colour`` holds run-local colour indices."""
    n = colour.shape[0]
    for _ in range(ticks):
        u = gen.integers(0, n)
        v = gen.integers(0, n - 1)
        if v >= u:
            v += 1
        if shade[u] == 0:
            if shade[v] == 1:
                colour[u] = colour[v]
                shade[u] = 1
        elif shade[v] == 1 and colour[u] == colour[v]:
            if gen.random() < coin[colour[u]]:
                shade[u] = 0


@numba.njit(**_JIT)
def agent_one_step_hist(colour, shade, coin, k, trials, gen):
    """Histogram of single-tick outcomes from a fixed agent configuration.

    Codes: 0 no-op; 1 + i dark i fades; 1 + k + i*k + j light i adopts dark j.
    """
    n = colour.shape[0]
    hist = np.zeros(1 + k + k * k, dtype=np.int64)
    for _ in range(trials):
        u = gen.integers(0, n)
        v = gen.integers(0, n - 1)
        if v >= u:
            v += 1
        code = 0
        if shade[u] == 0:
            if shade[v] == 1:
                code = 1 + k + colour[u] * k + colour[v]
        elif shade[v] == 1 and colour[u] == colour[v]:
            if gen.random() < coin[colour[u]]:
                code = 1 + colour[u]
        hist[code] += 1
    return hist


@numba.njit(**_JIT)
def shaded_tick(counts, cls_colour, cls_shade, base, top, ticks, gen):
    """Derandomized engine over (colour, shade level) classes.

    Class ``base[i] + s`` is colour i at shade s; ``top[i] = w_i``.
    """
    m = counts.shape[0]
    n = 0
    for c in range(m):
        n += counts[c]
    for _ in range(ticks):
        cu = _class_of(counts, gen.integers(0, n), -1)
        cv = _class_of(counts, gen.integers(0, n - 1), cu)
        su = cls_shade[cu]
        sv = cls_shade[cv]
        if sv == 0:
            continue
        if su > 0:
            if cls_colour[cu] == cls_colour[cv]:
                counts[cu] -= 1
                counts[cu - 1] += 1
        else:
            j = cls_colour[cv]
            counts[cu] -= 1
            counts[base[j] + top[j]] += 1


@numba.njit(**_JIT)
def shaded_tick_record(counts, cls_colour, cls_shade, base, top, every, out, gen):
    for r in range(out.shape[0]):
        shaded_tick(counts, cls_colour, cls_shade, base, top, every, gen)
        for c in range(counts.shape[0]):
            out[r, c] = counts[c]


@numba.njit(**_JIT)
def chain_hits(P, start, target, steps, gen):
    """Visits to ``target`` over ``steps`` steps of a small row-stochastic chain.

    Holding times are geometric, so the cost scales with the number of jumps.
    """
    s = start
    t = 0
    hits = 0
    nstates = P.shape[0]
    while t < steps:
        stay = P[s, s]
        if stay >= 1.0:
            hold = steps - t
        else:
            u = 1.0 - gen.random()
            hold = 1 + int(math.floor(math.log(u) / math.log(stay))) if stay > 0.0 else 1
        # the chain sits at s for hold-1 ticks, then jumps on tick hold
        if hold > steps - t:
            if s == target:
                hits += steps - t
            break
        if s == target:
            hits += hold - 1
        x = gen.random() * (1.0 - stay)
        acc = 0.0
        nxt = s
        for c in range(nstates):
            if c == s:
                continue
            acc += P[s, c]
            nxt = c
            if x < acc:
                break
        s = nxt
        t += hold
        if s == target:
            hits += 1
    return hits
