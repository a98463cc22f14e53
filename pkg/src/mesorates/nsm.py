"""Next Subvolume Method engine for the reaction-diffusion master equation.

Each voxel holds the total of its reaction and diffusion propensities and an
exponentially distributed next-event time; an indexed min-heap
(:mod:`mesorates.queue`) yields the voxel that fires next. Within the voxel
the event is chosen by categorical sampling. After an event the affected
voxels (one for a reaction, two for a jump) get fresh exponential clocks;
optionally the destination voxel of a jump has its clock rescaled instead,
``t + (a_old / a_new) (tau_old - t)``. Both are exact for exponential clocks.

The event loop is compiled with numba. Uniform variates come from a numpy
``Generator`` through a refillable buffer, so a trajectory is a pure
function of its seed.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit

from . import queue
from .model import CompiledModel, SystemState, all_voxel_propensities
from .rng import as_generator, stream

# loop exit codes
HORIZON = 0
FIRED = 1
CAP = 2
EXHAUSTED = 3
NEED_RNG = 4
LOG_FULL = 5

_STATUS = {HORIZON: "horizon", FIRED: "fired", CAP: "cap", EXHAUSTED: "exhausted"}

EVENT_REACTION = 0
EVENT_JUMP = 1

_RNG_BLOCK = 1 << 14
_LOG_BLOCK = 1 << 14


@njit(cache=True, nogil=True)
def _react_total(counts, v, r_order, r_a, r_b, r_const):
    total = 0.0
    for r in range(r_order.shape[0]):
        o = r_order[r]
        if o == 0:
            total += r_const[r]
        elif o == 1:
            total += r_const[r] * counts[v, r_a[r]]
        else:
            xa = counts[v, r_a[r]]
            if r_a[r] == r_b[r]:
                total += r_const[r] * xa * (xa - 1) * 0.5
            else:
                total += r_const[r] * xa * counts[v, r_b[r]]
    return total


@njit(cache=True, nogil=True)
def _diff_total(counts, v, gamma_h2, n_nbr):
    total = 0.0
    for s in range(gamma_h2.shape[0]):
        total += counts[v, s] * gamma_h2[s]
    return total * n_nbr[v]


@njit(cache=True, nogil=True)
def _init_voxels(counts, gamma_h2, n_nbr, r_order, r_a, r_b, r_const, vox_react, vox_diff):
    for v in range(counts.shape[0]):
        vox_react[v] = _react_total(counts, v, r_order, r_a, r_b, r_const)
        vox_diff[v] = _diff_total(counts, v, gamma_h2, n_nbr)


@njit(cache=True, nogil=True)
def _record_samples(t_limit, inclusive, totals, sample_t, sample_i, sample_out):
    i = sample_i[0]
    n = sample_t.shape[0]
    while i < n and (sample_t[i] < t_limit or (inclusive and sample_t[i] <= t_limit)):
        for s in range(totals.shape[0]):
            sample_out[i, s] = totals[s]
        i += 1
    sample_i[0] = i


@njit(cache=True, nogil=True)
def _advance(counts, totals, gamma_h2, adj, n_nbr, r_order, r_a, r_b, r_const, r_stoich,
             vox_react, vox_diff, heap, hpos, times, clock, nevents,
             ubuf, uptr, t_end, stop_channel, max_events, rescale,
             sample_t, sample_i, sample_out,
             log_on, log_t, log_v, log_kind, log_idx, log_dst, log_n):
    n_nb_max = adj.shape[1]
    S = gamma_h2.shape[0]
    R = r_order.shape[0]
    nbuf = ubuf.shape[0]
    while True:
        if nevents[0] >= max_events:
            return CAP
        if uptr[0] + 4 > nbuf:
            return NEED_RNG
        if log_on and log_n[0] >= log_t.shape[0]:
            return LOG_FULL
        v = heap[0]
        tv = times[v]
        if tv == np.inf:
            if t_end < np.inf:
                _record_samples(t_end, True, totals, sample_t, sample_i, sample_out)
                clock[0] = t_end
            return EXHAUSTED
        if tv > t_end:
            _record_samples(t_end, True, totals, sample_t, sample_i, sample_out)
            clock[0] = t_end
            return HORIZON
        _record_samples(tv, False, totals, sample_t, sample_i, sample_out)
        t = tv
        clock[0] = t
        a_r = vox_react[v]
        a_d = vox_diff[v]
        u = ubuf[uptr[0]] * (a_r + a_d)
        uptr[0] += 1
        kind = EVENT_REACTION
        chosen = -1
        dst = -1
        if u < a_r:
            acc = 0.0
            last = -1
            for r in range(R):
                o = r_order[r]
                if o == 0:
                    a = r_const[r]
                elif o == 1:
                    a = r_const[r] * counts[v, r_a[r]]
                else:
                    xa = counts[v, r_a[r]]
                    if r_a[r] == r_b[r]:
                        a = r_const[r] * xa * (xa - 1) * 0.5
                    else:
                        a = r_const[r] * xa * counts[v, r_b[r]]
                if a > 0.0:
                    last = r
                    acc += a
                    if u < acc:
                        chosen = r
                        break
            if chosen < 0:
                chosen = last
            for s in range(S):
                d = r_stoich[chosen, s]
                if d != 0:
                    counts[v, s] += d
                    totals[s] += d
        else:
            kind = EVENT_JUMP
            u -= a_r
            acc = 0.0
            last = -1
            nn = n_nbr[v]
            for s in range(S):
                a = counts[v, s] * gamma_h2[s] * nn
                if a > 0.0:
                    last = s
                    acc += a
                    if u < acc:
                        chosen = s
                        break
            if chosen < 0:
                chosen = last
            k = int(ubuf[uptr[0]] * nn)
            if k >= nn:
                k = nn - 1
            for j in range(n_nb_max):
                w = adj[v, j]
                if w >= 0:
                    if k == 0:
                        dst = w
                        break
                    k -= 1
            counts[v, chosen] -= 1
            counts[dst, chosen] += 1
        uptr[0] += 1
        nevents[0] += 1

        vox_react[v] = _react_total(counts, v, r_order, r_a, r_b, r_const)
        vox_diff[v] = _diff_total(counts, v, gamma_h2, n_nbr)
        a_new = vox_react[v] + vox_diff[v]
        if a_new > 0.0:
            nt = t - math.log(1.0 - ubuf[uptr[0]]) / a_new
        else:
            nt = np.inf
        uptr[0] += 1
        queue.update_key(heap, hpos, times, v, nt)
        if dst >= 0:
            a_old = vox_react[dst] + vox_diff[dst]
            vox_react[dst] = _react_total(counts, dst, r_order, r_a, r_b, r_const)
            vox_diff[dst] = _diff_total(counts, dst, gamma_h2, n_nbr)
            a_new = vox_react[dst] + vox_diff[dst]
            if rescale and a_old > 0.0 and times[dst] < np.inf:
                nt = t + (a_old / a_new) * (times[dst] - t)
            else:
                nt = t - math.log(1.0 - ubuf[uptr[0]]) / a_new
            uptr[0] += 1
            queue.update_key(heap, hpos, times, dst, nt)

        if log_on:
            i = log_n[0]
            log_t[i] = t
            log_v[i] = v
            log_kind[i] = kind
            log_idx[i] = chosen
            log_dst[i] = dst
            log_n[0] = i + 1
        if kind == EVENT_REACTION and chosen == stop_channel:
            return FIRED


@dataclass(frozen=True)
class StopCondition:
    """Exactly one of ``horizon`` / ``channel`` (or neither), plus an optional cap."""

    horizon: float | None = None
    channel: int | str | None = None
    max_events: int | None = None

    def __post_init__(self):
        if self.horizon is not None and self.channel is not None:
            raise ValueError("give either a time horizon or a first-firing channel, not both")
        if self.horizon is None and self.channel is None and self.max_events is None:
            raise ValueError("a stop condition needs a horizon, a channel or an event cap")
        if self.horizon is not None and self.horizon < 0:
            raise ValueError("horizon must be >= 0")


@dataclass(frozen=True)
class Event:
    time: float
    voxel: int
    kind: int
    index: int
    destination: int = -1

    @property
    def is_reaction(self) -> bool:
        return self.kind == EVENT_REACTION


class TimeSeries:
    """Samples species totals at fixed times, holding state between events."""

    def __init__(self, interval: float | None = None, times: Sequence[float] | None = None):
        if (interval is None) == (times is None):
            raise ValueError("give exactly one of interval or times")
        self.interval = interval
        self.sample_times = None if times is None else np.asarray(times, dtype=np.float64)
        self.times: np.ndarray | None = None
        self.counts: np.ndarray | None = None

    def _grid(self, t0: float, horizon: float) -> np.ndarray:
        if self.sample_times is not None:
            return self.sample_times
        if not math.isfinite(horizon):
            raise ValueError("interval sampling needs a finite horizon")
        n = int(math.floor((horizon - t0) / self.interval + 1e-9)) + 1
        return t0 + self.interval * np.arange(n)


class EventLog:
    """Collects every event; rows are written as CSV with :meth:`write_csv`."""

    def __init__(self):
        self.time: list[np.ndarray] = []
        self.voxel: list[np.ndarray] = []
        self.kind: list[np.ndarray] = []
        self.index: list[np.ndarray] = []
        self.dest: list[np.ndarray] = []

    def events(self) -> list[Event]:
        if not self.time:
            return []
        cols = [np.concatenate(c) for c in (self.time, self.voxel, self.kind, self.index, self.dest)]
        return [Event(float(t), int(v), int(k), int(i), int(d)) for t, v, k, i, d in zip(*cols)]

    def rows(self, model: CompiledModel):
        names = model.species_names
        for e in self.events():
            if e.is_reaction:
                ch = model.channels[e.index]
                deltas = ";".join(
                    f"{names[s]}:{int(d):+d}" for s, d in enumerate(model.r_stoich[e.index]) if d)
                yield (repr(e.time), e.voxel, ch.name, deltas)
            else:
                nm = names[e.index]
                yield (repr(e.time), e.voxel, f"jump:{nm}",
                       f"{nm}:-1@{e.voxel};{nm}:+1@{e.destination}")

    def write_csv(self, path, model: CompiledModel) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "voxel", "channel", "species_deltas"])
            w.writerows(self.rows(model))


@dataclass
class TrajectoryResult:
    stop_time: float
    status: str
    n_events: int
    final_state: SystemState
    payloads: dict = field(default_factory=dict)

    @property
    def censored(self) -> bool:
        return self.status == "cap"

    @property
    def fired(self) -> bool:
        return self.status == "fired"


class Engine:
    """One NSM trajectory. Not thread-safe; ensembles use one engine per task."""

    def __init__(self, model: CompiledModel, state: SystemState | np.ndarray, rng=None,
                 *, t0: float = 0.0, rescale: bool = False):
        self.model = model
        self.rescale = bool(rescale)
        K = model.K
        self.vox_react = np.zeros(K)
        self.vox_diff = np.zeros(K)
        self.heap = np.empty(K, dtype=np.int64)
        self.hpos = np.empty(K, dtype=np.int64)
        self.times = np.full(K, np.inf)
        self._ubuf = np.empty(0)
        self._uptr = np.zeros(1, dtype=np.int64)
        self._clock = np.zeros(1)
        self._nevents = np.zeros(1, dtype=np.int64)
        self.reset(state, rng, t0=t0)

    def reset(self, state, rng=None, *, t0: float = 0.0) -> None:
        counts = state.counts if isinstance(state, SystemState) else state
        counts = np.array(counts, dtype=np.int64, copy=True)
        if counts.shape != (self.model.K, self.model.S):
            raise ValueError(f"state shape {counts.shape} does not match the model "
                             f"({self.model.K}, {self.model.S})")
        if (counts < 0).any():
            raise ValueError("initial copy numbers must be >= 0")
        self.counts = counts
        self.totals = counts.sum(axis=0)
        self.rng = as_generator(rng)
        m = self.model
        _init_voxels(counts, m.gamma_h2, m.n_neighbors, m.r_order, m.r_a, m.r_b, m.r_const,
                     self.vox_react, self.vox_diff)
        a = self.vox_react + self.vox_diff
        self.times[:] = np.inf
        active = np.flatnonzero(a > 0)
        if active.size:
            u = self.rng.random(active.size)
            self.times[active] = t0 - np.log1p(-u) / a[active]
        queue.heapify(self.heap, self.hpos, self.times)
        self._clock[0] = t0
        self._nevents[0] = 0
        # short trajectories are common; grow the variate buffer on demand
        self._block = 64
        self._ubuf = np.empty(0)
        self._uptr[0] = 0

    @property
    def time(self) -> float:
        return float(self._clock[0])

    @property
    def n_events(self) -> int:
        return int(self._nevents[0])

    @property
    def state(self) -> SystemState:
        return SystemState(self.counts)

    def _refill(self):
        self._ubuf = self.rng.random(self._block)
        self._block = min(2 * self._block, _RNG_BLOCK)
        self._uptr[0] = 0

    def _loop(self, t_end, stop_channel, max_events, sample_t, sample_i, sample_out, log):
        m = self.model
        if log is not None:
            lt, lv, lk, li, ld = (np.empty(_LOG_BLOCK), *(np.empty(_LOG_BLOCK, dtype=np.int64)
                                                          for _ in range(4)))
        else:
            lt = np.empty(0)
            lv = lk = li = ld = np.empty(0, dtype=np.int64)
        ln = np.zeros(1, dtype=np.int64)
        while True:
            status = _advance(
                self.counts, self.totals, m.gamma_h2, m.adjacency, m.n_neighbors,
                m.r_order, m.r_a, m.r_b, m.r_const, m.r_stoich,
                self.vox_react, self.vox_diff, self.heap, self.hpos, self.times,
                self._clock, self._nevents, self._ubuf, self._uptr,
                t_end, stop_channel, max_events, self.rescale,
                sample_t, sample_i, sample_out,
                log is not None, lt, lv, lk, li, ld, ln)
            if log is not None and (status == LOG_FULL or status != NEED_RNG) and ln[0]:
                n = ln[0]
                for dest, src in zip((log.time, log.voxel, log.kind, log.index, log.dest),
                                     (lt, lv, lk, li, ld)):
                    dest.append(src[:n].copy())
                ln[0] = 0
            if status == NEED_RNG:
                self._refill()
            elif status != LOG_FULL:
                return status

    def step(self) -> Event | None:
        """Fire the next event; ``None`` when no event can ever fire."""
        log = EventLog()
        none_t = np.empty(0)
        status = self._loop(np.inf, -1, self.n_events + 1, none_t, np.zeros(1, np.int64),
                            np.empty((0, self.model.S), np.int64), log)
        if status == EXHAUSTED:
            return None
        ev = log.events()
        return ev[0] if ev else None

    def run(self, stop: StopCondition, observers: Sequence = ()) -> TrajectoryResult:
        m = self.model
        # the horizon is an absolute simulation time
        t_end = math.inf if stop.horizon is None else float(stop.horizon)
        ch = stop.channel
        if isinstance(ch, str):
            ch = m.channel_index(ch)
        ch = -1 if ch is None else int(ch)
        cap = np.iinfo(np.int64).max if stop.max_events is None else self.n_events + int(stop.max_events)
        ts = next((o for o in observers if isinstance(o, TimeSeries)), None)
        log = next((o for o in observers if isinstance(o, EventLog)), None)
        if ts is not None:
            grid = ts._grid(self.time, t_end)
            out = np.zeros((grid.shape[0], m.S), dtype=np.int64)
        else:
            grid = np.empty(0)
            out = np.empty((0, m.S), dtype=np.int64)
        si = np.zeros(1, dtype=np.int64)
        status = self._loop(t_end, ch, cap, grid, si, out, log)
        payloads = {}
        if ts is not None:
            n = int(si[0])
            ts.times, ts.counts = grid[:n], out[:n]
            payloads["time_series"] = ts
        if log is not None:
            payloads["event_log"] = log
        return TrajectoryResult(stop_time=self.time, status=_STATUS[status],
                                n_events=self.n_events, final_state=self.state.copy(),
                                payloads=payloads)

    def check_integrity(self) -> bool:
        """Compare cached propensities with a from-scratch recomputation."""
        react, diff = all_voxel_propensities(self.model, self.state)
        ok = np.allclose(react, self.vox_react, rtol=1e-12, atol=0)
        ok &= np.allclose(diff, self.vox_diff, rtol=1e-12, atol=0)
        q = queue.EventQueue.__new__(queue.EventQueue)
        q.heap, q.pos, q.keys = self.heap, self.hpos, self.times
        ok &= q.check()
        a = react + diff
        ok &= bool(np.all((a == 0) == np.isinf(self.times)))
        ok &= bool(np.all(self.times >= self.time))
        ok &= bool((self.counts >= 0).all())
        ok &= bool(np.array_equal(self.totals, self.counts.sum(axis=0)))
        return bool(ok)


def run_ensemble(model: CompiledModel, initial: Callable[[np.random.Generator], SystemState],
                 stop: StopCondition, n: int, seed: int, *, threads: int = 1,
                 observers: Callable[[], Sequence] | None = None,
                 rescale: bool = False, first: int = 0) -> list[TrajectoryResult]:
    """Run ``n`` independent trajectories; result ``i`` uses stream ``(seed, first + i)``.

    ``initial`` builds the starting state from the trajectory's generator.
    """
    def task(chunk):
        eng = None
        out = []
        for i in chunk:
            g = stream(seed, first + i)
            st = initial(g)
            if eng is None:
                eng = Engine(model, st, g, rescale=rescale)
            else:
                eng.reset(st, g)
            out.append(eng.run(stop, observers() if observers else ()))
        return out

    idx = list(range(n))
    if threads <= 1 or n < 2:
        return task(idx)
    chunks = [idx[k::threads] for k in range(threads)]
    results: list = [None] * n
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for chunk, res in zip(chunks, pool.map(task, chunks)):
            for i, r in zip(chunk, res):
                results[i] = r
    return results


def first_passage_times(model: CompiledModel, initial, channel: int | str, n: int, seed: int,
                        *, max_events: int | None = None, threads: int = 1,
                        first: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """First-firing times of ``channel``; returns (times, censored mask)."""
    stop = StopCondition(channel=channel, max_events=max_events)
    res = run_ensemble(model, initial, stop, n, seed, threads=threads, first=first)
    t = np.array([r.stop_time for r in res])
    cens = np.array([not r.fired for r in res])
    t[cens] = np.nan
    return t, cens
