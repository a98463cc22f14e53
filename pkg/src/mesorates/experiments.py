"""Experiment drivers shared by the CLI and the acceptance suite.

Each driver returns plain arrays or a :class:`~mesorates.io.ResultBundle`.
The pair experiments use one A and one B molecule with diffusion constants
D/2 each (so the relative constant is D) and radii sigma/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from . import __version__, rates
from .io import ResultBundle, Table, axis_label
from .micro import MicroConfig, sample_binding_times
from .micro.pair import log_histogram
from .model import (
    CompiledModel, CompileError, LatticeSpec, RateMode, ReactionChannel, SpeciesSpec, SystemState,
    compile_model,
)
from .nsm import StopCondition, TimeSeries, first_passage_times, run_ensemble
from .rates import PhysicalParams

#: censored fraction above which a result is flagged unreliable
UNRELIABLE_FRACTION = 0.10


# ---------------------------------------------------------------- rate tables

def channel_report(p: PhysicalParams, h: float | None, eps: float) -> dict:
    """Resolved critical sizes, rates and mesh bound for one pair."""
    hs = rates.h_star(p)
    F = rates.mesh_bound_F(p, eps)
    out = {"k_r": p.k_r, "k_d": p.k_d, "D": p.D, "sigma": p.sigma, "dim": p.dim,
           "h_star_kr": hs.h_star_kr, "h_star_inf": hs.h_star_inf,
           "F_eps": F.value, "eps": eps}
    if p.dim == 3:
        out["k_CK"] = rates.collins_kimball(p)
        out["eps_max"] = rates.eps_max(p)
    if h is not None:
        out["h"] = h
        try:
            rho = rates.rho_meso(h, p)
            out["rho"] = rho.value
            out["kd_meso"] = rates.kd_meso(h, p).value
            out["flags"] = sorted(rho.flags)
        except rates.NoValidRateError:
            out["rho"] = None
            out["kd_meso"] = None
            out["flags"] = ["no_valid_rate"]
    return out


def rate_rows(p: PhysicalParams, hs: Sequence[float]) -> Table:
    """Columns h, rho, h^d rho, k_CK, kd_meso/k_d, flags."""
    t = Table(["h", "rho", "hd_rho", "k_CK", "kd_meso_ratio", "flags"])
    k_ck = rates.collins_kimball(p) if p.dim == 3 else None
    for h in hs:
        try:
            r = rates.rho_meso(h, p)
            ratio = r.value * h**p.dim / p.k_r if 0 < p.k_r < math.inf else None
            t.add(h, r.value, r.value * h**p.dim, k_ck, ratio, sorted(r.flags))
        except rates.NoValidRateError:
            t.add(h, None, None, k_ck, None, ["no_valid_rate"])
    return t


def critical_size_rows(p: PhysicalParams, k_rs: Sequence[float]) -> Table:
    t = Table(["k_r", "h_star_kr", "h_star_inf", "h_star_kr_over_sigma"])
    for k in k_rs:
        hs = rates.h_star(replace(p, k_r=k))
        t.add(k, hs.h_star_kr, hs.h_star_inf, hs.h_star_kr / p.sigma)
    return t


def mesh_bound_rows(p: PhysicalParams, Ds: Sequence[float], eps: float) -> Table:
    t = Table(["D", "F", "eps_max", "flags"])
    for D in Ds:
        q = replace(p, D=D)
        F = rates.mesh_bound_F(q, eps)
        em = rates.eps_max(q) if q.dim == 3 else None
        t.add(D, F.value if math.isfinite(F.value) else None, em, sorted(F.flags))
    return t


# --------------------------------------------------------------- pair models

def pair_species(p: PhysicalParams) -> list[SpeciesSpec]:
    return [SpeciesSpec("A", p.D / 2, p.sigma / 2), SpeciesSpec("B", p.D / 2, p.sigma / 2),
            SpeciesSpec("C", 0.0, p.sigma / 2)]


def pair_model(p: PhysicalParams, h: float, n: int, *, mode: str = "hhp",
               reversible: bool = False, eps: float = 0.05) -> CompiledModel:
    """A + B -> C (and C -> A + B at k_d when ``reversible``) on an n^d lattice."""
    ch = [ReactionChannel("bind", ("A", "B"), ("C",), p.k_r, mode=mode)]
    if reversible:
        if mode == "hhp":
            ch.append(ReactionChannel("unbind", ("C",), ("A", "B"), p.k_d, mode="hhp",
                                      reverse_of="bind"))
        else:
            ch.append(ReactionChannel("unbind", ("C",), ("A", "B"), p.k_d))
    return compile_model(pair_species(p), ch, LatticeSpec.from_h(p.dim, n, h), eps=eps)


def meso_rebinding_times(p: PhysicalParams, h: float, n: int, trajectories: int, seed: int, *,
                         max_events: int | None = None, threads: int = 1,
                         mode: str = "hhp") -> tuple[np.ndarray, np.ndarray]:
    """Times until a freshly dissociated pair (both in one voxel) binds again."""
    m = pair_model(p, h, n, mode=mode)
    c = m.lattice.center()

    def init(g):
        return SystemState.empty(m).place(0, c).place(1, c)

    return first_passage_times(m, init, "bind", trajectories, seed,
                               max_events=max_events, threads=threads)


def meso_binding_times(p: PhysicalParams, h: float, n: int, trajectories: int, seed: int, *,
                       max_events: int | None = None, threads: int = 1,
                       mode: str = "hhp") -> tuple[np.ndarray, np.ndarray]:
    """Binding times of a pair placed in independent uniformly random voxels."""
    m = pair_model(p, h, n, mode=mode)

    def init(g):
        return SystemState.empty(m).place(0, int(g.integers(m.K))).place(1, int(g.integers(m.K)))

    return first_passage_times(m, init, "bind", trajectories, seed,
                               max_events=max_events, threads=threads)


def meso_bound_fraction(p: PhysicalParams, h: float, n: int, trajectories: int, seed: int, *,
                        cycles: float = 200.0, burn_cycles: float = 5.0, samples: int = 20000,
                        threads: int = 1, mode: str = "hhp") -> tuple[float, float]:
    """Long-run fraction of time the pair spends bound, with a standard error.

    Each trajectory starts bound, runs ``burn_cycles`` expected association
    cycles, then is sampled on a regular grid over ``cycles`` more.
    """
    if not p.k_d > 0:
        raise ValueError("the equilibrium experiment needs k_d > 0")
    m = pair_model(p, h, n, mode=mode, reversible=True)
    L = m.lattice.L
    cycle = 1.0 / p.k_d + L**p.dim / p.k_r
    t0, t1 = burn_cycles * cycle, (burn_cycles + cycles) * cycle
    grid = np.linspace(t0, t1, samples)
    c = m.lattice.center()
    res = run_ensemble(m, lambda g: SystemState.empty(m).place(2, c), StopCondition(horizon=t1),
                       trajectories, seed, threads=threads,
                       observers=lambda: [TimeSeries(times=grid)])
    per = np.array([r.payloads["time_series"].counts[:, 2].mean() for r in res])
    se = per.std(ddof=1) / math.sqrt(per.size) if per.size > 1 else math.nan
    return float(per.mean()), float(se)


def micro_config(p: PhysicalParams, L: float, dt: float, shell: float = 5.0) -> MicroConfig:
    return MicroConfig(L=L, dt=dt, k_r=p.k_r, D=p.D, sigma=p.sigma, k_d=p.k_d, shell=shell)


def ecdf_distance(a: np.ndarray, b: np.ndarray, t_min: float = 0.0) -> float:
    """Sup-norm distance of two ECDFs over t >= t_min.

    Censored samples (nan/inf) count in the denominator and never complete.
    """
    n_a, n_b = len(a), len(b)
    fa = np.sort(np.asarray(a)[np.isfinite(a)])
    fb = np.sort(np.asarray(b)[np.isfinite(b)])
    pts = np.concatenate([[t_min], fa[fa >= t_min], fb[fb >= t_min]])
    ca = np.searchsorted(fa, pts, side="right") / n_a
    cb = np.searchsorted(fb, pts, side="right") / n_b
    return float(np.max(np.abs(ca - cb)))


def mean_se(t: np.ndarray) -> tuple[float, float, int]:
    fin = t[np.isfinite(t)]
    if fin.size == 0:
        return math.nan, math.nan, int(t.size)
    se = fin.std(ddof=1) / math.sqrt(fin.size) if fin.size > 1 else math.nan
    return float(fin.mean()), float(se), int(t.size - fin.size)


# ---------------------------------------------------------------------- MAPK

MAPK_SPECIES = ("MAPK", "MAPKK", "MAPK_MAPKK", "MAPKK_i", "MAPK_p", "MAPK_p_MAPKK",
                "MAPK_pp", "P", "MAPK_pp_P", "P_i", "MAPK_p_P")


def mapk_channels() -> list[ReactionChannel]:
    """Two-step phosphorylation cycle with enzyme inactivation (rates k1..k7).

    ``MAPKK_i`` and ``P_i`` are the inactive enzyme forms MAPKK* and P*.
    Bimolecular channels and their linked dissociations are in ``hhp`` mode;
    :func:`with_rate_mode` switches them.
    """
    R = ReactionChannel
    return [
        R("kinase_bind_1", ("MAPK", "MAPKK"), ("MAPK_MAPKK",), "k1", mode="hhp"),
        R("kinase_unbind_1", ("MAPK_MAPKK",), ("MAPK", "MAPKK"), "k2", mode="hhp",
          reverse_of="kinase_bind_1"),
        R("kinase_cat_1", ("MAPK_MAPKK",), ("MAPKK_i", "MAPK_p"), "k3"),
        R("kinase_reactivate", ("MAPKK_i",), ("MAPKK",), "k7"),
        R("kinase_bind_2", ("MAPK_p", "MAPKK"), ("MAPK_p_MAPKK",), "k4", mode="hhp"),
        R("kinase_unbind_2", ("MAPK_p_MAPKK",), ("MAPK_p", "MAPKK"), "k5", mode="hhp",
          reverse_of="kinase_bind_2"),
        R("kinase_cat_2", ("MAPK_p_MAPKK",), ("MAPKK", "MAPK_pp"), "k6"),
        R("phosphatase_bind_1", ("MAPK_pp", "P"), ("MAPK_pp_P",), "k1", mode="hhp"),
        R("phosphatase_unbind_1", ("MAPK_pp_P",), ("MAPK_pp", "P"), "k2", mode="hhp",
          reverse_of="phosphatase_bind_1"),
        R("phosphatase_cat_1", ("MAPK_pp_P",), ("P_i", "MAPK_p"), "k3"),
        R("phosphatase_reactivate", ("P_i",), ("P",), "k7"),
        R("phosphatase_bind_2", ("MAPK_p", "P"), ("MAPK_p_P",), "k4", mode="hhp"),
        R("phosphatase_unbind_2", ("MAPK_p_P",), ("MAPK_p", "P"), "k5", mode="hhp",
          reverse_of="phosphatase_bind_2"),
        R("phosphatase_cat_2", ("MAPK_p_P",), ("P", "MAPK"), "k6"),
    ]


def with_rate_mode(channels: Sequence[ReactionChannel], mode: str) -> list[ReactionChannel]:
    """Switch bimolecular channels to ``mode``.

    In ``ck`` mode a linked dissociation keeps its intrinsic k_d as an
    explicit constant, since Collins-Kimball kinetics has no mesh-dependent
    dissociation rate.
    """
    mode = RateMode(mode)
    out = []
    for ch in channels:
        if ch.order == 2 and ch.mode is not RateMode.EXPLICIT:
            ch = replace(ch, mode=mode)
        elif ch.reverse_of is not None and mode is not RateMode.HHP:
            ch = replace(ch, mode=RateMode.EXPLICIT, reverse_of=None)
        out.append(ch)
    return out


@dataclass(frozen=True)
class MapkSettings:
    params: Mapping[str, float]        # k1..k7 (k1, k4 in m^3/s), sigma
    initial: Mapping[str, int]         # copy numbers, placed uniformly
    n: int                             # lattice side in voxels
    h_factor: float                    # h / h*_inf
    horizon: float                     # s
    samples: int = 400
    steady_fraction: float = 0.3       # tail of the horizon used for the steady level
    channels: tuple | None = None      # topology override, default mapk_channels()


def mapk_model(s: MapkSettings, D: float, mode: str, eps: float = 0.05) -> CompiledModel:
    sigma = float(s.params["sigma"])
    k_max = max(float(s.params["k1"]), float(s.params["k4"]))
    h_inf = rates.h_star(PhysicalParams(k_r=k_max, D=D, sigma=sigma)).h_star_inf
    h = s.h_factor * h_inf
    species = [SpeciesSpec(nm, D / 2, sigma / 2) for nm in MAPK_SPECIES]
    topology = list(s.channels) if s.channels else mapk_channels()
    return compile_model(species, with_rate_mode(topology, mode),
                         LatticeSpec.from_h(3, s.n, h), params=dict(s.params), eps=eps)


def half_activation_time(t: np.ndarray, x: np.ndarray, steady_fraction: float) -> tuple[float, float]:
    """(tau_res, steady level): first time the curve reaches half its tail mean."""
    tail = x[t >= t[-1] * (1 - steady_fraction)]
    steady = float(tail.mean())
    half = 0.5 * steady
    idx = np.flatnonzero(x >= half)
    if steady <= 0 or idx.size == 0:
        return math.nan, steady
    i = int(idx[0])
    if i == 0:
        return float(t[0]), steady
    # linear interpolation between the bracketing samples
    f = (half - x[i - 1]) / (x[i] - x[i - 1])
    return float(t[i - 1] + f * (t[i] - t[i - 1])), steady


def mapk_tau_res(s: MapkSettings, D: float, mode: str, trajectories: int, seed: int, *,
                 threads: int = 1, first: int = 0) -> dict:
    m = mapk_model(s, D, mode)
    grid = np.linspace(0.0, s.horizon, s.samples)
    idx = {nm: m.species_index(nm) for nm in s.initial}

    def init(g):
        st = SystemState.empty(m)
        for nm, cnt in s.initial.items():
            vox = g.integers(m.K, size=int(cnt))
            np.add.at(st.counts[:, idx[nm]], vox, 1)
        return st

    res = run_ensemble(m, init, StopCondition(horizon=s.horizon), trajectories, seed,
                       threads=threads, observers=lambda: [TimeSeries(times=grid)], first=first)
    pp = m.species_index("MAPK_pp")
    curve = np.mean([r.payloads["time_series"].counts[:, pp] for r in res], axis=0)
    tau, steady = half_activation_time(grid, curve, s.steady_fraction)
    return {"D": D, "mode": mode, "h": m.lattice.h, "tau_res": tau, "steady_MAPK_pp": steady,
            "curve": curve, "times": grid,
            "channels": [dict(name=c.name, constant=c.constant, **c.info) for c in m.channels]}


def mapk_gap(hhp: dict, ck: dict) -> float:
    return abs(hhp["tau_res"] - ck["tau_res"]) / ck["tau_res"]


# ------------------------------------------------------------ bundle helpers

def code_version() -> str:
    return __version__


def rebind_bundle(p: PhysicalParams, factors: Sequence[float], n: int, trajectories: int,
                  seed: int, *, micro_dt: float | None, micro_samples: int | None,
                  eps: float = 0.05, threads: int = 1, max_events: int | None = None,
                  micro_max_steps: int = 10**8,
                  labels: Sequence[str] | None = None) -> ResultBundle:
    """Rebinding-time samples per voxel width h = factor * h*_inf.

    Tables are keyed by ``labels`` (default: the factors).
    """
    hs = rates.h_star(p)
    summary: dict = {"kind": "rebind", "version": code_version(), "n": n,
                     "trajectories": trajectories, "seed": seed, "runs": []}
    tables: dict[str, Table] = {}
    unreliable = False
    for k, f in enumerate(factors):
        h = f * hs.h_star_inf
        L = n * h
        run = {"h_factor": f, "L": L, "micro_estimate": L**p.dim / p.k_r,
               "channel": channel_report(p, h, eps)}
        try:
            meso, _ = meso_rebinding_times(p, h, n, trajectories, seed, threads=threads,
                                           max_events=max_events)
        except CompileError as exc:
            # a sweep point below h*_kr is reported, not fatal
            run["error"] = str(exc)
            summary["runs"].append(run)
            unreliable = True
            continue
        mu, se, cens = mean_se(meso)
        edges, counts = log_histogram(meso)
        run["meso"] = {"mean": mu, "se": se, "censored": cens, "predicted": n**p.dim / run["channel"]["rho"],
                       "hist_edges": edges.tolist(), "hist_counts": counts.tolist()}
        cols = ["trajectory", "meso_time_s"]
        micro = None
        if p.dim == 3 and micro_dt and micro_samples:
            cfg = micro_config(p, L, micro_dt)
            micro, _ = sample_binding_times(cfg, "contact", micro_samples, seed,
                                            first=10**9, max_steps=micro_max_steps)
            mmu, mse, mcens = mean_se(micro)
            e2, c2 = log_histogram(micro)
            run["micro"] = {"mean": mmu, "se": mse, "censored": mcens, "dt": micro_dt,
                            "hist_edges": e2.tolist(), "hist_counts": c2.tolist(),
                            "ecdf_distance_t_ge_h2_2D": ecdf_distance(meso, micro, h**2 / (2 * p.D))}
            cols.append("micro_time_s")
            unreliable |= mcens > UNRELIABLE_FRACTION * micro_samples
        unreliable |= cens > UNRELIABLE_FRACTION * trajectories
        t = Table(cols)
        for i in range(max(len(meso), len(micro) if micro is not None else 0)):
            row = [i, float(meso[i]) if i < len(meso) else None]
            if micro is not None:
                row.append(float(micro[i]) if i < len(micro) else None)
            t.add(*row)
        tables[labels[k] if labels else axis_label(float(f))] = t
        summary["runs"].append(run)
    summary["unreliable"] = unreliable
    return ResultBundle("rebind", summary, tables, unreliable)

