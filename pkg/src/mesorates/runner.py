"""Turn a loaded :class:`~mesorates.config.ExperimentConfig` into a ResultBundle.

CSV schemas per kind (fixed column sets):

* rates-report: ``rates-report-h.csv`` (h, rho, hd_rho, k_CK, kd_meso_ratio, flags),
  ``rates-report-k_r.csv`` (k_r, h_star_kr, h_star_inf, h_star_kr_over_sigma) or
  ``rates-report-D.csv`` (D, F, eps_max, flags), chosen by the sweep axis.
* sweep: ``sweep-{axis}.csv`` (value, h, L, tau_rebind_meso, tau_rebind_micro,
  rebind_ratio, tau_bind_micro, flags).
* rebind, binding-time: ``{kind}-{value}.csv`` (trajectory, meso_time_s[, micro_time_s]).
* equilibrium: ``equilibrium-{value}.csv`` (method, bound_fraction, se, predicted).
* simulate: ``simulate-{value}.csv`` (time, then one mean-total column per species),
  plus ``simulate-{value}-events.csv`` for trajectory 0 when ``event_log = true``.
* mapk: ``mapk-{D}.csv`` (time, MAPK_pp_hhp, MAPK_pp_ck).
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from . import config as C
from . import experiments as X
from . import rates
from .io import ResultBundle, Table, axis_label
from .micro import MicroError, bound_fraction, equilibrium_bound_fraction, sample_binding_times
from .model import CompileError, ModelError, SystemState, compile_model
from .nsm import EventLog, StopCondition, TimeSeries, run_ensemble

UNRELIABLE_FRACTION = X.UNRELIABLE_FRACTION


def run(cfg: C.ExperimentConfig, seed: int, *, threads: int = 1) -> ResultBundle:
    kind = cfg.kind
    try:
        fn = _DRIVERS[kind]
        bundle = fn(cfg, seed, threads)
    except (ModelError, MicroError, rates.RatesError) as exc:
        if isinstance(exc, CompileError):
            raise
        raise C.ConfigError(str(exc)) from None
    bundle.summary.setdefault("kind", kind)
    bundle.summary["version"] = X.code_version()
    bundle.summary["seed"] = seed
    bundle.summary["config"] = cfg.echo()
    bundle.summary["unreliable"] = bundle.unreliable
    return bundle


# ------------------------------------------------------------------ helpers

def _h_star_inf(p: rates.PhysicalParams) -> float:
    return rates.h_star(p).h_star_inf


def _base_h(cfg: C.ExperimentConfig, p: rates.PhysicalParams) -> float:
    lat = cfg.section("lattice")
    if "h" in lat:
        return C._num(lat, "h", "lattice")
    if "h_factor" in lat:
        return C._num(lat, "h_factor", "lattice") * _h_star_inf(p)
    if "L" in lat:
        return C._num(lat, "L", "lattice") / _lattice_n(cfg)
    raise C.ConfigError("[lattice] needs one of h, h_factor or L")


def _lattice_n(cfg: C.ExperimentConfig) -> int:
    n = cfg.section("lattice").get("n")
    if not isinstance(n, int) or n < 1:
        raise C.ConfigError("[lattice] needs an integer n >= 1")
    return n


def _points(cfg: C.ExperimentConfig, p: rates.PhysicalParams):
    """(label, value, params, h) for every sweep point, or the single base point."""
    sw = cfg.sweep
    if sw is None:
        h = _base_h(cfg, p)
        return [(axis_label(h), h, p, h)]
    out = []
    for v in sw.values:
        if sw.axis == "h":
            q = p
            h = v * _h_star_inf(p) if sw.relative else v
        else:
            if sw.relative:
                raise C.ConfigError("sweep.relative applies to the h axis only")
            q = replace(p, **{sw.axis: v})
            h = _base_h(cfg, q)
        out.append((axis_label(v), v, q, h))
    return out


def _micro(cfg: C.ExperimentConfig):
    m = cfg.section("micro")
    if not m or not m.get("enabled", True):
        return None
    dt = C._num(m, "dt", "micro")
    return {"dt": dt, "samples": int(m.get("samples", cfg.trajectories)),
            "max_steps": int(m.get("max_steps", 10**8)), "shell": float(m.get("shell", 5.0))}


def _max_events(cfg: C.ExperimentConfig):
    v = cfg.section("experiment").get("max_events")
    if v is not None and (not isinstance(v, int) or v < 1):
        raise C.ConfigError("max_events must be a positive integer")
    return v


def _samples_table(meso: np.ndarray, micro: np.ndarray | None) -> Table:
    cols = ["trajectory", "meso_time_s"] + (["micro_time_s"] if micro is not None else [])
    t = Table(cols)
    n = max(len(meso), len(micro) if micro is not None else 0)
    for i in range(n):
        row = [i, float(meso[i]) if i < len(meso) else None]
        if micro is not None:
            row.append(float(micro[i]) if i < len(micro) else None)
        t.add(*row)
    return t


def _stats(t: np.ndarray) -> dict:
    mu, se, cens = X.mean_se(t)
    edges, counts = X.log_histogram(t)
    return {"mean": mu, "se": se, "censored": cens, "n": int(t.size),
            "hist_edges": edges.tolist(), "hist_counts": counts.tolist()}


# ------------------------------------------------------------------ drivers

def _rates_report(cfg, seed, threads) -> ResultBundle:
    p = C.pair_params(cfg)
    summary = {"kind": "rates-report", "channel": X.channel_report(p, None, cfg.eps)}
    lat = cfg.section("lattice")
    if lat:
        try:
            summary["channel"] = X.channel_report(p, _base_h(cfg, p), cfg.eps)
        except C.ConfigError:
            pass
    tables = {}
    sw = cfg.sweep
    if sw is not None and sw.values:
        if sw.axis == "h":
            hs = [v * _h_star_inf(p) for v in sw.values] if sw.relative else sw.values
            tables["h"] = X.rate_rows(p, hs)
        elif sw.axis == "k_r":
            tables["k_r"] = X.critical_size_rows(p, sw.values)
        else:
            tables["D"] = X.mesh_bound_rows(p, sw.values, cfg.eps)
    return ResultBundle("rates-report", summary, tables)


def _sweep(cfg, seed, threads) -> ResultBundle:
    """Closed-form mean rebinding and binding times over the sweep axis."""
    p = C.pair_params(cfg)
    n = _lattice_n(cfg)
    summary = {"kind": "sweep", "n": n, "runs": []}
    tables = {}
    if cfg.sweep is None:
        raise C.ConfigError("the sweep experiment needs [experiment.sweep]")
    if cfg.sweep.values:
        t = Table(["value", "h", "L", "tau_rebind_meso", "tau_rebind_micro", "rebind_ratio",
                   "tau_bind_micro", "flags"])
        for label, v, q, h in _points(cfg, p):
            L = n * h
            ch = X.channel_report(q, h, cfg.eps)
            try:
                meso, micro = rates.tau_rebind(q, rates.MeshContext.from_lattice(n, L, q.dim))
                m_val, flags = meso.value, sorted(meso.flags)
            except rates.NoValidRateError:
                micro = L**q.dim / q.k_r if q.k_r > 0 else math.inf
                m_val, flags = None, ["no_valid_rate"]
            bind = rates.tau_micro_mean(q, L)
            ratio = m_val / micro if m_val is not None and 0 < micro < math.inf else None
            t.add(v, h, L, m_val, micro, ratio, bind.value, flags + sorted(bind.flags))
            summary["runs"].append({"value": v, "channel": ch})
        tables[cfg.sweep.axis] = t
    return ResultBundle("sweep", summary, tables)


def _rebind(cfg, seed, threads) -> ResultBundle:
    p = C.pair_params(cfg)
    n = _lattice_n(cfg)
    sw = cfg.sweep
    if sw is not None and sw.axis != "h":
        raise C.ConfigError("the rebind experiment sweeps over h only")
    pts = _points(cfg, p)
    h_inf = _h_star_inf(p)
    mc = _micro(cfg)
    b = X.rebind_bundle(p, [h / h_inf for _, _, _, h in pts], n, cfg.trajectories, seed,
                        micro_dt=mc["dt"] if mc else None,
                        micro_samples=mc["samples"] if mc else None, eps=cfg.eps,
                        threads=threads, max_events=_max_events(cfg),
                        micro_max_steps=mc["max_steps"] if mc else 10**8,
                        labels=[lab for lab, *_ in pts])
    for run, (_, v, _, h) in zip(b.summary["runs"], pts):
        run["value"] = v
        run["h"] = h
    return b


def _binding_time(cfg, seed, threads) -> ResultBundle:
    p = C.pair_params(cfg)
    n = _lattice_n(cfg)
    mc = _micro(cfg)
    summary = {"kind": "binding-time", "n": n, "runs": []}
    tables = {}
    unreliable = False
    for label, v, q, h in _points(cfg, p):
        L = n * h
        run = {"value": v, "h": h, "L": L, "channel": X.channel_report(q, h, cfg.eps),
               "predicted_micro": rates.tau_micro_mean(q, L).value}
        try:
            meso, _ = X.meso_binding_times(q, h, n, cfg.trajectories, seed, threads=threads,
                                           max_events=_max_events(cfg))
        except CompileError as exc:
            run["error"] = str(exc)
            summary["runs"].append(run)
            unreliable = True
            continue
        run["meso"] = _stats(meso)
        unreliable |= run["meso"]["censored"] > UNRELIABLE_FRACTION * meso.size
        micro = None
        if mc and q.dim == 3:
            mcfg = X.micro_config(q, L, mc["dt"], mc["shell"])
            micro, _ = sample_binding_times(mcfg, "uniform", mc["samples"], seed,
                                            first=10**9, max_steps=mc["max_steps"])
            run["micro"] = _stats(micro)
            run["micro"]["dt"] = mc["dt"]
            unreliable |= run["micro"]["censored"] > UNRELIABLE_FRACTION * micro.size
        tables[label] = _samples_table(meso, micro)
        summary["runs"].append(run)
    return ResultBundle("binding-time", summary, tables, unreliable)


def _equilibrium(cfg, seed, threads) -> ResultBundle:
    p = C.pair_params(cfg)
    if not p.k_d > 0:
        raise C.ConfigError("the equilibrium experiment needs k_d > 0")
    n = _lattice_n(cfg)
    eq = cfg.section("equilibrium")
    cycles = float(eq.get("cycles", 200.0))
    burn = float(eq.get("burn_cycles", 5.0))
    samples = int(eq.get("samples", 20000))
    mc = _micro(cfg)
    summary = {"kind": "equilibrium", "n": n, "runs": []}
    tables = {}
    unreliable = False
    for label, v, q, h in _points(cfg, p):
        L = n * h
        pred = equilibrium_bound_fraction(q.k_r, q.k_d, L, q.dim)
        run = {"value": v, "h": h, "L": L, "channel": X.channel_report(q, h, cfg.eps),
               "predicted": pred}
        t = Table(["method", "bound_fraction", "se", "predicted"])
        try:
            f, se = X.meso_bound_fraction(q, h, n, cfg.trajectories, seed, cycles=cycles,
                                          burn_cycles=burn, samples=samples, threads=threads)
        except CompileError as exc:
            run["error"] = str(exc)
            summary["runs"].append(run)
            unreliable = True
            continue
        run["meso"] = {"bound_fraction": f, "se": se}
        t.add("meso", f, se, pred)
        if mc and q.dim == 3:
            mcfg = X.micro_config(q, L, mc["dt"], mc["shell"])
            fm, sem = bound_fraction(mcfg, int(eq.get("micro_cycles", mc["samples"])), seed,
                                     max_steps=mc["max_steps"])
            run["micro"] = {"bound_fraction": fm, "se": sem, "dt": mc["dt"]}
            t.add("micro", fm, sem, pred)
        tables[label] = t
        summary["runs"].append(run)
    return ResultBundle("equilibrium", summary, tables, unreliable)


def _initial_state(cfg, model):
    init = cfg.section("initial")
    counts = init.get("counts", {})
    if not isinstance(counts, dict) or not counts:
        raise C.ConfigError("[initial] needs a counts table, e.g. counts = { A = 10 }")
    placement = init.get("placement", "uniform")
    if placement not in ("uniform", "center"):
        raise C.ConfigError("[initial] placement must be 'uniform' or 'center'")
    try:
        idx = {nm: model.species_index(nm) for nm in counts}
    except KeyError as exc:
        raise C.ConfigError(f"[initial] names unknown species {exc.args[0]!r}") from None
    for nm, c in counts.items():
        if not isinstance(c, int) or c < 0:
            raise C.ConfigError(f"[initial] count of {nm} must be a non-negative integer")
    c0 = model.lattice.center()

    def build(g):
        st = SystemState.empty(model)
        for nm, c in counts.items():
            if placement == "center":
                st.place(idx[nm], c0, c)
            else:
                np.add.at(st.counts[:, idx[nm]], g.integers(model.K, size=c), 1)
        return st
    return build


def _simulate(cfg, seed, threads) -> ResultBundle:
    exp = cfg.section("experiment")
    horizon = C._num(exp, "horizon", "experiment")
    interval = C._num(exp, "interval", "experiment", horizon / 100 if horizon > 0 else 1.0)
    species = C.species(cfg)
    channels = C.reactions(cfg)
    params = C.numeric_parameters(cfg)
    sw = cfg.sweep
    if sw is not None and (sw.axis != "h" or sw.relative):
        raise C.ConfigError("the simulate experiment sweeps over absolute h only")
    base = C.lattice(cfg)
    hs = [base.h] if sw is None else sw.values
    summary = {"kind": "simulate", "runs": []}
    tables = {}
    capped = False
    for h in hs:
        lat = type(base).from_h(base.dim, base.n, h, base.boundary.value)
        model = compile_model(species, channels, lat, params=params, eps=cfg.eps)
        init = _initial_state(cfg, model)
        want_log = bool(exp.get("event_log", False))
        pending = [want_log]    # only trajectory 0 keeps an event log

        def observers():
            obs = [TimeSeries(interval=interval)]
            if pending[0]:
                pending[0] = False
                obs.append(EventLog())
            return obs

        stop = StopCondition(horizon=horizon, max_events=_max_events(cfg))
        res = run_ensemble(model, init, stop, cfg.trajectories, seed, threads=1 if want_log else threads,
                           observers=observers)
        n_cap = sum(r.status == "cap" for r in res)
        capped |= n_cap > 0
        ts = [r.payloads["time_series"] for r in res]
        k = min(len(x.times) for x in ts)
        mean = np.mean([x.counts[:k] for x in ts], axis=0)
        t = Table(["time"] + model.species_names)
        for i in range(k):
            t.add(float(ts[0].times[i]), *[float(x) for x in mean[i]])
        label = axis_label(h)
        tables[label] = t
        if want_log:
            lt = Table(["time", "voxel", "channel", "species_deltas"])
            for row in res[0].payloads["event_log"].rows(model):
                lt.add(*row)
            tables[f"{label}-events"] = lt
        final = np.array([r.final_state.totals() for r in res], dtype=float)
        summary["runs"].append({
            "h": h, "model": model.summary(), "capped": n_cap,
            "final_mean": dict(zip(model.species_names, final.mean(axis=0).tolist())),
            "final_se": dict(zip(model.species_names,
                                 (final.std(axis=0, ddof=1) / math.sqrt(len(res))).tolist()
                                 if len(res) > 1 else [None] * model.S)),
            "mean_events": float(np.mean([r.n_events for r in res])),
        })
    if capped:
        summary["cap_exceeded"] = True
    return ResultBundle("simulate", summary, tables, capped)


def mapk_settings(cfg: C.ExperimentConfig) -> X.MapkSettings:
    mk = cfg.section("mapk")
    params = C.numeric_parameters(cfg)
    missing = [k for k in ("k1", "k2", "k3", "k4", "k5", "k6", "k7", "sigma") if k not in params]
    if missing:
        raise C.ConfigError("[parameters] must give numeric values for " + ", ".join(missing))
    initial = mk.get("initial")
    if not isinstance(initial, dict) or not initial:
        raise C.ConfigError("[mapk] needs an initial table of copy numbers")
    channels = tuple(C.reactions(cfg)) or None
    try:
        return X.MapkSettings(params=params, initial={k: int(v) for k, v in initial.items()},
                              n=int(mk.get("n", 12)), h_factor=float(mk.get("h_factor", 1.05)),
                              horizon=C._num(mk, "horizon", "mapk"),
                              samples=int(mk.get("samples", 400)),
                              steady_fraction=float(mk.get("steady_fraction", 0.3)),
                              channels=channels)
    except (TypeError, ValueError) as exc:
        raise C.ConfigError(f"[mapk]: {exc}") from None


def _mapk(cfg, seed, threads) -> ResultBundle:
    s = mapk_settings(cfg)
    sw = cfg.sweep
    if sw is None or sw.axis != "D" or sw.relative:
        raise C.ConfigError("the mapk experiment needs a sweep over D")
    summary = {"kind": "mapk", "runs": []}
    tables = {}
    for j, D in enumerate(sw.values):
        out = {}
        for mode in ("hhp", "ck"):
            # both modes share seeds so the comparison is paired
            out[mode] = X.mapk_tau_res(s, D, mode, cfg.trajectories, seed, threads=threads)
        t = Table(["time", "MAPK_pp_hhp", "MAPK_pp_ck"])
        for i, tt in enumerate(out["hhp"]["times"]):
            t.add(float(tt), float(out["hhp"]["curve"][i]), float(out["ck"]["curve"][i]))
        tables[axis_label(D)] = t
        summary["runs"].append({
            "D": D, "h": out["hhp"]["h"], "gap": X.mapk_gap(out["hhp"], out["ck"]),
            **{mode: {k: out[mode][k] for k in ("tau_res", "steady_MAPK_pp", "channels")}
               for mode in out},
        })
    return ResultBundle("mapk", summary, tables)


_DRIVERS = {
    "rates-report": _rates_report,
    "sweep": _sweep,
    "rebind": _rebind,
    "binding-time": _binding_time,
    "equilibrium": _equilibrium,
    "simulate": _simulate,
    "mapk": _mapk,
}
