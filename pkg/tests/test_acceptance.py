"""Acceptance criteria, each at its stated tolerance.

Every test records one ``PASS``/``FAIL`` line; ``conftest.py`` prints them in
the terminal summary. Run alone with ``pytest tests/test_acceptance.py -v``
or ``python -m tests.test_acceptance``.
"""

import functools
import math
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from mesorates import config as C
from mesorates import rates
from mesorates.experiments import (
    ecdf_distance, mean_se, meso_bound_fraction, meso_rebinding_times, micro_config,
)
from mesorates.micro import equilibrium_bound_fraction, sample_binding_times
from mesorates.model import CompileError, LatticeSpec, ReactionChannel, SpeciesSpec, compile_model
from mesorates.nsm import StopCondition, first_passage_times, run_ensemble
from mesorates.model import SystemState
from mesorates.rates import PhysicalParams
from mesorates.runner import run
from tests.oracles import direct_ssa_first_firing, pair_absorption_mean

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
RESULTS: dict[int, str] = {}

SIGMA, D, KR = 2e-9, 2e-12, 1e-18
PAIR = PhysicalParams(k_r=KR, D=D, sigma=SIGMA)
H_INF = rates.h_star(PAIR).h_star_inf
N_SMALL = 21


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


# --------------------------------------------------------------- criterion 1

def test_criterion_1_critical_size_constants():
    h3 = rates.h_star(PhysicalParams(k_r=math.inf, D=D, sigma=1.0)).h_star_inf
    h2 = rates.h_star(PhysicalParams(k_r=math.inf, D=D, sigma=1.0, dim=2)).h_star_inf

    def sig4(x):
        return float(f"{x:.4g}")
    ok = sig4(h3) == sig4(3.1758) and sig4(h2) == sig4(5.0982)
    record(1, ok, f"h*_inf = {h3:.6f} sigma (3D), {h2:.6f} sigma (2D); "
                  f"expected 3.176 / 5.098 to 4 significant figures")


# --------------------------------------------------------------- criterion 2

def test_criterion_2_root_and_bound_identities():
    worst_g = worst_f = worst_kd = 0.0
    for dim in (2, 3):
        for sigma in np.geomspace(5e-10, 5e-8, 10):
            for kr_exp in np.linspace(-21, -15, 5):
                kr = 10**kr_exp if dim == 3 else 10 ** (kr_exp + 6)
                p = PhysicalParams(k_r=kr, D=D, sigma=sigma, dim=dim, k_d=7.0)
                h_inf = rates.h_star(p).h_star_inf
                scale = 1 / (4 * math.pi * sigma) if dim == 3 else 1.0
                worst_g = max(worst_g, abs(rates.g_geometric(h_inf, p)) / scale)
                F0 = rates.mesh_bound_F(p, 0.0).value
                worst_f = max(worst_f, abs(F0 - h_inf) / h_inf)
                for h in h_inf * np.array([1.0, 1.0 + 1e-9, 1.01, 1.5, 3.0, 30.0]):
                    worst_kd = max(worst_kd, (rates.kd_meso(h, p).value - p.k_d) / p.k_d)
    ok = worst_g <= 1e-10 and worst_f <= 1e-10 and worst_kd <= 1e-10
    record(2, ok, f"100 (dim, sigma, k_r) points: max |G(h*_inf)| = {worst_g:.1e}, "
                  f"max |F(0) - h*_inf|/h*_inf = {worst_f:.1e}, "
                  f"max (kd_meso - k_d)/k_d = {worst_kd:.1e} (tolerance 1e-10)")


# --------------------------------------------------------------- criterion 3

def test_criterion_3_large_voxel_limit():
    rng = np.random.default_rng(3)
    gaps = []
    for _ in range(20):
        sigma = 10 ** rng.uniform(-9.3, -8)
        d = 10 ** rng.uniform(-13, -11)
        a = 10 ** rng.uniform(-3, 3)          # k_r / (4 pi sigma D)
        p = PhysicalParams(k_r=a * 4 * math.pi * sigma * d, D=d, sigma=sigma)
        h = 100 * sigma
        ck = rates.collins_kimball(p)
        gaps.append((abs(h**3 * rates.rho_meso(h, p).value - ck) / ck, a))
    bad = [(g, a) for g, a in gaps if g >= 0.01]
    worst = max(gaps)
    record(3, not bad, f"{20 - len(bad)}/20 triples within 1%; worst gap {worst[0]:.2%} "
                       f"at k_r/(4 pi sigma D) = {worst[1]:.3g}")


# --------------------------------------------------------------- criterion 4

def test_criterion_4_nsm_exactness():
    rates_ = [3.0, 1.0]
    m = compile_model([SpeciesSpec("A")],
                      [ReactionChannel(f"c{i}", ("A",), (), k) for i, k in enumerate(rates_)],
                      LatticeSpec(1, 1, 1.0))
    t, _ = first_passage_times(m, lambda g: SystemState.empty(m).place(0, 0), "c0", 10_000,
                               seed=2024)
    ref = direct_ssa_first_firing(rates_, 0, 10_000, np.random.default_rng(7))
    p_ks = stats.ks_2samp(t[~np.isnan(t)], ref[~np.isnan(ref)]).pvalue

    jump, rho = 1.0, 2.0
    sp = [SpeciesSpec("A", jump), SpeciesSpec("B", jump), SpeciesSpec("C")]
    lm = compile_model(sp, [ReactionChannel("bind", ("A", "B"), ("C",), rho)],
                       LatticeSpec.from_h(3, 3, 1.0))
    exact = pair_absorption_mean(3, 3, jump, jump, rho)

    def init(g):
        return SystemState.empty(lm).place(0, int(g.integers(lm.K))).place(1, int(g.integers(lm.K)))
    res = run_ensemble(lm, init, StopCondition(channel="bind"), 10_000, seed=99)
    tt = np.array([r.stop_time for r in res])
    se = tt.std(ddof=1) / math.sqrt(tt.size)
    z = abs(tt.mean() - exact) / se
    record(4, p_ks > 0.01 and z < 3,
           f"KS p = {p_ks:.3f} (> 0.01); 3^3 lattice mean {tt.mean():.5f} vs oracle "
           f"{exact:.5f}, |diff| = {z:.2f} SE (< 3)")


# ------------------------------------------------------------ criteria 5, 7

@functools.lru_cache(maxsize=None)
def meso_rebind(factor: float):
    t, cens = meso_rebinding_times(PAIR, factor * H_INF, N_SMALL, 10_000, seed=5)
    return t, cens


def test_criterion_5_rebinding_mean_crossover():
    lines, ok = [], True
    for f, expect in ((1.0, "equal"), (2.0, "above"), (0.8, "below")):
        h = f * H_INF
        target = (N_SMALL * h) ** 3 / KR
        try:
            t, _ = meso_rebind(f)
        except CompileError as exc:
            ok = False
            lines.append(f"h = {f} h*_inf: no valid mesoscopic rate ({exc})")
            continue
        mu, se, cens = mean_se(t)
        z = (mu - target) / se
        good = {"equal": abs(z) < 3, "above": z > 3, "below": z < -3}[expect]
        ok &= good and cens == 0
        lines.append(f"h = {f} h*_inf: mean/(L^3/k_r) = {mu / target:.3f}, z = {z:+.1f} "
                     f"(want {expect})")
    # companion point just above h*(k_r), not part of the criterion
    f = 0.97
    t, _ = meso_rebinding_times(PAIR, f * H_INF, N_SMALL, 2_000, seed=6)
    mu, se, _ = mean_se(t)
    target = (N_SMALL * f * H_INF) ** 3 / KR
    lines.append(f"[info] h = 0.97 h*_inf: mean/(L^3/k_r) = {mu / target:.3f}, "
                 f"z = {(mu - target) / se:+.1f}")
    record(5, ok, "; ".join(lines))


def test_criterion_7_distribution_agreement():
    out, ok = [], True
    for f, want_below in ((1.0, True), (2.0, False)):
        h = f * H_INF
        L = N_SMALL * h
        meso, _ = meso_rebind(f)
        micro, _ = sample_binding_times(micro_config(PAIR, L, 1e-7), "contact", 10_000, seed=5,
                                        first=10**9)
        dist = ecdf_distance(meso, micro, h**2 / (2 * D))
        ok &= (dist < 0.05) == want_below
        out.append(f"h = {f} h*_inf: sup|F_meso - F_micro| over t >= h^2/2D = {dist:.4f} "
                   f"(want {'<' if want_below else '>'} 0.05)")
    record(7, ok, "; ".join(out))


# --------------------------------------------------------------- criterion 6

def test_criterion_6_micro_calibration():
    out, ok = [], True
    L = 5.145e-7
    for kr, n in ((1e-20, 10_000), (1e-16, 10_000)):
        p = PhysicalParams(k_r=kr, D=D, sigma=SIGMA)
        t, _ = sample_binding_times(micro_config(p, L, 1e-7), "uniform", n, seed=61)
        mu, se, cens = mean_se(t)
        ref = L**3 / rates.collins_kimball(p)
        dev = abs(mu / ref - 1)
        ok &= dev < 0.03 and cens == 0
        out.append(f"uniform k_r = {kr:g}: mean/(L^3/k_CK) = {mu / ref:.4f} +- {se / ref:.4f}")
    L = N_SMALL * H_INF
    t, _ = sample_binding_times(micro_config(PAIR, L, 1e-7), "contact", 200_000, seed=62)
    mu, se, cens = mean_se(t)
    ref = L**3 / KR
    ok &= abs(mu / ref - 1) < 0.05 and cens == 0
    out.append(f"contact: mean/(L^3/k_r) = {mu / ref:.4f} +- {se / ref:.4f}")
    record(6, ok, "; ".join(out) + " (tolerances 3%, 3%, 5%)")


# --------------------------------------------------------------- criterion 8

def test_criterion_8_equilibrium_matching():
    p = PhysicalParams(k_r=KR, D=D, sigma=SIGMA, k_d=1000.0)
    n = 9
    out, ok = [], True
    for f in (1.0, 2.0):
        h = f * H_INF
        frac, se = meso_bound_fraction(p, h, n, 1000, seed=81)
        pred = equilibrium_bound_fraction(p.k_r, p.k_d, n * h)
        rel = abs(frac / pred - 1)
        ok &= rel < 0.02
        out.append(f"h = {f} h*_inf: bound fraction {frac:.4f} +- {se:.4f} vs {pred:.4f} "
                   f"({rel:.2%})")
    record(8, ok, "; ".join(out) + " (tolerance 2%)")


# --------------------------------------------------------------- criterion 9

def test_criterion_9_mapk_trend():
    cfg = C.load(CONFIGS / "mapk.toml")
    bundle = run(cfg, seed=7)
    runs = sorted(bundle.summary["runs"], key=lambda r: r["D"])
    g_lo, g_hi = runs[0]["gap"], runs[-1]["gap"]
    detail = ", ".join(f"D = {r['D']:g}: gap {r['gap']:.3f}" for r in runs)
    record(9, g_hi < g_lo / 3, f"{detail}; want gap(largest D) < gap(smallest D)/3 "
                               f"(illustrative parameters)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
