import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mesorates import rates
from mesorates.micro import (
    MicroConfig, MicroError, PairState, PropagatorTable, RebindingDistribution, bound_fraction,
    build_table, equilibrium_bound_fraction, get_table, pair_step, radial_density,
    sample_binding_time, sample_binding_times, sample_rebinding_distribution, survival,
    write_samples_csv,
)
from mesorates.micro.reference import reference_binding_times
from mesorates.model import InternalConsistencyError
from tests.oracles import periodic_trapping_mean, radial_fv_survival

SIGMA, D = 2e-9, 2e-12
H_INF = rates.h_star(rates.PhysicalParams(k_r=math.inf, D=D, sigma=SIGMA)).h_star_inf


def kck(kr):
    return rates.collins_kimball(rates.PhysicalParams(k_r=kr, D=D, sigma=SIGMA))


@pytest.mark.parametrize("kr", [0.0, 1e-20, 1e-18, 1e-16])
@pytest.mark.parametrize("x0_over_s", [0.05, 1.0, 4.0])
def test_closed_form_survival_matches_finite_volume(kr, x0_over_s):
    dt = 1e-8
    s = math.sqrt(2 * D * dt)
    fv, r0 = radial_fv_survival(dt, SIGMA + x0_over_s * s, D, SIGMA, kr)
    exact = float(survival(dt, r0, D, SIGMA, kr))
    assert fv == pytest.approx(exact, abs=2e-3)


def test_survival_limits():
    assert survival(1e-8, SIGMA, D, SIGMA, math.inf) == 0.0
    assert survival(1e-8, 3 * SIGMA, D, SIGMA, 0.0) == 1.0
    t = np.logspace(-10, -4, 30)
    S = survival(t, 1.5 * SIGMA, D, SIGMA, 1e-18)
    assert np.all(np.diff(S) <= 1e-15) and np.all((S >= 0) & (S <= 1))
    # long-time escape probability 1 - (sigma / r0) k_r / (k_r + k_D)
    kD = 4 * math.pi * SIGMA * D
    r0 = 2 * SIGMA
    assert survival(1e6, r0, D, SIGMA, 1e-18) == pytest.approx(
        1 - SIGMA / r0 * 1e-18 / (1e-18 + kD), rel=1e-6)


@pytest.mark.parametrize("kr", [1e-20, 1e-18, math.inf])
def test_density_integrates_to_survival(kr):
    dt = 1e-8
    s = math.sqrt(2 * D * dt)
    for r0 in (SIGMA, SIGMA + 0.3 * s, SIGMA + 3 * s):
        r = np.linspace(SIGMA, r0 + 12 * s, 200_001)
        q = radial_density(r, dt, r0, D, SIGMA, kr)
        assert np.trapezoid(q, r) == pytest.approx(float(survival(dt, r0, D, SIGMA, kr)), abs=1e-6)


def test_table_rows_are_monotone_quantiles():
    tab = build_table(D, SIGMA, 1e-18, 1e-8)
    assert np.all(np.diff(tab.quant, axis=1) >= 0)
    assert np.all(tab.quant >= SIGMA)
    assert np.all((tab.surv >= 0) & (tab.surv <= 1))
    assert np.all(np.diff(tab.surv) >= -1e-15)


def test_table_step_moments():
    dt = 1e-8
    s = math.sqrt(2 * D * dt)
    tab = build_table(D, SIGMA, 0.0, dt)
    z = np.random.default_rng(0).standard_normal(200_000)
    for r0 in (3 * SIGMA, 4.37 * SIGMA):
        rn = np.array([tab.sample_radius(r0, v) for v in z])
        # free radial diffusion: E r^2 = r0^2 + 6 D dt when the wall is far
        assert np.mean(rn**2) == pytest.approx(r0**2 + 6 * D * dt, rel=2e-3 * s / SIGMA + 1e-4)


def test_cache_roundtrip(tmp_path, monkeypatch):
    monkeypatch.setenv("MESORATES_CACHE", str(tmp_path))
    a = get_table(D, SIGMA, 1e-18, 1e-8)
    files = list(tmp_path.iterdir())
    assert len(files) == 1 and files[0].read_bytes()[:4] == b"MRPT"
    b = get_table(D, SIGMA, 1e-18, 1e-8)
    assert np.array_equal(a.quant, b.quant) and b.dt == 1e-8
    with pytest.raises(ValueError):
        PropagatorTable.from_bytes(b"XXXX" + files[0].read_bytes()[4:])


def test_config_invariants():
    with pytest.raises(MicroError):
        MicroConfig(L=1e-7, dt=1e-5, k_r=1e-18, D=D, sigma=SIGMA)
    with pytest.raises(MicroError):
        MicroConfig(L=9 * SIGMA, dt=1e-8, k_r=1e-18, D=D, sigma=SIGMA)


def test_far_field_step_variance():
    dt = 1e-8
    cfg = MicroConfig(L=1e-6, dt=dt, k_r=1e-18, D=D, sigma=SIGMA)
    tab = cfg.table()
    g = np.random.default_rng(4)
    start = np.array([2e-7, 0.0, 0.0])
    n = 1_000_000
    disp = np.empty((n, 3))
    st_ = PairState(start)
    for i in range(n):
        disp[i] = pair_step(st_, cfg, g, table=tab, adaptive=False).r - start
    assert np.allclose(disp.var(axis=0) / (2 * D * dt), 1.0, atol=0.01)


def test_state_inside_contact_is_internal_error():
    cfg = MicroConfig(L=1e-7, dt=1e-8, k_r=1e-18, D=D, sigma=SIGMA)
    with pytest.raises(InternalConsistencyError):
        pair_step(PairState([0.5 * SIGMA, 0, 0]), cfg, 0)


def test_absorbing_contact_binds_immediately():
    cfg = MicroConfig(L=1e-7, dt=1e-8, k_r=math.inf, D=D, sigma=SIGMA)
    st_ = pair_step(PairState([SIGMA, 0, 0]), cfg, 1)
    assert st_.bound and 0 < st_.t <= 1e-8


def test_reflecting_contact_never_binds():
    cfg = MicroConfig(L=30 * SIGMA, dt=1e-8, k_r=0.0, D=D, sigma=SIGMA)
    tab = cfg.table()
    assert np.all(tab.surv == 1.0)
    g = np.random.default_rng(2)
    st_ = PairState([SIGMA, 0, 0])
    radii = []
    for _ in range(20000):
        st_ = pair_step(st_, cfg, g, table=tab)
        assert not st_.bound
        radii.append(np.linalg.norm(st_.r))
    assert min(radii) >= SIGMA
    assert sample_binding_time(cfg, "contact", 0).censored


def test_reflecting_pair_fills_the_box_uniformly():
    # long-run |r| distribution of a uniformly distributed point in the cube
    L = 12 * SIGMA
    cfg = MicroConfig(L=L, dt=1e-7, k_r=0.0, D=D, sigma=SIGMA)
    tab = cfg.table()
    g = np.random.default_rng(9)
    st_ = PairState([3 * SIGMA, 0, 0])
    inner = 0
    n = 200_000
    for _ in range(n):
        st_ = pair_step(st_, cfg, g, table=tab, adaptive=False)
        inner += np.linalg.norm(st_.r) < 4 * SIGMA
    vol = 4 / 3 * math.pi * ((4 * SIGMA) ** 3 - SIGMA**3) / (L**3 - 4 / 3 * math.pi * SIGMA**3)
    assert inner / n == pytest.approx(vol, abs=0.02)


def test_contact_init_mean_matches_renewal_value():
    # every contact rebinding is a return of a stationary process: mean V / k_r
    L, kr = 21 * H_INF, 1e-18
    cfg = MicroConfig(L=L, dt=1e-7, k_r=kr, D=D, sigma=SIGMA)
    t, cens = sample_binding_times(cfg, "contact", 40_000, seed=17)
    assert not cens.any()
    se = t.std(ddof=1) / math.sqrt(t.size)
    target = L**3 / kr
    assert abs(t.mean() - target) < max(0.05 * target, 3 * se)


def test_uniform_init_mean_matches_periodic_asymptotics():
    L, kr = 21 * H_INF, 1e-18
    cfg = MicroConfig(L=L, dt=1e-7, k_r=kr, D=D, sigma=SIGMA)
    t, _ = sample_binding_times(cfg, "uniform", 10_000, seed=5)
    se = t.std(ddof=1) / math.sqrt(t.size)
    assert abs(t.mean() - periodic_trapping_mean(L, kck(kr), D)) < 3 * se


def test_table_free_reference_agrees():
    L, kr = 30 * SIGMA, 1e-18
    cfg = MicroConfig(L=L, dt=1e-8, k_r=kr, D=D, sigma=SIGMA)
    a, _ = sample_binding_times(cfg, "uniform", 8000, seed=21)
    b, _ = reference_binding_times(cfg, "uniform", 8000, seed=22, dt_ref=1e-11)
    assert abs(a.mean() - b.mean()) / b.mean() < 0.03


@pytest.mark.slow
def test_step_size_convergence():
    # reaction-limited pair in a small box: rebinding times are close to
    # exponential, so 4e4 samples resolve the mean to about 0.5%
    L, kr = 10.5 * SIGMA, 1e-20
    means, ses = [], []
    for dt in (2e-7, 1e-7):
        cfg = MicroConfig(L=L, dt=dt, k_r=kr, D=D, sigma=SIGMA)
        t, _ = sample_binding_times(cfg, "contact", 40_000, seed=31)
        means.append(t.mean())
        ses.append(t.std(ddof=1) / math.sqrt(t.size))
    diff = abs(means[0] - means[1]) / means[1]
    # deterministic part: uniform placement within a step moves the mean by < dt / 2
    assert 1e-7 / means[1] < 0.01
    assert diff < 0.01 + 3 * math.hypot(*ses) / means[1]


def test_rebinding_distribution_shape():
    cfg = MicroConfig(L=21 * H_INF, dt=1e-9, k_r=1e-18, D=D, sigma=SIGMA)
    dist = sample_rebinding_distribution(cfg, 2000, seed=3, t_max=1e-3)
    assert np.all(np.diff(dist.ecdf) > 0)
    assert dist.ecdf[-1] == pytest.approx(1 - dist.n_censored / dist.n_total)
    assert dist.n_censored > 0
    tau = SIGMA**2 / D
    assert dist.cdf(tau) > dist.cdf(tau / 10)
    assert dist.hist_counts.sum() == dist.times.size
    assert np.allclose(np.diff(np.log10(dist.hist_edges)), 1 / 8)


def test_rebinding_from_samples_handles_empty():
    d = RebindingDistribution.from_samples(np.array([np.nan, np.nan]))
    assert d.n_censored == 2 and d.times.size == 0 and math.isnan(d.mean)


def test_micro_detailed_balance():
    L, kr = 21 * H_INF, 1e-18
    kd = kr / L**3
    cfg = MicroConfig(L=L, dt=1e-7, k_r=kr, D=D, sigma=SIGMA, k_d=kd)
    f, se = bound_fraction(cfg, 40_000, seed=8)
    pred = equilibrium_bound_fraction(kr, kd, L)
    assert abs(f - pred) < max(0.02 * pred, 3 * se)


def test_sampling_is_deterministic(tmp_path):
    cfg = MicroConfig(L=21 * H_INF, dt=1e-7, k_r=1e-18, D=D, sigma=SIGMA)
    a, _ = sample_binding_times(cfg, "contact", 50, seed=77)
    b, _ = sample_binding_times(cfg, "contact", 50, seed=77)
    assert np.array_equal(a, b)
    p = tmp_path / "s.csv"
    write_samples_csv(p, a, cfg)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("# L=") and lines[1] == "time_s" and len(lines) == 52


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 6.0), st.sampled_from([0.0, 1e-20, 1e-18, math.inf]))
def test_survival_is_a_probability(x, kr):
    S = float(survival(1e-8, SIGMA * (1 + x), D, SIGMA, kr))
    assert 0.0 <= S <= 1.0
