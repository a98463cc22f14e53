"""Brownian dynamics of a single A-B pair in a periodic cube.

The relative coordinate diffuses with the pair diffusion constant D. Inside
the interaction shell (|r| <= shell * sigma) each step of length dt uses the
tabulated Robin propagator: the pair reacts with probability 1 - S(dt; |r|),
otherwise the new distance is drawn from the conditional radial law and the
direction is taken from a free Gaussian trial displacement. Outside the shell
the step is a free Gaussian step, wrapped by the minimum-image convention.
Far-field steps may be lengthened to (|r| - sigma)^2 / (64 D), which keeps
the chance of reaching contact unseen near erfc(4).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..rng import as_generator, stream
from .propagator import Z_MAX, PropagatorTable, get_table

BOUND = 0
CENSORED = 1
BAD_STATE = 2


class MicroError(ValueError):
    """Invalid microscopic configuration."""


@dataclass(frozen=True)
class MicroConfig:
    L: float
    dt: float
    k_r: float
    D: float
    sigma: float
    k_d: float = 0.0
    shell: float = 5.0

    def __post_init__(self):
        if not (self.D > 0 and self.sigma > 0 and self.dt > 0 and self.L > 0):
            raise MicroError("L, dt, D and sigma must be positive")
        if self.k_r < 0 or self.k_d < 0:
            raise MicroError("k_r and k_d must be >= 0")
        if self.shell <= 1:
            raise MicroError("shell multiplier must exceed 1")
        if not math.sqrt(2 * self.D * self.dt) < (self.shell - 1) * self.sigma / 3:
            raise MicroError(
                f"dt={self.dt:g} s is too long: need sqrt(2 D dt) < (shell - 1) sigma / 3")
        if not self.L > 2 * self.shell * self.sigma:
            raise MicroError(f"box side L={self.L:g} m must exceed 2 * shell * sigma")

    @property
    def r_shell(self) -> float:
        return self.shell * self.sigma

    def table(self, use_cache: bool = True) -> PropagatorTable:
        return get_table(self.D, self.sigma, self.k_r, self.dt, self.shell, use_cache)

    def as_dict(self) -> dict:
        return {"L": self.L, "dt": self.dt, "k_r": self.k_r, "k_d": self.k_d, "D": self.D,
                "sigma": self.sigma, "shell": self.shell}


@dataclass
class PairState:
    r: np.ndarray
    t: float = 0.0
    bound: bool = False

    def __post_init__(self):
        self.r = np.array(self.r, dtype=float).reshape(3)


@njit(cache=True, nogil=True)
def _lookup_quantile(x0, quant, x, z):
    n_rows, n_lev = quant.shape
    i = np.searchsorted(x0, x) - 1
    if i < 0:
        i = 0
    if i > n_rows - 2:
        i = n_rows - 2
    w = (x - x0[i]) / (x0[i + 1] - x0[i])
    if w < 0.0:
        w = 0.0
    elif w > 1.0:
        w = 1.0
    p = (z + Z_MAX) / (2.0 * Z_MAX) * (n_lev - 1)
    if p < 0.0:
        p = 0.0
    j = int(p)
    if j > n_lev - 2:
        j = n_lev - 2
    f = p - j
    qa = quant[i, j] * (1.0 - f) + quant[i, j + 1] * f
    qb = quant[i + 1, j] * (1.0 - f) + quant[i + 1, j + 1] * f
    return qa * (1.0 - w) + qb * w


@njit(cache=True, nogil=True)
def _interp(x0, y, x):
    return np.interp(x, x0, y)


@njit(cache=True, nogil=True)
def _wrap(r, L):
    for k in range(3):
        r[k] -= L * np.floor(r[k] / L + 0.5)


@njit(cache=True, nogil=True)
def _norm(r):
    return math.sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])


@njit(cache=True, nogil=True)
def _step(g, r, t, L, dt, r_shell, D, sigma, x0, surv, quant, adaptive):
    """Advance one step in place. Returns (new time, bound flag, status)."""
    d = _norm(r)
    if d < sigma * (1.0 - 1e-12):
        return t, False, BAD_STATE
    if d > r_shell:
        h = dt
        if adaptive:
            far = (d - sigma) * (d - sigma) / (64.0 * D)
            if far > h:
                h = far
        s = math.sqrt(2.0 * D * h)
        for k in range(3):
            r[k] += s * g.standard_normal()
        _wrap(r, L)
        nd = _norm(r)
        if nd < sigma:
            # a crossing this deep is an erfc(4) event; reflect radially
            f = (2.0 * sigma - nd) / nd
            for k in range(3):
                r[k] *= f
        return t + h, False, 0
    x = d - sigma
    if x < 0.0:
        x = 0.0
    S = _interp(x0, surv, x)
    if g.random() >= S:
        return t + (1.0 - g.random()) * dt, True, 0
    rn = _lookup_quantile(x0, quant, x, g.standard_normal())
    if rn < sigma:
        rn = sigma
    s = math.sqrt(2.0 * D * dt)
    tr = np.empty(3)
    for k in range(3):
        tr[k] = r[k] + s * g.standard_normal()
    tn = _norm(tr)
    for k in range(3):
        r[k] = rn * tr[k] / tn
    _wrap(r, L)
    return t + dt, False, 0


@njit(cache=True, nogil=True)
def _bind(g, r, t, L, dt, r_shell, D, sigma, x0, surv, quant, adaptive, max_steps, t_max):
    for _ in range(max_steps):
        t, bound, status = _step(g, r, t, L, dt, r_shell, D, sigma, x0, surv, quant, adaptive)
        if status != 0:
            return t, status
        if bound:
            return t, BOUND
        if t > t_max:
            return t, CENSORED
    return t, CENSORED


def pair_step(state: PairState, config: MicroConfig, rng, *, table: PropagatorTable | None = None,
              adaptive: bool = True) -> PairState:
    """One propagation step of an unbound pair."""
    from ..model import InternalConsistencyError
    if state.bound:
        raise ValueError("pair_step needs an unbound pair")
    tab = table or config.table()
    r = state.r.copy()
    t, bound, status = _step(as_generator(rng), r, state.t, config.L, config.dt, config.r_shell,
                             config.D, config.sigma, tab.x0, tab.surv, tab.quant, adaptive)
    if status == BAD_STATE:
        raise InternalConsistencyError(f"pair separation {np.linalg.norm(state.r):.6g} m "
                                       f"is below sigma={config.sigma:.6g} m")
    return PairState(r, t, bound)


def _random_direction(g) -> np.ndarray:
    v = g.standard_normal(3)
    return v / np.linalg.norm(v)


def initial_separation(config: MicroConfig, init: str, g) -> np.ndarray:
    if init == "contact":
        return config.sigma * _random_direction(g)
    if init == "uniform":
        while True:
            r = (g.random(3) - 0.5) * config.L
            if np.linalg.norm(r) >= config.sigma:
                return r
    raise MicroError(f"init must be 'uniform' or 'contact', got {init!r}")


@dataclass(frozen=True)
class BindingSample:
    time: float
    censored: bool


def sample_binding_time(config: MicroConfig, init: str, rng, *, table: PropagatorTable | None = None,
                        max_steps: int = 10**8, t_max: float = math.inf,
                        adaptive: bool = True) -> BindingSample:
    """First binding time of one pair; censored when a cap is hit first."""
    from ..model import InternalConsistencyError
    g = as_generator(rng)
    r = initial_separation(config, init, g)
    if config.k_r == 0:
        # a reflecting contact never binds
        return BindingSample(math.inf, True)
    tab = table or config.table()
    t, status = _bind(g, r, 0.0, config.L, config.dt, config.r_shell, config.D, config.sigma,
                      tab.x0, tab.surv, tab.quant, adaptive, int(max_steps), float(t_max))
    if status == BAD_STATE:
        raise InternalConsistencyError("pair separation fell below sigma")
    return BindingSample(t if status == BOUND else math.inf, status == CENSORED)


def sample_binding_times(config: MicroConfig, init: str, n: int, seed: int, *,
                         table: PropagatorTable | None = None, max_steps: int = 10**8,
                         t_max: float = math.inf, first: int = 0,
                         adaptive: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """``n`` independent samples; sample ``i`` uses stream ``(seed, first + i)``.

    Returns (times, censored mask); censored entries are nan.
    """
    tab = table or (config.table() if config.k_r > 0 else None)
    times = np.empty(n)
    cens = np.zeros(n, dtype=bool)
    for i in range(n):
        s = sample_binding_time(config, init, stream(seed, first + i), table=tab,
                                max_steps=max_steps, t_max=t_max, adaptive=adaptive)
        times[i] = math.nan if s.censored else s.time
        cens[i] = s.censored
    return times, cens


def log_histogram(times: np.ndarray, bins_per_decade: int = 8):
    """Counts over log-spaced bins covering the finite samples."""
    t = times[np.isfinite(times) & (times > 0)]
    if t.size == 0:
        return np.array([]), np.array([], dtype=np.int64)
    lo = math.floor(math.log10(t.min()) * bins_per_decade) / bins_per_decade
    hi = math.ceil(math.log10(t.max()) * bins_per_decade) / bins_per_decade
    n_bins = max(1, round((hi - lo) * bins_per_decade))
    edges = np.logspace(lo, lo + n_bins / bins_per_decade, n_bins + 1)
    counts, _ = np.histogram(t, bins=edges)
    return edges, counts


@dataclass
class RebindingDistribution:
    times: np.ndarray          # sorted finite times
    ecdf: np.ndarray           # ecdf[i] = (i + 1) / n_total
    n_total: int
    n_censored: int
    hist_edges: np.ndarray = field(default_factory=lambda: np.array([]))
    hist_counts: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))

    @classmethod
    def from_samples(cls, times, censored=None) -> "RebindingDistribution":
        times = np.asarray(times, dtype=float)
        if censored is None:
            censored = ~np.isfinite(times)
        fin = np.sort(times[~np.asarray(censored)])
        n = times.shape[0]
        edges, counts = log_histogram(fin)
        return cls(fin, np.arange(1, fin.size + 1) / n, n, int(n - fin.size), edges, counts)

    def cdf(self, t) -> np.ndarray:
        """Empirical CDF over all samples (censored ones never complete)."""
        return np.searchsorted(self.times, t, side="right") / self.n_total

    @property
    def mean(self) -> float:
        return float(self.times.mean()) if self.times.size else math.nan

    @property
    def stderr(self) -> float:
        n = self.times.size
        return float(self.times.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan


def sample_rebinding_distribution(config: MicroConfig, n: int, seed: int, **kw) -> RebindingDistribution:
    """Contact-initialised binding times of ``n`` freshly dissociated pairs."""
    if n < 1:
        raise MicroError("n must be >= 1")
    times, cens = sample_binding_times(config, "contact", n, seed, **kw)
    return RebindingDistribution.from_samples(times, cens)


def bound_fraction(config: MicroConfig, n_cycles: int, seed: int, **kw) -> tuple[float, float]:
    """Long-run bound fraction of a reversible pair and its standard error.

    Each cycle is a bound period ~ Exp(k_d) followed by rebinding from contact.
    The fraction is the renewal-reward ratio of summed bound time to summed
    cycle time; the error uses the delta method.
    """
    if not config.k_d > 0:
        raise MicroError("bound_fraction needs k_d > 0")
    g = stream(seed, 2**32)
    bound = g.exponential(1.0 / config.k_d, n_cycles)
    free, cens = sample_binding_times(config, "contact", n_cycles, seed, **kw)
    if cens.any():
        raise MicroError(f"{int(cens.sum())} rebinding samples were censored")
    cyc = bound + free
    f = bound.sum() / cyc.sum()
    resid = bound - f * cyc
    se = math.sqrt(resid.var(ddof=1) / n_cycles) / cyc.mean()
    return float(f), float(se)


def equilibrium_bound_fraction(k_r: float, k_d: float, L: float, dim: int = 3) -> float:
    """(1/k_d) / (1/k_d + L^d/k_r)."""
    return (1.0 / k_d) / (1.0 / k_d + L**dim / k_r)


def write_samples_csv(path, times: np.ndarray, config: MicroConfig) -> None:
    """One ``time_s`` column; the first line is a ``#`` comment with the config."""
    meta = " ".join(f"{k}={v!r}" for k, v in config.as_dict().items())
    with open(path, "w", newline="") as fh:
        fh.write(f"# {meta}\n")
        w = csv.writer(fh)
        w.writerow(["time_s"])
        for t in times:
            w.writerow([repr(float(t))])
