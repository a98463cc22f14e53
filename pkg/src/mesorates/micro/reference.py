"""Table-free reference sampler for the binding time of a pair.

Inside a thin layer sigma <= |r| < 1.5 sigma the pair takes tiny free steps
of length ``dt_ref``. A step that would end inside the contact sphere reacts
with probability P = kappa sqrt(pi dt_ref / D), kappa = k_r / (4 pi sigma^2),
and otherwise the pair stays where it was. This reproduces the Robin flux
condition as dt_ref -> 0. Outside the layer steps are free and lengthened to
(|r| - sigma)^2 / (64 D). It is slow and exists to cross-check the tables.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from ..rng import stream
from .pair import MicroConfig, MicroError, _norm, _wrap, initial_separation


def contact_probability(k_r: float, D: float, sigma: float, dt_ref: float) -> float:
    kappa = k_r / (4.0 * math.pi * sigma**2)
    return kappa * math.sqrt(math.pi * dt_ref / D)


@njit(cache=True, nogil=True)
def _reference_bind(g, r, L, D, sigma, dt_ref, P, max_steps):
    t = 0.0
    layer = 1.5 * sigma
    s_ref = math.sqrt(2.0 * D * dt_ref)
    trial = np.empty(3)
    for _ in range(max_steps):
        d = _norm(r)
        if d < layer:
            for k in range(3):
                trial[k] = r[k] + s_ref * g.standard_normal()
            t += dt_ref
            if _norm(trial) < sigma:
                if g.random() < P:
                    return t, True
            else:
                for k in range(3):
                    r[k] = trial[k]
        else:
            h = (d - sigma) * (d - sigma) / (64.0 * D)
            if h < dt_ref:
                h = dt_ref
            s = math.sqrt(2.0 * D * h)
            for k in range(3):
                r[k] += s * g.standard_normal()
            _wrap(r, L)
            nd = _norm(r)
            if nd < sigma:
                f = (2.0 * sigma - nd) / nd
                for k in range(3):
                    r[k] *= f
            t += h
    return t, False


def reference_binding_times(config: MicroConfig, init: str, n: int, seed: int, dt_ref: float,
                            max_steps: int = 10**9) -> tuple[np.ndarray, np.ndarray]:
    """Binding times from the tiny-step scheme; returns (times, censored mask)."""
    P = contact_probability(config.k_r, config.D, config.sigma, dt_ref)
    if not 0 < P <= 0.2:
        raise MicroError(f"contact probability {P:.3g} outside (0, 0.2]; choose a smaller dt_ref")
    times = np.empty(n)
    cens = np.zeros(n, dtype=bool)
    for i in range(n):
        g = stream(seed, i)
        r = initial_separation(config, init, g)
        t, ok = _reference_bind(g, r, config.L, config.D, config.sigma, dt_ref, P, max_steps)
        times[i] = t if ok else math.nan
        cens[i] = not ok
    return times, cens
