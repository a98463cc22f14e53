"""Tabulated radial propagator for a 3D pair with a partially absorbing contact.

For a pair at separation r0 >= sigma, the inter-particle distance after a
time step t obeys the radial diffusion equation with the Robin condition
4 pi sigma^2 D dp/dr = k_r p at r = sigma. Writing u = r p turns it into 1D
diffusion on the half line x = r - sigma >= 0 with u'(0) = hR u(0),
hR = (1 + k_r / k_D) / sigma and k_D = 4 pi sigma D, whose Green's function
is known in closed form. The radial density of r is

    q(r) = (r / r0) [ g(r - r0) + g(r + r0 - 2 sigma)
                      - hR exp(-a^2) erfcx(a + hR sqrt(D t)) ]

with g the free Gaussian kernel of variance 2 D t and
a = (r + r0 - 2 sigma) / sqrt(4 D t). Survival is closed form as well.

The table holds S(dt; r0) and the quantile function of r given survival on
a grid of x0 = r0 - sigma, refined geometrically towards contact. Quantiles
are stored against a standard normal score z rather than u, so a sample is
one normal draw and the nearly Gaussian rows interpolate almost linearly.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import erfc, erfcx, ndtr

FORMAT_VERSION = 2
_MAGIC = b"MRPT"
_HEADER = struct.Struct("<4sI5d3I")

#: quantile levels are u = Phi(z) for z on a uniform grid over [-Z_MAX, Z_MAX]
Z_MAX = 6.0


def robin_h(D: float, sigma: float, k_r: float) -> float:
    if math.isinf(k_r):
        return math.inf
    return (1.0 + k_r / (4.0 * math.pi * sigma * D)) / sigma


def survival(t, r0, D: float, sigma: float, k_r: float):
    """Probability that a pair started at r0 has not reacted by time t."""
    t = np.asarray(t, dtype=float)
    r0 = np.asarray(r0, dtype=float)
    if k_r == 0:
        return np.ones(np.broadcast(t, r0).shape)
    s4 = np.sqrt(4.0 * D * t)
    a0 = (r0 - sigma) / s4
    if math.isinf(k_r):
        return 1.0 - (sigma / r0) * erfc(a0)
    kD = 4.0 * math.pi * sigma * D
    alpha = (1.0 + k_r / kD) * math.sqrt(D) / sigma
    w = np.exp(-a0 * a0) * erfcx(a0 + alpha * np.sqrt(t))
    return 1.0 - (sigma / r0) * (k_r / (k_r + kD)) * (erfc(a0) - w)


def radial_density(r, t: float, r0, D: float, sigma: float, k_r: float):
    """Density of the separation r at time t (integrates to the survival)."""
    r = np.asarray(r, dtype=float)
    r0 = np.asarray(r0, dtype=float)
    four_dt = 4.0 * D * t
    norm = 1.0 / math.sqrt(math.pi * four_dt)
    a = (r + r0 - 2.0 * sigma) / math.sqrt(four_dt)
    free = norm * np.exp(-(r - r0) ** 2 / four_dt)
    image = np.exp(-a * a)
    if math.isinf(k_r):
        g = free - norm * image
    else:
        hR = robin_h(D, sigma, k_r)
        g = free + norm * image - hR * image * erfcx(a + hR * math.sqrt(D * t))
    return np.where(r >= sigma, (r / r0) * np.maximum(g, 0.0), 0.0)


@dataclass(frozen=True)
class PropagatorTable:
    D: float
    sigma: float
    k_r: float
    dt: float
    shell: float
    x0: np.ndarray         # r0 - sigma, increasing, x0[0] == 0
    surv: np.ndarray       # S(dt; r0) per row
    quant: np.ndarray      # rows x levels, r quantile at u = Phi(z_j)

    @property
    def r_shell(self) -> float:
        return self.shell * self.sigma

    def sample_radius(self, r0: float, z: float) -> float:
        """Separation after a surviving step from r0, given a normal score z."""
        from .pair import _lookup_quantile
        return _lookup_quantile(self.x0, self.quant, r0 - self.sigma, z)

    def survival_at(self, r0: float) -> float:
        return float(np.interp(r0 - self.sigma, self.x0, self.surv))

    # cache file layout: header, then x0, surv, quant as little-endian float64
    def to_bytes(self) -> bytes:
        n_rows, n_levels = self.quant.shape
        head = _HEADER.pack(_MAGIC, FORMAT_VERSION, self.D, self.sigma,
                            self.k_r, self.dt, self.shell, n_rows, n_levels, 0)
        body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                        for a in (self.x0, self.surv, self.quant))
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "PropagatorTable":
        magic, version, D, sigma, k_r, dt, shell, n_rows, n_levels, _ = \
            _HEADER.unpack_from(data)
        if magic != _MAGIC or version != FORMAT_VERSION:
            raise ValueError("not a propagator table of the supported format version")
        off = _HEADER.size
        arrs = []
        for size in (n_rows, n_rows, n_rows * n_levels):
            arrs.append(np.frombuffer(data, dtype="<f8", count=size, offset=off).copy())
            off += 8 * size
        return cls(D, sigma, k_r, dt, shell, arrs[0], arrs[1], arrs[2].reshape(n_rows, n_levels))


def _x0_grid(sigma: float, shell: float, s: float, n_rows: int) -> np.ndarray:
    top = (shell - 1.0) * sigma
    lo = min(1e-3 * s, top / 10)
    return np.concatenate([[0.0], np.geomspace(lo, top, n_rows - 1)])


def build_table(D: float, sigma: float, k_r: float, dt: float, shell: float = 5.0,
                n_rows: int = 240, n_levels: int = 1025, n_r: int = 4001) -> PropagatorTable:
    s = math.sqrt(2.0 * D * dt)
    x0 = _x0_grid(sigma, shell, s, n_rows)
    r0s = sigma + x0
    surv = np.clip(survival(dt, r0s, D, sigma, k_r), 0.0, 1.0)
    levels = ndtr(np.linspace(-Z_MAX, Z_MAX, n_levels))
    quant = np.empty((n_rows, n_levels))
    width = 9.0 * s
    for i, r0 in enumerate(r0s):
        lo = max(sigma, r0 - width)
        r = np.linspace(lo, r0 + width, n_r)
        q = radial_density(r, dt, r0, D, sigma, k_r)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (q[1:] + q[:-1]) * np.diff(r))])
        if cdf[-1] <= 0.0:
            # absorbed with certainty; the row is never consulted
            quant[i] = r0
            continue
        cdf /= cdf[-1]
        # f(r) dr below float resolution at the ends is dropped
        # strictly increasing abscissa for the inverse interpolation
        keep = np.concatenate([[True], np.diff(cdf) > 0])
        quant[i] = np.interp(levels, cdf[keep], r[keep])
    quant[:, 0] = np.maximum(quant[:, 0], sigma)
    return PropagatorTable(D, sigma, k_r, dt, shell, x0, surv, quant)


def _cache_dir() -> Path:
    return Path(os.environ.get("MESORATES_CACHE", Path.home() / ".cache" / "mesorates"))


def cache_key(D: float, sigma: float, k_r: float, dt: float, shell: float) -> str:
    raw = struct.pack("<I5d", FORMAT_VERSION, D, sigma, k_r, dt, shell)
    return hashlib.sha256(raw).hexdigest()[:24]


def get_table(D: float, sigma: float, k_r: float, dt: float, shell: float = 5.0,
              use_cache: bool = True) -> PropagatorTable:
    """Build or load the table for this parameter tuple."""
    if not use_cache:
        return build_table(D, sigma, k_r, dt, shell)
    path = _cache_dir() / f"propagator-{cache_key(D, sigma, k_r, dt, shell)}.bin"
    try:
        return PropagatorTable.from_bytes(path.read_bytes())
    except (OSError, ValueError, struct.error):
        pass
    table = build_table(D, sigma, k_r, dt, shell)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(table.to_bytes())
        os.replace(tmp, path)
    except OSError:
        pass
    return table
