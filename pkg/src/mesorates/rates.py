"""Closed-form rate calculators for mesoscopic bimolecular kinetics.

Every function here is a pure function of its arguments. Values are in SI
units. Calculators that can raise modelling warnings return a
:class:`RateResult` carrying the value together with advisory flags; only
genuinely undefined quantities raise.

The infinite intrinsic association rate (perfect absorption at contact) is
represented by :data:`INFINITE`; every formula has an explicit branch for
it instead of relying on float overflow.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

#: Geometric constants of the Cartesian-lattice mean binding time, d=2 and d=3.
C2 = 0.1951
C3 = 1.5164

#: Sentinel for k_r -> infinity (diffusion-limited, perfectly absorbing contact).
INFINITE = math.inf

# advisory flag names
H_BELOW_10_SIGMA = "h_below_10_sigma"
H_BELOW_H_STAR_INF = "h_below_h_star_inf"
EPS_AT_OR_ABOVE_EPS_MAX = "eps_at_or_above_eps_max"
UNBOUNDED = "unbounded"
L_BELOW_10_SIGMA = "L_below_10_sigma"
DERIVED_LIMIT = "implementation_derived_limit"


class RatesError(ValueError):
    """Base class for invalid rate requests."""


class UnsupportedDimensionError(RatesError):
    pass


class NoValidRateError(RatesError):
    """Raised when h <= h*_{k_r}, where the mesoscopic rate would be non-positive."""

    def __init__(self, h: float, h_star_kr: float):
        self.h = h
        self.h_star_kr = h_star_kr
        super().__init__(
            f"no valid mesoscopic rate for h={h:.6g} m: h must exceed the critical "
            f"size h*_kr={h_star_kr:.6g} m"
        )


class UndefinedRatioError(RatesError):
    pass


def is_infinite(k: float) -> bool:
    return math.isinf(k)


@dataclass(frozen=True)
class PhysicalParams:
    """Intrinsic microscopic parameters of one reacting pair.

    ``D`` is the relative diffusion constant (sum of the two species'
    constants) and ``sigma`` the reaction radius (sum of the radii).
    """

    k_r: float
    D: float
    sigma: float
    dim: int = 3
    k_d: float = 0.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise UnsupportedDimensionError(f"dim must be 2 or 3, got {self.dim}")
        if not self.D > 0:
            raise RatesError(f"D must be positive, got {self.D}")
        if not self.sigma > 0:
            raise RatesError(f"sigma must be positive, got {self.sigma}")
        if not self.k_r >= 0:
            raise RatesError(f"k_r must be >= 0, got {self.k_r}")
        if not (self.k_d >= 0 and math.isfinite(self.k_d)):
            raise RatesError(f"k_d must be finite and >= 0, got {self.k_d}")

    @property
    def diffusion_limited_rate(self) -> float:
        """Smoluchowski rate 4*pi*sigma*D (3D)."""
        return 4.0 * math.pi * self.sigma * self.D


@dataclass(frozen=True)
class MeshContext:
    """Voxel width ``h`` and domain side ``L``; ``N`` is the voxel count."""

    h: float
    L: float
    dim: int = 3
    N: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not self.h > 0 or not self.L > 0:
            raise RatesError("h and L must be positive")
        if self.N is None:
            object.__setattr__(self, "N", (self.L / self.h) ** self.dim)

    @classmethod
    def from_lattice(cls, n: int, L: float, dim: int = 3) -> "MeshContext":
        if n < 1:
            raise RatesError("n must be a positive integer")
        return cls(h=L / n, L=L, dim=dim, N=float(n**dim))


@dataclass(frozen=True)
class Disk2DQuantities:
    lam: float
    alpha: float
    F: float

    @classmethod
    def compute(cls, p: PhysicalParams, L: float) -> "Disk2DQuantities":
        lam = math.sqrt(math.pi) * p.sigma / L
        if not 0 < lam < 1:
            raise RatesError(f"disk quantities need 0 < lambda < 1, got {lam}")
        alpha = p.k_r / (2.0 * math.pi * p.D) if not is_infinite(p.k_r) else INFINITE
        return cls(lam=lam, alpha=alpha, F=disk_F(lam))


def disk_F(lam: float) -> float:
    l2 = lam * lam
    return math.log(1.0 / lam) / (1.0 - l2) ** 2 - (3.0 - l2) / (4.0 * (1.0 - l2))


@dataclass(frozen=True)
class RateResult:
    """A computed value plus the advisory flags raised while computing it."""

    value: float
    flags: frozenset = frozenset()

    def __float__(self) -> float:
        return float(self.value)


class CriticalSizes(NamedTuple):
    h_star_kr: float
    h_star_inf: float


def _mesh_flags(h: float, p: PhysicalParams) -> set[str]:
    flags = set()
    if h < 10.0 * p.sigma:
        flags.add(H_BELOW_10_SIGMA)
    if h < h_star(p).h_star_inf:
        flags.add(H_BELOW_H_STAR_INF)
    return flags


def _need_3d(p: PhysicalParams, what: str) -> None:
    if p.dim != 3:
        raise UnsupportedDimensionError(f"{what} is only defined in 3D")


def collins_kimball(p: PhysicalParams) -> float:
    """Collins-Kimball effective association rate (m^3/s)."""
    _need_3d(p, "the Collins-Kimball rate")
    kD = p.diffusion_limited_rate
    if is_infinite(p.k_r):
        return kD
    return kD * p.k_r / (kD + p.k_r)


def g_geometric(h: float, p: PhysicalParams) -> float:
    """The lattice geometry term G^(d)(h, sigma); its root in h is h*_inf."""
    if not h > 0:
        raise RatesError(f"h must be positive, got {h}")
    if p.dim == 2:
        return (math.log(h / (math.sqrt(math.pi) * p.sigma)) / (2.0 * math.pi)
                - 0.25 * (3.0 / (2.0 * math.pi) + C2))
    return 1.0 / (4.0 * math.pi * p.sigma) - C3 / (6.0 * h)


def h_star(p: PhysicalParams) -> CriticalSizes:
    """Smallest voxel widths with a valid rate (k_r) and with k_d^meso <= k_d (inf)."""
    s = p.sigma
    if p.dim == 2:
        base = (3.0 + 2.0 * C2 * math.pi) / 4.0
        h_inf = math.sqrt(math.pi) * math.exp(base) * s
        if is_infinite(p.k_r):
            h_kr = h_inf
        elif p.k_r == 0:
            h_kr = 0.0
        else:
            h_kr = math.sqrt(math.pi) * math.exp(base - 2.0 * math.pi * p.D / p.k_r) * s
    else:
        h_inf = (C3 / 6.0) / (1.0 / (4.0 * math.pi * s))
        if is_infinite(p.k_r):
            h_kr = h_inf
        elif p.k_r == 0:
            h_kr = 0.0
        else:
            h_kr = (C3 / 6.0) / (p.D / p.k_r + 1.0 / (4.0 * math.pi * s))
    return CriticalSizes(h_kr, h_inf)


def rho_meso(h: float, p: PhysicalParams) -> RateResult:
    """Mesoscopic association propensity constant k_r^meso (1/s) at voxel width h."""
    G = g_geometric(h, p)
    hd = h**p.dim
    flags = _mesh_flags(h, p)
    if is_infinite(p.k_r):
        if not G > 0:
            raise NoValidRateError(h, h_star(p).h_star_kr)
        return RateResult(p.D / (hd * G), frozenset(flags))
    if p.k_r == 0:
        return RateResult(0.0, frozenset(flags))
    denom = 1.0 + (p.k_r / p.D) * G
    if not denom > 0:
        raise NoValidRateError(h, h_star(p).h_star_kr)
    return RateResult(p.k_r / hd / denom, frozenset(flags))


def kd_meso(h: float, p: PhysicalParams) -> RateResult:
    """Mesoscopic dissociation rate h^d * k_d * k_r^meso / k_r (1/s)."""
    if p.k_r == 0:
        if p.k_d > 0:
            raise UndefinedRatioError("k_d^meso is undefined for k_r = 0 with k_d > 0")
        return RateResult(0.0, frozenset(_mesh_flags(h, p)))
    rho = rho_meso(h, p)
    if is_infinite(p.k_r):
        # k_d / (1 + k_r G / D) with k_r -> inf; rho_meso already ensured G > 0
        return RateResult(0.0, rho.flags)
    return RateResult(h**p.dim * p.k_d * rho.value / p.k_r, rho.flags)


def eps_max(p: PhysicalParams) -> float:
    """Largest relative rebinding error reachable by any h (3D)."""
    _need_3d(p, "eps_max")
    return collins_kimball(p) / p.diffusion_limited_rate


def mesh_bound_F(p: PhysicalParams, eps: float) -> RateResult:
    """Largest h with |k_r - h^d rho| < eps k_r (for h >= h*_inf).

    Returns ``inf`` flagged ``unbounded`` when no finite bound exists.
    """
    if not 0 <= eps < 1:
        raise RatesError(f"eps must lie in [0, 1), got {eps}")
    flags = set()
    # (1 - (1-eps)^-1) * D/k_r, with 0 * inf taken as 0 at eps = 0
    shift = -eps / (1.0 - eps)
    if eps == 0 or is_infinite(p.k_r):
        term = 0.0
    elif p.k_r == 0:
        term = -math.inf
    else:
        term = shift * p.D / p.k_r
    if p.dim == 3:
        at_max = eps > 0 and eps >= eps_max(p)
        if at_max:
            flags.add(EPS_AT_OR_ABOVE_EPS_MAX)
        bracket = 1.0 / (4.0 * math.pi * p.sigma) + term
        if at_max or bracket <= 0:
            flags.add(UNBOUNDED)
            return RateResult(math.inf, frozenset(flags))
        return RateResult((C3 / 6.0) / bracket, frozenset(flags))
    expo = (3.0 + 2.0 * math.pi * C2) / 4.0 - 2.0 * math.pi * term
    if math.isinf(expo) or expo > 700:
        flags.add(UNBOUNDED)
        return RateResult(math.inf, frozenset(flags))
    return RateResult(math.sqrt(math.pi) * math.exp(expo) * p.sigma, frozenset(flags))


def tau_micro_mean(p: PhysicalParams, L: float) -> RateResult:
    """Mean binding time of a uniformly placed pair in a box of side L (s)."""
    flags = set()
    if L < 10.0 * p.sigma:
        flags.add(L_BELOW_10_SIGMA)
        warnings.warn(f"L={L:g} is below 10 sigma; the estimate assumes L >> sigma",
                      stacklevel=2)
    if p.k_r == 0:
        return RateResult(math.inf, frozenset(flags))
    if p.dim == 3:
        return RateResult(L**3 / collins_kimball(p), frozenset(flags))
    q = Disk2DQuantities.compute(p, L)
    if is_infinite(p.k_r):
        flags.add(DERIVED_LIMIT)
        return RateResult(q.F * L**2 / (2.0 * math.pi * p.D), frozenset(flags))
    return RateResult((1.0 + q.alpha * q.F) * L**2 / p.k_r, frozenset(flags))


def tau_rebind(p: PhysicalParams, m: MeshContext) -> tuple[RateResult, float]:
    """Mean rebinding times: (mesoscopic N/rho, microscopic estimate L^d/k_r)."""
    if m.dim != p.dim:
        raise RatesError("mesh and parameter dimensions differ")
    rho = rho_meso(m.h, p)
    meso = m.N / rho.value if rho.value > 0 else math.inf
    if is_infinite(p.k_r):
        micro = 0.0
    elif p.k_r == 0:
        micro = math.inf
    else:
        micro = m.L**p.dim / p.k_r
    return RateResult(meso, rho.flags), micro


def report(p: PhysicalParams, value: RateResult | float) -> dict:
    """JSON-ready record: value, flags and both critical sizes."""
    hs = h_star(p)
    if isinstance(value, RateResult):
        v, flags = value.value, sorted(value.flags)
    else:
        v, flags = float(value), []
    return {
        "value": v if math.isfinite(v) else None,
        "flags": flags,
        "h_star_kr": hs.h_star_kr,
        "h_star_inf": hs.h_star_inf,
    }
