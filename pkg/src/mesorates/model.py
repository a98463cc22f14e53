"""Reaction-diffusion model description and compilation to mesoscopic constants.

A model is a set of species, reaction channels and a Cartesian lattice.
:func:`compile_model` resolves every channel to a per-voxel propensity
constant. Bimolecular channels in ``hhp`` mode get the mesh-dependent rate
from :func:`mesorates.rates.rho_meso`; ``ck`` mode uses the Collins-Kimball
rate divided by the voxel volume; ``explicit`` takes the constant verbatim.
A unimolecular channel in ``hhp`` mode that names its association channel via
``reverse_of`` is a linked dissociation and gets k_d^meso.

Homodimerisation (A + A) uses the combinatorial propensity c x (x - 1) / 2,
i.e. every unordered pair of A molecules reacts with the same constant c as
a hetero pair. The mesh-dependent rates are derived for hetero pairs only.

The voxel count is called K here (N in the rebinding formulas).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import rates
from .rates import PhysicalParams

log = logging.getLogger(__name__)

DEFAULT_EPS = 0.05


class ModelError(ValueError):
    """Malformed model description."""


class CompileError(ValueError):
    """A channel cannot be given a valid mesoscopic constant."""

    def __init__(self, channel: str, message: str, h_star: float | None = None):
        self.channel = channel
        self.h_star = h_star
        super().__init__(f"channel {channel!r}: {message}")


class InternalConsistencyError(RuntimeError):
    """An update would make a copy number negative (a propensity bug)."""


class RateMode(str, Enum):
    HHP = "hhp"
    CK = "ck"
    EXPLICIT = "explicit"


class Boundary(str, Enum):
    PERIODIC = "periodic"
    REFLECTIVE = "reflective"


@dataclass(frozen=True)
class SpeciesSpec:
    name: str
    gamma: float = 0.0
    radius: float = 0.0

    def __post_init__(self):
        if not self.name:
            raise ModelError("species name must be non-empty")
        if self.gamma < 0 or self.radius < 0:
            raise ModelError(f"species {self.name!r}: gamma and radius must be >= 0")


@dataclass(frozen=True)
class LatticeSpec:
    """Cartesian lattice of ``n**dim`` voxels of width ``L / n``.

    ``dim`` 1 is accepted for explicit-rate models only.
    """

    dim: int
    n: int
    L: float
    boundary: Boundary = Boundary.PERIODIC

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ModelError(f"lattice dim must be 1, 2 or 3, got {self.dim}")
        if int(self.n) != self.n or self.n < 1:
            raise ModelError(f"lattice n must be a positive integer, got {self.n}")
        if not self.L > 0:
            raise ModelError(f"lattice L must be positive, got {self.L}")
        object.__setattr__(self, "boundary", Boundary(self.boundary))

    @classmethod
    def from_h(cls, dim: int, n: int, h: float, boundary="periodic") -> "LatticeSpec":
        return cls(dim=dim, n=n, L=n * h, boundary=boundary)

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def K(self) -> int:
        return self.n**self.dim

    def index(self, coords: Sequence[int]) -> int:
        """Row-major voxel index; the last coordinate varies fastest."""
        idx = 0
        for c in coords:
            idx = idx * self.n + int(c) % self.n
        return idx

    def coords(self, index: int) -> tuple[int, ...]:
        out = []
        for _ in range(self.dim):
            out.append(index % self.n)
            index //= self.n
        return tuple(reversed(out))

    def center(self) -> int:
        return self.index([self.n // 2] * self.dim)

    def neighbors(self) -> np.ndarray:
        """Adjacency table of shape (K, 2*dim); -1 marks a missing neighbour.

        Directions are ordered (+axis0, -axis0, +axis1, ...). Under periodic
        boundaries with n = 1 the only neighbour is the voxel itself, which is
        dropped.
        """
        n, dim = self.n, self.dim
        grid = np.arange(self.K).reshape((n,) * dim)
        adj = np.full((self.K, 2 * dim), -1, dtype=np.int64)
        for axis in range(dim):
            for j, shift in enumerate((-1, 1)):
                # np.roll by -1 brings the +1 neighbour into place
                rolled = np.roll(grid, shift, axis=axis)
                col = rolled.reshape(-1).copy()
                if self.boundary is Boundary.REFLECTIVE:
                    idx = np.indices((n,) * dim)[axis].reshape(-1)
                    edge = n - 1 if shift == -1 else 0
                    col[idx == edge] = -1
                col[col == np.arange(self.K)] = -1
                adj[:, 2 * axis + j] = col
        return adj


@dataclass(frozen=True)
class ReactionChannel:
    """One reaction. ``rate`` is k_r (hhp/ck bimolecular), k_d (linked hhp
    dissociation) or the mesoscopic constant (explicit and unlinked
    unimolecular). A string rate is looked up in the compile parameters.
    """

    name: str
    reactants: tuple[str, ...]
    products: tuple[str, ...]
    rate: float | str
    mode: RateMode = RateMode.EXPLICIT
    reverse_of: str | None = None
    sigma: float | str | None = None
    D: float | str | None = None

    def __post_init__(self):
        object.__setattr__(self, "reactants", tuple(self.reactants))
        object.__setattr__(self, "products", tuple(self.products))
        object.__setattr__(self, "mode", RateMode(self.mode))
        if len(self.reactants) > 2:
            raise ModelError(f"channel {self.name!r}: at most two reactants are supported")

    @property
    def order(self) -> int:
        return len(self.reactants)


@dataclass(frozen=True)
class CompiledChannel:
    name: str
    order: int
    reactants: tuple[int, ...]
    products: tuple[int, ...]
    mode: RateMode
    constant: float
    homodimer: bool = False
    pair: PhysicalParams | None = None
    info: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class CompiledModel:
    species: tuple[SpeciesSpec, ...]
    lattice: LatticeSpec
    channels: tuple[CompiledChannel, ...]
    warnings: tuple[str, ...]
    eps: float
    gamma_h2: np.ndarray
    adjacency: np.ndarray
    n_neighbors: np.ndarray
    r_order: np.ndarray
    r_a: np.ndarray
    r_b: np.ndarray
    r_const: np.ndarray
    r_stoich: np.ndarray

    @property
    def S(self) -> int:
        return len(self.species)

    @property
    def K(self) -> int:
        return self.lattice.K

    @property
    def species_names(self) -> list[str]:
        return [s.name for s in self.species]

    def species_index(self, name: str) -> int:
        for i, s in enumerate(self.species):
            if s.name == name:
                return i
        raise KeyError(name)

    def channel_index(self, name: str) -> int:
        for i, c in enumerate(self.channels):
            if c.name == name:
                return i
        raise KeyError(name)

    def summary(self) -> dict:
        lat = self.lattice
        return {
            "lattice": {"dim": lat.dim, "n": lat.n, "L": lat.L, "h": lat.h, "K": lat.K,
                        "boundary": lat.boundary.value},
            "species": [{"name": s.name, "gamma": s.gamma, "radius": s.radius}
                        for s in self.species],
            "channels": [
                {"name": c.name, "mode": c.mode.value, "order": c.order,
                 "constant": c.constant, **c.info}
                for c in self.channels
            ],
            "eps": self.eps,
            "warnings": list(self.warnings),
        }


def _resolve(value, params: Mapping[str, float], what: str):
    if value is None or isinstance(value, (int, float)):
        return None if value is None else float(value)
    if value in params:
        return float(params[value])
    raise ModelError(f"{what}: parameter {value!r} has no value")


def _pair_params(ch: ReactionChannel, spec: Mapping[str, SpeciesSpec], k_r: float,
                 dim: int, params: Mapping[str, float]) -> PhysicalParams:
    a, b = (spec[n] for n in ch.reactants)
    sigma = _resolve(ch.sigma, params, ch.name)
    D = _resolve(ch.D, params, ch.name)
    sigma = a.radius + b.radius if sigma is None else sigma
    D = a.gamma + b.gamma if D is None else D
    if not (sigma > 0 and D > 0):
        raise CompileError(ch.name, f"needs pairwise sigma > 0 and D > 0 (got {sigma}, {D})")
    return PhysicalParams(k_r=k_r, D=D, sigma=sigma, dim=dim)


def compile_model(species: Iterable[SpeciesSpec], channels: Iterable[ReactionChannel],
                  lattice: LatticeSpec, params: Mapping[str, float] | None = None,
                  eps: float = DEFAULT_EPS) -> CompiledModel:
    """Resolve every channel to its per-voxel propensity constant.

    Raises :class:`CompileError` when an ``hhp`` channel has h <= h*_kr or a
    ``ck`` channel is used outside 3D.
    """
    params = dict(params or {})
    species = tuple(species)
    channels = tuple(channels)
    names = [s.name for s in species]
    if len(set(names)) != len(names):
        raise ModelError("species names must be unique")
    if len({c.name for c in channels}) != len(channels):
        raise ModelError("channel names must be unique")
    spec = {s.name: s for s in species}
    sidx = {n: i for i, n in enumerate(names)}
    for ch in channels:
        for n in ch.reactants + ch.products:
            if n not in spec:
                raise ModelError(f"channel {ch.name!r}: unknown species {n!r}")

    h = lattice.h
    dim = lattice.dim
    notes: list[str] = []
    by_name = {c.name: c for c in channels}
    pairs: dict[str, PhysicalParams] = {}
    compiled = []

    def warn(msg):
        notes.append(msg)
        log.warning(msg)

    for ch in channels:
        k = _resolve(ch.rate, params, ch.name)
        if k < 0:
            raise ModelError(f"channel {ch.name!r}: rate must be >= 0")
        info: dict = {}
        pair = None
        if ch.order == 2 and ch.mode is not RateMode.EXPLICIT:
            if dim not in (2, 3):
                raise CompileError(ch.name, f"{ch.mode.value} rates need a 2D or 3D lattice")
            pair = _pair_params(ch, spec, k, dim, params)
            pairs[ch.name] = pair
            hs = rates.h_star(pair)
            info.update(k_r=k, sigma=pair.sigma, D=pair.D, h_star_kr=hs.h_star_kr,
                        h_star_inf=hs.h_star_inf)
            F = rates.mesh_bound_F(pair, eps).value
            info["F_eps"] = F if math.isfinite(F) else None
            if dim == 3:
                info["k_CK"] = rates.collins_kimball(pair)
                info["eps_max"] = rates.eps_max(pair)
            if ch.mode is RateMode.HHP:
                try:
                    c = rates.rho_meso(h, pair).value
                except rates.NoValidRateError as exc:
                    raise CompileError(
                        ch.name, f"h={h:.6g} m is not above the critical size "
                        f"h*_kr={exc.h_star_kr:.6g} m", h_star=exc.h_star_kr) from None
                info["rho"] = c
            else:
                if dim != 3:
                    raise CompileError(ch.name, "Collins-Kimball rates are only defined in 3D")
                c = rates.collins_kimball(pair) / h**3
                info["rho"] = rates.rho_meso(h, pair).value if h > hs.h_star_kr else None
            if h < hs.h_star_inf:
                warn(f"{ch.name}: h={h:.4g} m is below h*_inf={hs.h_star_inf:.4g} m")
            if h < 10 * pair.sigma:
                warn(f"{ch.name}: h={h:.4g} m is below 10 sigma={10 * pair.sigma:.4g} m")
            if math.isfinite(F) and h > F:
                warn(f"{ch.name}: h={h:.4g} m exceeds the eps={eps:g} mesh bound {F:.4g} m")
        else:
            c = k
        compiled.append([ch, c, info])

    # linked dissociations need the compiled association pair
    for item in compiled:
        ch, c, info = item
        if ch.reverse_of is None:
            continue
        assoc = by_name.get(ch.reverse_of)
        if assoc is None:
            raise ModelError(f"channel {ch.name!r}: reverse_of names unknown channel "
                             f"{ch.reverse_of!r}")
        if ch.mode is RateMode.HHP:
            if ch.order != 1 or assoc.order != 2 or assoc.name not in pairs:
                raise ModelError(f"channel {ch.name!r}: an hhp dissociation must be "
                                 "unimolecular and linked to an hhp/ck association")
            pa = pairs[assoc.name]
            pd = PhysicalParams(k_r=pa.k_r, D=pa.D, sigma=pa.sigma, dim=pa.dim, k_d=item[1])
            try:
                item[1] = rates.kd_meso(h, pd).value
            except rates.NoValidRateError as exc:
                raise CompileError(ch.name, "linked association has no valid rate",
                                   h_star=exc.h_star_kr) from None
            info.update(k_d=pd.k_d, kd_meso=item[1])
    for ch, c, info in compiled:
        if ch.mode is RateMode.HHP and ch.order == 1 and ch.reverse_of is None:
            warn(f"{ch.name}: unimolecular hhp channel without reverse_of uses its rate as given")

    S = len(species)
    R = len(compiled)
    r_order = np.zeros(R, dtype=np.int64)
    r_a = np.full(R, -1, dtype=np.int64)
    r_b = np.full(R, -1, dtype=np.int64)
    r_const = np.zeros(R, dtype=np.float64)
    r_stoich = np.zeros((R, S), dtype=np.int64)
    out = []
    for r, (ch, c, info) in enumerate(compiled):
        reac = tuple(sidx[n] for n in ch.reactants)
        prod = tuple(sidx[n] for n in ch.products)
        r_order[r] = len(reac)
        if reac:
            r_a[r] = reac[0]
        if len(reac) == 2:
            r_b[r] = reac[1]
        r_const[r] = c
        for s in reac:
            r_stoich[r, s] -= 1
        for s in prod:
            r_stoich[r, s] += 1
        homo = len(reac) == 2 and reac[0] == reac[1]
        out.append(CompiledChannel(
            name=ch.name, order=len(reac), reactants=reac, products=prod, mode=ch.mode,
            constant=float(c), homodimer=homo, pair=pairs.get(ch.name), info=info))

    adj = lattice.neighbors()
    return CompiledModel(
        species=species, lattice=lattice, channels=tuple(out), warnings=tuple(notes),
        eps=eps,
        gamma_h2=np.array([diffusion_propensity(s, lattice) for s in species], dtype=np.float64),
        adjacency=adj, n_neighbors=(adj >= 0).sum(axis=1).astype(np.int64),
        r_order=r_order, r_a=r_a, r_b=r_b, r_const=r_const, r_stoich=r_stoich,
    )


def diffusion_propensity(species: SpeciesSpec, lattice: LatticeSpec) -> float:
    """Jump rate of one molecule towards one neighbouring voxel, gamma / h^2."""
    return species.gamma / lattice.h**2


def reaction_propensity(channel: CompiledChannel, voxel_counts: Sequence[int]) -> float:
    c = channel.constant
    if channel.order == 0:
        return c
    xa = int(voxel_counts[channel.reactants[0]])
    if channel.order == 1:
        return c * xa
    if channel.homodimer:
        return c * xa * (xa - 1) / 2.0
    return c * xa * int(voxel_counts[channel.reactants[1]])


@dataclass
class SystemState:
    """K x S copy-number matrix, voxel-major."""

    counts: np.ndarray

    @classmethod
    def empty(cls, model: CompiledModel) -> "SystemState":
        return cls(np.zeros((model.K, model.S), dtype=np.int64))

    def copy(self) -> "SystemState":
        return SystemState(self.counts.copy())

    def place(self, species: int, voxel: int, count: int = 1) -> "SystemState":
        self.counts[voxel, species] += count
        return self

    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)


#: sparse (voxel, species, delta) triples
StoichVector = tuple[tuple[int, int, int], ...]


def reaction_stoich(channel: CompiledChannel, voxel: int) -> StoichVector:
    delta: dict[int, int] = {}
    for s in channel.reactants:
        delta[s] = delta.get(s, 0) - 1
    for s in channel.products:
        delta[s] = delta.get(s, 0) + 1
    return tuple((voxel, s, d) for s, d in sorted(delta.items()) if d != 0)


def diffusion_stoich(species: int, src: int, dst: int) -> StoichVector:
    return ((src, species, -1), (dst, species, +1))


def apply_event(state: SystemState, stoich: StoichVector) -> set[int]:
    """Apply a stoichiometry in place and return the voxels whose propensities changed."""
    counts = state.counts
    for v, s, d in stoich:
        if counts[v, s] + d < 0:
            raise InternalConsistencyError(
                f"event would make species {s} negative in voxel {v}")
    for v, s, d in stoich:
        counts[v, s] += d
    return {v for v, _, _ in stoich}


def pair_channels(model: CompiledModel) -> list[CompiledChannel]:
    return [c for c in model.channels if c.order == 2]


def all_voxel_propensities(model: CompiledModel, state: SystemState) -> tuple[np.ndarray, np.ndarray]:
    """From-scratch reaction and diffusion propensity totals per voxel."""
    K = model.K
    react = np.zeros(K)
    diff = np.zeros(K)
    for v in range(K):
        x = state.counts[v]
        react[v] = sum(reaction_propensity(c, x) for c in model.channels)
        diff[v] = model.n_neighbors[v] * float(np.dot(x, model.gamma_h2))
    return react, diff
