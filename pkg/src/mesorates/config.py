"""Experiment configuration files (TOML).

A configuration has an ``[experiment]`` table plus the sections its kind
needs; README.md documents every key. A ``model = "file.toml"`` entry in
``[experiment]`` merges that file's sections underneath the configuration,
with the configuration winning on conflicts.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .model import LatticeSpec, ModelError, ReactionChannel, SpeciesSpec
from .rates import PhysicalParams, RatesError
from .rng import MAX_SEED

KINDS = ("rates-report", "simulate", "binding-time", "rebind", "equilibrium", "mapk", "sweep")
AXES = ("h", "D", "k_r")


class ConfigError(ValueError):
    """Malformed or incomplete configuration."""


@dataclass
class Sweep:
    axis: str
    values: list[float]
    relative: str | None = None   # "h_star_inf": values are multiples of h*_inf

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"sweep axis must be one of {AXES}, got {self.axis!r}")
        if any(not (isinstance(v, (int, float)) and v > 0) for v in self.values):
            raise ConfigError("sweep values must be positive numbers")
        if self.relative not in (None, "h_star_inf"):
            raise ConfigError("sweep.relative may only be 'h_star_inf'")
        self.values = [float(v) for v in self.values]


@dataclass
class ExperimentConfig:
    kind: str
    trajectories: int
    seed: int | None
    eps: float
    output: str | None
    sweep: Sweep | None
    raw: dict = field(default_factory=dict)
    source: Path | None = None

    def section(self, name: str) -> dict:
        val = self.raw.get(name, {})
        if not isinstance(val, dict):
            raise ConfigError(f"[{name}] must be a table")
        return val

    @property
    def parameters(self) -> dict:
        return self.section("parameters")

    def echo(self) -> dict:
        """Resolved configuration, for the summary document."""
        out = {k: v for k, v in self.raw.items() if k != "full"}
        out["experiment"] = dict(out.get("experiment", {}), kind=self.kind,
                                 trajectories=self.trajectories, seed=self.seed, eps=self.eps)
        if self.sweep:
            out["experiment"]["sweep"] = {"axis": self.sweep.axis, "values": self.sweep.values,
                                          "relative": self.sweep.relative}
        return out


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load(path, *, seed: int | None = None, trajectories: int | None = None,
         full: bool = False) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    exp = raw.get("experiment")
    if not isinstance(exp, dict):
        raise ConfigError(f"{path}: missing [experiment] table")
    if "model" in exp:
        mpath = (path.parent / exp["model"]).resolve()
        try:
            model_raw = tomllib.loads(mpath.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read model file {mpath}: {exc.strerror}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{mpath}: {exc}") from None
        raw = _merge(model_raw, raw)
    if full:
        # full-scale overrides, e.g. [full] n = 81
        raw = _merge(raw, _full_overrides(raw.get("full", {})))
    return from_dict(raw, seed=seed, trajectories=trajectories, source=path)


def _full_overrides(full: dict) -> dict:
    if not isinstance(full, dict):
        raise ConfigError("[full] must be a table")
    over: dict = {}
    for key, val in full.items():
        if isinstance(val, dict):
            over[key] = val
        else:
            over.setdefault("experiment", {})[key] = val
    return over


def from_dict(raw: dict, *, seed: int | None = None, trajectories: int | None = None,
              source: Path | None = None) -> ExperimentConfig:
    exp = raw.get("experiment", {})
    kind = exp.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"experiment.kind must be one of {KINDS}, got {kind!r}")
    n_traj = trajectories if trajectories is not None else exp.get("trajectories", 1)
    if not isinstance(n_traj, int) or n_traj < 1:
        raise ConfigError("trajectories must be an integer >= 1")
    seed = seed if seed is not None else exp.get("seed")
    if seed is not None and not (isinstance(seed, int) and 0 <= seed <= MAX_SEED):
        raise ConfigError("seed must be an unsigned 64-bit integer")
    eps = exp.get("eps", 0.05)
    if not (isinstance(eps, (int, float)) and 0 <= eps < 1):
        raise ConfigError("eps must be in [0, 1)")
    sw = exp.get("sweep")
    sweep = None
    if sw is not None:
        if not isinstance(sw, dict):
            raise ConfigError("experiment.sweep must be a table")
        try:
            sweep = Sweep(sw.get("axis"), list(sw.get("values", [])), sw.get("relative"))
        except TypeError:
            raise ConfigError("sweep.values must be a list") from None
    return ExperimentConfig(kind=kind, trajectories=n_traj, seed=seed, eps=float(eps),
                            output=exp.get("output"), sweep=sweep, raw=raw, source=source)


def _num(d: dict, key: str, where: str, default=None) -> float:
    v = d.get(key, default)
    if v is None:
        raise ConfigError(f"[{where}] needs {key!r}")
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        return math.inf
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(f"[{where}] {key} must be a number")
    return float(v)


def pair_params(cfg: ExperimentConfig) -> PhysicalParams:
    p = cfg.parameters
    try:
        return PhysicalParams(k_r=_num(p, "k_r", "parameters"), D=_num(p, "D", "parameters"),
                              sigma=_num(p, "sigma", "parameters"),
                              dim=int(p.get("dim", 3)), k_d=_num(p, "k_d", "parameters", 0.0))
    except RatesError as exc:
        raise ConfigError(f"[parameters]: {exc}") from None


def lattice(cfg: ExperimentConfig, dim: int | None = None) -> LatticeSpec:
    lat = cfg.section("lattice")
    n = lat.get("n")
    if not isinstance(n, int):
        raise ConfigError("[lattice] needs an integer n")
    dim = int(lat.get("dim", dim or cfg.parameters.get("dim", 3)))
    try:
        if "h" in lat:
            return LatticeSpec.from_h(dim, n, _num(lat, "h", "lattice"), lat.get("boundary", "periodic"))
        return LatticeSpec(dim, n, _num(lat, "L", "lattice"), lat.get("boundary", "periodic"))
    except ModelError as exc:
        raise ConfigError(f"[lattice]: {exc}") from None


def species(cfg: ExperimentConfig) -> list[SpeciesSpec]:
    items = cfg.raw.get("species", [])
    if not isinstance(items, list) or not items:
        raise ConfigError("at least one [[species]] entry is required")
    out = []
    for s in items:
        try:
            out.append(SpeciesSpec(s["name"], float(s.get("gamma", 0.0)), float(s.get("radius", 0.0))))
        except KeyError:
            raise ConfigError("every [[species]] needs a name") from None
        except (ModelError, TypeError, ValueError) as exc:
            raise ConfigError(f"[[species]]: {exc}") from None
    return out


def reactions(cfg: ExperimentConfig) -> list[ReactionChannel]:
    out = []
    for r in cfg.raw.get("reactions", []):
        try:
            rate = r["rate"]
            out.append(ReactionChannel(
                name=r["name"], reactants=tuple(r.get("reactants", ())),
                products=tuple(r.get("products", ())), rate=rate,
                mode=r.get("mode", "explicit"), reverse_of=r.get("reverse_of"),
                sigma=r.get("sigma"), D=r.get("D")))
        except KeyError as exc:
            raise ConfigError(f"[[reactions]] entry lacks {exc.args[0]!r}") from None
        except (ModelError, ValueError) as exc:
            raise ConfigError(f"[[reactions]]: {exc}") from None
    return out


def numeric_parameters(cfg: ExperimentConfig) -> dict[str, float]:
    return {k: float(v) for k, v in cfg.parameters.items()
            if isinstance(v, (int, float)) and not isinstance(v, bool)}

