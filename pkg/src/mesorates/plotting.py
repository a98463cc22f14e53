"""Figures rendered next to the CSV tables (``{experiment}-{key}.png``)."""

from __future__ import annotations

import math
import os
from pathlib import Path

import numpy as np

from .io import ResultBundle


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _floats(values) -> np.ndarray:
    return np.array([math.nan if v is None else float(v) for v in values])


def _save(fig, path: Path) -> Path:
    tmp = path.with_name(path.name + ".part")
    try:
        fig.savefig(tmp, format="png", dpi=110, metadata={"Software": None})
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
    return path


def _density(ax, t: np.ndarray, label: str) -> None:
    t = t[np.isfinite(t) & (t > 0)]
    if t.size < 2:
        return
    edges = np.logspace(math.floor(np.log10(t.min())), math.ceil(np.log10(t.max())), 41)
    counts, _ = np.histogram(t, bins=edges)
    centers = np.sqrt(edges[1:] * edges[:-1])
    ax.step(centers, counts / (t.size * np.diff(np.log10(edges))), where="mid", label=label)


def _times(bundle: ResultBundle, key: str, ax) -> None:
    tab = bundle.tables[key]
    for col, label in (("meso_time_s", "mesoscopic"), ("micro_time_s", "microscopic")):
        if col in tab.columns:
            _density(ax, _floats(tab.column(col)), label)
    ax.set_xscale("log")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("density per decade")


def render(bundle: ResultBundle, out_dir) -> list[Path]:
    """Write one PNG per table (plus a trend figure for mapk); returns the paths."""
    plt = _pyplot()
    out = Path(out_dir)
    paths: list[Path] = []
    kind = bundle.experiment
    for key in sorted(bundle.tables):
        tab = bundle.tables[key]
        if key.endswith("-events"):
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        if kind == "rates-report" and key == "h":
            h = _floats(tab.column("h"))
            ax.loglog(h, _floats(tab.column("rho")), "o-", label="rho")
            k_ck = _floats(tab.column("k_CK"))
            dim = int(bundle.summary["channel"]["dim"])
            if np.isfinite(k_ck).any():
                ax.loglog(h, k_ck / h**dim, "--", label="k_CK / h^d")
            ax.set_xlabel("h (m)")
            ax.set_ylabel("rate (1/s)")
        elif kind == "rates-report" and key == "k_r":
            ax.semilogx(_floats(tab.column("k_r")), _floats(tab.column("h_star_kr_over_sigma")),
                        "o-", label="h*(k_r) / sigma")
            hinf = bundle.summary["channel"]["h_star_inf"] / bundle.summary["channel"]["sigma"]
            ax.axhline(hinf, ls="--", color="gray", label="h*_inf / sigma")
            ax.set_xlabel("k_r")
            ax.set_ylabel("h* / sigma")
        elif kind == "rates-report":
            ax.loglog(_floats(tab.column("D")), _floats(tab.column("F")), "o-", label="F(D, eps)")
            ax.set_xlabel("D (m^2/s)")
            ax.set_ylabel("upper bound on h (m)")
        elif kind == "sweep":
            x = _floats(tab.column("value"))
            ax.loglog(x, _floats(tab.column("tau_rebind_meso")), "o-", label="mesoscopic rebind")
            ax.loglog(x, _floats(tab.column("tau_rebind_micro")), "--", label="microscopic rebind")
            ax.set_xlabel(key)
            ax.set_ylabel("mean time (s)")
        elif kind in ("rebind", "binding-time"):
            _times(bundle, key, ax)
        elif kind == "equilibrium":
            methods = tab.column("method")
            ax.bar(methods, _floats(tab.column("bound_fraction")),
                   yerr=_floats(tab.column("se")), color="tab:blue")
            ax.axhline(float(tab.column("predicted")[0]), ls="--", color="gray", label="predicted")
            ax.set_ylabel("bound fraction")
        elif kind == "mapk":
            t = _floats(tab.column("time"))
            ax.plot(t, _floats(tab.column("MAPK_pp_hhp")), label="mesh-dependent rates")
            ax.plot(t, _floats(tab.column("MAPK_pp_ck")), label="Collins-Kimball rates")
            ax.set_xlabel("time (s)")
            ax.set_ylabel("mean MAPK_pp")
        else:
            t = _floats(tab.column("time"))
            for col in tab.columns[1:]:
                ax.plot(t, _floats(tab.column(col)), label=col)
            ax.set_xlabel("time (s)")
            ax.set_ylabel("mean copy number")
        ax.set_title(f"{kind} {key}")
        if ax.get_legend_handles_labels()[0]:
            ax.legend()
        fig.tight_layout()
        paths.append(_save(fig, out / f"{kind}-{key}.png"))
        plt.close(fig)
    if kind == "mapk" and bundle.summary.get("runs"):
        runs = bundle.summary["runs"]
        D = np.array([r["D"] for r in runs])
        fig, ax = plt.subplots(figsize=(6, 4))
        for mode, label in (("hhp", "mesh-dependent rates"), ("ck", "Collins-Kimball rates")):
            ax.semilogx(D, _floats([r[mode]["tau_res"] for r in runs]), "o-", label=label)
        ax.set_xlabel("D (m^2/s)")
        ax.set_ylabel("tau_res (s)")
        ax.legend()
        fig.tight_layout()
        paths.append(_save(fig, out / "mapk-tau_res.png"))
        plt.close(fig)
    return paths
