"""SVG figures for sweeps and convergence studies (matplotlib, Agg backend)."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# stable ids and no timestamp so reruns give identical files
plt.rcParams["svg.hashsalt"] = "slitsphere"
_META = {"Date": None, "Creator": "slitsphere"}


def _grid(records, field):
    d1 = sorted({r.delta1 for r in records})
    d2 = sorted({r.delta2 for r in records})
    Z = np.full((len(d2), len(d1)), np.nan)
    i1 = {v: i for i, v in enumerate(d1)}
    i2 = {v: i for i, v in enumerate(d2)}
    for r in records:
        Z[i2[r.delta2], i1[r.delta1]] = getattr(r, field)
    return np.array(d1), np.array(d2), Z


def lambda_heatmap(records, path, curve: Optional[Sequence] = None, level: float = 0.75) -> None:
    """lambda1A over (delta1, delta2) with the ``level`` contour and curve points."""
    d1, d2, Z = _grid(records, "lambda1A")
    fig, ax = plt.subplots(figsize=(6, 5))
    mesh = ax.pcolormesh(d1, d2, Z, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label=r"$\lambda_{1,A}$")
    if np.nanmin(Z) < level < np.nanmax(Z):
        ax.contour(d1, d2, Z, levels=[level], colors="w", linewidths=1.2)
    if curve:
        ax.plot([c.delta1 for c in curve], [c.delta2 for c in curve], "r.", ms=4, label="interpolated crossings")
        ax.legend(loc="upper right", fontsize=8)
    ax.set_xlabel(r"$\delta_1$")
    ax.set_ylabel(r"$\delta_2 = \delta_3$")
    ax.set_title(rf"$\lambda_{{1,A}}$, level {level:g} in white")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def ratio_surface(records, path) -> None:
    d1, d2, Z = _grid(records, "ratio_moussaoui")
    fig, ax = plt.subplots(figsize=(6, 5))
    mesh = ax.pcolormesh(d1, d2, Z, shading="nearest", cmap="magma")
    fig.colorbar(mesh, ax=ax, label=r"$|\alpha_2|/|\alpha_1|$")
    ax.set_xlabel(r"$\delta_1$")
    ax.set_ylabel(r"$\delta_2 = \delta_3$")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def ratio_along_curve(curve, path) -> None:
    """Coefficient ratio along the crossing curve for both estimators."""
    fig, ax = plt.subplots(figsize=(6, 4))
    x = [c.delta2 for c in curve]
    ax.plot(x, [c.ratio_moussaoui for c in curve], "o-", ms=3, label="dual-function extraction")
    ax.plot(x, [c.ratio_ef for c in curve], "s--", ms=3, label="trace jump (FE only)")
    ax.axhline(1.0, color="k", lw=0.8)
    ax.set_xlabel(r"$\delta_2$ on the curve $\lambda_{1,A} = 3/4$")
    ax.set_ylabel(r"$|\alpha_2|/|\alpha_1|$")
    ax.set_ylim(0, 1.1)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def convergence_plot(table, path) -> None:
    rows = table.rows
    h = np.array([r["h"] for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for key, label in (("err_lambda", r"$\lambda$"), ("err_alpha1", r"$|\alpha_1|$"),
                       ("err_alpha2", r"$|\alpha_2|$"), ("err_h1_fe", r"FE-only $H^1$")):
        e = np.array([r[key] for r in rows], dtype=float)
        ok = e > 0
        if ok.any():
            s = table.slopes.get(key, math.nan)
            ax.loglog(h[ok], e[ok], "o-", label=f"{label} (slope {s:.2f})")
    ax.set_xlabel("h (longest edge)")
    ax.set_ylabel(f"error vs n={table.n_ref}")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", lw=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
