"""PNG figures for run reports (matplotlib, non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .lattice import nearest_index  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 110,
    "savefig.bbox": "tight",
}
# Fixed metadata so two runs of the same config write identical files.
_META = {"Software": None}


def _figure(w=5.0, h=3.2):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(w, h))
    return fig, ax


def _save(fig, path):
    with plt.rc_context(STYLE):
        fig.savefig(path, metadata=_META)
    plt.close(fig)


def value_slices(surface, x0, path, n_curves=5):
    """V(0, x0, y, z) against y for a handful of positions."""
    g = surface.grid
    a = int(nearest_index(g.x, x0))
    picks = np.unique(np.linspace(0, g.z.size - 1, n_curves).round().astype(int))
    fig, ax = _figure()
    cmap = plt.get_cmap("viridis")
    for n, i in enumerate(picks):
        ax.plot(g.y, surface.values[0, a, :, i], color=cmap(n / max(len(picks) - 1, 1)),
                lw=1.2, label=f"z = {g.z[i]:+.2f}")
    ax.set_xlabel("wealth y")
    ax.set_ylabel("value")
    ax.set_title(f"V^{surface.n_jumps} at t = 0, x = {g.x[a]:.3g}")
    ax.legend(frameon=False)
    _save(fig, path)


def policy_map(policy, x0, path, t_index=0):
    """Post-trade position over (y, z) at one (t, x); hatched cells hold."""
    g = policy.grid
    a = int(nearest_index(g.x, x0))
    tgt = np.where(policy.exercise[t_index, a], policy.target[t_index, a], np.nan)
    fig, ax = _figure(5.0, 3.6)
    mesh = ax.pcolormesh(np.arange(g.z.size), g.y, tgt, cmap="coolwarm", vmin=-g.M, vmax=g.M, shading="nearest")
    hold = ~policy.exercise[t_index, a]
    ax.contourf(np.arange(g.z.size), g.y, hold.astype(float), levels=[0.5, 1.5], colors="none", hatches=["///"])
    step = max(1, g.z.size // 8)
    ax.set_xticks(np.arange(0, g.z.size, step))
    ax.set_xticklabels([f"{v:.2f}" for v in g.z[::step]], rotation=45)
    ax.set_xlabel("position before trade z")
    ax.set_ylabel("wealth y")
    ax.set_title(f"trade targets at t = {g.t[t_index]:.3g}, x = {g.x[a]:.3g} (hatched: hold)")
    fig.colorbar(mesh, ax=ax, label="target position")
    _save(fig, path)


def increments(incs, path):
    fig, ax = _figure()
    k = np.arange(1, len(incs) + 1)
    vals = np.asarray(incs, dtype=float)
    shown = np.where(vals > 0, vals, np.nan)
    ax.semilogy(k, shown, "o-", lw=1.2, ms=4)
    for kk, v in zip(k, vals):
        if v == 0:
            ax.annotate("0", (kk, ax.get_ylim()[0]), ha="center", va="bottom", fontsize=7)
    ax.set_xlabel("transaction budget k")
    ax.set_ylabel("sup |V^k - V^(k-1)|")
    _save(fig, path)


def jump_histogram(n_jumps, small_counts, path):
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(7.0, 2.8))
    with plt.rc_context(STYLE):
        n = np.asarray(n_jumps, dtype=int)
        cnt = np.bincount(n) if n.size else np.zeros(1)
        a1.bar(np.arange(cnt.size), cnt / max(n.size, 1), color="#4c72b0")
        a1.set_xlabel("number of trades N")
        a1.set_ylabel("fraction of paths")
        sc = np.asarray(small_counts, dtype=float)
        total = sc.sum() if sc.size else 1.0
        tail = np.array([sc[m:].sum() / total for m in range(sc.size)]) if sc.size else np.zeros(1)
        m = np.arange(tail.size)
        a2.semilogy(m, np.where(tail > 0, tail, np.nan), "o-", label="empirical")
        mm = np.arange(0, 6)
        a2.semilogy(mm, 2.0 ** -mm, "k--", lw=0.8, label="2^-m")
        a2.set_xlabel("m")
        a2.set_ylabel("P(small jumps >= m)")
        a2.legend(frameon=False)
    _save(fig, path)


def envelope(env, cost_values, path):
    fig, ax = _figure()
    ax.plot(env.z, cost_values, lw=1.2, label="c(z)")
    ax.plot(env.z, env.c, "--", lw=1.2, label=f"envelope ({env.rounds} rounds)")
    ax.set_xlabel("trade size z")
    ax.set_ylabel("cost")
    ax.legend(frameon=False)
    _save(fig, path)


def cara_surface(surface, path):
    fig, ax = _figure()
    for n in np.unique(np.linspace(0, surface.t.size - 1, 4).round().astype(int)):
        ax.plot(surface.z, surface.value[n], lw=1.2, label=f"t = {surface.t[n]:.2f}")
    ax.set_xlabel("position z")
    ax.set_ylabel("reduced value W(t, z)")
    ax.legend(frameon=False)
    _save(fig, path)
