"""Static figures written next to the CSV/JSON outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_golden(report, path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharey=True)
    for ax, key in zip(axes, ("eps=+0.5", "eps=-0.5")):
        d = report.data[key]
        t = np.asarray(d["t"])
        for k in range(3):
            ax.plot(t, np.asarray(d["V"])[:, k], lw=2, alpha=0.6, label=f"V{k + 1}")
            ax.plot(t, np.asarray(d["exact"])[:, k], "k--", lw=0.8)
        ax.set_title(key)
        ax.set_xlabel("t")
    axes[0].set_ylabel("velocity")
    axes[0].legend(fontsize=8)
    _save(fig, path)


def plot_discontinuity(report, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for key, style in (("branch+1", "-"), ("branch-1", "--")):
        d = report.data[key]
        ax.plot(d["t"], d["V2"], style, label=key.replace("branch", "sign "))
    ax.set_xlabel("t")
    ax.set_ylabel("V2")
    ax.set_title(f"separation {report.data['separation']:.4f}")
    ax.legend()
    _save(fig, path)


def plot_max_speed(times, speeds, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(times, speeds)
    ax.set_xlabel("t")
    ax.set_ylabel("max |V_i|")
    _save(fig, path)


def plot_convergence(report, path) -> None:
    Ns = sorted(report.median_sup)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for r in report.runs:
        axes[0].plot(r.N, r.sup_w1, "o", color="0.7", ms=3)
        axes[1].plot(r.N, r.ratio, "o", color="0.7", ms=3)
    axes[0].loglog(Ns, [report.median_sup[N] for N in Ns], "o-", label="median")
    axes[0].set_ylabel("sup_t W1")
    axes[1].semilogx(Ns, [report.median_ratio[N] for N in Ns], "o-")
    axes[1].set_ylabel("sup W1 / max(W1_0, sqrt W1_0)")
    for ax in axes:
        ax.set_xlabel("N")
    axes[0].legend()
    _save(fig, path)


def plot_dw1(report, path) -> None:
    rows = np.asarray(report.data["rows"], dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for N in np.unique(rows[:, 0]):
        sel = rows[:, 0] == N
        ax.loglog(np.sqrt(rows[sel, 2]), rows[sel, 3], "o", ms=3, label=f"N={int(N)}")
    s = np.sqrt(rows[:, 2])
    grid = np.geomspace(s.min(), s.max(), 50)
    ax.loglog(grid, report.data["C_fit"] * grid, "k--", lw=0.8, label="C_fit sqrt(W1)")
    ax.set_xlabel("sqrt(W1)")
    ax.set_ylabel("D")
    ax.legend(fontsize=8)
    _save(fig, path)
