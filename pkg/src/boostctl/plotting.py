"""Plot-ready CSV exports plus PNG renderings (non-interactive Agg backend)."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def write_trajectory_csv(path: str | Path, y: np.ndarray, u: np.ndarray, v: np.ndarray | None = None,
                         d: np.ndarray | None = None) -> None:
    """Columns ``t, y0.., u0.., v0.., d0..``; missing disturbances are written as zeros."""
    y = np.asarray(y)
    u = np.asarray(u)
    v = np.zeros_like(y) if v is None else np.asarray(v)
    d = np.zeros_like(u) if d is None else np.asarray(d)
    blocks = (("y", y), ("u", u), ("v", v), ("d", d))
    header = ["t"] + [f"{name}{i}" for name, a in blocks for i in range(a.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(y.shape[0]):
            w.writerow([t] + [repr(float(x)) for _, a in blocks for x in a[t]])


def read_trajectory_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`write_trajectory_csv`: ``(y, u, v, d)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))

    def cols(prefix):
        return body[:, [k for k, h in enumerate(header) if h[:1] == prefix and h[1:].isdigit()]]

    return cols("y"), cols("u"), cols("v"), cols("d")


def write_log_csv(path: str | Path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in columns})


def read_log_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def write_positions_csv(path: str | Path, y: np.ndarray) -> None:
    """Long format ``t, robot, x, y`` for plotting tools."""
    y = np.asarray(y)
    n = y.shape[1] // 2
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "robot", "x", "y"])
        for t in range(y.shape[0]):
            for i in range(n):
                w.writerow([t, i, repr(float(y[t, 2 * i])), repr(float(y[t, 2 * i + 1]))])


def plot_trajectories(path: str | Path, y: np.ndarray, targets=None, obstacles=None, radius: float | None = None,
                      horizon: int | None = None, title: str = "") -> None:
    y = np.asarray(y)
    n = y.shape[1] // 2
    fig, ax = plt.subplots(figsize=(5, 5))
    for j, c in enumerate(np.asarray(obstacles if obstacles is not None else []).reshape(-1, 2)):
        ax.add_patch(plt.Circle(c, radius or 0.3, color="0.7", alpha=0.6, label="obstacle" if j == 0 else None))
    for i in range(n):
        p = y[:, 2 * i:2 * i + 2]
        cut = p.shape[0] if horizon is None else min(horizon + 1, p.shape[0])
        line, = ax.plot(p[:cut, 0], p[:cut, 1], label=f"robot {i}")
        if cut < p.shape[0]:
            ax.plot(p[cut - 1:, 0], p[cut - 1:, 1], color="0.6", lw=0.8)
        ax.plot(p[0, 0], p[0, 1], "x", color=line.get_color())
        if targets is not None:
            tg = np.asarray(targets).reshape(-1, 2)[i]
            ax.plot(tg[0], tg[1], "*", color=line.get_color(), ms=10)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss_curve(path: str | Path, rows: list[dict]) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot([r["epoch"] for r in rows], [r["mean_loss"] for r in rows])
    ax.set_xlabel("epoch")
    ax.set_ylabel("batch loss")
    if rows and min(r["mean_loss"] for r in rows) > 0:
        ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
