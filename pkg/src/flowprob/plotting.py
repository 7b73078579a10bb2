"""Figure output for the CLI: a CSV of the plotted data next to each PNG."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .kde import KdeModel, kde_pdf  # noqa: E402


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def marginal_densities(samples: np.ndarray, nodes, lower, upper, out_dir: Path, stem: str,
                       marks: dict | None = None, points: int = 200) -> list[Path]:
    """Per-node KDE marginals with the bound box; ``marks`` adds labelled vertical lines."""
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = np.atleast_2d(samples)
    n = samples.shape[1]
    fig, axes = plt.subplots(1, n, figsize=(4 * n, 3.2), squeeze=False)
    rows = []
    for j in range(n):
        col = samples[:, j]
        lo, hi = np.quantile(col, [0.001, 0.999])
        pad = 0.1 * (hi - lo + 1e-12)
        z = np.linspace(lo - pad, hi + pad, points)
        dens = kde_pdf(KdeModel.fit(col), z[:, None])
        rows += [(nodes[j], float(a), float(b)) for a, b in zip(z, dens)]
        ax = axes[0, j]
        ax.plot(z, dens, color="C0")
        ax.axvline(lower[j], color="C3", ls="--", lw=1, label="lower")
        if np.isfinite(upper[j]):
            ax.axvline(upper[j], color="C2", ls="--", lw=1, label="upper")
        for k, (label, vals) in enumerate((marks or {}).items()):
            ax.axvline(vals[j], color=f"C{4 + k}", lw=1, label=label)
        ax.set_title(f"node {nodes[j]}")
        ax.set_xlabel("value")
        if j == 0:
            ax.set_ylabel("density")
            ax.legend(fontsize=7)
    fig.tight_layout()
    png = out_dir / f"{stem}.png"
    fig.savefig(png, dpi=110)
    plt.close(fig)
    data = out_dir / f"{stem}.csv"
    _write_csv(data, ["node", "x", "density"], rows)
    return [png, data]


def trace_samples(t: np.ndarray, traces: np.ndarray, nodes, lower, upper, out_dir: Path, stem: str,
                  deterministic: np.ndarray | None = None, show: int = 10) -> list[Path]:
    """A few random traces per observed node, with bounds and the deterministic trace."""
    out_dir.mkdir(parents=True, exist_ok=True)
    traces = traces[:show]
    n = traces.shape[1]
    fig, axes = plt.subplots(1, n, figsize=(4 * n, 3.2), squeeze=False)
    rows = []
    for j in range(n):
        ax = axes[0, j]
        for i in range(traces.shape[0]):
            ax.plot(t, traces[i, j], lw=0.8, alpha=0.7)
            rows += [(nodes[j], i, float(a), float(b)) for a, b in zip(t, traces[i, j])]
        if deterministic is not None:
            ax.plot(t, deterministic[j], color="k", lw=1.5, label="deterministic")
            rows += [(nodes[j], "det", float(a), float(b)) for a, b in zip(t, deterministic[j])]
        ax.axhline(lower[j], color="C3", ls="--", lw=1)
        if np.isfinite(upper[j]):
            ax.axhline(upper[j], color="C2", ls="--", lw=1)
        ax.set_title(f"node {nodes[j]}")
        ax.set_xlabel("t")
    fig.tight_layout()
    png = out_dir / f"{stem}.png"
    fig.savefig(png, dpi=110)
    plt.close(fig)
    data = out_dir / f"{stem}.csv"
    _write_csv(data, ["node", "sample", "t", "value"], rows)
    return [png, data]


def estimate_bars(records: list[dict], out_dir: Path, stem: str) -> list[Path]:
    """Estimates per method with their confidence intervals when present."""
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    labels = [r["method"] for r in records]
    vals = [r["value"] for r in records]
    err = [[r["value"] - r["ci"][0] if r.get("ci") else 0.0 for r in records],
           [r["ci"][1] - r["value"] if r.get("ci") else 0.0 for r in records]]
    ax.bar(labels, vals, yerr=err, capsize=4, color=["C0", "C1", "C2"][: len(vals)])
    lo = min(vals) - 0.05
    ax.set_ylim(max(lo, 0.0), min(max(vals) + 0.05, 1.0))
    ax.set_ylabel("probability")
    fig.tight_layout()
    png = out_dir / f"{stem}.png"
    fig.savefig(png, dpi=110)
    plt.close(fig)
    data = out_dir / f"{stem}.csv"
    _write_csv(data, ["method", "value", "ci_lo", "ci_hi"],
               [(r["method"], r["value"], *(r["ci"] or [None, None])) for r in records])
    return [png, data]
