"""Figures for a finished run, rendered off-screen to PNG files."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import degiorgi as dg  # noqa: E402
from .pipeline import load_manifest, load_series  # noqa: E402

__all__ = ["render_report"]

_STYLE = {
    "figure.figsize": (6.0, 3.8),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "legend.fontsize": 8,
    "savefig.bbox": "tight",
}


def _save(fig, path: Path) -> Path:
    fig.savefig(path)
    plt.close(fig)
    return path


def _conserved(series, out: Path) -> Path:
    t = series.times
    fig, axes = plt.subplots(1, 3, figsize=(10.0, 3.2))
    for ax, name in zip(axes, ("mass", "energy", "entropy")):
        ax.plot(t, series.column(name), marker=".")
        ax.set_title(name)
        ax.set_xlabel("t")
    fig.tight_layout()
    return _save(fig, out / "conserved.png")


def _truncated(series, out: Path) -> Path:
    fig, ax = plt.subplots()
    for col in series.columns:
        if col.startswith("H_plus:"):
            ax.plot(series.times, series.column(col), marker=".", label=col)
    ax.set_xlabel("t")
    ax.set_ylabel(r"$H_+(f\,|\,\kappa)$")
    ax.legend()
    return _save(fig, out / "truncated_entropy.png")


def _energies(series, qs, levels: int, out: Path) -> Path:
    fig, ax = plt.subplots()
    K = max(levels, 1)
    for q in qs:
        A = dg.energies(series, q, K)
        seq = dg.levels(q, K)
        ks = np.arange(K + 1)
        pos = A > 0
        ax.semilogy(ks[pos], A[pos], marker="o", label=f"A_k, q={q:g}")
        ax.axhline(seq.threshold, ls=":", lw=0.8, color=ax.lines[-1].get_color())
    ax.set_xlabel("k")
    ax.set_ylabel("level-set energy")
    ax.legend()
    return _save(fig, out / "degiorgi_energies.png")


def _intervals(directory: Path, out: Path) -> Path | None:
    path = directory / "singular" / "report.json"
    if not path.is_file():
        return None
    report = json.loads(path.read_text())
    fig, ax = plt.subplots(figsize=(6.0, 2.4))
    row = 0
    for key, rep in report.items():
        if "flags" not in rep:
            continue
        for f in rep["flags"]:
            ax.plot([f["time"] - f["radius"], f["time"] + f["radius"]], [row, row], color="C0", lw=3)
        for lo, hi in rep["dilated"]:
            ax.plot([lo, hi], [row + 0.3, row + 0.3], color="C1", lw=1)
        ax.text(1.01, row, f"q={key}: {len(rep['flags'])} flags", transform=ax.get_yaxis_transform(), fontsize=8)
        row += 1
    ax.set_yticks([])
    ax.set_xlabel("t")
    ax.set_title("flagged intervals and 5x dilations")
    return _save(fig, out / "singular_intervals.png")


def render_report(manifest_path) -> list[Path]:
    """Write PNG figures into ``<run>/figures`` and return their paths."""
    manifest, directory = load_manifest(manifest_path)
    config = manifest.run_config()
    series = load_series(directory)
    out = directory / "figures"
    out.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(_STYLE):
        paths = [_conserved(series, out), _truncated(series, out)]
        qs = [q for q in config.qs if dg.Q_DG[0] < q < dg.Q_DG[1]]
        if qs:
            paths.append(_energies(series, qs, config.degiorgi_levels, out))
        iv = _intervals(directory, out)
        if iv is not None:
            paths.append(iv)
    return paths
