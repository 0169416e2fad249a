"""Deterministic writers for result bundles and SVG plots rendered from them.

Floats are written with ``repr`` so a re-read reproduces the exact value, and
nothing that depends on wall-clock time or thread scheduling reaches a file.
Plots are rendered from the CSVs alone, which is what ``report`` relies on.
"""
from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from .experiments import Bundle


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def read_csv(path: Path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.DictReader(fh)
        return list(r.fieldnames or []), list(r)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if math.isnan(f) else f
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_bundle(bundle: Bundle, out_dir, config_text: str | None = None,
                 plots: bool = True) -> list[Path]:
    """Write every table, ``summary.json`` and (optionally) plots; return paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in sorted(bundle.tables):
        header, rows = bundle.tables[name]
        write_csv(out / name, header, rows)
        written.append(out / name)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(_jsonable(bundle.summary), fh, sort_keys=True, indent=2)
        fh.write("\n")
    written.append(out / "summary.json")
    if config_text is not None:
        (out / "config.yaml").write_text(config_text, encoding="utf-8")
        written.append(out / "config.yaml")
    if plots:
        written.extend(render_plots(out))
    return written


# -- plots -------------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "dads"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    return path


def _plot_ratio_error(plt, src: Path, dst: Path) -> Path:
    _, rows = read_csv(src)
    series: dict[int, list[tuple[int, float]]] = {}
    for r in rows:
        series.setdefault(int(r["subset"]), []).append((int(r["k"]), float(r["wrmse"])))
    fig, ax = plt.subplots(figsize=(7, 4))
    for g in sorted(series):
        k, v = zip(*series[g])
        ax.plot(k, v, label=f"subset {g}", linewidth=1.0)
    ax.set_xlabel("k")
    ax.set_ylabel("W-RMSE of ratio error (window 10)")
    ax.legend()
    fig.tight_layout()
    p = _save(fig, dst)
    plt.close(fig)
    return p


def _plot_rmse(plt, src: Path, dst: Path) -> Path:
    _, rows = read_csv(src)
    series: dict[str, list[tuple[int, float]]] = {}
    for r in rows:
        series.setdefault(r["case"], []).append((int(r["k"]), float(r["value"])))
    fig, ax = plt.subplots(figsize=(7, 4))
    for case in sorted(series):
        k, v = zip(*series[case])
        ax.plot(k, v, label=case, linewidth=1.0)
    ax.set_xlabel("k")
    ax.set_ylabel("estimation error")
    ax.legend()
    fig.tight_layout()
    p = _save(fig, dst)
    plt.close(fig)
    return p


def _plot_occupancy(plt, src: Path, dst: Path) -> Path:
    _, rows = read_csv(src)
    fig, ax = plt.subplots(figsize=(7, 4))
    for mode, style in (("analytic", "-"), ("montecarlo", ":")):
        by_m: dict[int, list[tuple[int, float]]] = {}
        for r in rows:
            if r["mode"] == mode:
                by_m.setdefault(int(r["m"]), []).append((int(r["d"]), float(r["frac"])))
        for m in sorted(by_m):
            d, f = zip(*by_m[m])
            ax.plot(d, f, style, label=f"m={m} {mode}", linewidth=1.0)
    ax.set_xlabel("attacked sensors d")
    ax.set_ylabel("fraction of attacked subsets")
    ax.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    p = _save(fig, dst)
    plt.close(fig)
    return p


_PLOTS = (("ratio_error.csv", "ratio_error.svg", _plot_ratio_error),
          ("rmse.csv", "rmse.svg", _plot_rmse),
          ("occupancy.csv", "occupancy.svg", _plot_occupancy))


def render_plots(directory) -> list[Path]:
    """Render an SVG for every recognised CSV present in ``directory``."""
    d = Path(directory)
    todo = [(d / s, d / t, fn) for s, t, fn in _PLOTS if (d / s).exists()]
    if not todo:
        return []
    plt = _pyplot()
    return [fn(plt, src, dst) for src, dst, fn in todo]


def list_bundle(directory) -> list[str]:
    return sorted(f for f in os.listdir(directory) if f.endswith((".csv", ".json", ".svg")))
