"""Report bundle writers: benchmark CSVs and static SVG charts.

Every file is a pure function of the run results.  SVG output pins the
matplotlib hash salt and drops the date metadata so repeated runs produce
byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BENCHMARK_COLUMNS = (
    "model", "context", "ccpg", "interconnect", "chiplets", "cycles",
    "throughput_tokens_per_s", "average_power_w", "efficiency_tokens_per_j",
    "c2c_power_w", "energy_j",
)
SWEEP_COLUMNS = BENCHMARK_COLUMNS + ("saving_fraction", "error")


def write_rows(path: str | Path, rows: Iterable[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in columns})


def write_energy_breakdown(path: str | Path, ledger) -> None:
    """Energy (pJ) per phase and macro class, with a total row."""
    classes = list(ledger.energy)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phase", *classes, "total"])
        for phase in sorted(ledger.phases):
            per = ledger.phases[phase]
            vals = [per.get(c, 0.0) for c in classes]
            w.writerow([phase, *(f"{v:.6e}" for v in vals), f"{sum(vals):.6e}"])
        w.writerow(["total", *(f"{ledger.energy[c]:.6e}" for c in classes), f"{ledger.total:.6e}"])


def write_series(path: str | Path, series: np.ndarray, window: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_start_cycle", "c2c_power_w"])
        for k, p in enumerate(series):
            w.writerow([k * window, f"{p:.9e}"])


def write_json(path: str | Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def saving_fractions(rows: list[dict]) -> list[dict]:
    """Attach ``saving_fraction`` to CCPG-on rows that have a matching CCPG-off row."""
    off = {(r["model"], r["context"], r["interconnect"]): r["average_power_w"]
           for r in rows if r.get("ccpg") == "off" and "average_power_w" in r}
    out = []
    for r in rows:
        r = dict(r)
        base = off.get((r.get("model"), r.get("context"), r.get("interconnect")))
        if r.get("ccpg") == "on" and base and "average_power_w" in r:
            r["saving_fraction"] = round(1.0 - r["average_power_w"] / base, 6)
        out.append(r)
    return out


# ---------------------------------------------------------------------------
# charts


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "picnic"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    import matplotlib.pyplot as plt
    plt.close(fig)


def _grouped(rows: list[dict], column: str):
    keys = []
    for r in rows:
        k = f"{r['model']} {r['context']}"
        if k not in keys:
            keys.append(k)
    data = {"off": [np.nan] * len(keys), "on": [np.nan] * len(keys)}
    for r in rows:
        if column in r and r[column] != "":
            data[r["ccpg"]][keys.index(f"{r['model']} {r['context']}")] = float(r[column])
    return keys, data


def bar_chart(rows: list[dict], column: str, ylabel: str, path: str | Path) -> None:
    """Grouped bars of ``column`` per (model, context), CCPG off vs on."""
    plt = _pyplot()
    keys, data = _grouped(rows, column)
    x = np.arange(len(keys))
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(keys) + 2), 3.6))
    ax.bar(x - 0.2, data["off"], 0.4, label="without CCPG")
    ax.bar(x + 0.2, data["on"], 0.4, label="with CCPG")
    ax.set_xticks(x)
    ax.set_xticklabels(keys, rotation=20, ha="right")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def c2c_chart(series: np.ndarray, window: int, frequency_hz: float, path: str | Path,
              label: str = "") -> None:
    plt = _pyplot()
    t = np.arange(len(series)) * window / frequency_hz * 1e3
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    ax.plot(t, np.asarray(series) * 1e3, lw=1.0, label=label or None)
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("C2C power (mW)")
    if label:
        ax.legend()
    fig.tight_layout()
    _save(fig, path)


def context_chart(rows: list[dict], column: str, ylabel: str, path: str | Path) -> None:
    """Line per (model, ccpg, interconnect) of ``column`` over the prompt length."""
    plt = _pyplot()
    lines: dict[str, list[tuple[int, float]]] = {}
    for r in rows:
        if column not in r or r[column] == "":
            continue
        key = f"{r['model']} ccpg={r['ccpg']} {r['interconnect']}"
        lines.setdefault(key, []).append((int(str(r["context"]).split("/")[0]), float(r[column])))
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for key, pts in lines.items():
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=key)
    ax.set_xlabel("prompt length (tokens)")
    ax.set_ylabel(ylabel)
    if lines:
        ax.legend(fontsize="small")
    fig.tight_layout()
    _save(fig, path)
