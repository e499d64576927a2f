"""Chiplet-to-chiplet links, the global transfer log and C2C power profiles."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .config import HardwareConfig

DRAM_HUB = "DRAM"


class InterconnectError(ValueError):
    pass


@dataclass(frozen=True)
class C2CLink:
    """A logical point-to-point link; ``src``/``dst`` are tile ids or :data:`DRAM_HUB`."""

    src: int | str
    dst: int | str
    bandwidth: int = 64             # bits per cycle
    latency: int = 8                # cycles
    energy_per_bit: float = 0.5     # pJ/bit
    kind: str = "optical"
    dram_pj_per_bit: float = 30.0

    def __post_init__(self) -> None:
        if self.bandwidth <= 0:
            raise InterconnectError("link bandwidth must be positive")
        if self.energy_per_bit <= 0:
            raise InterconnectError("link energy per bit must be positive")
        if self.kind not in ("optical", "electrical"):
            raise InterconnectError(f"unknown link kind {self.kind!r}")

    @property
    def touches_dram(self) -> bool:
        return DRAM_HUB in (self.src, self.dst)

    def duration(self, bits: int) -> int:
        return self.latency + -(-bits // self.bandwidth)

    def energy(self, bits: int) -> float:
        e = bits * self.energy_per_bit
        if self.touches_dram:
            e += dram_access_energy(bits, self.dram_pj_per_bit)
        return e


def dram_access_energy(bits: int, pj_per_bit: float = 30.0) -> float:
    return bits * pj_per_bit


def link_for(hw: HardwareConfig, src, dst, kind: str | None = None) -> C2CLink:
    kind = kind or hw.interconnect
    epb = hw.optical_pj_per_bit if kind == "optical" else hw.electrical_pj_per_bit
    return C2CLink(src, dst, hw.link_bits_per_cycle, hw.link_latency, epb, kind, hw.dram_pj_per_bit)


@dataclass(frozen=True)
class TransferEvent:
    src: int | str
    dst: int | str
    bits: int
    start_cycle: int
    end_cycle: int
    energy_pj: float


@dataclass
class TransferLog:
    """Column-oriented transfer log; cheap to hold millions of events."""

    src: list = field(default_factory=list)
    dst: list = field(default_factory=list)
    bits: list = field(default_factory=list)
    start: list = field(default_factory=list)
    end: list = field(default_factory=list)
    energy: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.bits)

    def append(self, ev: TransferEvent) -> None:
        self.src.append(ev.src)
        self.dst.append(ev.dst)
        self.bits.append(ev.bits)
        self.start.append(ev.start_cycle)
        self.end.append(ev.end_cycle)
        self.energy.append(ev.energy_pj)

    def extend(self, src, dst, bits, start, end, energy) -> None:
        self.src.extend(src)
        self.dst.extend(dst)
        self.bits.extend(int(b) for b in bits)
        self.start.extend(int(s) for s in start)
        self.end.extend(int(e) for e in end)
        self.energy.extend(float(e) for e in energy)

    def events(self) -> Iterable[TransferEvent]:
        for row in zip(self.src, self.dst, self.bits, self.start, self.end, self.energy):
            yield TransferEvent(*row)

    @property
    def total_energy(self) -> float:
        return math.fsum(self.energy)

    def write_csv(self, path: str, limit: int | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["src", "dst", "bits", "start", "end", "pJ"])
            for k, ev in enumerate(self.events()):
                if limit is not None and k >= limit:
                    break
                w.writerow([ev.src, ev.dst, ev.bits, ev.start_cycle, ev.end_cycle, f"{ev.energy_pj:.6g}"])


def transfer(link: C2CLink, bits: int, at: int, log: TransferLog | None = None,
             known: Sequence | None = None) -> TransferEvent:
    """Move ``bits`` over ``link`` starting at cycle ``at``.

    ``known`` optionally lists the valid endpoint ids; an unknown endpoint
    raises :class:`InterconnectError`.
    """
    if bits < 0:
        raise InterconnectError("bit count must be non-negative")
    if known is not None:
        for ep in (link.src, link.dst):
            if ep != DRAM_HUB and ep not in known:
                raise InterconnectError(f"unknown endpoint {ep!r}")
    ev = TransferEvent(link.src, link.dst, bits, at, at + link.duration(bits), link.energy(bits))
    if log is not None:
        log.append(ev)
    return ev


def c2c_power_profile(log: TransferLog | Sequence[TransferEvent], window: int,
                      frequency_hz: float = 1e9, horizon: int | None = None) -> tuple[np.ndarray, float]:
    """Windowed average C2C power (W) and the whole-run average.

    Each event's energy is spread uniformly over ``[start, end)``.  The
    series covers ``[0, horizon)`` (default: the last event end).
    """
    if window <= 0:
        raise InterconnectError("window must be positive")
    if not isinstance(log, TransferLog):
        tl = TransferLog()
        for ev in log:
            tl.append(ev)
        log = tl
    if len(log) == 0:
        n = max(1, -(-(horizon or 0) // window))
        return np.zeros(n), 0.0
    s = np.asarray(log.start, dtype=float)
    e = np.asarray(log.end, dtype=float)
    en = np.asarray(log.energy, dtype=float)
    dur = e - s
    # zero-length events deposit their energy at their start cycle
    point = dur <= 0
    rate = np.where(point, 0.0, en / np.where(point, 1.0, dur))
    end = float(horizon if horizon is not None else e.max())
    n = max(1, int(math.ceil(end / window)))
    bounds = np.arange(n + 1, dtype=float) * window

    def ramp(times, rates, t):
        order = np.argsort(times)
        ts, rs = times[order], rates[order]
        cr = np.concatenate([[0.0], np.cumsum(rs)])
        crt = np.concatenate([[0.0], np.cumsum(rs * ts)])
        k = np.searchsorted(ts, t, side="left")
        return cr[k] * t - crt[k]

    cum = ramp(s, rate, bounds) - ramp(e, rate, bounds)
    if point.any():
        ps, pe = s[point], en[point]
        order = np.argsort(ps)
        c = np.concatenate([[0.0], np.cumsum(pe[order])])
        cum_pt = c[np.searchsorted(ps[order], bounds, side="right")]
        cum = cum + cum_pt
    per_window = np.diff(cum)                    # pJ
    seconds = window / frequency_hz
    series = per_window * 1e-12 / seconds
    total_s = end / frequency_hz
    avg = log.total_energy * 1e-12 / total_s if total_s > 0 else 0.0
    return series, avg
