"""Macro power and area costs, chiplet clustering with power gating, and the energy ledger."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Sequence

PAIRS_PER_TILE = 1024
SCUS_PER_TILE = 1024


class PowerError(ValueError):
    pass


@dataclass(frozen=True)
class UnitCosts:
    """Active power (uW) and area (mm^2) of each macro."""

    pe_uw: float = 120.0
    scratchpad_uw: float = 42.0
    router_uw: float = 97.0
    scu_uw: float = 5.31
    pe_mm2: float = 0.1442
    scratchpad_mm2: float = 0.013
    router_mm2: float = 0.025
    tsv_mm2: float = 0.002
    scu_mm2: float = 0.041

    @property
    def pair_uw(self) -> float:
        return self.pe_uw + self.scratchpad_uw + self.router_uw

    @property
    def pair_mm2(self) -> float:
        return self.pe_mm2 + self.scratchpad_mm2 + self.router_mm2 + self.tsv_mm2

    def ipcn_area(self, pairs: int = PAIRS_PER_TILE) -> float:
        """Area of one tile's IPCN die (router-PE pairs only)."""
        return pairs * self.pair_mm2


UNIT = UnitCosts()


class TileMode(IntEnum):
    FULL = 0
    SCRATCHPAD_ONLY = 1


def tile_breakdown(utilization: float, mode: TileMode, scus_active: int = SCUS_PER_TILE,
                   pairs: int = PAIRS_PER_TILE, costs: UnitCosts = UNIT) -> dict[str, float]:
    """Per-macro-class power (W) of one compute tile."""
    if not 0.0 <= utilization <= 1.0:
        raise PowerError(f"utilization must lie in [0, 1], got {utilization}")
    if mode == TileMode.SCRATCHPAD_ONLY:
        return {"pe": 0.0, "scratchpad": pairs * costs.scratchpad_uw * 1e-6, "router": 0.0, "scu": 0.0}
    mapped = utilization * pairs
    return {
        "pe": mapped * costs.pe_uw * 1e-6,
        "scratchpad": mapped * costs.scratchpad_uw * 1e-6,
        "router": mapped * costs.router_uw * 1e-6,
        "scu": scus_active * costs.scu_uw * 1e-6,
    }


def tile_power(utilization: float, mode: TileMode = TileMode.FULL, scus_active: int = SCUS_PER_TILE,
               pairs: int = PAIRS_PER_TILE, costs: UnitCosts = UNIT) -> float:
    """Tile power in watts.

    FULL draws ``utilization * pairs`` pair powers plus the active SCUs;
    SCRATCHPAD_ONLY keeps every scratchpad on and gates everything else.
    """
    if mode == TileMode.FULL:
        if not 0.0 <= utilization <= 1.0:
            raise PowerError(f"utilization must lie in [0, 1], got {utilization}")
        return (utilization * pairs * costs.pair_uw + scus_active * costs.scu_uw) * 1e-6
    return pairs * costs.scratchpad_uw * 1e-6


def gating_breakeven(pairs: int = PAIRS_PER_TILE, scus: int = SCUS_PER_TILE,
                     costs: UnitCosts = UNIT) -> int:
    """Fewest mapped pairs for which a FULL tile draws at least a sleeping tile."""
    need = (pairs * costs.scratchpad_uw - scus * costs.scu_uw) / costs.pair_uw
    return max(0, math.ceil(need))


# ---------------------------------------------------------------------------
# clustering and power gating


def make_clusters(n_tiles: int, size: int = 4) -> tuple[tuple[int, ...], ...]:
    """Group consecutive tiles (adjacent in layer order) into clusters of ``size``."""
    if size < 1:
        raise PowerError("cluster size must be at least 1")
    return tuple(tuple(range(lo, min(lo + size, n_tiles))) for lo in range(0, n_tiles, size))


@dataclass(frozen=True)
class ClusterState:
    clusters: tuple[tuple[int, ...], ...]
    active_cluster: int | None = None
    modes: tuple[TileMode, ...] = ()
    transitions: int = 0

    @classmethod
    def initial(cls, n_tiles: int, size: int = 4) -> "ClusterState":
        return cls(make_clusters(n_tiles, size), None, (TileMode.SCRATCHPAD_ONLY,) * n_tiles)

    def cluster_of(self, tile: int) -> int:
        for k, members in enumerate(self.clusters):
            if tile in members:
                return k
        raise PowerError(f"tile {tile} is not mapped to any cluster")


def ccpg_step(state: ClusterState, next_tile: int, wake_energy_pj: float = 0.0) -> tuple[ClusterState, float]:
    """Activate the cluster holding ``next_tile``; returns the new state and the wake energy."""
    k = state.cluster_of(next_tile)
    if k == state.active_cluster:
        return state, 0.0
    members = set(state.clusters[k])
    modes = tuple(TileMode.FULL if t in members else TileMode.SCRATCHPAD_ONLY
                  for t in range(len(state.modes)))
    return replace(state, active_cluster=k, modes=modes, transitions=state.transitions + 1), wake_energy_pj


def cluster_visits(tile_order: Sequence[int], state: ClusterState) -> list[int]:
    """Sequence of clusters activated while visiting tiles in order."""
    visits = []
    for t in tile_order:
        k = state.cluster_of(t)
        if not visits or visits[-1] != k:
            visits.append(k)
    return visits


# ---------------------------------------------------------------------------
# ledger


MACRO_CLASSES = ("pe", "scratchpad", "router", "scu", "c2c", "dram", "wake")


@dataclass
class EnergyLedger:
    """Energy (pJ) by macro class and by phase, plus run duration."""

    frequency_hz: float = 1e9
    energy: dict[str, float] = field(default_factory=lambda: {k: 0.0 for k in MACRO_CLASSES})
    phases: dict[str, dict[str, float]] = field(default_factory=dict)
    cycles: int = 0
    tokens: int = 0

    def add(self, macro: str, pj: float, phase: str = "run") -> None:
        if pj < 0:
            raise PowerError(f"negative energy {pj} for {macro}")
        if macro not in self.energy:
            raise PowerError(f"unknown macro class {macro!r}")
        self.energy[macro] += pj
        per = self.phases.setdefault(phase, {})
        per[macro] = per.get(macro, 0.0) + pj

    def add_power(self, watts: dict[str, float], cycles: float, phase: str = "run") -> None:
        """Charge a per-class power draw held for ``cycles`` cycles."""
        seconds = cycles / self.frequency_hz
        for macro, w in watts.items():
            self.add(macro, w * seconds * 1e12, phase)

    @property
    def total(self) -> float:
        return math.fsum(self.energy.values())

    @property
    def seconds(self) -> float:
        return self.cycles / self.frequency_hz

    @property
    def average_power(self) -> float:
        return self.total * 1e-12 / self.seconds if self.cycles else 0.0

    @property
    def throughput(self) -> float:
        return self.tokens / self.seconds if self.cycles else 0.0

    @property
    def efficiency(self) -> float:
        p = self.average_power
        return self.throughput / p if p else 0.0

    def class_power(self, macro: str) -> float:
        return self.energy[macro] * 1e-12 / self.seconds if self.cycles else 0.0
