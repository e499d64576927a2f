"""Analytic per-token latency model for full-size mapping plans.

Full-size chiplets (32x32 routers, 256-wide tiles) are too large to clock
cycle by cycle in Python for thousands of tokens, so each chiplet's mesh
phase is costed from the same dataflow the desk schedule executes:

* input broadcast: one ``T``-flit segment per input tile row, streamed
  back to back, plus the tree depth;
* SMAC: the configured crossbar latency;
* reduction: ``T`` flits plus the reduction tree depth;
* attention core at context ``n``: score passes of 16 tokens per K member
  (each pass streams the query, runs the DMAC, flushes 16 lanes and reduces
  every member's scores to the score host), two-pass softmax over ``n``
  scores, the probability broadcast and the weighted sum over the tokens
  held by each V member.

Every token visits the chiplets in layer order and the layer output crosses
the C2C fabric between consecutive chiplets after the mesh phase finishes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import HardwareConfig
from .mapper.placement import ENTRY, MatrixPlacement, best_root, eccentricity
from .mapper.plan import ChipletPlan, MappingPlan
from .mesh import N_MACS

QKV = ("W_K", "W_Q", "W_V")
GATE_UP = ("W_gate", "W_up")


@dataclass(frozen=True)
class ChipletTiming:
    index: int
    static_cycles: int           # context-independent part of the mesh phase
    kv_members: int              # K members per column (0 if no attention core here)
    kv_columns: int
    score_depth: int
    value_depth: int
    tile: int = 256

    def core_cycles(self, n: np.ndarray | int) -> np.ndarray:
        """Attention-core cycles at context length ``n`` (vectorized)."""
        n = np.asarray(n, dtype=np.int64)
        if not self.kv_members:
            return np.zeros_like(n)
        m = self.kv_members
        per_member = -(-n // m)
        passes = -(-per_member // N_MACS)
        t = self.tile
        score_pass = 2 * t + N_MACS + m * (N_MACS + self.score_depth)
        softmax = 2 * n + 2 + 3
        broadcast = n + self.value_depth
        weighted = 2 * per_member + t + (t + self.value_depth)
        return passes * score_pass + softmax + broadcast + weighted


def _bcast(groups: list[list[tuple[int, int]]], root: tuple[int, int], tile: int) -> int:
    depth = max((eccentricity(root, g) for g in groups), default=0)
    return len(groups) * tile + depth


def _reduce(pls: list[MatrixPlacement], tile: int) -> int:
    depth = 0
    for p in pls:
        for j in range(p.item.out_tiles):
            depth = max(depth, best_root(p.output_group(j))[1])
    return tile + depth


def _stage(pls: list[MatrixPlacement], hw: HardwareConfig, root=ENTRY) -> int:
    if not pls:
        return 0
    n_in = max(p.item.in_tiles for p in pls)
    groups = [[rc for p in pls if i < p.item.in_tiles for rc in p.input_group(i)] for i in range(n_in)]
    return _bcast(groups, root, hw.pe_size) + hw.smac_latency + _reduce(pls, hw.pe_size)


def chiplet_timing(chiplet: ChipletPlan, hw: HardwareConfig) -> ChipletTiming:
    pls = chiplet.placement.placements
    by = lambda names: [p for p in pls if p.item.name in names]
    static = _stage(by(QKV), hw)
    o = by(("W_O",))
    if o:
        root = best_root(o[0].input_group(0))[0]
        static += _stage(o, hw, root)
    gu = by(GATE_UP)
    if gu:
        static += _stage(gu, hw) + hw.pe_size          # gate * up on the router MACs
    static += _stage(by(("W_down",)), hw)
    k = by(("W_K",))
    if not k:
        return ChipletTiming(chiplet.index, static, 0, 0, 0, 0, hw.pe_size)
    pk = k[0]
    routers = list(pk.tiles.values())
    odd = [r for r in routers if r[1] % 2] or routers
    host = min(sorted(odd), key=lambda r: eccentricity(r, routers))
    score_depth = eccentricity(host, routers)
    v = by(("W_V",))
    v_routers = list(v[0].tiles.values()) if v else routers
    value_depth = eccentricity(host, v_routers)
    return ChipletTiming(chiplet.index, static, pk.item.in_tiles, pk.item.out_tiles, score_depth,
                         value_depth, hw.pe_size)


@dataclass
class TimingModel:
    plan: MappingPlan
    chiplets: list[ChipletTiming]
    handoff_bits: int
    handoff_cycles: int

    @classmethod
    def build(cls, plan: MappingPlan) -> "TimingModel":
        hw = plan.hardware
        cache: dict[tuple, ChipletTiming] = {}
        timings = []
        for c in plan.chiplets:
            # identically shaped chiplets share one placement, so time them once
            key = (id(c.placement.candidate),
                   tuple((p.item.name, p.item.in_tiles, p.item.out_tiles) for p in c.placement.placements))
            hit = cache.get(key)
            if hit is None:
                hit = cache[key] = chiplet_timing(c, hw)
            timings.append(replace(hit, index=c.index))
        bits = plan.model.embed_dim * hw.bit_width
        cycles = hw.link_latency + -(-bits // hw.link_bits_per_cycle)
        return cls(plan, timings, bits, cycles)

    def mesh_cycles(self, n: np.ndarray) -> np.ndarray:
        """Per-chiplet mesh-phase cycles, shape (chiplets, len(n))."""
        n = np.asarray(n, dtype=np.int64)
        return np.stack([c.static_cycles + c.core_cycles(n) for c in self.chiplets])

    def token_cycles(self, n: np.ndarray) -> np.ndarray:
        """Wall-clock cycles for the token at context position ``n`` (1-based)."""
        mesh = self.mesh_cycles(n).sum(axis=0)
        return mesh + (len(self.chiplets) + 1) * self.handoff_cycles
