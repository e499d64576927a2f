"""Whole-model mapping: assign layers to chiplets and place each chiplet.

Layers that fit a chiplet get one chiplet each (an attention layer holds its
four matrices, every feed-forward matrix is its own layer).  When some layer
of a decoder does not fit, the decoder's matrices are packed greedily in
K-Q-V-O-gate-up-down order, splitting a matrix along its output tiles when
the current chiplet runs out of room.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

from ..config import HardwareConfig
from .kvcache import KvBudget, kv_budget
from .model import ModelSpec
from .placement import (CapacityExceeded, Item, LayerPlacement, PlacementError, attention_items,
                        fits_as_bands, item_for, place)

PLAN_VERSION = 1


@dataclass
class ChipletPlan:
    index: int
    decoder: int
    layer_keys: list[str]
    placement: LayerPlacement

    @property
    def tiles(self) -> int:
        return self.placement.tiles

    @property
    def utilization(self) -> float:
        return self.placement.utilization

    @property
    def has_attention(self) -> bool:
        return any(p.item.name in ("W_K", "W_V") for p in self.placement.placements)


@dataclass
class MappingPlan:
    model: ModelSpec
    hardware: HardwareConfig
    chiplets: list[ChipletPlan]
    packed: bool = False
    kv: list[KvBudget] = field(default_factory=list)

    @property
    def n_chiplets(self) -> int:
        return len(self.chiplets)

    @property
    def total_tiles(self) -> int:
        return sum(c.tiles for c in self.chiplets)

    def decoder_chiplets(self, decoder: int) -> list[ChipletPlan]:
        return [c for c in self.chiplets if c.decoder == decoder]

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": PLAN_VERSION,
            "model": vars(self.model) if not hasattr(self.model, "__dataclass_fields__")
            else {k: getattr(self.model, k) for k in self.model.__dataclass_fields__},
            "mesh": [self.hardware.mesh_rows, self.hardware.mesh_cols],
            "pe_size": self.hardware.pe_size,
            "packed": self.packed,
            "chiplets": [
                {
                    "index": c.index,
                    "decoder": c.decoder,
                    "layers": c.layer_keys,
                    "tiles": c.tiles,
                    "utilization": round(c.utilization, 6),
                    "row_major": c.placement.candidate.row_major,
                    "cost": c.placement.cost,
                    "regions": [
                        {"matrix": p.item.key, "name": p.item.name,
                         "tile_grid": [p.item.in_tiles, p.item.out_tiles], "out_lo": p.item.out_lo,
                         "region": [p.region.row0, p.region.col0, p.region.height, p.region.width]}
                        for p in c.placement.placements
                    ],
                }
                for c in self.chiplets
            ],
            "kv": [vars(k) for k in self.kv],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _signature(items: Sequence[Item]) -> tuple:
    return tuple((it.name, it.in_tiles, it.out_tiles, it.source.split(".", 1)[-1]) for it in items)


class _Placer:
    """Memoizes placements of identically shaped item lists across decoders."""

    def __init__(self, hw: HardwareConfig):
        self.hw = hw
        self.cache: dict[tuple, LayerPlacement] = {}

    def __call__(self, items: Sequence[Item]) -> LayerPlacement:
        sig = _signature(items)
        hit = self.cache.get(sig)
        if hit is None:
            hit = place(items, self.hw.mesh_rows, self.hw.mesh_cols, self.hw.pe_size)
            self.cache[sig] = hit
        return _rekey(hit, items)


def _rekey(base: LayerPlacement, items: Sequence[Item]) -> LayerPlacement:
    from .placement import MatrixPlacement
    pls = [MatrixPlacement(it, p.region, p.row_major, dict(p.tiles))
           for it, p in zip(items, base.placements)]
    return LayerPlacement(pls, base.candidate, base.cost, base.rows, base.cols, base.searched)


def decoder_layers(model: ModelSpec, layer: int, tile: int) -> list[list[Item]]:
    att = attention_items(model.attention_matrices(layer), tile)
    ff = [item_for(m, tile) for m in model.feed_forward_matrices(layer)]
    return [att] + [[it] for it in ff]


def _pack(items: Sequence[Item], hw: HardwareConfig) -> list[list[Item]]:
    rows, cols = hw.mesh_rows, hw.mesh_cols
    chiplets: list[list[Item]] = [[]]
    queue = list(items)
    while queue:
        item = queue.pop(0)
        current = chiplets[-1]
        if fits_as_bands(current + [item], rows, cols):
            current.append(item)
            continue
        # largest output-tile slice that still fits
        lo, hi = 0, item.out_tiles
        while lo < hi:
            mid = (lo + hi + 1) // 2
            part = Item(item.key, item.name, item.in_tiles, mid, item.out_lo, item.layer, item.source)
            if fits_as_bands(current + [part], rows, cols):
                lo = mid
            else:
                hi = mid - 1
        if lo == 0:
            if not current:
                raise PlacementError(f"{item.key}: a single tile column does not fit the mesh")
            chiplets.append([])
            queue.insert(0, item)
            continue
        current.append(Item(item.key, item.name, item.in_tiles, lo, item.out_lo, item.layer, item.source))
        rest = Item(item.key, item.name, item.in_tiles, item.out_tiles - lo, item.out_lo + lo,
                    item.layer, item.source)
        chiplets.append([])
        queue.insert(0, rest)
    return [c for c in chiplets if c]


def build_plan(model: ModelSpec, hw: HardwareConfig, pack: bool | None = None,
               context: int | None = None) -> MappingPlan:
    """Map every decoder of ``model`` onto chiplets.

    ``pack=None`` picks one-layer-per-chiplet when every layer fits and
    packing otherwise.  ``context`` (tokens) sizes the KV budget check.
    """
    placer = _Placer(hw)
    cap = hw.pairs
    layer_sets = [decoder_layers(model, d, hw.pe_size) for d in range(model.num_layers)]
    fits = all(sum(it.tiles for it in layer) <= cap and fits_as_bands(layer, hw.mesh_rows, hw.mesh_cols)
               for layer in layer_sets[0])
    if pack is None:
        pack = not fits
    if not pack and not fits:
        big = max(layer_sets[0], key=lambda l: sum(it.tiles for it in l))
        raise CapacityExceeded(sum(it.tiles for it in big), cap)
    chiplets: list[ChipletPlan] = []
    for d, layers in enumerate(layer_sets):
        groups = _pack([it for layer in layers for it in layer], hw) if pack else layers
        for group in groups:
            keys = sorted({f"L{d}.{'attention' if it.name in ('W_K', 'W_Q', 'W_V', 'W_O') else it.name}"
                           for it in group})
            chiplets.append(ChipletPlan(len(chiplets), d, keys, placer(group)))
    plan = MappingPlan(model, hw, chiplets, pack)
    if context is not None:
        plan.kv = [kv_budget(plan, d, context) for d in range(model.num_layers)]
    return plan
