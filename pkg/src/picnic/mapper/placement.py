"""Place tiled weight matrices into column-wise rectangular mesh regions.

A candidate placement is described by three factors:

* the height of each matrix's region (its width follows from the tile count),
* whether each matrix stacks under the previous one in the same column band
  or opens a new band to the right,
* whether tiles fill their region in row-major or column-major tile order.

Bands are laid out left to right in K-Q-V-O channel order.  Each candidate is
scored by an estimated collective hop cost (tree depth times payload flits
summed over every broadcast, reduction and inter-matrix hand-off) and the
cheapest feasible candidate wins.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .model import MatrixShape
from .partition import partition

ENTRY = (0, 0)
EXHAUSTIVE_LIMIT = 50_000


class PlacementError(RuntimeError):
    pass


class CapacityExceeded(PlacementError):
    def __init__(self, tiles: int, capacity: int):
        super().__init__(f"layer needs {tiles} tiles but the mesh holds {capacity}; "
                         f"split it across at least {-(-tiles // capacity)} chiplets")
        self.tiles = tiles
        self.capacity = capacity


@dataclass(frozen=True)
class Region:
    row0: int
    col0: int
    height: int
    width: int

    @property
    def size(self) -> int:
        return self.height * self.width

    def cells(self) -> list[tuple[int, int]]:
        """Router coordinates, column by column, top to bottom."""
        return [(self.row0 + r, self.col0 + c) for c in range(self.width) for r in range(self.height)]

    def contains(self, rc: tuple[int, int]) -> bool:
        r, c = rc
        return self.row0 <= r < self.row0 + self.height and self.col0 <= c < self.col0 + self.width

    def overlaps(self, other: "Region") -> bool:
        return not (self.row0 + self.height <= other.row0 or other.row0 + other.height <= self.row0
                    or self.col0 + self.width <= other.col0 or other.col0 + other.width <= self.col0)


@dataclass(frozen=True)
class Item:
    """One matrix (or a column slice of one) to be placed on a chiplet.

    ``in_tiles`` input segments by ``out_tiles`` output segments; the slice
    covers output segments ``[out_lo, out_lo + out_tiles)`` of the parent.
    """

    key: str
    name: str
    in_tiles: int
    out_tiles: int
    out_lo: int = 0
    layer: int = 0
    source: str = "entry"          # key of the item whose output feeds this one

    @property
    def tiles(self) -> int:
        return self.in_tiles * self.out_tiles


@dataclass
class MatrixPlacement:
    item: Item
    region: Region
    row_major: bool
    tiles: dict[tuple[int, int], tuple[int, int]] = field(default_factory=dict)

    def input_group(self, i: int) -> list[tuple[int, int]]:
        return [self.tiles[(i, j)] for j in range(self.item.out_tiles)]

    def output_group(self, j: int) -> list[tuple[int, int]]:
        return [self.tiles[(i, j)] for i in range(self.item.in_tiles)]


@dataclass(frozen=True)
class Candidate:
    heights: tuple[int, ...]
    stack: tuple[bool, ...]
    row_major: bool


def item_for(m: MatrixShape, tile: int, source: str = "entry") -> Item:
    grid = partition(m.in_dim, m.out_dim, tile)
    return Item(m.key, m.name, grid.rows, grid.cols, 0, m.layer, source)


def attention_items(mats: Sequence[MatrixShape], tile: int) -> list[Item]:
    """K, Q, V read the layer input; O reads the attention output of V."""
    by_name = {m.name: m for m in mats}
    v_key = by_name["W_V"].key
    return [item_for(m, tile, v_key if m.name == "W_O" else "entry") for m in mats]


def fill(item: Item, region: Region, row_major: bool) -> dict[tuple[int, int], tuple[int, int]]:
    order = ([(i, j) for i in range(item.in_tiles) for j in range(item.out_tiles)] if row_major
             else [(i, j) for j in range(item.out_tiles) for i in range(item.in_tiles)])
    cells = region.cells()
    return dict(zip(order, cells))


def layout(items: Sequence[Item], cand: Candidate, rows: int, cols: int) -> list[MatrixPlacement] | None:
    """Shelf-pack regions into column bands; ``None`` if the candidate does not fit."""
    out: list[MatrixPlacement] = []
    band_col, band_width, cursor = 0, 0, 0
    for k, item in enumerate(items):
        h = cand.heights[k]
        if h < 1 or h > rows:
            return None
        w = -(-item.tiles // h)
        if k and cand.stack[k] and cursor + h <= rows:
            row0 = cursor
            band_width = max(band_width, w)
        else:
            band_col += band_width
            band_width, row0 = w, 0
        if band_col + w > cols:
            return None
        region = Region(row0, band_col, h, w)
        cursor = row0 + h
        out.append(MatrixPlacement(item, region, cand.row_major, fill(item, region, cand.row_major)))
    return out


# ---------------------------------------------------------------------------
# cost model


def manhattan(a: tuple[int, int], b: tuple[int, int]) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def eccentricity(root: tuple[int, int], group: Iterable[tuple[int, int]]) -> int:
    """Depth of a shortest-path tree from ``root`` that spans ``group``."""
    return max((manhattan(root, g) for g in group), default=0)


def best_root(group: Sequence[tuple[int, int]]) -> tuple[tuple[int, int], int]:
    best = None
    for cand in sorted(group):
        e = eccentricity(cand, group)
        if best is None or e < best[1]:
            best = (cand, e)
    return best


def placement_cost(placements: Sequence[MatrixPlacement], flits: int,
                   entry: tuple[int, int] = ENTRY) -> int:
    """Sum over collectives of tree depth times payload flits."""
    cost = 0
    by_key = {p.item.key: p for p in placements}
    roots: dict[str, list[tuple[int, int]]] = {}
    for p in placements:
        rs = []
        for j in range(p.item.out_tiles):
            root, depth = best_root(p.output_group(j))
            cost += depth * flits
            rs.append(root)
        roots[p.item.key] = rs
    # input broadcasts, grouped by source so that shared inputs share a tree
    sources: dict[str, list[MatrixPlacement]] = {}
    for p in placements:
        sources.setdefault(p.item.source if p.item.source in by_key else "entry", []).append(p)
    for src, consumers in sources.items():
        n_in = max(c.item.in_tiles for c in consumers)
        for i in range(n_in):
            group = [rc for c in consumers if i < c.item.in_tiles for rc in c.input_group(i)]
            if src == "entry":
                root = entry
            else:
                src_roots = roots[src]
                root = src_roots[i % len(src_roots)]
            cost += eccentricity(root, group) * flits
    # Q -> K hand-off of query segments (attention layers)
    for p in placements:
        if p.item.name == "W_Q":
            k = next((q for q in placements if q.item.name == "W_K" and q.item.layer == p.item.layer), None)
            if k is not None:
                for j, root in enumerate(roots[p.item.key]):
                    cost += eccentricity(root, k.output_group(j % k.item.out_tiles)) * flits
    return cost


# ---------------------------------------------------------------------------
# search


def height_options(item: Item, rows: int, cols: int) -> list[int]:
    """Heights whose region width fits the mesh, one per distinct width."""
    opts = {}
    for h in range(1, min(rows, item.tiles) + 1):
        w = -(-item.tiles // h)
        if w <= cols and w not in opts:
            opts[w] = h
    return sorted(opts.values())


def enumerate_candidates(items: Sequence[Item], rows: int, cols: int) -> Iterable[Candidate]:
    options = [height_options(it, rows, cols) for it in items]
    stack_opts = [(False,)] + [(False, True)] * (len(items) - 1)
    for heights in itertools.product(*options):
        for stack in itertools.product(*stack_opts):
            for row_major in (True, False):
                yield Candidate(tuple(heights), tuple(stack), row_major)


def candidate_space(items: Sequence[Item], rows: int, cols: int) -> int:
    n = 2 ** len(items)
    for it in items:
        n *= len(height_options(it, rows, cols))
    return n


@dataclass
class LayerPlacement:
    placements: list[MatrixPlacement]
    candidate: Candidate
    cost: int
    rows: int
    cols: int
    searched: int

    @property
    def tiles(self) -> int:
        return sum(p.item.tiles for p in self.placements)

    @property
    def utilization(self) -> float:
        return self.tiles / (self.rows * self.cols)

    def by_name(self, name: str) -> MatrixPlacement:
        for p in self.placements:
            if p.item.name == name:
                return p
        raise KeyError(name)


def _evaluate(items, cand, rows, cols, flits):
    pl = layout(items, cand, rows, cols)
    if pl is None:
        return None
    return placement_cost(pl, flits), pl


def place(items: Sequence[Item], rows: int = 32, cols: int = 32, flits: int = 256,
          exhaustive_limit: int = EXHAUSTIVE_LIMIT) -> LayerPlacement:
    """Choose the cheapest feasible candidate for one chiplet's items."""
    total = sum(it.tiles for it in items)
    if total > rows * cols:
        raise CapacityExceeded(total, rows * cols)
    if candidate_space(items, rows, cols) <= exhaustive_limit:
        best = None
        searched = 0
        for cand in enumerate_candidates(items, rows, cols):
            searched += 1
            res = _evaluate(items, cand, rows, cols, flits)
            if res is not None and (best is None or res[0] < best[0]):
                best = (res[0], res[1], cand)
        if best is None:
            raise PlacementError("no candidate placement fits the mesh")
        return LayerPlacement(best[1], best[2], best[0], rows, cols, searched)
    return _descend(items, rows, cols, flits)


def _descend(items: Sequence[Item], rows: int, cols: int, flits: int) -> LayerPlacement:
    """Coordinate descent from the all-full-height start."""
    options = [height_options(it, rows, cols) for it in items]
    start = Candidate(tuple(min(rows, it.tiles) for it in items), tuple(False for _ in items), False)
    res = _evaluate(items, start, rows, cols, flits)
    if res is None:
        raise PlacementError("items do not fit the mesh even as full-height column bands")
    best_cost, best_pl, cand = res[0], res[1], start
    searched = 1
    improved = True
    while improved:
        improved = False
        for k in range(len(items)):
            for h in options[k]:
                trial = Candidate(cand.heights[:k] + (h,) + cand.heights[k + 1:], cand.stack,
                                  cand.row_major)
                for stack in (False, True) if k else (False,):
                    trial2 = Candidate(trial.heights, trial.stack[:k] + (stack,) + trial.stack[k + 1:],
                                       trial.row_major)
                    searched += 1
                    r = _evaluate(items, trial2, rows, cols, flits)
                    if r is not None and r[0] < best_cost:
                        best_cost, best_pl, cand, improved = r[0], r[1], trial2, True
        flipped = Candidate(cand.heights, cand.stack, not cand.row_major)
        searched += 1
        r = _evaluate(items, flipped, rows, cols, flits)
        if r is not None and r[0] < best_cost:
            best_cost, best_pl, cand, improved = r[0], r[1], flipped, True
    return LayerPlacement(best_pl, cand, best_cost, rows, cols, searched)


def fits_as_bands(items: Sequence[Item], rows: int, cols: int) -> bool:
    """Quick feasibility test: every item as a full-height column band."""
    return sum(-(-it.tiles // min(rows, it.tiles)) for it in items) <= cols
