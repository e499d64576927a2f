"""Spanning-tree broadcast and reduction, compiled to NPM rows.

Trees are built by breadth-first search with neighbours visited in N, E, S, W
order and then pruned to the routers that lead to a group member.  Each
tree node gets one command.  Commands are packed greedily into rows of at
most two distinct commands, keeping every producer in the same row as its
consumer or an earlier one, so data never waits on a later row.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from ..isa import IDLE, Instruction, Mode, NpmRow, Port, make

Coord = tuple[int, int]

ORDER = (Port.N, Port.E, Port.S, Port.W)
STEP = {Port.N: (-1, 0), Port.E: (0, 1), Port.S: (1, 0), Port.W: (0, -1)}
OPPOSITE = {Port.N: Port.S, Port.S: Port.N, Port.E: Port.W, Port.W: Port.E}


class CollectiveError(RuntimeError):
    pass


@dataclass
class Tree:
    root: Coord
    parent: dict[Coord, Coord | None]
    depth: dict[Coord, int]

    @property
    def nodes(self) -> list[Coord]:
        return list(self.parent)

    @property
    def edges(self) -> list[tuple[Coord, Coord]]:
        return [(p, c) for c, p in self.parent.items() if p is not None]

    @property
    def height(self) -> int:
        return max(self.depth.values(), default=0)

    def children(self, node: Coord) -> list[Coord]:
        return [c for c, p in self.parent.items() if p == node]


def direction(src: Coord, dst: Coord) -> Port:
    """Port of ``src`` that faces its mesh neighbour ``dst``."""
    d = (dst[0] - src[0], dst[1] - src[1])
    for port, step in STEP.items():
        if step == d:
            return port
    raise CollectiveError(f"{src} and {dst} are not neighbours")


def spanning_tree(region: Iterable[Coord], root: Coord) -> Tree:
    """BFS tree over ``region`` (ties broken N, E, S, W)."""
    cells = set(region)
    if root not in cells:
        raise CollectiveError(f"root {root} is not in the region")
    parent: dict[Coord, Coord | None] = {root: None}
    depth = {root: 0}
    queue = deque([root])
    while queue:
        node = queue.popleft()
        for port in ORDER:
            dr, dc = STEP[port]
            nb = (node[0] + dr, node[1] + dc)
            if nb in cells and nb not in parent:
                parent[nb] = node
                depth[nb] = depth[node] + 1
                queue.append(nb)
    if len(parent) != len(cells):
        missing = sorted(cells - set(parent))
        raise CollectiveError(f"region is disconnected; unreachable from {root}: {missing[:4]}")
    return Tree(root, parent, depth)


def steiner_tree(members: Iterable[Coord], root: Coord, rows: int, cols: int,
                 domain: Iterable[Coord] | None = None) -> Tree:
    """BFS tree over ``domain`` (default: the whole mesh) pruned to ``members``."""
    cells = list(domain) if domain is not None else [(r, c) for r in range(rows) for c in range(cols)]
    full = spanning_tree(cells, root)
    keep = {root}
    for m in members:
        if m not in full.parent:
            raise CollectiveError(f"member {m} is unreachable from {root}")
        node = m
        while node is not None and node not in keep:
            keep.add(node)
            node = full.parent[node]
    parent = {n: full.parent[n] for n in full.parent if n in keep}
    depth = {n: full.depth[n] for n in parent}
    return Tree(root, parent, depth)


# ---------------------------------------------------------------------------
# command generation


@dataclass
class Op:
    """One router's command within a collective, with its scheduling level."""

    node: Coord
    instr: Instruction
    level: int


def broadcast_ops(tree: Tree, source: tuple, deliveries: Mapping[Coord, tuple]) -> list[Op]:
    """Commands that copy a stream from the root to every tree node.

    ``source`` is ``("port", Port)`` for flits waiting in a root FIFO or
    ``("sp", addr)`` to stream the root's scratchpad.  ``deliveries`` maps a
    node to ``("pe",)``, ``("local",)`` or ``("sp", addr)``; other nodes only
    relay.
    """
    ops = []
    for node in sorted(tree.parent, key=lambda n: (tree.depth[n], n)):
        outs = [direction(node, c) for c in tree.children(node)]
        dl = deliveries.get(node)
        mode, addr, xfer = Mode.ROUTE, 0, False
        if dl is not None:
            if dl[0] == "pe":
                outs.append(Port.PE)
            elif dl[0] == "local":
                outs.append(Port.LOCAL)
            elif dl[0] == "tsv":
                outs.append(Port.TSV)
            elif dl[0] == "sp":
                mode, addr, xfer = Mode.SPWR, dl[1], True
            else:
                raise CollectiveError(f"unknown delivery {dl!r}")
        if node == tree.root:
            if source[0] == "sp":
                if mode == Mode.SPWR:
                    raise CollectiveError("root cannot both stream and store its scratchpad")
                instr = make(Mode.SPRD, 0, outs, True, source[1])
            else:
                instr = make(mode, [source[1]], outs, xfer, addr)
        else:
            instr = make(mode, [direction(node, tree.parent[node])], outs, xfer, addr)
        if not outs and mode != Mode.SPWR:
            raise CollectiveError(f"node {node} has nowhere to send the stream")
        ops.append(Op(node, instr, tree.depth[node]))
    return ops


def reduce_ops(tree: Tree, contributions: Mapping[Coord, Port], delivery: tuple) -> list[Op]:
    """Commands that sum one stream per member into the root.

    ``contributions`` maps members to the FIFO holding their stream;
    ``delivery`` at the root is ``("local",)``, ``("tsv",)``, ``("pe",)``,
    ``("sp", addr)`` or ``("out", Port)``.
    """
    ops = []
    height = tree.height
    for node in sorted(tree.parent, key=lambda n: (-tree.depth[n], n)):
        rd = [direction(node, c) for c in tree.children(node)]
        if node in contributions:
            rd.append(contributions[node])
        if not rd:
            raise CollectiveError(f"node {node} has no input")
        if node == tree.root:
            kind = delivery[0]
            outs, xfer, addr = [], False, 0
            if kind == "local":
                outs = [Port.LOCAL]
            elif kind == "tsv":
                outs = [Port.TSV]
            elif kind == "pe":
                outs = [Port.PE]
            elif kind == "out":
                outs = [delivery[1]]
            elif kind == "sp":
                xfer, addr = True, delivery[1]
            else:
                raise CollectiveError(f"unknown delivery {delivery!r}")
            instr = make(Mode.PSUM, rd, outs, xfer, addr)
        else:
            out = [direction(node, tree.parent[node])]
            instr = make(Mode.PSUM if len(rd) > 1 else Mode.ROUTE, rd, out)
        ops.append(Op(node, instr, height - tree.depth[node]))
    return ops


def pack_rows(op_lists: Sequence[Sequence[Op]], n_routers: int, cols: int, repeat: int) -> list[NpmRow]:
    """Pack router-disjoint op lists into rows of at most two distinct commands.

    Ops are taken in level order (producers first); a row is closed when a
    third distinct command would be needed.
    """
    seen: set[Coord] = set()
    for ops in op_lists:
        for op in ops:
            if op.node in seen:
                raise CollectiveError(f"router {op.node} appears in two merged collectives")
            seen.add(op.node)
    ordered = sorted((op for ops in op_lists for op in ops), key=lambda o: o.level)
    rows: list[NpmRow] = []
    current: dict[int, Instruction] = {}
    distinct: list[Instruction] = []

    def close():
        if current:
            rows.append(_row(current, distinct, n_routers, repeat))

    for op in ordered:
        if op.instr not in distinct and len(distinct) == 2:
            close()
            current, distinct = {}, []
        if op.instr not in distinct:
            distinct.append(op.instr)
        current[op.node[0] * cols + op.node[1]] = op.instr
    close()
    return rows


def _row(assign: Mapping[int, Instruction], distinct: Sequence[Instruction], n: int, repeat: int) -> NpmRow:
    cmds = list(distinct) + [IDLE] * (2 - len(distinct))
    select = [0] * n
    for idx, instr in assign.items():
        select[idx] = 1 if instr == cmds[0] else 2
    return NpmRow(cmds[0], cmds[1], tuple(select), repeat)


def single_rows(assign: Mapping[Coord, Instruction], n_routers: int, cols: int, repeat: int) -> list[NpmRow]:
    """Rows for independent per-router commands (no producer ordering needed)."""
    return pack_rows([[Op(node, instr, 0) for node, instr in assign.items()]], n_routers, cols, repeat)


def link_loads(tree: Tree, flits: int) -> dict[tuple[Coord, Coord], int]:
    """Flits carried by each tree edge for one broadcast or reduction."""
    return {edge: flits for edge in tree.edges}
