"""Compile one attention layer into NPM rows for cycle-level simulation.

The schedule processes tokens one at a time (decode style, causal).  For
token ``t`` it broadcasts the input segments to the K, Q and V crossbars,
reduces the projections, appends ``k_t`` and ``v_t`` to the cyclic KV
scratchpads, computes scores with the router MACs, runs softmax on the
score host's SCU, forms the probability-weighted sum of values and finally
feeds the O projection, whose output segments leave through even-column
TSV ports.

Per-router scratchpad map (word addresses)::

    Q_ADDR  query segment assembled at the Q reduction root
    QOP     query operand copy in every K cache member
    O_ADDR  attention output segment at the V reduction root
    NEGINF  constant used to reset the running max
    MAX     running max at the score host
    NTAB    table of softmax lengths (the header word for the SCU)
    S_BASE  score buffer at the score host, member-major order
    P_BASE  probability buffer in the V cache members
    K_BASE  keys: block b, dim d, lane k at K_BASE + b*T*16 + d*16 + k
    V_BASE  values: local token L, dim d at V_BASE + L*16 + d
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..fixedpoint import NumericMode, FIXED
from ..isa import (DEFAULT_BANK_ROWS, SP_WORDS, Instruction, Mode, NpmRow, Port, ProgramBuilder, encode,
                   make)
from ..mesh import FIFO_DEPTH, N_MACS, NEG_INF
from ..scu import OUT_FRAC, exact_softmax
from .collectives import (Op, broadcast_ops, pack_rows, reduce_ops, single_rows,
                          steiner_tree)
from .placement import LayerPlacement, MatrixPlacement, best_root, eccentricity

Coord = tuple[int, int]

SCHEDULE_VERSION = 1
Q_ADDR = 0
QOP = 16
O_ADDR = 32
NEGINF = 48
MAX = 49
NTAB = 50


class ScheduleError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# weights and oracles


@dataclass
class AttentionWeights:
    """Integer weight codes (``in x out``) and the real value of one code."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    scales: dict[str, float]
    score_scale: float = 1.0        # exact mode: real value of one raw score unit

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    def matrix(self, name: str) -> np.ndarray:
        return {"W_Q": self.wq, "W_K": self.wk, "W_V": self.wv, "W_O": self.wo}[name]

    def real(self, name: str) -> np.ndarray:
        return self.matrix(name).astype(float) * self.scales[name]


def synthetic_weights(dim: int, seed: int = 0, head_dim: int | None = None) -> AttentionWeights:
    """Seeded uniform int8 codes scaled so activations stay near unit size.

    The 1/sqrt(d) attention scaling is folded into the W_Q scale.
    """
    rng = np.random.default_rng(seed)
    mats = [rng.integers(-127, 128, size=(dim, dim), dtype=np.int64) for _ in range(4)]
    rms = math.sqrt((127 * 128) / 3.0)        # rms of a uniform int8 code
    base = 1.0 / (math.sqrt(dim) * rms) * math.sqrt(3.0)
    d = head_dim or dim
    scales = {"W_Q": base / math.sqrt(d), "W_K": base, "W_V": base, "W_O": base}
    # exact mode: raw scores are products of two dim-sized integer dot products
    raw = (math.sqrt(dim) * rms) ** 2 * math.sqrt(dim)
    return AttentionWeights(mats[0], mats[1], mats[2], mats[3], scales, 4.0 / raw)


def attention_exact(w: AttentionWeights, xs: Sequence[Sequence[int]]) -> list[list[int]]:
    """Integer reference: projections, raw scores, :func:`exact_softmax`, P.V, O."""
    out = []
    keys, values = [], []
    for x in xs:
        xv = np.asarray(x, dtype=object)
        q = xv.dot(w.wq.astype(object))
        keys.append(xv.dot(w.wk.astype(object)))
        values.append(xv.dot(w.wv.astype(object)))
        scores = [int(q.dot(k)) for k in keys]
        p = exact_softmax(scores, w.score_scale)
        o = sum((pi * v for pi, v in zip(p, values)), np.zeros(w.dim, dtype=object))
        out.append([int(v) for v in o.dot(w.wo.astype(object))])
    return out


def attention_float(w: AttentionWeights, xs: Sequence[Sequence[float]]) -> list[np.ndarray]:
    """Floating-point reference with the real-valued weights."""
    wq, wk, wv, wo = (w.real(n) for n in ("W_Q", "W_K", "W_V", "W_O"))
    out = []
    keys, values = [], []
    for x in xs:
        xv = np.asarray(x, dtype=float)
        q = xv @ wq
        keys.append(xv @ wk)
        values.append(xv @ wv)
        s = np.array([q @ k for k in keys])
        e = np.exp(s - s.max())
        p = e / e.sum()
        out.append((p @ np.array(values)) @ wo)
    return out


def attention_inputs(w: AttentionWeights, xs_real: Sequence[Sequence[float]]) -> dict[str, float]:
    """Largest per-token RMS of the vector each matrix sees.

    Used as the calibration magnitude that sets each ADC's full scale; the
    per-token maximum keeps short contexts (where the attention output is a
    single value vector) inside the range.
    """
    xs = np.asarray(xs_real, dtype=float)
    wq, wk, wv = (w.real(n) for n in ("W_Q", "W_K", "W_V"))
    o_rows = []
    keys, values = [], []
    for x in xs:
        q = x @ wq
        keys.append(x @ wk)
        values.append(x @ wv)
        s = np.array([q @ k for k in keys])
        e = np.exp(s - s.max())
        o_rows.append((e / e.sum()) @ np.array(values))
    rx = float(np.sqrt(np.mean(xs ** 2, axis=1)).max())
    ro = float(np.sqrt(np.mean(np.asarray(o_rows) ** 2, axis=1)).max())
    return {"W_Q": rx, "W_K": rx, "W_V": rx, "W_O": ro}


# ---------------------------------------------------------------------------
# schedule


@dataclass
class Phase:
    name: str
    token: int
    rows: list[NpmRow] = field(default_factory=list)


@dataclass
class Schedule:
    rows: int
    cols: int
    tile: int
    dim: int
    seq_len: int
    unroll: int
    mode: NumericMode
    placement: LayerPlacement
    entry: Coord
    score_host: Coord
    egress: list[list[tuple[Coord, int]]]        # per token: (root, segment) in emission order
    preload: dict[Coord, dict[int, int]]
    phases: list[Phase] = field(default_factory=list)
    layout: dict[str, int] = field(default_factory=dict)
    bank_rows: int = DEFAULT_BANK_ROWS

    @property
    def n_routers(self) -> int:
        return self.rows * self.cols

    @property
    def all_rows(self) -> list[NpmRow]:
        return [r for p in self.phases for r in p.rows]

    def images(self, csr: dict | None = None):
        pb = ProgramBuilder(self.n_routers, self.bank_rows, csr)
        for row in self.all_rows:
            pb.add_row(row)
        return pb.images()

    def to_dict(self) -> dict:
        return {
            "version": SCHEDULE_VERSION,
            "mesh": [self.rows, self.cols],
            "tile": self.tile,
            "dim": self.dim,
            "seq_len": self.seq_len,
            "unroll": self.unroll,
            "numeric": self.mode.name,
            "entry": list(self.entry),
            "score_host": list(self.score_host),
            "layout": self.layout,
            "phases": [
                {"name": p.name, "token": p.token,
                 "rows": [{"cmd1": _word(r.cmd1), "cmd2": _word(r.cmd2), "repeat": r.repeat,
                           "select": "".join(str(s) for s in r.select)} for r in p.rows]}
                for p in self.phases
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _word(instr: Instruction) -> str:
    return f"0x{encode(instr):08X}"


def _chunks(n: int, size: int = FIFO_DEPTH) -> list[tuple[int, int]]:
    return [(lo, min(size, n - lo)) for lo in range(0, n, size)]


class _Emitter:
    def __init__(self, sched: Schedule):
        self.s = sched

    def phase(self, name: str, token: int) -> Phase:
        p = Phase(name, token)
        self.s.phases.append(p)
        return p

    def collectives(self, phase: Phase, op_lists: Sequence[Sequence[Op]], repeat: int) -> None:
        """Pack collectives; router-disjoint ones share rows."""
        batches: list[tuple[set, list]] = []
        for ops in op_lists:
            nodes = {op.node for op in ops}
            for used, members in batches:
                if not used & nodes:
                    used |= nodes
                    members.append(ops)
                    break
            else:
                batches.append((set(nodes), [ops]))
        for _, members in batches:
            phase.rows += pack_rows(members, self.s.n_routers, self.s.cols, repeat)

    def single(self, phase: Phase, assign: dict[Coord, Instruction], repeat: int) -> None:
        if assign:
            phase.rows += single_rows(assign, self.s.n_routers, self.s.cols, repeat)


def _counts(n: int, m: int) -> list[int]:
    """Tokens held by each of ``m`` cyclic members after ``n`` appends."""
    return [(n - g + m - 1) // m if n > g else 0 for g in range(m)]


def schedule_attention(placement: LayerPlacement, tile: int, dim: int, seq_len: int,
                       unroll: int = 1, mode: NumericMode = FIXED, rows: int | None = None,
                       cols: int | None = None, bank_rows: int = DEFAULT_BANK_ROWS,
                       entry: Coord = (0, 0)) -> Schedule:
    """Build the row program for ``seq_len`` tokens of single-head attention."""
    rows = rows or placement.rows
    cols = cols or placement.cols
    if tile > N_MACS:
        raise ScheduleError(f"tile size {tile} exceeds the {N_MACS} MAC lanes")
    if unroll < 1 or N_MACS % unroll:
        raise ScheduleError(f"unroll factor must divide {N_MACS}, got {unroll}")
    pq, pk, pv, po = (placement.by_name(n) for n in ("W_Q", "W_K", "W_V", "W_O"))
    n_seg = -(-dim // tile)
    for p in (pq, pk, pv, po):
        if p.item.in_tiles != n_seg or p.item.out_tiles != n_seg:
            raise ScheduleError(f"{p.item.key}: expected a {n_seg}x{n_seg} tile grid "
                                f"(single head, kv_dim == dim)")
    if entry[1] % 2:
        raise ScheduleError("the host entry router must sit in an even column")
    m = pk.item.in_tiles
    per_member = -(-seq_len // m)
    if per_member > FIFO_DEPTH:
        raise ScheduleError(f"{per_member} tokens per KV member exceed the {FIFO_DEPTH}-flit FIFOs")

    # scratchpad layout
    s_base = NTAB + seq_len + 1
    p_base = s_base + seq_len
    k_base = -(-(p_base + seq_len) // 16) * 16
    blocks = -(-per_member // N_MACS)
    v_base = k_base + blocks * tile * N_MACS
    end = v_base + per_member * N_MACS + N_MACS
    if end > SP_WORDS:
        raise ScheduleError(f"schedule needs {end} scratchpad words, only {SP_WORDS} exist")
    layout = {"Q_ADDR": Q_ADDR, "QOP": QOP, "O_ADDR": O_ADDR, "NEGINF": NEGINF, "MAX": MAX,
              "NTAB": NTAB, "S_BASE": s_base, "P_BASE": p_base, "K_BASE": k_base,
              "V_BASE": v_base, "END": end}

    score_host = _score_host(pk)
    preload: dict[Coord, dict[int, int]] = {score_host: {NEGINF: NEG_INF}}
    for n in range(1, seq_len + 1):
        preload[score_host][NTAB + n] = n

    sched = Schedule(rows, cols, tile, dim, seq_len, unroll, mode, placement, entry, score_host,
                     [], preload, layout=layout, bank_rows=bank_rows)
    em = _Emitter(sched)
    qk_shift = 0 if mode.exact else mode.frac_bits
    pv_shift = 0 if mode.exact else OUT_FRAC
    q_roots = [best_root(pq.output_group(j))[0] for j in range(n_seg)]
    o_roots = [_egress_root(po.output_group(j), rows, cols) for j in range(n_seg)]

    def tree(members, root):
        return steiner_tree(members, root, rows, cols)

    for t in range(seq_len):
        n = t + 1
        member, local = t % m, t // m
        counts = _counts(n, m)

        # 1. layer input to the K, Q, V crossbars
        ph = em.phase("input_broadcast", t)
        for i in range(n_seg):
            group = pq.input_group(i) + pk.input_group(i) + pv.input_group(i)
            ops = broadcast_ops(tree(group, entry), ("port", Port.TSV), {g: ("pe",) for g in group})
            em.collectives(ph, [ops], tile)

        # 2. projections: Q to its root, K and V to this token's cache member
        ph = em.phase("partial_reduce", t)
        ops = []
        for j in range(n_seg):
            g = pq.output_group(j)
            ops.append(reduce_ops(tree(g, q_roots[j]), {r: Port.PE for r in g}, ("sp", Q_ADDR)))
            g = pk.output_group(j)
            ops.append(reduce_ops(tree(g, g[member]), {r: Port.PE for r in g}, ("local",)))
            g = pv.output_group(j)
            ops.append(reduce_ops(tree(g, g[member]), {r: Port.PE for r in g},
                                  ("sp", v_base + local * N_MACS)))
        em.collectives(ph, ops, tile)

        ph = em.phase("kv_append", t)
        blk, lane = divmod(local, N_MACS)
        for d in range(tile):
            addr = k_base + blk * tile * N_MACS + d * N_MACS + lane
            em.single(ph, {pk.output_group(j)[member]: make(Mode.SPWR, [Port.LOCAL], 0, True, addr)
                           for j in range(n_seg)}, 1)

        # 3. query segments to every K member of the matching column
        ph = em.phase("query_broadcast", t)
        ops = []
        for j in range(n_seg):
            g = pk.output_group(j)
            ops.append(broadcast_ops(tree(g, q_roots[j]), ("sp", Q_ADDR), {r: ("sp", QOP) for r in g}))
        em.collectives(ph, ops, tile)

        # 4. scores, unrolled over ``unroll`` tokens per member per pass
        ph = em.phase("dmac_qk", t)
        offsets = [sum(counts[:g]) for g in range(m)]
        for p0 in range(0, max(counts), unroll):
            live = [g for g in range(m) if counts[g] > p0]
            routers = [pk.output_group(j)[g] for g in live for j in range(n_seg)]
            em.single(ph, {r: make(Mode.SPRD, 0, [Port.LOCAL], True, QOP) for r in routers}, tile)
            blk, lane = divmod(p0, N_MACS)
            base = k_base + blk * tile * N_MACS + lane
            em.single(ph, {r: make(Mode.DMAC, [Port.LOCAL], 0, True, base) for r in routers}, tile)
            by_v: dict[int, list[int]] = {}
            for g in live:
                by_v.setdefault(min(unroll, counts[g] - p0), []).append(g)
            for v, gs in sorted(by_v.items()):
                em.single(ph, {pk.output_group(j)[g]: make(Mode.DMAC, 0, [Port.LOCAL], False, qk_shift)
                               for g in gs for j in range(n_seg)}, v)
            for v, gs in sorted(by_v.items()):
                for g in gs:
                    grp = [pk.output_group(j)[g] for j in range(n_seg)]
                    ops = reduce_ops(tree(grp, score_host), {r: Port.LOCAL for r in grp},
                                     ("sp", s_base + offsets[g] + p0))
                    em.collectives(ph, [ops], v)

        # 5. running max and softmax on the score host's SCU
        ph = em.phase("softmax", t)
        em.single(ph, {score_host: make(Mode.SPRD, 0, [Port.LOCAL], True, NEGINF)}, 1)
        em.single(ph, {score_host: make(Mode.SPWR, [Port.LOCAL], 0, True, MAX)}, 1)
        for lo, cnt in _chunks(n):
            em.single(ph, {score_host: make(Mode.SPRD, 0, [Port.LOCAL], True, s_base + lo)}, cnt)
            em.single(ph, {score_host: make(Mode.PMAX, [Port.LOCAL], 0, True, MAX)}, cnt)
        em.single(ph, {score_host: make(Mode.SPRD, 0, [Port.TSV], True, NTAB + n)}, 1)
        em.single(ph, {score_host: make(Mode.SPRD, 0, [Port.TSV], True, MAX)}, 1)
        em.single(ph, {score_host: make(Mode.SPRD, 0, [Port.TSV], True, s_base)}, n)

        # 6. probabilities to every V member that holds tokens
        ph = em.phase("prob_broadcast", t)
        holders = [pv.output_group(j)[g] for g in range(m) if counts[g] for j in range(n_seg)]
        for lo, cnt in _chunks(n):
            ops = broadcast_ops(tree(holders, score_host), ("port", Port.TSV),
                                {r: ("sp", p_base + lo) for r in holders})
            em.collectives(ph, [ops], cnt)

        # 7. P.V on each member, then across members of each V column
        ph = em.phase("dmac_sv", t)
        by_c: dict[int, list[int]] = {}
        for g in range(m):
            if counts[g]:
                by_c.setdefault(counts[g], []).append(g)
        for c, gs in sorted(by_c.items()):
            em.single(ph, {pv.output_group(j)[g]: make(Mode.SPRD, 0, [Port.LOCAL], True, p_base + offsets[g])
                           for g in gs for j in range(n_seg)}, c)
        for c, gs in sorted(by_c.items()):
            em.single(ph, {pv.output_group(j)[g]: make(Mode.DMAC, [Port.LOCAL], 0, True, v_base)
                           for g in gs for j in range(n_seg)}, c)
        em.single(ph, {r: make(Mode.DMAC, 0, [Port.LOCAL], False, pv_shift) for r in holders}, tile)
        ops = []
        o_src = []
        for j in range(n_seg):
            grp = [pv.output_group(j)[g] for g in range(m) if counts[g]]
            root = best_root(grp)[0]
            o_src.append(root)
            ops.append(reduce_ops(tree(grp, root), {r: Port.LOCAL for r in grp}, ("sp", O_ADDR)))
        em.collectives(ph, ops, tile)

        # 8. O projection and egress
        ph = em.phase("output_reduction", t)
        ops = []
        for j in range(n_seg):
            g = po.input_group(j)
            ops.append(broadcast_ops(tree(g, o_src[j]), ("sp", O_ADDR), {r: ("pe",) for r in g}))
        em.collectives(ph, ops, tile)
        ops = []
        for j in range(n_seg):
            g = po.output_group(j)
            ops.append(reduce_ops(tree(g, o_roots[j]), {r: Port.PE for r in g}, ("tsv",)))
        em.collectives(ph, ops, tile)
        sched.egress.append([(o_roots[j], j) for j in range(n_seg)])
    return sched


def _score_host(pk: MatrixPlacement) -> Coord:
    """Odd-column K router closest (by eccentricity) to all K routers."""
    routers = list(pk.tiles.values())
    odd = [r for r in routers if r[1] % 2]
    if not odd:
        raise ScheduleError("the K region has no odd-column router to host the SCU")
    return min(sorted(odd), key=lambda r: eccentricity(r, routers))


def _egress_root(group: Sequence[Coord], rows: int, cols: int) -> Coord:
    even = [g for g in group if g[1] % 2 == 0]
    if even:
        return best_root(even)[0]
    cands = [(r, c) for r in range(rows) for c in range(0, cols, 2)]
    return min(cands, key=lambda x: (eccentricity(x, group), x))
