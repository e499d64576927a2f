"""Cycle-level model of the IPCN 2D mesh: routers, FIFOs, macros and attached devices.

Every router owns seven input FIFOs indexed by :class:`~picnic.isa.Port`.
A FIFO named after a direction holds flits that arrived *from* that
direction, ``PE`` holds results returned by the attached crossbar, ``TSV``
holds flits from the vertical port and ``LOCAL`` is a loopback queue the
router writes to itself.

The clock is two-phase.  In phase one every active router inspects the
start-of-cycle state and decides what to pop, push and write; in phase two
all pops are committed, then all pushes, then the attached devices tick.
Because each FIFO has a single writer the outcome does not depend on router
evaluation order.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .fixedpoint import NumericMode, FIXED, saturate, shift_round
from .isa import (CSR_DEFAULTS, IDLE, NUM_PORTS, SP_WORDS, Instruction, Mode, Port, mask_ports,
                  mode_stride)
from .pe import PeArray
from .scu import ScuPort

FIFO_DEPTH = 32
N_MACS = 16
ACC_BITS = 128
ACC_MAX = (1 << (ACC_BITS - 1)) - 1
ACC_MIN = -(1 << (ACC_BITS - 1))
NEG_INF = -(1 << 63)

DIRECTIONS = (Port.N, Port.E, Port.S, Port.W)
OPPOSITE = {Port.N: Port.S, Port.S: Port.N, Port.E: Port.W, Port.W: Port.E}
STEP = {Port.N: (-1, 0), Port.E: (0, 1), Port.S: (1, 0), Port.W: (0, -1)}


class MeshError(RuntimeError):
    pass


class DeadlockError(MeshError):
    pass


@dataclass(slots=True)
class Flit:
    payload: int
    tag: object = None      # debugging metadata only, never read by the hardware model


class Fifo:
    """Bounded FIFO whose entries become visible ``ready`` cycles after the push."""

    __slots__ = ("depth", "items", "pushes", "pops", "high_water")

    def __init__(self, depth: int = FIFO_DEPTH):
        self.depth = depth
        self.items: deque[tuple[int, Flit]] = deque()
        self.pushes = 0
        self.pops = 0
        self.high_water = 0

    def __len__(self) -> int:
        return len(self.items)

    def space(self) -> int:
        return self.depth - len(self.items)

    def head(self, cycle: int) -> Flit | None:
        if self.items and self.items[0][0] <= cycle:
            return self.items[0][1]
        return None

    def push(self, flit: Flit, ready: int = 0) -> None:
        if len(self.items) >= self.depth:
            raise MeshError("FIFO overflow")
        self.items.append((ready, flit))
        self.pushes += 1
        if len(self.items) > self.high_water:
            self.high_water = len(self.items)

    def pop(self) -> Flit:
        self.pops += 1
        return self.items.popleft()[1]

    def values(self) -> list[int]:
        return [f.payload for _, f in self.items]


@dataclass
class MacBank:
    """The router's 16 non-weighted MAC units."""

    acc: list[int] = field(default_factory=lambda: [0] * N_MACS)
    overflow: bool = False
    saturating: bool = True
    cycles: int = 0

    def mac(self, lane: int, a: int, b: int) -> None:
        v = self.acc[lane] + a * b
        if self.saturating and not ACC_MIN <= v <= ACC_MAX:
            v = ACC_MAX if v > 0 else ACC_MIN
            self.overflow = True
        self.acc[lane] = v

    def clear(self, lane: int | None = None) -> None:
        if lane is None:
            self.acc = [0] * N_MACS
        else:
            self.acc[lane] = 0

    def run(self, pairs: Sequence[tuple[Sequence[int], Sequence[int]]]) -> list[int]:
        """Accumulate up to 16 independent stream pairs, one MAC per lane.

        Every lane consumes one element pair per cycle, so the bank finishes
        after as many cycles as the longest stream.
        """
        if len(pairs) > N_MACS:
            raise MeshError(f"{len(pairs)} streams exceed the {N_MACS} MAC units")
        for lane, (a, b) in enumerate(pairs):
            if len(a) != len(b):
                raise MeshError(f"lane {lane}: operand streams differ in length")
        longest = max((len(a) for a, _ in pairs), default=0)
        for t in range(longest):
            for lane, (a, b) in enumerate(pairs):
                if t < len(a):
                    self.mac(lane, a[t], b[t])
            self.cycles += 1
        return [self.acc[lane] for lane in range(len(pairs))]


def dmac_step(a: Sequence[int], b: Sequence[int], bank: MacBank | None = None, lane: int = 0) -> int:
    """Dot product of two operand streams on one accumulator."""
    bank = bank or MacBank()
    bank.clear(lane)
    if len(a) != len(b):
        raise MeshError("operand streams differ in length")
    for x, y in zip(a, b):
        bank.mac(lane, x, y)
        bank.cycles += 1
    return bank.acc[lane]


@dataclass(frozen=True)
class Decoded:
    """Instruction fields pre-split into port lists for the inner loop."""

    mode: int
    rd: tuple[int, ...]
    out: tuple[int, ...]
    xfer: bool
    addr: int
    stride: int
    word: Instruction

    @classmethod
    def of(cls, instr: Instruction, csr: Mapping[str, int]) -> "Decoded":
        return cls(instr.mode_sel, tuple(int(p) for p in mask_ports(instr.rd_en)),
                   tuple(int(p) for p in mask_ports(instr.out_en)), bool(instr.intxfer_en),
                   instr.sp_addr, mode_stride(csr, instr.mode_sel), instr)


class Router:
    def __init__(self, row: int, col: int, cols: int, depth: int = FIFO_DEPTH):
        self.row = row
        self.col = col
        self.index = row * cols + col
        self.fifos = [Fifo(depth) for _ in range(NUM_PORTS)]
        self.scratchpad: dict[int, int] = {}
        self.macs = MacBank()
        self.cmd: Decoded | None = None
        self.repeat = 0
        self.iteration = 0
        self.stall_cycles = 0
        self.busy_cycles = 0

    @property
    def vertical(self) -> str:
        """Odd columns reach the SCU die, even columns the optical die."""
        return "TSV_up" if self.col % 2 else "TSV_down"

    @property
    def port_map(self) -> dict[int, str]:
        names = {int(p): p.name for p in Port}
        names[int(Port.TSV)] = self.vertical
        return names

    @property
    def done(self) -> bool:
        return self.cmd is None or self.iteration >= self.repeat

    def sp_read(self, addr: int) -> int:
        if not 0 <= addr < SP_WORDS:
            raise MeshError(f"router {self.index}: scratchpad address {addr} out of range")
        return self.scratchpad.get(addr, 0)

    def sp_write(self, addr: int, value: int) -> None:
        if not 0 <= addr < SP_WORDS:
            raise MeshError(f"router {self.index}: scratchpad address {addr} out of range")
        self.scratchpad[addr] = value

    def assign(self, cmd: Decoded | None, repeat: int) -> None:
        self.cmd = cmd
        self.repeat = repeat if cmd is not None else 0
        self.iteration = 0


@dataclass
class PeDevice:
    """Streams vectors through a :class:`PeArray` attached to a router's PE port.

    The array consumes one input element per cycle from its input buffer.
    Once ``array.size`` elements are in, the outputs become available after
    the remainder of ``latency`` (at least one cycle) and return into the
    router's PE FIFO one per cycle, honouring backpressure.
    """

    array: PeArray
    latency: int = 256
    out_count: int | None = None
    depth: int = FIFO_DEPTH
    inbox: deque = field(default_factory=deque)
    vector: list = field(default_factory=list)
    pending: deque = field(default_factory=deque)
    vectors: int = 0

    def has_space(self) -> bool:
        return len(self.inbox) < self.depth

    def push(self, value: int) -> None:
        if not self.has_space():
            raise MeshError("PE input buffer overflow")
        self.inbox.append(value)

    @property
    def busy(self) -> bool:
        return bool(self.inbox or self.vector or self.pending)

    def tick(self, cycle: int, fifo: Fifo, hop: int) -> int:
        moved = 0
        if self.inbox:
            self.vector.append(self.inbox.popleft())
            moved += 1
            if len(self.vector) == self.array.size:
                y = self.array.smac(self.vector)
                self.vector = []
                n = self.out_count or len(y)
                wait = max(1, self.latency - self.array.size)
                self.pending.append([cycle + wait, deque(y[:n])])
                self.vectors += 1
        if self.pending and self.pending[0][0] <= cycle and fifo.space() > 0:
            job = self.pending[0]
            fifo.push(Flit(job[1].popleft()), cycle + hop)
            if not job[1]:
                self.pending.popleft()
            moved += 1
        return moved


class Mesh:
    """A ``rows x cols`` grid of routers advanced by :meth:`step`."""

    def __init__(self, rows: int = 32, cols: int = 32, mode: NumericMode = FIXED,
                 depth: int = FIFO_DEPTH, hop_latency: int = 1,
                 csr: Mapping[str, int] | None = None):
        self.rows = rows
        self.cols = cols
        self.mode = mode
        self.depth = depth
        self.hop = hop_latency
        self.routers = [Router(r, c, cols, depth) for r in range(rows) for c in range(cols)]
        self.csr = dict(CSR_DEFAULTS)
        if csr:
            self.csr.update(csr)
        self.pes: dict[int, PeDevice] = {}
        self.scus: dict[int, ScuPort] = {}
        self.egress: list[tuple[int, int, int]] = []     # (cycle, router, payload)
        self.ingress: dict[int, deque[int]] = {}
        self.active: list[Router] = []
        self.cycle = 0
        self.trace: list[tuple[int, int, str, str]] | None = None
        self.injected = 0
        self.ejected = 0
        self.duplicated = 0
        self.dropped = 0
        self.overflows = 0
        self.progress = 0
        self._cache: dict[Instruction, Decoded] = {}

    # -- topology -----------------------------------------------------------

    def index(self, row: int, col: int) -> int:
        return row * self.cols + col

    def coord(self, index: int) -> tuple[int, int]:
        return divmod(index, self.cols)

    def router(self, row: int, col: int) -> Router:
        return self.routers[self.index(row, col)]

    def neighbor(self, index: int, port: int) -> int | None:
        r, c = self.coord(index)
        dr, dc = STEP[Port(port)]
        r, c = r + dr, c + dc
        if 0 <= r < self.rows and 0 <= c < self.cols:
            return self.index(r, c)
        return None

    # -- devices ------------------------------------------------------------

    def attach_pe(self, index: int, device: PeDevice) -> None:
        self.pes[index] = device

    def attach_scu(self, index: int, port: ScuPort) -> None:
        if self.coord(index)[1] % 2 == 0:
            raise MeshError(f"router {index} sits in an even column; SCUs need TSV_up")
        self.scus[index] = port

    def inject(self, index: int, values: Iterable[int], port: Port = Port.TSV) -> None:
        """Queue host data for a router's vertical port (even columns only)."""
        if port != Port.TSV:
            raise MeshError("host injection enters through the TSV port")
        if self.coord(index)[1] % 2:
            raise MeshError(f"router {index} is in an odd column; its TSV port faces the SCUs")
        self.ingress.setdefault(index, deque()).extend(values)

    def enable_trace(self) -> None:
        self.trace = []

    def write_trace(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cycle", "router", "port", "event"])
            w.writerows(self.trace or [])

    # -- commands -----------------------------------------------------------

    def decoded(self, instr: Instruction) -> Decoded:
        d = self._cache.get(instr)
        if d is None:
            d = self._cache[instr] = Decoded.of(instr, self.csr)
        return d

    def set_csr(self, csr: Mapping[str, int]) -> None:
        merged = dict(CSR_DEFAULTS)
        merged.update(csr)
        if merged != self.csr:
            self.csr = merged
            self._cache.clear()

    def dispatch(self, commands: Mapping[int, Instruction], repeat: int) -> None:
        """Hand every listed router its command for ``repeat`` iterations."""
        self.active = []
        for idx, instr in commands.items():
            router = self.routers[idx]
            if instr == IDLE:
                router.assign(None, 0)
                continue
            router.assign(self.decoded(instr), repeat)
            self.active.append(router)

    def iterations_done(self) -> int:
        """Smallest completed iteration count over the active routers."""
        if not self.active:
            return 0
        return min(r.iteration for r in self.active)

    def all_done(self) -> bool:
        return all(r.done for r in self.active)

    # -- clock --------------------------------------------------------------

    def _dest_space(self, router: Router, port: int) -> int:
        if port == Port.LOCAL:
            return router.fifos[Port.LOCAL].space()
        if port == Port.PE:
            dev = self.pes.get(router.index)
            if dev is None:
                raise MeshError(f"router {router.index} has no PE attached")
            return dev.depth - len(dev.inbox)
        if port == Port.TSV:
            if router.col % 2:
                scu = self.scus.get(router.index)
                if scu is None:
                    raise MeshError(f"router {router.index} has no SCU attached")
                return scu.depth - len(scu.inbox)
            return 1 << 30          # optical egress drains every cycle
        nb = self.neighbor(router.index, port)
        if nb is None:
            raise MeshError(f"router {router.index} sends {Port(port).name} off the mesh edge")
        return self.routers[nb].fifos[OPPOSITE[Port(port)]].space()

    def _arith(self, value: int) -> int:
        if self.mode.exact:
            return value
        v, flag = saturate(value)
        if flag:
            self.overflows += 1
        return v

    def _plan(self, router: Router, cycle: int):
        """Phase one for one router: returns (pops, value, outs, writes, macs) or None."""
        cmd = router.cmd
        fifos = router.fifos
        it = router.iteration
        mode = cmd.mode
        outs = cmd.out
        for p in outs:
            if self._dest_space(router, p) <= 0:
                return None
        if mode == Mode.ROUTE or mode == Mode.SPWR or mode == Mode.LINACT:
            src = next((p for p in cmd.rd if fifos[p].head(cycle) is not None), None)
            if src is None:
                return None
            x = fifos[src].head(cycle).payload
            writes = ()
            if mode == Mode.SPWR:
                writes = ((cmd.addr + it * cmd.stride, x),)
            elif mode == Mode.LINACT:
                if cmd.xfer:
                    slope = router.sp_read(cmd.addr)
                    offset = router.sp_read(cmd.addr + 1)
                    x = slope * x if self.mode.exact else shift_round(slope * x, self.csr["FRAC_BITS"])
                    x = self._arith(x + offset)
                x = max(0, x)
            return (src,), x, outs, writes, None
        if mode == Mode.PSUM or mode == Mode.PMAX:
            heads = []
            for p in cmd.rd:
                h = fifos[p].head(cycle)
                if h is None:
                    return None
                heads.append(h.payload)
            addr = cmd.addr + it * cmd.stride
            if mode == Mode.PSUM:
                if not heads:
                    return None
                x = self._arith(sum(heads))
            else:
                if cmd.xfer:
                    heads.append(router.sp_read(addr))
                if not heads:
                    return None
                x = max(heads)
            writes = ((addr, x),) if cmd.xfer else ()
            return cmd.rd, x, outs, writes, None
        if mode == Mode.SPRD:
            return (), router.sp_read(cmd.addr + it * cmd.stride), outs, (), None
        if mode == Mode.PEISS:
            if self._dest_space(router, Port.PE) <= 0:
                return None
            if cmd.xfer:
                return (), router.sp_read(cmd.addr + it * cmd.stride), outs + (int(Port.PE),), (), None
            src = next((p for p in cmd.rd if fifos[p].head(cycle) is not None), None)
            if src is None:
                return None
            return (src,), fifos[src].head(cycle).payload, outs + (int(Port.PE),), (), None
        if mode == Mode.DMAC:
            return self._plan_dmac(router, cycle)
        raise MeshError(f"unknown mode {mode}")

    def _plan_dmac(self, router: Router, cycle: int):
        cmd = router.cmd
        it = router.iteration
        fifos = router.fifos
        if not cmd.rd:
            # flush
            lane = it % N_MACS
            acc = router.macs.acc[lane]
            if cmd.out:
                v = self._arith(acc if self.mode.exact else shift_round(acc, cmd.addr))
                return (), v, cmd.out, (), ("flush", lane)
            if cmd.xfer:
                shift = 0 if self.mode.exact else self.csr["FRAC_BITS"]
                v = self._arith(shift_round(acc, shift))
                return (), None, (), ((cmd.addr + it, v),), ("flush", lane)
            return (), None, (), (), ("flush", lane)
        heads = []
        for p in cmd.rd:
            h = fifos[p].head(cycle)
            if h is None:
                return None
            heads.append(h.payload)
        if len(heads) == 1 and cmd.xfer:
            base = cmd.addr + it * cmd.stride
            a = heads[0]
            ops = tuple((k, a, router.sp_read(base + k)) for k in range(N_MACS)
                        if base + k < SP_WORDS)
            return cmd.rd, None, (), (), ("vector", ops)
        if len(heads) == 2:
            return cmd.rd, None, (), (), ("pair", ((cmd.addr % N_MACS, heads[0], heads[1]),))
        raise MeshError(f"router {router.index}: DMAC needs one port with xfer or two ports")

    def step(self) -> int:
        """Advance one cycle; returns the number of state changes."""
        cycle = self.cycle
        plans = []
        for router in self.active:
            if router.iteration >= router.repeat:
                continue
            plan = self._plan(router, cycle)
            if plan is None:
                router.stall_cycles += 1
                continue
            plans.append((router, plan))
        moved = 0
        trace = self.trace
        popped: dict[tuple[int, int], Flit] = {}
        for router, (pops, _, _, _, _) in plans:
            for p in pops:
                popped[(router.index, p)] = router.fifos[p].pop()
                if trace is not None:
                    trace.append((cycle, router.index, Port(p).name, "pop"))
        ready = cycle + self.hop
        for router, (pops, value, outs, writes, mac) in plans:
            tag = popped[(router.index, pops[0])].tag if pops else None
            for addr, v in writes:
                router.sp_write(addr, v)
            if mac is not None:
                kind, arg = mac
                if kind == "flush":
                    router.macs.clear(arg)
                    if router.iteration + 1 >= router.repeat:
                        router.macs.clear()
                else:
                    for lane, a, b in arg:
                        router.macs.mac(lane, a, b)
            if router.cmd.mode == Mode.ROUTE:
                if outs:
                    self.duplicated += len(outs) - 1
                else:
                    self.dropped += 1
            for p in outs:
                self._deliver(router, p, Flit(value, tag), ready)
                if trace is not None:
                    trace.append((cycle, router.index, Port(p).name, "push"))
            router.iteration += 1
            router.busy_cycles += 1
            moved += 1
        moved += self._tick_devices(cycle)
        self.progress += moved
        self.cycle += 1
        return moved

    def _deliver(self, router: Router, port: int, flit: Flit, ready: int) -> None:
        if port == Port.LOCAL:
            router.fifos[Port.LOCAL].push(flit, ready)
        elif port == Port.PE:
            self.pes[router.index].push(flit.payload)
            self.ejected += 1
        elif port == Port.TSV:
            if router.col % 2:
                self.scus[router.index].push(flit.payload)
            else:
                self.egress.append((self.cycle, router.index, flit.payload))
            self.ejected += 1
        else:
            nb = self.neighbor(router.index, port)
            self.routers[nb].fifos[OPPOSITE[Port(port)]].push(flit, ready)

    def _tick_devices(self, cycle: int) -> int:
        moved = 0
        ready = cycle + self.hop
        for idx, queue in self.ingress.items():
            fifo = self.routers[idx].fifos[Port.TSV]
            if queue and fifo.space() > 0:
                fifo.push(Flit(queue.popleft(), ("host", idx)), ready)
                self.injected += 1
                moved += 1
                if self.trace is not None:
                    self.trace.append((cycle, idx, "TSV", "inject"))
        for idx, dev in self.pes.items():
            if dev.busy:
                moved += dev.tick(cycle, self.routers[idx].fifos[Port.PE], self.hop)
        for idx, scu in self.scus.items():
            if scu.busy:
                fifo = self.routers[idx].fifos[Port.TSV]
                before = len(scu.inbox)
                out = scu.tick(cycle, fifo.space())
                for v in out:
                    fifo.push(Flit(v, ("scu", idx)), ready)
                moved += len(out) + (before != len(scu.inbox))
        return moved

    # -- inspection ---------------------------------------------------------

    def in_flight(self) -> int:
        return sum(len(f) for r in self.routers for f in r.fifos)

    def max_occupancy(self) -> int:
        return max(f.high_water for r in self.routers for f in r.fifos)

    def devices_busy(self) -> bool:
        return (any(q for q in self.ingress.values()) or any(d.busy for d in self.pes.values())
                or any(s.busy for s in self.scus.values()))

    def snapshot(self) -> tuple:
        """Hashable picture of all router state, used by determinism checks."""
        return tuple(
            (tuple(tuple(f.values()) for f in r.fifos), tuple(sorted(r.scratchpad.items())),
             tuple(r.macs.acc), r.iteration)
            for r in self.routers)


def run_commands(mesh: Mesh, commands: Mapping[int, Instruction], repeat: int = 1,
                 max_cycles: int = 100_000, idle_limit: int = 1000) -> int:
    """Dispatch one command set and clock the mesh until every router finishes.

    Returns the number of cycles taken.  Raises :class:`DeadlockError` if no
    state changes for ``idle_limit`` consecutive cycles.
    """
    mesh.dispatch(commands, repeat)
    start = mesh.cycle
    quiet = 0
    while not mesh.all_done():
        if mesh.cycle - start > max_cycles:
            raise DeadlockError(f"commands did not finish within {max_cycles} cycles")
        moved = mesh.step()
        quiet = 0 if moved else quiet + 1
        if quiet >= idle_limit:
            stuck = [r.index for r in mesh.active if not r.done]
            raise DeadlockError(f"no progress for {idle_limit} cycles; routers {stuck[:8]} stalled")
    return mesh.cycle - start


def drain(mesh: Mesh, max_cycles: int = 100_000) -> int:
    """Clock an otherwise idle mesh until all devices are quiet."""
    start = mesh.cycle
    while mesh.devices_busy() and mesh.cycle - start < max_cycles:
        mesh.step()
    return mesh.cycle - start
