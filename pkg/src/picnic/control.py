"""Network program memory, configuration co-processor and main controller.

The NPM has two banks.  While the main controller (NMC) executes rows from
one bank the co-processor writes the next chunk of rows into the other, one
row per cycle by default.  A row finishes when every router that received a
non-IDLE command has executed it ``repeat`` times; routers may run ahead of
each other within a row, so the NMC's repeat counter tracks the slowest one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .isa import IDLE, Instruction, NpmImage, NpmRow, encode
from .mesh import DeadlockError, Mesh


class BankConflictError(RuntimeError):
    """The co-processor was pointed at the bank the NMC is reading."""


@dataclass(frozen=True)
class NmcState:
    active_bank: int | None = None
    row_cursor: int = 0
    repeat_counter: int = 0
    dispatch: tuple[Instruction, ...] = ()
    banks: tuple[tuple[NpmRow, ...], tuple[NpmRow, ...]] = ((), ())
    loaded: tuple[bool, bool] = (False, False)

    def bank(self, bank_id: int) -> tuple[NpmRow, ...]:
        return self.banks[bank_id - 1]

    @property
    def current_row(self) -> NpmRow | None:
        if self.active_bank is None:
            return None
        rows = self.bank(self.active_bank)
        return rows[self.row_cursor] if self.row_cursor < len(rows) else None


@dataclass(frozen=True)
class CoProcessorState:
    writing_bank: int | None = None
    pending_rows: tuple[NpmRow, ...] = ()
    written: tuple[NpmRow, ...] = ()
    busy: bool = False
    rate: int = 1


def dispatch_row(row: NpmRow) -> tuple[Instruction, ...]:
    """Resolve the row's select codes into one command per router."""
    return tuple(row.command_for(i) for i in range(row.n_routers))


def start_row(state: NmcState) -> NmcState:
    row = state.current_row
    if row is None:
        raise ValueError("no row to start")
    return replace(state, repeat_counter=row.repeat, dispatch=dispatch_row(row))


def _with(seq: tuple, index: int, value) -> tuple:
    out = list(seq)
    out[index] = value
    return tuple(out)


def tick_repeat(state: NmcState) -> NmcState:
    """Account for one completed repetition of the current row."""
    if state.active_bank is None or state.repeat_counter < 1:
        raise ValueError("tick_repeat needs an active row with repetitions left")
    counter = state.repeat_counter - 1
    if counter:
        return replace(state, repeat_counter=counter)
    cursor = state.row_cursor + 1
    if cursor < len(state.bank(state.active_bank)):
        return replace(state, repeat_counter=0, row_cursor=cursor)
    # bank exhausted: release it and swap if the other bank is ready
    done = state.active_bank
    other = 3 - done
    loaded = _with(state.loaded, done - 1, False)
    banks = _with(state.banks, done - 1, ())
    if loaded[other - 1]:
        return replace(state, active_bank=other, row_cursor=0, repeat_counter=0,
                       loaded=loaded, banks=banks, dispatch=())
    return replace(state, active_bank=None, row_cursor=0, repeat_counter=0,
                   loaded=loaded, banks=banks, dispatch=())


def activate(state: NmcState, bank_id: int) -> NmcState:
    if not state.loaded[bank_id - 1]:
        raise ValueError(f"bank {bank_id} is not loaded")
    return replace(state, active_bank=bank_id, row_cursor=0, repeat_counter=0)


def configure_bank(cp: CoProcessorState, rows: Sequence[NpmRow], bank: int,
                   active_bank: int | None) -> CoProcessorState:
    """Begin writing ``rows`` into ``bank``; refuses the NMC's active bank."""
    if bank not in (1, 2):
        raise ValueError(f"bank must be 1 or 2, got {bank}")
    if bank == active_bank:
        raise BankConflictError(f"co-processor asked to write bank {bank} while the NMC reads it")
    if cp.busy:
        raise BankConflictError("co-processor is still writing another bank")
    return replace(cp, writing_bank=bank, pending_rows=tuple(rows), written=(), busy=bool(rows))


def coprocessor_tick(cp: CoProcessorState) -> CoProcessorState:
    if not cp.busy:
        return cp
    n = cp.rate
    written = cp.written + cp.pending_rows[:n]
    pending = cp.pending_rows[n:]
    return replace(cp, written=written, pending_rows=pending, busy=bool(pending))


@dataclass
class Chunk:
    rows: tuple[NpmRow, ...]
    csr: dict[str, int]
    first_row: int


def image_chunks(images: Iterable[NpmImage]) -> list[Chunk]:
    """Flatten images into the bank-sized chunk stream B1, B2, B1, ..."""
    chunks = []
    row = 0
    for image in images:
        image.validate()
        csr = image.full_csr()
        if not csr.get("START", 1):
            continue
        for bank in (image.bank1, image.bank2):
            if bank:
                chunks.append(Chunk(tuple(bank), csr, row))
                row += len(bank)
    return chunks


@dataclass
class ControlLog:
    dispatches: list[tuple[int, int, int]] = field(default_factory=list)   # cycle, row, rep
    commands: list[tuple[int, int, int, int]] = field(default_factory=list)  # cycle, row, router, word
    bank_events: list[tuple[int, str, int]] = field(default_factory=list)
    idle_cycles: int = 0
    config_cycles: int = 0
    reads: list[tuple[int, int]] = field(default_factory=list)    # cycle, bank read
    writes: list[tuple[int, int]] = field(default_factory=list)   # cycle, bank written

    def write_dispatch_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cycle", "row", "router", "command_word"])
            for cycle, row, router, word in self.commands:
                w.writerow([cycle, row, router, f"0x{word:08X}"])


class Controller:
    """Drives a :class:`Mesh` through a stream of NPM images."""

    def __init__(self, mesh: Mesh, images: Iterable[NpmImage], write_rate: int = 1,
                 trace_commands: bool = False, idle_limit: int = 5000,
                 max_cycles: int = 50_000_000):
        self.mesh = mesh
        self.chunks = image_chunks(images)
        self.nmc = NmcState()
        self.cp = CoProcessorState(rate=write_rate)
        self.log = ControlLog()
        self.trace_commands = trace_commands
        self.idle_limit = idle_limit
        self.max_cycles = max_cycles
        self._next_load = 0
        self._next_exec = 0
        self._loading: int | None = None
        self._chunk_of_bank: dict[int, Chunk] = {}
        self._row_active = False
        self._reps_done = 0
        self._row_start = 0

    # -- helpers ------------------------------------------------------------

    def _maybe_start_load(self, cycle: int) -> None:
        if self.cp.busy or self._next_load >= len(self.chunks):
            return
        target = 1 + self._next_load % 2
        if target == self.nmc.active_bank or self.nmc.loaded[target - 1]:
            return
        chunk = self.chunks[self._next_load]
        self.cp = configure_bank(self.cp, chunk.rows, target, self.nmc.active_bank)
        self._chunk_of_bank[target] = chunk
        self._loading = self._next_load
        self._next_load += 1
        self.log.bank_events.append((cycle, "load_start", target))

    def _finish_load(self, cycle: int) -> None:
        if self._loading is None or self.cp.busy:
            return
        bank = self.cp.writing_bank
        banks = _with(self.nmc.banks, bank - 1, self.cp.written)
        loaded = _with(self.nmc.loaded, bank - 1, True)
        self.nmc = replace(self.nmc, banks=banks, loaded=loaded)
        self.cp = replace(self.cp, writing_bank=None, written=())
        self._loading = None
        self.log.bank_events.append((cycle, "loaded", bank))

    def _global_row(self) -> int:
        return self._chunk_of_bank[self.nmc.active_bank].first_row + self.nmc.row_cursor

    def _dispatch(self, cycle: int) -> None:
        self.nmc = start_row(self.nmc)
        chunk = self._chunk_of_bank[self.nmc.active_bank]
        self.mesh.set_csr(chunk.csr)
        row = self.nmc.current_row
        commands = {i: c for i, c in enumerate(self.nmc.dispatch) if c != IDLE}
        self.mesh.dispatch(commands, row.repeat)
        g = self._global_row()
        self.log.dispatches.append((cycle, g, 1))
        if self.trace_commands:
            for i, c in enumerate(self.nmc.dispatch):
                self.log.commands.append((cycle, g, i, encode(c)))
        self._row_active = True
        self._reps_done = 0
        self._row_start = cycle

    @property
    def finished(self) -> bool:
        return (self._next_exec >= len(self.chunks) and not self._row_active
                and self.nmc.active_bank is None)

    # -- main loop ----------------------------------------------------------

    def step(self) -> None:
        mesh = self.mesh
        cycle = mesh.cycle
        self._maybe_start_load(cycle)
        if self.cp.busy:
            self.log.writes.append((cycle, self.cp.writing_bank))
        if not self._row_active:
            if self.nmc.active_bank is None and self._next_exec < len(self.chunks):
                expected = 1 + self._next_exec % 2
                if self.nmc.loaded[expected - 1]:
                    self.nmc = activate(self.nmc, expected)
                    self._next_exec += 1
                elif self._next_exec == 0:
                    self.log.config_cycles += 1
                else:
                    self.log.idle_cycles += 1
            if self.nmc.active_bank is not None:
                self._dispatch(cycle)
        if self._row_active:
            self.log.reads.append((cycle, self.nmc.active_bank))
        moved = mesh.step()
        if self._row_active:
            row = self.nmc.current_row
            if mesh.active:
                done = mesh.iterations_done()
            else:
                done = cycle - self._row_start + 1
            while self._reps_done < done and self._row_active:
                self._reps_done += 1
                if self._reps_done < row.repeat:
                    self.nmc = tick_repeat(self.nmc)
                    self.log.dispatches.append((cycle + 1, self._global_row(), self._reps_done + 1))
                else:
                    before = self.nmc.active_bank
                    self.nmc = tick_repeat(self.nmc)
                    self._row_active = False
                    if self.nmc.active_bank != before and self.nmc.active_bank is not None:
                        self._next_exec += 1
        self.cp = coprocessor_tick(self.cp)
        self._finish_load(cycle)
        self._moved = moved

    def run(self) -> int:
        start = self.mesh.cycle
        quiet = 0
        while not self.finished:
            if self.mesh.cycle - start > self.max_cycles:
                raise DeadlockError(f"program did not finish within {self.max_cycles} cycles")
            self.step()
            if self._moved or self.cp.busy or not self.mesh.active:
                quiet = 0
            else:
                quiet += 1
                if quiet >= self.idle_limit:
                    stuck = [r.index for r in self.mesh.active if not r.done]
                    raise DeadlockError(
                        f"no progress for {self.idle_limit} cycles at row {self._global_row()}; "
                        f"stalled routers {stuck[:8]}")
        return self.mesh.cycle - start


def run_program(mesh: Mesh, images: Sequence[NpmImage], **kwargs) -> Controller:
    ctl = Controller(mesh, images, **kwargs)
    ctl.run()
    return ctl
