"""IPCN instruction set: 30-bit command words, NPM rows/images, assembler and hex files.

Bit layout of a command word::

    29..27  mode_sel    router macro selector
    26..20  rd_en       FIFO read-enable mask over the 7 I/O ports
    19..13  out_en      output-direction mask over the 7 I/O ports
    12      intxfer_en  FIFO <-> scratchpad transfer flag
    11..0   sp_addr     scratchpad word address (4096 x 64-bit words)

Port bit indices are given by :class:`Port`.  The textual assembler grammar is
documented in ``docs/isa.md``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Iterator, Mapping, Sequence

WORD_WIDTH = 30
MODE_BITS, PORT_BITS, XFER_BITS, ADDR_BITS = 3, 7, 1, 12
SP_WORDS = 1 << ADDR_BITS
NUM_PORTS = 7

_ADDR_SHIFT = 0
_XFER_SHIFT = 12
_OUT_SHIFT = 13
_RD_SHIFT = 20
_MODE_SHIFT = 27

REPEAT_BITS = 16
REPEAT_MAX = (1 << REPEAT_BITS) - 1
DEFAULT_BANK_ROWS = 256


class IsaError(ValueError):
    """Invalid instruction field, row, image or hex stream."""


class AssemblyError(IsaError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class Port(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3
    PE = 4
    TSV = 5
    LOCAL = 6


class Mode(IntEnum):
    ROUTE = 0    # route-only; the all-zero word is IDLE
    PSUM = 1     # partial summation
    LINACT = 2   # linear activation
    DMAC = 3     # dynamic multiply-accumulate / flush
    SPWR = 4     # FIFO -> scratchpad write
    SPRD = 5     # scratchpad -> ports read
    PEISS = 6    # scratchpad -> PE issue
    PMAX = 7     # running maximum (used for the softmax max-shift)


class Select(IntEnum):
    IDLE = 0
    CMD1 = 1
    CMD2 = 2


def port_mask(*ports: Port | int) -> int:
    mask = 0
    for p in ports:
        mask |= 1 << int(p)
    return mask


def mask_ports(mask: int) -> list[Port]:
    return [Port(i) for i in range(NUM_PORTS) if mask >> i & 1]


@dataclass(frozen=True)
class Instruction:
    mode_sel: int = 0
    rd_en: int = 0
    out_en: int = 0
    intxfer_en: int = 0
    sp_addr: int = 0

    def __post_init__(self) -> None:
        for name, width in (("mode_sel", MODE_BITS), ("rd_en", PORT_BITS), ("out_en", PORT_BITS),
                            ("intxfer_en", XFER_BITS), ("sp_addr", ADDR_BITS)):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0 or value >> width:
                raise IsaError(f"field overflow: {name}={value!r} does not fit in {width} bits")

    @property
    def mode(self) -> Mode:
        return Mode(self.mode_sel)

    @property
    def is_idle(self) -> bool:
        return self == IDLE

    def __str__(self) -> str:
        return format_instruction(self)


IDLE = Instruction()


def encode(instr: Instruction) -> int:
    return (instr.mode_sel << _MODE_SHIFT | instr.rd_en << _RD_SHIFT | instr.out_en << _OUT_SHIFT
            | instr.intxfer_en << _XFER_SHIFT | instr.sp_addr << _ADDR_SHIFT)


def decode(word: int) -> Instruction:
    if word < 0 or word >> WORD_WIDTH:
        raise IsaError(f"word 0x{word:08X} has bits set above bit {WORD_WIDTH - 1}")
    return Instruction(
        mode_sel=word >> _MODE_SHIFT & 0x7,
        rd_en=word >> _RD_SHIFT & 0x7F,
        out_en=word >> _OUT_SHIFT & 0x7F,
        intxfer_en=word >> _XFER_SHIFT & 0x1,
        sp_addr=word & 0xFFF,
    )


def make(mode: Mode | int, rd: Iterable[Port] | int = 0, out: Iterable[Port] | int = 0,
         xfer: bool = False, addr: int = 0) -> Instruction:
    """Convenience constructor taking port lists instead of masks."""
    rd_mask = rd if isinstance(rd, int) else port_mask(*rd)
    out_mask = out if isinstance(out, int) else port_mask(*out)
    return Instruction(int(mode), rd_mask, out_mask, int(bool(xfer)), addr)


@dataclass(frozen=True)
class NpmRow:
    cmd1: Instruction
    cmd2: Instruction
    select: tuple[int, ...]
    repeat: int = 1

    def __post_init__(self) -> None:
        if not isinstance(self.select, tuple):
            object.__setattr__(self, "select", tuple(self.select))
        if not self.select:
            raise IsaError("select must have one entry per router")
        for i, s in enumerate(self.select):
            if s not in (0, 1, 2):
                raise IsaError(f"select[{i}]={s} is not IDLE(0), CMD1(1) or CMD2(2)")
        if not 1 <= self.repeat <= REPEAT_MAX:
            raise IsaError(f"repeat={self.repeat} outside [1, {REPEAT_MAX}]")

    @property
    def n_routers(self) -> int:
        return len(self.select)

    def command_for(self, router: int) -> Instruction:
        s = self.select[router]
        if s == Select.CMD1:
            return self.cmd1
        if s == Select.CMD2:
            return self.cmd2
        return IDLE


# CSR registers in serialization order.  The first three are status registers
# derived from the image itself; the rest are configuration-time settings.
CSR_STATUS = ("NROUTERS", "B1_ROWS", "B2_ROWS")
CSR_DEFAULTS: dict[str, int] = {
    "START": 1,
    "STRIDE_ROUTE": 0,
    "STRIDE_PSUM": 1,
    "STRIDE_LINACT": 0,
    "STRIDE_DMAC": 16,
    "STRIDE_SPWR": 1,
    "STRIDE_SPRD": 1,
    "STRIDE_PEISS": 1,
    "STRIDE_PMAX": 0,
    "FRAC_BITS": 16,
}
CSR_ORDER = CSR_STATUS + tuple(CSR_DEFAULTS)


def mode_stride(csr: Mapping[str, int], mode: Mode | int) -> int:
    return csr.get(f"STRIDE_{Mode(mode).name}", CSR_DEFAULTS[f"STRIDE_{Mode(mode).name}"])


@dataclass
class NpmImage:
    n_routers: int
    bank1: list[NpmRow] = field(default_factory=list)
    bank2: list[NpmRow] = field(default_factory=list)
    csr: dict[str, int] = field(default_factory=lambda: dict(CSR_DEFAULTS))
    bank_rows: int = DEFAULT_BANK_ROWS

    def validate(self) -> None:
        if self.n_routers < 1:
            raise IsaError("image needs at least one router")
        for name, bank in (("bank1", self.bank1), ("bank2", self.bank2)):
            if len(bank) > self.bank_rows:
                raise IsaError(f"{name} holds {len(bank)} rows, limit is {self.bank_rows}")
            for row in bank:
                if row.n_routers != self.n_routers:
                    raise IsaError(f"{name} row has {row.n_routers} selects, image has "
                                   f"{self.n_routers} routers")
        for key, value in self.csr.items():
            if key not in CSR_DEFAULTS:
                raise IsaError(f"unknown CSR register {key!r}")
            if not 0 <= value < 1 << 32:
                raise IsaError(f"CSR {key}={value} does not fit a 32-bit word")

    def rows(self) -> Iterator[tuple[int, int, NpmRow]]:
        for bank_id, bank in ((1, self.bank1), (2, self.bank2)):
            for i, row in enumerate(bank):
                yield bank_id, i, row

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NpmImage):
            return NotImplemented
        return (self.n_routers == other.n_routers and self.bank1 == other.bank1
                and self.bank2 == other.bank2 and self.full_csr() == other.full_csr())

    def full_csr(self) -> dict[str, int]:
        merged = dict(CSR_DEFAULTS)
        merged.update(self.csr)
        return merged


# ---------------------------------------------------------------------------
# hex files


def select_words(n_routers: int) -> int:
    return -(-2 * n_routers // 32)


def _pack_select(select: Sequence[int]) -> list[int]:
    words = [0] * select_words(len(select))
    for i, s in enumerate(select):
        words[i // 16] |= s << (2 * (i % 16))
    return words


def _unpack_select(words: Sequence[int], n: int) -> tuple[int, ...]:
    out = []
    for i in range(n):
        s = words[i // 16] >> (2 * (i % 16)) & 0x3
        if s == 3:
            raise IsaError(f"select code 3 for router {i}")
        out.append(s)
    return tuple(out)


def image_words(image: NpmImage) -> list[int]:
    image.validate()
    words: list[int] = []
    for _, _, row in image.rows():
        words.append(encode(row.cmd1))
        words.append(encode(row.cmd2))
        words.extend(_pack_select(row.select))
        words.append(row.repeat)
    csr = image.full_csr()
    status = {"NROUTERS": image.n_routers, "B1_ROWS": len(image.bank1), "B2_ROWS": len(image.bank2)}
    for key in CSR_ORDER:
        words.append(status[key] if key in status else csr[key])
    return words


def emit_hex(image: NpmImage) -> str:
    """One 32-bit word per line, 8 uppercase hex digits."""
    return "".join(f"{w:08X}\n" for w in image_words(image))


def parse_hex(text: str, bank_rows: int = DEFAULT_BANK_ROWS) -> NpmImage:
    words = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if not re.fullmatch(r"[0-9A-Fa-f]{8}", line):
            raise IsaError(f"hex line {lineno}: {line!r} is not an 8-digit word")
        words.append(int(line, 16))
    if len(words) < len(CSR_ORDER):
        raise IsaError("hex stream shorter than the CSR block")
    csr_words = words[-len(CSR_ORDER):]
    regs = dict(zip(CSR_ORDER, csr_words))
    n = regs["NROUTERS"]
    per_row = 3 + select_words(n)
    n_rows = regs["B1_ROWS"] + regs["B2_ROWS"]
    body = words[:-len(CSR_ORDER)]
    if len(body) != n_rows * per_row:
        raise IsaError(f"expected {n_rows} rows of {per_row} words, found {len(body)} words")
    rows = []
    for r in range(n_rows):
        chunk = body[r * per_row:(r + 1) * per_row]
        rows.append(NpmRow(decode(chunk[0]), decode(chunk[1]),
                           _unpack_select(chunk[2:-1], n), chunk[-1]))
    csr = {k: regs[k] for k in CSR_DEFAULTS}
    image = NpmImage(n, rows[:regs["B1_ROWS"]], rows[regs["B1_ROWS"]:], csr, bank_rows)
    image.validate()
    return image


# ---------------------------------------------------------------------------
# textual assembly

_PORT_NAMES = {p.name: p for p in Port}


def _format_ports(mask: int) -> str:
    return "+".join(p.name for p in mask_ports(mask))


def format_instruction(instr: Instruction) -> str:
    if instr == IDLE:
        return "IDLE"
    parts = [Mode(instr.mode_sel).name]
    if instr.rd_en:
        parts.append(f"rd={_format_ports(instr.rd_en)}")
    if instr.out_en:
        parts.append(f"out={_format_ports(instr.out_en)}")
    if instr.intxfer_en:
        parts.append("xfer")
    if instr.sp_addr:
        parts.append(f"sp=0x{instr.sp_addr:03X}")
    return " ".join(parts)


def _parse_int(text: str) -> int:
    try:
        return int(text, 0)
    except ValueError:
        raise IsaError(f"bad integer {text!r}") from None


def _parse_ports(text: str) -> int:
    if text in ("", "-"):
        return 0
    mask = 0
    for name in text.split("+"):
        name = name.strip().upper()
        if name not in _PORT_NAMES:
            raise IsaError(f"undefined port mnemonic {name!r}")
        mask |= 1 << _PORT_NAMES[name]
    return mask


def parse_instruction(text: str) -> Instruction:
    tokens = text.split()
    if not tokens:
        raise IsaError("empty instruction")
    head = tokens[0].upper()
    if head == "IDLE":
        if len(tokens) > 1:
            raise IsaError("IDLE takes no operands")
        return IDLE
    if head not in Mode.__members__:
        raise IsaError(f"undefined mnemonic {tokens[0]!r}")
    fields = {"mode_sel": int(Mode[head]), "rd_en": 0, "out_en": 0, "intxfer_en": 0, "sp_addr": 0}
    for tok in tokens[1:]:
        key, _, value = tok.partition("=")
        key = key.lower()
        if key == "xfer" and not value:
            fields["intxfer_en"] = 1
        elif key == "rd":
            fields["rd_en"] = _parse_ports(value)
        elif key == "out":
            fields["out_en"] = _parse_ports(value)
        elif key == "sp":
            fields["sp_addr"] = _parse_int(value)
        else:
            raise IsaError(f"undefined operand {tok!r}")
    return Instruction(**fields)


def _format_select(select: Sequence[int]) -> str:
    runs = []
    i = 0
    while i < len(select):
        if select[i] == 0:
            i += 1
            continue
        j = i
        while j + 1 < len(select) and select[j + 1] == select[i]:
            j += 1
        runs.append(f"{i}:{select[i]}" if i == j else f"{i}-{j}:{select[i]}")
        i = j + 1
    return " ".join(runs) if runs else "-"


def _parse_select(text: str, n: int) -> tuple[int, ...]:
    select = [0] * n
    text = text.strip()
    if text in ("", "-"):
        return tuple(select)
    for item in text.split():
        span, sep, code = item.partition(":")
        if not sep:
            raise IsaError(f"selector {item!r} must look like <router>:<1|2>")
        value = _parse_int(code)
        if value not in (0, 1, 2):
            raise IsaError(f"selector code {value} is not 0, 1 or 2")
        lo_s, dash, hi_s = span.partition("-")
        lo = _parse_int(lo_s)
        hi = _parse_int(hi_s) if dash else lo
        if lo > hi:
            raise IsaError(f"empty router range {span!r}")
        if hi >= n:
            raise IsaError(f"router index {hi} >= N={n}")
        for r in range(lo, hi + 1):
            select[r] = value
    return tuple(select)


def assemble(source: str, n_routers: int | None = None,
             bank_rows: int = DEFAULT_BANK_ROWS) -> NpmImage:
    """Assemble program text into an :class:`NpmImage`.

    ``n_routers`` supplies N when the source has no ``.routers``/``.mesh``
    directive.
    """
    bank = 1
    n = n_routers
    csr: dict[str, int] = {}
    banks: dict[int, list[NpmRow]] = {1: [], 2: []}
    for lineno, raw in enumerate(source.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            head, _, rest = line.partition(" ")
            head = head.lower()
            if head == ".routers":
                n = _parse_int(rest.strip())
            elif head == ".mesh":
                dims = rest.split()
                if len(dims) != 2:
                    raise IsaError(".mesh expects <rows> <cols>")
                n = _parse_int(dims[0]) * _parse_int(dims[1])
            elif head == ".bank":
                bank = _parse_int(rest.strip())
                if bank not in (1, 2):
                    raise IsaError(f"bank must be 1 or 2, got {bank}")
            elif head == ".csr":
                parts = rest.split()
                if len(parts) != 2:
                    raise IsaError(".csr expects <name> <value>")
                name = parts[0].upper()
                if name not in CSR_DEFAULTS:
                    raise IsaError(f"unknown CSR register {name!r}")
                csr[name] = _parse_int(parts[1])
            elif head == "row":
                if n is None:
                    raise IsaError("router count unknown; add a .routers or .mesh directive")
                fields = [f.strip() for f in rest.split(";")]
                if len(fields) != 4:
                    raise IsaError("row expects 'row rep=<n> ; <cmd1> ; <cmd2> ; <selectors>'")
                rep_key, _, rep_val = fields[0].partition("=")
                if rep_key.strip().lower() != "rep":
                    raise IsaError("row must start with rep=<n>")
                banks[bank].append(NpmRow(parse_instruction(fields[1]), parse_instruction(fields[2]),
                                          _parse_select(fields[3], n), _parse_int(rep_val.strip())))
            else:
                raise IsaError(f"syntax error near {head!r}")
        except AssemblyError:
            raise
        except IsaError as exc:
            raise AssemblyError(lineno, str(exc)) from None
    if n is None:
        n = 1
    merged = dict(CSR_DEFAULTS)
    merged.update(csr)
    image = NpmImage(n, banks[1], banks[2], merged, bank_rows)
    try:
        image.validate()
    except IsaError as exc:
        raise AssemblyError(0, str(exc)) from None
    return image


def disassemble(image: NpmImage) -> str:
    image.validate()
    lines = [f".routers {image.n_routers}"]
    csr = image.full_csr()
    for key in CSR_DEFAULTS:
        if csr[key] != CSR_DEFAULTS[key]:
            lines.append(f".csr {key} {csr[key]}")
    for bank_id, bank in ((1, image.bank1), (2, image.bank2)):
        if not bank:
            continue
        lines.append(f".bank {bank_id}")
        for row in bank:
            lines.append(f"row rep={row.repeat} ; {format_instruction(row.cmd1)} ; "
                         f"{format_instruction(row.cmd2)} ; {_format_select(row.select)}")
    return "\n".join(lines) + "\n"


class ProgramBuilder:
    """Programmatic front end: collect rows, then split them into images.

    ``add(assignments, repeat)`` takes a router -> instruction mapping with at
    most two distinct non-IDLE instructions.
    """

    def __init__(self, n_routers: int, bank_rows: int = DEFAULT_BANK_ROWS,
                 csr: Mapping[str, int] | None = None):
        self.n_routers = n_routers
        self.bank_rows = bank_rows
        self.csr = dict(CSR_DEFAULTS)
        if csr:
            self.csr.update(csr)
        self.rows: list[NpmRow] = []

    def add(self, assignments: Mapping[int, Instruction], repeat: int = 1) -> NpmRow:
        distinct: list[Instruction] = []
        for instr in assignments.values():
            if instr != IDLE and instr not in distinct:
                distinct.append(instr)
        if len(distinct) > 2:
            raise IsaError(f"a row holds at most two commands, got {len(distinct)}")
        while len(distinct) < 2:
            distinct.append(IDLE)
        select = [0] * self.n_routers
        for router, instr in assignments.items():
            if not 0 <= router < self.n_routers:
                raise IsaError(f"router index {router} >= N={self.n_routers}")
            if instr != IDLE:
                select[router] = 1 if instr == distinct[0] else 2
        row = NpmRow(distinct[0], distinct[1], tuple(select), repeat)
        self.rows.append(row)
        return row

    def add_row(self, row: NpmRow) -> None:
        if row.n_routers != self.n_routers:
            raise IsaError("row router count mismatch")
        self.rows.append(row)

    def images(self) -> list[NpmImage]:
        """Split rows into images; each image fills bank 1 and then bank 2."""
        out = []
        cap = self.bank_rows
        for start in range(0, len(self.rows), 2 * cap):
            chunk = self.rows[start:start + 2 * cap]
            out.append(NpmImage(self.n_routers, chunk[:cap], chunk[cap:], dict(self.csr), cap))
        return out
