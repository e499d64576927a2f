"""Softmax compute unit: PWL exponential, reciprocal unit and the streaming FSM.

The exponential table has eight segments over [-8, 0].  Breakpoints are
placed so that every chord has the same worst-case absolute error (an
equal-ripple construction): each interior anchor sits ``delta`` below the true
exponential and the two outer anchors are exact.  Because the exponential is
convex a chord between two such anchors overshoots by at most ``delta`` and
undershoots by at most ``delta`` at its ends, so the whole table has max
absolute error ``delta``.  ``delta`` is found by bisection.

Fixed-point conventions: SCU inputs are Q16 scores already shifted so that
the row maximum is 0; the exponentials, their sum and the outputs are Q30.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

from .fixedpoint import shift_round

DOMAIN_LO = -8.0
DOMAIN_HI = 0.0
N_SEGMENTS = 8
IN_FRAC = 16
OUT_FRAC = 30
ONE_Q30 = 1 << OUT_FRAC
SEED_BITS = 6
NR_ITERATIONS = 2
CACHE_CAPACITY = 4096

TABLE_FILE = Path(__file__).with_name("data") / "pwl_exp.txt"


class ScuError(RuntimeError):
    pass


class CapacityError(ScuError):
    """More inputs than the indexed cache holds; the mapper tiled a row too long."""


@dataclass(frozen=True)
class PwlSegment:
    breakpoint: float      # right end of the segment
    slope: float
    intercept: float
    left: float            # left end of the segment

    def __call__(self, x: float) -> float:
        return self.slope * x + self.intercept


# ---------------------------------------------------------------------------
# table construction


def _chord_overshoot(a: float, ya: float, b: float, yb: float) -> float:
    """Largest value of chord(x) - exp(x) on [a, b], ends included."""
    s = (yb - ya) / (b - a)
    c = ya - s * a
    best = max(ya - math.exp(a), yb - math.exp(b))
    if s > 0:
        x = math.log(s)
        if a < x < b:
            best = max(best, s * x + c - math.exp(x))
    return best


def _march(delta: float) -> tuple[list[float], bool]:
    """Walk left from 0 placing breakpoints with overshoot exactly ``delta``.

    Returns the breakpoints (descending) and whether ``DOMAIN_LO`` was reached
    within ``N_SEGMENTS`` segments.
    """
    b, yb = DOMAIN_HI, 1.0
    points = [b]
    for _ in range(N_SEGMENTS):
        if _chord_overshoot(DOMAIN_LO, math.exp(DOMAIN_LO), b, yb) <= delta:
            points.append(DOMAIN_LO)
            return points, True
        lo, hi = DOMAIN_LO, b - 1e-12
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if _chord_overshoot(mid, math.exp(mid) - delta, b, yb) > delta:
                lo = mid
            else:
                hi = mid
        b, yb = hi, math.exp(hi) - delta
        points.append(b)
    return points, False


@lru_cache(maxsize=1)
def build_table() -> tuple[tuple[PwlSegment, ...], float]:
    """Return the segments (ascending) and the equal-ripple error ``delta``."""
    lo, hi = 1e-7, 0.1
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if _march(mid)[1]:
            hi = mid
        else:
            lo = mid
    delta = hi
    points, ok = _march(delta)
    assert ok
    # pad with extra breakpoints if the walk used fewer than eight segments
    while len(points) < N_SEGMENTS + 1:
        points.insert(-1, 0.5 * (points[-2] + points[-1]))
    xs = sorted(points)
    ys = [math.exp(x) if x in (DOMAIN_LO, DOMAIN_HI) else math.exp(x) - delta for x in xs]
    segs = []
    for i in range(N_SEGMENTS):
        a, b = xs[i], xs[i + 1]
        s = (ys[i + 1] - ys[i]) / (b - a)
        segs.append(PwlSegment(breakpoint=b, slope=s, intercept=ys[i] - s * a, left=a))
    return tuple(segs), delta


def table() -> tuple[PwlSegment, ...]:
    return build_table()[0]


def anchors() -> list[tuple[float, float]]:
    """(x, y) anchor points, ascending, including both domain ends."""
    segs = table()
    pts = [(segs[0].left, segs[0](segs[0].left))]
    pts.extend((s.breakpoint, s(s.breakpoint)) for s in segs)
    return pts


def relative_error_bound() -> float:
    """Analytic max of |pwl(x)/exp(x) - 1| over the domain.

    For a segment ``s*x + c`` the relative error ``(s*x + c)*exp(-x) - 1``
    has a single stationary point at ``x = 1 - c/s``; the bound is the max over
    those points and the segment ends.
    """
    worst = 0.0
    for seg in table():
        cands = [seg.left, seg.breakpoint]
        if seg.slope:
            x = 1.0 - seg.intercept / seg.slope
            if seg.left < x < seg.breakpoint:
                cands.append(x)
        for x in cands:
            worst = max(worst, abs(seg(x) * math.exp(-x) - 1.0))
    return worst


def absolute_error_bound() -> float:
    return build_table()[1]


def dump_table(path: str | Path = TABLE_FILE) -> None:
    segs = table()
    lines = [
        "# eight-segment PWL exp on [-8, 0]: breakpoint(right end) slope intercept",
        f"# max_abs_error {absolute_error_bound():.12e}",
        f"# max_rel_error {relative_error_bound():.12e}",
    ]
    lines += [f"{s.breakpoint!r} {s.slope!r} {s.intercept!r}" for s in segs]
    Path(path).write_text("\n".join(lines) + "\n")


def load_table(path: str | Path = TABLE_FILE) -> tuple[PwlSegment, ...]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            rows.append(tuple(float(v) for v in line.split()))
    if len(rows) != N_SEGMENTS:
        raise ScuError(f"{path}: expected {N_SEGMENTS} rows, found {len(rows)}")
    segs, left = [], DOMAIN_LO
    for bp, s, c in rows:
        segs.append(PwlSegment(bp, s, c, left))
        left = bp
    return tuple(segs)


# ---------------------------------------------------------------------------
# evaluation


def pwl_exp_float(x: float) -> tuple[float, bool]:
    """Float evaluation of the table; the flag reports a domain clamp."""
    segs = table()
    if x < DOMAIN_LO:
        return segs[0](DOMAIN_LO), True
    if x > DOMAIN_HI:
        return 1.0, True
    for seg in segs:
        if x <= seg.breakpoint:
            return seg(x), False
    return 1.0, False


@dataclass(frozen=True)
class FixedSegment:
    left_q16: int
    right_q16: int
    y_left_q30: int
    y_right_q30: int
    slope_q30: int


@lru_cache(maxsize=1)
def fixed_table() -> tuple[FixedSegment, ...]:
    out = []
    for seg in table():
        out.append(FixedSegment(
            left_q16=round(seg.left * (1 << IN_FRAC)),
            right_q16=round(seg.breakpoint * (1 << IN_FRAC)),
            y_left_q30=round(seg(seg.left) * ONE_Q30),
            y_right_q30=round(seg(seg.breakpoint) * ONE_Q30),
            slope_q30=round(seg.slope * ONE_Q30),
        ))
    return tuple(out)


def pwl_exp(x_q16: int) -> tuple[int, bool]:
    """Fixed-point exp: Q16 input in [-8, 0], Q30 output, clamp flag.

    Evaluated as ``anchor + slope*(x - left)`` and clamped between the
    segment's anchors, which keeps the result monotone across segments.
    """
    segs = fixed_table()
    if x_q16 < segs[0].left_q16:
        return segs[0].y_left_q30, True
    if x_q16 >= 0:
        return ONE_Q30, x_q16 > 0
    for seg in segs:
        if x_q16 <= seg.right_q16:
            y = seg.y_left_q30 + shift_round(seg.slope_q30 * (x_q16 - seg.left_q16), IN_FRAC)
            return min(max(y, seg.y_left_q30), seg.y_right_q30), False
    return ONE_Q30, False


# ---------------------------------------------------------------------------
# reciprocal unit

SEED_TABLE = tuple(round(ONE_Q30 * 64 / (64 + i)) for i in range(1 << SEED_BITS))


def reciprocal(total: int, iterations: int = NR_ITERATIONS) -> tuple[int, int]:
    """Newton-Raphson reciprocal of a positive integer.

    Returns ``(y, k)`` with ``total = m * 2**k``, ``m`` in [2**30, 2**31) and
    ``y ~= 2**60 / m`` (the Q30 reciprocal of the normalized mantissa), so
    ``1/total ~= y * 2**-(60 + k)``.
    """
    if total <= 0:
        raise ScuError(f"reciprocal of non-positive sum {total}")
    k = total.bit_length() - (OUT_FRAC + 1)
    m = total >> k if k >= 0 else total << -k
    y = SEED_TABLE[(m - ONE_Q30) >> (OUT_FRAC - SEED_BITS)]
    for _ in range(iterations):
        # y <- y * (2 - m*y), everything in Q30
        e = 2 * ONE_Q30 - shift_round(m * y, OUT_FRAC)
        y = shift_round(y * e, OUT_FRAC)
    return y, k


def exact_softmax(scores: Sequence[int], score_scale: float = 1.0) -> list[int]:
    """Reference softmax used in exact mode: float exp, rounded to Q30.

    The max is subtracted internally (in exact integers), so shifting the
    input first does not change the result.
    """
    top = max(scores)
    ex = [math.exp((s - top) * score_scale) for s in scores]
    total = math.fsum(ex)
    return [round(e / total * ONE_Q30) for e in ex]


# ---------------------------------------------------------------------------
# streaming unit


class FsmState(IntEnum):
    IDLE = 0
    S1_ACCUMULATE = 1
    S2_RECIPROCAL = 2
    S3_MULTIPLY = 3


@dataclass
class ScuUnit:
    """Three-state streaming softmax unit.

    S1 caches ``pwl_exp`` of each input and accumulates the sum, S2 runs the
    reciprocal unit, S3 multiplies every cached value by the reciprocal and
    emits it in input order.
    """

    capacity: int = CACHE_CAPACITY
    exact: bool = False
    score_scale: float = 1.0
    fsm: FsmState = FsmState.IDLE
    indexed_cache: list[int] = field(default_factory=list)
    partial_sum: int = 0
    reciprocal: tuple[int, int] | None = None
    clamps: int = 0
    events: list[tuple[int, str]] = field(default_factory=list)
    _raw: list[int] = field(default_factory=list, repr=False)

    @property
    def pwl_table(self) -> tuple[PwlSegment, ...]:
        return table()

    def _log(self, step: int, state: FsmState) -> None:
        self.fsm = state
        self.events.append((step, state.name))

    def start(self, step: int = 0) -> None:
        self.indexed_cache = []
        self._raw = []
        self.partial_sum = 0
        self.reciprocal = None
        self._log(step, FsmState.S1_ACCUMULATE)

    def accumulate(self, x: int, step: int = 0) -> None:
        if self.fsm != FsmState.S1_ACCUMULATE:
            raise ScuError(f"accumulate in state {self.fsm.name}")
        if len(self.indexed_cache) >= self.capacity:
            raise CapacityError(f"softmax row longer than the {self.capacity}-entry cache")
        self._raw.append(x)
        if self.exact:
            self.indexed_cache.append(0)
            return
        y, clamped = pwl_exp(x)
        self.clamps += clamped
        self.indexed_cache.append(y)
        self.partial_sum += y

    def finish_input(self, step: int = 0) -> None:
        if self.fsm != FsmState.S1_ACCUMULATE or not self.indexed_cache:
            raise ScuError("no inputs accumulated")
        self._log(step, FsmState.S2_RECIPROCAL)
        if self.exact:
            self.indexed_cache = exact_softmax(self._raw, self.score_scale)
            self.partial_sum = sum(self.indexed_cache)
        else:
            self.reciprocal = reciprocal(self.partial_sum)
        self._log(step, FsmState.S3_MULTIPLY)

    def output(self, index: int) -> int:
        if self.fsm != FsmState.S3_MULTIPLY:
            raise ScuError(f"output requested in state {self.fsm.name}")
        if self.exact:
            return self.indexed_cache[index]
        y, k = self.reciprocal
        return shift_round(self.indexed_cache[index] * y, OUT_FRAC + k)

    def done(self, step: int = 0) -> None:
        self._log(step, FsmState.IDLE)


def softmax_stream(xs: Iterable[int], unit: ScuUnit | None = None) -> list[int]:
    """Run one softmax row through a unit; inputs Q16 (max-shifted), outputs Q30."""
    unit = unit or ScuUnit()
    unit.start()
    for x in xs:
        unit.accumulate(x)
    unit.finish_input()
    out = [unit.output(i) for i in range(len(unit.indexed_cache))]
    unit.done()
    return out


# ---------------------------------------------------------------------------
# mesh attachment


@dataclass
class _Request:
    n: int
    shift: int | None = None
    received: int = 0
    unit: ScuUnit | None = None
    emitted: int = 0
    ready_at: int = -1


class ScuPort:
    """Two SCUs sitting above an odd-column router's TSV port.

    Port protocol: the router sends a header flit holding ``n``, then the
    shift (row max), then ``n`` scores.  The adapter subtracts the shift and
    feeds the scores to the next unit in round-robin order.  Results go back
    into the router's TSV input FIFO in request order, one flit per cycle.
    """

    def __init__(self, n_units: int = 2, capacity: int = CACHE_CAPACITY, exact: bool = False,
                 score_scale: float = 1.0, reciprocal_cycles: int = 1 + NR_ITERATIONS,
                 depth: int = 32):
        self.units = [ScuUnit(capacity=capacity, exact=exact, score_scale=score_scale)
                      for _ in range(n_units)]
        self.reciprocal_cycles = reciprocal_cycles
        self.depth = depth
        self.inbox: deque[int] = deque()
        self.requests: deque[_Request] = deque()
        self._next_unit = 0
        self.rows_done = 0

    def has_space(self) -> bool:
        return len(self.inbox) < self.depth

    def push(self, value: int) -> None:
        if not self.has_space():
            raise ScuError("SCU input buffer overflow")
        self.inbox.append(value)

    @property
    def busy(self) -> bool:
        return bool(self.inbox or self.requests)

    def _free_unit(self) -> ScuUnit | None:
        in_use = {id(r.unit) for r in self.requests if r.unit is not None}
        for k in range(len(self.units)):
            unit = self.units[(self._next_unit + k) % len(self.units)]
            if id(unit) not in in_use:
                self._next_unit = (self._next_unit + k + 1) % len(self.units)
                return unit
        return None

    def tick(self, cycle: int, out_space: int) -> list[int]:
        """Advance one cycle; returns at most one result flit if room downstream."""
        if self.inbox:
            tail = self.requests[-1] if self.requests else None
            if tail is None or tail.received == tail.n:
                unit = self._free_unit()
                if unit is not None:
                    n = self.inbox.popleft()
                    if n < 1:
                        raise ScuError(f"softmax header announces {n} inputs")
                    self.requests.append(_Request(n=n, unit=unit))
            elif tail.shift is None:
                tail.shift = self.inbox.popleft()
                tail.unit.start(cycle)
            else:
                tail.unit.accumulate(self.inbox.popleft() - tail.shift, cycle)
                tail.received += 1
                if tail.received == tail.n:
                    tail.unit.finish_input(cycle)
                    tail.ready_at = cycle + self.reciprocal_cycles
        if self.requests and out_space > 0:
            head = self.requests[0]
            if head.received == head.n and cycle >= head.ready_at:
                value = head.unit.output(head.emitted)
                head.emitted += 1
                if head.emitted == head.n:
                    head.unit.done(cycle)
                    self.requests.popleft()
                    self.rows_done += 1
                return [value]
        return []
