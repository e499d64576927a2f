import math
import random

import numpy as np
import pytest

from picnic.scu import (CACHE_CAPACITY, ONE_Q30, TABLE_FILE, CapacityError, FsmState, ScuError,
                        ScuPort, ScuUnit, absolute_error_bound, dump_table, exact_softmax,
                        load_table, pwl_exp, pwl_exp_float, reciprocal, relative_error_bound,
                        softmax_stream, table)

Q16 = 1 << 16
EPS = 2.0 ** -10


def recorded(name: str) -> float:
    for line in TABLE_FILE.read_text().splitlines():
        if line.startswith(f"# {name}"):
            return float(line.split()[-1])
    raise KeyError(name)


def sweep_table(xs: np.ndarray) -> np.ndarray:
    """Evaluate the dumped coefficient file directly, without the library evaluator."""
    rows = [tuple(map(float, line.split())) for line in TABLE_FILE.read_text().splitlines()
            if line and not line.startswith("#")]
    bps = np.array([r[0] for r in rows])
    idx = np.searchsorted(bps, xs, side="left")
    slope = np.array([r[1] for r in rows])[idx]
    icpt = np.array([r[2] for r in rows])[idx]
    return slope * xs + icpt


def q16(x: float) -> int:
    return round(x * Q16)


def test_table_shape():
    segs = table()
    assert len(segs) == 8
    assert segs[0].left == -8.0
    assert segs[-1].breakpoint == 0.0
    bps = [s.left for s in segs] + [segs[-1].breakpoint]
    assert all(a < b for a, b in zip(bps, bps[1:]))


def test_exp_zero_is_one():
    y, clamped = pwl_exp(0)
    assert y == ONE_Q30
    assert not clamped
    assert abs(pwl_exp_float(0.0)[0] - 1.0) <= 2.0 ** -30


def test_exp_minus_eight_anchor():
    y, clamped = pwl_exp(q16(-8.0))
    assert not clamped
    assert abs(y / ONE_Q30 - math.exp(-8.0)) <= 2.0 ** -30
    assert abs(pwl_exp_float(-8.0)[0] - math.exp(-8.0)) < 1e-15


def test_clamp_below_domain_is_flagged():
    y, clamped = pwl_exp(q16(-9.5))
    assert clamped
    assert y == pwl_exp(q16(-8.0))[0]


def test_recorded_bounds_match_construction():
    assert recorded("max_abs_error") == pytest.approx(absolute_error_bound(), rel=1e-10)
    assert recorded("max_rel_error") == pytest.approx(relative_error_bound(), rel=1e-10)


def test_million_point_relative_error_sweep():
    xs = np.linspace(-8.0, 0.0, 1_000_000)
    rel = np.abs(sweep_table(xs) / np.exp(xs) - 1.0)
    bound = recorded("max_rel_error")
    assert rel.max() <= bound * (1 + 1e-9)
    # the sweep reaches the bound to sampling resolution
    assert rel.max() >= bound * (1 - 1e-6)


def test_million_point_absolute_error_sweep():
    xs = np.linspace(-8.0, 0.0, 1_000_000)
    err = np.abs(sweep_table(xs) - np.exp(xs))
    bound = recorded("max_abs_error")
    assert err.max() <= bound * (1 + 1e-9)
    assert err.max() >= bound * (1 - 1e-6)


def test_fixed_point_exp_tracks_float_table():
    rng = random.Random(0)
    worst = 0.0
    for _ in range(20_000):
        x = rng.randrange(-8 * Q16, 1)
        y, _ = pwl_exp(x)
        worst = max(worst, abs(y / ONE_Q30 - pwl_exp_float(x / Q16)[0]))
    # breakpoints are rounded to Q16, shifting each chord by up to half an input LSB
    slack = max(s.slope for s in table()) * 2.0 ** -17 + 4 * 2.0 ** -30
    assert worst <= slack


def test_fixed_point_exp_monotone():
    prev = -1
    for x in range(-8 * Q16, 1, 97):
        y, _ = pwl_exp(x)
        assert y >= prev
        prev = y


def test_table_file_round_trip(tmp_path):
    path = tmp_path / "pwl.txt"
    dump_table(path)
    assert load_table(path) == table()
    assert load_table() == table()
    path.write_text("1 2 3\n")
    with pytest.raises(ScuError):
        load_table(path)


def test_reciprocal_accuracy():
    rng = random.Random(1)
    for _ in range(5000):
        total = rng.randrange(1, 1 << 45)
        y, k = reciprocal(total)
        approx = y * 2.0 ** -(60 + k)
        assert approx == pytest.approx(1.0 / total, rel=1e-8)
    with pytest.raises(ScuError):
        reciprocal(0)


def test_uniform_row():
    out = softmax_stream([0, 0, 0, 0])
    assert all(abs(v - ONE_Q30 // 4) <= 2 for v in out)


def test_single_input_exactly_one():
    assert softmax_stream([0]) == [ONE_Q30]


def test_half_quarter_quarter():
    ln2 = q16(-math.log(2))
    out = [v / ONE_Q30 for v in softmax_stream([0, ln2, ln2])]
    delta = absolute_error_bound()
    total = 2.0
    for got, p in zip(out, (0.5, 0.25, 0.25)):
        # each exponential is off by at most delta; propagate through the normalization
        bound = (delta + p * 3 * delta) / (total - 3 * delta) + 1e-6
        assert abs(got - p) <= bound


@pytest.mark.parametrize("n", [1, 2, 3, 16, 255, 1000, CACHE_CAPACITY])
def test_output_sum_near_one(n):
    rng = random.Random(n)
    xs = [0] + [rng.randrange(-10 * Q16, 1) for _ in range(n - 1)]
    rng.shuffle(xs)
    out = softmax_stream(xs)
    assert abs(sum(out) / ONE_Q30 - 1.0) <= EPS


def test_monotone_and_order_preserving():
    rng = random.Random(7)
    xs = [0] + [rng.randrange(-8 * Q16, 1) for _ in range(199)]
    out = softmax_stream(xs)
    for i in range(len(xs)):
        for j in range(len(xs)):
            if xs[i] > xs[j]:
                assert out[i] >= out[j]
    # indexed cache keeps input order: the row max sits where it was
    assert out.index(max(out)) == xs.index(0)


def test_fsm_order():
    unit = ScuUnit()
    softmax_stream([0, -Q16, -2 * Q16], unit)
    states = [s for _, s in unit.events]
    assert states == ["S1_ACCUMULATE", "S2_RECIPROCAL", "S3_MULTIPLY", "IDLE"]


def test_fsm_rejects_out_of_order_use():
    unit = ScuUnit()
    with pytest.raises(ScuError):
        unit.accumulate(0)
    unit.start()
    with pytest.raises(ScuError):
        unit.output(0)
    with pytest.raises(ScuError):
        ScuUnit().finish_input()


def test_capacity_error():
    with pytest.raises(CapacityError):
        softmax_stream([0] * (CACHE_CAPACITY + 1))
    with pytest.raises(CapacityError):
        softmax_stream([0] * 5, ScuUnit(capacity=4))


def test_exact_mode_matches_reference():
    scores = [3, -1, 4, 1, -5, 9, 2, 6]
    unit = ScuUnit(exact=True, score_scale=0.25)
    out = softmax_stream([s - 9 for s in scores], unit)
    assert out == exact_softmax(scores, 0.25)


def test_port_protocol_fsm_events():
    port = ScuPort()
    row = [q16(v) for v in (1.0, 0.5, -0.25)]
    for v in [len(row), max(row)] + row:
        port.push(v)
    got = []
    cycle = 0
    while port.busy:
        got += port.tick(cycle, 32)
        cycle += 1
    expected = softmax_stream([v - max(row) for v in row])
    assert got == expected
    for unit in port.units:
        names = [s for _, s in unit.events]
        for k in range(0, len(names), 4):
            assert names[k:k + 4] == [s.name for s in (FsmState.S1_ACCUMULATE,
                                                       FsmState.S2_RECIPROCAL,
                                                       FsmState.S3_MULTIPLY, FsmState.IDLE)]
