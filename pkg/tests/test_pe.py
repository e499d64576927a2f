import random

import numpy as np
import pytest

from picnic.fixedpoint import EXACT, FIXED
from picnic.pe import PeArray, PeError, adc_level, quantize_adc, read_tile, write_tile


def oracle_matvec(w, x):
    """Plain Python big-integer W^T x."""
    rows, cols = len(w), len(w[0])
    return [sum(int(w[i][j]) * int(x[i]) for i in range(rows)) for j in range(cols)]


def test_identity_exact():
    pe = PeArray(mode=EXACT).program(np.eye(256, dtype=int))
    x = list(range(-128, 128))
    assert pe.smac(x) == x


def test_zero_weights():
    pe = PeArray(mode=EXACT).program(np.zeros((256, 256), dtype=int))
    assert pe.smac([5] * 256) == [0] * 256
    assert pe.smac([-3] * 17) == [0] * 256


def test_double_program_rejected():
    pe = PeArray(mode=EXACT).program(np.zeros((4, 4), dtype=int))
    with pytest.raises(PeError):
        pe.program(np.zeros((4, 4), dtype=int))
    pe.reset()
    pe.program(np.eye(4, dtype=int))
    assert pe.program_count == 2


def test_two_by_two_hand_example():
    pe = PeArray(mode=EXACT).program([[1, 2], [3, 4]])
    y = pe.smac([1, 1])
    assert y[:2] == [4, 6]
    assert y[2:] == [0] * 254


def test_zero_input_compensated_exact():
    offsets = np.array([(j % 7) - 3 for j in range(256)], dtype=float)
    pe = PeArray(mode=EXACT, analog_offsets=offsets)
    pe.program(np.random.default_rng(0).integers(-128, 128, (256, 256)))
    assert pe.calibration_offsets[:7] == [-3, -2, -1, 0, 1, 2, 3]
    assert pe.smac([0] * 256) == [0] * 256


def test_zero_input_fixed_within_half_lsb():
    rng = np.random.default_rng(1)
    w = rng.integers(-128, 128, (64, 64))
    probe = PeArray(size=64, mode=FIXED).program(w)
    offsets = rng.uniform(-0.2, 0.2, 64) * np.array([s * 128 for s in probe.adc_steps])
    pe = PeArray(size=64, mode=FIXED, analog_offsets=offsets).program(w)
    out = pe.smac([0] * 64)
    for y, step in zip(out, pe.adc_steps):
        assert abs(y) <= step / 2 + 0.5


def test_offsets_bounded_by_full_scale_fraction():
    w = np.eye(8, dtype=int)
    big = np.full(8, 1e12)
    with pytest.raises(PeError):
        PeArray(size=8, mode=FIXED, analog_offsets=big).program(w)


def test_random_full_size_matches_big_integer_oracle():
    rng = random.Random(3)
    for _ in range(3):
        w = [[rng.randrange(-128, 128) for _ in range(256)] for _ in range(256)]
        x = [rng.randrange(-(1 << 20), 1 << 20) for _ in range(256)]
        pe = PeArray(mode=EXACT, adc_bits=None).program(w)
        assert pe.smac(x) == oracle_matvec(w, x)


def test_thousand_random_cases_exact():
    rng = random.Random(4)
    for _ in range(1000):
        n = rng.randint(1, 24)
        w = [[rng.randrange(-128, 128) for _ in range(n)] for _ in range(n)]
        x = [rng.randrange(-1000, 1000) for _ in range(n)]
        pe = PeArray(size=24, mode=EXACT, adc_bits=None).program(w)
        assert pe.smac(x)[:n] == oracle_matvec(w, x)


def test_wide_inputs_stay_exact():
    pe = PeArray(size=4, mode=EXACT).program([[127, 0, 0, 0]] * 4)
    x = [1 << 62] * 4
    assert pe.smac(x)[0] == 4 * 127 * (1 << 62)


def test_quantizer_half_lsb_bound():
    rng = random.Random(5)
    step, bits = 0.37, 8
    for _ in range(20_000):
        v = rng.uniform(-128 * step, 127 * step)
        err = abs(adc_level(quantize_adc(v, step, bits), step) - v)
        assert err <= step / 2 + 1e-12


def test_quantizer_saturates():
    assert quantize_adc(1e9, 1.0, 8) == 127
    assert quantize_adc(-1e9, 1.0, 8) == -128


def test_fixed_mode_error_within_half_lsb():
    rng = np.random.default_rng(6)
    w = rng.integers(-128, 128, (32, 32))
    pe = PeArray(size=32, mode=FIXED, adc_bits=10, calib_sigma=8.0).program(w)
    one = 1 << 16
    for _ in range(50):
        x = (rng.uniform(-1, 1, 32) * one).astype(np.int64).tolist()
        raw = oracle_matvec(w, x)
        y = pe.smac(x)
        for j in range(32):
            assert abs(y[j] - raw[j]) <= pe.adc_steps[j] / 2 + 0.5
    assert pe.saturations == 0


def test_smac_does_not_mutate_weights():
    w = np.random.default_rng(7).integers(-128, 128, (16, 16))
    pe = PeArray(size=16, mode=EXACT).program(w)
    before = pe.weights.copy()
    pe.smac(list(range(16)))
    assert np.array_equal(pe.weights, before)
    with pytest.raises(ValueError):
        pe.weights[0, 0] = 1


def test_input_length_checked():
    pe = PeArray(size=4, mode=EXACT).program(np.eye(4, dtype=int))
    with pytest.raises(PeError):
        pe.smac([1] * 5)
    with pytest.raises(PeError):
        PeArray(size=4).smac([1])


def test_weight_range_checked():
    with pytest.raises(PeError):
        PeArray(size=2, mode=EXACT).program([[128, 0], [0, 0]])


def test_tile_file_round_trip(tmp_path):
    tile = np.random.default_rng(8).integers(-128, 128, (256, 256))
    path = tmp_path / "tile.bin"
    write_tile(path, tile)
    assert path.stat().st_size == 65_536
    assert np.array_equal(read_tile(path), tile)
    path.write_bytes(b"\x00" * 10)
    with pytest.raises(PeError):
        read_tile(path)
