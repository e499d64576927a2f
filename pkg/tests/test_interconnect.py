import math
import random

import numpy as np
import pytest

from picnic.config import HardwareConfig
from picnic.interconnect import (DRAM_HUB, C2CLink, InterconnectError, TransferEvent, TransferLog,
                                 c2c_power_profile, dram_access_energy, link_for, transfer)


def test_electrical_64_bits():
    link = C2CLink(0, 1, energy_per_bit=3.0, kind="electrical")
    assert transfer(link, 64, 0).energy_pj == 192.0


def test_dram_access_64_bits():
    assert dram_access_energy(64, 30.0) == 1920.0
    link = C2CLink(DRAM_HUB, 0, energy_per_bit=3.0, kind="electrical")
    assert link.energy(64) == 192.0 + 1920.0


def test_zero_bits():
    link = C2CLink(0, 1, latency=8)
    ev = transfer(link, 0, 100)
    assert ev.energy_pj == 0.0
    assert ev.end_cycle - ev.start_cycle == 8


def test_duration_rule():
    link = C2CLink(0, 1, bandwidth=64, latency=8)
    for bits, cycles in [(1, 9), (64, 9), (65, 10), (4096 * 64, 8 + 4096)]:
        ev = transfer(link, bits, 5)
        assert ev.end_cycle == 5 + cycles


def test_link_parameters_validated():
    with pytest.raises(InterconnectError):
        C2CLink(0, 1, bandwidth=0)
    with pytest.raises(InterconnectError):
        C2CLink(0, 1, energy_per_bit=0.0)
    with pytest.raises(InterconnectError):
        C2CLink(0, 1, kind="copper")


def test_unknown_endpoint():
    with pytest.raises(InterconnectError):
        transfer(C2CLink(0, 9), 64, 0, known=[0, 1, 2])
    transfer(C2CLink(DRAM_HUB, 2), 64, 0, known=[0, 1, 2])


def test_link_for_uses_config():
    hw = HardwareConfig()
    assert link_for(hw, 0, 1, "electrical").energy_per_bit == 3.0
    assert link_for(hw, 0, 1, "optical").energy_per_bit == 0.5
    assert link_for(hw, 0, 1).kind == hw.interconnect


def test_one_gigabit_one_watt():
    link = C2CLink(0, 1, bandwidth=1000, latency=0, energy_per_bit=1.0)
    log = TransferLog()
    transfer(link, 10 ** 9, 10 ** 6, log)
    series, avg = c2c_power_profile(log, 10 ** 6, 1e9, horizon=3 * 10 ** 6)
    assert series == pytest.approx([0.0, 1.0, 0.0], abs=1e-12)
    assert avg == pytest.approx(1.0 / 3)


def test_empty_log_is_zero():
    series, avg = c2c_power_profile(TransferLog(), 100, horizon=1000)
    assert series.shape == (10,)
    assert not series.any()
    assert avg == 0.0


def test_profile_accepts_event_lists():
    ev = TransferEvent(0, 1, 64, 0, 10, 100.0)
    series, _ = c2c_power_profile([ev], 5)
    # 100 pJ spread evenly over two 5 ns windows
    assert series == pytest.approx([50e-12 / 5e-9] * 2)


def test_energy_additivity():
    rng = random.Random(0)
    log = TransferLog()
    links = [C2CLink(0, 1), C2CLink(1, DRAM_HUB, energy_per_bit=3.0, kind="electrical")]
    events = [transfer(rng.choice(links), rng.randrange(0, 5000), rng.randrange(0, 10 ** 5), log)
              for _ in range(500)]
    assert log.total_energy == math.fsum(e.energy_pj for e in events)
    series, _ = c2c_power_profile(log, 777, 1e9, horizon=max(log.end) + 10)
    # the windowed series integrates back to the logged energy
    assert float(np.sum(series) * 777e-9 * 1e12) == pytest.approx(log.total_energy, rel=1e-9)


def test_csv_output(tmp_path):
    log = TransferLog()
    for k in range(5):
        transfer(C2CLink(k, k + 1), 64, 10 * k, log)
    path = tmp_path / "c2c.csv"
    log.write_csv(str(path), limit=3)
    lines = path.read_text().splitlines()
    assert lines[0] == "src,dst,bits,start,end,pJ"
    assert len(lines) == 4
