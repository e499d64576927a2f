import math

import pytest

from picnic.benchmark import full_power, plan_for, run_benchmark
from picnic.mapper.model import load_model
from picnic.power import (MACRO_CLASSES, UNIT, ClusterState, EnergyLedger, PowerError, TileMode,
                          ccpg_step, cluster_visits, gating_breakeven, make_clusters, tile_breakdown,
                          tile_power)


@pytest.fixture(scope="module")
def plan_8b():
    model, hw = load_model("llama-8b")
    return plan_for(model, hw)


def test_pair_power():
    assert UNIT.pair_uw == pytest.approx(259.0)


def test_full_tile_power():
    # 1024 * 259 uW + 1024 * 5.31 uW
    assert tile_power(1.0) == pytest.approx(0.27065344, abs=1e-12)


def test_sleeping_tile_power():
    assert tile_power(0.0, TileMode.SCRATCHPAD_ONLY) == pytest.approx(0.043008, abs=1e-12)
    assert tile_power(0.7, TileMode.SCRATCHPAD_ONLY) == pytest.approx(0.043008, abs=1e-12)


def test_idle_tile_without_scus_draws_nothing():
    assert tile_power(0.0, scus_active=0) == 0.0


def test_breakdown_sums_to_tile_power():
    for u in (0.0, 0.25, 0.625, 1.0):
        for mode in TileMode:
            assert math.fsum(tile_breakdown(u, mode).values()) == pytest.approx(tile_power(u, mode))


def test_utilization_range_checked():
    with pytest.raises(PowerError):
        tile_power(1.5)
    with pytest.raises(PowerError):
        tile_breakdown(-0.1, TileMode.FULL)


def test_ipcn_area():
    area = UNIT.ipcn_area()
    assert area == pytest.approx(1024 * 0.1842)
    assert abs(area - 189.6) / 189.6 <= 0.01


def test_gating_breakeven():
    n = gating_breakeven()
    # ceil((1024 * 42 - 1024 * 5.31) / 259)
    assert n == 146
    sleep = tile_power(0.0, TileMode.SCRATCHPAD_ONLY)
    assert tile_power(145 / 1024) < sleep
    assert tile_power(146 / 1024) >= sleep


def test_make_clusters():
    assert make_clusters(10, 4) == ((0, 1, 2, 3), (4, 5, 6, 7), (8, 9))
    with pytest.raises(PowerError):
        make_clusters(4, 0)


def test_ccpg_step_transitions():
    state = ClusterState.initial(8, 4)
    assert state.active_cluster is None
    state, e = ccpg_step(state, 1, 5.0)
    assert (state.active_cluster, e, state.transitions) == (0, 5.0, 1)
    assert state.modes[:4] == (TileMode.FULL,) * 4
    assert state.modes[4:] == (TileMode.SCRATCHPAD_ONLY,) * 4
    same, e = ccpg_step(state, 3, 5.0)
    assert same is state and e == 0.0
    state, _ = ccpg_step(state, 6)
    assert state.active_cluster == 1
    assert state.modes == (TileMode.SCRATCHPAD_ONLY,) * 4 + (TileMode.FULL,) * 4
    assert state.transitions == 2


def test_unmapped_tile_rejected():
    with pytest.raises(PowerError):
        ccpg_step(ClusterState.initial(8, 4), 8)


def test_8b_plan_visits_clusters_in_order(plan_8b):
    state = ClusterState.initial(plan_8b.n_chiplets, plan_8b.hardware.cluster_size)
    visits = cluster_visits(range(plan_8b.n_chiplets), state)
    assert visits == list(range(len(state.clusters)))


def test_ccpg_never_raises_instantaneous_power(plan_8b):
    b = gating_breakeven()
    utils = [c.utilization for c in plan_8b.chiplets]
    assert min(utils) * 1024 >= b
    state = ClusterState.initial(len(utils), plan_8b.hardware.cluster_size)
    no_gate = full_power(plan_8b)
    for t in range(len(utils)):
        state, _ = ccpg_step(state, t)
        gated = sum(tile_power(u, m) for u, m in zip(utils, state.modes))
        assert gated <= no_gate


def test_ccpg_saves_energy_on_small_run():
    model, hw = load_model("llama-1b")
    off = run_benchmark(model, hw, 4, 4, ccpg=False)
    on = run_benchmark(model, hw, 4, 4, ccpg=True)
    assert on.cycles == off.cycles
    assert on.ledger.total < off.ledger.total
    assert sum(on.cluster_time) >= on.cycles - 1


def test_ledger_additivity():
    lg = EnergyLedger(cycles=1000, tokens=4)
    lg.add("pe", 10.0, "a")
    lg.add("pe", 5.0, "b")
    lg.add("c2c", 2.5, "a")
    assert lg.total == 17.5
    assert lg.energy["pe"] == 15.0
    assert sum(sum(p.values()) for p in lg.phases.values()) == lg.total
    assert set(lg.energy) == set(MACRO_CLASSES)


def test_ledger_rejects_bad_entries():
    lg = EnergyLedger()
    with pytest.raises(PowerError):
        lg.add("pe", -1.0)
    with pytest.raises(PowerError):
        lg.add("fan", 1.0)


def test_ledger_power_and_efficiency():
    lg = EnergyLedger(frequency_hz=1e9, cycles=10 ** 9, tokens=50)
    lg.add_power({"pe": 2.0, "router": 0.5}, 10 ** 9)
    assert lg.seconds == 1.0
    assert lg.average_power == pytest.approx(2.5)
    assert lg.class_power("pe") == pytest.approx(2.0)
    assert lg.throughput == pytest.approx(50.0)
    assert lg.efficiency == pytest.approx(lg.throughput / lg.average_power)


def test_empty_ledger():
    lg = EnergyLedger()
    assert lg.average_power == 0.0
    assert lg.throughput == 0.0
    assert lg.efficiency == 0.0
