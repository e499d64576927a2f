"""End-to-end benchmark: plan a model, time every token, account energy and C2C traffic.

Prefill is processed one token at a time, exactly like decode, so the run
covers ``prompt_len + gen_len`` context positions.  Throughput counts the
generated tokens over the whole run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import HardwareConfig
from .interconnect import DRAM_HUB, TransferLog, c2c_power_profile, link_for
from .mapper.model import ModelSpec
from .mapper.plan import MappingPlan, build_plan
from .perf import TimingModel
from .power import (ClusterState, EnergyLedger, TileMode, cluster_visits, tile_breakdown, tile_power)


@dataclass
class BenchmarkResult:
    model: str
    prompt_len: int
    gen_len: int
    ccpg: bool
    interconnect: str
    plan: MappingPlan
    ledger: EnergyLedger
    log: TransferLog
    cluster_time: list[int] = field(default_factory=list)
    transitions: int = 0

    @property
    def cycles(self) -> int:
        return self.ledger.cycles

    @property
    def context(self) -> str:
        return f"{self.prompt_len}/{self.gen_len}"

    @property
    def c2c_power(self) -> float:
        return (self.ledger.class_power("c2c") + self.ledger.class_power("dram"))

    def row(self) -> dict:
        lg = self.ledger
        return {
            "model": self.model,
            "context": self.context,
            "ccpg": "on" if self.ccpg else "off",
            "interconnect": self.interconnect,
            "chiplets": self.plan.n_chiplets,
            "cycles": lg.cycles,
            "throughput_tokens_per_s": round(lg.throughput, 4),
            "average_power_w": round(lg.average_power, 6),
            "efficiency_tokens_per_j": round(lg.efficiency, 4),
            "c2c_power_w": round(self.c2c_power, 9),
            "energy_j": round(lg.total * 1e-12, 9),
        }

    def power_series(self, window: int) -> tuple[np.ndarray, float]:
        return c2c_power_profile(self.log, window, self.ledger.frequency_hz, horizon=self.cycles)


_PLANS: dict[tuple, MappingPlan] = {}


def plan_for(model: ModelSpec, hw: HardwareConfig, context: int | None = None) -> MappingPlan:
    """Memoized :func:`build_plan` (placement search dominates for large models)."""
    key = (model, hw)
    plan = _PLANS.get(key)
    if plan is None:
        plan = _PLANS[key] = build_plan(model, hw)
    if context is not None:
        from .mapper.kvcache import kv_budget
        plan = MappingPlan(plan.model, plan.hardware, plan.chiplets, plan.packed,
                           [kv_budget(plan, d, context) for d in range(model.num_layers)])
    return plan


def run_benchmark(model: ModelSpec, hw: HardwareConfig, prompt_len: int = 512, gen_len: int = 512,
                  ccpg: bool = False, interconnect: str | None = None,
                  plan: MappingPlan | None = None) -> BenchmarkResult:
    kind = interconnect or hw.interconnect
    plan = plan or plan_for(model, hw, prompt_len + gen_len)
    tm = TimingModel.build(plan)
    n_chip = plan.n_chiplets
    positions = np.arange(1, prompt_len + gen_len + 1, dtype=np.int64)
    mesh = tm.mesh_cycles(positions)                        # (chiplets, tokens)
    h = tm.handoff_cycles
    bits = tm.handoff_bits
    token = mesh.sum(axis=0) + (n_chip + 1) * h
    total = int(token.sum())
    ledger = EnergyLedger(hw.frequency_hz, cycles=total, tokens=gen_len)

    # C2C events: DRAM -> 0, c -> c+1, last -> DRAM for every token
    token_start = np.concatenate([[0], np.cumsum(token)[:-1]])
    offsets = np.vstack([np.zeros((1, mesh.shape[1]), dtype=np.int64),
                         np.cumsum(mesh, axis=0) + h * np.arange(1, n_chip + 1)[:, None]])
    starts = (token_start[None, :] + offsets).T.reshape(-1)   # token-major
    srcs = [DRAM_HUB] + list(range(n_chip))
    dsts = list(range(n_chip)) + [DRAM_HUB]
    links = [link_for(hw, s, d, kind) for s, d in zip(srcs, dsts)]
    per_event = np.array([lk.energy(bits) for lk in links])
    link_only = np.array([bits * lk.energy_per_bit for lk in links])
    n_tok = len(positions)
    log = TransferLog(
        src=srcs * n_tok, dst=dsts * n_tok, bits=np.full(starts.size, bits),
        start=starts, end=starts + links[0].duration(bits), energy=np.tile(per_event, n_tok))
    ledger.add("c2c", float(link_only.sum()) * n_tok, "c2c")
    ledger.add("dram", float((per_event - link_only).sum()) * n_tok, "c2c")

    utils = [c.utilization for c in plan.chiplets]
    state = ClusterState.initial(n_chip, hw.cluster_size)
    cluster_time: list[int] = []
    transitions = 0
    if not ccpg:
        for u in utils:
            ledger.add_power(tile_breakdown(u, TileMode.FULL), total, "mesh")
    else:
        # cluster k is FULL while its chiplets compute and send their outputs
        mesh_total = mesh.sum(axis=1)
        busy = mesh_total + n_tok * h                            # each chiplet's outbound transfer
        busy[0] += n_tok * h                                     # DRAM fetch wakes the first cluster
        sleep = tile_breakdown(0.0, TileMode.SCRATCHPAD_ONLY)
        for k, members in enumerate(state.clusters):
            tau = int(busy[list(members)].sum())
            cluster_time.append(tau)
            for c in range(n_chip):
                watts = tile_breakdown(utils[c], TileMode.FULL) if c in members else sleep
                ledger.add_power(watts, tau, "mesh")
        visits = cluster_visits(range(n_chip), state)
        transitions = len(visits) * n_tok if len(visits) > 1 else 1
        if hw.wake_energy_pj:
            ledger.add("wake", hw.wake_energy_pj * transitions, "ccpg")
    return BenchmarkResult(model.name, prompt_len, gen_len, ccpg, kind, plan, ledger, log,
                           cluster_time, transitions)


def full_power(plan: MappingPlan) -> float:
    """Mesh power with every chiplet FULL (no gating, no C2C)."""
    return sum(tile_power(c.utilization) for c in plan.chiplets)
