"""Wire a compiled attention schedule onto a mesh and run it cycle by cycle."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import HardwareConfig
from .control import ControlLog, Controller
from .fixedpoint import to_fixed
from .mapper.attention import AttentionWeights, Schedule
from .mesh import Mesh, PeDevice
from .pe import PeArray
from .scu import ScuPort


class SimulationError(RuntimeError):
    pass


@dataclass
class AttentionRun:
    outputs: list[list[int]]
    cycles: int
    rows: int
    log: ControlLog
    mesh: Mesh = field(repr=False)

    def real_outputs(self, frac_bits: int = 16) -> np.ndarray:
        return np.asarray(self.outputs, dtype=float) / (1 << frac_bits)


def build_mesh(sched: Schedule, weights: AttentionWeights, hw: HardwareConfig,
               input_rms: dict[str, float] | None = None) -> Mesh:
    """Mesh with programmed crossbars, the score host's SCU and preloaded constants."""
    mode = sched.mode
    mesh = Mesh(sched.rows, sched.cols, mode, depth=hw.fifo_depth, hop_latency=hw.hop_latency)
    t = sched.tile
    for mp in sched.placement.placements:
        w = weights.matrix(mp.item.name)
        rms = (input_rms or {}).get(mp.item.name, 1.0)
        for (i, j), (r, c) in mp.tiles.items():
            arr = PeArray(size=t, weight_bits=hw.weight_bits, adc_bits=hw.adc_bits, input_rms=rms,
                          scale=weights.scales[mp.item.name], mode=mode)
            arr.program(w[i * t:(i + 1) * t, j * t:(j + 1) * t])
            mesh.attach_pe(mesh.index(r, c), PeDevice(arr, latency=hw.smac_latency, depth=hw.fifo_depth))
    host = mesh.index(*sched.score_host)
    mesh.attach_scu(host, ScuPort(exact=mode.exact, score_scale=weights.score_scale,
                                  depth=hw.fifo_depth))
    for (r, c), words in sched.preload.items():
        router = mesh.router(r, c)
        for addr, v in words.items():
            router.sp_write(addr, v)
    return mesh


def encode_inputs(xs: Sequence[Sequence[float]], sched: Schedule) -> list[list[int]]:
    """Real inputs to the mesh's integer format (Q16 in fixed mode, as-is in exact mode)."""
    if sched.mode.exact:
        return [[int(v) for v in x] for x in xs]
    return [[to_fixed(float(v), sched.mode.frac_bits) for v in x] for x in xs]


def run_attention(sched: Schedule, weights: AttentionWeights, xs: Sequence[Sequence[int]],
                  hw: HardwareConfig, input_rms: dict[str, float] | None = None,
                  trace: bool = False) -> AttentionRun:
    """Simulate every token of ``xs`` (already in mesh integer format)."""
    if len(xs) != sched.seq_len:
        raise SimulationError(f"schedule covers {sched.seq_len} tokens, got {len(xs)} inputs")
    mesh = build_mesh(sched, weights, hw, input_rms)
    if trace:
        mesh.enable_trace()
    mesh.inject(mesh.index(*sched.entry), [int(v) for x in xs for v in x])
    ctl = Controller(mesh, sched.images(), write_rate=hw.npm_write_rate)
    cycles = ctl.run()
    by_router: dict[int, deque[int]] = {}
    for _, idx, v in mesh.egress:
        by_router.setdefault(idx, deque()).append(v)
    t = sched.tile
    outputs = []
    for token in sched.egress:
        y = [0] * sched.dim
        for root, seg in token:
            q = by_router.get(mesh.index(*root), deque())
            if len(q) < t:
                raise SimulationError(f"egress router {root} produced too few flits")
            for k in range(t):
                y[seg * t + k] = q.popleft()
        outputs.append(y[:sched.dim])
    leftover = sum(len(q) for q in by_router.values())
    if leftover:
        raise SimulationError(f"{leftover} unexpected egress flits")
    return AttentionRun(outputs, cycles, len(sched.all_rows), ctl.log, mesh)


@dataclass
class DeskResult:
    run: AttentionRun
    schedule: Schedule
    reference: list
    error: float            # max |out - ref| / max |ref| (0 when bit-exact in exact mode)

    @property
    def exact_match(self) -> bool:
        return self.error == 0


def desk_inputs(seq_len: int, dim: int, seed: int, exact: bool) -> np.ndarray:
    """Seeded activations: small integers in exact mode, U(-1, 1) otherwise."""
    rng = np.random.default_rng(seed)
    if exact:
        return rng.integers(-4, 5, size=(seq_len, dim))
    return rng.uniform(-1.0, 1.0, size=(seq_len, dim))


def simulate_desk_attention(numeric: str = "fixed", seq_len: int = 16, unroll: int = 1,
                            seed: int = 0, preset: str = "desk",
                            hw: HardwareConfig | None = None) -> DeskResult:
    """Map, compile and simulate the desk attention layer against its dense oracle."""
    from .fixedpoint import NumericMode
    from .mapper.attention import (attention_exact, attention_float, attention_inputs,
                                   schedule_attention, synthetic_weights)
    from .mapper.model import load_model
    from .mapper.plan import build_plan

    model, preset_hw = load_model(preset)
    hw = hw or preset_hw
    plan = build_plan(model, hw)
    placement = plan.chiplets[0].placement
    mode = NumericMode.parse(numeric)
    weights = synthetic_weights(model.embed_dim, seed, model.head_dim)
    sched = schedule_attention(placement, hw.pe_size, model.embed_dim, seq_len, unroll, mode,
                               bank_rows=hw.bank_rows)
    xs = desk_inputs(seq_len, model.embed_dim, seed + 1, mode.exact)
    if mode.exact:
        xi = [[int(v) for v in x] for x in xs]
        run = run_attention(sched, weights, xi, hw)
        ref = attention_exact(weights, xi)
        diff = max(abs(a - b) for ra, rb in zip(run.outputs, ref) for a, b in zip(ra, rb))
        err = diff / max(1, max(abs(b) for rb in ref for b in rb))
        return DeskResult(run, sched, ref, err)
    xq = encode_inputs(xs, sched)
    xr = np.asarray(xq, dtype=float) / (1 << mode.frac_bits)
    run = run_attention(sched, weights, xq, hw, attention_inputs(weights, xr))
    ref = np.asarray(attention_float(weights, xr))
    got = run.real_outputs(mode.frac_bits)
    err = float(np.abs(got - ref).max() / np.abs(ref).max())
    return DeskResult(run, sched, ref.tolist(), err)
