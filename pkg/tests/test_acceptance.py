"""The eight acceptance criteria at their stated tolerances, one verdict line each."""

import random
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from picnic.benchmark import run_benchmark
from picnic.control import run_program
from picnic.fixedpoint import EXACT
from picnic.isa import (NpmImage, Port, assemble, decode, disassemble, emit_hex, encode, parse_hex)
from picnic.mapper.collectives import broadcast_ops, pack_rows, reduce_ops, spanning_tree
from picnic.mapper.model import load_model
from picnic.mesh import FIFO_DEPTH, Mesh
from picnic.power import UNIT, tile_power
from picnic.scu import TABLE_FILE, softmax_stream
from picnic.simulator import simulate_desk_attention
from test_isa import random_image, random_instruction
from test_mesh import conservation_holds, preload, random_region, random_route_program

pytestmark = pytest.mark.acceptance

DATA = Path(__file__).parent / "data"
N_RANDOM = 10_000
PROMPT, GEN = 512, 512
TABLE_II = {"llama-1b": 4.05, "llama-8b": 28.40, "llama2-13b": 52.30}


@lru_cache(maxsize=None)
def benchmark(preset: str, prompt: int = PROMPT, gen: int = GEN, ccpg: bool = False,
              interconnect: str | None = None):
    model, hw = load_model(preset)
    return run_benchmark(model, hw, prompt, gen, ccpg, interconnect)


@lru_cache(maxsize=None)
def desk(numeric: str, unroll: int = 1):
    return simulate_desk_attention(numeric, seq_len=16, unroll=unroll, seed=0)


def test_criterion_1_power_composition(verdict):
    pair = UNIT.pair_uw
    tile_mw = tile_power(1.0) * 1e3
    area = UNIT.ipcn_area()
    # 270.654 is stated to 0.001 mW, so it is held to half of that
    tile_ok = abs(tile_mw - 270.654) <= 5e-4
    ok = pair == 259.0 and tile_ok and abs(area - 189.6) / 189.6 <= 0.01
    verdict(1, "power composition", ok,
            f"pair {pair:g} uW, full tile {tile_mw:.5f} mW (target 270.654 +/- 0.0005), "
            f"IPCN area {area:.2f} mm2")
    assert ok


def test_criterion_2_table_ii_power(verdict):
    parts, ok = [], True
    for preset, target in TABLE_II.items():
        p = benchmark(preset).ledger.average_power
        dev = p / target - 1.0
        ok &= abs(dev) <= 0.05
        parts.append(f"{preset} {p:.3f} W ({dev:+.1%} vs {target})")
    verdict(2, "no-CCPG average power within 5%", ok, "; ".join(parts))
    assert ok


def test_criterion_3_ccpg_saving(verdict):
    saving = {}
    for preset in TABLE_II:
        off = benchmark(preset).ledger.average_power
        on = benchmark(preset, ccpg=True).ledger.average_power
        saving[preset] = 1.0 - on / off
    s1, s8, s13 = saving["llama-1b"], saving["llama-8b"], saving["llama2-13b"]
    ok = abs(s8 - 0.80) <= 0.05 and s13 >= s8 >= s1
    verdict(3, "CCPG saving", ok, f"1B {s1:.4f}, 8B {s8:.4f}, 13B {s13:.4f}")
    assert ok


def test_criterion_4_desk_attention_end_to_end(verdict):
    exact, fixed = desk("exact"), desk("fixed")
    ok = exact.exact_match and fixed.error <= 1e-2
    verdict(4, "desk attention D=64 S=16", ok,
            f"exact error {exact.error} ({exact.run.cycles} cycles), "
            f"fixed+PWL relative error {fixed.error:.3e}")
    assert ok


def test_criterion_5_isa_round_trips(verdict):
    rng = random.Random(55)
    counts = dict.fromkeys(("encode/decode", "assemble/disassemble", "emit/parse"), 0)
    for _ in range(N_RANDOM):
        instr = random_instruction(rng)
        counts["encode/decode"] += decode(encode(instr)) == instr
        img = random_image(rng)
        counts["assemble/disassemble"] += assemble(disassemble(img), bank_rows=8) == img
        counts["emit/parse"] += parse_hex(emit_hex(img), bank_rows=8) == img
    corpus = assemble((DATA / "corpus.asm").read_text(), bank_rows=32)
    golden = emit_hex(corpus) == (DATA / "corpus.hex").read_text()
    ok = all(v == N_RANDOM for v in counts.values()) and golden
    verdict(5, "ISA round trips", ok,
            ", ".join(f"{k} {v}/{N_RANDOM}" for k, v in counts.items())
            + f", golden hex {'stable' if golden else 'CHANGED'}")
    assert ok


def _mesh_traffic(seed: int) -> tuple[bool, int, list]:
    rng = random.Random(seed)
    mesh = Mesh(rng.randint(2, 8), rng.randint(2, 8), mode=EXACT)
    for idx, router in enumerate(mesh.routers):
        if router.col % 2 == 0:
            mesh.inject(idx, [rng.randrange(1 << 20) for _ in range(rng.randint(0, 80))])
    mesh.dispatch(random_route_program(mesh, rng), 1 << 16)
    conserved = True
    for _ in range(300):
        mesh.step()
        conserved &= conservation_holds(mesh)
    return conserved, mesh.max_occupancy(), mesh.snapshot()


def _broadcast_once(seed: int) -> bool:
    rng = random.Random(seed)
    rows, cols = rng.randint(2, 8), rng.randint(2, 8)
    cells, root = random_region(rng, rows, cols)
    n = rows * cols
    mesh = Mesh(rows, cols, mode=EXACT)
    stream = [rng.randrange(-1000, 1000) for _ in range(rng.randint(1, 6))]
    for k, v in enumerate(stream):
        mesh.router(*root).sp_write(0x200 + k, v)
    ops = broadcast_ops(spanning_tree(cells, root), ("sp", 0x200), {rc: ("local",) for rc in cells})
    run_program(mesh, [NpmImage(n, pack_rows([ops], n, cols, len(stream)))])
    return all(mesh.router(r, c).fifos[Port.LOCAL].values() == (stream if (r, c) in cells else [])
               for r in range(rows) for c in range(cols))


def _reduce_matches(seed: int) -> bool:
    rng = random.Random(seed)
    rows, cols = rng.randint(2, 8), rng.randint(2, 8)
    cells, root = random_region(rng, rows, cols)
    n = rows * cols
    k = rng.randint(1, 5)
    mesh = Mesh(rows, cols, mode=EXACT)
    values = {rc: [rng.randrange(-(1 << 40), 1 << 40) for _ in range(k)] for rc in cells}
    for rc in cells:
        preload(mesh, mesh.index(*rc), Port.LOCAL, values[rc])
    ops = reduce_ops(spanning_tree(cells, root), {rc: Port.LOCAL for rc in cells}, ("sp", 0x80))
    run_program(mesh, [NpmImage(n, pack_rows([ops], n, cols, k))])
    oracle = [sum(values[rc][t] for rc in cells) for t in range(k)]
    return [mesh.router(*root).sp_read(0x80 + t) for t in range(k)] == oracle


def test_criterion_6_mesh_invariants(verdict):
    seeds = range(600, 620)
    traffic = [_mesh_traffic(s) for s in seeds]
    conserved = all(t[0] for t in traffic)
    worst = max(t[1] for t in traffic)
    deterministic = all(_mesh_traffic(s)[2] == t[2] for s, t in zip(seeds, traffic))
    bcast = sum(_broadcast_once(700 + s) for s in range(20))
    red = sum(_reduce_matches(800 + s) for s in range(20))
    ok = conserved and worst <= FIFO_DEPTH and deterministic and bcast == 20 and red == 20
    verdict(6, "mesh invariants", ok,
            f"conservation {'held' if conserved else 'BROKEN'}, max FIFO {worst}/{FIFO_DEPTH}, "
            f"deterministic {deterministic}, broadcast exactly-once {bcast}/20, reduce {red}/20")
    assert ok


def test_criterion_7_scu_numerics(verdict):
    rng = random.Random(77)
    worst_sum = 0.0
    for n in (1, 2, 7, 64, 500, 4096):
        xs = [0] + [rng.randrange(-10 << 16, 1) for _ in range(n - 1)]
        worst_sum = max(worst_sum, abs(sum(softmax_stream(xs)) / (1 << 30) - 1.0))
    header = {ln.split()[1]: float(ln.split()[-1]) for ln in TABLE_FILE.read_text().splitlines()
              if ln.startswith("# max_")}
    rows = [tuple(map(float, ln.split())) for ln in TABLE_FILE.read_text().splitlines()
            if ln and not ln.startswith("#")]
    bps = np.array([r[0] for r in rows])
    xs = np.linspace(-8.0, 0.0, 1_000_000)
    idx = np.searchsorted(bps, xs, side="left")
    approx = np.array([r[1] for r in rows])[idx] * xs + np.array([r[2] for r in rows])[idx]
    rel = float(np.abs(approx / np.exp(xs) - 1.0).max())
    bound = header["max_rel_error"]
    ok = worst_sum <= 2.0 ** -10 and abs(rel - bound) <= 1e-6 * bound
    verdict(7, "SCU numerics", ok,
            f"max |sum-1| {worst_sum:.2e} (limit {2.0 ** -10:.2e}), "
            f"sweep max rel error {rel:.9e} vs recorded {bound:.9e}")
    assert ok


def test_criterion_8_trends(verdict):
    c2c = [benchmark("llama-8b", c, c).c2c_power for c in (512, 1024, 2048)]
    ordered = c2c[0] > c2c[1] > c2c[2]
    opt = benchmark("llama-8b", interconnect="optical")
    ele = benchmark("llama-8b", interconnect="electrical")
    e_opt = opt.ledger.energy["c2c"] + opt.ledger.energy["dram"]
    e_ele = ele.ledger.energy["c2c"] + ele.ledger.energy["dram"]
    ok = ordered and e_opt < e_ele and opt.cycles == ele.cycles
    verdict(8, "C2C trends", ok,
            "C2C power " + " > ".join(f"{p * 1e3:.3f} mW" for p in c2c)
            + f"; optical {e_opt * 1e-12:.4e} J < electrical {e_ele * 1e-12:.4e} J, "
            f"cycles {opt.cycles} == {ele.cycles}")
    assert ok


def test_unrolling_shortens_desk_schedule():
    one, two = desk("fixed"), desk("fixed", 2)
    assert two.run.cycles < one.run.cycles
    assert two.error <= 1e-2
