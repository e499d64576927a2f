import random

import pytest

from picnic.control import run_program
from picnic.fixedpoint import EXACT
from picnic.isa import NpmImage, Mode, Port, make
from picnic.mapper.collectives import broadcast_ops, pack_rows, reduce_ops, spanning_tree
from picnic.mesh import (FIFO_DEPTH, N_MACS, Flit, MacBank, Mesh, MeshError, dmac_step, drain,
                         run_commands)
from picnic.scu import ScuPort

DIRS = (Port.N, Port.E, Port.S, Port.W)


def preload(mesh: Mesh, idx: int, port: Port, values) -> None:
    for v in values:
        mesh.routers[idx].fifos[port].push(Flit(v), 0)


def test_unicast_one_hop():
    mesh = Mesh(1, 2, mode=EXACT)
    preload(mesh, 0, Port.W, [42])
    mesh.dispatch({0: make(Mode.ROUTE, [Port.W], [Port.E])}, 1)
    mesh.step()
    dest = mesh.routers[1].fifos[Port.W]
    assert dest.values() == [42]
    assert dest.head(mesh.cycle) is not None


def test_broadcast_three_copies_in_one_cycle():
    mesh = Mesh(3, 3, mode=EXACT)
    centre = mesh.index(1, 1)
    preload(mesh, centre, Port.W, [9])
    mesh.dispatch({centre: make(Mode.ROUTE, [Port.W], [Port.N, Port.E, Port.S])}, 1)
    mesh.step()
    assert mesh.router(0, 1).fifos[Port.S].values() == [9]
    assert mesh.router(1, 2).fifos[Port.W].values() == [9]
    assert mesh.router(2, 1).fifos[Port.N].values() == [9]
    assert mesh.duplicated == 2


def test_broadcast_stalls_atomically_on_full_destination():
    mesh = Mesh(1, 3, mode=EXACT)
    preload(mesh, 1, Port.N, [1])
    preload(mesh, 2, Port.W, range(FIFO_DEPTH))
    mesh.dispatch({1: make(Mode.ROUTE, [Port.N], [Port.E, Port.W])}, 1)
    for _ in range(5):
        mesh.step()
    assert mesh.router(0, 0).fifos[Port.E].values() == []
    assert mesh.router(0, 1).fifos[Port.N].values() == [1]


def test_xy_route_six_hops():
    mesh = Mesh(4, 4, mode=EXACT)
    mesh.enable_trace()
    cmds = {mesh.index(0, 0): make(Mode.ROUTE, [Port.TSV], [Port.E])}
    for c in (1, 2):
        cmds[mesh.index(0, c)] = make(Mode.ROUTE, [Port.W], [Port.E])
    cmds[mesh.index(0, 3)] = make(Mode.ROUTE, [Port.W], [Port.S])
    for r in (1, 2):
        cmds[mesh.index(r, 3)] = make(Mode.ROUTE, [Port.N], [Port.S])
    cmds[mesh.index(3, 3)] = make(Mode.ROUTE, [Port.N], [Port.LOCAL])
    mesh.inject(0, [123])
    run_commands(mesh, cmds)
    pops = {(router, port): cycle for cycle, router, port, ev in mesh.trace if ev == "pop"}
    leave = pops[(0, "TSV")]
    arrive = pops[(mesh.index(3, 3), "N")]
    # Manhattan distance 6 at one cycle per hop
    assert arrive - leave == 6
    assert mesh.router(3, 3).fifos[Port.LOCAL].values() == [123]


def test_dmac_hand_dot_product():
    assert dmac_step([1, 2, 3], [4, 5, 6]) == 32


def test_dmac_zero_stream():
    rng = random.Random(0)
    a = [rng.randrange(-1000, 1000) for _ in range(20)]
    assert dmac_step(a, [0] * 20) == 0


def test_sixteen_macs_run_in_parallel():
    rng = random.Random(1)
    pairs = [([rng.randrange(-50, 50) for _ in range(8)], [rng.randrange(-50, 50) for _ in range(8)])
             for _ in range(N_MACS)]
    bank = MacBank()
    out = bank.run(pairs)
    assert bank.cycles == 8
    assert out == [sum(x * y for x, y in zip(a, b)) for a, b in pairs]


def test_dmac_on_mesh_pair_mode_then_flush():
    mesh = Mesh(1, 1, mode=EXACT)
    preload(mesh, 0, Port.N, [1, 2, 3])
    preload(mesh, 0, Port.S, [4, 5, 6])
    run_commands(mesh, {0: make(Mode.DMAC, [Port.N, Port.S], 0, False, 0)}, repeat=3)
    run_commands(mesh, {0: make(Mode.DMAC, 0, 0, True, 0x40)}, repeat=1)
    assert mesh.routers[0].sp_read(0x40) == 32


def test_dmac_saturation_flag():
    bank = MacBank()
    big = 1 << 100
    bank.mac(0, big, big)
    assert bank.overflow
    assert bank.acc[0] == (1 << 127) - 1


@pytest.mark.parametrize("a,b,expected", [(3, 4, 7), (11, 0, 11), (-5, 2, -3)])
def test_partial_sum(a, b, expected):
    mesh = Mesh(1, 1, mode=EXACT)
    preload(mesh, 0, Port.TSV, [a])
    preload(mesh, 0, Port.LOCAL, [b])
    run_commands(mesh, {0: make(Mode.PSUM, [Port.TSV, Port.LOCAL], 0, True, 5)})
    assert mesh.routers[0].sp_read(5) == expected


def test_linear_activation_is_relu():
    mesh = Mesh(1, 1, mode=EXACT)
    preload(mesh, 0, Port.N, [-5, 7, 0])
    run_commands(mesh, {0: make(Mode.LINACT, [Port.N], [Port.LOCAL])}, repeat=3)
    assert mesh.routers[0].fifos[Port.LOCAL].values() == [0, 7, 0]


def test_reduce_4x4_through_controller():
    mesh = Mesh(4, 4, mode=EXACT)
    cells = [(r, c) for r in range(4) for c in range(4)]
    for k, (r, c) in enumerate(cells):
        preload(mesh, mesh.index(r, c), Port.LOCAL, [k + 1])
    tree = spanning_tree(cells, (0, 0))
    ops = reduce_ops(tree, {rc: Port.LOCAL for rc in cells}, ("sp", 0x30))
    rows = pack_rows([ops], 16, 4, 1)
    run_program(mesh, [NpmImage(16, rows)])
    assert mesh.router(0, 0).sp_read(0x30) == 136


def test_scratchpad_read_your_write():
    router = Mesh(1, 1).routers[0]
    router.sp_write(10, 0xDEAD)
    assert router.sp_read(10) == 0xDEAD
    assert router.sp_read(11) == 0


def test_scratchpad_full_then_overwrite():
    router = Mesh(1, 1).routers[0]
    for a in range(4096):
        router.sp_write(a, a + 1)
    router.sp_write(0, -7)
    assert router.sp_read(0) == -7
    assert router.sp_read(4095) == 4096
    with pytest.raises(MeshError):
        router.sp_write(4096, 1)
    with pytest.raises(MeshError):
        router.sp_read(-1)


def test_scratchpad_commands_round_trip():
    mesh = Mesh(1, 1, mode=EXACT)
    preload(mesh, 0, Port.N, [5, 6, 7])
    run_commands(mesh, {0: make(Mode.SPWR, [Port.N], 0, True, 100)}, repeat=3)
    run_commands(mesh, {0: make(Mode.SPRD, 0, [Port.LOCAL], True, 100)}, repeat=3)
    assert mesh.routers[0].fifos[Port.LOCAL].values() == [5, 6, 7]


def test_vertical_ports_alternate_by_column():
    mesh = Mesh(2, 4)
    assert [mesh.router(0, c).vertical for c in range(4)] == ["TSV_down", "TSV_up"] * 2
    assert mesh.router(1, 1).port_map[int(Port.TSV)] == "TSV_up"
    with pytest.raises(MeshError):
        mesh.attach_scu(mesh.index(0, 2), ScuPort())
    with pytest.raises(MeshError):
        mesh.inject(mesh.index(0, 1), [1])
    mesh.attach_scu(mesh.index(0, 1), ScuPort())


def random_route_program(mesh: Mesh, rng: random.Random) -> dict:
    cmds = {}
    for idx, router in enumerate(mesh.routers):
        readable = [p for p in DIRS if mesh.neighbor(idx, p) is not None] + [Port.LOCAL]
        if router.col % 2 == 0:
            readable.append(Port.TSV)
        writable = [p for p in DIRS if mesh.neighbor(idx, p) is not None] + [Port.LOCAL]
        if router.col % 2 == 0:
            writable.append(Port.TSV)
        rd = rng.sample(readable, rng.randint(1, len(readable)))
        out = rng.sample(writable, rng.randint(0, 3))
        cmds[idx] = make(Mode.ROUTE, rd, out)
    return cmds


def conservation_holds(mesh: Mesh) -> bool:
    return mesh.injected + mesh.duplicated == mesh.ejected + mesh.in_flight() + mesh.dropped


@pytest.mark.parametrize("seed", range(6))
def test_random_traffic_conservation_and_fifo_bound(seed):
    rng = random.Random(seed)
    mesh = Mesh(rng.randint(2, 6), rng.randint(2, 6), mode=EXACT)
    for idx, router in enumerate(mesh.routers):
        if router.col % 2 == 0:
            mesh.inject(idx, [rng.randrange(1 << 20) for _ in range(rng.randint(0, 80))])
    mesh.dispatch(random_route_program(mesh, rng), 1 << 16)
    for _ in range(400):
        mesh.step()
        assert conservation_holds(mesh)
    assert mesh.injected > 0
    assert mesh.max_occupancy() <= FIFO_DEPTH


def test_backpressure_fills_fifo_to_bound_only():
    mesh = Mesh(1, 2, mode=EXACT)
    mesh.inject(0, range(100))
    # router 1 never reads, so its West FIFO fills and stalls router 0
    mesh.dispatch({0: make(Mode.ROUTE, [Port.TSV], [Port.E])}, 100)
    for _ in range(200):
        mesh.step()
    assert len(mesh.routers[1].fifos[Port.W]) == FIFO_DEPTH
    assert mesh.max_occupancy() == FIFO_DEPTH
    assert conservation_holds(mesh)


def test_mesh_is_deterministic():
    def once():
        rng = random.Random(7)
        mesh = Mesh(4, 5, mode=EXACT)
        for idx, router in enumerate(mesh.routers):
            if router.col % 2 == 0:
                mesh.inject(idx, [rng.randrange(1000) for _ in range(30)])
        mesh.dispatch(random_route_program(mesh, rng), 1000)
        states = []
        for _ in range(150):
            mesh.step()
            states.append(mesh.snapshot())
        return states, mesh.egress

    assert once() == once()


def random_region(rng: random.Random, rows: int, cols: int):
    h, w = rng.randint(1, rows), rng.randint(1, cols)
    r0, c0 = rng.randint(0, rows - h), rng.randint(0, cols - w)
    cells = [(r, c) for r in range(r0, r0 + h) for c in range(c0, c0 + w)]
    return cells, rng.choice(cells)


@pytest.mark.parametrize("seed", range(10))
def test_broadcast_exactly_once_random_regions(seed):
    rng = random.Random(100 + seed)
    rows, cols = rng.randint(2, 8), rng.randint(2, 8)
    cells, root = random_region(rng, rows, cols)
    n = rows * cols
    mesh = Mesh(rows, cols, mode=EXACT)
    stream = [rng.randrange(-1000, 1000) for _ in range(rng.randint(1, 6))]
    for k, v in enumerate(stream):
        mesh.router(*root).sp_write(0x200 + k, v)
    tree = spanning_tree(cells, root)
    assert len(tree.edges) == len(cells) - 1
    ops = broadcast_ops(tree, ("sp", 0x200), {rc: ("local",) for rc in cells})
    run_program(mesh, [NpmImage(n, pack_rows([ops], n, cols, len(stream)))])
    for r in range(rows):
        for c in range(cols):
            got = mesh.router(r, c).fifos[Port.LOCAL].values()
            assert got == (stream if (r, c) in cells else [])
    assert mesh.dropped == 0


@pytest.mark.parametrize("seed", range(10))
def test_reduce_equals_oracle_random_regions(seed):
    rng = random.Random(200 + seed)
    rows, cols = rng.randint(2, 8), rng.randint(2, 8)
    cells, root = random_region(rng, rows, cols)
    n = rows * cols
    k = rng.randint(1, 5)
    mesh = Mesh(rows, cols, mode=EXACT)
    values = {}
    for rc in cells:
        values[rc] = [rng.randrange(-(1 << 40), 1 << 40) for _ in range(k)]
        preload(mesh, mesh.index(*rc), Port.LOCAL, values[rc])
    tree = spanning_tree(cells, root)
    ops = reduce_ops(tree, {rc: Port.LOCAL for rc in cells}, ("sp", 0x80))
    run_program(mesh, [NpmImage(n, pack_rows([ops], n, cols, k))])
    oracle = [sum(values[rc][t] for rc in cells) for t in range(k)]
    assert [mesh.router(*root).sp_read(0x80 + t) for t in range(k)] == oracle


def test_drain_on_idle_mesh():
    assert drain(Mesh(2, 2)) == 0
