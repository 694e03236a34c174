import numpy as np
import pytest

from clothmpm.constitutive import ElasticParams, qr_gram_schmidt
from clothmpm.geometry import MeshSequence, material_frames
from clothmpm.grid import BackgroundGrid, DomainError, GridSpec
from clothmpm.mpm import (CFLViolation, ParticleState, SimConfig, SimulationError, Simulator,
                          grid_to_particle, grid_update, make_grid, particle_to_grid,
                          scene_bounds, simulate_sequence, substep, update_material_frames)
from clothmpm.params import PhysParams
from clothmpm.restshape import RestShapeParam, build_rest_state
from clothmpm.scenes import cloth_patch, top_row

from conftest import random_rotation

NO_STRESS = ElasticParams()
BOX = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))


def point_particles(x, v, m):
    x = np.atleast_2d(np.asarray(x, float))
    n = len(x)
    return ParticleState(x=x.copy(), v=np.atleast_2d(np.asarray(v, float)).copy(),
                         C=np.zeros((n, 3, 3)), m=np.asarray(m, float).reshape(n),
                         faces=np.zeros((0, 3), np.int64), d=np.zeros((0, 3, 3)),
                         D_inv=np.zeros((0, 3, 3)), vol=np.zeros(0), n_vertices=n)


def grid32():
    return BackgroundGrid(GridSpec.from_bounds(*BOX, 32))


def patch(n=6, y=0.0):
    return cloth_patch(n, n, 0.5, 0.5, origin=(-0.25, y, -0.25))


def test_config_validation():
    for bad in (dict(substeps=0), dict(grid_resolution=4), dict(frame_dt=0),
                dict(domain_bounds=((0, 0, 0), (1, 0, 1))), dict(cloth_friction=-1)):
        with pytest.raises(ValueError):
            SimConfig(**bad)
    assert SimConfig().dt == pytest.approx(1e-4)


def test_particle_state_layout():
    cloth = patch()
    ps = ParticleState.from_mesh(cloth, material_frames(cloth), rho=2.0)
    assert ps.n_particles == cloth.n_vertices + cloth.n_faces
    assert np.all(ps.m > 0)
    assert ps.total_mass() == pytest.approx(2.0 * cloth.total_area(), rel=1e-12)
    np.testing.assert_allclose(ps.x[cloth.n_vertices:], cloth.vertices[cloth.faces].mean(1))


def test_p2g_single_particle():
    g = grid32()
    ps = point_particles([[0.1, 0.2, 0.3]], [[0, 0, 0]], [2.5])
    particle_to_grid(ps, g, NO_STRESS, 1e-3)
    assert g.total_mass() == pytest.approx(2.5, rel=1e-14)
    assert np.all(g.total_momentum() == 0)
    g2 = grid32()
    ps = point_particles([[0.1, 0.2, 0.3]], [[1.0, -2.0, 0.5]], [2.5])
    particle_to_grid(ps, g2, NO_STRESS, 1e-3)
    np.testing.assert_allclose(g2.total_momentum(), [2.5, -5.0, 1.25], rtol=1e-12)


def test_p2g_two_particles(rng):
    x = rng.uniform(-0.5, 0.5, (2, 3))
    v = rng.normal(size=(2, 3))
    m = rng.uniform(0.5, 2.0, 2)
    ps = point_particles(x, v, m)
    ps.C[:] = rng.normal(size=(2, 3, 3))  # affine terms carry no net momentum
    g = grid32()
    particle_to_grid(ps, g, NO_STRESS, 1e-3)
    np.testing.assert_allclose(g.total_momentum(), (m[:, None] * v).sum(0), rtol=1e-10)
    assert g.total_mass() == pytest.approx(m.sum(), rel=1e-12)


def test_grid_update_gravity_and_empty_nodes():
    g = grid32()
    ps = point_particles([[0.0, 0.0, 0.0]], [[0.3, 0.1, 0]], [1.0])
    particle_to_grid(ps, g, NO_STRESS, 1e-4)
    before = g.momentum[g.active_nodes()] / g.mass[g.active_nodes(), None]
    grid_update(g, (0, 0, 0), 1e-4)
    np.testing.assert_allclose(g.velocity[g.active_nodes()], before, rtol=1e-15)
    grid_update(g, (0, -9.8, 0), 1e-4)
    np.testing.assert_allclose(g.velocity[g.active_nodes(), 1], before[:, 1] - 9.8e-4, atol=1e-15)
    untouched = np.setdiff1d(np.arange(g.spec.n_nodes), g.active_nodes())
    assert not g.velocity[untouched].any()


def test_grid_update_sticky_walls():
    g = grid32()
    ps = point_particles([[-0.9, 0.0, 0.0]], [[-1.0, 1.0, 0]], [1.0])
    particle_to_grid(ps, g, NO_STRESS, 1e-4)
    grid_update(g, (0, 0, 0), 1e-4)
    ijk = g.spec.unflat(g.active_nodes())
    wall = ijk[:, 0] < g.spec.boundary
    assert wall.any()
    assert np.all(g.velocity[g.active_nodes()[wall], 0] == 0)


def _grid_with_field(fn):
    g = grid32()
    pos = g.spec.node_position(np.arange(g.spec.n_nodes))
    g.velocity[:] = fn(pos)
    return g


def test_g2p_constant_and_linear(rng):
    u = np.array([0.3, -0.2, 0.1])
    g = _grid_with_field(lambda p: np.broadcast_to(u, p.shape))
    ps = point_particles(rng.uniform(-0.5, 0.5, (5, 3)), np.zeros((5, 3)), np.ones(5))
    x0 = ps.x.copy()
    grid_to_particle(g, ps, 0.0)
    np.testing.assert_allclose(ps.v, np.broadcast_to(u, (5, 3)), atol=1e-14)
    np.testing.assert_allclose(ps.C, 0, atol=1e-12)
    np.testing.assert_array_equal(ps.x, x0)
    A = rng.normal(size=(3, 3))
    g = _grid_with_field(lambda p: p @ A.T)
    grid_to_particle(g, ps, 1e-3)
    np.testing.assert_allclose(ps.C, np.broadcast_to(A, (5, 3, 3)), atol=1e-6)
    np.testing.assert_allclose(ps.v, x0 @ A.T, atol=1e-12)
    np.testing.assert_allclose(ps.x, x0 + 1e-3 * ps.v, atol=1e-15)


def _state(cloth, rest=None, rho=1.0):
    return ParticleState.from_mesh(cloth, rest or material_frames(cloth), rho)


def test_frames_translation_and_scaling():
    cloth = patch()
    ps = _state(cloth)
    d0 = ps.d.copy()
    nv = cloth.n_vertices
    ps.x[:nv] += [0.1, -0.2, 0.3]
    update_material_frames(ps, 1e-3)
    np.testing.assert_allclose(ps.d, d0, atol=1e-14)
    ps = _state(cloth)
    ps.x[:nv] *= 2.0
    update_material_frames(ps, 1e-3)
    np.testing.assert_allclose(ps.d[:, :, :2], 2 * d0[:, :, :2], atol=1e-14)
    np.testing.assert_allclose(ps.d[:, :, 2], d0[:, :, 2], atol=1e-12)


def test_frames_rigid_rotation(rng):
    cloth = patch()
    ps = _state(cloth)
    nv = cloth.n_vertices
    W = rng.normal(size=(3, 3))
    W = W - W.T
    dt = 1e-3
    w, V = np.linalg.eig(W * dt)
    Om = np.real(V @ np.diag(np.exp(w)) @ np.linalg.inv(V))  # exp(dt W)
    ps.x[:nv] = ps.x[:nv] @ Om.T
    ps.C[nv:] = W
    update_material_frames(ps, dt)
    for F in ps.deformation_gradients():
        Q, R = qr_gram_schmidt(F)
        assert np.abs(R - np.eye(3)).max() < 10 * dt ** 2


def test_return_mapping_bounds_normal_stretch():
    cloth = patch()
    ps = _state(cloth)
    nv = cloth.n_vertices
    ps.C[nv:] = np.diag([0.0, 50.0, 0.0])  # stretch d3 (normal is +y)
    update_material_frames(ps, 1e-2)
    R33 = np.array([qr_gram_schmidt(F)[1][2, 2] for F in ps.deformation_gradients()])
    np.testing.assert_allclose(R33, 1.0, atol=1e-12)
    ps = _state(cloth)
    ps.C[nv:] = np.diag([0.0, -20.0, 0.0])  # compression is elastic and kept
    update_material_frames(ps, 1e-2)
    R33 = np.array([qr_gram_schmidt(F)[1][2, 2] for F in ps.deformation_gradients()])
    np.testing.assert_allclose(R33, 0.8, atol=1e-12)


def test_collapse_flagged():
    cloth = patch(3)
    ps = _state(cloth)
    ps.x[: cloth.n_vertices, 2] = 0.0  # squash to a line
    ps.x[: cloth.n_vertices, 1] = 0.0
    with pytest.raises(SimulationError):
        update_material_frames(ps, 1e-3, strict=True)
    update_material_frames(_state(cloth), 1e-3)  # no collapse, no error


def _run_substeps(cloth, cfg, params, k, v0=None, rest=None):
    ps = _state(cloth, rest, params.rho)
    if v0 is not None:
        ps.v[:] = v0
    g = make_grid(scene_bounds([cloth.vertices], cfg), cfg)
    for _ in range(k):
        substep(ps, g, None, cfg, params.elastic)
    return ps


def test_substep_equilibrium():
    cloth = patch()
    cfg = SimConfig(gravity=(0, 0, 0), grid_resolution=32, domain_bounds=BOX)
    ps = _run_substeps(cloth, cfg, PhysParams(), 20)
    np.testing.assert_allclose(ps.vertex_positions, cloth.vertices, atol=1e-12)
    np.testing.assert_allclose(ps.v, 0, atol=1e-12)


def test_free_fall_velocity():
    cloth = patch()
    cfg = SimConfig(grid_resolution=32, domain_bounds=BOX, substeps=100)
    k = 50
    ps = _run_substeps(cloth, cfg, PhysParams(), k)
    vbar = ps.total_momentum() / ps.total_mass()
    np.testing.assert_allclose(vbar, [0, -9.8 * k * cfg.dt, 0], atol=1e-8)


def test_substep_refinement():
    cloth = cloth_patch(6, 6, 0.4, 0.4, origin=(-0.2, 0.2, 0.0), plane="xy")
    rest = build_rest_state(cloth, RestShapeParam(0.98))  # mildly pre-stretched start
    out = []
    for n in (50, 100, 200):
        cfg = SimConfig(frame_dt=0.004, substeps=n, grid_resolution=32, domain_bounds=BOX)
        sim = Simulator(cloth, rest, PhysParams(alpha=0.98), cfg)
        out.append(sim.step_frame())
    assert np.abs(out[2] - out[1]).max() < np.abs(out[1] - out[0]).max()


def test_substep_halving_is_first_order():
    cloth = patch(6, y=0.2)
    x = []
    for n in (1, 2):
        cfg = SimConfig(frame_dt=2e-4, substeps=n, grid_resolution=32, domain_bounds=BOX)
        x.append(Simulator(cloth, material_frames(cloth), PhysParams(), cfg).step_frame())
    dt = 2e-4
    assert np.abs(x[1] - x[0]).max() <= 10 * dt ** 2


def test_cfl_violation():
    cloth = patch()
    cfg = SimConfig(grid_resolution=32, domain_bounds=BOX, substeps=1)
    with pytest.raises(CFLViolation):
        _run_substeps(cloth, cfg, PhysParams(), 1, v0=[0, -1000.0, 0])


def test_domain_strict_and_clamp():
    cloth = patch(y=0.97)  # node coordinate 31.5 is past the last full stencil
    cfg = SimConfig(grid_resolution=32, domain_bounds=BOX, strict=True)
    with pytest.raises(DomainError):
        _run_substeps(cloth, cfg, PhysParams(), 1)
    cfg = SimConfig(grid_resolution=32, domain_bounds=BOX)
    ps = _run_substeps(cloth, cfg, PhysParams(), 1)
    assert np.all(np.isfinite(ps.x))


def test_simulate_sequence_basics():
    cloth = patch()
    cfg = SimConfig(gravity=(0, 0, 0), grid_resolution=32, domain_bounds=BOX, substeps=20)
    seq = simulate_sequence(cloth, material_frames(cloth), None, PhysParams(), cfg, n_frames=0)
    assert len(seq) == 1
    seq = simulate_sequence(cloth, material_frames(cloth), None, PhysParams(), cfg, n_frames=3)
    assert len(seq) == 4
    for f in seq.frames:
        np.testing.assert_allclose(f, cloth.vertices, atol=1e-10)
    short = MeshSequence.static(patch(y=-0.5), 2)
    with pytest.raises(SimulationError, match="collider"):
        simulate_sequence(cloth, material_frames(cloth), short, PhysParams(), cfg, n_frames=3)


def test_fused_matches_per_substep_path():
    from clothmpm.scenes import icosphere
    cloth = patch(8, y=0.3)
    body = MeshSequence.static(icosphere(0.2, 1), 1)
    cfg = SimConfig(grid_resolution=32, substeps=40, domain_bounds=BOX)
    outs = []
    for fused in (True, False):
        sim = Simulator(cloth, material_frames(cloth), PhysParams(), cfg, body)
        sim.fused = fused
        for _ in range(3):
            x = sim.step_frame()
        outs.append((x, sim.max_touched, sim.substeps_done))
    np.testing.assert_array_equal(outs[0][0], outs[1][0])
    assert outs[0][1:] == outs[1][1:]


def test_deterministic_runs_identical():
    cloth = patch(8, y=0.3)
    cfg = SimConfig(grid_resolution=32, substeps=40, domain_bounds=BOX)
    a = simulate_sequence(cloth, material_frames(cloth), None, PhysParams(), cfg, n_frames=3)
    b = simulate_sequence(cloth, material_frames(cloth), None, PhysParams(), cfg, n_frames=3)
    for x, y in zip(a.frames, b.frames):
        assert x.tobytes() == y.tobytes()


def test_pinned_vertices_stay():
    cloth = cloth_patch(6, 6, 0.4, 0.4, origin=(-0.2, 0.2, 0.0), plane="xy")
    cfg = SimConfig(grid_resolution=32, substeps=100, domain_bounds=BOX, pinned=top_row(6))
    seq = simulate_sequence(cloth, material_frames(cloth), None, PhysParams(), cfg, n_frames=2)
    np.testing.assert_array_equal(seq.frames[-1][:6], cloth.vertices[:6])
    assert seq.frames[-1][6:, 1].mean() < cloth.vertices[6:, 1].mean()


@pytest.mark.slow
def test_hanging_strip_settles():
    cloth = cloth_patch(4, 10, 0.15, 0.45, origin=(-0.075, 0.3, 0.0), plane="xy")
    cfg = SimConfig(grid_resolution=48, substeps=100, domain_bounds=((-0.5,) * 3, (0.5,) * 3),
                    pinned=top_row(4))
    sim = Simulator(cloth, material_frames(cloth), PhysParams(), cfg)
    ke = []
    for _ in range(60):
        sim.step_frame()
        ke.append(sim.particles.kinetic_energy())
    assert max(ke[-10:]) < 0.01 * max(ke)
