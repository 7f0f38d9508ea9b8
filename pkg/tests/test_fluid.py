import numpy as np
import pytest
from scipy import linalg
from hypothesis import given
from hypothesis import strategies as st

from sfsi.fluid_solver import (MassMatrix, continuity_substep, explicit_terms, mass_matrix, momentum_rhs,
                               momentum_substep, tube_operator, viscous_operator)
from sfsi.noise import VacuumError
from sfsi.orchestrator import Setup
from sfsi.spectral import FluidBasis


@pytest.fixture(scope="module")
def setup(small_params):
    return Setup(small_params.replace(noise_c0=0.0))


def smooth_density(points, rng, height):
    """Random positive trigonometric density, evaluable at any point set."""
    a, b, c = rng.uniform(-0.3, 0.3, size=3)
    x, z = points[:, 0], points[:, 1]
    return 1.0 + a * np.sin(2 * np.pi * x + b) * np.cos(np.pi * z / height) + c * np.cos(2 * np.pi * z / height)


def dense_sum(weight, left, right):
    return left.T @ (right * weight[:, None])


class TestMassMatrix:
    def test_unit_and_constant_density(self, setup):
        n = setup.fbasis.n
        assert np.allclose(mass_matrix(np.ones(setup.grid.size), setup.fbasis).matrix, np.eye(n), atol=1e-12)
        assert np.allclose(mass_matrix(np.full(setup.grid.size, 2.5), setup.fbasis).matrix, 2.5 * np.eye(n),
                           atol=1e-12)

    @pytest.mark.parametrize("trial", range(5))
    def test_refinement_oracle(self, setup, trial):
        rng = np.random.default_rng(trial)
        grid, fb = setup.grid, setup.fbasis
        state = rng.bit_generator.state
        M = mass_matrix(smooth_density(grid.points, rng, grid.height), fb).matrix
        rng.bit_generator.state = state
        fine = grid.refine(4)
        fine_basis = FluidBasis(fine, fb.n_lateral, fb.n_vertical)
        rho_fine = smooth_density(fine.points, rng, fine.height)
        oracle = dense_sum(rho_fine * fine.cell_volume, fine_basis.phi, fine_basis.phi)
        assert np.abs(M - oracle).max() <= 5e-3 * np.abs(oracle).max()

    @pytest.mark.parametrize("trial", range(20))
    def test_square_root(self, setup, trial):
        rng = np.random.default_rng(50 + trial)
        M = mass_matrix(0.05 + rng.random(setup.grid.size), setup.fbasis)
        root = M.sqrt
        assert np.allclose(root, root.T, atol=1e-14)
        assert np.linalg.norm(root @ root - M.matrix) <= 1e-10 * np.linalg.norm(M.matrix)
        schur = np.real(linalg.sqrtm(M.matrix))
        assert np.linalg.norm(root - schur) <= 1e-10 * np.linalg.norm(schur)

    def test_vacuum_rejected(self, setup):
        rho = np.ones(setup.grid.size)
        rho[3] = 0.0
        with pytest.raises(VacuumError):
            mass_matrix(rho, setup.fbasis)
        with pytest.raises(VacuumError):
            MassMatrix(-np.eye(3))


class TestContinuity:
    @pytest.mark.parametrize("m", [1, 3])
    def test_neumann_eigenmode_decay(self, setup, m):
        grid, fb = setup.grid, setup.fbasis
        eps, dt = 0.05, 0.01
        shape = np.cos(m * np.pi * grid.z / grid.height) * np.ones(grid.shape)
        rho = 1.0 + 0.1 * shape
        new, _ = continuity_substep(rho, np.zeros((2, fb.n)), eps, dt, 8, fb, setup.dbasis)
        amplitude = np.sum((new - 1.0) * shape) / np.sum(shape * shape)
        assert amplitude == pytest.approx(0.1 * np.exp(-eps * (m * np.pi / grid.height) ** 2 * dt), rel=1e-5)

    @given(st.integers(0, 10_000))
    def test_mass_conserved(self, seed):
        setup = _SETUP.get()
        rng = np.random.default_rng(seed)
        rho = 0.5 + rng.random(setup.grid.shape)
        u_hat = rng.normal(size=(2, setup.fbasis.n)) * 0.1
        new, _ = continuity_substep(rho, u_hat, 1e-3, 1e-3, 4, setup.fbasis, setup.dbasis, check=False)
        assert abs(new.sum() - rho.sum()) <= 1e-13 * rho.sum()
        rest, _ = continuity_substep(rho, np.zeros_like(u_hat), 1e-3, 1e-3, 4, setup.fbasis, setup.dbasis,
                                     check=False)
        assert abs(rest.sum() - rho.sum()) <= 1e-13 * rho.sum()

    def test_macro_versus_micro_steps_first_order(self, setup):
        grid, fb = setup.grid, setup.fbasis
        x, z = grid.points[:, 0], grid.points[:, 1]
        rho = (1.0 + 0.2 * np.cos(2 * np.pi * x) * np.cos(np.pi * z / grid.height)).reshape(grid.shape)
        field = np.zeros((2, grid.size))
        field[0] = np.sin(np.pi * z / grid.height) * np.cos(2 * np.pi * x)
        field[1] = np.sin(np.pi * z / grid.height) ** 2 * np.sin(2 * np.pi * x)
        u_hat = fb.project(field)
        horizon = 0.08
        steps = np.array([0.02, 0.01, 0.005, 0.0025])
        gaps = []
        for dt in steps:
            n = int(round(horizon / dt))
            coarse, fine = rho.copy(), rho.copy()
            for _ in range(n):
                coarse, _ = continuity_substep(coarse, u_hat, 1e-3, dt, 1, fb, setup.dbasis, check=False)
                fine, _ = continuity_substep(fine, u_hat, 1e-3, dt, 64, fb, setup.dbasis, check=False)
            gaps.append(np.abs(coarse - fine).max())
        slope = np.polyfit(np.log(steps), np.log(gaps), 1)[0]
        assert 0.8 <= slope <= 1.2


class _SETUP:
    _cache = None

    @classmethod
    def get(cls):
        if cls._cache is None:
            from sfsi.params import SchemeParams
            cls._cache = Setup(SchemeParams(grid_nx=16, grid_nz=24, n_st=6, n_f_lateral=5, n_f_vertical=5,
                                            T_final=0.02, K=4, noise_c0=0.0))
        return cls._cache


def random_state(setup, rng):
    grid, fb, sb = setup.grid, setup.fbasis, setup.sbasis
    rho = (0.5 + rng.random(grid.size)).reshape(grid.shape)
    u_hat = rng.normal(size=(2, fb.n)) * 0.2
    eta_hat = rng.normal(size=sb.n) * 0.005
    v_lat = sb.evaluate(rng.normal(size=sb.n) * 0.2)
    return rho, u_hat, setup.geometry(eta_hat), v_lat


def dense_tables(fb):
    """Sample tables built point by point, second derivatives included."""
    pts = fb.grid.points
    phi = fb.sample(pts)
    grads = [fb.sample(pts, (1, 0)), fb.sample(pts, (0, 1))]
    lap = fb.sample(pts, (2, 0)) + fb.sample(pts, (0, 2))
    return phi, grads, lap


def dense_rhs(rho, u_hat, v_lat, geom, p, fb):
    phi, grads, lap = dense_tables(fb)
    vol = fb.grid.cell_volume
    rho = rho.reshape(-1)
    u = np.stack([phi @ u_hat[c] for c in range(2)])
    pressure = p.a_pressure * rho ** p.gamma + p.delta * rho ** p.beta
    out = np.zeros((2, fb.n))
    for c in range(2):
        for i in range(fb.n):
            advection = sum(np.sum(rho * u[c] * u[b] * grads[b][:, i]) for b in range(2))
            artificial = p.epsilon * np.sum(rho * u[c] * lap[:, i])
            press = np.sum(pressure * grads[c][:, i])
            mass = sum(np.sum(rho * phi[:, i] * phi[:, j]) * u_hat[c, j] for j in range(fb.n))
            out[c, i] = mass * vol + p.dt * (advection + artificial + press) * vol
    tube = geom.tube_weight.reshape(-1)
    v = np.repeat(v_lat, fb.grid.nz)
    out[1] += p.dt / p.delta * (phi.T @ (tube * v)) * vol
    return out


def dense_lhs(rho_new, geom, p, fb):
    phi, grads, _ = dense_tables(fb)
    vol = fb.grid.cell_volume
    chi = geom.chi.reshape(-1)
    n = fb.n
    mass = phi.T @ (phi * rho_new.reshape(-1)[:, None]) * vol
    tube = phi.T @ (phi * geom.tube_weight.reshape(-1)[:, None]) * vol
    grad = sum(g.T @ (g * chi[:, None]) for g in grads) * vol
    lhs = np.zeros((2 * n, 2 * n))
    for a in range(2):
        lhs[a * n:(a + 1) * n, a * n:(a + 1) * n] += mass + p.dt / p.delta * tube + p.dt * p.mu * grad
        for b in range(2):
            lhs[a * n:(a + 1) * n, b * n:(b + 1) * n] += (p.dt * p.lambda_visc
                                                          * grads[a].T @ (grads[b] * chi[:, None]) * vol)
    return lhs


@pytest.mark.parametrize("trial", range(20))
def test_rhs_matches_dense_assembly(setup, trial):
    rng = np.random.default_rng(200 + trial)
    rho, u_hat, geom, v_lat = random_state(setup, rng)
    p, fb = setup.params, setup.fbasis
    M = mass_matrix(rho, fb)
    rhs = momentum_rhs(rho, u_hat, v_lat, geom, p, fb, M)
    oracle = dense_rhs(rho, u_hat, v_lat, geom, p, fb)
    assert np.abs(rhs - oracle).max() <= 1e-8 * max(1.0, np.abs(oracle).max())


@pytest.mark.parametrize("trial", range(3))
def test_implicit_operator_matches_dense_assembly(setup, trial):
    rng = np.random.default_rng(300 + trial)
    rho, _, geom, _ = random_state(setup, rng)
    p, fb = setup.params, setup.fbasis
    K_mu, K_lambda = viscous_operator(geom, p, fb)
    block = mass_matrix(rho, fb).matrix + p.dt / p.delta * tube_operator(geom, fb)
    lhs = np.kron(np.eye(2), block) + p.dt * (K_mu + K_lambda)
    oracle = dense_lhs(rho, geom, p, fb)
    assert np.abs(lhs - oracle).max() <= 1e-10 * np.abs(oracle).max()


def test_rest_state_preserved(setup):
    p, fb, grid = setup.params, setup.fbasis, setup.grid
    rho = np.full(grid.shape, 0.8)
    geom = setup.geometry(np.zeros(setup.sbasis.n))
    M = mass_matrix(rho, fb)
    u = np.zeros((2, fb.n))
    adv, pres, eps = explicit_terms(rho, u, p, fb)
    assert np.abs(pres).max() < 1e-13
    for _ in range(3):
        u, info = momentum_substep(rho, rho, u, np.zeros(grid.n_lat), geom, p, fb, M, M)
    assert np.abs(u).max() < 1e-13 and info.penalty < 1e-25


def test_penalty_pulls_fluid_with_structure(setup):
    p, fb, grid = setup.params, setup.fbasis, setup.grid
    rho = np.ones(grid.shape)
    geom = setup.geometry(np.zeros(setup.sbasis.n))
    M = mass_matrix(rho, fb)
    v_lat = np.ones(grid.n_lat)
    u_new, _ = momentum_substep(rho, rho, np.zeros((2, fb.n)), v_lat, geom, p, fb, M, M)
    lhs = dense_lhs(rho, geom, p, fb)
    rhs = dense_rhs(rho, np.zeros((2, fb.n)), v_lat, geom, p, fb)
    oracle = np.linalg.solve(lhs, rhs.reshape(-1)).reshape(2, fb.n)
    assert np.allclose(u_new, oracle, atol=1e-10)
    uz = fb.phi @ u_new[1]
    assert np.sum(geom.tube_weight.reshape(-1) * uz) * grid.cell_volume > 0
