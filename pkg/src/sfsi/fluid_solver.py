"""Density substep (continuity equation with artificial viscosity) and Galerkin momentum substep."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from .geometry import GeometryFields
from .noise import VacuumError
from .params import SchemeParams
from .spectral import DensityBasis, FluidBasis


class StabilityError(RuntimeError):
    """A substep broke a bound that the continuous problem guarantees."""


@dataclass
class FluidState:
    rho: np.ndarray  # grid.shape
    u_hat: np.ndarray  # (dim, n_f)
    t: float = 0.0
    momentum_hat: np.ndarray | None = None  # M[ρ] u, per component

    def copy(self) -> "FluidState":
        mom = None if self.momentum_hat is None else self.momentum_hat.copy()
        return replace(self, rho=self.rho.copy(), u_hat=self.u_hat.copy(), momentum_hat=mom)


class MassMatrix:
    """Density-weighted Gram matrix ``∫ ρ φ_i φ_j`` of the scalar fluid modes.

    The same block acts on every velocity component.
    """

    def __init__(self, matrix: np.ndarray):
        self.matrix = matrix
        try:
            self._chol = linalg.cho_factor(matrix, lower=True)
        except linalg.LinAlgError as exc:
            raise VacuumError("mass matrix is not positive definite") from exc
        self._sqrt = None

    @property
    def sqrt(self) -> np.ndarray:
        """Symmetric square root via eigendecomposition (cached)."""
        if self._sqrt is None:
            lam, V = linalg.eigh(self.matrix, driver="evd")
            if lam.min() <= 0:
                raise VacuumError("mass matrix has a non-positive eigenvalue")
            self._sqrt = (V * np.sqrt(lam)) @ V.T
        return self._sqrt

    def apply(self, u_hat) -> np.ndarray:
        """M u for coefficients of shape ``(dim, n)``."""
        return np.asarray(u_hat) @ self.matrix

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs)
        return linalg.cho_solve(self._chol, rhs.T).T


def mass_matrix(rho, basis: FluidBasis) -> MassMatrix:
    rho = np.asarray(rho, dtype=float).reshape(-1)
    if rho.min() <= 0:
        raise VacuumError(f"density minimum {rho.min():.3e} is not positive")
    table = basis.weighted_table(rho * basis.grid.cell_volume)
    return MassMatrix(0.5 * (table + table.T))


# ---------------------------------------------------------------------------
# continuity equation


def continuity_rhs(rho_grid, u_grid, dbasis: DensityBasis) -> np.ndarray:
    """Spectral div(ρu) on the grid; ``u_grid`` has shape ``(dim,) + grid.shape``."""
    total = np.zeros_like(rho_grid)
    dim = u_grid.shape[0]
    for c in range(dim - 1):
        total += dbasis.lateral_derivative(rho_grid * u_grid[c], axis=c)
    total += dbasis.z_derivative_of_odd(rho_grid * u_grid[-1])
    return total


def continuity_substep(rho, u_hat, epsilon: float, dt: float, micro_steps: int, basis: FluidBasis,
                       dbasis: DensityBasis, tol: float = 1e-6, check: bool = True):
    """Advance ``ρ_t + div(ρu) = εΔρ`` with Neumann walls over one step.

    Each micro-step treats εΔ implicitly (diagonal in the cosine basis) and
    the advection explicitly. The mean coefficient is never modified, so the
    total mass is conserved exactly in coefficient space.

    Returns
    -------
    rho_new : ndarray
    div_inf : float
        Grid maximum of |div u| for the frozen velocity.
    """
    grid = basis.grid
    u_hat = np.asarray(u_hat).reshape(basis.dim, basis.n)
    u_grid = basis.evaluate(u_hat).reshape((basis.dim,) + grid.shape)
    div_inf = float(np.abs(basis.divergence(u_hat)).max())
    h = dt / micro_steps
    damp = 1.0 / (1.0 + h * epsilon * dbasis.laplace_symbol)
    origin = (0,) * grid.dim
    rho0 = np.asarray(rho, dtype=float)
    coeffs = dbasis.forward(rho0)
    for _ in range(micro_steps):
        r = dbasis.inverse(coeffs)
        flux_div = dbasis.forward(continuity_rhs(r, u_grid, dbasis))
        flux_div[origin] = 0.0
        mean = coeffs[origin]
        coeffs = (coeffs - h * flux_div) * damp
        coeffs[origin] = mean
    rho_new = dbasis.inverse(coeffs)
    if check:
        lo = rho0.min() * np.exp(-dt * div_inf) * (1 - tol)
        hi = rho0.max() * np.exp(dt * div_inf) * (1 + tol)
        if rho_new.min() < lo or rho_new.max() > hi:
            raise StabilityError(
                f"comparison bound violated: min {rho_new.min():.6e} (bound {lo:.6e}), "
                f"max {rho_new.max():.6e} (bound {hi:.6e}); reduce Δt or raise micro_steps")
    return rho_new, div_inf


# ---------------------------------------------------------------------------
# momentum equation


def explicit_terms(rho, u_hat, params: SchemeParams, basis: FluidBasis):
    """Advection, pressure and artificial-viscosity loads, each of shape ``(dim, n)``.

    advection_i = ∫ ρ u⊗u : ∇ψ_i, pressure_i = ∫ (aρ^γ + δρ^β) div ψ_i,
    eps_i = ε ∫ ρ u · Δψ_i.
    """
    rho = np.asarray(rho, dtype=float).reshape(-1)
    u = basis.evaluate(np.asarray(u_hat).reshape(basis.dim, basis.n))
    dim = basis.dim
    p = params.a_pressure * rho ** params.gamma + params.delta * rho ** params.beta
    adv = np.zeros((dim, basis.n))
    pres = np.empty((dim, basis.n))
    for b in range(dim):
        # one pass over ∂_b φ for every flux component and the pressure
        integrands = np.vstack([rho * u * u[b], p[None]])
        tested = basis.test_against(integrands, b)
        adv += tested[:dim]
        pres[b] = tested[dim]
    eps = -params.epsilon * basis.test_against(rho * u) * basis.eigenvalues
    return adv, pres, eps


def viscous_operator(geometry: GeometryFields, params: SchemeParams, basis: FluidBasis):
    """Matrices of ∫ μ_ext ∇u:∇ψ_i and ∫ λ_ext div u div ψ_i on the flattened basis.

    Both fields equal the constant coefficient times χ, so only the deficit
    1 − χ needs a weighted correction to the precomputed tables.
    """
    dim, n = basis.dim, basis.n
    deficit = (1.0 - geometry.chi.reshape(-1)) * basis.grid.cell_volume
    K_grad = basis.grad_table.copy()
    K_div = basis.div_table.copy()
    if np.any(deficit > 0):
        for a in range(dim):
            for b in range(a, dim):
                block = basis.weighted_table(deficit, a, b)
                K_div[a * n:(a + 1) * n, b * n:(b + 1) * n] -= block
                if b != a:
                    K_div[b * n:(b + 1) * n, a * n:(a + 1) * n] -= block.T
                else:
                    K_grad -= block
    K_mu = np.kron(np.eye(dim), params.mu * K_grad)
    K_lambda = params.lambda_visc * K_div
    return K_mu, K_lambda


def tube_operator(geometry: GeometryFields, basis: FluidBasis):
    """Scalar block ∫_tube φ_i φ_j."""
    table = basis.weighted_table(geometry.tube_weight.reshape(-1) * basis.grid.cell_volume)
    return 0.5 * (table + table.T)


def tube_velocity_load(geometry: GeometryFields, v_lat, basis: FluidBasis) -> np.ndarray:
    """∫_tube v e_z · ψ_i, shape ``(dim, n)``."""
    grid = basis.grid
    w = geometry.tube_weight.reshape(-1)
    v = np.repeat(np.asarray(v_lat, dtype=float), grid.nz)
    out = np.zeros((basis.dim, basis.n))
    out[-1] = basis.test_against(w * v)
    return out


@dataclass
class MomentumStepInfo:
    dissipation_mu: float
    dissipation_lambda: float
    dissipation_eps: float
    penalty: float  # (Δt/2δ) ∫_tube |u' − v' e_z|²
    penalty_sq: float  # Δt ∫_tube |u' − v' e_z|²
    martingale: float
    quadratic_variation: float


def momentum_rhs(rho_old, u_hat, v_lat, geometry: GeometryFields, params: SchemeParams, basis: FluidBasis,
                 M_old: MassMatrix, noise_forcing=None) -> np.ndarray:
    """Right-hand side of the linearly implicit momentum step, shape ``(dim, n)``."""
    dt = params.dt
    adv, pres, eps = explicit_terms(rho_old, u_hat, params, basis)
    rhs = M_old.apply(u_hat) + dt * (adv + pres + eps)
    rhs += (dt / params.delta) * tube_velocity_load(geometry, v_lat, basis)
    if noise_forcing is not None:
        rhs += np.asarray(noise_forcing).reshape(basis.dim, basis.n)
    return rhs


def momentum_substep(rho_old, rho_new, u_hat, v_lat, geometry: GeometryFields, params: SchemeParams,
                     basis: FluidBasis, M_old: MassMatrix, M_new: MassMatrix, noise_cols=None, dW1=None):
    """Solve ``(M[ρ'] + Δt (V_μ + V_λ + P/δ)) u' = RHS`` for the new velocity.

    Returns
    -------
    u_new : ndarray (dim, n)
    info : MomentumStepInfo
    """
    dt, delta = params.dt, params.delta
    dim, n = basis.dim, basis.n
    u_hat = np.asarray(u_hat).reshape(dim, n)
    forcing = None
    mart = qv = 0.0
    if noise_cols is not None and dW1 is not None and np.any(noise_cols):
        forcing = (noise_cols @ np.asarray(dW1)).reshape(dim, n)
        mart = float(np.sum(u_hat * forcing))
        cols = noise_cols.reshape(dim, n, -1)
        qv = 0.5 * dt * float(sum(np.sum(cols[c] * M_new.solve(cols[c].T).T) for c in range(dim)))
    rhs = momentum_rhs(rho_old, u_hat, v_lat, geometry, params, basis, M_old, forcing)
    if not np.all(np.isfinite(rhs)):
        raise StabilityError("non-finite momentum right-hand side")
    K_mu, K_lambda = viscous_operator(geometry, params, basis)
    P = tube_operator(geometry, basis)
    block = M_new.matrix + (dt / delta) * P
    lhs = np.kron(np.eye(dim), block) + dt * (K_mu + K_lambda)
    try:
        u_new = linalg.solve(lhs, rhs.reshape(-1), assume_a="pos").reshape(dim, n)
    except linalg.LinAlgError as exc:
        raise VacuumError("momentum system is not positive definite") from exc
    if not np.all(np.isfinite(u_new)):
        raise StabilityError("non-finite velocity after momentum step")
    flat = u_new.reshape(-1)
    rho_flat = np.asarray(rho_new).reshape(-1)
    rho_grad = sum(basis.weighted_table(rho_flat * basis.grid.cell_volume, b, b) for b in range(dim))
    mismatch = _tube_mismatch_sq(geometry, u_new, v_lat, basis)
    info = MomentumStepInfo(
        dissipation_mu=dt * float(flat @ K_mu @ flat),
        dissipation_lambda=dt * float(flat @ K_lambda @ flat),
        dissipation_eps=dt * params.epsilon * float(np.sum(u_new * (u_new @ rho_grad))),
        penalty=dt / (2 * delta) * mismatch,
        penalty_sq=dt * mismatch,
        martingale=mart,
        quadratic_variation=qv,
    )
    return u_new, info


def _tube_mismatch_sq(geometry: GeometryFields, u_hat, v_lat, basis: FluidBasis) -> float:
    grid = basis.grid
    u = basis.evaluate(u_hat)
    u[-1] = u[-1] - np.repeat(np.asarray(v_lat, dtype=float), grid.nz)
    w = geometry.tube_weight.reshape(-1)
    return float(np.sum(w * np.sum(u ** 2, axis=0)) * grid.cell_volume)
