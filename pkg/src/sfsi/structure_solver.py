"""Viscoelastic plate substep with penalty coupling, and stopped-process bookkeeping."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from .geometry import GeometryFields, min_height
from .noise import NoiseSpec, projected_structure_noise
from .params import SchemeParams
from .spectral import FluidBasis, StructureBasis, hs_norm


@dataclass
class StructureState:
    eta_hat: np.ndarray
    v_hat: np.ndarray
    eta_star_hat: np.ndarray
    stopped: bool = False
    tau: float | None = None
    t: float = 0.0

    def copy(self) -> "StructureState":
        return replace(self, eta_hat=self.eta_hat.copy(), v_hat=self.v_hat.copy(),
                       eta_star_hat=self.eta_star_hat.copy())


class StructureOperators:
    """Diagonal spectra of -Δ and Δ² in the structure basis."""

    def __init__(self, basis: StructureBasis, visc_elast: float = 1.0):
        self.laplace = basis.laplace_spectrum.copy()
        self.bilaplace = self.laplace ** 2
        self.stiffness = self.laplace + self.bilaplace
        self.viscous = visc_elast * self.laplace

    def elastic_energy(self, eta_hat) -> float:
        """∫ |∇η|² + |Δη|²."""
        return float(np.sum(self.stiffness * eta_hat ** 2))


@dataclass
class StructureStepInfo:
    penalty: float  # (Δt/2δ) ∫_tube |𝒯u − v e_z|²
    dissipation: float  # Δt · visc_elast ∫ |∇v|²
    martingale: float
    quadratic_variation: float


def tube_coupling(geometry: GeometryFields, sbasis: StructureBasis, fbasis: FluidBasis, u_hat):
    """Penalty matrix ∫_tube ξ_i ξ_j and load ∫_tube u_z ξ_i for z-independent tests.

    Because structure functions do not depend on z, the tube integral of
    ``ξ_i ξ_j`` is the lateral integral weighted by the tube thickness
    column by column.
    """
    grid = sbasis.grid
    weight = geometry.tube_weight.reshape(grid.n_lat, grid.nz)
    thickness = weight.sum(axis=1) * grid.dz
    S = sbasis.samples
    P = S.T @ (S * (thickness * grid.area_element)[:, None])
    uz = fbasis.synthesize(np.asarray(u_hat).reshape(fbasis.dim, fbasis.n)[-1])
    col = (weight * uz.reshape(grid.n_lat, grid.nz)).sum(axis=1) * grid.dz
    load = S.T @ col * grid.area_element
    return P, load


def structure_substep(state: StructureState, u_shift_hat, geometry_shift: GeometryFields, params: SchemeParams,
                      dW2, ops: StructureOperators, sbasis: StructureBasis, fbasis: FluidBasis,
                      spec: NoiseSpec | None = None):
    """One linearly implicit Euler–Maruyama step of the plate equation.

    Solves ``(I + Δt A_visc + Δt² A_stiff + (Δt/δ) P) v' = v − Δt A_stiff η
    + (Δt/δ) b + Σ_k P_n g_k(η, v) ΔW²_k`` and sets ``η' = η + Δt v'``. The
    tube and fluid velocity are those of the previous interval.

    Returns
    -------
    new_state : StructureState
    info : StructureStepInfo
    """
    dt, delta = params.dt, params.delta
    eta, v = state.eta_hat, state.v_hat
    P, load = tube_coupling(geometry_shift, sbasis, fbasis, u_shift_hat)
    n = sbasis.n
    lhs = np.eye(n) + np.diag(dt * ops.viscous + dt ** 2 * ops.stiffness) + (dt / delta) * P
    rhs = v - dt * ops.stiffness * eta + (dt / delta) * load
    mart = qv = 0.0
    if spec is not None and not spec.is_zero:
        cols = projected_structure_noise(eta, v, spec, sbasis)
        forcing = cols @ np.asarray(dW2)
        rhs = rhs + forcing
        mart = float(v @ forcing)
        qv = 0.5 * dt * float(np.sum(cols ** 2))
    v_new = linalg.solve(lhs, rhs, assume_a="pos")
    eta_new = eta + dt * v_new
    eta_star = state.eta_star_hat.copy() if state.stopped else eta_new.copy()
    new = StructureState(eta_new, v_new, eta_star, state.stopped, state.tau, state.t + dt)
    info = StructureStepInfo(
        penalty=penalty_integral(geometry_shift, sbasis, fbasis, u_shift_hat, v_new, dt / (2 * delta)),
        dissipation=dt * float(np.sum(ops.viscous * v_new ** 2)),
        martingale=mart,
        quadratic_variation=qv,
    )
    return new, info


def penalty_integral(geometry: GeometryFields, sbasis: StructureBasis, fbasis: FluidBasis, u_hat, v_hat,
                     factor: float = 1.0) -> float:
    """factor · ∫_tube |u − v e_z|²."""
    grid = fbasis.grid
    u = fbasis.evaluate(np.asarray(u_hat).reshape(fbasis.dim, fbasis.n))
    v = np.repeat(sbasis.evaluate(v_hat), grid.nz)
    u[-1] = u[-1] - v
    w = geometry.tube_weight.reshape(-1)
    return factor * float(np.sum(w * np.sum(u ** 2, axis=0)) * grid.cell_volume)


def stopping_criteria(eta_hat, params: SchemeParams, sbasis: StructureBasis):
    """(certified minimum height, H^s norm) of a displacement."""
    eta = sbasis.evaluate(eta_hat)
    height = min_height(eta, params.C_alpha, sbasis.grid.dx, sbasis.grid.lat_dim)
    return height, hs_norm(eta_hat, params.s, sbasis)


def update_stopping(state: StructureState, params: SchemeParams, sbasis: StructureBasis) -> StructureState:
    """Freeze η* the first time the gap or the H^s norm leaves the admissible range.

    The displacement itself keeps evolving after the stopping time.
    """
    if state.stopped:
        return state
    height, norm = stopping_criteria(state.eta_hat, params, sbasis)
    if height <= params.alpha_dom or norm >= 1.0 / params.alpha_dom:
        return replace(state, stopped=True, tau=state.t, eta_star_hat=state.eta_hat.copy())
    return replace(state, eta_star_hat=state.eta_hat.copy())
