"""Energy budget, penalty/kinematic/vacuum measures and other estimate checks.

All functions are pure: they read recorded states or records and return
numbers, so re-running them on a saved trajectory reproduces the in-run
values.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .geometry import GeometryFields, build_geometry, coverage
from .params import SchemeParams
from .spectral import FluidBasis, Grid, StructureBasis, gagliardo_seminorm


@dataclass
class EnergyReport:
    kinetic: float
    pressure_gamma: float
    pressure_beta: float
    structure_kinetic: float
    structure_elastic: float  # ∫ |∇η|² + |Δη|²
    dissipation_mu: float = 0.0
    dissipation_lambda: float = 0.0
    dissipation_eps: float = 0.0
    dissipation_structure: float = 0.0
    penalty_structure: float = 0.0
    penalty_fluid: float = 0.0
    martingale: float = 0.0
    quadratic_variation: float = 0.0

    @property
    def energy(self) -> float:
        """Mechanical energy; the elastic part carries the factor 1/2 of the plate equation."""
        return (self.kinetic + self.pressure_gamma + self.pressure_beta + self.structure_kinetic
                + 0.5 * self.structure_elastic)

    @property
    def dissipation(self) -> float:
        return self.dissipation_mu + self.dissipation_lambda + self.dissipation_eps + self.dissipation_structure

    @property
    def penalty(self) -> float:
        return self.penalty_structure + self.penalty_fluid

    def as_dict(self) -> dict:
        return asdict(self)


def energy_report(rho, u_hat, eta_hat, v_hat, params: SchemeParams, fbasis: FluidBasis,
                  elastic_spectrum: np.ndarray, accumulators: dict | None = None) -> EnergyReport:
    """Quadrature evaluation of every state term of the energy, plus supplied accumulators."""
    grid = fbasis.grid
    w = grid.cell_volume
    rho = np.asarray(rho, dtype=float).reshape(-1)
    u = fbasis.evaluate(np.asarray(u_hat).reshape(fbasis.dim, fbasis.n))
    kinetic = 0.5 * float(np.sum(rho * np.sum(u ** 2, axis=0)) * w)
    pg = params.a_pressure / (params.gamma - 1) * float(np.sum(rho ** params.gamma) * w)
    pb = params.delta / (params.beta - 1) * float(np.sum(rho ** params.beta) * w)
    sk = 0.5 * float(np.sum(np.asarray(v_hat) ** 2))
    se = float(np.sum(elastic_spectrum * np.asarray(eta_hat) ** 2))
    return EnergyReport(kinetic, pg, pb, sk, se, **(accumulators or {}))


def energy_inequality_check(records: dict, boundary_term: float = 0.0) -> np.ndarray:
    """Per-step margin (energy + dissipation + penalties) − (E₀ + boundary + martingale + QV).

    Non-positive margins mean the discrete energy inequality holds. Records
    hold cumulative accumulators, as written by the orchestrator.
    """
    lhs = records["energy"] + records["dissipation"] + records["penalty"]
    rhs = records["energy"][0] + boundary_term + records["martingale"] + records["quadratic_variation"]
    return lhs - rhs


def fit_energy_constant(margins: np.ndarray, dt: float) -> float:
    """Smallest C with every positive margin ≤ C·Δt (0 when none is positive)."""
    return float(max(0.0, np.max(margins)) / dt)


def penalty_norm(records: dict) -> float:
    """‖u − v e_z‖ in L²(0, T; L²(tube)) from the cumulative squared integral."""
    return float(np.sqrt(records["penalty_sq"][-1]))


def trace_mismatch(u_hat, v_hat, eta_star_hat, fbasis: FluidBasis, sbasis: StructureBasis) -> float:
    """‖u(x, 1 + η*(x)) − v(x) e_z‖_{L²(Γ)} by spectral evaluation on the lateral grid."""
    grid = sbasis.grid
    surface = 1.0 + sbasis.evaluate(eta_star_hat)
    u = fbasis.restrict_to_graph(np.asarray(u_hat).reshape(fbasis.dim, fbasis.n), surface)
    u[-1] = u[-1] - sbasis.evaluate(v_hat)
    return float(np.sqrt(np.sum(u ** 2) * grid.area_element))


def exterior_mass(rho, geometry: GeometryFields, grid: Grid) -> float:
    """∫ ρ over the box minus the fluid domain and the penalty tube."""
    return float(np.sum(np.asarray(rho).reshape(-1) * geometry.exterior_weight.reshape(-1)) * grid.cell_volume)


def exterior_excess(rho, floor: float, geometry: GeometryFields, grid: Grid) -> float:
    """∫ (ρ − floor) over the exterior region: exterior mass above a constant background density."""
    rho = np.asarray(rho).reshape(-1) - floor
    return float(np.sum(rho * geometry.exterior_weight.reshape(-1)) * grid.cell_volume)


def interior_pressure_density(rho, geometry: GeometryFields, params: SchemeParams, grid: Grid,
                              theta: float | None = None, band_l: float | None = None) -> float:
    """∫_{A^l} ρ^{γ+Θ} + δ ρ^{β+Θ} at one instant."""
    theta = params.theta if theta is None else theta
    if band_l is None or band_l == geometry.band_l:
        weight = geometry.band_weight
    else:
        surface = 1.0 + geometry.eta
        weight = coverage(np.full_like(surface, band_l), surface - band_l, grid)
    rho = np.asarray(rho).reshape(-1)
    integrand = rho ** (params.gamma + theta) + params.delta * rho ** (params.beta + theta)
    return float(np.sum(integrand * weight.reshape(-1)) * grid.cell_volume)


def interior_pressure_integral(trajectory, l: float | None = None, theta: float | None = None) -> float:
    """∫₀ᵀ ∫_{A^l} ρ^{γ+Θ} + δρ^{β+Θ}.

    Uses the per-step values recorded in the run when (l, Θ) match the run
    parameters, otherwise recomputes from snapshots (which then must have
    been kept at every step).
    """
    p = trajectory.params
    if (l is None or l == p.band_l) and (theta is None or theta == p.theta):
        return float(trajectory.records["interior_pressure"][-1])
    if trajectory.stride != 1:
        raise ValueError("recomputing the band integral needs snapshots at every step")
    grid = p.grid()
    sbasis = StructureBasis(grid, p.n_st)
    total = 0.0
    for snap in trajectory.snapshots[1:]:
        eta_star = sbasis.evaluate(snap.structure.eta_star_hat)
        geom = build_geometry(eta_star, grid, C_alpha=p.C_alpha, delta=p.delta, beta=p.beta, nu0=p.nu0,
                              mu=p.mu, lambda_visc=p.lambda_visc, band_l=p.band_l if l is None else l)
        total += p.dt * interior_pressure_density(snap.fluid.rho, geom, p, grid, theta, l)
    return total


def time_increment_seminorm(v_series, dt: float, kappa_bar: float = 0.3) -> float:
    """max over dyadic h of h^{-κ̄} ‖v(· ) − v(· − h)‖_{L²(h, T; L²(Γ))}.

    ``v_series`` holds orthonormal-basis coefficients at times 0, Δt, ..., T.
    """
    v = np.asarray(v_series, dtype=float)
    n = v.shape[0] - 1
    best = 0.0
    shift = 1
    while shift <= n // 2:
        diff = v[shift:] - v[:-shift]
        norm = np.sqrt(np.sum(diff[1:] ** 2) * dt)  # right endpoints t_j, j ≥ shift + 1
        best = max(best, (shift * dt) ** (-kappa_bar) * norm)
        shift *= 2
    return float(best)


def sobolev_norm_sq(u, s: float, grid: Grid, mask=None) -> float:
    """‖u‖²_{L²} + [u]²_s over the masked region."""
    u = np.asarray(u, dtype=float).reshape(-1)
    sel = np.ones(grid.size, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    l2 = float(np.sum(u[sel] ** 2) * grid.cell_volume)
    return l2 + gagliardo_seminorm(u, s, grid, sel)


def extension_by_zero_ratio(u, eta_lat, s: float, alpha_hoelder: float, grid: Grid) -> float:
    """‖ũ‖_{H^{sα}(box)} / ‖u‖_{H^s(𝒪_η)} for the zero extension ũ of u."""
    eta = np.asarray(eta_lat, dtype=float).reshape(grid.lat_shape + (1,))
    inside = (grid.z <= 1.0 + eta).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    ext = np.where(inside, u, 0.0)
    num = sobolev_norm_sq(ext, s * alpha_hoelder, grid)
    den = sobolev_norm_sq(u, s, grid, inside)
    return float(np.sqrt(num / den))


def comparison_bounds_check(records: dict, lower0: float, upper0: float, tol: float = 1e-6):
    """Margins of min ρ and max ρ against the exponential comparison envelope.

    Returns
    -------
    lower_margin, upper_margin : ndarray
        ``min ρ·(1+tol) − lower0·exp(−∫‖div u‖)`` and
        ``upper0·exp(∫‖div u‖)·(1+tol) − max ρ``; negative entries are flagged steps.
    """
    growth = records["div_integral"]
    lower = lower0 * np.exp(-growth)
    upper = upper0 * np.exp(growth)
    return records["min_rho"] * (1 + tol) - lower, upper * (1 + tol) - records["max_rho"]
