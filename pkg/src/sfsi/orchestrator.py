"""Initial data, the splitting loop, ensembles and parameter sweeps."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as diag
from .fluid_solver import FluidState, StabilityError, continuity_substep, mass_matrix, momentum_substep
from .geometry import ConfigurationError, GeometryFields, build_geometry, coverage, cutoff_profile, min_height, mollify_lateral
from .noise import NoiseSpec, VacuumError, WienerPath, projected_fluid_noise
from .params import SchemeParams
from .spectral import DensityBasis, FluidBasis, Grid, StructureBasis, hs_norm
from .structure_solver import StructureOperators, StructureState, structure_substep, update_stopping

__all__ = ["SchemeParams", "Setup", "Trajectory", "prepare_initial_data", "run_path", "run_ensemble",
           "parameter_sweep", "RECORD_COLUMNS"]

RECORD_COLUMNS = (
    "t", "kinetic", "pressure_gamma", "pressure_beta", "structure_kinetic", "structure_elastic", "energy",
    "dissipation_mu", "dissipation_lambda", "dissipation_eps", "dissipation_structure", "dissipation",
    "penalty_structure", "penalty_fluid", "penalty", "penalty_sq", "martingale", "quadratic_variation",
    "exterior_mass", "exterior_excess", "trace_mismatch", "trace_mismatch_sq_integral", "interior_pressure", "mass",
    "min_rho", "max_rho", "div_inf", "div_integral", "hs_norm", "min_height", "tau_flag",
)
_ACCUMULATED = ("dissipation_mu", "dissipation_lambda", "dissipation_eps", "dissipation_structure",
                "penalty_structure", "penalty_fluid", "penalty_sq", "martingale", "quadratic_variation",
                "trace_mismatch_sq_integral", "interior_pressure", "div_integral")


class Setup:
    """Grid, bases and operator tables shared by every path of one parameter set."""

    def __init__(self, params: SchemeParams):
        self.params = params
        self.grid: Grid = params.grid()
        self.sbasis = StructureBasis(self.grid, params.n_st)
        self.fbasis = FluidBasis(self.grid, params.n_f_lateral, params.n_f_vertical)
        self.dbasis = DensityBasis(self.grid)
        self.ops = StructureOperators(self.sbasis, params.visc_elast)
        self.noise: NoiseSpec = params.noise_spec()
        self._geometry_cache: dict = {}

    def geometry(self, eta_star_hat) -> GeometryFields:
        """Geometry for a stopped displacement, cached by its exact coefficients."""
        key = np.asarray(eta_star_hat, dtype=float).tobytes()
        geom = self._geometry_cache.get(key)
        if geom is None:
            p = self.params
            geom = build_geometry(self.sbasis.evaluate(eta_star_hat), self.grid, C_alpha=p.C_alpha, delta=p.delta,
                                  beta=p.beta, nu0=p.nu0, mu=p.mu, lambda_visc=p.lambda_visc, band_l=p.band_l)
            if len(self._geometry_cache) > 4:
                self._geometry_cache.clear()
            self._geometry_cache[key] = geom
        return geom


@dataclass
class Snapshot:
    t: float
    structure: StructureState
    fluid: FluidState


@dataclass
class Trajectory:
    params: SchemeParams
    seed: int
    records: dict
    snapshots: list
    stride: int
    tau: float | None
    boundary_term: float
    status: str = "ok"
    wall_clock: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.records["t"]

    @property
    def completed(self) -> bool:
        return self.status == "ok"


# ---------------------------------------------------------------------------
# initial data


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)


def default_initial_fields(params: SchemeParams, grid: Grid):
    """Displacement, velocity, density and momentum for the built-in test case.

    Returns ``(eta0_lat, v0_lat, rho0, p0)`` with ``rho0`` and ``p0`` defined on
    the whole grid but vanishing outside 𝒪_{η0}.
    """
    x = grid.lateral_points[:, 0]
    eta0 = params.eta0_amp * np.cos(2 * np.pi * params.eta0_mode * x)
    v0 = params.v0_amp * np.cos(2 * np.pi * params.v0_mode * x)
    surface = (1.0 + eta0).reshape(grid.lat_shape + (1,))
    rho0 = params.rho0 * (surface - grid.z >= 0)
    p0 = np.zeros((grid.dim,) + grid.shape)
    if params.p0_amp:
        shape = np.sin(np.pi * np.clip(grid.z / surface, 0, 1)) * np.cos(2 * np.pi * x).reshape(grid.lat_shape + (1,))
        p0[-1] = params.p0_amp * rho0 * shape
    return eta0, v0, rho0, p0


def _max_slope(eta_lat, grid: Grid) -> float:
    """Largest one-sided difference quotient of a lateral field (periodic)."""
    eta = np.asarray(eta_lat, dtype=float).reshape(grid.lat_shape)
    return float(max(np.abs(np.diff(eta, axis=a, append=np.take(eta, [0], axis=a))).max()
                     for a in range(grid.lat_dim)) / grid.dx)


def mollify_density(field, radius: float, grid: Grid) -> np.ndarray:
    """Convolve with a bump of the given radius: periodic laterally, even reflection in z."""
    f = np.asarray(field, dtype=float).reshape(grid.shape)
    if radius <= 0:
        return f.copy()
    lat = np.stack([mollify_lateral(f[..., j], radius, grid).reshape(grid.lat_shape) for j in range(grid.nz)],
                   axis=-1)
    nz = grid.nz
    offsets = np.arange(2 * nz) * grid.dz
    offsets = np.minimum(offsets, 2 * nz * grid.dz - offsets) / radius
    kern = np.where(offsets < 1, np.exp(-1.0 / (1.0 - np.minimum(offsets, 0.999999) ** 2)), 0.0)
    kern /= kern.sum()
    ext = np.concatenate([lat, lat[..., ::-1]], axis=-1)
    conv = np.fft.ifft(np.fft.fft(ext, axis=-1) * np.fft.fft(kern), axis=-1).real
    return conv[..., :nz]


def prepare_initial_data(params: SchemeParams, setup: Setup, rho0=None, p0=None, eta0=None, v0=None):
    """Regularised initial state on the maximal box.

    The density is extended by zero, mollified, lifted by ε and clamped to
    [ε, δ^{-1/β}]; the momentum is kept only where the regularised density
    is at least the original one, and u₀ = P_n(p / ρ).
    """
    grid = setup.grid
    d_eta, d_v, d_rho, d_p = default_initial_fields(params, grid)
    eta0 = d_eta if eta0 is None else np.asarray(eta0, dtype=float).reshape(-1)
    v0 = d_v if v0 is None else np.asarray(v0, dtype=float).reshape(-1)
    rho0 = d_rho if rho0 is None else np.asarray(rho0, dtype=float).reshape(grid.shape)
    p0 = d_p if p0 is None else np.asarray(p0, dtype=float).reshape((grid.dim,) + grid.shape)

    eta_hat = setup.sbasis.project(eta0)
    if min_height(setup.sbasis.evaluate(eta_hat), params.C_alpha, grid.dx, grid.lat_dim) <= params.alpha_dom:
        raise ConfigurationError("initial displacement violates α < 1 + η0")
    if hs_norm(eta_hat, params.s, setup.sbasis) >= 1.0 / params.alpha_dom:
        raise ConfigurationError("initial displacement has H^s norm ≥ 1/α")

    surface = 1.0 + eta0
    inside = coverage(np.zeros_like(surface), surface, grid)
    radius = params.mollify_cells * grid.dz
    # taper below the interface, offset so that the mollified density still vanishes outside 𝒪_{η0}
    depth = surface.reshape(grid.lat_shape + (1,)) - grid.z
    margin = radius * (1.0 + _max_slope(eta0, grid))
    taper = _smoothstep((depth - margin) / params.rho0_taper) if params.rho0_taper > 0 else (depth >= margin)
    rho_ext = rho0 * inside * taper
    rho_delta = np.clip(mollify_density(rho_ext, radius, grid), 0.0, params.rho_max)
    rho_reg = np.clip(params.epsilon + rho_delta, params.epsilon, params.rho_max)
    keep = rho_delta >= rho0
    p_reg = np.where(keep[None], p0, 0.0)
    u_hat = setup.fbasis.project((p_reg / rho_reg).reshape(grid.dim, -1))
    structure = StructureState(eta_hat, setup.sbasis.project(v0), eta_hat.copy())
    fluid = FluidState(rho_reg, u_hat)
    return fluid, structure


# ---------------------------------------------------------------------------
# splitting loop


def _state_record(t, fluid: FluidState, structure: StructureState, geom: GeometryFields, setup: Setup,
                  acc: dict, div_inf: float, tm: float):
    p = setup.params
    rep = diag.energy_report(fluid.rho, fluid.u_hat, structure.eta_hat, structure.v_hat, p, setup.fbasis,
                             setup.ops.stiffness)
    rec = {
        "t": t,
        "kinetic": rep.kinetic, "pressure_gamma": rep.pressure_gamma, "pressure_beta": rep.pressure_beta,
        "structure_kinetic": rep.structure_kinetic, "structure_elastic": rep.structure_elastic,
        "energy": rep.energy,
        "exterior_mass": diag.exterior_mass(fluid.rho, geom, setup.grid),
        "exterior_excess": diag.exterior_excess(fluid.rho, p.epsilon, geom, setup.grid),
        "trace_mismatch": tm,
        "mass": float(np.sum(fluid.rho) * setup.grid.cell_volume),
        "min_rho": float(fluid.rho.min()), "max_rho": float(fluid.rho.max()),
        "div_inf": div_inf,
        "hs_norm": hs_norm(structure.eta_hat, p.s, setup.sbasis),
        "min_height": min_height(setup.sbasis.evaluate(structure.eta_hat), p.C_alpha, setup.grid.dx,
                                 setup.grid.lat_dim),
        "tau_flag": float(structure.stopped),
    }
    rec.update(acc)
    rec["dissipation"] = sum(acc[k] for k in ("dissipation_mu", "dissipation_lambda", "dissipation_eps",
                                              "dissipation_structure"))
    rec["penalty"] = acc["penalty_structure"] + acc["penalty_fluid"]
    return rec


def run_path(params: SchemeParams, seed: int | None = None, initial=None, setup: Setup | None = None,
             stride: int = 0, raise_errors: bool = False) -> Trajectory:
    """Run the splitting scheme on [0, T].

    Each step: plate substep with the previous interval's velocity and tube,
    geometry for the new stopped displacement, continuity substep, momentum
    substep, stopping update, diagnostics.

    Parameters
    ----------
    stride : int
        Keep a state snapshot every ``stride`` steps (0 keeps only the first
        and last state).
    """
    start = time.perf_counter()
    seed = params.seed if seed is None else int(seed)
    setup = setup or Setup(params)
    p = params
    fb, sb = setup.fbasis, setup.sbasis
    fluid, structure = initial if initial is not None else prepare_initial_data(p, setup)
    fluid, structure = fluid.copy(), structure.copy()
    n_steps = p.n_steps
    wiener = WienerPath(seed, p.K, p.dt, n_steps)
    spec = None if setup.noise.is_zero else setup.noise

    geom_prev = setup.geometry(structure.eta_star_hat)
    M_old = mass_matrix(fluid.rho, fb)
    fluid.momentum_hat = M_old.apply(fluid.u_hat)
    acc = {k: 0.0 for k in _ACCUMULATED}
    # first structure step pairs the initial velocity with the initial tube
    boundary = _full_tube_sq(geom_prev, fb, fluid.u_hat) * p.dt / (2 * p.delta)
    tm = diag.trace_mismatch(fluid.u_hat, structure.v_hat, structure.eta_star_hat, fb, sb)
    rows = [_state_record(0.0, fluid, structure, geom_prev, setup, acc, 0.0, tm)]
    snaps = [Snapshot(0.0, structure.copy(), fluid.copy())]
    status = "ok"
    for j in range(n_steps):
        t_new = (j + 1) * p.dt
        try:
            dW1, dW2 = wiener.sample_increments(j)
            structure_new, sinfo = structure_substep(structure, fluid.u_hat, geom_prev, p, dW2, setup.ops, sb, fb,
                                                     spec)
            geom = setup.geometry(structure_new.eta_star_hat)
            rho_new, div_inf = continuity_substep(fluid.rho, fluid.u_hat, p.epsilon, p.dt, p.micro_steps, fb,
                                                  setup.dbasis, tol=p.comparison_tol)
            M_new = mass_matrix(rho_new, fb)
            cols = None
            if spec is not None:
                cols = projected_fluid_noise(fluid.rho, fluid.u_hat, spec, fb, M_old.sqrt, mask=geom.domain_weight)
            v_lat = sb.evaluate(structure_new.v_hat)
            u_new, finfo = momentum_substep(fluid.rho, rho_new, fluid.u_hat, v_lat, geom, p, fb, M_old, M_new,
                                            cols, dW1)
        except (StabilityError, VacuumError, np.linalg.LinAlgError) as exc:
            if raise_errors:
                raise
            status = f"aborted at step {j + 1}: {exc}"
            break
        structure_new = update_stopping(structure_new, p, sb)
        fluid = FluidState(rho_new, u_new, t_new, M_new.apply(u_new))
        structure = structure_new
        acc["dissipation_mu"] += finfo.dissipation_mu
        acc["dissipation_lambda"] += finfo.dissipation_lambda
        acc["dissipation_eps"] += finfo.dissipation_eps
        acc["dissipation_structure"] += sinfo.dissipation
        acc["penalty_structure"] += sinfo.penalty
        acc["penalty_fluid"] += finfo.penalty
        acc["penalty_sq"] += finfo.penalty_sq
        acc["martingale"] += finfo.martingale + sinfo.martingale
        acc["quadratic_variation"] += finfo.quadratic_variation + sinfo.quadratic_variation
        acc["div_integral"] += p.dt * div_inf
        tm = diag.trace_mismatch(u_new, structure.v_hat, structure.eta_star_hat, fb, sb)
        acc["trace_mismatch_sq_integral"] += p.dt * tm ** 2
        acc["interior_pressure"] += p.dt * diag.interior_pressure_density(rho_new, geom, p, setup.grid)
        rows.append(_state_record(t_new, fluid, structure, geom, setup, acc, div_inf, tm))
        if (stride and (j + 1) % stride == 0) or j + 1 == n_steps:
            snaps.append(Snapshot(t_new, structure.copy(), fluid.copy()))
        geom_prev = geom
        M_old = M_new
    records = {k: np.array([r[k] for r in rows]) for k in RECORD_COLUMNS}
    return Trajectory(p, seed, records, snaps, stride, structure.tau, boundary, status,
                      time.perf_counter() - start)


def _full_tube_sq(geom: GeometryFields, fb: FluidBasis, u_hat) -> float:
    u = fb.evaluate(np.asarray(u_hat).reshape(fb.dim, fb.n))
    return float(np.sum(geom.tube_weight.reshape(-1) * np.sum(u ** 2, axis=0)) * fb.grid.cell_volume)


# ---------------------------------------------------------------------------
# ensembles and sweeps


def path_summary(traj: Trajectory) -> dict:
    """Scalar per-path quantities that ensembles and sweeps aggregate."""
    rec = traj.records
    before_tau = rec["tau_flag"] == 0
    if traj.tau is not None:
        before_tau = before_tau | (rec["t"] <= traj.tau + 1e-12)
    return {
        "energy_sup": float(np.max(rec["energy"])),
        "penalty_norm": diag.penalty_norm(rec),
        "trace_mismatch_sq": float(rec["trace_mismatch_sq_integral"][-1]),
        "exterior_mass_sup": float(np.max(rec["exterior_mass"][before_tau])),
        "exterior_excess_sup": float(np.max(rec["exterior_excess"][before_tau])),
        "interior_pressure": float(rec["interior_pressure"][-1]),
        "martingale": float(rec["martingale"][-1]),
        "quadratic_variation": float(rec["quadratic_variation"][-1]),
    }


@dataclass
class EnsembleReport:
    seeds: list
    summaries: dict  # seed -> path summary
    statuses: dict
    moments: dict = field(default_factory=dict)  # quantity -> {"mean", "stderr", "p1", "p2"}
    reliable: bool = True


def aggregate(summaries: dict, statuses: dict) -> EnsembleReport:
    """Merge per-path summaries; independent of completion order (sorted by seed)."""
    seeds = sorted(summaries)
    ok = [s for s in seeds if statuses[s] == "ok"]
    report = EnsembleReport(seeds, {s: summaries[s] for s in seeds}, {s: statuses[s] for s in seeds})
    report.reliable = len(ok) >= 2
    if not ok:
        return report
    for q in summaries[ok[0]]:
        vals = np.array([summaries[s][q] for s in ok])
        err = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else float("nan")
        report.moments[q] = {"mean": float(vals.mean()), "stderr": err,
                             "p1": float(np.mean(np.abs(vals))), "p2": float(np.mean(vals ** 2))}
    return report


def _run_one(args):
    params, seed, stride = args
    traj = run_path(params, seed, stride=stride)
    return seed, path_summary(traj) if traj.completed or len(traj.times) > 1 else {}, traj.status


def run_ensemble(params: SchemeParams, seeds, stride: int = 0, workers: int = 1) -> EnsembleReport:
    """Run one path per seed and aggregate E[sup(·)] style moments."""
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ValueError("an ensemble needs at least two seeds")
    jobs = [(params, s, stride) for s in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    summaries = {s: summ for s, summ, _ in results}
    statuses = {s: st for s, _, st in results}
    return aggregate(summaries, statuses)


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class SweepReport:
    param: str
    values: list
    ensembles: list
    rows: list  # (value, quantity, mean, stderr, slope)

    def means(self, quantity: str) -> np.ndarray:
        return np.array([e.moments[quantity]["mean"] for e in self.ensembles])

    def slope(self, quantity: str) -> float:
        return loglog_slope(self.values, self.means(quantity))


SWEEP_QUANTITIES = ("penalty_norm", "trace_mismatch_sq", "exterior_mass_sup", "exterior_excess_sup",
                    "interior_pressure")


def parameter_sweep(params: SchemeParams, param: str, values, seeds, workers: int = 1) -> SweepReport:
    """Vary one parameter, run an ensemble at each value, fit log–log slopes."""
    values = [float(v) for v in values]
    ensembles = [run_ensemble(params.replace(**{param: v}), seeds, workers=workers) for v in values]
    rows = []
    report = SweepReport(param, values, ensembles, rows)
    for q in SWEEP_QUANTITIES:
        means = [e.moments[q]["mean"] if q in e.moments else float("nan") for e in ensembles]
        slope = loglog_slope(values, means) if all(np.isfinite(means)) and all(m > 0 for m in means) else float("nan")
        for v, e, m in zip(values, ensembles, means):
            err = e.moments[q]["stderr"] if q in e.moments else float("nan")
            rows.append((v, q, m, err, slope))
    return report
