"""Scheme parameters and their admissibility constraints."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

from .geometry import ConfigurationError, DomainSpec, check_collar, holder_bound, tube_width
from .noise import NoiseSpec
from .spectral import Grid


@dataclass(frozen=True)
class SchemeParams:
    """Full parameter cascade of one simulation.

    Physical and regularisation parameters follow the usual names; the
    Galerkin sizes are ``n_st`` structure modes and
    ``n_f = n_f_lateral * n_f_vertical`` scalar fluid modes per velocity
    component. ``noise_c0 = 0`` switches both noises off.
    """

    dim: int = 2
    alpha_dom: float = 0.5
    s: float = 1.75
    gamma: float = 5.0 / 3.0
    beta: float = 5.0
    a_pressure: float = 1.0
    mu: float = 1.0
    lambda_visc: float = 1.0
    visc_elast: float = 1.0
    epsilon: float = 1e-3
    delta: float = 1e-3
    nu0: float = 0.05
    dt: float = 1e-3
    T_final: float = 0.5
    n_st: int = 16
    n_f_lateral: int = 17
    n_f_vertical: int = 12
    grid_nx: int = 64
    grid_nz: int = 96
    K: int = 8
    noise_c0: float = 0.1
    noise_decay: float = 1.1
    micro_steps: int = 4
    seed: int = 0
    band_l: float = 0.2
    theta: float = 0.1
    kappa_bar: float = 0.3
    comparison_tol: float = 1e-6
    # initial data
    rho0: float = 1.0
    rho0_taper: float = 0.5
    mollify_cells: float = 6.0
    eta0_amp: float = 0.05
    eta0_mode: int = 1
    v0_amp: float = 0.2
    v0_mode: int = 1
    p0_amp: float = 0.0

    def __post_init__(self):
        for problem in self.violations():
            raise ConfigurationError(problem)

    def violations(self) -> list:
        """Messages for every violated constraint, in a fixed order."""
        out = []
        if self.dim not in (2, 3):
            out.append("dim must be 2 or 3")
        if not 0 < self.alpha_dom <= 1:
            out.append("α (alpha_dom) must lie in (0, 1]")
        if not self.gamma > 1.5:
            out.append("γ must exceed 3/2")
        if not self.beta > max(4.0, self.gamma):
            out.append("β must exceed max{4, γ}")
        elif not 0 < self.nu0 < (0.5 - 1.0 / self.beta) ** 2:
            out.append("ν0 must lie in (0, (1/2 − 1/β)²)")
        if not 1.5 < self.s < 2.0:
            out.append("s must lie in (3/2, 2)")
        if not self.dt > 0:
            out.append("Δt must be positive")
        if not self.T_final > 0:
            out.append("T must be positive")
        elif self.dt > 0 and abs(self.T_final / self.dt - round(self.T_final / self.dt)) > 1e-9 * self.T_final / self.dt:
            out.append("T must be an integer multiple of Δt")
        if not self.epsilon > 0:
            out.append("ε must be positive")
        if not 0 < self.delta < 1:
            out.append("δ must lie in (0, 1)")
        if self.mu <= 0 or self.lambda_visc <= 0 or self.visc_elast < 0:
            out.append("viscosities must be positive (visc_elast non-negative)")
        if self.a_pressure <= 0:
            out.append("pressure coefficient a must be positive")
        if min(self.grid_nx, self.grid_nz) < 4:
            out.append("grid resolutions must be at least 4")
        if min(self.n_st, self.n_f_lateral, self.n_f_vertical, self.K, self.micro_steps) < 1:
            out.append("mode counts, K and micro_steps must be positive")
        if self.noise_c0 < 0:
            out.append("noise amplitude c0 must be non-negative")
        if not 0 < self.kappa_bar < 0.5:
            out.append("κ̄ must lie in (0, 1/2)")
        if self.rho0 <= 0:
            out.append("ρ0 must be positive")
        if not out:
            try:
                check_collar(self.delta, self.beta, self.nu0, self.C_alpha)
            except ConfigurationError as exc:
                out.append(str(exc))
        return out

    # -- derived quantities -------------------------------------------------

    @property
    def height(self) -> float:
        return 2.0 + 1.0 / self.alpha_dom

    @property
    def n_f(self) -> int:
        return self.n_f_lateral * self.n_f_vertical

    @property
    def n_steps(self) -> int:
        return int(round(self.T_final / self.dt))

    @property
    def C_alpha(self) -> float:
        return holder_bound(self.s, self.alpha_dom, self.dim)

    @property
    def tube_width(self) -> float:
        return tube_width(self.delta, self.beta)

    @property
    def rho_max(self) -> float:
        return self.delta ** (-1.0 / self.beta)

    @property
    def deterministic(self) -> bool:
        return self.noise_c0 == 0

    def domain(self) -> DomainSpec:
        return DomainSpec(self.dim, self.alpha_dom, self.grid_nx, self.grid_nz)

    def grid(self) -> Grid:
        return Grid(self.dim, self.grid_nx, self.grid_nz, self.height)

    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec.default(self.K, self.dim, self.noise_c0, self.noise_decay)

    def replace(self, **changes) -> "SchemeParams":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Stable hash of every field (repr of floats is round-trip exact)."""
        text = ";".join(f"{k}={v!r}" for k, v in sorted(self.as_dict().items()))
        return hashlib.sha256(text.encode()).hexdigest()[:16]
