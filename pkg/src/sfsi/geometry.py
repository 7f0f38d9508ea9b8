"""Maximal box, Hölder envelopes, viscosity cutoff and indicator sets.

A displacement ``η`` is always handled through its samples on the lateral
grid. Boolean masks follow the cell-centre rule (a cell belongs to a set iff
its centre does); the ``*_weight`` fields hold the fraction of each cell's
vertical extent covered by the set and are what the quadrature uses.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .spectral import Grid


class GeometryError(RuntimeError):
    """Internal consistency failure, usually a sign of under-resolution."""


class ConfigurationError(ValueError):
    """Parameter combination that violates a constraint of the scheme."""


@dataclass(frozen=True)
class DomainSpec:
    dim: int = 2
    alpha_dom: float = 0.5
    grid_nx: int = 64
    grid_nz: int = 96

    def __post_init__(self):
        if not 0 < self.alpha_dom <= 1:
            raise ConfigurationError("alpha_dom must lie in (0, 1]")
        if self.grid_nx < 4 or self.grid_nz < 4:
            raise ConfigurationError("grid resolutions must be at least 4")

    @property
    def height(self) -> float:
        return 2.0 + 1.0 / self.alpha_dom

    def grid(self) -> Grid:
        return Grid(self.dim, self.grid_nx, self.grid_nz, self.height)


# ---------------------------------------------------------------------------
# Hölder constant of the H^s ball


@lru_cache(maxsize=32)
def _holder_profile(s: float, lat_dim: int) -> float:
    """sup_r r^{-1/2} (Σ_k min(2, 2π|k|r)² (1+|2πk|²)^{-s})^{1/2} for a unit H^s ball."""
    r = np.logspace(-5, 1, 600)
    if lat_dim == 1:
        # each term has a kink at 2π|k|r = 2; the supremum can sit exactly on one
        r = np.union1d(r, 1.0 / (np.pi * np.arange(1, 2001)))
        k = np.arange(1, 200_001, dtype=float)
        kmag = k
        mult = 2.0  # ±k
    else:
        R = 400
        kx, ky = np.meshgrid(np.arange(-R, R + 1), np.arange(-R, R + 1), indexing="ij")
        kmag = np.sqrt(kx ** 2 + ky ** 2).ravel()
        kmag = kmag[kmag > 0]
        mult = 1.0
        r = np.union1d(r, 1.0 / (np.pi * np.unique(kmag[kmag < 45])))
    kmag = np.sort(kmag)
    weight = (1.0 + (2 * np.pi * kmag) ** 2) ** (-s)
    # below the kink the term is (2π|k|r)² w_k, above it 4 w_k: prefix sums make every r O(log n)
    low = np.concatenate([[0.0], np.cumsum((2 * np.pi * kmag) ** 2 * weight)])
    high = np.concatenate([np.cumsum(weight[::-1])[::-1], [0.0]])
    split = np.searchsorted(kmag, 1.0 / (np.pi * r), side="left")
    total = mult * (r ** 2 * low[split] + 4.0 * high[split])
    return float(np.max(np.sqrt(total / r)))


def holder_bound(s: float, alpha_dom: float, dim: int = 2) -> float:
    """Half-Hölder constant C_α valid for every η with ‖η‖_{H^s} ≤ 1/alpha_dom."""
    if not 1.5 < s < 2.0:
        raise ConfigurationError("s must lie in (3/2, 2)")
    if alpha_dom <= 0:
        raise ConfigurationError("alpha_dom must be positive")
    return _holder_profile(float(s), dim - 1) / alpha_dom


# ---------------------------------------------------------------------------
# envelopes and cutoff


def _torus_distance(points: np.ndarray) -> np.ndarray:
    d = points - np.round(points)
    return np.sqrt(np.sum(d ** 2, axis=-1))


def mollifier_kernel(kappa: float, grid: Grid) -> np.ndarray:
    """Periodic bump of radius κ sampled on the lateral grid, summing to one.

    The kernel is centred at the origin (index 0 in every lateral axis) so
    that circular convolution needs no shift.
    """
    offsets = np.meshgrid(*([np.arange(grid.nx) * grid.dx] * grid.lat_dim), indexing="ij")
    r = _torus_distance(np.stack(offsets, axis=-1)) / kappa
    kern = np.zeros(grid.lat_shape)
    inside = r < 1
    kern[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return kern / kern.sum()


def mollify_lateral(field_lat, kappa: float, grid: Grid) -> np.ndarray:
    f = np.asarray(field_lat, dtype=float).reshape(grid.lat_shape)
    kern = mollifier_kernel(kappa, grid)
    out = np.fft.ifftn(np.fft.fftn(f) * np.fft.fftn(kern)).real
    return out.reshape(-1)


def bounding_functions(eta_lat, kappa: float, C_alpha: float, grid: Grid):
    """Smooth envelopes ``a > 1 + η > b`` built from the mollified displacement.

    Returns
    -------
    a_bound, b_bound : ndarray (n_lat,)
    """
    if kappa <= 0:
        raise ConfigurationError("κ must be positive")
    eta = np.asarray(eta_lat, dtype=float).reshape(-1)
    smooth = mollify_lateral(eta, kappa, grid)
    gap = 2 * C_alpha * np.sqrt(kappa)
    a = 1.0 + smooth + gap
    b = 1.0 + smooth - gap
    lo, hi = C_alpha * np.sqrt(kappa), 3 * C_alpha * np.sqrt(kappa)
    tol = 1e-12 * max(1.0, hi)
    da = a - (1.0 + eta)
    db = (1.0 + eta) - b
    if np.any(da < lo - tol) or np.any(da > hi + tol) or np.any(db < lo - tol) or np.any(db > hi + tol):
        raise GeometryError("envelope bounds violated after mollification; refine the lateral grid")
    return a, b


def cutoff_profile(w, kappa: float) -> np.ndarray:
    """1 for w ≤ 1/4, κ for w ≥ 3/4, quintic smoothstep in between."""
    t = np.clip((np.asarray(w, dtype=float) - 0.25) / 0.5, 0.0, 1.0)
    step = t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)
    return 1.0 - (1.0 - kappa) * step


def cutoff_chi(a_bound, kappa: float, grid: Grid) -> np.ndarray:
    """χ(x, z) = φ_κ((z − a(x)) / κ^{1/2}) on the full grid, shape ``grid.shape``."""
    a = np.asarray(a_bound, dtype=float).reshape(grid.lat_shape + (1,))
    w = (grid.z - a) / np.sqrt(kappa)
    return cutoff_profile(w, kappa)


def tube_width(delta: float, beta: float) -> float:
    return delta ** (0.5 - 1.0 / beta)


def check_collar(delta: float, beta: float, nu0: float, C_alpha: float):
    """The penalty tube must sit inside the region where the viscosity is unmodified."""
    width = tube_width(delta, beta)
    collar = (C_alpha + 0.25) * delta ** (nu0 / 2)
    if width > collar:
        raise ConfigurationError(
            f"tube exits constant-viscosity collar: δ^(1/2-1/β) = {width:.4g} > (C_α + 1/4)·δ^(ν0/2) = {collar:.4g}")


def extended_viscosity(eta_star_lat, delta: float, nu0: float, mu: float, lambda_visc: float,
                       C_alpha: float, grid: Grid, beta: float | None = None):
    """Viscosity fields equal to (μ, λ) near the fluid and decaying to δ^{ν0}(μ, λ) above.

    If ``beta`` is given the tube-inside-collar condition is enforced.
    """
    if not 0 < delta < 1:
        raise ConfigurationError("δ must lie in (0, 1)")
    if mu <= 0 or lambda_visc <= 0:
        raise ConfigurationError("viscosities must be positive")
    if beta is not None:
        check_collar(delta, beta, nu0, C_alpha)
    kappa = delta ** nu0
    a, _ = bounding_functions(eta_star_lat, kappa, C_alpha, grid)
    chi = cutoff_chi(a, kappa, grid)
    return chi * mu, chi * lambda_visc


# ---------------------------------------------------------------------------
# indicator sets


def tube_indicator(eta_star, delta: float, beta: float, z):
    """Exterior layer 0 < z − (1 + η*) < δ^{1/2 − 1/β}."""
    gap = np.asarray(z) - (1.0 + np.asarray(eta_star))
    return (gap > 0) & (gap < tube_width(delta, beta))


def domain_indicator(eta, z):
    """Fluid domain 0 ≤ z ≤ 1 + η."""
    z = np.asarray(z)
    return (z >= 0) & (z <= 1.0 + np.asarray(eta))


def band_indicator(eta_star, l: float, z):
    """Interior band l < z < 1 + η* − l."""
    z = np.asarray(z)
    return (z > l) & (z < 1.0 + np.asarray(eta_star) - l)


def coverage(lo, hi, grid: Grid) -> np.ndarray:
    """Fraction of each cell's vertical extent inside (lo(x), hi(x)), shape ``grid.shape``."""
    lo = np.asarray(lo, dtype=float).reshape(grid.lat_shape + (1,))
    hi = np.asarray(hi, dtype=float).reshape(grid.lat_shape + (1,))
    top = np.minimum(hi, grid.z + grid.dz / 2)
    bottom = np.maximum(lo, grid.z - grid.dz / 2)
    return np.clip(top - bottom, 0.0, None) / grid.dz


def min_height(eta_lat, C_alpha: float, h: float, lat_dim: int = 1) -> float:
    """Certified lower bound for inf_Γ(1 + η) from grid samples with spacing h."""
    eta = np.asarray(eta_lat, dtype=float)
    reach = h / 2 * np.sqrt(lat_dim)  # farthest a point of Γ can be from a grid node
    return float(np.min(1.0 + eta) - C_alpha * np.sqrt(reach))


# ---------------------------------------------------------------------------
# bundled fields


@dataclass(frozen=True)
class GeometryFields:
    eta: np.ndarray
    a_bound: np.ndarray
    b_bound: np.ndarray
    chi: np.ndarray
    mu_ext: np.ndarray
    lambda_ext: np.ndarray
    tube_mask: np.ndarray
    domain_mask: np.ndarray
    band_mask: np.ndarray
    tube_weight: np.ndarray
    domain_weight: np.ndarray
    band_weight: np.ndarray
    exterior_weight: np.ndarray  # cell fractions above the tube
    kappa: float
    tube_width: float
    band_l: float


def build_geometry(eta_star_lat, grid: Grid, *, C_alpha: float, delta: float, beta: float, nu0: float,
                   mu: float = 1.0, lambda_visc: float = 1.0, band_l: float = 0.2) -> GeometryFields:
    """All geometric fields attached to a (stopped) displacement."""
    eta = np.asarray(eta_star_lat, dtype=float).reshape(-1)
    kappa = delta ** nu0
    a, b = bounding_functions(eta, kappa, C_alpha, grid)
    chi = cutoff_chi(a, kappa, grid)
    width = tube_width(delta, beta)
    eta_col = eta.reshape(grid.lat_shape + (1,))
    z = grid.z
    surface = (1.0 + eta).reshape(-1)
    return GeometryFields(
        eta=eta,
        a_bound=a,
        b_bound=b,
        chi=chi,
        mu_ext=chi * mu,
        lambda_ext=chi * lambda_visc,
        tube_mask=tube_indicator(eta_col, delta, beta, z),
        domain_mask=domain_indicator(eta_col, z),
        band_mask=band_indicator(eta_col, band_l, z),
        tube_weight=coverage(surface, surface + width, grid),
        domain_weight=coverage(np.zeros_like(surface), surface, grid),
        band_weight=coverage(np.full_like(surface, band_l), surface - band_l, grid),
        exterior_weight=coverage(surface + width, np.full_like(surface, grid.height), grid),
        kappa=kappa,
        tube_width=width,
        band_l=band_l,
    )
