"""Trigonometric Galerkin bases, quadrature and fractional Sobolev norms.

Everything lives on the box ``Γ × (0, H)`` where ``Γ`` is the unit torus of
dimension ``dim - 1``. Fields are sampled at cell centres of a uniform grid
with array shape ``(nx,) * (dim - 1) + (nz,)`` (row-major, ``z`` fastest).
The midpoint rule on this grid integrates products of resolved trigonometric
modes exactly, which is what makes the orthonormality checks hold to
round-off.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import fft as sfft

MAX_DERIVATIVE_ORDER = 4


class BasisMismatchError(ValueError):
    """Raised when sampled data does not match the grid a basis was built on."""


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid on ``Γ × (0, height)``."""

    dim: int
    nx: int
    nz: int
    height: float

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.nx < 4 or self.nz < 4:
            raise ValueError("grid resolutions must be at least 4")
        if self.height <= 0:
            raise ValueError("height must be positive")

    @property
    def lat_dim(self) -> int:
        return self.dim - 1

    @property
    def lat_shape(self) -> tuple:
        return (self.nx,) * self.lat_dim

    @property
    def shape(self) -> tuple:
        return self.lat_shape + (self.nz,)

    @property
    def n_lat(self) -> int:
        return self.nx ** self.lat_dim

    @property
    def size(self) -> int:
        return self.n_lat * self.nz

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dz(self) -> float:
        return self.height / self.nz

    @property
    def area_element(self) -> float:
        """Lateral cell measure."""
        return self.dx ** self.lat_dim

    @property
    def cell_volume(self) -> float:
        return self.area_element * self.dz

    @cached_property
    def x1d(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    @cached_property
    def z(self) -> np.ndarray:
        return (np.arange(self.nz) + 0.5) * self.dz

    @cached_property
    def lateral_points(self) -> np.ndarray:
        """Lateral cell centres, shape ``(n_lat, lat_dim)`` in row-major order."""
        axes = np.meshgrid(*([self.x1d] * self.lat_dim), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=-1)

    @cached_property
    def points(self) -> np.ndarray:
        """All cell centres, shape ``(size, dim)``."""
        lat = np.repeat(self.lateral_points, self.nz, axis=0)
        z = np.tile(self.z, self.n_lat)
        return np.column_stack([lat, z])

    def refine(self, factor: int) -> "Grid":
        return Grid(self.dim, self.nx * factor, self.nz * factor, self.height)


# ---------------------------------------------------------------------------
# lateral trigonometric functions


def _canonical_wavevectors(lat_dim: int, radius: int) -> list:
    """Integer wavevectors up to sign, sorted by length then lexicographically."""
    out = []
    for k in itertools.product(range(-radius, radius + 1), repeat=lat_dim):
        nz = [c for c in k if c != 0]
        if not nz or nz[0] > 0:
            out.append(k)
    out.sort(key=lambda k: (sum(c * c for c in k), k))
    return out


def lateral_modes(count: int, lat_dim: int) -> list:
    """First ``count`` real trig functions on the unit torus.

    Returns a list of ``(k, phase)`` pairs describing
    ``amp * cos(2π k·x - phase)`` with ``phase`` 0 (cosine) or π/2 (sine)
    and ``amp`` 1 for ``k = 0`` and √2 otherwise, so the family is
    orthonormal in L²(Γ).
    """
    if count < 1:
        raise ValueError("need at least one mode")
    radius = int(np.ceil(count ** (1.0 / lat_dim))) + 1
    modes = []
    for k in _canonical_wavevectors(lat_dim, radius):
        if all(c == 0 for c in k):
            modes.append((k, 0.0))
        else:
            modes.append((k, 0.0))
            modes.append((k, np.pi / 2))
        if len(modes) >= count:
            break
    return modes[:count]


def _lateral_samples(modes, points: np.ndarray, deriv: Sequence[int] = ()) -> np.ndarray:
    """Evaluate lateral modes (or a derivative) at ``points`` -> (n_points, n_modes)."""
    lat_dim = points.shape[1]
    deriv = tuple(deriv) if len(deriv) else (0,) * lat_dim
    order = sum(deriv)
    out = np.empty((points.shape[0], len(modes)))
    for i, (k, phase) in enumerate(modes):
        kv = 2 * np.pi * np.asarray(k, dtype=float)
        amp = 1.0 if not any(k) else np.sqrt(2.0)
        factor = amp * np.prod(kv ** np.asarray(deriv))
        out[:, i] = factor * np.cos(points @ kv - phase + order * np.pi / 2)
    return out


def _check_resolved(wavevectors: np.ndarray, nx: int):
    # products of two modes must stay below the grid's aliasing frequency
    if wavevectors.size and 2 * np.abs(wavevectors).max() >= nx:
        raise BasisMismatchError(
            f"lateral wavenumber {int(np.abs(wavevectors).max())} is not resolved by grid_nx={nx}")


def _check_order(deriv: Sequence[int]):
    if any(d < 0 for d in deriv):
        raise ValueError("derivative orders must be non-negative")
    if sum(deriv) > MAX_DERIVATIVE_ORDER:
        raise ValueError(f"derivatives beyond order {MAX_DERIVATIVE_ORDER} are not supported")


# ---------------------------------------------------------------------------
# structure basis


class StructureBasis:
    """Real trigonometric basis on Γ, orthonormal in L²(Γ).

    Parameters
    ----------
    grid : Grid
        Only the lateral part of the grid is used.
    n_modes : int
        Number of basis functions.
    """

    def __init__(self, grid: Grid, n_modes: int):
        self.grid = grid
        self.n = n_modes
        self.modes = lateral_modes(n_modes, grid.lat_dim)
        self.wavevectors = np.array([k for k, _ in self.modes], dtype=float).reshape(n_modes, grid.lat_dim)
        # |2πk|², the -Δ spectrum; Δ² has the square of it
        self.laplace_spectrum = (2 * np.pi) ** 2 * np.sum(self.wavevectors ** 2, axis=1)
        _check_resolved(self.wavevectors, grid.nx)
        self.samples = _lateral_samples(self.modes, grid.lateral_points)

    def evaluate(self, coeffs, deriv: Sequence[int] = (), points=None) -> np.ndarray:
        """Lateral samples of ``Σ c_i ξ_i`` (or a derivative) on the grid or at ``points``."""
        deriv = tuple(deriv)
        _check_order(deriv)
        coeffs = np.asarray(coeffs, dtype=float)
        if points is None and not any(deriv):
            return self.samples @ coeffs
        pts = self.grid.lateral_points if points is None else np.atleast_2d(points)
        return _lateral_samples(self.modes, pts, deriv) @ coeffs

    def project(self, f_lat) -> np.ndarray:
        """L² projection of lateral samples onto the basis."""
        f_lat = np.asarray(f_lat, dtype=float).reshape(-1)
        if f_lat.size != self.grid.n_lat:
            raise BasisMismatchError(f"expected {self.grid.n_lat} lateral samples, got {f_lat.size}")
        return self.samples.T @ f_lat * self.grid.area_element

    def gram(self) -> np.ndarray:
        return self.samples.T @ self.samples * self.grid.area_element


def project_structure(f_lat, basis: StructureBasis) -> np.ndarray:
    return basis.project(f_lat)


def hs_norm(coeffs, s: float, basis: StructureBasis) -> float:
    """Sobolev norm (Σ_k (1 + |2πk|²)^s |η̂_k|²)^{1/2} of a structure expansion."""
    if s < 0:
        raise ValueError("s must be non-negative")
    coeffs = np.asarray(coeffs, dtype=float)
    weights = (1.0 + basis.laplace_spectrum) ** s
    return float(np.sqrt(np.sum(weights * coeffs ** 2)))


# ---------------------------------------------------------------------------
# fluid basis


class FluidBasis:
    """Vector Galerkin basis ``ξ_k(x) sin(mπz/H) e_c`` on the box.

    Each velocity component uses the same ``n_f = n_lateral * n_vertical``
    scalar modes, L²-orthonormal and vanishing at ``z = 0`` and ``z = H``.
    Coefficients are stored as arrays of shape ``(dim, n_f)``.

    Attributes
    ----------
    phi : ndarray (N, n_f)
        Scalar modes sampled on the grid.
    dphi : list of ndarray (N, n_f)
        Partial derivatives, one per coordinate (lateral first, ``z`` last).
    lap_phi : ndarray (N, n_f)
        Laplacian of each mode.
    grad_table : ndarray (n_f, n_f)
        ``∫ ∇φ_i · ∇φ_j``.
    div_table : ndarray (dim*n_f, dim*n_f)
        ``∫ div ψ_I div ψ_J`` for the flattened vector basis.
    lap_table : ndarray (n_f, n_f)
        ``∫ φ_i Δφ_j``.
    """

    def __init__(self, grid: Grid, n_lateral: int, n_vertical: int):
        self.grid = grid
        self.dim = grid.dim
        self.lat_modes = lateral_modes(n_lateral, grid.lat_dim)
        self.n_lateral = n_lateral
        self.n_vertical = n_vertical
        self.n = n_lateral * n_vertical
        # (lateral index, m) pairs, lateral-major
        self.index = [(i, m) for i in range(n_lateral) for m in range(1, n_vertical + 1)]
        kv = np.array([k for k, _ in self.lat_modes], dtype=float).reshape(n_lateral, grid.lat_dim)
        _check_resolved(kv, grid.nx)
        if n_vertical >= grid.nz:
            raise BasisMismatchError("vertical modes must be fewer than grid_nz")
        lat_eig = (2 * np.pi) ** 2 * np.sum(kv ** 2, axis=1)
        self.eigenvalues = np.array([lat_eig[i] + (m * np.pi / grid.height) ** 2 for i, m in self.index])
        self._lat_factor = [_lateral_samples(self.lat_modes, grid.lateral_points,
                                             tuple(int(c == d) for c in range(grid.lat_dim)))
                            for d in range(grid.lat_dim)] + [_lateral_samples(self.lat_modes, grid.lateral_points)]
        b = np.arange(1, n_vertical + 1) * np.pi / grid.height
        zz = grid.z[:, None]
        self._z_factor = [np.sqrt(2.0 / grid.height) * np.sin(b * zz),
                          np.sqrt(2.0 / grid.height) * b * np.cos(b * zz)]
        self.phi = self.sample(grid.points)
        self.dphi = [self.sample(grid.points, tuple(int(c == d) for c in range(self.dim))) for d in range(self.dim)]
        self.lap_phi = -self.phi * self.eigenvalues
        w = grid.cell_volume
        self.grad_table = sum(dp.T @ dp for dp in self.dphi) * w
        stacked = np.hstack(self.dphi)
        self.div_table = stacked.T @ stacked * w
        self.lap_table = self.phi.T @ self.lap_phi * w

    def weighted_table(self, weight, first: int | None = None, second: int | None = None) -> np.ndarray:
        """``Σ_cells weight · ∂_first φ_i · ∂_second φ_j`` using the tensor-product structure.

        ``first``/``second`` name a coordinate (lateral axes first, ``z``
        last) or ``None`` for the mode itself. ``weight`` holds one value per
        cell (quadrature volume included by the caller).
        """
        g = self.grid
        W = np.asarray(weight, dtype=float).reshape(g.n_lat, g.nz)
        nl, nv = self.n_lateral, self.n_vertical

        X1, Z1 = self._factors(first)
        X2, Z2 = self._factors(second)
        vert = W @ (Z1[:, :, None] * Z2[:, None, :]).reshape(g.nz, nv * nv)  # (n_lat, nv²)
        lat = (X1[:, :, None] * X2[:, None, :]).reshape(g.n_lat, nl * nl)
        table = (lat.T @ vert).reshape(nl, nl, nv, nv)
        return table.transpose(0, 2, 1, 3).reshape(self.n, self.n)

    @property
    def size(self) -> int:
        """Length of the flattened vector coefficient array."""
        return self.dim * self.n

    def sample(self, points: np.ndarray, deriv: Sequence[int] | None = None) -> np.ndarray:
        """Scalar modes (or a mixed partial derivative) at ``points`` -> (n_points, n_f)."""
        deriv = tuple(deriv) if deriv is not None else (0,) * self.dim
        _check_order(deriv)
        points = np.atleast_2d(points)
        lat = _lateral_samples(self.lat_modes, points[:, :-1], deriv[:-1])
        qz = deriv[-1]
        H = self.grid.height
        out = np.empty((points.shape[0], self.n))
        for col, (i, m) in enumerate(self.index):
            b = m * np.pi / H
            out[:, col] = lat[:, i] * np.sqrt(2.0 / H) * b ** qz * np.sin(b * points[:, -1] + qz * np.pi / 2)
        return out

    def _factors(self, axis: int | None):
        """Lateral and vertical factor tables of the modes (or of their ``axis`` derivative)."""
        if axis is None:
            return self._lat_factor[-1], self._z_factor[0]
        if axis == self.dim - 1:
            return self._lat_factor[-1], self._z_factor[1]
        return self._lat_factor[axis], self._z_factor[0]

    def synthesize(self, coeffs, axis: int | None = None) -> np.ndarray:
        """Grid samples of ``Σ c_i ∂_axis φ_i`` for coefficient arrays ``(..., n)``.

        Evaluates the lateral and vertical factors separately, which costs
        far less than a product with the full sample table.
        """
        coeffs = np.asarray(coeffs, dtype=float)
        X, Z = self._factors(axis)
        C = coeffs.reshape(coeffs.shape[:-1] + (self.n_lateral, self.n_vertical))
        out = X @ C @ Z.T
        return out.reshape(coeffs.shape[:-1] + (self.grid.size,))

    def evaluate(self, coeffs, deriv: Sequence[int] | None = None, points=None) -> np.ndarray:
        """Samples of a fluid expansion: returns ``(dim, N)`` for vector coefficients."""
        coeffs = np.asarray(coeffs, dtype=float)
        if points is None and deriv is None:
            return self.synthesize(coeffs)
        if points is None and sum(deriv) == 1 and max(deriv) == 1:
            return self.synthesize(coeffs, list(deriv).index(1))
        table = self.sample(self.grid.points if points is None else points, deriv)
        return (table @ coeffs.T).T if coeffs.ndim == 2 else table @ coeffs

    def restrict_to_graph(self, coeffs, height_lat) -> np.ndarray:
        """Values at the lateral cell centres lifted to ``z = height(x)``, shape ``(..., n_lat)``."""
        coeffs = np.asarray(coeffs, dtype=float)
        H = self.grid.height
        b = np.arange(1, self.n_vertical + 1) * np.pi / H
        zeta = np.sqrt(2.0 / H) * np.sin(np.asarray(height_lat, dtype=float).reshape(-1, 1) * b)  # (n_lat, nv)
        C = coeffs.reshape(coeffs.shape[:-1] + (self.n_lateral, self.n_vertical))
        return np.sum((self._lat_factor[-1] @ C) * zeta, axis=-1)

    def divergence(self, coeffs) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float).reshape(self.dim, self.n)
        return sum(self.synthesize(coeffs[c], c) for c in range(self.dim))

    def test_against(self, field, axis: int | None = None) -> np.ndarray:
        """Quadrature of ``field · ∂_axis φ_i`` for samples ``(..., N)`` -> ``(..., n)``."""
        field = np.asarray(field, dtype=float)
        g = self.grid
        X, Z = self._factors(axis)
        F = field.reshape(field.shape[:-1] + (g.n_lat, g.nz))
        out = X.T @ F @ Z
        return out.reshape(field.shape[:-1] + (self.n,)) * g.cell_volume

    def project(self, field) -> np.ndarray:
        """L² projection of vector samples ``(dim, N)`` (or scalar ``(N,)``)."""
        field = np.asarray(field, dtype=float)
        if field.shape[-1] != self.grid.size:
            raise BasisMismatchError(f"expected {self.grid.size} samples per component, got {field.shape[-1]}")
        return self.test_against(field)


def project_fluid(field, basis: FluidBasis) -> np.ndarray:
    return basis.project(field)


# ---------------------------------------------------------------------------
# density basis (periodic laterally, Neumann cosine in z)


class DensityBasis:
    """Collocation transforms for ``ξ_k(x) cos(mπz/H)`` expansions.

    Coefficients are complex Fourier modes laterally (unnormalised FFT) and
    orthonormal DCT-II modes vertically, so the ``(0, ..., 0)`` entry is the
    grid sum scaled by a fixed factor and carries the total mass.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        self.lat_axes = tuple(range(grid.lat_dim))
        freqs = np.fft.fftfreq(grid.nx, d=1.0 / grid.nx)
        self.lat_freqs = freqs
        kk = np.meshgrid(*([freqs] * grid.lat_dim), indexing="ij")
        lat_sq = (2 * np.pi) ** 2 * sum(k ** 2 for k in kk)
        m = np.arange(grid.nz)
        self.vertical_wavenumbers = m * np.pi / grid.height
        self.laplace_symbol = lat_sq[..., None] + self.vertical_wavenumbers ** 2
        # derivative multipliers with the Nyquist mode removed
        dfreq = freqs.copy()
        if grid.nx % 2 == 0:
            dfreq[grid.nx // 2] = 0.0
        self._dfreq = 2j * np.pi * dfreq

    def forward(self, samples) -> np.ndarray:
        samples = np.asarray(samples, dtype=float)
        if samples.shape != self.grid.shape:
            raise BasisMismatchError(f"expected shape {self.grid.shape}, got {samples.shape}")
        c = sfft.dct(samples, type=2, norm="ortho", axis=-1)
        return np.fft.fftn(c, axes=self.lat_axes)

    def inverse(self, coeffs) -> np.ndarray:
        c = np.fft.ifftn(coeffs, axes=self.lat_axes).real
        return sfft.idct(c, type=2, norm="ortho", axis=-1)

    def lateral_derivative(self, samples, axis: int) -> np.ndarray:
        """Spectral ∂/∂x_axis of a periodic grid field."""
        f = np.fft.fft(samples, axis=axis)
        shape = [1] * samples.ndim
        shape[axis] = -1
        return np.fft.ifft(f * self._dfreq.reshape(shape), axis=axis).real

    def z_derivative_of_odd(self, samples) -> np.ndarray:
        """∂_z of a field with zero trace at z ∈ {0, H}, via its sine series.

        The result is returned as grid samples of a cosine series, so it
        integrates to zero exactly.
        """
        y = sfft.dst(samples, type=2, norm="ortho", axis=-1)
        c = np.zeros_like(y)
        c[..., 1:] = self.vertical_wavenumbers[1:] * y[..., :-1]
        return sfft.idct(c, type=2, norm="ortho", axis=-1)


# ---------------------------------------------------------------------------
# quadrature and fractional norms


def inner_product(f, g, grid: Grid, weight=None) -> float:
    """Midpoint-rule ``∫ f·g·weight`` over the box (vector fields summed over components)."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    prod = f * g
    if prod.ndim > 1 and prod.shape[-1] == grid.size and prod.size != grid.size:
        prod = prod.sum(axis=0)
    prod = prod.reshape(-1)
    if weight is not None:
        prod = prod * np.asarray(weight, dtype=float).reshape(-1)
    return float(prod.sum() * grid.cell_volume)


def eval_field(coeffs, deriv: Sequence[int], basis) -> np.ndarray:
    """Grid samples of a structure or fluid expansion or one of its derivatives."""
    return basis.evaluate(coeffs, tuple(deriv))


def _pairwise_distance(points: np.ndarray, other: np.ndarray, lat_dim: int) -> np.ndarray:
    diff = points[:, None, :] - other[None, :, :]
    lat = diff[..., :lat_dim]
    lat = lat - np.round(lat)  # minimum image on the unit torus
    return np.sqrt(np.sum(lat ** 2, axis=-1) + diff[..., lat_dim] ** 2)


def gagliardo_seminorm(u, s: float, grid: Grid, mask=None, chunk: int = 512) -> float:
    """Squared discrete Gagliardo seminorm of grid samples over a region.

    ``Σ_{x≠y} |u(x) - u(y)|² / |x - y|^{d + 2s} · vol²`` with the sum over
    cell centres inside ``mask`` (whole box if omitted). Lateral distances
    use the periodic minimum image.
    """
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    u = np.asarray(u, dtype=float).reshape(-1)
    sel = np.ones(grid.size, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    if not sel.any():
        raise ValueError("region is empty")
    pts = grid.points[sel]
    vals = u[sel]
    expo = grid.dim + 2 * s
    total = 0.0
    for start in range(0, len(pts), chunk):
        block = slice(start, start + chunk)
        r = _pairwise_distance(pts[block], pts, grid.lat_dim)
        du = (vals[block, None] - vals[None, :]) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(r > 0, du / r ** expo, 0.0)
        total += q.sum()
    return float(total * grid.cell_volume ** 2)
