"""Truncated Wiener processes and the growth-bounded noise coefficient families.

The built-in families are bilinear in the state times a bounded spatial
envelope::

    f_k(ρ, q, x) = c_k (λ_k ρ + Λ_k · q) m_k(x)      (vector, |m_k| ≤ 1)
    g_k(η, v, x) = c_k (a_k η + b_k v) m̃_k(x)        (scalar, |m̃_k| ≤ 1)

With |λ_k| + |Λ_k| ≤ 1 and |a_k| + |b_k| ≤ 1 both the linear growth bound and
the gradient bound by c_k hold by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import FluidBasis, Grid, StructureBasis


class NoiseGrowthError(ValueError):
    """A noise coefficient violates its growth or gradient bound."""

    def __init__(self, message: str, k: int, state: dict):
        super().__init__(message)
        self.k = k
        self.state = state


class VacuumError(RuntimeError):
    """Density dropped below its floor, so mass-weighted operators are undefined."""


def default_amplitudes(K: int, c0: float, decay: float = 1.1) -> np.ndarray:
    return c0 * np.arange(1, K + 1, dtype=float) ** (-decay)


@dataclass
class NoiseSpec:
    """Shape parameters of the two noise families, all indexed by k = 1..K.

    Attributes
    ----------
    c : (K,) amplitudes
    lam_rho : (K,) density coefficients λ_k
    lam_q : (K, dim) momentum coefficients Λ_k
    f_direction : (K, dim) unit directions of the vector envelopes m_k
    a_eta, b_v : (K,) structure coefficients
    wavevectors : (K, dim-1) integer lateral wavevectors of the envelopes
    phases : (K,) envelope phases
    tail : Σ_{k>K} c_k² of the untruncated amplitude sequence (truncation error)
    """

    c: np.ndarray
    lam_rho: np.ndarray
    lam_q: np.ndarray
    f_direction: np.ndarray
    a_eta: np.ndarray
    b_v: np.ndarray
    wavevectors: np.ndarray
    phases: np.ndarray
    tail: float = 0.0

    @property
    def K(self) -> int:
        return len(self.c)

    @property
    def dim(self) -> int:
        return self.lam_q.shape[1]

    @property
    def c_squared_sum(self) -> float:
        return float(np.sum(self.c ** 2))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.c)

    @classmethod
    def default(cls, K: int = 8, dim: int = 2, c0: float = 0.1, decay: float = 1.1) -> "NoiseSpec":
        k = np.arange(1, K + 1)
        lam_rho = np.full(K, 0.3)
        lam_q = np.zeros((K, dim))
        lam_q[:, -1] = 0.5
        lam_q[:, 0] += 0.2 * np.where(k % 2 == 0, 1.0, -1.0)
        direction = np.zeros((K, dim))
        direction[:, -1] = np.where(k % 2 == 1, 1.0, 0.0)
        direction[:, 0] = np.where(k % 2 == 0, 1.0, 0.0)
        wv = np.zeros((K, dim - 1))
        wv[:, 0] = (k - 1) // 2
        phases = np.where(k % 2 == 0, np.pi / 2, 0.0)
        a_eta = np.full(K, 0.4)
        b_v = np.full(K, 0.6)
        if c0 > 0:
            # Σ_{k>K} k^{-2·decay} by the integral bound, accurate to O(K^{-2 decay})
            tail = c0 ** 2 * (K ** (1 - 2 * decay) / (2 * decay - 1))
        else:
            tail = 0.0
        return cls(default_amplitudes(K, c0, decay), lam_rho, lam_q, direction, a_eta, b_v, wv, phases, tail)

    def envelope(self, k: int, x_lat) -> np.ndarray:
        """Scalar lateral envelope for mode k (1-based) at lateral points ``(n, dim-1)``."""
        x_lat = np.atleast_2d(x_lat)
        kv = 2 * np.pi * self.wavevectors[k - 1]
        return np.cos(x_lat @ kv - self.phases[k - 1])


def eval_f(spec: NoiseSpec, k: int, rho, q, x) -> np.ndarray:
    """Fluid noise vector f_k(ρ, q, x); ``q`` has shape (..., dim), ``x`` (..., dim)."""
    rho = np.asarray(rho, dtype=float)
    q = np.asarray(q, dtype=float)
    x = np.asarray(x, dtype=float)
    i = k - 1
    scalar = spec.c[i] * (spec.lam_rho[i] * rho + q @ spec.lam_q[i])
    env = spec.envelope(k, x[..., :-1].reshape(-1, spec.dim - 1)).reshape(np.shape(rho))
    return (scalar * env)[..., None] * spec.f_direction[i]


def eval_g(spec: NoiseSpec, k: int, eta, v, x_lat) -> np.ndarray:
    """Structure noise g_k(η, v, x)."""
    eta = np.asarray(eta, dtype=float)
    v = np.asarray(v, dtype=float)
    i = k - 1
    env = spec.envelope(k, np.asarray(x_lat, dtype=float).reshape(-1, spec.dim - 1)).reshape(np.shape(eta))
    return spec.c[i] * (spec.a_eta[i] * eta + spec.b_v[i] * v) * env


@dataclass
class GrowthReport:
    passed: bool
    growth_margin: np.ndarray  # min over samples of c_k(ρ + |q|) − |f_k|, per k
    gradient_margin: np.ndarray  # c_k − ‖∇_{ρ,q} f_k‖ worst case, per k
    structure_growth_margin: np.ndarray
    structure_gradient_margin: np.ndarray
    offending: list = field(default_factory=list)

    @property
    def worst(self) -> float:
        return float(min(self.growth_margin.min(), self.gradient_margin.min(),
                         self.structure_growth_margin.min(), self.structure_gradient_margin.min()))


def validate_growth(spec: NoiseSpec, n_samples: int = 10_000, seed: int = 0, raise_on_failure: bool = True,
                    tol: float = 1e-12) -> GrowthReport:
    """Sample random states and check both growth bounds for every k ≤ K."""
    rng = np.random.default_rng(seed)
    dim = spec.dim
    rho = rng.exponential(1.0, n_samples)
    q = rng.normal(size=(n_samples, dim)) * rng.exponential(1.0, (n_samples, 1))
    x = rng.random((n_samples, dim))
    eta = rng.normal(size=n_samples)
    v = rng.normal(size=n_samples)
    K = spec.K
    gm, dm, sgm, sdm = (np.empty(K) for _ in range(4))
    offending = []
    for k in range(1, K + 1):
        i = k - 1
        ck = spec.c[i]
        f = eval_f(spec, k, rho, q, x)
        slack = ck * (rho + np.linalg.norm(q, axis=1)) - np.linalg.norm(f, axis=1)
        gm[i] = slack.min()
        env = np.abs(spec.envelope(k, x[:, :-1]))
        # ∇_{ρ,q} f_k = c_k m_k ⊗ (λ_k, Λ_k), operator norm c_k |m_k| |(λ_k, Λ_k)|
        coef = np.hypot(spec.lam_rho[i], np.linalg.norm(spec.lam_q[i]))
        grad = ck * env * np.linalg.norm(spec.f_direction[i]) * coef
        dm[i] = (ck - grad).min()
        g = eval_g(spec, k, eta, v, x[:, :-1])
        sslack = ck * (np.abs(eta) + np.abs(v)) - np.abs(g)
        sgm[i] = sslack.min()
        sgrad = ck * env * np.hypot(spec.a_eta[i], spec.b_v[i])
        sdm[i] = (ck - sgrad).min()
        scale = tol * max(1.0, ck)
        if gm[i] < -scale:
            j = int(np.argmin(slack))
            offending.append((k, {"rho": float(rho[j]), "q": q[j].tolist(), "x": x[j].tolist(), "bound": "growth"}))
        elif dm[i] < -scale:
            j = int(np.argmin(ck - grad))
            offending.append((k, {"rho": float(rho[j]), "q": q[j].tolist(), "x": x[j].tolist(), "bound": "gradient"}))
        elif sgm[i] < -scale or sdm[i] < -scale:
            j = int(np.argmin(sslack))
            offending.append((k, {"eta": float(eta[j]), "v": float(v[j]), "x": x[j, :-1].tolist(),
                                  "bound": "structure"}))
    report = GrowthReport(not offending, gm, dm, sgm, sdm, offending)
    if offending and raise_on_failure:
        k, state = offending[0]
        raise NoiseGrowthError(f"noise mode k={k} violates its {state['bound']} bound at {state}", k, state)
    return report


# ---------------------------------------------------------------------------
# Wiener increments


class WienerPath:
    """Seeded Gaussian increments for the fluid (W¹) and structure (W²) noises.

    The two processes come from independent child streams of one
    ``SeedSequence``, so a seed fixes both paths bit-for-bit.
    """

    def __init__(self, seed: int, K: int, dt: float, n_steps: int):
        self.seed = int(seed)
        self.K = K
        self.dt = dt
        self.n_steps = n_steps
        s1, s2 = np.random.SeedSequence(self.seed).spawn(2)
        scale = np.sqrt(dt)
        self.dW1 = np.random.default_rng(s1).standard_normal((n_steps, K)) * scale
        self.dW2 = np.random.default_rng(s2).standard_normal((n_steps, K)) * scale
        self.draws = 0

    def sample_increments(self, j: int):
        if not 0 <= j < self.n_steps:
            raise IndexError(f"step {j} outside horizon of {self.n_steps} steps")
        self.draws += 1
        return self.dW1[j], self.dW2[j]


def sample_increments(path: WienerPath, j: int):
    return path.sample_increments(j)


# ---------------------------------------------------------------------------
# projected noise


def fluid_noise_fields(rho, u_hat, spec: NoiseSpec, basis: FluidBasis) -> np.ndarray:
    """f_k(ρ, ρu)/√ρ on the grid, shape ``(K, dim, N)``."""
    rho = np.asarray(rho, dtype=float).reshape(-1)
    u = basis.evaluate(np.asarray(u_hat).reshape(basis.dim, basis.n))  # (dim, N)
    q = (rho * u).T
    pts = basis.grid.points
    out = np.empty((spec.K, basis.dim, rho.size))
    inv_sqrt = 1.0 / np.sqrt(rho)
    for k in range(1, spec.K + 1):
        out[k - 1] = (eval_f(spec, k, rho, q, pts) * inv_sqrt[:, None]).T
    return out


def projected_fluid_noise(rho, u_hat, spec: NoiseSpec, basis: FluidBasis, M_half, mask=None,
                          rho_floor: float = 0.0) -> np.ndarray:
    """Galerkin noise columns ``M^{1/2}[ρ] P_n(f_k(ρ, ρu)/√ρ)``, shape ``(dim*n_f, K)``.

    ``M_half`` is the (per-component) square root of the mass matrix. When
    ``mask`` (cell weights of the fluid domain) is given, each column is
    returned as the dual vector ``∫ 1_mask F_k · ψ_i`` that enters the
    momentum equation instead.
    """
    rho = np.asarray(rho, dtype=float).reshape(-1)
    if rho.min() <= rho_floor:
        raise VacuumError(f"min density {rho.min():.3e} at or below floor {rho_floor:.3e}")
    n = basis.n
    cols = np.zeros((basis.dim * n, spec.K))
    if spec.is_zero:
        return cols
    fields = fluid_noise_fields(rho, u_hat, spec, basis)
    proj = basis.project(fields.reshape(spec.K * basis.dim, -1)) @ M_half  # M_half symmetric, per component
    cols[:] = proj.reshape(spec.K, basis.dim * n).T
    if mask is not None:
        w = np.asarray(mask, dtype=float).reshape(-1)
        gram = basis.weighted_table(w * basis.grid.cell_volume)
        cols = np.concatenate([gram @ blk for blk in cols.reshape(basis.dim, n, spec.K)], axis=0)
    return cols


def projected_structure_noise(eta_hat, v_hat, spec: NoiseSpec, basis: StructureBasis) -> np.ndarray:
    """Columns ``P_n g_k(η, v)`` in structure coordinates, shape ``(n_st, K)``."""
    eta = basis.evaluate(eta_hat)
    v = basis.evaluate(v_hat)
    x = basis.grid.lateral_points
    cols = np.zeros((basis.n, spec.K))
    if spec.is_zero:
        return cols
    for k in range(1, spec.K + 1):
        cols[:, k - 1] = basis.project(eval_g(spec, k, eta, v, x))
    return cols
