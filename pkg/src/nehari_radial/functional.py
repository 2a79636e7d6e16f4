"""Energy functional, Nehari residuals, coercivity, and explicit thresholds.

The quadratic form of the fourth-order operator is

    ||u||^2 = integral ( (Delta u)^2 - a rho^{-sigma} |grad u|^2
                         + b rho^{-mu} u^2 ) dv_g

and the energy is

    J_lam(u) = 1/2 ||u||^2 - (lam/q) ||u||_q^q - (1/N) integral f |u|^N dv_g

with 1 < q < 2 < N = 2n/(n-4).  The first variation tested against u is
Phi_lam(u) = ||u||^2 - lam ||u||_q^q - integral f |u|^N, whose zero set is
the constraint manifold the branch solver works on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import integrate as scipy_integrate

from .errors import DomainError, NumericalError
from .geometry import ModelGeometry, RadialGrid, integrate, measure, unit_sphere_area
from .operators import CLAMPED, FREE, Field, diff_matrices, h22_gram, laplacian_matrix


@dataclass(frozen=True)
class RadialCoefficient:
    """Closed-form radial coefficient c(rho) = center + lap_center * rho^2 / (2n).

    The quadratic profile is the simplest one with a prescribed value and
    Laplacian at the center point, which is all the geometric conditions
    consume.  ``lap_center`` is Delta c at rho = 0.
    """

    center: float
    lap_center: float = 0.0

    @classmethod
    def constant(cls, value: float) -> "RadialCoefficient":
        return cls(center=float(value))

    def values(self, nodes: np.ndarray, n: int) -> np.ndarray:
        return self.center + self.lap_center * nodes**2 / (2.0 * n)

    @property
    def is_zero(self) -> bool:
        return self.center == 0.0 and self.lap_center == 0.0


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Problem data: geometry, grid, coefficients, exponents, parameter lam.

    Invariants enforced at construction: n >= 5 (via the geometry, so
    N = 2n/(n-4) > 2), 1 < q < 2, sigma in (0, 2], mu in (0, 4], lam >= 0,
    f > 0 on the grid with its maximum at the center.
    """

    geom: ModelGeometry
    grid: RadialGrid
    a: RadialCoefficient = RadialCoefficient(0.0)
    b: RadialCoefficient = RadialCoefficient(0.0)
    f: RadialCoefficient = RadialCoefficient(1.0)
    q: float = 1.5
    sigma: float = 1.5
    mu: float = 3.0
    lam: float = 0.0
    r: float = 4.0
    s: float = 4.0
    bc: str = CLAMPED

    def __post_init__(self):
        if not 1.0 < self.q < 2.0:
            raise DomainError(f"q must lie in (1, 2), got {self.q}")
        if not 0.0 < self.sigma <= 2.0:
            raise DomainError(f"sigma must lie in (0, 2], got {self.sigma}")
        if not 0.0 < self.mu <= 4.0:
            raise DomainError(f"mu must lie in (0, 4], got {self.mu}")
        if self.lam < 0.0:
            raise DomainError(f"lam must be >= 0, got {self.lam}")
        if self.r <= 1.0 or self.s <= 1.0:
            raise DomainError("Lebesgue exponents r, s must exceed 1")
        if self.bc not in (CLAMPED, FREE):
            raise DomainError(f"unknown boundary closure {self.bc!r}")
        fvals = self.f.values(self.grid.nodes, self.geom.n)
        if np.any(fvals <= 0.0):
            raise DomainError("f must be positive on the whole domain")
        if self.f.lap_center > 0.0:
            raise DomainError("f must attain its maximum at the center (lap_center <= 0)")

    @property
    def n(self) -> int:
        return self.geom.n

    @property
    def N(self) -> float:
        return self.geom.sobolev_exponent

    @property
    def f_max(self) -> float:
        return self.f.center

    def f_values(self) -> np.ndarray:
        return self.f.values(self.grid.nodes, self.geom.n)

    def with_lam(self, lam: float) -> "ProblemSpec":
        return ProblemSpec(
            geom=self.geom, grid=self.grid, a=self.a, b=self.b, f=self.f,
            q=self.q, sigma=self.sigma, mu=self.mu, lam=lam,
            r=self.r, s=self.s, bc=self.bc,
        )


class _Discretization:
    """Assembled sparse operators for one ProblemSpec (built once, reused).

    The quadratic form is evaluated in factored shape
    sum dv (Lu)^2 - sum dv_a (D1 u)^2 + sum dv_b u^2: squaring the factor
    matvecs keeps the relative rounding near machine precision, whereas a
    precomputed L^T W L has O(h^-4)-sized entries whose cancellation costs
    about eight digits.  The assembled matrix is kept for gradient matvecs
    and eigenwork, where that cancellation is intrinsic anyway.
    """

    def __init__(self, spec: ProblemSpec):
        grid, geom = spec.grid, spec.geom
        rho = grid.nodes
        self.dv = measure(grid, geom)
        D1, _ = diff_matrices(grid, geom, spec.bc)
        L = laplacian_matrix(grid, geom, spec.bc)
        self.L, self.D1 = L, D1
        W = sp.diags_array(self.dv)
        quad = L.T @ W @ L
        self.dv_a = None
        if not spec.a.is_zero:
            self.dv_a = self.dv * spec.a.values(rho, geom.n) * rho ** (-spec.sigma)
            quad = quad - D1.T @ sp.diags_array(self.dv_a) @ D1
        self.dv_b = None
        if not spec.b.is_zero:
            self.dv_b = self.dv * spec.b.values(rho, geom.n) * rho ** (-spec.mu)
            quad = quad + sp.diags_array(self.dv_b)
        self.M_quad = quad.tocsr()
        self.H = h22_gram(grid, geom, spec.bc)
        self._H_solve = None
        self.f_dv = self.dv * spec.f_values()

    def quad_value(self, x: np.ndarray) -> float:
        lap = self.L @ x
        val = float(self.dv @ lap**2)
        if self.dv_a is not None:
            du = self.D1 @ x
            val -= float(self.dv_a @ du**2)
        if self.dv_b is not None:
            val += float(self.dv_b @ x**2)
        return val

    def quad_bilinear(self, x: np.ndarray, y: np.ndarray) -> float:
        val = float(self.dv @ ((self.L @ x) * (self.L @ y)))
        if self.dv_a is not None:
            val -= float(self.dv_a @ ((self.D1 @ x) * (self.D1 @ y)))
        if self.dv_b is not None:
            val += float(self.dv_b @ (x * y))
        return val

    def solve_h(self, rhs: np.ndarray) -> np.ndarray:
        if self._H_solve is None:
            try:
                self._H_solve = spla.factorized(self.H)
            except RuntimeError as exc:
                raise NumericalError(f"H^2_2 Gram factorization failed: {exc}") from exc
        return self._H_solve(rhs)


@lru_cache(maxsize=64)
def _disc(spec: ProblemSpec) -> _Discretization:
    return _Discretization(spec)


def _check_field(spec: ProblemSpec, u: Field):
    if u.grid is not spec.grid:
        raise DomainError("field does not live on the spec's grid")


def quad_form(spec: ProblemSpec, u: Field) -> float:
    """||u||^2, the quadratic form of the fourth-order operator."""
    _check_field(spec, u)
    return _disc(spec).quad_value(u.values)


def quad_inner(spec: ProblemSpec, u: Field, v: Field) -> float:
    """The symmetric bilinear form polarizing quad_form."""
    _check_field(spec, u)
    _check_field(spec, v)
    return _disc(spec).quad_bilinear(u.values, v.values)


def norm_q_pow_q(spec: ProblemSpec, u: Field) -> float:
    """||u||_q^q = integral |u|^q dv_g."""
    _check_field(spec, u)
    return float(_disc(spec).dv @ np.abs(u.values) ** spec.q)


def f_integral(spec: ProblemSpec, u: Field) -> float:
    """integral f |u|^N dv_g."""
    _check_field(spec, u)
    return float(_disc(spec).f_dv @ np.abs(u.values) ** spec.N)


def energy_parts(spec: ProblemSpec, u: Field):
    """(||u||^2, ||u||_q^q, integral f|u|^N) in one pass."""
    _check_field(spec, u)
    d = _disc(spec)
    au = np.abs(u.values)
    S = d.quad_value(u.values)
    Q = float(d.dv @ au**spec.q)
    F = float(d.f_dv @ au**spec.N)
    return S, Q, F


def energy_from_parts(S: float, Q: float, F: float, lam: float, q: float, N: float) -> float:
    return 0.5 * S - (lam / q) * Q - F / N


def energy(spec: ProblemSpec, u: Field) -> float:
    """J_lam(u); J_lam(0) = 0."""
    S, Q, F = energy_parts(spec, u)
    return energy_from_parts(S, Q, F, spec.lam, spec.q, spec.N)


def nehari_residual(spec: ProblemSpec, u: Field) -> float:
    """Phi_lam(u) = ||u||^2 - lam ||u||_q^q - integral f|u|^N; zero on the constraint set."""
    S, Q, F = energy_parts(spec, u)
    return S - spec.lam * Q - F


def nehari_second(spec: ProblemSpec, u: Field) -> float:
    """<grad Phi_lam(u), u> = 2||u||^2 - lam q ||u||_q^q - N integral f|u|^N.

    Its sign classifies the constraint set into the two branches.
    """
    S, Q, F = energy_parts(spec, u)
    return 2.0 * S - spec.lam * spec.q * Q - spec.N * F


def euclidean_gradient(spec: ProblemSpec, u: Field) -> np.ndarray:
    """Nodewise partial derivatives of the discrete J_lam."""
    _check_field(spec, u)
    d = _disc(spec)
    au = np.abs(u.values)
    sgn = np.sign(u.values)
    g = d.M_quad @ u.values
    g = g - spec.lam * d.dv * au ** (spec.q - 1.0) * sgn
    g = g - d.f_dv * au ** (spec.N - 1.0) * sgn
    return g


def grad_energy(spec: ProblemSpec, u: Field) -> Field:
    """Riesz representative of dJ_lam(u) in the discrete H^2_2 inner product.

    <g, v>_H equals the directional derivative of J_lam at u along v for
    every grid field v; in particular <g, u>_H = Phi_lam(u).
    """
    g_euc = euclidean_gradient(spec, u)
    d = _disc(spec)
    g = d.solve_h(g_euc)
    if not np.all(np.isfinite(g)):
        raise NumericalError("Riesz solve produced non-finite values")
    return Field(g, spec.grid)


def grad_energy_norm(spec: ProblemSpec, u: Field):
    """(g, ||g||_H): the Riesz gradient and its H^2_2 norm in one solve."""
    g_euc = euclidean_gradient(spec, u)
    d = _disc(spec)
    gv = d.solve_h(g_euc)
    if not np.all(np.isfinite(gv)):
        raise NumericalError("Riesz solve produced non-finite values")
    return Field(gv, spec.grid), float(math.sqrt(max(gv @ g_euc, 0.0)))


def directional_derivative(spec: ProblemSpec, u: Field, v: Field) -> float:
    _check_field(spec, v)
    return float(euclidean_gradient(spec, u) @ v.values)


# ---------------------------------------------------------------------------
# coercivity and the explicit thresholds
# ---------------------------------------------------------------------------


def estimate_coercivity(spec: ProblemSpec, k: int = 3) -> float:
    """Smallest Rayleigh quotient quad_form(u) / ||u||_{H^2_2}^2.

    Solved as the generalized eigenproblem M x = Lambda H x (both sparse
    symmetric, H positive definite) by shift-inverted Lanczos iteration
    around 0 (inverse iteration on the pencil), with an equilibrated dense
    eigensolve fallback on small grids.  A value <= 0 is a legitimate
    "not coercive" outcome, not an error.
    """
    d = _disc(spec)
    m = spec.grid.m
    M, H = d.M_quad.tocsc(), d.H
    if m <= 700:
        return _dense_smallest(M, H)
    # symmetric diagonal equilibration (a congruence: pencil eigenvalues
    # unchanged) keeps the rho^{n-1} dynamic range out of the inner solves
    scale = 1.0 / np.sqrt(H.diagonal())
    D = sp.diags_array(scale)
    Ms = (D @ M @ D).tocsc()
    Hs = (D @ H @ D).tocsc()
    try:
        vals = spla.eigsh(
            Ms, k=min(k, m - 2), M=Hs, sigma=0.0, which="LM",
            return_eigenvectors=False, tol=0.0, v0=np.ones(m),
        )
        return float(np.min(vals))
    except Exception:
        if m <= 4096:
            return _dense_smallest(M, H)
        raise NumericalError("coercivity eigensolve failed") from None


def _dense_smallest(M, H) -> float:
    # symmetric diagonal equilibration: congruence, leaves the pencil
    # eigenvalues unchanged but tames the rho^{n-1} dynamic range
    from scipy.linalg import eigh

    scale = 1.0 / np.sqrt(H.diagonal())
    D = sp.diags_array(scale)
    Ms = (D @ M @ D).toarray()
    Hs = (D @ H @ D).toarray()
    vals = eigh(Ms, Hs, eigvals_only=True, subset_by_index=[0, 0])
    return float(vals[0])


def estimate_sobolev_constant(n: int, ball_radius: float = 1e4) -> float:
    """Estimate of the best constant K0 in ||u||_N^2 <= K0 ||Delta u||_2^2 on R^n.

    Evaluates the Rayleigh quotient on the extremal profile
    u = (1 + rho^2)^{-(n-4)/2} over a large ball by adaptive quadrature:
    Delta u = -(n-4)(n + 2 rho^2)(1 + rho^2)^{-n/2}, and
    K0 = (int |u|^N)^{2/N} / int (Delta u)^2.
    """
    if n < 5:
        raise DomainError("need n >= 5")
    omega = unit_sphere_area(n)
    N = 2.0 * n / (n - 4.0)

    def num(rho):
        return ((n - 4.0) * (n + 2.0 * rho**2)) ** 2 * (1 + rho**2) ** (-n) * rho ** (n - 1)

    def den(rho):
        return (1 + rho**2) ** (-n) * rho ** (n - 1)

    i_num = _quad_split(num, ball_radius)
    i_den = _quad_split(den, ball_radius)
    return float((omega * i_den) ** (2.0 / N) / (omega * i_num))


def _quad_split(fn, upper: float) -> float:
    total = 0.0
    lo = 0.0
    for hi in (1.0, 10.0, 100.0, upper):
        if hi <= lo:
            continue
        val, _ = scipy_integrate.quad(fn, lo, hi, limit=200)
        total += val
        lo = hi
    return total


def sobolev_probe_family(spec: ProblemSpec, seed: int = 1234, n_random: int = 8):
    """Documented probe family for the companion-constant fit.

    Wide clamped bumps (near-constant), bumps at scales R/2, R/4, R/8,
    truncated extremal profiles at several concentration scales, and a few
    seeded random smooth fields.
    """
    rho = spec.grid.nodes
    R = spec.geom.radius
    beta = (spec.n - 4.0) / 2.0
    probes = []
    bump = (1.0 - (rho / R) ** 2) ** 3
    probes.append(bump)
    for width in (0.5, 0.25, 0.125):
        probes.append(np.exp(-((rho / (width * R)) ** 2)) * bump)
    for scale in (0.4, 0.1, 0.025):
        probes.append((1.0 + (rho / (scale * R)) ** 2) ** (-beta) * bump)
    rng = np.random.default_rng(seed)
    k = np.arange(1, 6)
    for _ in range(n_random):
        coef = rng.normal(size=k.size)
        vals = bump * np.sum(
            coef[:, None] * np.cos(np.pi * np.outer(k, rho / R)), axis=0
        )
        probes.append(vals)
    return [Field(p, spec.grid) for p in probes]


def estimate_companion_constant(
    spec: ProblemSpec, k0: float, eps: float = 1e-2, seed: int = 1234
) -> float:
    """Smallest A_eps making ||u||_N^2 <= (1+eps) K0 ||Delta u||^2 + A_eps ||u||_2^2
    hold over the probe family; floored by the constant-field ratio V^{2/N-1}.

    An estimate with stated provenance, not a proven constant.
    """
    from .operators import laplacian, weighted_lp_norm

    d = _disc(spec)
    V = float(np.sum(d.dv))
    floor = V ** (2.0 / spec.N - 1.0)
    best = floor
    for u in sobolev_probe_family(spec, seed=seed):
        nN2 = weighted_lp_norm(u, spec.N, 0.0, spec.geom) ** 2
        lap = laplacian(u, spec.geom, spec.bc)
        dd = float(integrate(spec.grid, spec.geom, lap.values**2))
        l22 = weighted_lp_norm(u, 2.0, 0.0, spec.geom) ** 2
        if l22 <= 0.0:
            continue
        ratio = (nN2 - (1.0 + eps) * k0 * dd) / l22
        best = max(best, ratio)
    return float(best)


@dataclass(frozen=True)
class ConstantsReport:
    """Coercivity constant, Sobolev-constant estimates, and the thresholds.

    All entries are positive when the coercivity condition holds.  K0 and
    A_eps are labeled estimates (Rayleigh quotient on the extremal profile,
    probe-family fit); the thresholds are exact functions of them.
    """

    Lambda: float
    K0: float
    A_eps: float
    lambda0: float
    lambda2: float
    xi: float
    theta: float
    volume: float
    f_max: float
    eps: float
    coercive: bool

    def to_dict(self) -> dict:
        return {
            "Lambda": self.Lambda,
            "K0_estimate": self.K0,
            "A_eps_estimate": self.A_eps,
            "lambda0": self.lambda0,
            "lambda2": self.lambda2,
            "xi": self.xi,
            "theta": self.theta,
            "volume": self.volume,
            "f_max": self.f_max,
            "eps": self.eps,
            "coercive": self.coercive,
            "provenance": "K0/A_eps estimated (extremal-profile quadrature, probe fit)",
        }


def threshold_lambda0(N: float, q: float, Lam: float, V: float, maxK: float) -> float:
    return ((N - 2.0) * q * Lam ** (q / 2.0)) / (
        2.0 * (N - q) * V ** (1.0 - q / N) * maxK ** (q / 2.0)
    )


def threshold_xi(N: float, q: float, Lam: float, maxK_eps: float, f_max: float) -> float:
    return ((2.0 - q) * Lam ** (N / 2.0) * maxK_eps ** (-N / 2.0) / ((N - q) * f_max)) ** (
        1.0 / (N - 2.0)
    )


def threshold_lambda2(N: float, q: float, Lam: float, V: float, maxK: float, xi: float) -> float:
    return ((N - 2.0) * xi**2 * Lam ** (q / 2.0)) / (
        2.0 * (N - q) * V ** (1.0 - q / N) * maxK ** (q / 2.0)
    )


def compute_theta(spec: ProblemSpec) -> float:
    """Scale factor theta = (1 + ||a/rho^sigma||_r + ||b/rho^mu||_s)^{1/n}."""
    from .operators import weighted_lp_norm

    na = nb = 0.0
    rho = spec.grid.nodes
    if not spec.a.is_zero:
        u = Field(spec.a.values(rho, spec.n), spec.grid)
        if spec.sigma * spec.r >= spec.n:
            raise DomainError(
                "||a/rho^sigma||_r diverges: need sigma*r < n for a nonvanishing a"
            )
        na = weighted_lp_norm(u, spec.r, -spec.sigma * spec.r, spec.geom)
    if not spec.b.is_zero:
        u = Field(spec.b.values(rho, spec.n), spec.grid)
        if spec.mu * spec.s >= spec.n:
            raise DomainError(
                "||b/rho^mu||_s diverges: need mu*s < n for a nonvanishing b"
            )
        nb = weighted_lp_norm(u, spec.s, -spec.mu * spec.s, spec.geom)
    return float((1.0 + na + nb) ** (1.0 / spec.n))


def thresholds(
    spec: ProblemSpec,
    Lambda: float,
    K0: float,
    A_eps: float,
    eps: float = 1e-2,
) -> ConstantsReport:
    """Threshold values lambda0, xi, lambda2 from the coercivity and Sobolev constants."""
    if Lambda <= 0.0 or K0 <= 0.0 or A_eps <= 0.0:
        raise DomainError("thresholds need positive Lambda, K0, A_eps")
    N, q = spec.N, spec.q
    dvsum = float(np.sum(_disc(spec).dv))
    maxK = max(K0, A_eps)
    maxK_eps = max((1.0 + eps) * K0, A_eps)
    lam0 = threshold_lambda0(N, q, Lambda, dvsum, maxK)
    xi = threshold_xi(N, q, Lambda, maxK_eps, spec.f_max)
    lam2 = threshold_lambda2(N, q, Lambda, dvsum, maxK, xi)
    try:
        theta = compute_theta(spec)
    except DomainError:
        # theta only feeds the bubble machinery; the lambda thresholds
        # stand without it when the r/s weighted norms diverge
        theta = float("nan")
    return ConstantsReport(
        Lambda=float(Lambda),
        K0=float(K0),
        A_eps=float(A_eps),
        lambda0=float(lam0),
        lambda2=float(lam2),
        xi=float(xi),
        theta=theta,
        volume=dvsum,
        f_max=spec.f_max,
        eps=float(eps),
        coercive=Lambda > 0.0,
    )


def constants_report(spec: ProblemSpec, eps: float = 1e-2, seed: int = 1234) -> ConstantsReport:
    """Run all estimators and assemble the report (used by the CLI constants mode)."""
    Lam = estimate_coercivity(spec)
    if Lam <= 0.0:
        return ConstantsReport(
            Lambda=float(Lam), K0=float("nan"), A_eps=float("nan"),
            lambda0=float("nan"), lambda2=float("nan"), xi=float("nan"),
            theta=float("nan"), volume=float(np.sum(_disc(spec).dv)),
            f_max=spec.f_max, eps=eps, coercive=False,
        )
    K0 = estimate_sobolev_constant(spec.n)
    A_eps = estimate_companion_constant(spec, K0, eps=eps, seed=seed)
    return thresholds(spec, Lam, K0, A_eps, eps=eps)
