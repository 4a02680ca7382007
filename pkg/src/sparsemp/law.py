"""Sparsity-corrected Marchenko-Pastur law.

The deterministic Stieltjes transform ``w(z)`` solves the quartic

    P_z(w) = 1 + (z + a) w + z w**2 + c4 * w**2 * (z w + a)**2,   a = 1 - 1/d,

where ``c4 = s4_t / q_t**2 = exp(-2t) s4 / q**2``.  For ``c4 = 0`` this is the
Marchenko-Pastur quadratic.  For ``d > 1`` the law carries an atom of mass
``1 - 1/d`` at zero in addition to the absolutely continuous part on
``[L_minus, L_plus]``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from .errors import BranchError, ConvergenceError, DomainError, ParameterError, QuadratureError

__all__ = [
    "LawParams",
    "LawSolution",
    "EdgeReport",
    "LawDerived",
    "SpectralDomain",
    "mp_edges",
    "mp_stieltjes",
    "mp_density",
    "quartic_coefficients",
    "P",
    "dP_dw",
    "dP_dz",
    "solve_self_consistent",
    "stieltjes",
    "density",
    "edge_newton",
    "edge_asymptotic",
    "support_edges",
    "law_derived",
    "integrated_density",
    "classical_locations",
    "spectral_domain",
    "tw_gamma",
]

C4_CEILING = 0.1
RESIDUAL_TOL = 1e-10
NEWTON_TOL = 1e-12
NEWTON_MAXIT = 50
D1_ENERGY_FLOOR = 1e-2


@dataclass(frozen=True)
class LawParams:
    """Parameters of the corrected law; ``q = inf`` gives plain Marchenko-Pastur."""

    d: float
    q: float = math.inf
    s4: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        if not self.d >= 1:
            raise ParameterError(f"aspect ratio d must be >= 1, got {self.d}")
        if not self.q > 0:
            raise ParameterError(f"q must be positive, got {self.q}")
        if not self.t >= 0:
            raise ParameterError(f"flow time must be non-negative, got {self.t}")
        c4 = self.c4
        if not abs(c4) < C4_CEILING:
            raise ParameterError(
                f"correction coefficient s4 exp(-2t)/q^2 = {c4:.4g} outside (-{C4_CEILING}, {C4_CEILING})"
            )

    @classmethod
    def from_ensemble(cls, params, t: float = 0.0) -> "LawParams":
        from .ensemble import normalized_s4

        return cls(d=params.d, q=params.q, s4=normalized_s4(params), t=t)

    @property
    def c4(self) -> float:
        if math.isinf(self.q):
            return 0.0
        return math.exp(-2.0 * self.t) * self.s4 / self.q**2

    @property
    def q_t(self) -> float:
        return self.q * math.exp(self.t / 2)

    @property
    def a(self) -> float:
        return 1.0 - 1.0 / self.d

    @property
    def lam_plus(self) -> float:
        return mp_edges(self.d)[1]

    @property
    def lam_minus(self) -> float:
        return mp_edges(self.d)[0]

    @property
    def disk_radius(self) -> float:
        if self.d == 1:
            return 10.0
        lm, lp = mp_edges(self.d)
        # lm underflows to 0 for d within rounding of 1, where the disk is vacuous
        return 6.0 * lp / lm if lm > 0 else math.inf

    def at_time(self, t: float) -> "LawParams":
        return LawParams(self.d, self.q, self.s4, t)

    def to_dict(self) -> dict:
        return {"d": self.d, "q": self.q, "s4": self.s4, "t": self.t, "c4": self.c4}


@dataclass
class LawSolution:
    z: complex
    w: complex
    residual: float
    all_roots: np.ndarray
    diagnostics: dict = field(default_factory=dict)


@dataclass
class EdgeReport:
    which: str
    tau: float
    L: float
    L_plus_asym: float
    L_minus_asym: Optional[float]
    Ldot: float
    newton_iters: int
    newton_residual: float

    @property
    def L_plus(self) -> Optional[float]:
        return self.L if self.which == "plus" else None

    @property
    def L_minus(self) -> Optional[float]:
        return self.L if self.which == "minus" else None

    def to_dict(self) -> dict:
        return {
            "which": self.which,
            "tau": self.tau,
            "L": self.L,
            "L_plus": self.L_plus,
            "L_minus": self.L_minus,
            "L_plus_asym": self.L_plus_asym,
            "L_minus_asym": self.L_minus_asym,
            "Ldot": self.Ldot,
            "newton_iters": self.newton_iters,
            "newton_residual": self.newton_residual,
        }


@dataclass
class LawDerived:
    alpha1: float
    alpha2: complex
    beta: float
    kappa: float


@dataclass(frozen=True)
class SpectralDomain:
    E_lo: float
    E_hi: float
    eta_lo: float = 0.0
    eta_hi: float = 3.0

    def contains(self, z) -> bool:
        z = complex(z)
        return self.E_lo <= z.real <= self.E_hi and self.eta_lo < z.imag < self.eta_hi

    def grid(self, n_E: int = 200, n_eta: int = 50, eta_min: float = 1e-4) -> np.ndarray:
        """``n_E x n_eta`` grid, energies linear and ``eta`` log-spaced."""
        E = np.linspace(self.E_lo, self.E_hi, n_E)
        eta = np.geomspace(eta_min, self.eta_hi * (1 - 1e-3), n_eta)
        return E[:, None] + 1j * eta[None, :]


def mp_edges(d: float) -> tuple[float, float]:
    r = 1.0 / math.sqrt(d)
    return (1.0 - r) ** 2, (1.0 + r) ** 2


def tw_gamma(d: float) -> float:
    """Edge scaling constant ``sqrt(d) (1 + sqrt(d))**(-4/3)``."""
    return math.sqrt(d) * (1.0 + math.sqrt(d)) ** (-4.0 / 3.0)


def spectral_domain(params: LawParams) -> SpectralDomain:
    lm, lp = mp_edges(params.d)
    E_lo = lm / 2 if params.d > 1 else 0.1
    return SpectralDomain(E_lo, lp + 1.0)


def mp_stieltjes(z, d: float):
    """Stieltjes transform of the Marchenko-Pastur law (atom at 0 included).

    Real ``z`` is read as ``z + i0``.  Works elementwise on arrays.
    """
    z_arr = np.asarray(z, dtype=complex)
    if np.any(z_arr == 0):
        raise DomainError("m_MP has a pole at z = 0")
    lm, lp = mp_edges(d)
    a = 1.0 - 1.0 / d
    # product of principal roots: analytic off [lm, lp], ~ z at infinity
    S = np.sqrt(z_arr - lp) * np.sqrt(z_arr - lm)
    b = z_arr + a
    plus = -b + S
    minus = -b - S
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(np.abs(plus) >= np.abs(minus), plus / (2 * z_arr), 2.0 / minus)
    if np.ndim(z) == 0:
        return complex(m)
    return m


def mp_density(E, d: float):
    """Absolutely continuous Marchenko-Pastur density (mass ``1/d``)."""
    lm, lp = mp_edges(d)
    E = np.asarray(E, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.sqrt(np.clip((lp - E) * (E - lm), 0, None)) / (2 * np.pi * E)
    rho = np.where((E > lm) & (E < lp), rho, 0.0)
    return rho if rho.ndim else float(rho)


def quartic_coefficients(z, params: LawParams) -> np.ndarray:
    """Monomial coefficients of ``P_z`` in ``w``, highest degree first."""
    z = np.asarray(z, dtype=complex)
    c, a = params.c4, params.a
    one = np.ones_like(z)
    return np.stack([c * z * z, 2 * a * c * z, z + c * a * a, z + a, one], axis=-1)


def P(w, z, params: LawParams):
    c, a = params.c4, params.a
    u = z * w + a
    return 1 + (z + a) * w + z * w * w + c * w * w * u * u


def dP_dw(w, z, params: LawParams):
    c, a = params.c4, params.a
    u = z * w + a
    return (z + a) + 2 * z * w + 2 * c * w * u * (2 * z * w + a)


def dP_dz(w, z, params: LawParams):
    c, a = params.c4, params.a
    return w + w * w + 2 * c * w**3 * (z * w + a)


def _d2P_dw2(w, z, params: LawParams):
    c, a = params.c4, params.a
    return 2 * z + 2 * c * (6 * z * z * w * w + 6 * a * z * w + a * a)


def _d2P_dwdz(w, z, params: LawParams):
    c, a = params.c4, params.a
    return 1 + 2 * w + 2 * c * (4 * z * w**3 + 3 * a * w * w)


def _companion_roots(coeffs: np.ndarray) -> np.ndarray:
    """Roots of a batch of polynomials via companion-matrix eigenvalues."""
    coeffs = np.asarray(coeffs)
    n, k = coeffs.shape
    deg = k - 1
    monic = coeffs[:, 1:] / coeffs[:, :1]
    C = np.zeros((n, deg, deg), dtype=coeffs.dtype)
    C[:, 0, :] = -monic
    C[:, np.arange(1, deg), np.arange(deg - 1)] = 1.0
    return np.linalg.eigvals(C)


def _refine(roots: np.ndarray, z: np.ndarray, params: LawParams, steps: int = 3) -> np.ndarray:
    # Newton polish, keeping a step only when it lowers |P|
    w = roots.copy()
    zz = z[:, None]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for _ in range(steps):
            f = P(w, zz, params)
            cand = w - f / dP_dw(w, zz, params)
            better = np.isfinite(cand) & (np.abs(P(cand, zz, params)) < np.abs(f))
            w = np.where(better, cand, w)
    return w


def _all_roots(z: np.ndarray, params: LawParams, real: bool = False) -> np.ndarray:
    coeffs = quartic_coefficients(z, params)
    if real:
        coeffs = coeffs.real
    # solve for v = 1/w: the reversed polynomial is monic (constant term of P
    # is 1), so a vanishing c4 z^2 only sends two roots to v = 0 instead of
    # blowing up the companion matrix
    v = _companion_roots(coeffs[:, ::-1]).astype(complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        roots = np.where(v == 0, np.inf, 1.0 / v)
    return _refine(roots, z.astype(complex), params)


def _select_upper(z: np.ndarray, roots: np.ndarray, params: LawParams):
    """Pick the Stieltjes root for each ``Im z > 0``; returns (w, n_candidates)."""
    m_mp = mp_stieltjes(z, params.d)
    ok = (roots.imag > 0) & (np.abs(roots) <= params.disk_radius) & np.isfinite(roots)
    dist = np.where(ok, np.abs(roots - m_mp[:, None]), np.inf)
    idx = np.argmin(dist, axis=1)
    w = roots[np.arange(len(z)), idx]
    n_cand = ok.sum(axis=1)
    return w, n_cand


def stieltjes(z, params: LawParams, previous=None):
    """Vectorised Stieltjes branch ``w(z)`` for ``Im z > 0``.

    ``previous`` optionally supplies a nearby solution per point used to
    break numerical ties (continuation along a grid).
    """
    z_arr = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(z_arr.imag <= 0):
        raise DomainError("stieltjes() needs Im z > 0; use solve_self_consistent for real z")
    flat = z_arr.ravel()
    if params.c4 == 0:
        w = mp_stieltjes(flat, params.d)
    else:
        roots = _all_roots(flat, params)
        w, n_cand = _select_upper(flat, roots, params)
        if np.any(n_cand == 0):
            bad = int(np.flatnonzero(n_cand == 0)[0])
            raise BranchError(f"no admissible root at z = {flat[bad]}", roots=roots[bad])
        if previous is not None:
            prev = np.atleast_1d(np.asarray(previous, dtype=complex)).ravel()
            tie = n_cand > 1
            if np.any(tie):
                ok = (roots.imag > 0) & (np.abs(roots) <= params.disk_radius)
                m_mp = mp_stieltjes(flat, params.d)
                d_mp = np.where(ok, np.abs(roots - m_mp[:, None]), np.inf)
                d_prev = np.where(ok, np.abs(roots - prev[:, None]), np.inf)
                # fall back to continuation only when proximity to m_MP is ambiguous
                srt = np.sort(d_mp, axis=1)
                ambiguous = tie & (srt[:, 1] < 2 * srt[:, 0])
                idx = np.argmin(d_prev, axis=1)
                w = np.where(ambiguous, roots[np.arange(len(flat)), idx], w)
    w = w.reshape(z_arr.shape)
    if np.ndim(z) == 0:
        return complex(w[0])
    return w


def _physical_pair(roots: np.ndarray, z: complex, d: float) -> np.ndarray:
    # the two quartic roots that continue the two Marchenko-Pastur roots
    a = 1.0 - 1.0 / d
    mp_roots = np.roots([z, z + a, 1.0])
    used = []
    for r in mp_roots:
        dist = np.abs(roots - r)
        dist[used] = np.inf
        used.append(int(np.argmin(dist)))
    return roots[used]


def _solve_real(E: float, params: LawParams) -> LawSolution:
    z = np.array([complex(E, 0.0)])
    if params.c4 == 0:
        w = complex(mp_stieltjes(E, params.d))
        return LawSolution(complex(E), w, abs(complex(P(w, E, params))), np.roots([E, E + params.a, 1.0]),
                           {"selection": "mp"})
    roots = _all_roots(z, params, real=True)[0]
    pair = _physical_pair(roots, E, params.d)
    if np.max(np.abs(pair.imag)) > 0:
        w = pair[np.argmax(pair.imag)]
        sel = "complex-pair"
    else:
        # outside the support: the Stieltjes branch is increasing in E
        pair = pair.real.astype(complex)
        slope = -dP_dz(pair, E, params) / dP_dw(pair, E, params)
        slope = np.where(np.isfinite(slope), slope.real, 0.0)
        w = pair[np.argmax(slope)]
        sel = "real-increasing"
    res = abs(complex(P(w, E, params)))
    return LawSolution(complex(E), complex(w), res, roots, {"selection": sel})


def solve_self_consistent(z, params: LawParams) -> LawSolution:
    """Root of ``P_z`` on the Stieltjes branch, with diagnostics.

    For real ``z`` the branch is the limit from the upper half-plane.
    """
    z = complex(z)
    if z.imag < 0:
        raise DomainError("z must lie in the closed upper half-plane")
    if z == 0:
        raise DomainError("z = 0 is a pole of the law")
    if z.imag == 0:
        sol = _solve_real(z.real, params)
    elif params.c4 == 0:
        w = mp_stieltjes(z, params.d)
        roots = np.roots([z, z + params.a, 1.0])
        sol = LawSolution(z, w, abs(P(w, z, params)), roots, {"selection": "mp"})
    else:
        zz = np.array([z])
        roots = _all_roots(zz, params)
        w, n_cand = _select_upper(zz, roots, params)
        if n_cand[0] == 0:
            raise BranchError(f"no root with Im w > 0 inside the disk at z = {z}", roots=roots[0])
        sel = "unique" if n_cand[0] == 1 else "closest-to-mp"
        sol = LawSolution(z, complex(w[0]), abs(complex(P(w[0], z, params))), roots[0],
                          {"selection": sel, "n_candidates": int(n_cand[0])})
    if sol.residual > RESIDUAL_TOL:
        raise BranchError(f"residual {sol.residual:.3g} exceeds tolerance at z = {z}", roots=sol.all_roots)
    return sol


def _check_energy(E: float, params: LawParams) -> None:
    if params.d == 1 and E < D1_ENERGY_FLOOR:
        raise DomainError(f"E = {E} is at the hard edge (d = 1 needs E >= {D1_ENERGY_FLOOR})")
    if E == 0:
        raise DomainError("E = 0 carries the atom of the law")


def _density_unchecked(E: float, params: LawParams) -> float:
    if params.c4 == 0:
        return float(mp_density(E, params.d))
    w = _solve_real(E, params).w
    return max(w.imag, 0.0) / math.pi


def density(E, params: LawParams):
    """Density of the absolutely continuous part at real energy ``E``."""
    if np.ndim(E):
        return np.array([density(float(e), params) for e in np.ravel(E)]).reshape(np.shape(E))
    E = float(E)
    _check_energy(E, params)
    return _density_unchecked(E, params)


def edge_asymptotic(params: LawParams) -> tuple[float, Optional[float], float]:
    """Leading-order ``(L_plus, L_minus, dL_plus/dt)``; ``L_minus`` is None for d = 1."""
    r = 1.0 / math.sqrt(params.d)
    c = params.c4
    lp = (1 + r) ** 2
    L_plus = lp + r * lp * c
    L_minus = None
    if params.d > 1:
        lm = (1 - r) ** 2
        L_minus = lm - r * lm * c
    Ldot = -2.0 * r * lp * c
    return L_plus, L_minus, Ldot


def edge_newton(params: LawParams, which: str = "plus") -> EdgeReport:
    """Solve ``P(w, L) = dP/dw(w, L) = 0`` for the soft edge by Newton's method."""
    if which not in ("plus", "minus"):
        raise ParameterError(f"which must be 'plus' or 'minus', got {which!r}")
    if which == "minus" and params.d == 1:
        raise ParameterError("the lower edge is only soft for d > 1")
    return _edge_newton_cached(params, which)


@lru_cache(maxsize=1024)
def _edge_newton_cached(params: LawParams, which: str) -> EdgeReport:
    r = 1.0 / math.sqrt(params.d)
    lm, lp = mp_edges(params.d)
    if which == "plus":
        w, L = -1.0 / (1 + r), lp
    else:
        w, L = -1.0 / (1 - r), lm
    traj = [(w, L)]
    res = math.inf
    it = 0
    for it in range(NEWTON_MAXIT + 1):
        F1 = P(w, L, params)
        F2 = dP_dw(w, L, params)
        res = max(abs(F1), abs(F2))
        if res < NEWTON_TOL:
            break
        if it == NEWTON_MAXIT:
            raise ConvergenceError(f"edge Newton did not converge (residual {res:.3g})", trajectory=traj)
        J = np.array([[dP_dw(w, L, params), dP_dz(w, L, params)],
                      [_d2P_dw2(w, L, params), _d2P_dwdz(w, L, params)]])
        dw, dL = np.linalg.solve(J, [F1, F2])
        w, L = w - dw, L - dL
        traj.append((w, L))
    Lp_asym, Lm_asym, Ldot = edge_asymptotic(params)
    return EdgeReport(which, float(w), float(L), Lp_asym, Lm_asym, Ldot, it, float(res))


def support_edges(params: LawParams) -> tuple[float, float]:
    """``(L_minus, L_plus)``; the lower edge is the hard edge 0 when d = 1."""
    L_plus = edge_newton(params, "plus").L
    L_minus = edge_newton(params, "minus").L if params.d > 1 else 0.0
    return L_minus, L_plus


def law_derived(z, params: LawParams, N: int) -> LawDerived:
    z = complex(z)
    w = solve_self_consistent(z, params).w
    L_minus, L_plus = support_edges(params)
    E, eta = z.real, z.imag
    beta = (1.0 / (N * eta) if eta > 0 else math.inf) + 1.0 / params.q_t**2
    return LawDerived(
        alpha1=float(w.imag),
        alpha2=complex(dP_dw(w, z, params)),
        beta=beta,
        kappa=min(abs(E - L_minus), abs(E - L_plus)),
    )


def _quad(f, lo, hi, epsabs):
    if hi <= lo:
        return 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, lo, hi, epsabs=epsabs, epsrel=0, limit=200)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"quadrature on [{lo:.6g}, {hi:.6g}] failed: {exc}", bound=math.inf) from None
    return val, err


def integrated_density(E1: float, E2: float, params: LawParams, tol: float = 1e-8) -> float:
    """Mass of the law on ``(E1, E2]``, including the atom at 0 when d > 1."""
    if not E1 < E2:
        raise ParameterError(f"need E1 < E2, got {E1}, {E2}")
    L_minus, L_plus = support_edges(params)
    lo, hi = max(E1, L_minus), min(E2, L_plus)
    total, err = 0.0, 0.0
    if lo < hi:
        mid = 0.5 * (L_minus + L_plus)
        # upper half: E = L_plus - u^2 removes the square-root edge
        a_hi, b_hi = max(lo, mid), hi
        if a_hi < b_hi:
            v, e = _quad(lambda u: 2 * u * _density_unchecked(L_plus - u * u, params),
                         math.sqrt(L_plus - b_hi), math.sqrt(L_plus - a_hi), tol / 4)
            total, err = total + v, err + e
        # lower half: E = L_minus + u^2 (soft edge, or the 1/sqrt(E) hard edge for d = 1)
        a_lo, b_lo = lo, min(hi, mid)
        if a_lo < b_lo:
            v, e = _quad(lambda u: 2 * u * _density_unchecked(L_minus + u * u, params) if u > 0 else 0.0,
                         math.sqrt(a_lo - L_minus), math.sqrt(b_lo - L_minus), tol / 4)
            total, err = total + v, err + e
    if err > tol:
        raise QuadratureError(f"quadrature error estimate {err:.3g} exceeds {tol:.3g}", bound=err)
    if params.d > 1 and E1 < 0 <= E2:
        total += params.a
    return total


def classical_locations(j, N: int, params: LawParams, tol: float = 1e-10):
    """Top-down quantile ``gamma_j`` with ``int_{gamma_j}^{L_plus} rho = j/N``."""
    if np.ndim(j):
        return np.array([classical_locations(int(k), N, params, tol) for k in np.ravel(j)])
    j = int(j)
    if j < 1:
        raise ParameterError("j must be >= 1")
    target = j / N
    ac_mass = 1.0 / params.d
    if target > ac_mass + 1e-12:
        raise ParameterError(f"j/N = {target} exceeds the absolutely continuous mass {ac_mass}")
    L_minus, L_plus = support_edges(params)

    def upper_mass(g):
        if g >= L_plus:
            return 0.0
        u_max = math.sqrt(L_plus - max(g, L_minus))
        val, _ = integrate.quad(lambda u: 2 * u * _density_unchecked(L_plus - u * u, params),
                                0.0, u_max, epsabs=tol / 10, epsrel=0, limit=200)
        return val

    if target >= ac_mass - 1e-12:
        return L_minus
    # solve in u = sqrt(L_plus - gamma), where the mass is smooth
    f = lambda u: upper_mass(L_plus - u * u) - target
    u_hi = math.sqrt(L_plus - L_minus)
    u = optimize.brentq(f, 0.0, u_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    if abs(f(u)) > tol:
        raise ConvergenceError(f"classical location for j={j} missed the mass tolerance")
    return L_plus - u * u
