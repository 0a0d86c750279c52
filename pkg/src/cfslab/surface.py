"""Surface layer integrals across a time cut.

Jet derivatives of the Lagrangian are taken in a single slot.  For a jet
``v = (b, dpsi)`` the first-slot derivative of ``L(x_i, x_j)`` is
``b_i L + d/dtau L(psi_i + tau dpsi_i, psi_j)`` and the second-slot derivative
acts on ``x_j`` in the same way.  Second derivatives do not differentiate the
jet coefficients, so derivatives in the same slot commute.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .action import Jet, check_jet, fd_step
from .measure import DiscreteMeasure, InteractionMap, RegionMask, conjugate_point, correlation_measure, push_forward
from .operators import (
    LagrangianParams,
    SpacetimePoint,
    SpecError,
    _sorted_truncated,
    eigvals_checked,
    lagrangian,
    lagrangian_from_spectrum,
    product_spectrum,
    spectral_weight,
)


@dataclass(frozen=True)
class CutSpec:
    t: float
    region: RegionMask | None = None

    def masks(self, rho: DiscreteMeasure):
        """Boolean masks ``(Omega ∩ V, complement ∩ V)``."""
        om = rho.omega(self.t)
        v = np.ones(len(rho), dtype=bool) if self.region is None else np.asarray(self.region.member, dtype=bool)
        if len(v) != len(rho):
            raise SpecError("region mask length differs from measure length")
        return om & v, ~om & v


def second_step(psi: np.ndarray) -> float:
    """Step for nested differences, balancing truncation and roundoff."""
    return 1e-4 * (1.0 + float(np.linalg.norm(psi)))


class _PairDerivatives:
    """Finite-difference jet derivatives of ``L(x, y)`` for one ordered pair."""

    def __init__(self, x: SpacetimePoint, y: SpacetimePoint, params: LagrangianParams):
        self.x = x.psi
        self.y = y.psi
        self.params = params
        self.h1 = fd_step(x.psi)
        self.h2 = fd_step(y.psi)
        self.L0 = lagrangian(x, y, params)

    def L(self, dx, dy):
        return lagrangian(SpacetimePoint(self.x + dx), SpacetimePoint(self.y + dy), self.params)

    def d1(self, d):
        h = self.h1
        return (self.L(h * d, 0) - self.L(-h * d, 0)) / (2 * h)

    def d2(self, d):
        h = self.h2
        return (self.L(0, h * d) - self.L(0, -h * d)) / (2 * h)

    def _mixed(self, f, h, k):
        return (f(h, k) - f(h, -k) - f(-h, k) + f(-h, -k)) / (4 * h * k)

    def d1d2(self, du, dv):
        return self._mixed(lambda s, t: self.L(s * du, t * dv), second_step(self.x), second_step(self.y))

    def d1d1(self, du, dv):
        h = second_step(self.x)
        return self._mixed(lambda s, t: self.L(s * du + t * dv, 0), h, h)

    def d2d2(self, du, dv):
        h = second_step(self.y)
        return self._mixed(lambda s, t: self.L(0, s * du + t * dv), h, h)


def _cross_pairs(rho: DiscreteMeasure, cut: CutSpec):
    inside, outside = cut.masks(rho)
    for i in np.flatnonzero(inside):
        for j in np.flatnonzero(outside):
            yield int(i), int(j)


def one_form(rho: DiscreteMeasure, jet: Jet, cut: CutSpec, params: LagrangianParams) -> float:
    """``sum_{i in Omega, j not in Omega} rho_i rho_j (nabla_1 - nabla_2) L(x_i, x_j)``."""
    check_jet(rho, jet)
    w = rho.weights
    total = 0.0
    for i, j in _cross_pairs(rho, cut):
        pd = _PairDerivatives(rho.points[i], rho.points[j], params)
        n1 = jet.scalar[i] * pd.L0 + (pd.d1(jet.dpsi[i]) if np.any(jet.dpsi[i]) else 0.0)
        n2 = jet.scalar[j] * pd.L0 + (pd.d2(jet.dpsi[j]) if np.any(jet.dpsi[j]) else 0.0)
        total += w[i] * w[j] * (n1 - n2)
    return float(total)


def _second(pd: _PairDerivatives, a, da, sa, b, db, sb, L0):
    """``nabla_{sa, a} nabla_{sb, b} L`` for slots ``sa, sb`` in ``{1, 2}``."""
    first = {1: pd.d1, 2: pd.d2}
    Du = first[sa](da) if np.any(da) else 0.0
    Dv = first[sb](db) if np.any(db) else 0.0
    if np.any(da) and np.any(db):
        if sa == sb == 1:
            Duv = pd.d1d1(da, db)
        elif sa == sb == 2:
            Duv = pd.d2d2(da, db)
        elif sa == 1:
            Duv = pd.d1d2(da, db)
        else:
            Duv = pd.d1d2(db, da)
    else:
        Duv = 0.0
    return a * b * L0 + a * Dv + b * Du + Duv


def symplectic(rho: DiscreteMeasure, ju: Jet, jv: Jet, cut: CutSpec, params: LagrangianParams) -> float:
    """``sum rho_i rho_j (nabla_{1,u} nabla_{2,v} - nabla_{2,u} nabla_{1,v}) L`` across the cut."""
    check_jet(rho, ju)
    check_jet(rho, jv)
    w = rho.weights
    total = 0.0
    for i, j in _cross_pairs(rho, cut):
        pd = _PairDerivatives(rho.points[i], rho.points[j], params)
        t1 = _second(pd, ju.scalar[i], ju.dpsi[i], 1, jv.scalar[j], jv.dpsi[j], 2, pd.L0)
        t2 = _second(pd, ju.scalar[j], ju.dpsi[j], 2, jv.scalar[i], jv.dpsi[i], 1, pd.L0)
        total += w[i] * w[j] * (t1 - t2)
    return float(total)


def sl_inner(rho: DiscreteMeasure, ju: Jet, jv: Jet, cut: CutSpec, params: LagrangianParams) -> float:
    """``sum rho_i rho_j (nabla_{1,u} nabla_{1,v} - nabla_{2,u} nabla_{2,v}) L`` across the cut."""
    check_jet(rho, ju)
    check_jet(rho, jv)
    w = rho.weights
    total = 0.0
    for i, j in _cross_pairs(rho, cut):
        pd = _PairDerivatives(rho.points[i], rho.points[j], params)
        t1 = _second(pd, ju.scalar[i], ju.dpsi[i], 1, jv.scalar[i], jv.dpsi[i], 1, pd.L0)
        t2 = _second(pd, ju.scalar[j], ju.dpsi[j], 2, jv.scalar[j], jv.dpsi[j], 2, pd.L0)
        total += w[i] * w[j] * (t1 - t2)
    return float(total)


def _check_map(rho: DiscreteMeasure, fmap: InteractionMap):
    if len(fmap.target) != len(rho):
        raise SpecError("map length differs from measure length")


def _conj(points, U):
    if U is None:
        return list(points)
    return [conjugate_point(p, U) for p in points]


def gamma_localized(rhotil, rho: DiscreteMeasure, fmap: InteractionMap, cut: CutSpec,
                    params: LagrangianParams, U=None) -> float:
    """Nonlinear surface layer integral restricted to the region of ``cut``.

    ``sum_{i in Omega∩V, j in Omega^c∩V} rho_i rho_j
    [f_i L(F x_i, U x_j U^-1) - L(U x_i U^-1, F x_j) f_j]``.
    """
    _check_map(rho, fmap)
    inside, outside = cut.masks(rho)
    ux = _conj(rho.points, U)
    w, f, F = rho.weights, fmap.fweight, fmap.target
    total = 0.0
    for i in np.flatnonzero(inside):
        for j in np.flatnonzero(outside):
            total += w[i] * w[j] * (f[i] * lagrangian(F[i], ux[j], params) - lagrangian(ux[i], F[j], params) * f[j])
    return float(total)


def gamma_nonlinear(rhotil, rho: DiscreteMeasure, fmap: InteractionMap, cut: CutSpec,
                    params: LagrangianParams, U=None) -> float:
    """Nonlinear surface layer integral ``gamma^t(rhotil, U rho)`` over the whole cut."""
    return gamma_localized(rhotil, rho, fmap, CutSpec(cut.t, None), params, U)


def t_functional(rhotil, rho: DiscreteMeasure, fmap: InteractionMap, cut: CutSpec,
                 params: LagrangianParams, U=None) -> float:
    """Same-side sum ``rho_i rho_j f_i |F(x_i) . U x_j U^-1|^2`` over both sides of the cut in ``V``."""
    _check_map(rho, fmap)
    inside, outside = cut.masks(rho)
    ux = _conj(rho.points, U)
    w, f, F = rho.weights, fmap.fweight, fmap.target
    total = 0.0
    for side in (inside, outside):
        idx = np.flatnonzero(side)
        for i in idx:
            for j in idx:
                total += w[i] * w[j] * f[i] * spectral_weight(product_spectrum(F[i], ux[j], params)) ** 2
    return float(total)


def general_lagrangian(A: np.ndarray, B: np.ndarray, n: int, params: LagrangianParams) -> float:
    """Lagrangian of the ``f x f`` product ``A B`` of possibly non-selfadjoint operators."""
    lam = _sorted_truncated(eigvals_checked(A @ B), 2 * n, params.eps_rank).lambdas
    return lagrangian_from_spectrum(lam, n, params.kappa)


def gamma_refined(rhotil, rho: DiscreteMeasure, fmap: InteractionMap, cut: CutSpec,
                  params: LagrangianParams, Ult, Ugt) -> float:
    """Two-unitary surface layer integral with ``U_> x U_<^{-1}`` in place of ``U x U^{-1}``."""
    _check_map(rho, fmap)
    Ult = np.asarray(Ult, dtype=complex)
    Ugt = np.asarray(Ugt, dtype=complex)
    inside, outside = cut.masks(rho)
    n = rho.spec.n
    ux = [Ugt @ p.op @ Ult.conj().T for p in rho.points]
    Fop = [p.op for p in fmap.target]
    w, f = rho.weights, fmap.fweight
    total = 0.0
    for i in np.flatnonzero(inside):
        for j in np.flatnonzero(outside):
            total += w[i] * w[j] * (
                f[i] * general_lagrangian(Fop[i], ux[j], n, params)
                - general_lagrangian(ux[i], Fop[j], n, params) * f[j]
            )
    return float(total)


def gamma_subset(rho: DiscreteMeasure, fmap: InteractionMap, subset, params: LagrangianParams) -> float:
    """Generalized surface layer sum for an arbitrary index subset ``Omega``."""
    subset = np.asarray(subset, dtype=bool)
    w, f, F = rho.weights, fmap.fweight, fmap.target
    total = 0.0
    for i in np.flatnonzero(subset):
        for j in np.flatnonzero(~subset):
            total += w[i] * w[j] * (f[i] * lagrangian(F[i], rho.points[j], params)
                                    - lagrangian(rho.points[i], F[j], params) * f[j])
    return float(total)


@dataclass
class ConservationReport:
    nu: np.ndarray
    nu_tilde: np.ndarray
    max_discrepancy: float
    max_identity_error: float
    subsets_checked: int
    passed: bool


def conservation_check(rhotil, rho: DiscreteMeasure, fmap: InteractionMap, params: LagrangianParams,
                       tol: float = 1e-9, max_exhaustive: int = 12, seed: int = 0) -> ConservationReport:
    """Compare the subset sums with the correlation-measure difference ``(nu_tilde - nu)(Omega)``.

    All subsets are tested when the measure has at most ``max_exhaustive``
    points; otherwise 256 seeded random subsets are used.
    """
    _check_map(rho, fmap)
    rt = push_forward(rho, fmap)
    nu, nut = correlation_measure(rho, rt, params)
    N = len(rho)
    if N <= max_exhaustive:
        family = [np.array(bits, dtype=bool) for bits in itertools.product([False, True], repeat=N)]
    else:
        rng = np.random.default_rng(seed)
        family = [rng.random(N) < 0.5 for _ in range(256)]
    err = 0.0
    for om in family:
        g = gamma_subset(rho, fmap, om, params)
        err = max(err, abs(g - float(np.sum((nut - nu)[om]))))
    return ConservationReport(nu, nut, float(np.max(np.abs(nu - nut))) if N else 0.0, err, len(family), err <= tol)
