"""Linearized field equations, surface-layer Gram forms and the complex structure.

Jets are expanded in a local basis: at each point there is one scalar
direction and a list of real variation directions ``dpsi`` acting on the
fermionic columns.  All bilinear surface layer forms are assembled from the
first and second jet derivatives of ``L(x_i, x_j)`` in this basis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .action import Jet, fd_step
from .measure import DiscreteMeasure
from .operators import LagrangianParams, SpacetimePoint, SpecError, lagrangian
from .surface import CutSpec, second_step


class SingularOperatorError(SpecError):
    """Raised when the operator relating the symplectic form to the inner product is singular."""


@dataclass
class JetBasis:
    """Local jet basis: entry ``(k, alpha)`` with ``alpha = 0`` the scalar direction at ``x_k``."""

    n_points: int
    directions: list
    shape: tuple

    @property
    def local_dim(self) -> int:
        return 1 + len(self.directions)

    @property
    def dim(self) -> int:
        return self.n_points * self.local_dim

    def scalar_mask(self) -> np.ndarray:
        m = np.zeros(self.dim, dtype=bool)
        m[:: self.local_dim] = True
        return m

    def index(self, k: int, alpha: int) -> int:
        return k * self.local_dim + alpha

    def to_jet(self, coeffs) -> Jet:
        c = np.asarray(coeffs, dtype=float).reshape(self.n_points, self.local_dim)
        dpsi = np.zeros((self.n_points,) + self.shape, dtype=complex)
        for a, d in enumerate(self.directions):
            dpsi += c[:, a + 1, None, None] * d[None]
        return Jet(c[:, 0], dpsi)


def jet_basis(rho: DiscreteMeasure) -> JetBasis:
    """Canonical basis: unit scalars and elementary real and imaginary entries on the fermionic columns."""
    shape = (2 * rho.spec.n, rho.spec.f)
    dirs = []
    for a in range(shape[0]):
        for k in range(rho.spec.f_fermi):
            for phase in (1.0, 1j):
                d = np.zeros(shape, dtype=complex)
                d[a, k] = phase
                dirs.append(d)
    return JetBasis(len(rho), dirs, shape)


@dataclass
class PairJetData:
    """First and second jet derivatives of ``L(x_i, x_j)`` for all ordered pairs.

    ``g1[i, j, a]`` is the first-slot derivative, ``h11[i, j, a, b]`` the
    second derivative in the first slot and ``h12[i, j, a, b]`` the mixed
    derivative with ``a`` acting on ``x_i`` and ``b`` on ``x_j``.  Index 0 of
    every local axis is the scalar direction.
    """

    L: np.ndarray
    g1: np.ndarray
    h11: np.ndarray
    h12: np.ndarray


def pair_jet_data(rho: DiscreteMeasure, params: LagrangianParams, basis: JetBasis) -> PairJetData:
    N = len(rho)
    m = basis.local_dim
    dirs = basis.directions
    L = np.zeros((N, N))
    g1 = np.zeros((N, N, m))
    h11 = np.zeros((N, N, m, m))
    h12 = np.zeros((N, N, m, m))
    for i in range(N):
        xi = rho.points[i].psi
        h1 = fd_step(xi)
        s1 = second_step(xi)
        for j in range(N):
            xj = rho.points[j].psi
            s2 = second_step(xj)

            def Lf(dx, dy):
                return lagrangian(SpacetimePoint(xi + dx), SpacetimePoint(xj + dy), params)

            L0 = Lf(0, 0)
            L[i, j] = L0
            d1 = np.array([(Lf(h1 * d, 0) - Lf(-h1 * d, 0)) / (2 * h1) for d in dirs])
            d2 = np.array([(Lf(0, fd_step(xj) * d) - Lf(0, -fd_step(xj) * d)) / (2 * fd_step(xj)) for d in dirs])
            g1[i, j, 0] = L0
            g1[i, j, 1:] = d1
            H11 = np.zeros((m, m))
            H11[0, 0] = L0
            H11[0, 1:] = H11[1:, 0] = d1
            for a, da in enumerate(dirs):
                for b in range(a, len(dirs)):
                    db = dirs[b]
                    v = (Lf(s1 * (da + db), 0) - Lf(s1 * (da - db), 0) - Lf(s1 * (db - da), 0)
                         + Lf(-s1 * (da + db), 0)) / (4 * s1 * s1)
                    H11[a + 1, b + 1] = H11[b + 1, a + 1] = v
            H12 = np.zeros((m, m))
            H12[0, 0] = L0
            H12[0, 1:] = d2
            H12[1:, 0] = d1
            for a, da in enumerate(dirs):
                for b, db in enumerate(dirs):
                    H12[a + 1, b + 1] = (Lf(s1 * da, s2 * db) - Lf(s1 * da, -s2 * db) - Lf(-s1 * da, s2 * db)
                                         + Lf(-s1 * da, -s2 * db)) / (4 * s1 * s2)
            h11[i, j] = H11
            h12[i, j] = H12
    return PairJetData(L, g1, h11, h12)


def delta_matrix(rho: DiscreteMeasure, params: LagrangianParams, basis: JetBasis | None = None,
                 data: PairJetData | None = None) -> np.ndarray:
    """Matrix of ``(u, v) -> sum_i rho_i <u, Delta v>(x_i)`` on the jet basis.

    ``<u, Delta v>(x) = nabla_u (sum_j rho_j (nabla_{1,v} + nabla_{2,v}) L(x, x_j) - nabla_v s)``,
    where the outer derivative acts on ``x`` only.
    """
    basis = basis or jet_basis(rho)
    data = data or pair_jet_data(rho, params, basis)
    N, m = len(rho), basis.local_dim
    w = rho.weights
    D = np.zeros((N, m, N, m))
    for k in range(N):
        D[k, :, k, :] += w[k] * np.einsum("j,jab->ab", w, data.h11[k])
        D[k, 0, k, 0] -= w[k] * params.s_vol
        for l in range(N):
            D[k, :, l, :] += w[k] * w[l] * data.h12[k, l]
    return D.reshape(N * m, N * m)


def surface_grams(rho: DiscreteMeasure, cut: CutSpec, basis: JetBasis, data: PairJetData):
    """Matrices of the surface layer inner product and symplectic form on the full jet basis."""
    inside, outside = cut.masks(rho)
    N, m = len(rho), basis.local_dim
    w = rho.weights
    G = np.zeros((N, m, N, m))
    S = np.zeros((N, m, N, m))
    for i in np.flatnonzero(inside):
        for j in np.flatnonzero(outside):
            c = w[i] * w[j]
            G[i, :, i, :] += c * data.h11[i, j]
            G[j, :, j, :] -= c * data.h11[j, i]
            S[i, :, j, :] += c * data.h12[i, j]
            S[j, :, i, :] -= c * data.h12[i, j].T
    return G.reshape(N * m, N * m), S.reshape(N * m, N * m)


@dataclass
class LinSolutionSpace:
    """Null space of the linearized field operator, with surface layer Gram matrices.

    ``basis`` holds coefficient vectors (columns) over the full jet basis.
    ``inner_full``, ``sympl_full`` and ``delta`` act on the full jet basis and
    ``pairing`` is the weight of each basis element in the ``L^2`` pairing.
    """

    basis: np.ndarray
    gram_inner: np.ndarray
    gram_sympl: np.ndarray
    singular_values: np.ndarray
    empty: bool
    delta: np.ndarray | None = None
    inner_full: np.ndarray | None = None
    sympl_full: np.ndarray | None = None
    pairing: np.ndarray | None = None
    jets: JetBasis | None = None

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


def null_space(A: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Right singular vectors with singular value below ``tol * sigma_max``."""
    if A.size == 0:
        return np.eye(A.shape[1]), np.zeros(0)
    u, s, vh = np.linalg.svd(A)
    top = s[0] if len(s) else 0.0
    full = np.zeros(A.shape[1])
    full[: len(s)] = s
    keep = full <= tol * top if top > 0 else np.ones(A.shape[1], dtype=bool)
    return vh[keep].conj().T, full


def lin_solutions(delta: np.ndarray, tol: float = 1e-8, exclude: np.ndarray | None = None,
                  inner_full: np.ndarray | None = None, sympl_full: np.ndarray | None = None,
                  pairing: np.ndarray | None = None, jets: JetBasis | None = None) -> LinSolutionSpace:
    """Numerical null space of ``delta`` over the columns not listed in ``exclude``.

    Scalar jet directions are passed in ``exclude`` so that solutions have no
    scalar component.  When the full-basis Gram matrices are given, the Grams
    of the solution space are filled in.
    """
    delta = np.asarray(delta, dtype=float)
    d = delta.shape[1]
    cols = np.ones(d, dtype=bool) if exclude is None else ~np.asarray(exclude, dtype=bool)
    ns, sv = null_space(delta[:, cols], tol)
    basis = np.zeros((d, ns.shape[1]))
    basis[cols] = ns.real
    gi = basis.T @ inner_full @ basis if inner_full is not None else np.zeros((basis.shape[1],) * 2)
    gs = basis.T @ sympl_full @ basis if sympl_full is not None else np.zeros((basis.shape[1],) * 2)
    return LinSolutionSpace(basis, (gi + gi.T) / 2, (gs - gs.T) / 2, sv, basis.shape[1] == 0,
                            delta, inner_full, sympl_full, pairing, jets)


def linearized_space(rho: DiscreteMeasure, params: LagrangianParams, cut: CutSpec, tol: float = 1e-8,
                     basis: JetBasis | None = None) -> LinSolutionSpace:
    """Convenience wrapper: jet basis, linearized operator, null space and Grams at ``cut``."""
    basis = basis or jet_basis(rho)
    data = pair_jet_data(rho, params, basis)
    D = delta_matrix(rho, params, basis, data)
    G, S = surface_grams(rho, cut, basis, data)
    pairing = np.repeat(rho.weights, basis.local_dim)
    return lin_solutions(D, tol, basis.scalar_mask(), G, S, pairing, basis)


@dataclass
class ComplexStructure:
    T: np.ndarray
    J: np.ndarray
    hol_basis: np.ndarray
    scalar: np.ndarray
    warnings: list = field(default_factory=list)

    def scalar_product(self, u, v, sympl: np.ndarray) -> complex:
        """``(u | v) = sigma(conj(u), J v)`` for complex coefficient vectors."""
        return complex(np.conj(u) @ sympl @ (self.J @ v))


def complex_structure(space_or_grams, gram_sympl: np.ndarray | None = None, floor: float = 1e-12) -> ComplexStructure:
    """Complex structure from the inner product and symplectic Gram matrices.

    ``T`` is defined by ``sigma(u, v) = (u, T v)``, i.e. ``T = G^{-1} S``, and
    ``J = -(-T^2)^{-1/2} T``.  The square root is taken by a symmetric eigen
    decomposition in coordinates orthonormal for ``G``.  The call aborts if
    ``G`` is not positive definite or if ``-T^2`` has an eigenvalue below
    ``floor`` relative to its largest one.  The holomorphic basis spans the
    ``+i`` eigenspace of ``J`` and is orthonormal for ``(u | v) = sigma(u, J v)``.
    """
    if gram_sympl is None:
        G = np.asarray(space_or_grams.gram_inner, dtype=float)
        S = np.asarray(space_or_grams.gram_sympl, dtype=float)
    else:
        G = np.asarray(space_or_grams, dtype=float)
        S = np.asarray(gram_sympl, dtype=float)
    d = G.shape[0]
    if d == 0:
        raise SingularOperatorError("empty solution space: no complex structure")
    if d % 2:
        raise SingularOperatorError(f"odd dimension {d}: the symplectic operator is singular")
    G = (G + G.T) / 2
    S = (S - S.T) / 2
    gev, gvec = np.linalg.eigh(G)
    if gev[0] <= floor * max(gev[-1], 0.0) or gev[-1] <= 0:
        raise SingularOperatorError(f"inner product is not positive definite (min eigenvalue {gev[0]:.3e})")
    Lh = gvec * np.sqrt(gev)
    Lhi = (gvec / np.sqrt(gev)).T
    A = Lhi @ S @ Lhi.T
    A = (A - A.T) / 2
    mu, V = np.linalg.eigh(A.T @ A)
    top = mu[-1]
    if top <= 0 or mu[0] <= floor * top:
        raise SingularOperatorError(
            f"symplectic operator is singular: eigenvalues of -T^2 range from {mu[0]:.3e} to {top:.3e}"
        )
    inv_abs = (V / np.sqrt(mu)) @ V.T
    Jw = -inv_abs @ A
    J = Lhi.T @ Jw @ Lh.T
    T = np.linalg.solve(G, S)
    ev, evec = np.linalg.eig(J)
    hol = evec[:, np.abs(ev - 1j) < 1e-6]
    if hol.shape[1] != d // 2:
        raise SingularOperatorError("complex structure has unbalanced eigenspaces")
    M = hol.conj().T @ S @ J @ hol
    M = (M + M.conj().T) / 2
    w, U = np.linalg.eigh(M)
    warnings = []
    if w[0] <= 0:
        warnings.append(f"holomorphic scalar product not positive (min eigenvalue {w[0]:.3e})")
        w = np.abs(w)
    hol = hol @ (U / np.sqrt(w))
    scalar = hol.conj().T @ S @ J @ hol
    return ComplexStructure(T, J, hol, scalar, warnings)


def positive_symplectic_reduction(G: np.ndarray, S: np.ndarray, rel: float = 1e-8) -> np.ndarray:
    """Subspace on which ``G`` is positive definite and ``S`` is non-degenerate.

    First the span of the eigenvectors of ``G`` with eigenvalue above
    ``rel * max|eig|`` is taken.  On it, the radical of ``S`` is split off
    by passing to its ``G``-orthogonal complement, where the restricted
    antisymmetric form is non-degenerate.  Columns of the result are real
    coefficient vectors over the original basis.
    """
    G = (np.asarray(G, dtype=float) + np.asarray(G, dtype=float).T) / 2
    S = (np.asarray(S, dtype=float) - np.asarray(S, dtype=float).T) / 2
    ev, V = np.linalg.eigh(G)
    top = float(np.max(np.abs(ev))) if len(ev) else 0.0
    if top == 0.0:
        return np.zeros((G.shape[0], 0))
    P = V[:, ev > rel * top]
    if P.shape[1] == 0:
        return P
    Sp = P.T @ S @ P
    _, s, vh = np.linalg.svd(Sp)
    if s[0] == 0.0:
        return np.zeros((G.shape[0], 0))
    rank = int(np.sum(s > rel * s[0]))
    rad = vh[rank:].T
    if rad.shape[1] == 0:
        return P
    Gp = P.T @ G @ P
    comp = np.linalg.svd((Gp @ rad).T)[2][rad.shape[1]:].T
    return P @ comp


@dataclass
class VerificationReport:
    residual: float
    delta_residual: float
    passed: bool


def verify_green(space: LinSolutionSpace, G: np.ndarray, duals, tol: float = 1e-6) -> VerificationReport:
    """Check ``sigma(G u, G v) = <u, G v>`` on pairs of dual jets.

    ``G`` maps dual coefficient vectors to jet coefficient vectors on the full
    basis.  The right side uses the weighted pairing of the basis.  The
    residual of ``Delta G u`` is reported separately, since ``G`` must map into
    the solution space.
    """
    G = np.asarray(G, dtype=float)
    S = space.sympl_full
    d = S.shape[0]
    if G.shape != (d, d):
        raise SpecError(f"G must have shape {(d, d)}, got {G.shape}")
    W = space.pairing if space.pairing is not None else np.ones(d)
    duals = [np.asarray(u, dtype=float) for u in duals]
    res = 0.0
    for u in duals:
        for v in duals:
            lhs = (G @ u) @ S @ (G @ v)
            rhs = u @ (W * (G @ v))
            res = max(res, abs(lhs - rhs))
    dres = 0.0
    if space.delta is not None:
        dres = max((float(np.linalg.norm(space.delta @ (G @ u))) for u in duals), default=0.0)
    return VerificationReport(res, dres, res < tol and dres < tol)


def frame_to_wave(rho: DiscreteMeasure, frames: np.ndarray):
    """Wave function whose spin-frame coordinates are ``frames`` (regular points)."""
    from .wavefunc import WaveFunction

    vals = []
    for p, a in zip(rho.points, frames):
        vals.append(np.linalg.pinv(p.psi) @ a)
    return WaveFunction(np.array(vals))


def extended_matrix(rho: DiscreteMeasure, t: float, Q: np.ndarray) -> np.ndarray:
    """Hermitian matrix of the extended scalar product in spin-frame coordinates."""
    om = rho.omega(t)
    N, m = Q.shape[0], Q.shape[2]
    s = rho.points[0].sig
    w = rho.weights
    E = np.zeros((N, m, N, m), dtype=complex)
    for i in range(N):
        for j in range(N):
            if om[i] != om[j]:
                sign = 1.0 if om[i] else -1.0
                E[i, :, j, :] = -2j * sign * w[i] * w[j] * (s[:, None] * Q[i, j])
    return E.reshape(N * m, N * m)


def krein_matrix(rho: DiscreteMeasure) -> np.ndarray:
    s = rho.points[0].sig
    return np.diag(np.kron(rho.weights, s)).astype(complex)


def verify_k(rho: DiscreteMeasure, k: np.ndarray, cut: CutSpec, params: LagrangianParams,
             tests=None, Q: np.ndarray | None = None, tol: float = 1e-6, seed: int = 0) -> VerificationReport:
    """Check ``<k eta | k eta'>^t = <eta | k eta'>`` on a test set.

    Wave functions are given by their spin-frame coordinates, flattened to
    vectors of length ``N * 2n``, and ``k`` acts on these vectors.  Without
    ``tests`` a seeded set of random vectors is used.
    """
    from .wavefunc import q_matrix

    N, m = len(rho), 2 * rho.spec.n
    k = np.asarray(k, dtype=complex)
    if k.shape != (N * m, N * m):
        raise SpecError(f"k must have shape {(N * m, N * m)}, got {k.shape}")
    if Q is None:
        Q = q_matrix(rho, params)
    E = extended_matrix(rho, cut.t, Q)
    K = krein_matrix(rho)
    if tests is None:
        rng = np.random.default_rng(seed)
        tests = [rng.standard_normal(N * m) + 1j * rng.standard_normal(N * m) for _ in range(6)]
    res = 0.0
    for a in tests:
        for b in tests:
            lhs = np.vdot(k @ a, E @ (k @ b))
            rhs = np.vdot(a, K @ (k @ b))
            res = max(res, abs(lhs - rhs))
    return VerificationReport(float(res), 0.0, res < tol)
