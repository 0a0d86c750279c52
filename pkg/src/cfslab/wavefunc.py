"""Wave functions on spin spaces, the kernels P and Q, and the extended scalar product.

Vectors of a spin space ``S_x = range(op(x))`` are stored as vectors in ``H``.
The spin frame of a point is ``C^{2n}`` with the inner product ``a^H sig b``;
the frame coordinates of ``v`` in ``S_x`` are ``psi_x v``, and in these
coordinates the spin inner product ``-<u | op v>`` becomes ``(psi u)^H sig (psi v)``.
Kernels such as ``P(x, y) = psi_x psi_y^H sig`` map the frame of ``y`` to
that of ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measure import DiscreteMeasure
from .operators import (
    LagrangianParams,
    SpacetimePoint,
    SpecError,
    kernel_P,
    lagrangian_from_spectrum,
    _sorted_truncated,
    eigvals_checked,
)

__all__ = [
    "WaveFunction",
    "range_projector",
    "physical_wave",
    "spin_product",
    "kernel_P",
    "spin_adjoint",
    "kernel_Q",
    "q_matrix",
    "ExtendedBasis",
    "lagrangian_of_kernel",
    "QResult",
    "krein_product",
    "extended_product",
    "elq_residual",
    "extended_space_basis",
]


def range_projector(p: SpacetimePoint, eps_rank: float = 1e-10) -> np.ndarray:
    """Orthogonal projector onto ``range(op)``."""
    w, v = np.linalg.eigh(p.op)
    top = np.max(np.abs(w)) if len(w) else 0.0
    keep = np.abs(w) > eps_rank * top if top > 0 else np.zeros(len(w), dtype=bool)
    vk = v[:, keep]
    return vk @ vk.conj().T


@dataclass(frozen=True, eq=False)
class WaveFunction:
    """Values ``psi(x_i)`` in ``H`` with each value in the spin space of ``x_i``."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.array(self.values, dtype=complex))

    @classmethod
    def checked(cls, values, rho: DiscreteMeasure, tol: float = 1e-10) -> "WaveFunction":
        values = np.array(values, dtype=complex)
        for v, p in zip(values, rho.points):
            off = v - range_projector(p) @ v
            if np.linalg.norm(off) > tol * max(np.linalg.norm(v), 1e-300):
                raise SpecError("wave function value lies outside the spin space")
        return cls(values)

    def frames(self, rho: DiscreteMeasure) -> np.ndarray:
        """Spin-frame coordinates ``psi_i v_i``, shape ``(N, 2n)``."""
        return np.einsum("iak,ik->ia", rho.psi_stack(), self.values)

    def __add__(self, other):
        return WaveFunction(self.values + other.values)

    def __mul__(self, c):
        return WaveFunction(c * self.values)

    __rmul__ = __mul__


def physical_wave(u, rho: DiscreteMeasure) -> WaveFunction:
    """``psi^u(x_i) = pi_{x_i} u`` with ``pi_x`` the projector onto ``range(op(x))``."""
    u = np.asarray(u, dtype=complex)
    return WaveFunction(np.array([range_projector(p) @ u for p in rho.points]))


def spin_product(psi_val, phi_val, x: SpacetimePoint, tol: float = 1e-10) -> complex:
    """``-<psi | op(x) phi>``."""
    psi_val = np.asarray(psi_val, dtype=complex)
    phi_val = np.asarray(phi_val, dtype=complex)
    pi = range_projector(x)
    for v in (psi_val, phi_val):
        if np.linalg.norm(v - pi @ v) > tol * max(np.linalg.norm(v), 1.0):
            raise SpecError("value lies outside the spin space")
    return complex(-np.vdot(psi_val, x.op @ phi_val))


def spin_adjoint(A: np.ndarray, n: int) -> np.ndarray:
    """Adjoint with respect to the spin inner products: ``sig A^H sig``."""
    s = np.concatenate([np.ones(n), -np.ones(n)])
    return (s[:, None] * A.conj().T) * s[None, :]


def lagrangian_of_kernel(P: np.ndarray, n: int, params: LagrangianParams) -> float:
    """``L_kappa`` as a function of ``P(x, y)`` alone, using ``P(y, x) = P(x, y)^*``."""
    chain = P @ spin_adjoint(P, n)
    lam = _sorted_truncated(eigvals_checked(chain), 2 * n, params.eps_rank).lambdas
    return lagrangian_from_spectrum(lam, n, params.kappa)


@dataclass
class QResult:
    Q: np.ndarray
    smooth: bool
    gap: float


def kernel_Q(x: SpacetimePoint, y: SpacetimePoint, rho: DiscreteMeasure | None = None,
             params: LagrangianParams | None = None, h: float | None = None) -> QResult:
    """First-variation kernel ``Q(x, y)`` of the Lagrangian with respect to ``P(x, y)``.

    Each entry of the gradient of ``L`` with respect to the real and imaginary
    parts of ``P`` is obtained by Richardson-extrapolated central differences,
    and ``Q = sig G sig / 2`` where ``G`` collects the complex gradient.  The
    difference between the two extrapolation levels is returned as ``gap``;
    ``smooth`` is false when it exceeds ``1e-6`` relative, which signals an
    eigenvalue crossing near ``P``.
    """
    params = params or LagrangianParams(n=x.n)
    n = x.n
    P = kernel_P(x, y)
    step = h if h is not None else 1e-4 * (1.0 + np.linalg.norm(P))

    def L(M):
        return lagrangian_of_kernel(M, n, params)

    def grad(hh):
        G = np.zeros_like(P)
        for a in range(2 * n):
            for b in range(2 * n):
                for unit in (1.0, 1j):
                    E = np.zeros_like(P)
                    E[a, b] = unit * hh
                    d = (L(P + E) - L(P - E)) / (2 * hh)
                    G[a, b] += d * unit
        return G

    g1 = grad(step)
    g2 = grad(step / 2)
    G = (4 * g2 - g1) / 3
    gap = float(np.max(np.abs(g2 - g1)))
    scale = max(1.0, float(np.max(np.abs(G))))
    s = x.sig
    Q = (s[:, None] * G * s[None, :]) / 2
    return QResult(Q, gap <= 1e-6 * scale, gap)


def q_matrix(rho: DiscreteMeasure, params: LagrangianParams) -> np.ndarray:
    """All kernels ``Q(x_i, x_j)`` as an array of shape ``(N, N, 2n, 2n)``."""
    N = len(rho)
    m = 2 * rho.spec.n
    out = np.zeros((N, N, m, m), dtype=complex)
    for i in range(N):
        for j in range(N):
            out[i, j] = kernel_Q(rho.points[i], rho.points[j], rho, params).Q
    return out


def krein_product(eta: WaveFunction, etap: WaveFunction, rho: DiscreteMeasure) -> complex:
    """``sum_i rho_i <eta(x_i) | eta'(x_i)>_{x_i}`` with the spin inner product."""
    a = eta.frames(rho)
    b = etap.frames(rho)
    s = rho.points[0].sig if len(rho) else np.zeros(0)
    return complex(np.sum(rho.weights * np.einsum("ia,a,ia->i", a.conj(), s, b)))


def extended_product(psi: WaveFunction, phi: WaveFunction, rho: DiscreteMeasure, t: float,
                     params: LagrangianParams, Q: np.ndarray | None = None) -> complex:
    """Time-``t`` scalar product built from the kernel ``Q`` across the cut at ``t``.

    ``-2i [sum_{i in Omega, j not in Omega} - sum_{i not in Omega, j in Omega}]
    rho_i rho_j <psi(x_i) | Q(x_i, x_j) phi(x_j)>``.  The dynamical kernel is
    taken to be the first-variation kernel ``Q``.
    """
    omega = rho.omega(t)
    if Q is None:
        Q = q_matrix(rho, params)
    a = psi.frames(rho)
    b = phi.frames(rho)
    s = rho.points[0].sig
    w = rho.weights
    total = 0j
    for i in range(len(rho)):
        for j in range(len(rho)):
            if omega[i] == omega[j]:
                continue
            sign = 1.0 if omega[i] else -1.0
            total += sign * w[i] * w[j] * np.vdot(a[i], s * (Q[i, j] @ b[j]))
    return complex(-2j * total)


def elq_residual(rho: DiscreteMeasure, params: LagrangianParams, fit_r: bool = True,
                 Q: np.ndarray | None = None) -> tuple[float, float]:
    """Residual of ``sum_j rho_j Q(x_i, x_j) Psi(x_j) phi = r Psi(x_i) phi`` on ``H^f``.

    Returns the maximum Euclidean norm over points and basis vectors ``phi`` of
    ``H^f`` together with the value of ``r`` used.  With ``fit_r`` the trace
    multiplier is fitted by least squares; otherwise ``params.r_trace`` is used.
    """
    if Q is None:
        Q = q_matrix(rho, params)
    psi = rho.psi_stack()[:, :, : rho.spec.f_fermi]
    lhs = np.einsum("j,ijab,jbk->iak", rho.weights, Q, psi)
    if fit_r:
        denom = float(np.sum(np.abs(psi) ** 2))
        r = float(np.real(np.vdot(psi, lhs)) / denom) if denom > 0 else 0.0
    else:
        r = params.r_trace
    res = lhs - r * psi
    return float(np.max(np.linalg.norm(res, axis=1))), r


@dataclass
class ExtendedBasis:
    basis: np.ndarray
    gram: np.ndarray
    eigenvalues: np.ndarray
    positive_semidefinite: bool
    reconstruction_error: float


def extended_space_basis(rho: DiscreteMeasure, t: float, candidates, params: LagrangianParams,
                         tol: float = 1e-10, Q: np.ndarray | None = None) -> ExtendedBasis:
    """Orthonormal basis of the quotient of the candidate span by null directions.

    The Gram matrix ``G_kl = <c_k | c_l>^t`` is diagonalized.  Directions with
    eigenvalue below ``tol * max|eig|`` are dropped; the columns of ``basis``
    are coefficient vectors ``c = v / sqrt(mu)`` over the candidates, so that
    ``c^H G c'`` is the identity on the kept space.  Negative eigenvalues above
    tolerance set ``positive_semidefinite`` to false and are dropped as well.
    """
    k = len(candidates)
    if k == 0:
        return ExtendedBasis(np.zeros((0, 0), dtype=complex), np.zeros((0, 0)), np.zeros(0), True, 0.0)
    if Q is None:
        Q = q_matrix(rho, params)
    G = np.array([[extended_product(a, b, rho, t, params, Q) for b in candidates] for a in candidates])
    Gh = (G + G.conj().T) / 2
    mu, v = np.linalg.eigh(Gh)
    top = float(np.max(np.abs(mu))) if k else 0.0
    if top == 0.0:
        return ExtendedBasis(np.zeros((k, 0), dtype=complex), G, mu, True, float(np.linalg.norm(G)))
    psd = bool(np.min(mu) >= -tol * top)
    keep = mu > tol * top
    basis = v[:, keep] / np.sqrt(mu[keep])
    recon = (v * mu) @ v.conj().T
    return ExtendedBasis(basis, G, mu, psd, float(np.linalg.norm(recon - G)))
