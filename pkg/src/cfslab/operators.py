"""Spacetime points, eigenvalues of operator products and the causal Lagrangian.

A spacetime point is stored through its local wave evaluation ``psi``, a
complex ``2n x f`` matrix.  With the signature ``sig = diag(+1 (n times),
-1 (n times))`` the associated operator on the ``f``-dimensional Hilbert space
is ``op = -psi^H sig psi``.  This representation bounds the rank by ``2n`` and
the number of positive and negative eigenvalues by ``n`` each, by construction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class SpecError(ValueError):
    """Raised when inputs violate a structural precondition."""


@dataclass(frozen=True)
class HilbertSpec:
    """Dimensions of the Hilbert space.

    Attributes
    ----------
    f : int
        Dimension of the Hilbert space ``H``.
    n : int
        Spin dimension; every point has rank at most ``2n``.
    f_fermi : int
        Dimension of the fermionic subspace ``H^f``, identified with the first
        ``f_fermi`` coordinates.
    """

    f: int
    n: int
    f_fermi: int

    def __post_init__(self):
        if self.f < 1 or self.n < 1:
            raise SpecError("f and n must be positive")
        if self.f < 2 * self.n:
            raise SpecError(f"need f >= 2n, got f={self.f}, n={self.n}")
        if not 0 < self.f_fermi <= self.f:
            raise SpecError(f"need 0 < f_fermi <= f, got {self.f_fermi}")


@dataclass(frozen=True)
class LagrangianParams:
    """Parameters of the causal Lagrangian and numerical thresholds."""

    n: int = 1
    kappa: float = 0.0
    c: float = 1.0
    s_vol: float = 0.0
    r_trace: float = 0.0
    eps_rank: float = 1e-10
    eps_causal: float = 1e-8

    def __post_init__(self):
        if self.kappa < 0:
            raise SpecError("kappa must be non-negative")
        if self.c == 0:
            raise SpecError("trace constant c must be nonzero")
        for name in ("eps_rank", "eps_causal"):
            v = getattr(self, name)
            if not 0 < v <= 1e-2:
                raise SpecError(f"{name} must lie in (0, 1e-2], got {v}")

    def replace(self, **kw) -> "LagrangianParams":
        d = dict(self.__dict__)
        d.update(kw)
        return LagrangianParams(**d)


def signature(n: int) -> np.ndarray:
    """Diagonal signature ``diag(+1 x n, -1 x n)`` as a real vector."""
    return np.concatenate([np.ones(n), -np.ones(n)])


@dataclass(frozen=True, eq=False)
class SpacetimePoint:
    """A point given by its wave evaluation matrix ``psi`` of shape ``(2n, f)``."""

    psi: np.ndarray
    n: int = field(default=0)

    def __post_init__(self):
        psi = np.array(self.psi, dtype=complex)
        if psi.ndim != 2 or psi.shape[0] % 2:
            raise SpecError(f"psi must have shape (2n, f), got {psi.shape}")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "n", psi.shape[0] // 2)

    @property
    def f(self) -> int:
        return self.psi.shape[1]

    @property
    def sig(self) -> np.ndarray:
        return signature(self.n)

    @property
    def op(self) -> np.ndarray:
        """The Hermitian operator ``-psi^H sig psi`` on ``H``."""
        psi = self.psi
        return -(psi.conj().T * self.sig) @ psi

    def adjoint_psi(self) -> np.ndarray:
        """The map ``Psi^*: S -> H`` given by ``psi^H sig``."""
        return self.psi.conj().T * self.sig

    def is_regular(self, eps_rank: float = 1e-10) -> bool:
        """True if ``op`` has exactly ``n`` positive and ``n`` negative eigenvalues."""
        w = np.linalg.eigvalsh(self.op)
        scale = max(np.max(np.abs(w)), 0.0)
        if scale == 0.0:
            return False
        thr = eps_rank * scale
        return int(np.sum(w > thr)) == self.n and int(np.sum(w < -thr)) == self.n

    def with_psi(self, psi) -> "SpacetimePoint":
        return SpacetimePoint(psi)


def point_from_operator(op, n: int, tol: float = 1e-12) -> SpacetimePoint:
    """Build a point whose operator equals the Hermitian matrix ``op``.

    Positive eigenvalues are placed in the rows carrying signature ``-1`` and
    negative eigenvalues in the rows carrying ``+1``.  Unused rows are zero.
    """
    op = np.asarray(op, dtype=complex)
    if op.shape[0] != op.shape[1]:
        raise SpecError("operator must be square")
    if np.linalg.norm(op - op.conj().T) > 1e-12 * max(1.0, np.linalg.norm(op)):
        raise SpecError("operator must be Hermitian")
    f = op.shape[0]
    w, v = np.linalg.eigh(op)
    scale = max(np.max(np.abs(w)), 1.0)
    pos = [k for k in np.argsort(-w) if w[k] > tol * scale]
    neg = [k for k in np.argsort(w) if w[k] < -tol * scale]
    if len(pos) > n or len(neg) > n:
        raise SpecError(
            f"operator has {len(pos)} positive and {len(neg)} negative eigenvalues; at most {n} each allowed"
        )
    psi = np.zeros((2 * n, f), dtype=complex)
    for row, k in enumerate(neg):
        psi[row] = np.sqrt(-w[k]) * v[:, k].conj()
    for row, k in enumerate(pos):
        psi[n + row] = np.sqrt(w[k]) * v[:, k].conj()
    return SpacetimePoint(psi)


def random_point(rng: np.random.Generator, f: int, n: int, scale: float = 1.0) -> SpacetimePoint:
    """A generic point with complex Gaussian wave evaluation (regular almost surely)."""
    psi = rng.standard_normal((2 * n, f)) + 1j * rng.standard_normal((2 * n, f))
    return SpacetimePoint(scale * psi / np.sqrt(2 * f))


@dataclass(frozen=True)
class EigenData:
    """The ``2n`` nontrivial eigenvalues, sorted by non-increasing modulus."""

    lambdas: np.ndarray

    @property
    def moduli(self) -> np.ndarray:
        return np.abs(self.lambdas)


def kernel_P(x: SpacetimePoint, y: SpacetimePoint) -> np.ndarray:
    """The kernel ``P(x, y) = psi_x psi_y^H sig`` acting on the spin frame of ``y``."""
    return x.psi @ y.adjoint_psi()


def _check_pair(x: SpacetimePoint, y: SpacetimePoint):
    if x.psi.shape != y.psi.shape:
        raise SpecError(f"dimension mismatch: {x.psi.shape} vs {y.psi.shape}")


def _sorted_truncated(vals: np.ndarray, size: int, eps_rank: float) -> EigenData:
    vals = np.asarray(vals, dtype=complex)
    order = np.lexsort((-vals.imag, -vals.real, -np.abs(vals)))
    vals = vals[order][:size].copy()
    if len(vals) < size:
        vals = np.concatenate([vals, np.zeros(size - len(vals), dtype=complex)])
    m = np.max(np.abs(vals)) if len(vals) else 0.0
    vals[np.abs(vals) <= eps_rank * m] = 0.0
    if m == 0.0:
        vals[:] = 0.0
    return EigenData(vals)


def eigvals_checked(a: np.ndarray) -> np.ndarray:
    try:
        vals = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise SpecError(f"eigen-solver did not converge: {exc}") from exc
    if not np.all(np.isfinite(vals)):
        raise SpecError("eigen-solver returned non-finite values")
    return vals


def closed_chain(x: SpacetimePoint, y: SpacetimePoint) -> np.ndarray:
    """The ``2n x 2n`` matrix ``P(x, y) P(y, x)``."""
    return kernel_P(x, y) @ kernel_P(y, x)


def product_spectrum(x: SpacetimePoint, y: SpacetimePoint, params: LagrangianParams | None = None) -> EigenData:
    """Nontrivial eigenvalues of ``op(x) op(y)`` from the closed chain."""
    params = params or LagrangianParams(n=x.n)
    _check_pair(x, y)
    return _sorted_truncated(eigvals_checked(closed_chain(x, y)), 2 * x.n, params.eps_rank)


def product_spectrum_full(x: SpacetimePoint, y: SpacetimePoint, params: LagrangianParams | None = None) -> EigenData:
    """Same as :func:`product_spectrum` but from the ``f x f`` product of operators."""
    params = params or LagrangianParams(n=x.n)
    _check_pair(x, y)
    return _sorted_truncated(eigvals_checked(x.op @ y.op), 2 * x.n, params.eps_rank)


def spectral_weight(e: EigenData) -> float:
    return float(np.sum(np.abs(e.lambdas)))


def lagrangian_from_spectrum(lambdas, n: int, kappa: float = 0.0) -> float:
    """``(1/4n) sum_ij (|l_i| - |l_j|)^2 + kappa (sum_j |l_j|)^2``."""
    m = np.abs(np.asarray(lambdas))
    diff = m[:, None] - m[None, :]
    return float(np.sum(diff * diff) / (4 * n) + kappa * np.sum(m) ** 2)


def lagrangian(x: SpacetimePoint, y: SpacetimePoint, params: LagrangianParams | None = None) -> float:
    params = params or LagrangianParams(n=x.n)
    return lagrangian_from_spectrum(product_spectrum(x, y, params).lambdas, x.n, params.kappa)


class Causal(enum.Enum):
    SPACELIKE = "Spacelike"
    TIMELIKE = "Timelike"
    LIGHTLIKE = "Lightlike"


@dataclass(frozen=True)
class CausalReport:
    kind: Causal
    modulus_spread: float
    imag_ratio: float
    near_threshold: bool


def causal_report(x: SpacetimePoint, y: SpacetimePoint, params: LagrangianParams | None = None) -> CausalReport:
    """Classify a pair and report how close the decision was to a threshold.

    The relative modulus spread and the relative imaginary part are returned;
    ``near_threshold`` is set when either lies within a factor of ten of
    ``eps_causal`` on either side.
    """
    params = params or LagrangianParams(n=x.n)
    lam = product_spectrum(x, y, params).lambdas
    mod = np.abs(lam)
    top = float(np.max(mod))
    eps = params.eps_causal
    if top <= params.eps_rank:
        return CausalReport(Causal.SPACELIKE, 0.0, 0.0, False)
    spread = float((np.max(mod) - np.min(mod)) / top)
    imag = float(np.max(np.abs(lam.imag)) / top)

    def near(v):
        return eps / 10 <= v <= eps * 10

    if spread <= eps:
        kind = Causal.SPACELIKE
        flag = near(spread)
    elif imag <= eps:
        kind = Causal.TIMELIKE
        flag = near(spread) or near(imag)
    else:
        kind = Causal.LIGHTLIKE
        flag = near(spread) or near(imag)
    return CausalReport(kind, spread, imag, flag)


def classify_causal(x: SpacetimePoint, y: SpacetimePoint, params: LagrangianParams | None = None) -> Causal:
    return causal_report(x, y, params).kind
