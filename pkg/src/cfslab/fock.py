"""Truncated Fock space, the GNS Gram matrix and a density operator reproducing the state.

Bosonic modes are truncated at occupation ``n_max``; fermionic modes use a
Jordan-Wigner ordering.  The fermionic modes are ordered with the sea
modes (the range of ``pi_-``) first; in the vacuum they are occupied and
all particle modes are empty, so ``a |0> = Psi_+ |0> = Psi^dagger_- |0> = 0``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .operators import SpecError
from .state import AlgebraElement, BosonicModes, FermionicSpace, StateSnapshot, state_eval

__all__ = [
    "PropertyViolation",
    "FockRep",
    "build_fock",
    "gns_gram",
    "Config",
    "basis_configs",
    "areorder_word",
    "DensityOperator",
    "density_from_state",
    "ReconstructionReport",
    "verify_reconstruction",
    "vacuum_state",
]

MAX_DIM = 10**6


class PropertyViolation(AssertionError):
    """A numerical property required by the theory does not hold."""


@dataclass(frozen=True, eq=False)
class FockRep:
    """Sparse matrices of the field operators on ``F^b (x) F^f``.

    ``a[k]``/``ad[k]`` act on bosonic mode ``k``; ``c[k]``/``cd[k]`` are
    ``Psi(conj chi_k)`` and ``Psi^dagger(chi_k)``.
    """

    n_bosons: int
    n_fermions: int
    n_sea: int
    n_max: int
    dim: int
    a: list
    ad: list
    c: list
    cd: list
    vacuum: np.ndarray
    vacuum_index: int
    mode_names: list
    flags: list = field(default_factory=list)

    def letter(self, kind: str, mode: int):
        table = {"ad": self.ad, "a": self.a, "fd": self.cd, "f": self.c}[kind]
        if mode >= len(table):
            raise SpecError(f"mode {mode} of kind {kind} is not represented")
        return table[mode]

    def word_matrix(self, word) -> sparse.csr_matrix:
        M = sparse.identity(self.dim, dtype=complex, format="csr")
        for kind, mode in word:
            M = M @ self.letter(kind, mode)
        return M.tocsr()

    def element_matrix(self, element: AlgebraElement) -> sparse.csr_matrix:
        M = sparse.csr_matrix((self.dim, self.dim), dtype=complex)
        for w, c in element.terms:
            M = M + c * self.word_matrix(w)
        return M

    def ccr_defect(self) -> tuple[float, float]:
        """Largest deviation of ``[a_k, a_l^dagger] - delta_kl`` below and at the top occupation."""
        below = top = 0.0
        occ = self._occupations()
        for k in range(self.n_bosons):
            for l in range(self.n_bosons):
                D = (self.a[k] @ self.ad[l] - self.ad[l] @ self.a[k]).toarray()
                if k == l:
                    D = D - np.eye(self.dim)
                col = np.max(np.abs(D), axis=0)
                at_top = occ[:, l] == self.n_max
                below = max(below, float(np.max(col[~at_top], initial=0.0)))
                top = max(top, float(np.max(col[at_top], initial=0.0)))
        return below, top

    def car_defect(self) -> float:
        worst = 0.0
        I = sparse.identity(self.dim, dtype=complex, format="csr")
        for k in range(self.n_fermions):
            for l in range(self.n_fermions):
                D = self.c[k] @ self.cd[l] + self.cd[l] @ self.c[k] - (I if k == l else 0 * I)
                worst = max(worst, float(abs(D).max()) if D.nnz else 0.0)
                E = self.cd[k] @ self.cd[l] + self.cd[l] @ self.cd[k]
                worst = max(worst, float(abs(E).max()) if E.nnz else 0.0)
        return worst

    def _occupations(self) -> np.ndarray:
        dims = [self.n_max + 1] * self.n_bosons + [2] * self.n_fermions
        return np.array(list(itertools.product(*[range(d) for d in dims])), dtype=int).reshape(self.dim, len(dims))


def _kron_all(mats):
    out = sparse.identity(1, dtype=complex, format="csr")
    for m in mats:
        out = sparse.kron(out, m, format="csr")
    return out


def build_fock(bosons, fermions, n_max: int = 4, max_bosons: int = 3, max_fermions: int = 6) -> FockRep:
    """Field operator matrices for the given modes.

    ``bosons`` is a :class:`BosonicModes` or a mode count; ``fermions`` is a
    :class:`FermionicSpace` or a pair ``(count, n_sea)``.  Mode Grams must be
    the identity.  Mode counts above the caps are cut and recorded in
    ``flags``.
    """
    flags = []
    if isinstance(bosons, BosonicModes):
        if not np.allclose(bosons.gram, np.eye(bosons.count), atol=1e-8):
            raise SpecError("bosonic modes are not orthonormal")
        nb = bosons.count
    else:
        nb = int(bosons)
    if isinstance(fermions, FermionicSpace):
        if not np.allclose(fermions.gram, np.eye(fermions.count), atol=1e-8):
            raise SpecError("fermionic modes are not orthonormal")
        nf, nsea = fermions.count, fermions.n_sea
    else:
        nf, nsea = (int(x) for x in fermions)
    if nb < 0 or nf < 0 or not 0 <= nsea <= nf or n_max < 1:
        raise SpecError("invalid mode counts")
    if nb > max_bosons:
        flags.append(f"bosonic modes cut from {nb} to {max_bosons}")
        nb = max_bosons
    if nf > max_fermions:
        flags.append(f"fermionic modes cut from {nf} to {max_fermions}")
        nsea = min(nsea, max_fermions)
        nf = max_fermions
    dim = (n_max + 1) ** nb * 2**nf
    if dim > MAX_DIM:
        raise SpecError(f"Fock dimension {dim} exceeds the guard {MAX_DIM}")
    lad = sparse.diags(np.sqrt(np.arange(1, n_max + 1, dtype=float)), 1, format="csr").astype(complex)
    Ib = sparse.identity(n_max + 1, dtype=complex, format="csr")
    lc = sparse.csr_matrix(np.array([[0, 1], [0, 0]], dtype=complex))
    Z = sparse.csr_matrix(np.diag([1.0 + 0j, -1.0]))
    I2 = sparse.identity(2, dtype=complex, format="csr")
    a, c = [], []
    for k in range(nb):
        a.append(_kron_all([lad if j == k else Ib for j in range(nb)] + [I2] * nf))
    for k in range(nf):
        c.append(_kron_all([Ib] * nb + [Z] * k + [lc] + [I2] * (nf - k - 1)))
    ad = [m.conj().T.tocsr() for m in a]
    cd = [m.conj().T.tocsr() for m in c]
    digits = [0] * nb + [1] * nsea + [0] * (nf - nsea)
    dims = [n_max + 1] * nb + [2] * nf
    idx = 0
    for d, base in zip(digits, dims):
        idx = idx * base + d
    vac = np.zeros(dim, dtype=complex)
    vac[idx] = 1.0
    names = [f"z{k + 1}" for k in range(nb)] + [f"p{k + 1}{'-' if k < nsea else '+'}" for k in range(nf)]
    return FockRep(nb, nf, nsea, n_max, dim, a, ad, c, cd, vac, idx, names, flags)


def _evaluator(state):
    if isinstance(state, StateSnapshot):
        return lambda el: state_eval(state, el)
    return state


def gns_gram(state, word_basis, tol_herm: float = 1e-9, tol_psd: float = 1e-8) -> np.ndarray:
    """``G_kl = omega(A_k^* A_l)``; raises :class:`PropertyViolation` unless Hermitian and positive."""
    ev = _evaluator(state)
    els = [w if isinstance(w, AlgebraElement) else AlgebraElement.parse(w) for w in word_basis]
    G = np.array([[ev(A.star() * B) for B in els] for A in els], dtype=complex)
    scale = max(float(np.max(np.abs(G))) if G.size else 0.0, 1.0)
    if np.max(np.abs(G - G.conj().T), initial=0.0) > tol_herm * scale:
        raise PropertyViolation("GNS Gram matrix is not Hermitian")
    low = float(np.min(np.linalg.eigvalsh((G + G.conj().T) / 2))) if G.size else 0.0
    norm = float(np.linalg.norm(G, 2)) if G.size else 0.0
    if low < -tol_psd * max(norm, 1e-300):
        raise PropertyViolation(f"GNS Gram matrix has negative eigenvalue {low:.3e}")
    return G


# ---------------------------------------------------------------------------
# Density operator


@dataclass(frozen=True)
class Config:
    """Occupation data: bosonic multiset, particle modes and sea modes (sorted mode indices)."""

    bosons: tuple = ()
    particles: tuple = ()
    sea: tuple = ()

    @property
    def size(self) -> int:
        return len(self.bosons) + len(self.particles) + len(self.sea)

    def creators(self) -> tuple:
        """Letters creating this configuration from the vacuum: ``a^dagger``, ``Psi^dagger_+`` and ``Psi_-``."""
        return (tuple(("ad", k) for k in self.bosons) + tuple(("fd", k) for k in self.particles)
                + tuple(("f", k) for k in self.sea))

    def annihilators(self) -> tuple:
        """Letters removing this configuration: ``a``, ``Psi_+`` and ``Psi^dagger_-``."""
        return (tuple(("a", k) for k in self.bosons) + tuple(("f", k) for k in self.particles)
                + tuple(("fd", k) for k in self.sea))

    def multiplicity_factor(self) -> float:
        """``prod_l 1 / (m(i_l)!)^(1/m(i_l))`` over the bosonic indices."""
        out = 1.0
        for k in self.bosons:
            m = self.bosons.count(k)
            out /= math.factorial(m) ** (1.0 / m)
        return out


def basis_configs(fock: FockRep, N: int) -> list[Config]:
    """All configurations with at most ``N`` bosons, ``N`` particles and ``N`` sea holes."""
    sea_modes = range(fock.n_sea)
    part_modes = range(fock.n_sea, fock.n_fermions)
    out = []
    for r in range(min(N, fock.n_max) + 1):
        for bos in itertools.combinations_with_replacement(range(fock.n_bosons), r):
            for p in range(min(N, len(part_modes)) + 1):
                for parts in itertools.combinations(part_modes, p):
                    for q in range(min(N, len(sea_modes)) + 1):
                        for sea in itertools.combinations(sea_modes, q):
                            out.append(Config(bos, parts, sea))
    return out


def areorder_word(cre: Config, ann: Config) -> tuple:
    """Word ``(creators of cre)(annihilators of ann)`` in the field-operator letters."""
    return cre.creators() + ann.annihilators()


def vacuum_state(fock: FockRep):
    """Vacuum expectation ``<0| A |0>`` as an evaluator of algebra elements."""
    def ev(el: AlgebraElement) -> complex:
        total = 0j
        for word, c in el.terms:
            v = fock.vacuum
            for kind, mode in reversed(word):
                v = fock.letter(kind, mode) @ v
            total += c * (fock.vacuum.conj() @ v)
        return complex(total)

    return ev


@dataclass
class DensityOperator:
    """Operator ``sigma`` on the truncated Fock space with the cutoff used to build it."""

    matrix: sparse.csr_matrix
    N: int
    approximate: bool
    higher_order_max: float
    factor_check: float

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def trace(self) -> complex:
        return complex(self.matrix.diagonal().sum())


def _trace_with(sigma: sparse.csr_matrix, A: sparse.csr_matrix) -> complex:
    return complex(sigma.multiply(A.T).sum())


def _single_state(vec: np.ndarray, tol: float = 1e-12):
    nz = np.flatnonzero(np.abs(vec) > tol)
    if len(nz) != 1:
        raise SpecError("configuration vector is not a single occupation state")
    return int(nz[0]), complex(vec[nz[0]])


def density_from_state(state, fock: FockRep, N: int = 2, tol: float = 1e-10) -> DensityOperator:
    """Build ``sigma`` level by level in the number of annihilated particles.

    For each annihilator configuration ``J`` (largest first) and creator
    configuration ``I``, the coefficient of the dyad ``|J><I|`` is the part
    of ``omega(A_I^J)`` not yet produced by the higher levels, multiplied
    by the multiplicity factors of ``I`` and ``J`` and by the sign of the
    fermionic vacuum contraction.  Raises if ``N`` exceeds the bosonic
    truncation.
    """
    if N < 0 or N > fock.n_max:
        raise SpecError(f"cutoff N={N} must lie between 0 and the occupation cutoff {fock.n_max}")
    ev = _evaluator(state)
    configs = basis_configs(fock, N)
    vac = fock.vacuum
    cre_mats = [fock.word_matrix(cf.creators()) for cf in configs]
    ann_mats = [fock.word_matrix(cf.annihilators()) for cf in configs]
    kets = [_single_state(C @ vac) for C in cre_mats]
    idx = np.array([k for k, _ in kets])
    if len(set(idx.tolist())) != len(idx):
        raise SpecError("distinct configurations share an occupation state")
    factor_err = 0.0
    lam = []
    for cf, C, A in zip(configs, cre_mats, ann_mats):
        back = complex(vac.conj() @ (A @ (C @ vac)))
        expected = math.prod(math.factorial(cf.bosons.count(k)) for k in set(cf.bosons))
        factor_err = max(factor_err, abs(abs(back) - expected))
        lam.append(np.sign(back.real))
    # Every word maps the configuration states into themselves, so the
    # traces only need the operators restricted to that subspace.
    cre_small = np.stack([C[idx][:, idx].toarray() for C in cre_mats])
    ann_small = [A[idx][:, idx].toarray() for A in ann_mats]
    n = len(configs)
    sigma = np.zeros((n, n), dtype=complex)
    for level in range(max(c.size for c in configs), -1, -1):
        update = np.zeros_like(sigma)
        for j, J in enumerate(configs):
            if J.size != level:
                continue
            M = ann_small[j] @ sigma
            known = np.einsum("iab,ba->i", cre_small, M)
            jamp = kets[j][1]
            for i, I in enumerate(configs):
                resid = ev(AlgebraElement.word(*areorder_word(I, J))) - known[i]
                if resid == 0:
                    continue
                coef = resid * I.multiplicity_factor() * J.multiplicity_factor() * lam[j]
                # |J><I| written with unit occupation vectors
                update[j, i] = coef * jamp * np.conj(kets[i][1])
        sigma += update
    r, c = np.nonzero(sigma)
    sigma = sparse.csr_matrix((sigma[r, c], (idx[r], idx[c])), shape=(fock.dim, fock.dim))
    hi = _higher_order(ev, fock, N)
    return DensityOperator(sigma, N, hi > tol, hi, factor_err)


def _higher_order(ev, fock: FockRep, N: int) -> float:
    """Largest ``|omega|`` on single-type words with ``N + 1`` letters on one side."""
    worst = 0.0
    probes = []
    if N + 1 <= fock.n_max:
        for bos in itertools.combinations_with_replacement(range(fock.n_bosons), N + 1):
            probes.append((Config(bos), Config()))
            probes.append((Config(), Config(bos)))
    parts = range(fock.n_sea, fock.n_fermions)
    for sub in itertools.combinations(parts, N + 1):
        probes.append((Config(particles=sub), Config(particles=sub)))
    for sub in itertools.combinations(range(fock.n_sea), N + 1):
        probes.append((Config(sea=sub), Config(sea=sub)))
    for I, J in probes:
        worst = max(worst, abs(ev(AlgebraElement.word(*areorder_word(I, J)))))
    return float(worst)


@dataclass
class ReconstructionReport:
    max_error: float
    scale: float
    words_checked: int
    passed: bool
    worst_word: tuple | None = None


def verify_reconstruction(sigma: DensityOperator, state, fock: FockRep, N: int | None = None,
                          tol: float = 1e-8) -> ReconstructionReport:
    """Compare ``trace(sigma A)`` with ``omega(A)`` on every basis word up to particle number ``N``."""
    N = sigma.N if N is None else N
    ev = _evaluator(state)
    configs = basis_configs(fock, N)
    cre = {cf: fock.word_matrix(cf.creators()) for cf in configs}
    ann = {cf: fock.word_matrix(cf.annihilators()) for cf in configs}
    worst, worst_word, scale = 0.0, None, 1.0
    for I in configs:
        for J in configs:
            w = areorder_word(I, J)
            lhs = _trace_with(sigma.matrix, cre[I] @ ann[J])
            rhs = ev(AlgebraElement.word(*w))
            scale = max(scale, abs(rhs))
            if abs(lhs - rhs) > worst:
                worst, worst_word = abs(lhs - rhs), w
    return ReconstructionReport(worst, scale, len(configs) ** 2, worst <= tol * scale, worst_word)
