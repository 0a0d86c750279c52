"""Group averages of the nonlinear surface layer integral and the resulting quantum state.

A snapshot freezes one set of Haar samples together with the exponential
weights ``beta * gamma`` and, on first use, the insertions evaluated at
every sample.  All expectation values of a snapshot are computed from these
common random numbers, so the state is exactly linear and every
per-sample functional is positive whenever the weights are.

Insertions are first derivatives of ``gamma`` with respect to the wave
evaluation operator of the vacuum, taken before the sampled unitary is
applied.  At each sample the complex gradient ``G_k = d gamma / d Re psi_k
+ i d gamma / d Im psi_k`` is computed once, separately for variations of
the bra and the ket factor of ``x = -psi^H sig psi``.  Every bosonic and
fermionic insertion is then a contraction of ``G`` with a jet.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy.special import logsumexp

from .action import fd_step
from .linfield import (
    ComplexStructure,
    JetBasis,
    SingularOperatorError,
    complex_structure,
    jet_basis,
    pair_jet_data,
    positive_symplectic_reduction,
    surface_grams,
)
from .measure import DiscreteMeasure, InteractionMap
from .operators import LagrangianParams, SpecError
from .surface import CutSpec, t_functional
from .wavefunc import ExtendedBasis, WaveFunction, extended_product, extended_space_basis, physical_wave, q_matrix

__all__ = [
    "GroupSpec",
    "haar_sample",
    "BosonicModes",
    "bosonic_modes",
    "FermionicSpace",
    "fermionic_space",
    "localized_waves",
    "StateContext",
    "StateSnapshot",
    "partition_function",
    "refined_partition_function",
    "localized_partition_function",
    "diagonal_refined",
    "reweighted",
    "insertion_bosonic",
    "fermionic_projector",
    "AlgebraElement",
    "normal_order",
    "prestate",
    "state_eval",
    "sample_values",
    "positivity_check",
    "PositivityReport",
    "prestate_refined",
    "refined_state_eval",
    "refined_positivity_minimum",
    "state_localized",
    "b_norm_report",
    "random_element",
]


# ---------------------------------------------------------------------------
# Haar sampling


@dataclass(frozen=True)
class GroupSpec:
    """Compact subgroup acting on the indices ``embed`` of ``H`` and trivially elsewhere.

    ``kind`` is ``"full"`` for the full unitary group of the embedded block,
    ``"torus"`` for independent phases on the first ``k`` embedded indices,
    or ``"trivial"``.
    """

    kind: str
    f: int
    k: int = 0
    embed: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("full", "torus", "trivial"):
            raise SpecError(f"unknown group kind {self.kind!r}")
        emb = tuple(range(self.k)) if self.embed is None else tuple(int(i) for i in self.embed)
        if self.kind != "trivial" and (self.k < 1 or len(emb) < self.k):
            raise SpecError("group block size must be positive and fit inside the embedding")
        if any(i < 0 or i >= self.f for i in emb) or len(set(emb)) != len(emb):
            raise SpecError("embedding indices must be distinct and lie inside H")
        object.__setattr__(self, "embed", emb)

    @classmethod
    def full_unitary(cls, f: int, k: int, embed=None) -> "GroupSpec":
        return cls("full", f, k, embed)

    @classmethod
    def torus(cls, f: int, k: int, embed=None) -> "GroupSpec":
        return cls("torus", f, k, embed)

    @classmethod
    def trivial(cls, f: int) -> "GroupSpec":
        return cls("trivial", f, 0, ())


def haar_sample(group: GroupSpec, seed=None) -> np.ndarray:
    """One Haar-distributed element of ``group`` as an ``f x f`` unitary.

    ``seed`` may be an integer or a ``numpy.random.Generator``; passing a
    generator draws the next sample from its stream.  The full unitary block
    is the ``Q`` factor of a complex Gaussian matrix with the phases of the
    diagonal of ``R`` moved into ``Q``.
    """
    rng = np.random.default_rng(seed)
    U = np.eye(group.f, dtype=complex)
    if group.kind == "trivial":
        return U
    idx = np.array(group.embed[: group.k])
    if group.kind == "torus":
        U[idx, idx] = np.exp(1j * rng.uniform(0.0, 2 * np.pi, size=group.k))
        return U
    Z = (rng.standard_normal((group.k, group.k)) + 1j * rng.standard_normal((group.k, group.k))) / np.sqrt(2)
    Qm, R = np.linalg.qr(Z)
    d = np.diag(R)
    Qm = Qm * (d / np.abs(d))[None, :]
    U[np.ix_(idx, idx)] = Qm
    return U


# ---------------------------------------------------------------------------
# One-particle spaces


@dataclass(frozen=True, eq=False)
class BosonicModes:
    """Orthonormal holomorphic modes ``z_m`` given as complex combinations of real jets.

    ``dpsi_re[m]`` and ``dpsi_im[m]`` are the wave-evaluation variations of
    the real and imaginary parts of ``z_m``; ``gram`` is ``(z_m | z_l)``.
    """

    basis: JetBasis
    coeffs: np.ndarray
    structure: ComplexStructure
    reduction: np.ndarray
    gram: np.ndarray
    dpsi_re: np.ndarray
    dpsi_im: np.ndarray

    @property
    def count(self) -> int:
        return self.coeffs.shape[1]

    def truncated(self, count: int) -> "BosonicModes":
        count = min(count, self.count)
        return BosonicModes(self.basis, self.coeffs[:, :count], self.structure, self.reduction,
                            self.gram[:count, :count], self.dpsi_re[:count], self.dpsi_im[:count])


def bosonic_modes(rho: DiscreteMeasure, params: LagrangianParams, cut: CutSpec, space=None,
                  rel: float = 1e-8, max_modes: int | None = None) -> BosonicModes:
    """Holomorphic modes from the surface layer inner product and symplectic form at ``cut``.

    With ``space`` (a non-empty linearized solution space) the Gram matrices
    of that space are used; otherwise those of all jets without scalar
    component.  The Grams are restricted to the subspace where the inner
    product is positive and the symplectic form is non-degenerate, and the
    complex structure is built there.
    """
    basis = jet_basis(rho)
    if space is not None and not space.empty:
        G, S, embed = space.gram_inner, space.gram_sympl, space.basis
    else:
        data = pair_jet_data(rho, params, basis)
        Gf, Sf = surface_grams(rho, cut, basis, data)
        keep = ~basis.scalar_mask()
        embed = np.eye(basis.dim)[:, keep]
        G, S = embed.T @ Gf @ embed, embed.T @ Sf @ embed
    W = positive_symplectic_reduction(G, S, rel)
    if W.shape[1] == 0:
        raise SingularOperatorError("no subspace with positive inner product and non-degenerate symplectic form")
    cs = complex_structure(W.T @ G @ W, W.T @ S @ W)
    coeffs = embed @ W @ cs.hol_basis
    m = coeffs.shape[1] if max_modes is None else min(max_modes, coeffs.shape[1])
    coeffs = coeffs[:, :m]
    gram = cs.scalar[:m, :m]
    dre = np.array([basis.to_jet(coeffs[:, k].real).dpsi for k in range(m)])
    dim = np.array([basis.to_jet(coeffs[:, k].imag).dpsi for k in range(m)])
    return BosonicModes(basis, coeffs, cs, W, gram, dre, dim)


def localized_waves(rho: DiscreteMeasure) -> list[WaveFunction]:
    """Wave functions supported at one point whose spin-frame coordinates are unit vectors.

    Together they span all wave functions of the discrete spacetime.
    """
    N = len(rho)
    out = []
    for i, p in enumerate(rho.points):
        ps = p.psi
        pinv = ps.conj().T @ np.linalg.inv(ps @ ps.conj().T)
        for a in range(ps.shape[0]):
            vals = np.zeros((N, rho.spec.f), dtype=complex)
            vals[i] = pinv[:, a]
            out.append(WaveFunction(vals))
    return out


@dataclass(frozen=True, eq=False)
class FermionicSpace:
    """Orthonormal basis of the positive part of the extended space, sea modes first.

    ``frames[k]`` holds the spin-frame coordinates of basis wave ``k``.  The
    first ``n_sea`` modes span the image of ``H^f`` (the range of the
    projection ``pi_-``), the remaining ones its orthogonal complement.
    """

    waves: list
    frames: np.ndarray
    n_sea: int
    gram: np.ndarray
    extended: ExtendedBasis
    f_fermi: int

    @property
    def count(self) -> int:
        return len(self.waves)

    def pi_minus(self) -> np.ndarray:
        P = np.zeros((self.count, self.count))
        P[: self.n_sea, : self.n_sea] = np.eye(self.n_sea)
        return P


def fermionic_space(rho: DiscreteMeasure, t: float, params: LagrangianParams, Q: np.ndarray | None = None,
                    candidates=None, tol: float = 1e-10) -> FermionicSpace:
    """Fermionic one-particle space at time ``t`` with its Dirac sea splitting."""
    if Q is None:
        Q = q_matrix(rho, params)
    cands = localized_waves(rho) if candidates is None else list(candidates)
    eb = extended_space_basis(rho, t, cands, params, tol=tol, Q=Q)
    K = eb.basis.shape[1]
    vals = np.array([c.values for c in cands])
    onb = [WaveFunction(np.tensordot(eb.basis[:, k], vals, axes=1)) for k in range(K)]
    phys = [physical_wave(np.eye(rho.spec.f)[l], rho) for l in range(rho.spec.f_fermi)]
    X = np.array([[extended_product(chi, ph, rho, t, params, Q) for ph in phys] for chi in onb]).reshape(K, len(phys))
    if K and X.size and np.max(np.abs(X)) > 0:
        u, s, _ = np.linalg.svd(X, full_matrices=False)
        r = int(np.sum(s > tol * s[0]))
        P = u[:, :r] @ u[:, :r].conj().T
    else:
        r, P = 0, np.zeros((K, K))
    ev, R = np.linalg.eigh((P + P.conj().T) / 2) if K else (np.zeros(0), np.zeros((0, 0)))
    R = R[:, np.argsort(-ev, kind="stable")]
    waves = [WaveFunction(sum(R[k, j] * onb[k].values for k in range(K))) for j in range(K)]
    frames = np.array([w.frames(rho) for w in waves]) if K else np.zeros((0, len(rho), 2 * rho.spec.n))
    gram = np.array([[extended_product(a, b, rho, t, params, Q) for b in waves] for a in waves]).reshape(K, K)
    return FermionicSpace(waves, frames, r, gram, eb, rho.spec.f_fermi)


# ---------------------------------------------------------------------------
# Batched Lagrangian and gradients of gamma


def _h(a):
    return np.conj(np.swapaxes(a, -1, -2))


def _pair_lagrangian(a_bra, a_ket, b_bra, b_ket, sig, n, params):
    """``L`` of the operators ``-a_bra^H sig a_ket`` and ``-b_bra^H sig b_ket`` over stacked inputs."""
    X = a_ket @ _h(b_bra)
    Y = b_ket @ _h(a_bra)
    M = (sig[:, None] * X) @ (sig[:, None] * Y)
    m = np.abs(np.linalg.eigvals(M))
    top = np.max(m, axis=-1, keepdims=True)
    m = np.where(m <= params.eps_rank * top, 0.0, m)
    diff = m[..., :, None] - m[..., None, :]
    return np.sum(diff * diff, axis=(-1, -2)) / (4 * n) + params.kappa * np.sum(m, axis=-1) ** 2


@dataclass(frozen=True, eq=False)
class StateContext:
    """Everything a snapshot needs besides its samples."""

    rho: DiscreteMeasure
    fmap: InteractionMap
    cut: CutSpec
    params: LagrangianParams
    bosons: BosonicModes | None = None
    fermions: FermionicSpace | None = None

    @cached_property
    def psi(self) -> np.ndarray:
        return self.rho.psi_stack()

    @cached_property
    def target_psi(self) -> np.ndarray:
        return np.array([p.psi for p in self.fmap.target])

    @cached_property
    def sig(self) -> np.ndarray:
        return self.rho.points[0].sig

    def masks(self, localized: bool):
        cut = self.cut if localized else CutSpec(self.cut.t)
        return cut.masks(self.rho)


def _gamma_value(ctx: StateContext, Ubra, Uket, inside, outside) -> float:
    bra = ctx.psi @ _h(Ubra)
    ket = ctx.psi @ _h(Uket)
    I, J = np.flatnonzero(inside), np.flatnonzero(outside)
    if len(I) == 0 or len(J) == 0:
        return 0.0
    ii, jj = np.meshgrid(I, J, indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    F = ctx.target_psi
    n, p = ctx.rho.spec.n, ctx.params
    t1 = _pair_lagrangian(F[ii], F[ii], bra[jj], ket[jj], ctx.sig, n, p)
    t2 = _pair_lagrangian(bra[ii], ket[ii], F[jj], F[jj], ctx.sig, n, p)
    w, f = ctx.rho.weights, ctx.fmap.fweight
    return float(np.sum(w[ii] * w[jj] * (f[ii] * t1 - t2 * f[jj])))


def _unit_directions(shape):
    dirs = []
    for a in range(shape[0]):
        for b in range(shape[1]):
            for phase in (1.0, 1j):
                d = np.zeros(shape, dtype=complex)
                d[a, b] = phase
                dirs.append(d)
    return np.array(dirs)


def _gradients(ctx: StateContext, Ubra, Uket, inside, outside):
    """Complex gradients of ``gamma`` for bra-only and ket-only variations of each ``psi_k``."""
    psi = ctx.psi
    N, m, f = psi.shape
    bra = psi @ _h(Ubra)
    ket = psi @ _h(Uket)
    F = ctx.target_psi
    w, fw = ctx.rho.weights, ctx.fmap.fweight
    n, p, sig = ctx.rho.spec.n, ctx.params, ctx.sig
    E = _unit_directions((m, f))
    g_bra = np.zeros((N, m, f), dtype=complex)
    g_ket = np.zeros((N, m, f), dtype=complex)
    for k in range(N):
        if inside[k]:
            partners, sign = np.flatnonzero(outside), -1.0
        elif outside[k]:
            partners, sign = np.flatnonzero(inside), 1.0
        else:
            continue
        if len(partners) == 0:
            continue
        h = fd_step(psi[k])
        coef = w[k] * w[partners] * fw[partners]
        for side, out in (("bra", g_bra), ("ket", g_ket)):
            U = Ubra if side == "bra" else Uket
            delta = h * (E @ _h(U))
            vals = []
            for s in (1.0, -1.0):
                moved = (bra[k] if side == "bra" else ket[k])[None] + s * delta
                other = ket[k] if side == "bra" else bra[k]
                mb = moved if side == "bra" else np.broadcast_to(other, moved.shape)
                mk = moved if side == "ket" else np.broadcast_to(other, moved.shape)
                mb = np.broadcast_to(mb[:, None], (len(E), len(partners), m, f))
                mk = np.broadcast_to(mk[:, None], (len(E), len(partners), m, f))
                Fp = np.broadcast_to(F[partners][None], mb.shape)
                if sign < 0:
                    L = _pair_lagrangian(mb, mk, Fp, Fp, sig, n, p)
                else:
                    L = _pair_lagrangian(Fp, Fp, mb, mk, sig, n, p)
                vals.append(sign * L @ coef)
            d = (vals[0] - vals[1]) / (2 * h)
            out[k] = (d[0::2] + 1j * d[1::2]).reshape(m, f)
    return g_bra, g_ket


def _real_derivative(G, dpsi):
    """``d/dtau gamma`` along the real variation ``dpsi`` given the complex gradient ``G``."""
    return np.real(np.sum(np.conj(G) * dpsi, axis=(-3, -2, -1)))


def _range_projector(B: np.ndarray, rel: float = 1e-10) -> np.ndarray:
    Bh = (B + B.conj().T) / 2
    ev, V = np.linalg.eigh(Bh)
    top = float(np.max(np.abs(ev))) if len(ev) else 0.0
    if top == 0.0:
        return np.zeros_like(B)
    keep = ev > rel * top
    return V[:, keep] @ V[:, keep].conj().T


def _spectral_projector(B: np.ndarray, rel: float = 1e-10) -> np.ndarray:
    """Riesz projection of a possibly non-normal ``B`` onto its eigenvalues above ``rel * |B|``."""
    top = float(np.linalg.norm(B, 2)) if B.size else 0.0
    if top == 0.0:
        return np.zeros_like(B)
    ev, X = np.linalg.eig(B)
    keep = np.abs(ev) > rel * top
    Xi = np.linalg.inv(X)
    return X[:, keep] @ Xi[keep, :]


@dataclass
class InsertionTable:
    """Per-sample insertions: ``alpha[s, m] = D_{z_m} gamma`` and ``alpha_bar[s, m] = D_{conj z_m} gamma``.

    ``V[s, l, k] = D_{chi_k <e_l|} gamma`` are the holomorphic fermionic
    insertions, ``B[s]`` the operator of the sesquilinear form and
    ``pi[s]`` the fermionic kernel used in the state.
    """

    alpha: np.ndarray
    alpha_bar: np.ndarray
    V: np.ndarray
    B: np.ndarray
    pi: np.ndarray
    gradients: np.ndarray


def _fermi_contract(G, frames, u):
    """``sum_{i,a,b} conj(G_i[a, b]) chi(x_i)_a conj(u_b)`` for all basis waves ``chi``."""
    Gu = np.einsum("iab,b->ia", np.conj(G), np.conj(u))
    return np.einsum("ia,kia->k", Gu, frames)


def _tables(snap: "StateSnapshot") -> InsertionTable:
    ctx = snap.context
    inside, outside = ctx.masks(snap.mode == "localized")
    S = snap.sample_count
    bos, fer = ctx.bosons, ctx.fermions
    mb = bos.count if bos is not None else 0
    K = fer.count if fer is not None else 0
    ff = ctx.rho.spec.f_fermi
    alpha = np.zeros((S, mb), dtype=complex)
    alpha_bar = np.zeros((S, mb), dtype=complex)
    V = np.zeros((S, ff, K), dtype=complex)
    B = np.zeros((S, K, K), dtype=complex)
    pi = np.zeros((S, K, K), dtype=complex)
    grads = np.zeros((S, 2) + ctx.psi.shape, dtype=complex)
    eye = np.eye(ctx.rho.spec.f)
    for s in range(S):
        Uk, Ub = snap.ket[s], snap.bra[s]
        gb, gk = _gradients(ctx, Ub, Uk, inside, outside)
        if snap.mode == "refined" and not (Ub is Uk):
            gb2, gk2 = _gradients(ctx, Uk, Ub, inside, outside)
            G_lt, G_gt = gk + gb2, gb + gk2
        else:
            G_lt = G_gt = gb + gk
        grads[s, 0], grads[s, 1] = G_lt, G_gt
        if mb:
            alpha[s] = _real_derivative(G_lt, bos.dpsi_re) + 1j * _real_derivative(G_lt, bos.dpsi_im)
            alpha_bar[s] = _real_derivative(G_gt, bos.dpsi_re) - 1j * _real_derivative(G_gt, bos.dpsi_im)
        if K:
            for l in range(ff):
                V[s, l] = _fermi_contract(G_lt, fer.frames, eye[l]) / 2
            if snap.mode == "refined":
                rel = _h(Ub) @ Uk
                W = np.array([np.conj(_fermi_contract(G_gt, fer.frames, rel[:, l])) / 2 for l in range(ff)])
                B[s] = W.T @ V[s]
                pi[s] = B[s] if snap.fermion_kernel == "direct" else _spectral_projector(B[s])
            else:
                B[s] = _h(V[s]) @ V[s]
                pi[s] = _range_projector(B[s])
    return InsertionTable(alpha, alpha_bar, V, B, pi, grads)


# ---------------------------------------------------------------------------
# Snapshots and partition functions


@dataclass(frozen=True, eq=False)
class StateSnapshot:
    """Frozen sample set with log weights; ``ket[s]`` and ``bra[s]`` coincide outside paired mode."""

    ket: np.ndarray
    bra: np.ndarray
    logweights: np.ndarray
    log_Z: float
    stderr: float
    seed: int
    sample_count: int
    beta: float
    alpha: float
    cut: CutSpec
    mode: str
    context: StateContext
    fermion_kernel: str = "projection"

    @property
    def samples(self) -> np.ndarray:
        return self.ket

    @property
    def Z_hat(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_Z))

    @cached_property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.logweights - logsumexp(self.logweights))

    @cached_property
    def tables(self) -> InsertionTable:
        return _tables(self)

    @cached_property
    def _word_values(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        def mats(a):
            return [[[[float(z.real), float(z.imag)] for z in row] for row in U] for U in a]

        return {
            "format_version": 1,
            "mode": self.mode,
            "seed": int(self.seed),
            "sample_count": int(self.sample_count),
            "beta": float(self.beta),
            "alpha": float(self.alpha),
            "cut_time": float(self.cut.t),
            "fermion_kernel": self.fermion_kernel,
            "ket": mats(self.ket),
            "bra": None if self.bra is self.ket else mats(self.bra),
            "logweights": [float(x) for x in self.logweights],
        }

    @classmethod
    def from_dict(cls, d: dict, context: StateContext) -> "StateSnapshot":
        def mats(a):
            arr = np.array(a, dtype=float)
            out = np.empty(arr.shape[:-1], dtype=complex)
            out.real, out.imag = arr[..., 0], arr[..., 1]
            return out

        ket = mats(d["ket"])
        bra = ket if d.get("bra") is None else mats(d["bra"])
        lw = np.array(d["logweights"], dtype=float)
        log_Z, stderr = _z_statistics(lw)
        return cls(ket, bra, lw, log_Z, stderr, d["seed"], d["sample_count"], d["beta"], d["alpha"],
                   context.cut, d["mode"], context, d.get("fermion_kernel", "projection"))


def _z_statistics(lw: np.ndarray) -> tuple[float, float]:
    S = len(lw)
    if S == 0:
        raise SpecError("at least one sample is required")
    if not np.all(np.isfinite(lw)):
        raise SpecError("non-finite log weight")
    top = float(np.max(lw))
    e = np.exp(lw - top)
    log_Z = top + float(np.log(np.mean(e)))
    sd = float(np.std(e, ddof=1)) if S > 1 else 0.0
    with np.errstate(over="ignore"):
        stderr = float(np.exp(top) * sd / np.sqrt(S)) if sd > 0 else 0.0
    return log_Z, stderr


def _build(ctx, ket, bra, beta, alpha, seed, mode, fermion_kernel="projection") -> StateSnapshot:
    localized = mode == "localized"
    inside, outside = ctx.masks(localized)
    lw = np.array([beta * _gamma_value(ctx, b, k, inside, outside) for k, b in zip(ket, bra)])
    if localized and alpha != 0.0:
        tv = np.array([t_functional(None, ctx.rho, ctx.fmap, ctx.cut, ctx.params, U) for U in ket])
        lw = lw + alpha * tv
    log_Z, stderr = _z_statistics(lw)
    return StateSnapshot(ket, bra, lw, log_Z, stderr, seed, len(ket), float(beta), float(alpha), ctx.cut, mode, ctx,
                         fermion_kernel)


def _draw(group, n_samples, rng):
    if n_samples < 1:
        raise SpecError("n_samples must be positive")
    return np.array([haar_sample(group, rng) for _ in range(n_samples)])


def _context(rho, fmap, cut, params, bosons, fermions):
    if len(fmap.target) != len(rho):
        raise SpecError("map length differs from measure length")
    params = params or LagrangianParams(n=rho.spec.n)
    return StateContext(rho, fmap, cut, params, bosons, fermions)


def partition_function(rhotil, rho: DiscreteMeasure, fmap: InteractionMap, cut: CutSpec, beta: float = 1.0,
                       group: GroupSpec | None = None, n_samples: int = 512, seed: int = 0, *,
                       params: LagrangianParams | None = None, bosons: BosonicModes | None = None,
                       fermions: FermionicSpace | None = None):
    """Monte Carlo group average of ``exp(beta gamma^t(rhotil, U rho))``.

    Returns ``(Z_hat, stderr, snapshot)``.  The interacting measure enters
    through ``fmap``; ``rhotil`` is accepted for symmetry with the other
    surface layer functions.  ``Z_hat`` may overflow to ``inf`` for very
    large ``beta``; ``snapshot.log_Z`` stays finite.
    """
    group = group or GroupSpec.trivial(rho.spec.f)
    ctx = _context(rho, fmap, cut, params, bosons, fermions)
    U = _draw(group, n_samples, np.random.default_rng(seed))
    snap = _build(ctx, U, U, beta, 0.0, seed, "plain")
    return snap.Z_hat, snap.stderr, snap


def refined_partition_function(rhotil, rho: DiscreteMeasure, fmap: InteractionMap, cut: CutSpec,
                               beta: float = 1.0, group: GroupSpec | None = None, n_samples: int = 512,
                               seed: int = 0, *, params: LagrangianParams | None = None,
                               bosons: BosonicModes | None = None, fermions: FermionicSpace | None = None,
                               fermion_kernel: str = "projection"):
    """Group average over independent pairs ``(U_<, U_>)`` acting on ket and bra."""
    if fermion_kernel not in ("projection", "direct"):
        raise SpecError("fermion_kernel must be 'projection' or 'direct'")
    group = group or GroupSpec.trivial(rho.spec.f)
    ctx = _context(rho, fmap, cut, params, bosons, fermions)
    rng = np.random.default_rng(seed)
    ket = _draw(group, n_samples, rng)
    bra = _draw(group, n_samples, rng)
    snap = _build(ctx, ket, bra, beta, 0.0, seed, "refined", fermion_kernel)
    return snap.Z_hat, snap.stderr, snap


def diagonal_refined(snap: StateSnapshot, fermion_kernel: str = "projection") -> StateSnapshot:
    """Paired snapshot with ``U_< = U_>`` equal to the samples of ``snap``."""
    return StateSnapshot(snap.ket, snap.ket.copy(), snap.logweights, snap.log_Z, snap.stderr, snap.seed,
                         snap.sample_count, snap.beta, snap.alpha, snap.cut, "refined", snap.context,
                         fermion_kernel)


def reweighted(snap: StateSnapshot, beta: float) -> StateSnapshot:
    """The same samples at another ``beta``.

    Insertions and per-sample word values do not depend on the weights, so
    they are shared with ``snap`` instead of being recomputed.
    """
    if snap.mode == "localized" and snap.alpha != 0.0:
        raise SpecError("reweighting a localized snapshot with alpha != 0 is not supported")
    ctx = snap.context
    inside, outside = ctx.masks(snap.mode == "localized")
    lw = np.array([beta * _gamma_value(ctx, b, k, inside, outside) for k, b in zip(snap.ket, snap.bra)])
    log_Z, stderr = _z_statistics(lw)
    out = StateSnapshot(snap.ket, snap.bra, lw, log_Z, stderr, snap.seed, snap.sample_count, float(beta),
                        snap.alpha, snap.cut, snap.mode, ctx, snap.fermion_kernel)
    for key in ("tables", "_word_values"):
        if key in snap.__dict__:
            out.__dict__[key] = snap.__dict__[key]
    return out


def localized_partition_function(rhotil, rho: DiscreteMeasure, fmap: InteractionMap, cut: CutSpec,
                                 beta: float = 1.0, alpha: float = 0.0, group: GroupSpec | None = None,
                                 n_samples: int = 512, seed: int = 0, *, params: LagrangianParams | None = None,
                                 bosons: BosonicModes | None = None, fermions: FermionicSpace | None = None):
    """Group average of ``exp(alpha T_V + beta gamma_V)`` with ``V`` the region of ``cut``."""
    group = group or GroupSpec.trivial(rho.spec.f)
    ctx = _context(rho, fmap, cut, params, bosons, fermions)
    U = _draw(group, n_samples, np.random.default_rng(seed))
    snap = _build(ctx, U, U, beta, alpha, seed, "localized")
    return snap.Z_hat, snap.stderr, snap


# ---------------------------------------------------------------------------
# Single insertions


def insertion_bosonic(snap: StateSnapshot, sample: int, z, conjugated: bool = False) -> complex:
    """``D_z gamma`` (or ``D_{conj z} gamma``) at one sample for a coefficient vector ``z`` over the modes."""
    z = np.asarray(z, dtype=complex)
    tab = snap.tables
    if conjugated:
        return complex(np.conj(z) @ tab.alpha_bar[sample])
    return complex(z @ tab.alpha[sample])


def fermionic_projector(snap: StateSnapshot, sample: int) -> tuple[np.ndarray, np.ndarray]:
    """``(B, pi)`` at one sample in the orthonormal fermionic basis: ``b(chi_k, chi_l) = B[k, l]``."""
    tab = snap.tables
    return tab.B[sample], tab.pi[sample]


def b_norm_report(snap: StateSnapshot) -> dict:
    """Empirical operator norms of ``B`` across samples."""
    norms = np.array([np.linalg.norm(b, 2) if b.size else 0.0 for b in snap.tables.B])
    return {"max_norm": float(np.max(norms)), "fraction_at_most_one": float(np.mean(norms <= 1.0)),
            "mean_norm": float(np.mean(norms))}


# ---------------------------------------------------------------------------
# Field algebra

_RANK = {"ad": 0, "fd": 1, "a": 2, "f": 3}
_PREFIX = {"ad": "z", "a": "z", "fd": "p", "f": "p"}
_LETTER = re.compile(r"(ad|fd|a|f)\(\s*([zp])(\d+)\s*\)")


@dataclass(frozen=True)
class AlgebraElement:
    """Finite complex combination of words in ``a^dagger``, ``a``, ``Psi^dagger`` and ``Psi``.

    A word is a tuple of letters ``(kind, mode)`` with ``kind`` one of
    ``"ad"``, ``"a"`` (bosonic creation and annihilation) or ``"fd"``,
    ``"f"`` (fermionic), and ``mode`` an index into the orthonormal
    bosonic or fermionic basis.
    """

    terms: tuple = ()

    @classmethod
    def from_terms(cls, items) -> "AlgebraElement":
        acc = defaultdict(complex)
        for w, c in items:
            for kind, mode in w:
                if kind not in _RANK or int(mode) < 0:
                    raise SpecError(f"malformed letter {(kind, mode)!r}")
            acc[tuple((k, int(m)) for k, m in w)] += complex(c)
        return cls(tuple((w, c) for w, c in acc.items() if c != 0))

    @classmethod
    def identity(cls) -> "AlgebraElement":
        return cls((((), 1 + 0j),))

    @classmethod
    def word(cls, *letters, coeff: complex = 1.0) -> "AlgebraElement":
        return cls.from_terms([(tuple(letters), coeff)])

    @classmethod
    def parse(cls, text: str) -> "AlgebraElement":
        """Parse ``"ad(z1) fd(p2) a(z1) f(p2)"``-style words joined by ``" + "``.

        A term may start with a coefficient followed by ``*`` such as
        ``(0.5-1j)*ad(z1)``; the bare term ``1`` is the identity.  Mode names
        are one-based.
        """
        items = []
        for raw in re.split(r"\s+\+\s+", text.strip()):
            term = raw.strip()
            coeff = 1 + 0j
            if "*" in term:
                c, term = term.split("*", 1)
                try:
                    coeff = complex(c.strip().strip("()").replace(" ", ""))
                except ValueError as exc:
                    raise SpecError(f"bad coefficient {c!r}") from exc
                term = term.strip()
            if term in ("1", ""):
                items.append(((), coeff))
                continue
            letters, pos = [], 0
            for m in _LETTER.finditer(term):
                if term[pos: m.start()].strip():
                    raise SpecError(f"cannot parse {term[pos:m.start()]!r}")
                kind, pre, idx = m.group(1), m.group(2), int(m.group(3))
                if _PREFIX[kind] != pre or idx < 1:
                    raise SpecError(f"mode {pre}{idx} does not fit letter {kind}")
                letters.append((kind, idx - 1))
                pos = m.end()
            if term[pos:].strip():
                raise SpecError(f"cannot parse {term[pos:]!r}")
            items.append((tuple(letters), coeff))
        return cls.from_terms(items)

    def format(self) -> str:
        parts = []
        for w, c in self.terms:
            body = " ".join(f"{k}({_PREFIX[k]}{m + 1})" for k, m in w) or "1"
            parts.append(body if c == 1 else f"({c.real!r}{c.imag:+}j)*{body}")
        return " + ".join(parts) if parts else "0*1"

    def __add__(self, other: "AlgebraElement") -> "AlgebraElement":
        return AlgebraElement.from_terms(list(self.terms) + list(other.terms))

    def __sub__(self, other: "AlgebraElement") -> "AlgebraElement":
        return self + (-1) * other

    def __mul__(self, other):
        if isinstance(other, AlgebraElement):
            return AlgebraElement.from_terms(
                [(w1 + w2, c1 * c2) for w1, c1 in self.terms for w2, c2 in other.terms])
        return AlgebraElement.from_terms([(w, c * complex(other)) for w, c in self.terms])

    def __rmul__(self, other):
        return AlgebraElement.from_terms([(w, c * complex(other)) for w, c in self.terms])

    def star(self) -> "AlgebraElement":
        swap = {"ad": "a", "a": "ad", "fd": "f", "f": "fd"}
        return AlgebraElement.from_terms(
            [(tuple((swap[k], m) for k, m in reversed(w)), np.conj(c)) for w, c in self.terms])

    def fermion_balance(self):
        return {sum(1 for k, _ in w if k == "fd") - sum(1 for k, _ in w if k == "f") for w, _ in self.terms}


@lru_cache(maxsize=200_000)
def normal_order(word: tuple) -> tuple:
    """Expand a word into canonical words ``ad.. fd.. a.. f..`` using the (anti)commutation relations.

    Modes are orthonormal, so contracting ``a(z_k) a^dagger(z_l)`` or
    ``Psi(chi_k) Psi^dagger(chi_l)`` gives ``delta_kl``.  The relative order
    of the fermionic letters within each group is preserved.
    """
    for idx in range(len(word) - 1):
        x, y = word[idx], word[idx + 1]
        if _RANK[x[0]] <= _RANK[y[0]]:
            continue
        acc = defaultdict(complex)
        both_fermi = x[0] in ("f", "fd") and y[0] in ("f", "fd")
        sign = -1.0 if both_fermi else 1.0
        for w, c in normal_order(word[:idx] + (y, x) + word[idx + 2:]):
            acc[w] += sign * c
        if x[1] == y[1] and (x[0], y[0]) in (("a", "ad"), ("f", "fd")):
            for w, c in normal_order(word[:idx] + word[idx + 2:]):
                acc[w] += c
        return tuple((w, c) for w, c in acc.items() if c != 0)
    return ((word, 1.0 + 0j),)


def _is_canonical(word) -> bool:
    return all(_RANK[a[0]] <= _RANK[b[0]] for a, b in zip(word, word[1:]))


def _canonical_values(snap: StateSnapshot, word: tuple) -> np.ndarray:
    """Per-sample value of a canonical word (without the weights)."""
    memo = snap._word_values
    if word not in memo:
        memo[word] = _compute_canonical(snap, word)
    return memo[word]


def _compute_canonical(snap: StateSnapshot, word: tuple) -> np.ndarray:
    if not _is_canonical(word):
        raise SpecError("word is not in the canonical order ad.. fd.. a.. f..")
    S = snap.sample_count
    groups = {k: [m for kk, m in word if kk == k] for k in _RANK}
    if len(groups["fd"]) != len(groups["f"]):
        return np.zeros(S, dtype=complex)
    tab = snap.tables
    mb = tab.alpha.shape[1]
    K = tab.pi.shape[1]
    for k in ("ad", "a"):
        if any(m >= mb for m in groups[k]):
            raise SpecError(f"bosonic mode index out of range (have {mb} modes)")
    for k in ("fd", "f"):
        if any(m >= K for m in groups[k]):
            raise SpecError(f"fermionic mode index out of range (have {K} modes)")
    val = np.ones(S, dtype=complex)
    for m in groups["ad"]:
        val = val * tab.alpha[:, m]
    for m in groups["a"]:
        val = val * tab.alpha_bar[:, m]
    r = len(groups["f"])
    if r:
        M = tab.pi[:, groups["f"]][:, :, groups["fd"]]
        sign = -1.0 if (r * (r - 1) // 2) % 2 else 1.0
        val = val * sign * np.linalg.det(M)
    return val


def _as_element(x) -> AlgebraElement:
    if isinstance(x, AlgebraElement):
        return x
    if isinstance(x, str):
        return AlgebraElement.parse(x)
    return AlgebraElement.word(*x)


def prestate(snap: StateSnapshot, word) -> complex:
    """Pre-state on canonical words ``a^dagger.. Psi^dagger.. a.. Psi..`` (linear in the element)."""
    el = _as_element(word)
    p = snap.probabilities
    return complex(sum(c * (p @ _canonical_values(snap, w)) for w, c in el.terms))


def sample_values(snap: StateSnapshot, element) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample values of an arbitrary element and the matching absolute scale.

    The element is normal ordered first.  The state is the weighted mean of
    the first array with ``snap.probabilities``.
    """
    el = _as_element(element)
    S = snap.sample_count
    total = np.zeros(S, dtype=complex)
    scale = np.zeros(S)
    for w, c in el.terms:
        for cw, cc in normal_order(w):
            v = c * cc * _canonical_values(snap, cw)
            total += v
            scale += np.abs(v)
    return total, scale


def state_eval(snap: StateSnapshot, element) -> complex:
    """Expectation value of any element: normal ordering followed by the pre-state."""
    if snap.mode == "refined":
        raise SpecError("use refined_state_eval for paired snapshots")
    vals, _ = sample_values(snap, element)
    return complex(snap.probabilities @ vals)


@dataclass
class PositivityReport:
    values: np.ndarray
    scales: np.ndarray
    min_relative: float
    max_imag_relative: float
    min_sample_relative: float
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def positivity_check(snap: StateSnapshot, elements, tol: float = 1e-9) -> PositivityReport:
    """Check ``omega(A* A) >= 0`` and that every per-sample integrand is non-negative."""
    p = snap.probabilities
    values, scales, fails = [], [], []
    min_rel, max_im, min_sample = np.inf, 0.0, np.inf
    for idx, A in enumerate(elements):
        A = _as_element(A)
        vals, sc = sample_values(snap, A.star() * A)
        w = complex(p @ vals)
        scale = max(float(p @ sc), np.finfo(float).tiny)
        values.append(w)
        scales.append(scale)
        rel_re, rel_im = w.real / scale, abs(w.imag) / scale
        s_scale = np.maximum(sc, np.finfo(float).tiny)
        per = np.min(vals.real / s_scale)
        per_im = np.max(np.abs(vals.imag) / s_scale)
        min_rel, max_im, min_sample = min(min_rel, rel_re), max(max_im, rel_im), min(min_sample, per)
        if rel_re < -tol or rel_im > tol or per < -tol or per_im > tol:
            fails.append(idx)
    return PositivityReport(np.array(values), np.array(scales), float(min_rel), float(max_im),
                            float(min_sample), fails)


def prestate_refined(snap: StateSnapshot, word) -> complex:
    """Refined pre-state on canonical words for a paired snapshot."""
    if snap.mode != "refined":
        raise SpecError("prestate_refined needs a paired snapshot")
    return prestate(snap, word)


def refined_state_eval(snap: StateSnapshot, element) -> complex:
    """Refined functional extended to arbitrary elements by the same normal ordering."""
    if snap.mode != "refined":
        raise SpecError("refined_state_eval needs a paired snapshot")
    vals, _ = sample_values(snap, element)
    return complex(snap.probabilities @ vals)


def refined_positivity_minimum(snap: StateSnapshot, elements) -> float:
    """Smallest ``Re omega_ref(A* A) / scale`` over ``elements``; no sign is asserted."""
    p = snap.probabilities
    best = np.inf
    for A in elements:
        A = _as_element(A)
        vals, sc = sample_values(snap, A.star() * A)
        best = min(best, float((p @ vals).real / max(float(p @ sc), np.finfo(float).tiny)))
    return best


def state_localized(snap: StateSnapshot, word) -> complex:
    """State of a localized snapshot (weights ``exp(alpha T_V + beta gamma_V)``)."""
    if snap.mode != "localized":
        raise SpecError("state_localized needs a localized snapshot")
    vals, _ = sample_values(snap, word)
    return complex(snap.probabilities @ vals)


def random_element(rng: np.random.Generator, n_bosons: int, n_fermions: int, max_degree: int = 3,
                   terms: int = 3) -> AlgebraElement:
    """Random combination of words of length at most ``max_degree``."""
    kinds = [k for k, n in (("ad", n_bosons), ("a", n_bosons), ("fd", n_fermions), ("f", n_fermions)) if n > 0]
    items = []
    for _ in range(terms):
        deg = int(rng.integers(0, max_degree + 1))
        letters = []
        for _ in range(deg):
            k = kinds[int(rng.integers(len(kinds)))]
            n = n_bosons if k in ("ad", "a") else n_fermions
            letters.append((k, int(rng.integers(n))))
        items.append((tuple(letters), complex(rng.standard_normal(), rng.standard_normal())))
    return AlgebraElement.from_terms(items)
