"""Small reference systems used by the tests and the command line."""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from .measure import DiscreteMeasure, InteractionMap
from .operators import HilbertSpec, SpacetimePoint, SpecError, point_from_operator, random_point


def fix_a() -> DiscreteMeasure:
    """Two points ``diag(2, -1)`` at ``t = 0`` and ``[[0, 1], [1, 0]]`` at ``t = 1``."""
    spec = HilbertSpec(f=2, n=1, f_fermi=1)
    x1 = point_from_operator(np.diag([2.0, -1.0]), 1)
    x2 = point_from_operator(np.array([[0.0, 1.0], [1.0, 0.0]]), 1)
    return DiscreteMeasure([x1, x2], [1.0, 1.0], [0.0, 1.0], spec)


def _regular_point(rng, f, n, trace):
    while True:
        p = random_point(rng, f, n)
        tr = np.trace(p.op).real
        if p.is_regular() and tr * trace > 0 and abs(tr) > 0.05:
            return SpacetimePoint(p.psi * np.sqrt(trace / tr))


def random_system(seed: int = 0, points: int = 4, f: int = 4, n: int = 1, f_fermi: int = 2,
                  trace: float = 1.0) -> DiscreteMeasure:
    """Seeded regular system with local trace ``trace`` at every point.

    Times are ``0, 1, ..., points - 1`` and weights are drawn from ``[0.5, 1.5]``.
    """
    if points < 1:
        raise SpecError("a system needs at least one point")
    spec = HilbertSpec(f=f, n=n, f_fermi=f_fermi)
    rng = np.random.default_rng(seed)
    pts = [_regular_point(rng, f, n, trace) for _ in range(points)]
    w = rng.uniform(0.5, 1.5, size=points)
    return DiscreteMeasure(pts, w, np.arange(points, dtype=float), spec)


def clustered_system(seed: int = 0, points: int = 4, f: int = 4, f_fermi: int = 2,
                     spread: float = 0.5) -> DiscreteMeasure:
    """Regular ``n = 1`` points obtained by rotating one reference operator.

    Each operator is ``U_i diag(1 + a_i, -a_i, 0, ...) U_i^H`` with
    ``U_i = V exp(i spread H_i)`` for a common Haar frame ``V`` and Hermitian
    Gaussian ``H_i``.  Every local trace is 1.  Small ``spread`` gives mostly
    timelike pairs, larger values mix in spacelike ones.
    """
    if points < 1:
        raise SpecError("a system needs at least one point")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((f, f)) + 1j * rng.standard_normal((f, f))
    V, _ = np.linalg.qr(G)
    pts = []
    for _ in range(points):
        a = rng.uniform(0.3, 0.7)
        H = rng.standard_normal((f, f)) + 1j * rng.standard_normal((f, f))
        U = V @ expm(0.5j * spread * (H + H.conj().T))
        d = np.zeros(f)
        d[:2] = [1 + a, -a]
        pts.append(point_from_operator((U * d) @ U.conj().T, 1))
    w = rng.uniform(0.5, 1.5, size=points)
    spec = HilbertSpec(f=f, n=1, f_fermi=f_fermi)
    return DiscreteMeasure(pts, w, np.arange(points, dtype=float), spec)


def fix_b(seed: int = 0) -> DiscreteMeasure:
    """Four regular points with ``f = 4``, ``n = 1`` and ``f_fermi = 2``."""
    return clustered_system(seed=seed)


def perturbed_map(rho: DiscreteMeasure, seed: int = 0, size: float = 0.05) -> InteractionMap:
    """Interaction map moving each point by a small seeded Gaussian change of ``psi``.

    The densities ``f_i`` are drawn from ``[1 - size, 1 + size]``.
    """
    rng = np.random.default_rng(seed)
    targets = []
    for p in rho.points:
        noise = rng.standard_normal(p.psi.shape) + 1j * rng.standard_normal(p.psi.shape)
        targets.append(SpacetimePoint(p.psi + size * noise))
    fw = 1.0 + size * rng.uniform(-1.0, 1.0, size=len(rho))
    return InteractionMap(tuple(targets), fw)
