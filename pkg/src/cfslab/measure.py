"""Discrete measures: weighted, time-labelled point sets and maps between them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import HilbertSpec, LagrangianParams, SpacetimePoint, SpecError, lagrangian


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    points: tuple
    weights: np.ndarray
    times: np.ndarray
    spec: HilbertSpec

    def __post_init__(self):
        pts = tuple(self.points)
        w = np.array(self.weights, dtype=float)
        t = np.array(self.times, dtype=float)
        if not (len(pts) == len(w) == len(t)):
            raise SpecError("points, weights and times must have equal length")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise SpecError("weights must be strictly positive and finite")
        for p in pts:
            if p.psi.shape != (2 * self.spec.n, self.spec.f):
                raise SpecError(f"point shape {p.psi.shape} does not match spec {self.spec}")
        w.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "times", t)

    def __len__(self):
        return len(self.points)

    @property
    def volume(self) -> float:
        return float(np.sum(self.weights))

    def omega(self, t: float) -> np.ndarray:
        """Boolean mask of the past set ``{i : t_i <= t}``."""
        return self.times <= t

    def with_points(self, points) -> "DiscreteMeasure":
        return DiscreteMeasure(tuple(points), self.weights, self.times, self.spec)

    def with_weights(self, weights) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, weights, self.times, self.spec)

    def psi_stack(self) -> np.ndarray:
        return np.stack([p.psi for p in self.points])


@dataclass(frozen=True, eq=False)
class InteractionMap:
    """Index-wise map ``x_i -> F(x_i)`` with a positive density ``f_i``."""

    target: tuple
    fweight: np.ndarray | None = None

    def __post_init__(self):
        tgt = tuple(self.target)
        fw = np.ones(len(tgt)) if self.fweight is None else np.array(self.fweight, dtype=float)
        if len(fw) != len(tgt):
            raise SpecError("fweight length differs from target length")
        if np.any(fw <= 0):
            raise SpecError("fweight must be positive")
        object.__setattr__(self, "target", tgt)
        object.__setattr__(self, "fweight", fw)

    @classmethod
    def identity(cls, rho: DiscreteMeasure, fweight=None) -> "InteractionMap":
        return cls(rho.points, fweight)


@dataclass(frozen=True)
class RegionMask:
    member: np.ndarray

    @classmethod
    def everything(cls, size: int) -> "RegionMask":
        return cls(np.ones(size, dtype=bool))


def push_forward(rho: DiscreteMeasure, fmap: InteractionMap) -> DiscreteMeasure:
    """The measure with points ``F(x_i)``, weights ``f_i rho_i`` and the same times."""
    if len(fmap.target) != len(rho):
        raise SpecError("map length differs from measure length")
    return DiscreteMeasure(fmap.target, fmap.fweight * rho.weights, rho.times, rho.spec)


def check_unitary(U, tol: float = 1e-10) -> np.ndarray:
    U = np.asarray(U, dtype=complex)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise SpecError("U must be square")
    if np.linalg.norm(U.conj().T @ U - np.eye(U.shape[0])) > tol * U.shape[0]:
        raise SpecError("U is not unitary")
    return U


def conjugate_point(p: SpacetimePoint, U) -> SpacetimePoint:
    """The point with operator ``U op U^{-1}``, i.e. ``psi -> psi U^H``."""
    return SpacetimePoint(p.psi @ np.asarray(U).conj().T)


def unitary_transform(rho: DiscreteMeasure, U) -> DiscreteMeasure:
    U = check_unitary(U)
    if U.shape[0] != rho.spec.f:
        raise SpecError("U has the wrong dimension")
    return rho.with_points([conjugate_point(p, U) for p in rho.points])


def lagrangian_matrix(a: DiscreteMeasure, b: DiscreteMeasure, params: LagrangianParams) -> np.ndarray:
    """Matrix ``L(a_i, b_j)``."""
    return np.array([[lagrangian(x, y, params) for y in b.points] for x in a.points])


def correlation_measure(rho: DiscreteMeasure, rhotil: DiscreteMeasure, params: LagrangianParams):
    """Correlation measures ``(nu, nu_tilde)``.

    ``nu_i = rho_i sum_j L(x_i, xt_j) rhot_j`` and
    ``nu_tilde_i = rhot_i sum_j L(xt_i, x_j) rho_j``.
    """
    L = lagrangian_matrix(rho, rhotil, params)
    nu = rho.weights * (L @ rhotil.weights)
    nut = rhotil.weights * (L.T @ rho.weights)
    return nu, nut


def surface_layer_admissible(rho: DiscreteMeasure) -> bool:
    """Finite sums are always admissible; kept to make the check explicit."""
    return True
