"""Causal action, constraints, the function ell, jets and a constrained minimizer."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .measure import DiscreteMeasure, lagrangian_matrix
from .operators import LagrangianParams, SpacetimePoint, SpecError, lagrangian, spectral_weight, product_spectrum


def fd_step(psi: np.ndarray) -> float:
    """Default finite-difference step ``1e-5 (1 + |psi|)``."""
    return 1e-5 * (1.0 + float(np.linalg.norm(psi)))


def central_difference(fn, h: float) -> float:
    """Central difference of a scalar function of ``tau`` at zero."""
    if h <= 0 or h < 1e-14:
        raise SpecError(f"finite-difference step underflow: h={h}")
    return (fn(h) - fn(-h)) / (2 * h)


def richardson_gap(fn, h: float) -> tuple[float, float]:
    """Central difference at ``h`` and the discrepancy to the one at ``h/2``.

    A discrepancy much larger than ``h^2`` signals a non-smooth point
    such as an eigenvalue crossing.
    """
    d1 = central_difference(fn, h)
    d2 = central_difference(fn, h / 2)
    return d2, abs(d1 - d2)


@dataclass(frozen=True, eq=False)
class Jet:
    """A scalar component ``a_i`` and a wave-evaluation variation ``dpsi_i`` per point."""

    scalar: np.ndarray
    dpsi: np.ndarray

    def __post_init__(self):
        a = np.array(self.scalar, dtype=float)
        d = np.array(self.dpsi, dtype=complex)
        if d.ndim != 3 or d.shape[0] != a.shape[0]:
            raise SpecError("jet components have inconsistent lengths")
        object.__setattr__(self, "scalar", a)
        object.__setattr__(self, "dpsi", d)

    @classmethod
    def zero(cls, rho: DiscreteMeasure) -> "Jet":
        return cls(np.zeros(len(rho)), np.zeros((len(rho), 2 * rho.spec.n, rho.spec.f), dtype=complex))

    def direction(self, rho: DiscreteMeasure, i: int) -> np.ndarray:
        """Induced operator direction ``-dpsi^H sig psi - psi^H sig dpsi`` at point ``i``."""
        p = rho.points[i]
        d = self.dpsi[i]
        sig = p.sig
        a = -(d.conj().T * sig) @ p.psi
        return a + a.conj().T

    def __add__(self, other: "Jet") -> "Jet":
        return Jet(self.scalar + other.scalar, self.dpsi + other.dpsi)

    def scale(self, c: float) -> "Jet":
        return Jet(c * self.scalar, c * self.dpsi)


def check_jet(rho: DiscreteMeasure, jet: Jet):
    if jet.dpsi.shape != (len(rho), 2 * rho.spec.n, rho.spec.f):
        raise SpecError(f"jet shape {jet.dpsi.shape} does not match measure")


@dataclass
class ActionReport:
    action: float
    volume: float
    trace_integral: float
    boundedness: float
    ell: np.ndarray
    weak_el_residual: float


def causal_action(rho: DiscreteMeasure, params: LagrangianParams) -> float:
    L = lagrangian_matrix(rho, rho, params)
    return float(rho.weights @ L @ rho.weights)


def constraints(rho: DiscreteMeasure, params: LagrangianParams | None = None) -> tuple[float, float, float]:
    """Volume, trace integral and boundedness functional."""
    params = params or LagrangianParams(n=rho.spec.n)
    w = rho.weights
    tr = np.array([np.trace(p.op).real for p in rho.points])
    sw = np.array([[spectral_weight(product_spectrum(x, y, params)) for y in rho.points] for x in rho.points])
    return float(np.sum(w)), float(w @ tr), float(w @ (sw**2) @ w)


def ell_at(x: SpacetimePoint, rho: DiscreteMeasure, params: LagrangianParams) -> float:
    """``ell(x) = sum_j L(x, x_j) rho_j - s_vol`` for an arbitrary point ``x``."""
    return sum(lagrangian(x, y, params) * w for y, w in zip(rho.points, rho.weights)) - params.s_vol


def ell(rho: DiscreteMeasure, params: LagrangianParams) -> np.ndarray:
    L = lagrangian_matrix(rho, rho, params)
    return L @ rho.weights - params.s_vol


def jet_derivative_ell(rho: DiscreteMeasure, jet: Jet, params: LagrangianParams, h: float | None = None) -> np.ndarray:
    """``a_i ell(x_i) + D_u ell(x_i)`` with the directional part by central differences."""
    check_jet(rho, jet)
    base = ell(rho, params)
    out = jet.scalar * base
    for i, p in enumerate(rho.points):
        d = jet.dpsi[i]
        if not np.any(d):
            continue
        step = h if h is not None else fd_step(p.psi)
        out[i] += central_difference(lambda t: ell_at(SpacetimePoint(p.psi + t * d), rho, params), step)
    return out


def canonical_jet_directions(spec, i: int, n_points: int):
    """Elementary complex variations of ``psi_i`` acting on the fermionic columns."""
    for a in range(2 * spec.n):
        for k in range(spec.f_fermi):
            for phase in (1.0, 1j):
                d = np.zeros((n_points, 2 * spec.n, spec.f), dtype=complex)
                d[i, a, k] = phase
                yield d


def el_components(rho: DiscreteMeasure, params: LagrangianParams):
    """Raw EL data: ``sum_j L rho_j`` per point and the directional derivatives.

    Returns the per-point values of ``sum_j L(x_i, x_j) rho_j``, the derivative
    of that sum along each canonical direction and the derivative of the local
    trace along the same directions.
    """
    vals = ell(rho, params.replace(s_vol=0.0))
    rows = []
    for i, p in enumerate(rho.points):
        step = fd_step(p.psi)
        p0 = params.replace(s_vol=0.0)
        for d in canonical_jet_directions(rho.spec, i, len(rho)):
            di = d[i]
            dl = central_difference(lambda t: ell_at(SpacetimePoint(p.psi + t * di), rho, p0), step)
            u = Jet(np.zeros(len(rho)), d).direction(rho, i)
            rows.append((i, dl, float(np.trace(u).real)))
    return vals, rows


def fit_multipliers(rho: DiscreteMeasure, params: LagrangianParams) -> tuple[float, float]:
    """Least-squares estimates of the volume and trace multipliers.

    The volume multiplier is the mean of ``sum_j L(x_i, x_j) rho_j`` over the
    support; the trace multiplier fits the directional derivatives of ``ell``
    to those of the local trace.
    """
    vals, rows = el_components(rho, params)
    s = float(np.mean(vals))
    dl = np.array([r[1] for r in rows])
    dt = np.array([r[2] for r in rows])
    denom = float(dt @ dt)
    r = float(dl @ dt / denom) if denom > 0 else 0.0
    return s, r


def weak_el_residual(rho: DiscreteMeasure, params: LagrangianParams, fit: bool = True) -> float:
    """Maximum of ``|nabla_u ell|`` over unit scalar jets and canonical directions.

    With ``fit`` the multipliers are estimated first; otherwise ``params.s_vol``
    and ``params.r_trace`` are used as given.
    """
    s, r = fit_multipliers(rho, params) if fit else (params.s_vol, params.r_trace)
    vals, rows = el_components(rho, params)
    res = np.abs(vals - s).tolist()
    res += [abs(dl - r * dt) for _, dl, dt in rows]
    return float(max(res))


def report(rho: DiscreteMeasure, params: LagrangianParams) -> ActionReport:
    vol, tr, bd = constraints(rho, params)
    return ActionReport(
        action=causal_action(rho, params),
        volume=vol,
        trace_integral=tr,
        boundedness=bd,
        ell=ell(rho, params),
        weak_el_residual=weak_el_residual(rho, params),
    )


@dataclass
class MinimizeOptions:
    max_iters: int = 300
    step: float = 1e-5
    penalty_weights: tuple = (1.0, 1.0)
    seed: int = 0
    gtol: float = 1e-10
    min_weight_fraction: float = 1e-3


@dataclass
class MinimizeResult:
    measure: DiscreteMeasure
    trace: list = field(default_factory=list)
    converged: bool = True
    message: str = ""
    s_vol: float = 0.0
    r_trace: float = 0.0

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["iteration", "action", "volume", "trace_integral", "boundedness", "residual"])
        for row in self.trace:
            w.writerow([row["iteration"]] + [repr(row[k]) for k in ("action", "volume", "trace_integral", "boundedness", "residual")])
        return buf.getvalue()


class _FeasibleParam:
    """Maps unconstrained real vectors to measures with fixed local traces and volume.

    Each raw ``psi`` is rescaled so that ``tr(op_i)`` equals its starting value,
    and weights are ``volume * softmax(w)``.  Every point of the parameter space
    is therefore feasible, which keeps volume and trace integral fixed.
    """

    def __init__(self, rho: DiscreteMeasure):
        self.rho = rho
        self.shape = (len(rho), 2 * rho.spec.n, rho.spec.f)
        self.traces = np.array([np.trace(p.op).real for p in rho.points])
        if np.any(np.abs(self.traces) < 1e-12):
            raise SpecError("minimizer needs points with nonzero local trace")
        self.volume = rho.volume
        self.sig = rho.points[0].sig

    def encode(self, rho: DiscreteMeasure) -> np.ndarray:
        psi = rho.psi_stack()
        w = np.log(rho.weights)
        return np.concatenate([psi.real.ravel(), psi.imag.ravel(), w - w.mean()])

    def decode(self, z: np.ndarray) -> DiscreteMeasure:
        m = int(np.prod(self.shape))
        psi = (z[:m] + 1j * z[m : 2 * m]).reshape(self.shape)
        tr = -np.einsum("iak,a,iak->i", psi.conj(), self.sig, psi).real
        ratio = self.traces / tr
        if np.any(ratio <= 0):
            return None
        psi = psi * np.sqrt(ratio)[:, None, None]
        w = z[2 * m :]
        w = np.exp(w - w.max())
        w = self.volume * w / w.sum()
        return DiscreteMeasure([SpacetimePoint(p) for p in psi], w, self.rho.times, self.rho.spec)


def minimize(rho0: DiscreteMeasure, params: LagrangianParams, options: MinimizeOptions | None = None) -> MinimizeResult:
    """Decrease the causal action at fixed volume and local traces.

    Iterates with L-BFGS on a feasible parameterization, using a
    central-difference gradient.  Only iterates that do not increase the action
    are recorded, so the reported action sequence is non-increasing.
    """
    options = options or MinimizeOptions()

    def objective(z):
        rho = par.decode(z)
        if rho is None:
            return np.inf
        return causal_action(rho, params)

    def grad(z):
        g = np.zeros_like(z)
        h = options.step * (1.0 + np.linalg.norm(z) / np.sqrt(len(z)))
        for k in range(len(z)):
            e = np.zeros_like(z)
            e[k] = h
            g[k] = (objective(z + e) - objective(z - e)) / (2 * h)
        return g

    def row(it, rho):
        vol, tr, bd = constraints(rho, params)
        return {
            "iteration": it,
            "action": causal_action(rho, params),
            "volume": vol,
            "trace_integral": tr,
            "boundedness": bd,
            "residual": weak_el_residual(rho, params),
        }

    trace = [row(0, rho0)]
    if trace[0]["action"] == 0.0 or trace[0]["residual"] < options.gtol:
        s, r = fit_multipliers(rho0, params)
        return MinimizeResult(rho0, trace, True, "initial measure is already critical", s, r)
    par = _FeasibleParam(rho0)
    z0 = par.encode(rho0)
    best = {"z": z0, "f": trace[0]["action"]}
    history = []

    def callback(zk):
        fk = objective(zk)
        if fk <= best["f"]:
            best["z"], best["f"] = zk.copy(), fk
            history.append(zk.copy())

    res = optimize.minimize(
        objective,
        z0,
        jac=grad,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": options.max_iters, "gtol": options.gtol, "ftol": 1e-15},
    )
    if objective(res.x) <= best["f"]:
        best["z"] = res.x
    for it, zk in enumerate(history, start=1):
        if it % max(1, len(history) // 20) == 0 or it == len(history):
            trace.append(row(it, par.decode(zk)))
    final = par.decode(best["z"])
    s, r = fit_multipliers(final, params)
    return MinimizeResult(final, trace, bool(res.success), str(res.message), s, r)
