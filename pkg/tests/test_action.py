import numpy as np
import pytest

from cfslab.action import (
    Jet,
    MinimizeOptions,
    causal_action,
    constraints,
    ell,
    jet_derivative_ell,
    minimize,
    richardson_gap,
    weak_el_residual,
)
from cfslab.measure import DiscreteMeasure
from cfslab.operators import HilbertSpec, point_from_operator

from oracles import lagrangian as oracle_lagrangian
from oracles import op_of


def single(op, weight=1.0):
    return DiscreteMeasure([point_from_operator(op, 1)], [weight], [0.0], HilbertSpec(2, 1, 1))


def test_single_point_actions(params):
    assert causal_action(single(np.diag([1.0, -1.0])), params) == 0.0
    assert causal_action(single(np.diag([2.0, -1.0])), params) == pytest.approx(4.5)


def test_fix_a_action_and_constraints(fixa, params):
    assert causal_action(fixa, params) == pytest.approx(4.5)
    vol, tr, bd = constraints(fixa, params)
    assert vol == 2.0
    assert tr == pytest.approx(1.0)
    assert bd == pytest.approx(25 + 8 + 8 + 4)


def test_action_matches_oracle(fixb, params):
    ops = [op_of(p.psi) for p in fixb.points]
    w = fixb.weights
    ref = sum(w[i] * w[j] * oracle_lagrangian(ops[i], ops[j], 1) for i in range(4) for j in range(4))
    assert causal_action(fixb, params) == pytest.approx(ref, rel=1e-10)


def test_ell_values(params):
    assert ell(single(np.diag([1.0, -1.0])), params)[0] == 0.0
    assert ell(single(np.diag([2.0, -1.0])), params.replace(s_vol=4.5))[0] == pytest.approx(0.0, abs=1e-12)


def test_ell_shift_is_affine(fixb, params):
    a = ell(fixb, params)
    b = ell(fixb, params.replace(s_vol=0.75))
    assert np.allclose(a - b, 0.75, atol=1e-13)


def test_jet_derivative_trivial_cases(fixa, params):
    assert np.all(jet_derivative_ell(fixa, Jet.zero(fixa), params) == 0)
    z = Jet.zero(fixa)
    scalar = Jet(np.ones(len(fixa)), z.dpsi)
    assert np.allclose(jet_derivative_ell(fixa, scalar, params), ell(fixa, params))


def test_jet_derivative_matches_brute_force(fixa, params, rng):
    d = np.zeros((2, 2, 2), dtype=complex)
    d[0] = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    jet = Jet(np.zeros(2), d)
    got = jet_derivative_ell(fixa, jet, params)[0]
    ops = [op_of(p.psi) for p in fixa.points]

    def ell0(tau):
        x = op_of(fixa.points[0].psi + tau * d[0])
        return sum(oracle_lagrangian(x, o, 1) * w for o, w in zip(ops, fixa.weights))

    errs = [abs((ell0(h) - ell0(-h)) / (2 * h) - got) for h in (1e-2, 5e-3)]
    assert errs[1] < errs[0] / 3 or errs[0] < 1e-9


def test_richardson_gap_small_for_smooth_function():
    val, gap = richardson_gap(np.sin, 1e-3)
    assert val == pytest.approx(1.0, abs=1e-7)
    assert gap < 1e-6


def test_minimize_keeps_critical_measure(params):
    rho = single(np.diag([1.0, -1.0]))
    res = minimize(rho, params, MinimizeOptions(max_iters=5))
    assert res.measure is rho
    assert res.trace[-1]["residual"] < 1e-9


def test_minimize_monotone_and_feasible(params):
    from cfslab.fixtures import random_system

    rho = random_system(seed=3, points=3, f=3)
    res = minimize(rho, params, MinimizeOptions(max_iters=15))
    acts = [r["action"] for r in res.trace]
    assert all(b <= a + 1e-12 for a, b in zip(acts, acts[1:]))
    assert acts[-1] <= acts[0]
    assert abs(res.trace[-1]["volume"] - res.trace[0]["volume"]) < 1e-6
    assert abs(res.trace[-1]["trace_integral"] - res.trace[0]["trace_integral"]) < 1e-6
    assert res.trace_csv().splitlines()[0].startswith("iteration,action")


def test_weak_el_residual_zero_for_critical(params):
    assert weak_el_residual(single(np.diag([1.0, -1.0])), params) < 1e-9
