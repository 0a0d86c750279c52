import numpy as np
import pytest

from cfslab.measure import InteractionMap, RegionMask
from cfslab.operators import SpecError
from cfslab.state import (
    AlgebraElement,
    GroupSpec,
    StateSnapshot,
    diagonal_refined,
    fermionic_projector,
    haar_sample,
    insertion_bosonic,
    localized_partition_function,
    normal_order,
    partition_function,
    positivity_check,
    prestate,
    random_element,
    refined_state_eval,
    reweighted,
    state_eval,
    state_localized,
)
from cfslab.surface import CutSpec

import oracles


def el(text):
    return AlgebraElement.parse(text)


# --- Haar sampling -----------------------------------------------------------------------------

def test_trivial_group_gives_identity():
    assert np.array_equal(haar_sample(GroupSpec.trivial(4), 1), np.eye(4))


def test_torus_phase_has_zero_mean():
    rng = np.random.default_rng(0)
    S = 4000
    z = np.array([haar_sample(GroupSpec.torus(3, 1), rng)[0, 0] for _ in range(S)])
    assert np.allclose(np.abs(z), 1.0)
    assert abs(z.mean()) < 4 / np.sqrt(S)


def test_full_unitary_moments():
    rng = np.random.default_rng(1)
    S = 4000
    Us = [haar_sample(GroupSpec.full_unitary(4, 2), rng) for _ in range(S)]
    for U in Us[:20]:
        assert np.allclose(U @ U.conj().T, np.eye(4), atol=1e-12)
        assert np.array_equal(U[2:, 2:], np.eye(2))
    m2 = np.mean([abs(U[0, 0]) ** 2 for U in Us])
    m4 = np.mean([abs(U[0, 0]) ** 4 for U in Us])
    # for U(2), |U_00|^2 is uniform on [0, 1]
    assert m2 == pytest.approx(0.5, abs=4 * np.sqrt(1 / 12 / S))
    assert m4 == pytest.approx(1 / 3, abs=0.02)


def test_group_validation():
    with pytest.raises(SpecError):
        GroupSpec("dihedral", 4, 1)
    with pytest.raises(SpecError):
        GroupSpec.torus(4, 2, embed=(0, 4))


# --- partition function ------------------------------------------------------------------------

def test_beta_zero_gives_unit_partition_function(fixb, fixb_map, cut, params):
    Z, err, snap = partition_function(None, fixb, fixb_map, cut, 0.0, GroupSpec.full_unitary(4, 2), 32, 5,
                                      params=params)
    assert Z == 1.0 and err == 0.0
    assert np.allclose(snap.probabilities, 1 / 32)


def test_identity_map_trivial_group(fixb, cut, params):
    Z, err, _ = partition_function(None, fixb, InteractionMap.identity(fixb), cut, 3.0, None, 4, 0, params=params)
    assert Z == 1.0 and err == 0.0


def test_partition_function_matches_oracle(fixb, fixb_map, cut, params):
    Z, _, snap = partition_function(None, fixb, fixb_map, cut, 0.7, GroupSpec.torus(4, 2), 6, 11, params=params)
    psis = [p.psi for p in fixb.points]
    targets = [p.psi for p in fixb_map.target]
    ref = np.mean([np.exp(0.7 * oracles.gamma_sum(psis, targets, fixb.weights, fixb_map.fweight, fixb.times,
                                                  cut.t, 1, U)) for U in snap.samples])
    assert Z == pytest.approx(ref, rel=1e-9)


def test_reweighted_matches_fresh_build(small_snapshot, fixb, fixb_map, cut, params, fixb_modes):
    bos, fer = fixb_modes
    Z, _, fresh = partition_function(None, fixb, fixb_map, cut, 2.0, GroupSpec.torus(4, 2), 64, 3, params=params,
                                     bosons=bos, fermions=fer)
    rw = reweighted(small_snapshot, 2.0)
    assert rw.Z_hat == pytest.approx(Z, rel=1e-12)
    assert np.allclose(rw.logweights, fresh.logweights, rtol=1e-12)


# --- insertions --------------------------------------------------------------------------------

def _gamma(snap, U, dpsi):
    ctx = snap.context
    psis = [p.psi + d for p, d in zip(ctx.rho.points, dpsi)]
    return oracles.gamma_sum(psis, [p.psi for p in ctx.fmap.target], ctx.rho.weights, ctx.fmap.fweight,
                             ctx.rho.times, ctx.cut.t, ctx.rho.spec.n, U)


def _ddir(snap, s, d, h):
    return oracles.central(lambda tau: _gamma(snap, snap.ket[s], tau * d), h)


def test_insertion_zero_vector(small_snapshot):
    assert insertion_bosonic(small_snapshot, 0, np.zeros(3)) == 0
    assert insertion_bosonic(small_snapshot, 0, np.zeros(3), conjugated=True) == 0


def test_bosonic_insertion_matches_brute_force(small_snapshot):
    snap = small_snapshot
    bos = snap.context.bosons
    s = 2
    for m in range(bos.count):
        got = snap.tables.alpha[s, m]

        def ref(h):
            return _ddir(snap, s, bos.dpsi_re[m], h) + 1j * _ddir(snap, s, bos.dpsi_im[m], h)

        e1, e2 = abs(ref(1e-2) - got), abs(ref(5e-3) - got)
        assert oracles.observed_order(e1, e2, 1e-7 * max(1.0, abs(got))) >= 1.8
        assert snap.tables.alpha_bar[s, m] == pytest.approx(np.conj(got), abs=1e-12)


def test_fermionic_insertion_matches_brute_force(small_snapshot):
    snap = small_snapshot
    fer = snap.context.fermions
    s = 1
    shape = snap.context.psi.shape
    for k in range(min(fer.count, 3)):
        for l in range(snap.context.rho.spec.f_fermi):
            d = np.zeros(shape, dtype=complex)
            d[:, :, l] = fer.frames[k]
            got = snap.tables.V[s, l, k]

            def ref(h):
                return (_ddir(snap, s, d, h) - 1j * _ddir(snap, s, 1j * d, h)) / 2

            e1, e2 = abs(ref(1e-2) - got), abs(ref(5e-3) - got)
            assert oracles.observed_order(e1, e2, 1e-7 * max(1.0, abs(got))) >= 1.8


def test_fermionic_form_is_psd_with_bounded_rank(small_snapshot):
    ff = small_snapshot.context.rho.spec.f_fermi
    for s in range(small_snapshot.sample_count):
        B, pi = fermionic_projector(small_snapshot, s)
        assert np.allclose(B, B.conj().T, atol=1e-12)
        ev = np.linalg.eigvalsh(B)
        assert ev.min() >= -1e-10 * max(1.0, ev.max())
        assert np.linalg.matrix_rank(pi, tol=1e-8) <= ff
        assert np.allclose(pi @ pi, pi, atol=1e-10)


# --- field algebra -----------------------------------------------------------------------------

def test_parse_and_format_round_trip():
    A = el("(0.5-1j)*ad(z1) fd(p2) + a(z3) + 1")
    assert AlgebraElement.parse(A.format()) == A
    with pytest.raises(SpecError):
        el("ad(p1)")
    with pytest.raises(SpecError):
        el("ad(z1) junk")


def test_normal_order_contractions():
    assert dict(normal_order((("a", 0), ("ad", 0)))) == {(("ad", 0), ("a", 0)): 1, (): 1}
    assert dict(normal_order((("f", 0), ("fd", 1)))) == {(("fd", 1), ("f", 0)): -1}
    assert dict(normal_order((("f", 2), ("fd", 2)))) == {(("fd", 2), ("f", 2)): -1, (): 1}


def test_prestate_basics(small_snapshot):
    snap = small_snapshot
    assert prestate(snap, ()) == pytest.approx(1.0)
    assert prestate(snap, (("fd", 0), ("fd", 1), ("f", 0))) == 0
    p = snap.probabilities
    assert prestate(snap, (("ad", 1),)) == pytest.approx(p @ snap.tables.alpha[:, 1])


def test_canonical_relations(small_snapshot):
    snap = small_snapshot
    assert state_eval(snap, el("a(z1) ad(z1) + (-1)*ad(z1) a(z1)")) == pytest.approx(1.0, abs=1e-12)
    assert state_eval(snap, el("a(z1) ad(z2) + (-1)*ad(z2) a(z1)")) == pytest.approx(0.0, abs=1e-12)
    assert state_eval(snap, el("f(p1) fd(p1) + fd(p1) f(p1)")) == pytest.approx(1.0, abs=1e-12)
    assert state_eval(snap, el("f(p1) fd(p2) + fd(p2) f(p1)")) == pytest.approx(0.0, abs=1e-12)
    assert state_eval(snap, el("fd(p1) fd(p1)")) == pytest.approx(0.0, abs=1e-12)


def test_fermionic_antisymmetry(small_snapshot):
    a = state_eval(small_snapshot, el("fd(p1) fd(p2) f(p2) f(p1)"))
    b = state_eval(small_snapshot, el("fd(p2) fd(p1) f(p2) f(p1)"))
    assert a == pytest.approx(-b, abs=1e-12)


def test_star_compatibility(small_snapshot):
    rng = np.random.default_rng(4)
    for _ in range(10):
        A = random_element(rng, 3, 3)
        assert state_eval(small_snapshot, A.star()) == pytest.approx(np.conj(state_eval(small_snapshot, A)),
                                                                     abs=1e-9)


def test_positivity(small_snapshot):
    rng = np.random.default_rng(5)
    els = [random_element(rng, 3, 3) for _ in range(20)]
    rep = positivity_check(small_snapshot, els)
    assert rep.passed, rep


def test_out_of_range_mode(small_snapshot):
    with pytest.raises(SpecError):
        state_eval(small_snapshot, el("ad(z9)"))


# --- variants ----------------------------------------------------------------------------------

def test_diagonal_refined_reproduces_plain_state(small_snapshot):
    ref = diagonal_refined(small_snapshot)
    rng = np.random.default_rng(6)
    for _ in range(10):
        A = random_element(rng, 3, 3)
        assert refined_state_eval(ref, A) == pytest.approx(state_eval(small_snapshot, A), abs=1e-10)
    with pytest.raises(SpecError):
        state_eval(ref, el("ad(z1)"))


def test_localized_everything_matches_plain(fixb, fixb_map, params, fixb_modes):
    bos, fer = fixb_modes
    group = GroupSpec.torus(4, 2)
    _, _, plain = partition_function(None, fixb, fixb_map, CutSpec(1.5), 1.0, group, 16, 2, params=params,
                                     bosons=bos, fermions=fer)
    _, _, loc = localized_partition_function(None, fixb, fixb_map, CutSpec(1.5, RegionMask.everything(4)), 1.0, 0.0,
                                             group, 16, 2, params=params, bosons=bos, fermions=fer)
    assert loc.log_Z == pytest.approx(plain.log_Z, abs=1e-12)
    for w in ("ad(z1) a(z2)", "fd(p1) f(p1)"):
        assert state_localized(loc, el(w)) == pytest.approx(state_eval(plain, el(w)), abs=1e-10)


def test_snapshot_round_trip(small_snapshot):
    d = small_snapshot.to_dict()
    back = StateSnapshot.from_dict(d, small_snapshot.context)
    assert np.array_equal(back.ket, small_snapshot.ket)
    assert np.array_equal(back.logweights, small_snapshot.logweights)
    assert back.to_dict() == d
    w = el("ad(z1) fd(p1) f(p1)")
    assert state_eval(back, w) == state_eval(small_snapshot, w)


def test_partition_function_stable_across_seeds(fixb, fixb_map, cut, params):
    group = GroupSpec.torus(4, 2)
    est = [partition_function(None, fixb, fixb_map, cut, 0.5, group, 256, seed, params=params)[:2] for seed in range(6)]
    Z = np.array([e[0] for e in est])
    err = np.array([e[1] for e in est])
    assert np.all(np.abs(Z - Z.mean()) <= 3 * err)


def test_large_alpha_concentrates_on_largest_t(fixb, fixb_map, params):
    from cfslab.surface import t_functional

    region = CutSpec(1.5, RegionMask(np.array([True, True, True, False])))
    for seed in (0, 1, 2):
        _, _, snap = localized_partition_function(None, fixb, fixb_map, region, 1.0, 200.0, GroupSpec.torus(4, 2),
                                                  32, seed, params=params)
        tv = [t_functional(None, fixb, fixb_map, region, params, U) for U in snap.samples]
        assert int(np.argmax(snap.probabilities)) == int(np.argmax(tv))
        assert snap.probabilities.max() > 0.5


def test_refined_conjugation_flip(fixb, fixb_map, cut, params, fixb_modes):
    from cfslab.state import refined_partition_function

    bos, fer = fixb_modes
    _, _, snap = refined_partition_function(None, fixb, fixb_map, cut, 1.0, GroupSpec.torus(4, 2), 8, 4,
                                            params=params, bosons=bos, fermions=fer)
    flipped = StateSnapshot(snap.bra, snap.ket, snap.logweights, snap.log_Z, snap.stderr, snap.seed,
                            snap.sample_count, snap.beta, snap.alpha, snap.cut, "refined", snap.context)
    assert np.allclose(np.conj(snap.tables.alpha), flipped.tables.alpha_bar, atol=1e-12)
    assert refined_state_eval(snap, el("1")) == pytest.approx(1.0)
