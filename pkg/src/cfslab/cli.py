"""Command-line front end.

System documents are JSON files::

    {"hilbert": {"f": 4, "n": 1, "f_fermi": 2},
     "params": {"kappa": 0.0, "c": 1.0, ...},
     "points": [{"psi": [[[re, im], ...], ...], "weight": 1.0, "time": 0.0}, ...],
     "map": [{"target_psi": ..., "fweight": 1.0}, ...],      # optional
     "region": [true, false, ...]}                          # optional

Floats are written with ``repr`` so a document reproduces the measure
bit for bit.  Exit codes: 0 when every check passes, 2 when a numerical
property fails, 1 on any other error.
"""

from __future__ import annotations

import csv
import functools
import io
import itertools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import fixtures
from .action import MinimizeOptions, minimize, report
from .fock import PropertyViolation, build_fock, density_from_state, verify_reconstruction
from .measure import DiscreteMeasure, InteractionMap, RegionMask
from .operators import (
    HilbertSpec,
    LagrangianParams,
    SpacetimePoint,
    SpecError,
    causal_report,
    lagrangian,
    product_spectrum,
    product_spectrum_full,
)
from .state import (
    AlgebraElement,
    GroupSpec,
    StateContext,
    StateSnapshot,
    bosonic_modes,
    fermionic_space,
    partition_function,
    positivity_check,
    random_element,
    state_eval,
)
from .surface import CutSpec, conservation_check

DOC_VERSION = 1


# ---------------------------------------------------------------------------
# Documents


def _encode_matrix(a) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(a, dtype=complex)]


def _decode_matrix(rows) -> np.ndarray:
    arr = np.array(rows, dtype=float)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise SpecError("matrices must be nested lists of [re, im] pairs")
    # assigning the parts keeps signed zeros, which ``re + 1j * im`` would lose
    out = np.empty(arr.shape[:-1], dtype=complex)
    out.real, out.imag = arr[..., 0], arr[..., 1]
    return out


def measure_to_document(rho: DiscreteMeasure, params: LagrangianParams | None = None,
                        fmap: InteractionMap | None = None, region=None) -> dict:
    params = params or LagrangianParams(n=rho.spec.n)
    doc = {
        "hilbert": {"f": rho.spec.f, "n": rho.spec.n, "f_fermi": rho.spec.f_fermi},
        "params": {k: float(getattr(params, k)) for k in ("kappa", "c", "s_vol", "r_trace", "eps_rank", "eps_causal")},
        "points": [{"psi": _encode_matrix(p.psi), "weight": float(w), "time": float(t)}
                   for p, w, t in zip(rho.points, rho.weights, rho.times)],
    }
    if fmap is not None:
        doc["map"] = [{"target_psi": _encode_matrix(p.psi), "fweight": float(f)}
                      for p, f in zip(fmap.target, fmap.fweight)]
    if region is not None:
        doc["region"] = [bool(b) for b in region]
    return doc


def document_to_system(doc: dict):
    """Parse a document into ``(rho, params, fmap or None, region or None)``."""
    try:
        h = doc["hilbert"]
        spec = HilbertSpec(int(h["f"]), int(h["n"]), int(h["f_fermi"]))
        pts = doc["points"]
        if not pts:
            raise SpecError("document has no points")
        rho = DiscreteMeasure([SpacetimePoint(_decode_matrix(p["psi"])) for p in pts],
                              [p["weight"] for p in pts], [p["time"] for p in pts], spec)
        pr = doc.get("params", {})
        params = LagrangianParams(n=spec.n, **{k: float(v) for k, v in pr.items()})
        fmap = None
        if doc.get("map") is not None:
            fmap = InteractionMap([SpacetimePoint(_decode_matrix(m["target_psi"])) for m in doc["map"]],
                                  [m.get("fweight", 1.0) for m in doc["map"]])
            if len(fmap.target) != len(rho):
                raise SpecError("map length differs from the number of points")
        region = None if doc.get("region") is None else RegionMask(np.array(doc["region"], dtype=bool))
    except (KeyError, TypeError) as exc:
        raise SpecError(f"malformed system document: missing or invalid {exc}") from exc
    return rho, params, fmap, region


def read_system(path):
    with open(path, encoding="utf-8") as fh:
        return document_to_system(json.load(fh))


def dumps(doc) -> str:
    return json.dumps(doc, indent=1, allow_nan=True) + "\n"


def map_between(a: DiscreteMeasure, b: DiscreteMeasure) -> InteractionMap:
    """Index-wise map from ``a`` to ``b``; the density is the weight ratio."""
    if len(a) != len(b) or a.spec != b.spec:
        raise SpecError("the two systems must have the same size and Hilbert space")
    return InteractionMap(b.points, b.weights / a.weights)


# ---------------------------------------------------------------------------
# Output helpers


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    return buf.getvalue()


def _emit(opts, header, rows, payload):
    text = _csv(header, rows) if opts["format"] == "csv" else dumps(payload)
    if opts["out"]:
        Path(opts["out"]).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


def _common(fn):
    @click.option("--seed", type=int, default=0, show_default=True, help="Seed of every random draw.")
    @click.option("--samples", type=int, default=512, show_default=True, help="Monte Carlo sample count.")
    @click.option("--beta", type=float, default=1.0, show_default=True)
    @click.option("--alpha", type=float, default=0.0, show_default=True)
    @click.option("--cut-time", type=float, default=None, help="Time t of the cut (default: middle of the time range).")
    @click.option("--tol", type=float, default=1e-9, show_default=True)
    @click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the result to a file.")
    @click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
    @functools.wraps(fn)
    def wrapper(*args, seed, samples, beta, alpha, cut_time, tol, out, fmt, **kw):
        opts = dict(seed=seed, samples=samples, beta=beta, alpha=alpha, cut_time=cut_time, tol=tol, out=out, format=fmt)
        return fn(*args, opts=opts, **kw)

    return wrapper


def _cut(rho: DiscreteMeasure, opts, region=None) -> CutSpec:
    t = opts["cut_time"]
    if t is None:
        t = float((rho.times.min() + rho.times.max()) / 2)
    return CutSpec(t, region)


def _group(name: str, f: int, k: int) -> GroupSpec:
    if name == "full":
        return GroupSpec.full_unitary(f, k)
    if name == "torus":
        return GroupSpec.torus(f, k)
    return GroupSpec.trivial(f)


def _fail(msg: str):
    raise PropertyViolation(msg)


# ---------------------------------------------------------------------------
# Commands


@click.group()
def main():
    """Numerical experiments with discrete causal fermion systems."""


@main.command()
@click.argument("kind", type=click.Choice(["fixA", "fixB", "random"]))
@click.option("--points", type=int, default=4, show_default=True)
@click.option("--f", "f", type=int, default=4, show_default=True)
@click.option("--n", "n", type=int, default=1, show_default=True)
@click.option("--f-fermi", type=int, default=2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def gen(kind, points, f, n, f_fermi, seed, out):
    """Write a fixture system document."""
    if kind == "fixA":
        rho = fixtures.fix_a()
    elif kind == "fixB":
        rho = fixtures.fix_b(seed)
    else:
        if points < 1:
            raise SpecError("--points must be at least 1")
        rho = fixtures.random_system(seed=seed, points=points, f=f, n=n, f_fermi=f_fermi)
    text = dumps(measure_to_document(rho))
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


@main.command()
@click.argument("system", type=click.Path(exists=True, dir_okay=False))
@_common
def action(system, opts):
    """Causal action, constraints and Euler-Lagrange residual."""
    rho, params, _, _ = read_system(system)
    r = report(rho, params)
    payload = {"action": r.action, "volume": r.volume, "trace_integral": r.trace_integral,
               "boundedness": r.boundedness, "weak_el_residual": r.weak_el_residual,
               "ell": [float(x) for x in r.ell]}
    rows = [[k, float(v)] for k, v in payload.items() if k != "ell"]
    rows += [[f"ell_{i}", float(v)] for i, v in enumerate(r.ell)]
    _emit(opts, ["quantity", "value"], rows, payload)


@main.command()
@click.argument("system", type=click.Path(exists=True, dir_okay=False))
@_common
def causal(system, opts):
    """Causal classification of every pair of points."""
    rho, params, _, _ = read_system(system)
    rows = []
    for i, x in enumerate(rho.points):
        for j, y in enumerate(rho.points):
            r = causal_report(x, y, params)
            rows.append([i, j, r.kind.value, float(r.modulus_spread), float(r.imag_ratio), r.near_threshold])
    header = ["i", "j", "causal_type", "modulus_spread", "imag_ratio", "near_threshold"]
    _emit(opts, header, rows, [dict(zip(header, r)) for r in rows])
    near = sum(r[-1] for r in rows)
    if near:
        click.echo(f"warning: {near} classification(s) within a factor 10 of eps_causal", err=True)


@main.command()
@click.argument("system", type=click.Path(exists=True, dir_okay=False))
@_common
def slo(system, opts):
    """Surface layer inner product and symplectic form on the jet basis, entry by entry."""
    from .linfield import jet_basis, pair_jet_data, surface_grams

    rho, params, _, region = read_system(system)
    cut = _cut(rho, opts, region)
    basis = jet_basis(rho)
    G, S = surface_grams(rho, cut, basis, pair_jet_data(rho, params, basis))
    rows = [[k, l, float(G[k, l]), float(S[k, l])] for k in range(G.shape[0]) for l in range(G.shape[1])
            if G[k, l] != 0 or S[k, l] != 0]
    header = ["k", "l", "surface_inner", "sigma"]
    _emit(opts, header, rows, {"cut_time": cut.t, "surface_inner": G.tolist(), "sigma": S.tolist()})


@main.command()
@click.option("--a", "a_path", type=click.Path(exists=True, dir_okay=False), required=True, help="System rho.")
@click.option("--b", "b_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Interacting system, identified with rho point by point.")
@_common
def gamma(a_path, b_path, opts):
    """Nonlinear surface layer integral, one row per pair across the cut."""
    rho, params, _, region = read_system(a_path)
    rhot, _, _, _ = read_system(b_path)
    fmap = map_between(rho, rhot)
    cut = _cut(rho, opts, region)
    inside, outside = cut.masks(rho)
    w, f, F = rho.weights, fmap.fweight, fmap.target
    rows, total = [], 0.0
    for i in np.flatnonzero(inside):
        for j in np.flatnonzero(outside):
            term = float(w[i] * w[j] * (f[i] * lagrangian(F[i], rho.points[j], params)
                                        - lagrangian(rho.points[i], F[j], params) * f[j]))
            total += term
            rows.append([int(i), int(j), term])
    rows.append(["total", "", total])
    _emit(opts, ["i", "j", "gamma_t"], rows, {"cut_time": cut.t, "gamma_t": total,
                                            "terms": [{"i": r[0], "j": r[1], "gamma_t": r[2]} for r in rows[:-1]]})


def _interaction(rho, fmap, b_path):
    if b_path:
        return map_between(rho, read_system(b_path)[0])
    return fmap if fmap is not None else InteractionMap.identity(rho)


@main.command()
@click.argument("system", type=click.Path(exists=True, dir_okay=False))
@click.option("--b", "b_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--group", type=click.Choice(["torus", "full", "trivial"]), default="torus", show_default=True)
@click.option("--k", "k", type=int, default=2, show_default=True, help="Number of unitarily moved coordinates.")
@_common
def partition(system, b_path, group, k, opts):
    """Monte Carlo estimate of the partition function."""
    rho, params, fmap, region = read_system(system)
    fmap = _interaction(rho, fmap, b_path)
    cut = _cut(rho, opts, region)
    Z, se, snap = partition_function(None, rho, fmap, cut, opts["beta"], _group(group, rho.spec.f, k),
                                     opts["samples"], opts["seed"], params=params)
    payload = {"Z_hat": Z, "stderr": se, "log_Z": snap.log_Z, "beta": opts["beta"], "samples": opts["samples"],
               "seed": opts["seed"], "cut_time": cut.t}
    _emit(opts, ["Z_hat", "stderr", "log_Z"], [[float(Z), float(se), float(snap.log_Z)]], payload)


def _state_setup(rho, params, fmap, region, opts, group, k, max_modes):
    cut = _cut(rho, opts, region)
    bos = bosonic_modes(rho, params, cut, max_modes=max_modes)
    fer = fermionic_space(rho, cut.t, params)
    _, _, snap = partition_function(None, rho, fmap, cut, opts["beta"], _group(group, rho.spec.f, k),
                                    opts["samples"], opts["seed"], params=params, bosons=bos, fermions=fer)
    return snap


def save_snapshot(path, snap: StateSnapshot, system_doc: dict, extra: dict):
    doc = {"format_version": DOC_VERSION, "system": system_doc, "setup": extra, "snapshot": snap.to_dict()}
    Path(path).write_text(dumps(doc), encoding="utf-8")


def load_snapshot(path) -> StateSnapshot:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != DOC_VERSION:
        raise SpecError(f"unsupported snapshot format {doc.get('format_version')}")
    rho, params, fmap, region = document_to_system(doc["system"])
    fmap = fmap if fmap is not None else InteractionMap.identity(rho)
    s = doc["snapshot"]
    cut = CutSpec(s["cut_time"], region)
    bos = bosonic_modes(rho, params, cut, max_modes=doc["setup"].get("max_modes"))
    fer = fermionic_space(rho, cut.t, params)
    ctx = StateContext(rho, fmap, cut, params, bos, fer)
    return StateSnapshot.from_dict(s, ctx)


@main.command()
@click.argument("system", type=click.Path(exists=True, dir_okay=False))
@click.option("--word", "words", multiple=True, help='Element such as "ad(z1) fd(p2) a(z1) f(p2)"; repeatable.')
@click.option("--b", "b_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--group", type=click.Choice(["torus", "full", "trivial"]), default="torus", show_default=True)
@click.option("--k", "k", type=int, default=2, show_default=True)
@click.option("--max-modes", type=int, default=3, show_default=True)
@click.option("--save", "save_path", type=click.Path(dir_okay=False), default=None, help="Persist the snapshot.")
@click.option("--load", "load_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Evaluate on a saved snapshot instead of sampling.")
@_common
def state(system, words, b_path, group, k, max_modes, save_path, load_path, opts):
    """Evaluate the quantum state on field-operator words."""
    rho, params, fmap, region = read_system(system)
    fmap = _interaction(rho, fmap, b_path)
    if load_path:
        snap = load_snapshot(load_path)
    else:
        snap = _state_setup(rho, params, fmap, region, opts, group, k, max_modes)
    if save_path:
        save_snapshot(save_path, snap, measure_to_document(rho, params, fmap, None if region is None else region.member),
                      {"max_modes": max_modes, "group": group, "k": k})
    rows = []
    for w in words or ["1"]:
        v = state_eval(snap, AlgebraElement.parse(w))
        rows.append([w, float(v.real), float(v.imag)])
    _emit(opts, ["word", "omega_value", "omega_imag"], rows,
          {"Z_hat": snap.Z_hat, "stderr": snap.stderr,
           "values": [{"word": r[0], "omega_value": r[1], "omega_imag": r[2]} for r in rows]})


@main.command()
@click.argument("system", type=click.Path(exists=True, dir_okay=False))
@click.option("--b", "b_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--group", type=click.Choice(["torus", "full", "trivial"]), default="torus", show_default=True)
@click.option("--k", "k", type=int, default=2, show_default=True)
@click.option("--max-modes", type=int, default=3, show_default=True)
@click.option("--N", "N", type=int, default=2, show_default=True, help="Particle-number cutoff.")
@click.option("--n-max", type=int, default=4, show_default=True, help="Bosonic occupation cutoff.")
@_common
def fock(system, b_path, group, k, max_modes, N, n_max, opts):
    """Density operator on the truncated Fock space and its reconstruction check."""
    rho, params, fmap, region = read_system(system)
    fmap = _interaction(rho, fmap, b_path)
    snap = _state_setup(rho, params, fmap, region, opts, group, k, max_modes)
    rep = build_fock(snap.context.bosons, snap.context.fermions, n_max=n_max)
    sigma = density_from_state(snap, rep, N)
    check = verify_reconstruction(sigma, snap, rep, tol=max(opts["tol"], 1e-8))
    below, top = rep.ccr_defect()
    M = sigma.matrix.tocoo()
    entries = [[int(r), int(c), float(v.real), float(v.imag)] for r, c, v in zip(M.row, M.col, M.data)]
    payload = {"modes": rep.mode_names, "n_max": n_max, "dim": rep.dim, "N": N, "flags": rep.flags,
               "trace": [sigma.trace().real, sigma.trace().imag], "approximate": sigma.approximate,
               "higher_order_max": sigma.higher_order_max, "reconstruction_error": check.max_error,
               "words_checked": check.words_checked, "ccr_defect_below_top": below, "ccr_defect_top": top,
               "car_defect": rep.car_defect(), "entries": entries}
    _emit(opts, ["row", "col", "sigma_re", "sigma_im"], entries, payload)
    click.echo(f"modes: {' '.join(rep.mode_names)}; reconstruction error {check.max_error:.3e} "
               f"over {check.words_checked} words", err=True)
    if not check.passed:
        _fail(f"reconstruction failed: error {check.max_error:.3e} at {check.worst_word}")


@main.command(name="minimize")
@click.argument("system", type=click.Path(exists=True, dir_okay=False))
@click.option("--max-iters", type=int, default=300, show_default=True)
@click.option("--result", "result_path", type=click.Path(dir_okay=False), default=None,
              help="Write the minimized system document here.")
@_common
def minimize_cmd(system, max_iters, result_path, opts):
    """Decrease the causal action under the volume and trace constraints."""
    rho, params, _, _ = read_system(system)
    res = minimize(rho, params, MinimizeOptions(max_iters=max_iters, seed=opts["seed"]))
    if result_path:
        Path(result_path).write_text(dumps(measure_to_document(res.measure, params)), encoding="utf-8")
    header = ["iteration", "action", "volume", "trace_integral", "boundedness", "residual"]
    rows = [[r[h] for h in header] for r in res.trace]
    _emit(opts, header, rows, {"converged": res.converged, "message": res.message, "trace": res.trace})
    actions = [r["action"] for r in res.trace]
    if any(b > a + 1e-12 * max(1.0, abs(a)) for a, b in zip(actions, actions[1:])):
        _fail("action increased between recorded iterates")


# ---------------------------------------------------------------------------
# Property suite


def run_checks(rho, params, fmap, region, opts, n_elements: int = 60, fock_N: int = 1) -> list[tuple[str, bool, str]]:
    """Run the numerical property suite on one system; returns ``(name, passed, detail)`` rows."""
    tol = opts["tol"]
    out = []
    cut = _cut(rho, opts, region)

    rep = conservation_check(None, rho, InteractionMap.identity(rho), params, tol=1e-12)
    out.append(("conservation_identity", rep.passed, f"max error {rep.max_identity_error:.2e}"))
    pert = fmap if fmap is not None else fixtures.perturbed_map(rho, opts["seed"])
    rep = conservation_check(None, rho, pert, params, tol=1e-10)
    out.append(("conservation_perturbed", rep.passed, f"max error {rep.max_identity_error:.2e}"))

    worst = 0.0
    for x, y in itertools.product(rho.points, repeat=2):
        a = np.sort_complex(product_spectrum(x, y, params).lambdas)
        b = np.sort_complex(product_spectrum_full(x, y, params).lambdas)
        scale = max(float(np.max(np.abs(a))), 1e-300)
        worst = max(worst, float(np.max(np.abs(np.sort(np.abs(a)) - np.sort(np.abs(b))))) / scale)
    out.append(("isospectral", worst <= 1e-8, f"max relative gap {worst:.2e}"))

    _, _, zero = partition_function(None, rho, pert, cut, 0.0, GroupSpec.torus(rho.spec.f, min(2, rho.spec.f)),
                                    min(opts["samples"], 64), opts["seed"], params=params)
    out.append(("partition_beta0", zero.Z_hat == 1.0 and zero.stderr == 0.0,
                f"Z={zero.Z_hat!r} stderr={zero.stderr!r}"))

    try:
        snap = _state_setup(rho, params, pert, region, opts, "torus", min(2, rho.spec.f), 3)
    except SpecError as exc:
        out.append(("state", False, f"state construction failed: {exc}"))
        return out
    nb, nf = snap.context.bosons.count, snap.context.fermions.count
    rng = np.random.default_rng(opts["seed"])
    els = [random_element(rng, nb, nf) for _ in range(n_elements)]
    pos = positivity_check(snap, els, tol=tol)
    out.append(("positivity", pos.passed, f"min relative {pos.min_relative:.3e}"))

    worst = 0.0
    for a, b in itertools.product(range(nb), repeat=2):
        v = state_eval(snap, AlgebraElement.word(("a", a), ("ad", b)) - AlgebraElement.word(("ad", b), ("a", a)))
        worst = max(worst, abs(v - (a == b)))
    for a, b in itertools.product(range(nf), repeat=2):
        v = state_eval(snap, AlgebraElement.word(("f", a), ("fd", b)) + AlgebraElement.word(("fd", b), ("f", a)))
        worst = max(worst, abs(v - (a == b)))
    out.append(("ccr_car", worst <= 1e-9, f"max defect {worst:.2e}"))

    bad = 0
    for _ in range(20):
        nd = int(rng.integers(1, 3))
        word = tuple(("fd", int(rng.integers(nf))) for _ in range(nd)) + tuple(("f", int(rng.integers(nf))) for _ in range(nd - 1))
        bad += state_eval(snap, AlgebraElement.word(*word)) != 0
    out.append(("superselection", bad == 0, f"{bad} nonzero unbalanced words"))

    if nf >= 2:
        w1 = AlgebraElement.word(("fd", 0), ("fd", 1), ("f", 0), ("f", 1))
        w2 = AlgebraElement.word(("fd", 1), ("fd", 0), ("f", 0), ("f", 1))
        v1, v2 = state_eval(snap, w1), state_eval(snap, w2)
        ok = abs(v1 + v2) <= 1e-12 * max(abs(v1), 1e-300)
        out.append(("antisymmetry", ok, f"{v1:.3e} vs {v2:.3e}"))

    try:
        rep = build_fock(snap.context.bosons, snap.context.fermions)
        sigma = density_from_state(snap, rep, fock_N)
        chk = verify_reconstruction(sigma, snap, rep)
        out.append(("reconstruction", chk.passed, f"max error {chk.max_error:.2e} over {chk.words_checked} words"))
    except SpecError as exc:
        out.append(("reconstruction", False, str(exc)))
    return out


@main.command()
@click.argument("system", type=click.Path(exists=True, dir_okay=False))
@click.option("--elements", type=int, default=60, show_default=True, help="Random elements in the positivity test.")
@click.option("--fock-n", type=int, default=1, show_default=True, help="Particle cutoff of the reconstruction test.")
@_common
def check(system, elements, fock_n, opts):
    """Run the property suite and exit with 2 if any property fails."""
    rho, params, fmap, region = read_system(system)
    results = run_checks(rho, params, fmap, region, opts, elements, fock_n)
    rows = [[name, "pass" if ok else "FAIL", detail] for name, ok, detail in results]
    _emit(opts, ["property", "status", "detail"], rows,
          [{"property": r[0], "passed": r[1] == "pass", "detail": r[2]} for r in rows])
    failed = [r[0] for r in rows if r[1] != "pass"]
    if failed:
        _fail("failed properties: " + ", ".join(failed))


def run(argv=None) -> int:
    """Entry point with the documented exit codes."""
    try:
        main.main(args=argv, prog_name="cfslab", standalone_mode=False)
    except PropertyViolation as exc:
        click.echo(f"property failure: {exc}", err=True)
        return 2
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except (SpecError, OSError, ValueError, json.JSONDecodeError, np.linalg.LinAlgError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(run())
