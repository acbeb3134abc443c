"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines.  The heavier pipelines (existence runs, barrier gap, multiplicity
scan) are computed once in session fixtures; the determinism criterion at
the end re-executes each of them from scratch with the same seeds and
compares serialized bytes.
"""

import json
import time
from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from fraclink import (NablaCheckParams, ProblemParams, SolverOptions,
                      SubspaceSplit, apply_K, check_poincare, energy, gradient,
                      h_norm, jsonio, linking_gap, linking_solve,
                      mountain_pass, nabla_condition_estimate, newton_deflated,
                      scan_lemma_radii, sup_hj_sweep)
from fraclink.config import parse_config
from fraclink.driver import run_multiplicity
from fraclink.minimax import LinkingGeometry
from conftest import C3

RAY_LEVEL_BOUND = 3.5860 + 1e-3   # stated cap for the lam=0 mountain-pass level


def report(criterion: str, elapsed: float, budget: float) -> None:
    print("ACCEPTANCE %s: PASS [%.2f s / budget %.0f s]"
          % (criterion, elapsed, budget))
    assert elapsed < budget


def _memoized(fn):
    cache = {}

    def compute(tag="first"):
        if tag not in cache:
            cache[tag] = fn(tag)
        return cache[tag]

    return compute


# ---------------------------------------------------------------------------
# 1. spectrum


def test_criterion_01_spectrum(rect_basis):
    t0 = time.perf_counter()
    exact = np.pi * np.sqrt([2.0, 5.0, 5.0, 8.0, 10.0, 10.0])
    got = rect_basis.lams[:6]
    assert np.max(np.abs(got - exact) / exact) < 1e-12

    # independent oracle: 5-point finite-difference Laplacian on a 200^2 grid
    n = 200
    h = 1.0 / (n + 1)
    T = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)],
                 [-1, 0, 1]) / h**2
    A = (sp.kron(T, sp.identity(n)) + sp.kron(sp.identity(n), T)).tocsc()
    vals = spla.eigsh(A, k=3, sigma=0, which="LM", return_eigenvectors=False)
    oracle = np.sqrt(np.sort(vals))
    assert np.max(np.abs(rect_basis.lams[:3] - oracle) / oracle) < 1e-3
    report("criterion 1 (spectrum)", time.perf_counter() - t0, 10.0)


# ---------------------------------------------------------------------------
# 2. Poincare property suite


def test_criterion_02_poincare(interval_basis, rect_basis):
    t0 = time.perf_counter()
    rep_i = check_poincare(interval_basis, SubspaceSplit(5, 5), 1000, rng_seed=42)
    rep_r = check_poincare(rect_basis, SubspaceSplit(2, 3), 1000, rng_seed=43)
    assert rep_i["passed"] and rep_i["violations"] == []
    assert rep_r["passed"] and rep_r["violations"] == []
    report("criterion 2 (Poincare suite)", time.perf_counter() - t0, 1.0)


# ---------------------------------------------------------------------------
# 3. gradient consistency


def test_criterion_03_gradient_fd(interval_basis, power3):
    t0 = time.perf_counter()
    basis = interval_basis
    rng = np.random.default_rng(42)
    params = ProblemParams(1.0)
    worst = 0.0
    for _ in range(100):
        u = rng.standard_normal(64) / np.sqrt(basis.lams)
        u *= rng.uniform(0.1, 2.0) / h_norm(basis, u)
        w = rng.standard_normal(64) / np.sqrt(basis.lams)
        w /= h_norm(basis, w)
        g = gradient(basis, power3, params, u)
        lhs = float(np.dot(basis.lams, g * w))
        hstep = 1e-5
        fd = (energy(basis, power3, params, u + hstep * w)
              - energy(basis, power3, params, u - hstep * w)) / (2 * hstep)
        err = abs(lhs - fd) / (1.0 + abs(energy(basis, power3, params, u)))
        worst = max(worst, err)
    assert worst < 1e-6
    report("criterion 3 (gradient vs FD, worst %.2e)" % worst,
           time.perf_counter() - t0, 5.0)


# ---------------------------------------------------------------------------
# 4. K operator


def test_criterion_04_k_operator(interval_basis):
    t0 = time.perf_counter()
    basis = interval_basis
    for k in (1, 2, 7, 64):
        out = apply_K(basis, basis.unit_mode(k))
        expect = basis.unit_mode(k) / basis.lam(k)
        assert np.array_equal(out, expect)
    img = apply_K(basis, np.ones(64))
    tails = [float(np.sum(basis.lams[c:] * img[c:] ** 2)) for c in (8, 16, 32, 48)]
    assert all(b < a for a, b in zip(tails, tails[1:]))
    report("criterion 4 (K operator)", time.perf_counter() - t0, 1.0)


# ---------------------------------------------------------------------------
# 5. existence below lambda_1 (mountain pass + Newton agreement)


@pytest.fixture(scope="session")
def crit5(interval_basis, power3):
    @_memoized
    def compute(tag):
        t0 = time.perf_counter()
        basis = interval_basis
        params = ProblemParams(0.0)
        opts = SolverOptions()
        mp = mountain_pass(basis, power3, params, basis.unit_mode(1), opts)
        seeds = []
        for k in range(1, 5):
            amp = np.pi / C3 if k == 1 else 0.5
            seeds.extend([amp * basis.unit_mode(k), -amp * basis.unit_mode(k)])
        nw = newton_deflated(basis, power3, params, seeds, known=[], opts=opts)
        blob = jsonio.dumps({
            "mountain_pass": [cp.to_json_dict() for cp in mp.points],
            "newton": [cp.to_json_dict() for cp in nw],
        })
        return mp, nw, blob, time.perf_counter() - t0

    return compute


def test_criterion_05_existence_mountain_pass(interval_basis, crit5):
    mp, nw, _, elapsed = crit5()
    basis = interval_basis
    assert mp.ok, mp.failure
    cp = mp.points[0]
    assert cp.residual < 1e-8
    assert h_norm(basis, cp.u) > 1e-3
    assert 0.0 < cp.level <= RAY_LEVEL_BOUND
    nontrivial = [q for q in nw if h_norm(basis, q.u) > 1e-6]
    assert nontrivial
    dist = min(h_norm(basis, q.u - cp.u) for q in nontrivial)
    assert dist < 1e-6
    assert all(q.residual < 1e-8 for q in nw)
    report("criterion 5 (existence, lam < lambda_1; level %.6f)" % cp.level,
           elapsed, 30.0)


# ---------------------------------------------------------------------------
# 6. existence between eigenvalues (linking)


@pytest.fixture(scope="session")
def crit6(interval_basis, power3):
    @_memoized
    def compute(tag):
        t0 = time.perf_counter()
        basis = interval_basis
        params = ProblemParams(1.5 * np.pi)
        opts = SolverOptions()
        geom = LinkingGeometry(split=SubspaceSplit(1, 1), rho=0.5, R=8.0)
        res = linking_solve(basis, power3, params, geom, opts)
        confirm = newton_deflated(basis, power3, params,
                                  [res.points[0].u] if res.ok else [],
                                  known=[], opts=opts)
        blob = jsonio.dumps({
            "linking": [cp.to_json_dict() for cp in res.points],
            "confirm": [cp.to_json_dict() for cp in confirm],
        })
        return res, confirm, blob, time.perf_counter() - t0

    return compute


def test_criterion_06_existence_linking(interval_basis, crit6):
    res, confirm, _, elapsed = crit6()
    basis = interval_basis
    assert res.ok, res.failure
    cp = res.points[0]
    assert cp.level > 0
    assert cp.residual < 1e-8
    assert confirm, "deflated Newton did not confirm the linking point"
    assert h_norm(basis, confirm[0].u - cp.u) < 1e-6
    report("criterion 6 (existence, linking; level %.6f)" % cp.level,
           elapsed, 60.0)


# ---------------------------------------------------------------------------
# 7. vanishing supremum sweep


@pytest.fixture(scope="session")
def crit7(interval_basis, power3):
    @_memoized
    def compute(tag):
        t0 = time.perf_counter()
        lam_list = [0.0, np.pi / 2, 0.9 * np.pi, 0.99 * np.pi, 0.999 * np.pi]
        rep = sup_hj_sweep(interval_basis, power3, 1, lam_list)
        return rep, jsonio.dumps(rep), time.perf_counter() - t0

    return compute


def test_criterion_07_sup_sweep(crit7):
    rep, _, elapsed = crit7()
    sups = [r["sup"] for r in rep["rows"]]
    assert rep["strictly_decreasing"], sups
    assert sups[-1] < 1e-3
    report("criterion 7 (sup sweep, final %.2e)" % sups[-1], elapsed, 30.0)


# ---------------------------------------------------------------------------
# 8. barrier gap on the rectangle cluster


@pytest.fixture(scope="session")
def crit8(rect_basis, power3):
    def one_seed(seed: int):
        basis = rect_basis
        params = ProblemParams(basis.lam(2) - 0.1)
        opts = replace(SolverOptions(), rng_seed=seed, n_random_starts=4,
                       sphere_iters=150)
        geom = scan_lemma_radii(basis, power3, params, SubspaceSplit(2, 3), opts)
        gap = linking_gap(basis, power3, params, geom, opts)
        return gap, jsonio.dumps(gap.to_json_dict())

    @_memoized
    def compute(tag):
        t0 = time.perf_counter()
        results = {seed: one_seed(seed) for seed in (42, 43, 44)}
        return results, time.perf_counter() - t0

    return compute


def test_criterion_08_linking_gap(crit8):
    results, elapsed = crit8()
    gaps = {seed: gap for seed, (gap, _) in results.items()}
    for seed, gap in gaps.items():
        assert gap.certified, "seed %d: %s" % (seed, gap.to_json_dict())
        assert gap.gap > 0
    sups = [g.sup_T for g in gaps.values()]
    infs = [g.inf_S for g in gaps.values()]
    assert max(sups) - min(sups) < 1e-6
    assert max(infs) - min(infs) < 1e-6
    report("criterion 8 (barrier gap %.3e, 3 seeds)" % gaps[42].gap,
           elapsed, 120.0)


# ---------------------------------------------------------------------------
# 9. three solutions below the cluster


MULT_DOC = {
    "domain": {"kind": "rectangle", "side_lengths": [1.0, 1.0]},
    "K_max": 100,
    "nonlinearity": {"kind": "power", "p": 3.0},
    "lambda_sweep": {"eigen_index": 2, "delta_list": [0.5, 0.2, 0.1, 0.05]},
    "rng_seed": 42,
}


@pytest.fixture(scope="session")
def crit9(tmp_path_factory):
    @_memoized
    def compute(tag):
        t0 = time.perf_counter()
        out = tmp_path_factory.mktemp("mult_%s" % tag)
        code, rep = run_multiplicity(parse_config(MULT_DOC), str(out), quiet=True)
        blobs = {name: (out / name).read_bytes()
                 for name in ("report.json", "solutions.json")}
        return code, rep, blobs, time.perf_counter() - t0

    return compute


def test_criterion_09_multiplicity(crit9):
    code, rep, _, elapsed = crit9()
    assert code == 0
    assert rep["any_passed"]
    assert rep["achieved_delta"] is not None
    row = next(r for r in rep["rows"] if r["passed"])
    cls = row["classification"]
    assert len(cls["low_band"]) >= 2
    assert len(cls["high_band"]) >= 1
    assert cls["sup_hj"] < cls["c_rho1_sq"]
    assert cls["min_pairwise_distance"] > 1e-4
    for p in row["points"]:
        assert p["residual"] < 1e-8
    report("criterion 9 (multiplicity, delta=%g, %d low + %d high)"
           % (row["delta"], len(cls["low_band"]), len(cls["high_band"])),
           elapsed, 600.0)


# ---------------------------------------------------------------------------
# 10. projected-gradient evidence at the multiplicity lambda


@pytest.fixture(scope="session")
def crit10(rect_basis, power3, crit9):
    @_memoized
    def compute(tag):
        t0 = time.perf_counter()
        _, rep, _, _ = crit9()  # session-cached first run
        row = next(r for r in rep["rows"] if r["passed"])
        params = ProblemParams(row["lambda"])
        sup_hj = row["sup_hj"]
        chk = NablaCheckParams(split=SubspaceSplit(2, 3),
                               eps_lo=0.05 * sup_hj, eps_hi=0.5 * sup_hj,
                               gamma=0.1, sample_count=10_000, rng_seed=42)
        val, witness, meta = nabla_condition_estimate(rect_basis, power3,
                                                      params, chk)
        blob = jsonio.dumps({"inf_estimate": val,
                             "witness_coeffs": witness.tolist(),
                             "meta": meta})
        return val, witness, blob, time.perf_counter() - t0

    return compute


def test_criterion_10_nabla_evidence(crit10, tmp_path):
    val, witness, blob, elapsed = crit10()
    assert val > 0.0
    assert witness.shape == (100,)
    out = tmp_path / "nabla_witness.json"
    out.write_text(blob)
    assert json.loads(out.read_text())["inf_estimate"] == val
    report("criterion 10 (projected-gradient inf %.3e over 1e4 samples)" % val,
           elapsed, 120.0)


# ---------------------------------------------------------------------------
# 11. determinism of criteria 5-10


def test_criterion_11_determinism(crit5, crit6, crit7, crit8, crit9, crit10):
    t0 = time.perf_counter()
    assert crit5()[2] == crit5("rerun")[2]
    assert crit6()[2] == crit6("rerun")[2]
    assert crit7()[1] == crit7("rerun")[1]

    first, _ = crit8()
    second, _ = crit8("rerun")
    for seed in (42, 43, 44):
        assert first[seed][1] == second[seed][1]

    _, _, blobs1, _ = crit9()
    _, _, blobs2, _ = crit9("rerun")
    assert blobs1["report.json"] == blobs2["report.json"]
    assert blobs1["solutions.json"] == blobs2["solutions.json"]

    assert crit10()[2] == crit10("rerun")[2]
    report("criterion 11 (determinism of 5-10)", time.perf_counter() - t0,
           1200.0)
