from dataclasses import replace

import numpy as np
import pytest

from fraclink import (CriticalPoint, LinkingGeometry, NablaCheckParams,
                      NablaWindowError, ProblemParams, SolverOptions,
                      SubspaceSplit, check_poincare, classify_solutions, energy,
                      jsonio, linking_gap, nabla_condition_estimate,
                      scan_lemma_radii, sup_hj_sweep, sup_on_subspace,
                      third_solution_threshold)

LAM0 = ProblemParams(0.0)


class TestCheckPoincare:
    def test_interval_thousand_trials(self, interval_basis):
        rep = check_poincare(interval_basis, SubspaceSplit(4, 4), 1000, rng_seed=42)
        assert rep["passed"]
        assert rep["violations"] == []
        assert rep["worst_low_margin"] <= 1e-12
        assert rep["worst_high_margin"] <= 1e-12

    def test_rectangle(self, rect_basis_small):
        rep = check_poincare(rect_basis_small, SubspaceSplit(2, 3), 300)
        assert rep["passed"]

    def test_trials_validated(self, interval_basis):
        with pytest.raises(ValueError):
            check_poincare(interval_basis, SubspaceSplit(1, 1), 0)


class TestLinkingGap:
    def test_interval_explicit_radii(self, interval_basis, power3):
        # split {2}: low block e_1, lambda between lambda_1 and lambda_2
        basis = interval_basis
        params = ProblemParams(1.9 * np.pi)
        geom = LinkingGeometry(split=SubspaceSplit(2, 2), rho=0.3, R=16.0)
        report = linking_gap(basis, power3, params, geom,
                             replace(SolverOptions(), n_random_starts=4,
                                     sphere_iters=150))
        assert report.certified
        assert report.gap > 0
        assert report.inf_S > 0 >= report.sup_T - 1e-12

    def test_uncertified_when_lambda_at_cluster(self, interval_basis, power3):
        basis = interval_basis
        params = ProblemParams(basis.lam(2))  # hypothesis lam < lambda_j violated
        geom = LinkingGeometry(split=SubspaceSplit(2, 2), rho=0.3, R=16.0)
        report = linking_gap(basis, power3, params, geom,
                             replace(SolverOptions(), n_random_starts=4,
                                     sphere_iters=150))
        assert not report.certified
        assert report.inf_S <= 1e-9

    def test_radii_invariant(self):
        with pytest.raises(ValueError):
            LinkingGeometry(split=SubspaceSplit(2, 2), rho=1.0, R=0.5)

    def test_needs_nontrivial_low_block(self, interval_basis, power3):
        geom = LinkingGeometry(split=SubspaceSplit(1, 1), rho=0.3, R=4.0)
        with pytest.raises(ValueError, match="i >= 2"):
            linking_gap(interval_basis, power3, LAM0, geom)

    def test_scanned_radii_certify(self, rect_basis, power3):
        basis = rect_basis
        params = ProblemParams(basis.lam(2) - 0.1)
        opts = replace(SolverOptions(), n_random_starts=4, sphere_iters=150)
        geom = scan_lemma_radii(basis, power3, params, SubspaceSplit(2, 3), opts)
        report = linking_gap(basis, power3, params, geom, opts)
        assert report.certified, report.to_json_dict()


class TestThirdSolutionThreshold:
    def test_rectangle_certifies(self, rect_basis, power3):
        basis = rect_basis
        params = ProblemParams(basis.lam(2) - 0.1)
        got = third_solution_threshold(basis, power3, params, SubspaceSplit(2, 3))
        assert got is not None
        rho1, c_thr, inf_s = got
        assert inf_s >= c_thr > 0
        lam4 = basis.lam(4)
        tau = 0.1 * (1 - basis.lam(3) / lam4)
        assert c_thr == pytest.approx(
            0.5 * (1 - params.lam / lam4 - tau) * rho1**2, rel=1e-12)


class TestSupSweep:
    def test_interval_decreasing(self, interval_basis, power3):
        lam_j = interval_basis.lam(1)
        rep = sup_hj_sweep(interval_basis, power3, 1,
                           [0.0, 0.5 * lam_j, 0.9 * lam_j])
        assert rep["strictly_decreasing"]
        sups = [r["sup"] for r in rep["rows"]]
        # closed form sup = (lam_1 - lam)^3 / (6 C3^2)
        from conftest import C3
        for row, lam in zip(rep["rows"], [0.0, 0.5 * lam_j, 0.9 * lam_j]):
            assert row["sup"] == pytest.approx(
                (lam_j - lam)**3 / (6 * C3**2), rel=1e-6)

    def test_at_lambda_j_exact_zero(self, interval_basis, power3):
        rep = sup_hj_sweep(interval_basis, power3, 1,
                           [0.0, interval_basis.lam(1)])
        assert rep["rows"][-1]["sup"] == 0.0

    def test_empty_list(self, interval_basis, power3):
        rep = sup_hj_sweep(interval_basis, power3, 1, [])
        assert rep["rows"] == []
        assert rep["nonincreasing"] and rep["final_below_threshold"]

    def test_must_increase(self, interval_basis, power3):
        with pytest.raises(ValueError):
            sup_hj_sweep(interval_basis, power3, 1, [1.0, 0.5])
        with pytest.raises(ValueError):
            sup_hj_sweep(interval_basis, power3, 1, [0.0, 2 * np.pi])


def _cp(level, coeffs):
    u = np.asarray(coeffs, dtype=float)
    return CriticalPoint(u=u, level=level, residual=1e-12, method="newton_deflated")


class TestClassifySolutions:
    def test_three_point_pass(self):
        pts = [_cp(0.2, [1, 0, 0]), _cp(0.3, [0, 1, 0]), _cp(5.0, [0, 0, 3])]
        rep = classify_solutions(pts, sup_hj=0.4, c_rho1_sq=1.0)
        assert rep["passed"]
        assert len(rep["low_band"]) == 2
        assert len(rep["high_band"]) == 1

    def test_missing_third(self):
        pts = [_cp(0.2, [1, 0, 0]), _cp(0.3, [0, 1, 0])]
        rep = classify_solutions(pts, sup_hj=0.4, c_rho1_sq=1.0)
        assert not rep["passed"]
        assert rep["reason"] == "missing third solution"

    def test_trivial_excluded(self):
        pts = [_cp(0.0, [0, 0, 0]), _cp(0.2, [1, 0, 0]), _cp(0.3, [0, 1, 0]),
               _cp(5.0, [0, 0, 3])]
        rep = classify_solutions(pts, sup_hj=0.4, c_rho1_sq=1.0)
        assert rep["n_nontrivial"] == 3
        assert rep["passed"]

    def test_h_metric_distances(self):
        pts = [_cp(0.2, [1, 0]), _cp(0.3, [0, 1]), _cp(5.0, [0, 2])]
        lams = np.array([4.0, 9.0])
        rep = classify_solutions(pts, 0.4, 1.0, lambdas=lams)
        assert rep["pairwise_h_distances"][0][1] == pytest.approx(np.sqrt(13.0))

    def test_byte_identical_reports(self):
        pts = [_cp(0.2, [1, 0, 0]), _cp(0.3, [0, 1, 0]), _cp(5.0, [0, 0, 3])]
        a = jsonio.dumps(classify_solutions(pts, 0.4, 1.0))
        b = jsonio.dumps(classify_solutions(pts, 0.4, 1.0))
        assert a == b

    def test_unordered_bands_fail(self):
        pts = [_cp(0.2, [1, 0]), _cp(0.3, [0, 1]), _cp(5.0, [2, 0])]
        rep = classify_solutions(pts, sup_hj=2.0, c_rho1_sq=1.0)
        assert not rep["passed"]
        assert "ordered" in rep["reason"]


class TestNablaEstimate:
    def test_params_validated(self):
        with pytest.raises(ValueError):
            NablaCheckParams(SubspaceSplit(2, 2), eps_lo=0.5, eps_hi=0.1, gamma=0.1)
        with pytest.raises(ValueError):
            NablaCheckParams(SubspaceSplit(2, 2), eps_lo=0.1, eps_hi=0.5, gamma=0.1,
                             sample_count=10)
        with pytest.raises(ValueError):
            NablaCheckParams(SubspaceSplit(2, 2), eps_lo=0.1, eps_hi=0.5, gamma=0.0)

    def test_positive_estimate_interval(self, interval_basis, power3):
        basis = interval_basis
        params = ProblemParams(1.5 * np.pi)
        sup_h2, _ = sup_on_subspace(basis, power3, params, 2)
        chk = NablaCheckParams(SubspaceSplit(2, 2), eps_lo=0.05 * sup_h2,
                               eps_hi=0.5 * sup_h2, gamma=0.1,
                               sample_count=1000, rng_seed=7)
        val, witness, meta = nabla_condition_estimate(basis, power3, params, chk)
        assert val > 0
        f_wit = energy(basis, power3, params, witness)
        assert chk.eps_lo <= f_wit <= chk.eps_hi
        assert meta["n_samples"] == 1000

    def test_window_above_reachable_levels(self, interval_basis, power3):
        basis = interval_basis
        params = ProblemParams(1.5 * np.pi)
        chk = NablaCheckParams(SubspaceSplit(2, 2), eps_lo=1e8, eps_hi=2e8,
                               gamma=0.1, sample_count=1000)
        with pytest.raises(NablaWindowError, match="window"):
            nabla_condition_estimate(basis, power3, params, chk)


class TestLowSubspaceSignProperty:
    def test_f_nonpositive_on_low_block(self, interval_basis, power3):
        # for lam in [lambda_i, lambda_{i+1}) the functional is <= 0 on H_i
        basis = interval_basis
        rng = np.random.default_rng(31)
        for i, lam in ((1, 1.3 * np.pi), (2, 2.4 * np.pi)):
            params = ProblemParams(lam)
            for _ in range(100):
                u = np.zeros(64)
                u[:i] = rng.standard_normal(i) * rng.uniform(0.1, 20.0)
                assert energy(basis, power3, params, u) <= 1e-12
