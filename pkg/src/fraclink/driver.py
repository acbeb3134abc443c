"""Batch pipelines behind the CLI subcommands.

Each run_* function builds everything from a RunConfig, writes its outputs
under an output directory, and returns (exit_code, report).  Reports carry
no timestamps or absolute paths, so a rerun with the same config and seed
produces byte-identical files.  Independent sweep tasks may execute on a
thread pool; per-task RNG seeds are derived from (seed, index) so results
do not depend on the thread count, and files are written in a single
ordered pass at the end.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import jsonio
from .basis import (SpectralBasis, SubspaceSplit, build_basis, dump_basis,
                    gram_error, group_eigenvalues, h_norm)
from .config import ConfigError, RunConfig
from .functional import (ProblemParams, apply_K, energy, gradient,
                         validate_hypotheses)
from .geometry import (NablaCheckParams, check_poincare, classify_solutions,
                       linking_gap, nabla_condition_estimate, scan_cap_radius,
                       scan_lemma_radii, scan_sphere_radius, sup_hj_sweep,
                       third_solution_threshold)
from .minimax import (CriticalPoint, IterateBlowupError, LinkingGapError,
                      LinkingGeometry, MinimaxResult, SolverOptions,
                      dedup_points, linking_solve, mountain_pass,
                      newton_deflated, ray_max, sup_on_subspace)

SCHEMA = "fraclink/1"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_SOLUTION = 3
EXIT_VERIFY_FAILED = 4


def _task_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base, index]).generate_state(1)[0])


def _ensure_outdir(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
        probe = os.path.join(path, ".write-probe")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as exc:
        raise ConfigError("output_dir %r is not writable: %s" % (path, exc)) from None


def _build(cfg: RunConfig) -> SpectralBasis:
    return build_basis(cfg.domain, cfg.K_max, cfg.quad_order)


def _verified_rows(basis, nl, params, opts, points: list[CriticalPoint]) -> list[dict]:
    rows = []
    for cp in points:
        res = h_norm(basis, gradient(basis, nl, params, cp.u))
        if res > opts.residual_tol:
            raise RuntimeError(
                "emitted solution fails re-verification: residual %.3e" % res)
        row = cp.to_json_dict()
        row["residual"] = res
        row["h_norm"] = h_norm(basis, cp.u)
        rows.append(row)
    return rows


def _spectrum_rows(basis: SpectralBasis) -> list[list]:
    return [[k + 1, "x".join(str(i) for i in mi), lam]
            for k, (mi, lam) in enumerate(basis.modes)]


# ---------------------------------------------------------------------------
# eig


def run_eig(cfg: RunConfig, out_dir: str, quiet: bool = False) -> tuple[int, dict]:
    _ensure_outdir(out_dir)
    basis = _build(cfg)
    clusters = group_eigenvalues(basis, cfg.cluster_rel_tol)
    dump_basis(basis, os.path.join(out_dir, "basis.json"))
    jsonio.write_csv(os.path.join(out_dir, "spectrum.csv"),
                     ["k", "multi_index", "lambda"], _spectrum_rows(basis))
    report = {
        "schema": SCHEMA,
        "command": "eig",
        "domain": cfg.domain.to_json_dict(),
        "K_max": cfg.K_max,
        "quad_order": basis.quad_order,
        "gram_error": gram_error(basis),
        "first_eigenvalues": [float(l) for l in basis.lams[:10]],
        "clusters": [[c.i, c.j] for c in clusters],
    }
    jsonio.dump(report, os.path.join(out_dir, "report.json"))
    if not quiet:
        print("eigenvalues (first %d):" % min(10, cfg.K_max))
        for k, (mi, lam) in enumerate(basis.modes[:10]):
            print("  %3d  %-8s  %.12g" % (k + 1, "x".join(map(str, mi)), lam))
        print("clusters:", " ".join("{%d..%d}" % (c.i, c.j) for c in clusters))
    return EXIT_OK, report


# ---------------------------------------------------------------------------
# solve


def _newton_multistart_seeds(basis, nl, params, opts,
                             extra: list[np.ndarray]) -> list[np.ndarray]:
    seeds: list[np.ndarray] = [np.zeros(basis.K_max)]
    for k in range(1, min(4, basis.K_max) + 1):
        try:
            t_k, _ = ray_max(basis, nl, params, basis.unit_mode(k))
        except ValueError:
            t_k = 0.0
        amp = t_k if t_k > 0 else 0.5
        seeds.append(amp * basis.unit_mode(k))
        seeds.append(-amp * basis.unit_mode(k))
    seeds.extend(extra)
    return seeds


def _auto_theorem_linking_geometry(basis, nl, params, cluster: SubspaceSplit,
                                   opts: SolverOptions) -> LinkingGeometry:
    """Radii for the one-solution linking: sphere in modes > j, cap over
    the low block plus the transversal mode."""
    rho, _ = scan_sphere_radius(basis, nl, params, cluster.j + 1, opts)
    mask = np.zeros(basis.K_max, dtype=bool)
    mask[:cluster.j] = True
    mask[cluster.j] = True  # transversal mode j+1
    R = scan_cap_radius(basis, nl, params, mask, rho, opts)
    return LinkingGeometry(split=cluster, rho=rho, R=R)


def run_solve(cfg: RunConfig, out_dir: str, quiet: bool = False) -> tuple[int, dict]:
    _ensure_outdir(out_dir)
    basis = _build(cfg)
    nl = cfg.nonlinearity
    params = ProblemParams(cfg.require_lambda())
    opts = cfg.solver
    clusters = group_eigenvalues(basis, cfg.cluster_rel_tol)

    methods: dict[str, dict] = {}
    points: list[CriticalPoint] = []

    if params.lam < basis.lam(1):
        dispatch = "mountain_pass"
        try:
            res = mountain_pass(basis, nl, params, basis.unit_mode(1), opts)
            methods["mountain_pass"] = {
                "ok": res.ok, "failure": res.failure, "beta": res.beta,
                "diagnostics": res.diagnostics,
            }
            points.extend(res.points)
        except (ValueError, IterateBlowupError) as exc:
            methods["mountain_pass"] = {"ok": False, "failure": str(exc)}
    else:
        dispatch = "linking"
        cluster = None
        for c in clusters:
            above = c.j >= basis.K_max or params.lam < basis.lam(c.j + 1)
            if basis.lam(c.j) <= params.lam and above:
                cluster = c
                break
        if cluster is None or cluster.j >= basis.K_max:
            raise ConfigError("lambda is above the resolved spectrum; raise K_max")
        try:
            geom = _auto_theorem_linking_geometry(basis, nl, params, cluster, opts)
            res = linking_solve(basis, nl, params, geom, opts)
            methods["linking"] = {
                "ok": res.ok, "failure": res.failure, "beta": res.beta,
                "rho": geom.rho, "R": geom.R, "diagnostics": res.diagnostics,
            }
            points.extend(res.points)
        except LinkingGapError as exc:
            methods["linking"] = {"ok": False, "failure": str(exc),
                                  "inf_sphere": exc.inf_sphere,
                                  "sup_boundary": exc.sup_boundary}
        except (ValueError, IterateBlowupError) as exc:
            methods["linking"] = {"ok": False, "failure": str(exc)}

    try:
        seeds = _newton_multistart_seeds(basis, nl, params, opts,
                                         extra=[cp.u for cp in points])
        newton_points = newton_deflated(basis, nl, params, seeds, known=[], opts=opts)
        methods["newton_deflated"] = {"ok": bool(newton_points),
                                      "n_points": len(newton_points)}
    except (ValueError, IterateBlowupError) as exc:
        newton_points = []
        methods["newton_deflated"] = {"ok": False, "failure": str(exc)}

    all_points = dedup_points(basis, points + newton_points, opts.dedup_tol)
    nontrivial = [cp for cp in all_points if h_norm(basis, cp.u) > opts.trivial_tol]

    report = {
        "schema": SCHEMA,
        "command": "solve",
        "lambda": params.lam,
        "dispatch": dispatch,
        "methods": methods,
        "n_points": len(all_points),
        "n_nontrivial": len(nontrivial),
    }
    solutions = {
        "schema": SCHEMA,
        "lambda": params.lam,
        "rng_seed": cfg.rng_seed,
        "points": _verified_rows(basis, nl, params, opts, all_points),
    }
    jsonio.dump(report, os.path.join(out_dir, "report.json"))
    jsonio.dump(solutions, os.path.join(out_dir, "solutions.json"))
    if not quiet:
        print("dispatch: %s; %d point(s), %d nontrivial"
              % (dispatch, len(all_points), len(nontrivial)))
        for cp in nontrivial:
            print("  level=%.8g residual=%.2e method=%s"
                  % (cp.level, cp.residual, cp.method))
    return (EXIT_OK if nontrivial else EXIT_NO_SOLUTION), report


# ---------------------------------------------------------------------------
# multiplicity


def _box_mesh_seeds(basis, nl, params, geom: LinkingGeometry, opts,
                    per_dim: int = 5, top: int = 8) -> list[np.ndarray]:
    """Top-energy nodes of a coarse mesh of the annular box set, plus mirrors."""
    split = geom.split
    dims = list(range(split.j))  # low block 1..i-1 plus mid block i..j
    rho_hi = geom.rho_hi if geom.rho_hi is not None else 2.0 * geom.rho
    rho1 = geom.rho1 if geom.rho1 is not None else geom.R / 2.0
    axes = []
    for k in dims:
        cap = rho1 if k < split.i - 1 else rho_hi
        axes.append(np.linspace(-cap, cap, per_dim) / np.sqrt(basis.lam(k + 1)))
    grids = np.meshgrid(*axes, indexing="ij")
    nodes = np.column_stack([g.ravel() for g in grids])
    coeffs = np.zeros((len(nodes), basis.K_max))
    coeffs[:, :split.j] = nodes
    from .functional import energy_many

    fv = energy_many(basis, nl, params, coeffs)
    order = np.argsort(fv)[::-1][:top]
    seeds = []
    for k in order:
        seeds.append(coeffs[k])
        seeds.append(-coeffs[k])
    return seeds


def _multiplicity_row(basis, nl, cfg, cluster: SubspaceSplit, delta: float,
                      seed: int) -> dict:
    opts = replace(cfg.solver, rng_seed=seed)
    lam_i = basis.lam(cluster.i)
    lam = lam_i - delta
    row: dict = {"delta": delta, "lambda": lam}
    if cluster.i >= 2 and lam <= basis.lam(cluster.i - 1):
        row["passed"] = False
        row["reason"] = "lambda fell below the previous eigenvalue"
        return row
    params = ProblemParams(lam)

    # barrier gap (geometry scan + certification)
    geom = scan_lemma_radii(basis, nl, params, cluster, opts)
    gap = linking_gap(basis, nl, params, geom, opts)
    row["gap"] = gap.to_json_dict()
    if not gap.certified:
        row["passed"] = False
        row["reason"] = "barrier gap not certified"
        return row

    sup_hj, _ = sup_on_subspace(basis, nl, params, cluster.j, opts)
    row["sup_hj"] = sup_hj

    thr = third_solution_threshold(basis, nl, params, cluster, opts)
    if thr is None:
        row["passed"] = False
        row["reason"] = "no certified high-band threshold radius"
        return row
    rho1, c_rho1_sq, inf_s1 = thr
    row.update({"rho1": rho1, "c_rho1_sq": c_rho1_sq, "inf_sphere_rho1": inf_s1})

    # low band: deflated Newton from box-set extrema and cluster directions
    geom_seeded = LinkingGeometry(split=cluster, rho=geom.rho, R=geom.R,
                                  rho_lo=0.25 * geom.rho, rho_hi=2.0 * geom.rho,
                                  rho1=geom.R / 2.0)
    seeds = _box_mesh_seeds(basis, nl, params, geom_seeded, opts)
    for frac in (0.25, 0.5, 1.0, 2.0):
        for k in range(cluster.i, cluster.j + 1):
            e = basis.unit_mode(k) * (frac * geom.rho / np.sqrt(basis.lam(k)))
            seeds.extend([e, -e])
        if cluster.size >= 2:
            diag = (basis.unit_mode(cluster.i) + basis.unit_mode(cluster.i + 1))
            diag *= frac * geom.rho / h_norm(basis, diag)
            seeds.extend([diag, -diag])
    low_points = newton_deflated(basis, nl, params, seeds, known=[], opts=opts)

    # high band: linking over the low block plus one transversal mode
    mask = np.zeros(basis.K_max, dtype=bool)
    mask[:cluster.j + 1] = True
    R1 = scan_cap_radius(basis, nl, params, mask, rho1, opts)
    geom3 = LinkingGeometry(split=cluster, rho=rho1, R=R1)
    high_points: list[CriticalPoint] = []
    try:
        res3 = linking_solve(basis, nl, params, geom3, opts)
        row["linking"] = {"ok": res3.ok, "failure": res3.failure,
                          "beta": res3.beta, "rho1": rho1, "R1": R1}
        high_points.extend(res3.points)
    except LinkingGapError as exc:
        row["linking"] = {"ok": False, "failure": str(exc)}

    all_points = dedup_points(basis, low_points + high_points, opts.dedup_tol)
    classification = classify_solutions(all_points, sup_hj, c_rho1_sq,
                                        lambdas=basis.lams,
                                        dedup_tol=opts.dedup_tol,
                                        trivial_tol=opts.trivial_tol)
    row["classification"] = classification
    row["points"] = _verified_rows(basis, nl, params, opts, all_points)
    row["passed"] = classification["passed"]
    if not classification["passed"]:
        row["reason"] = classification["reason"]
    return row


def run_multiplicity(cfg: RunConfig, out_dir: str, quiet: bool = False) -> tuple[int, dict]:
    _ensure_outdir(out_dir)
    sweep = cfg.lambda_sweep
    if not sweep or "eigen_index" not in sweep:
        raise ConfigError("multiplicity needs lambda_sweep.eigen_index and delta_list")
    eigen_index = sweep["eigen_index"]
    if eigen_index < 2:
        raise ConfigError("multiplicity requires eigen_index >= 2")
    basis = _build(cfg)
    nl = cfg.nonlinearity
    clusters = group_eigenvalues(basis, cfg.cluster_rel_tol)
    cluster = next((c for c in clusters if c.i == eigen_index), None)
    if cluster is None:
        raise ConfigError(
            "eigen_index %d does not start an eigenvalue cluster (clusters: %s)"
            % (eigen_index, ", ".join("{%d..%d}" % (c.i, c.j) for c in clusters)))
    if cluster.j >= basis.K_max:
        raise ConfigError("cluster {%d..%d} reaches K_max; raise K_max"
                          % (cluster.i, cluster.j))

    deltas = [float(d) for d in sweep["delta_list"]]
    tasks = [(k, d, _task_seed(cfg.rng_seed, k)) for k, d in enumerate(deltas)]
    if cfg.threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            rows = list(pool.map(
                lambda t: _multiplicity_row(basis, nl, cfg, cluster, t[1], t[2]),
                tasks))
    else:
        rows = [_multiplicity_row(basis, nl, cfg, cluster, d, s)
                for _, d, s in tasks]

    passing = [r["delta"] for r in rows if r.get("passed")]
    report = {
        "schema": SCHEMA,
        "command": "multiplicity",
        "eigen_index": eigen_index,
        "cluster": [cluster.i, cluster.j],
        "lambda_i": basis.lam(cluster.i),
        "rows": rows,
        "achieved_delta": max(passing) if passing else None,
        "any_passed": bool(passing),
    }
    solutions = {
        "schema": SCHEMA,
        "rng_seed": cfg.rng_seed,
        "runs": [{"delta": r["delta"], "lambda": r["lambda"],
                  "points": r.get("points", [])} for r in rows],
    }
    jsonio.dump(report, os.path.join(out_dir, "report.json"))
    jsonio.dump(solutions, os.path.join(out_dir, "solutions.json"))
    if not quiet:
        for r in rows:
            status = "PASS" if r.get("passed") else "fail(%s)" % r.get("reason", "?")
            print("  delta=%-8g lambda=%.6f  %s" % (r["delta"], r["lambda"], status))
        print("achieved delta window:", report["achieved_delta"])
    return (EXIT_OK if passing else EXIT_NO_SOLUTION), report


# ---------------------------------------------------------------------------
# verify


def _check_gradient_fd(basis, nl, params, n_pairs: int, rng_seed: int) -> dict:
    rng = np.random.default_rng(rng_seed)
    worst = 0.0
    for _ in range(n_pairs):
        u = rng.standard_normal(basis.K_max) / np.sqrt(basis.lams)
        u *= rng.uniform(0.1, 2.0) / max(h_norm(basis, u), 1e-300)
        w = rng.standard_normal(basis.K_max) / np.sqrt(basis.lams)
        w /= max(h_norm(basis, w), 1e-300)
        g = gradient(basis, nl, params, u)
        lhs = float(np.dot(basis.lams, g * w))
        h = 1e-5
        fd = (energy(basis, nl, params, u + h * w)
              - energy(basis, nl, params, u - h * w)) / (2 * h)
        fu = energy(basis, nl, params, u)
        err = abs(lhs - fd) / (1.0 + abs(fu))
        worst = max(worst, err)
    return {"n_pairs": n_pairs, "max_scaled_error": worst,
            "passed": worst < 1e-6}


def _check_k_decay(basis) -> dict:
    exact = True
    for k in (1, min(3, basis.K_max), basis.K_max):
        e = basis.unit_mode(k)
        out = apply_K(basis, e)
        expect = np.zeros(basis.K_max)
        expect[k - 1] = 1.0 / basis.lam(k)
        exact = exact and bool(np.array_equal(out, expect))
    ones = np.ones(basis.K_max)
    img = apply_K(basis, ones)
    cuts = [basis.K_max // 4, basis.K_max // 2, 3 * basis.K_max // 4]
    cuts = sorted({max(1, c) for c in cuts})
    tails = [float(np.sum(basis.lams[c:] * img[c:] ** 2)) for c in cuts]
    decreasing = all(b < a for a, b in zip(tails, tails[1:]))
    bound_ok = float(np.sum(basis.lams * img**2)) <= (1.0 / basis.lam(1)) * basis.K_max
    return {"unit_mode_exact": exact, "tail_cuts": cuts, "tail_h_norms_sq": tails,
            "tails_decreasing": decreasing, "operator_bound_ok": bound_ok,
            "passed": exact and decreasing and bound_ok}


def run_verify(cfg: RunConfig, out_dir: str, quiet: bool = False) -> tuple[int, dict]:
    _ensure_outdir(out_dir)
    basis = _build(cfg)
    nl = cfg.nonlinearity
    toggles = cfg.verify
    opts = cfg.solver
    lam = cfg.lam if cfg.lam is not None else 0.0
    params = ProblemParams(lam)
    checks: list[dict] = []

    def add(name: str, detail: dict) -> None:
        checks.append({"name": name, "passed": bool(detail.get("passed")),
                       "detail": detail})

    def guarded(name: str, fn) -> None:
        from .functional import FunctionalEvaluationError
        from .geometry import NablaWindowError

        try:
            fn()
        except (ValueError, FunctionalEvaluationError, NablaWindowError,
                LinkingGapError, IterateBlowupError) as exc:
            add(name, {"passed": False, "error": str(exc)})

    def do_poincare():
        idx = toggles.get("poincare_index", min(4, basis.K_max - 1))
        trials = toggles.get("poincare_trials", 1000)
        rep = check_poincare(basis, SubspaceSplit(idx, idx), trials,
                             rng_seed=cfg.rng_seed)
        add("poincare", rep)

    def do_gradient_fd():
        add("gradient_fd", _check_gradient_fd(
            basis, nl, params, toggles.get("gradient_pairs", 100), cfg.rng_seed))

    def do_hypotheses():
        rep = validate_hypotheses(nl)
        rep["passed"] = rep["all_passed"]
        add("hypotheses", rep)

    def do_sweep():
        j = toggles.get("sweep_index", 1)
        lam_j = basis.lam(j)
        lam_list = toggles.get("sweep_lambdas",
                               [0.0, 0.5 * lam_j, 0.9 * lam_j, 0.99 * lam_j,
                                0.999 * lam_j])
        rep = sup_hj_sweep(basis, nl, j, lam_list, opts)
        rep["passed"] = rep["strictly_decreasing"] and rep["final_below_threshold"]
        add("sup_sweep", rep)
        jsonio.write_csv(os.path.join(out_dir, "sweep.csv"),
                         ["lambda_gap", "sup_value"],
                         [[r["lambda_gap"], r["sup"]] for r in rep["rows"]])

    if toggles.get("poincare"):
        guarded("poincare", do_poincare)
    if toggles.get("gradient_fd"):
        guarded("gradient_fd", do_gradient_fd)
    if toggles.get("hypotheses"):
        guarded("hypotheses", do_hypotheses)
    if toggles.get("k_decay"):
        guarded("k_decay", lambda: add("k_decay", _check_k_decay(basis)))
    if toggles.get("sup_sweep"):
        guarded("sup_sweep", do_sweep)
    def need_cluster(toggle: str) -> SubspaceSplit:
        eigen_index = toggles.get("eigen_index")
        if eigen_index is None:
            raise ConfigError("verify.%s needs verify.eigen_index" % toggle)
        clusters = group_eigenvalues(basis, cfg.cluster_rel_tol)
        cluster = next((c for c in clusters if c.i == eigen_index), None)
        if cluster is None:
            raise ConfigError("verify.eigen_index must start a cluster")
        return cluster

    def do_linking_gap():
        cluster = need_cluster("linking_gap")
        geom = scan_lemma_radii(basis, nl, params, cluster, opts)
        gap = linking_gap(basis, nl, params, geom, opts)
        rep = gap.to_json_dict()
        rep["passed"] = gap.certified
        add("linking_gap", rep)

    def do_nabla():
        cluster = need_cluster("nabla")
        window = toggles.get("nabla_window")
        if window is None:
            sup_hj, _ = sup_on_subspace(basis, nl, params, cluster.j, opts)
            if sup_hj <= 0:
                raise ValueError("cannot derive a level window: sup over the "
                                 "low block is nonpositive")
            window = [0.05 * sup_hj, 0.5 * sup_hj]
        chk = NablaCheckParams(split=cluster, eps_lo=float(window[0]),
                               eps_hi=float(window[1]),
                               gamma=float(toggles.get("nabla_gamma", 0.1)),
                               sample_count=int(toggles.get("nabla_samples", 10000)),
                               rng_seed=cfg.rng_seed)
        val, witness, meta = nabla_condition_estimate(basis, nl, params, chk, opts)
        rep = {"inf_estimate": val, "witness_coeffs": witness.tolist(),
               "window": [chk.eps_lo, chk.eps_hi], "gamma": chk.gamma,
               "meta": meta, "passed": val > 0.0}
        add("nabla", rep)

    if toggles.get("linking_gap"):
        guarded("linking_gap", do_linking_gap)
    if toggles.get("nabla"):
        guarded("nabla", do_nabla)

    all_passed = all(c["passed"] for c in checks)
    report = {
        "schema": SCHEMA,
        "command": "verify",
        "lambda": lam,
        "checks": checks,
        "all_passed": all_passed,
    }
    jsonio.dump(report, os.path.join(out_dir, "report.json"))
    if not quiet:
        for c in checks:
            print("  %-14s %s" % (c["name"], "PASS" if c["passed"] else "FAIL"))
    return (EXIT_OK if all_passed else EXIT_VERIFY_FAILED), report
