"""Desk-scale verification of the variational geometry behind the solvers.

Each check measures a finite-dimensional surrogate of an inequality the
theory guarantees: the two-sided Poincare bounds (exact in coefficients),
the barrier gap between the boundary set T and the sphere S, the projected
gradient lower bound on a level band near a subspace, the vanishing of the
low-subspace supremum, and the level ordering that separates the solution
bands.  Sampling-based estimates are reported as evidence with their
parameters, never as proofs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .basis import (CoefVec, SpectralBasis, SubspaceSplit, check_split, h_norm,
                    h_norm_sq, l2_norm_sq)
from .functional import (Nonlinearity, ProblemParams, energy, energy_many,
                         gradient, hessian_matrix)
from .minimax import (CriticalPoint, LinkingGeometry, SolverOptions, ray_max,
                      sphere_extremum, sup_on_subspace)


class NablaWindowError(RuntimeError):
    """No admissible sample fell in the requested level window."""


@dataclass(frozen=True)
class NablaCheckParams:
    """Sampling plan for the projected-gradient lower-bound estimate."""

    split: SubspaceSplit
    eps_lo: float
    eps_hi: float
    gamma: float
    sample_count: int = 10_000
    rng_seed: int = 42

    def __post_init__(self):
        if not 0.0 < self.eps_lo < self.eps_hi:
            raise ValueError("need 0 < eps_lo < eps_hi")
        if not self.gamma > 0.0:
            raise ValueError("gamma must be positive")
        if self.sample_count < 1000:
            raise ValueError("sample_count must be >= 1000")


@dataclass(frozen=True)
class GapReport:
    sup_T: float
    inf_S: float
    gap: float
    certified: bool
    rho: float
    R: float
    metadata: dict

    def to_json_dict(self) -> dict:
        return {"sup_T": self.sup_T, "inf_S": self.inf_S, "gap": self.gap,
                "certified": self.certified, "rho": self.rho, "R": self.R,
                "metadata": self.metadata}


# ---------------------------------------------------------------------------
# Poincare inequalities


def check_poincare(basis: SpectralBasis, split: SubspaceSplit, trials: int,
                   rng_seed: int = 42, rel_slack: float = 1e-12) -> dict:
    """Randomized audit of the two-sided Poincare inequalities.

    Low-part vectors (modes 1..i) must satisfy ||u||_H^2 <= lam_i ||u||_2^2,
    high-part vectors (modes i+1..) the reverse with lam_{i+1}; both are
    coefficient identities, so the slack is pure float tolerance.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    i = split.i
    if i >= basis.K_max:
        raise ValueError("split.i must be < K_max for the high-part check")
    lam_i, lam_next = basis.lam(i), basis.lam(i + 1)
    rng = np.random.default_rng(rng_seed)
    violations: list[dict] = []
    worst_low, worst_high = -np.inf, -np.inf
    for trial in range(trials):
        u = np.zeros(basis.K_max)
        u[:i] = rng.standard_normal(i)
        lhs, rhs = h_norm_sq(basis, u), lam_i * l2_norm_sq(basis, u)
        margin = (lhs - rhs) / max(rhs, 1e-300)
        worst_low = max(worst_low, margin)
        if margin > rel_slack:
            violations.append({"trial": trial, "side": "low", "margin": margin})

        v = np.zeros(basis.K_max)
        v[i:] = rng.standard_normal(basis.K_max - i)
        lhs2, rhs2 = h_norm_sq(basis, v), lam_next * l2_norm_sq(basis, v)
        margin2 = (rhs2 - lhs2) / max(lhs2, 1e-300)
        worst_high = max(worst_high, margin2)
        if margin2 > rel_slack:
            violations.append({"trial": trial, "side": "high", "margin": margin2})
    return {
        "trials": trials,
        "rng_seed": rng_seed,
        "violations": violations,
        "worst_low_margin": worst_low,
        "worst_high_margin": worst_high,
        "passed": not violations,
    }


# ---------------------------------------------------------------------------
# barrier gap (boundary set T versus sphere S)


def _sup_on_ball(basis, nl, params, dim: int, R: float, opts: SolverOptions) -> float:
    """Supremum of f over the radius-R ball of the first `dim` modes."""
    if dim == 0:
        return 0.0
    val, arg = sup_on_subspace(basis, nl, params, dim, opts)
    if h_norm(basis, arg) <= R:
        return max(val, 0.0)
    mask = np.zeros(basis.K_max, dtype=bool)
    mask[:dim] = True
    sphere_val, _, _ = sphere_extremum(basis, nl, params, mask, R,
                                       minimize=False, opts=opts)
    return max(sphere_val, 0.0)


def scan_sphere_radius(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                       first_mode: int, opts: SolverOptions,
                       rho_grid: np.ndarray | None = None
                       ) -> tuple[float, float]:
    """Pick rho on a log grid maximizing inf f over the sphere in span(modes >= first_mode)."""
    if rho_grid is None:
        rho_grid = np.geomspace(1e-3, 1.0, 13)
    mask = np.zeros(basis.K_max, dtype=bool)
    mask[first_mode - 1:] = True
    quick = replace(opts, sphere_iters=120, n_random_starts=4)
    best_rho, best_inf = float(rho_grid[0]), -np.inf
    for rho in rho_grid:
        val, _, _ = sphere_extremum(basis, nl, params, mask, float(rho),
                                    minimize=True, opts=quick)
        if val > best_inf:
            best_rho, best_inf = float(rho), val
    return best_rho, best_inf


def scan_cap_radius(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                    mask: np.ndarray, rho_min: float, opts: SolverOptions,
                    R_limit: float = 2.0**20) -> float:
    """Smallest dyadic R > rho_min with sup f on the masked R-sphere < 0."""
    quick = replace(opts, sphere_iters=120, n_random_starts=4)

    def sup_at(R: float) -> float:
        val, _, _ = sphere_extremum(basis, nl, params, mask, R,
                                    minimize=False, opts=quick)
        return val

    R = 1.0
    while R <= rho_min:
        R *= 2.0
    while sup_at(R) >= 0.0:
        R *= 2.0
        if R > R_limit:
            raise ValueError("no negative-energy sphere radius found up to %g" % R_limit)
    while R / 2.0 > rho_min and sup_at(R / 2.0) < 0.0:
        R /= 2.0
    return R


def scan_lemma_radii(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                     split: SubspaceSplit, opts: SolverOptions | None = None
                     ) -> LinkingGeometry:
    """Line-scan (rho, R) for the barrier-gap geometry of the split.

    rho maximizes the sphere infimum over span(modes >= i); R is the
    smallest dyadic radius whose sphere in the low block (modes 1..j) has
    negative supremum.
    """
    opts = opts or SolverOptions()
    if split.i < 2:
        raise ValueError("the barrier-gap construction needs i >= 2")
    rho, _ = scan_sphere_radius(basis, nl, params, split.i, opts)
    mask = np.zeros(basis.K_max, dtype=bool)
    mask[:split.j] = True
    R = scan_cap_radius(basis, nl, params, mask, rho, opts)
    return LinkingGeometry(split=split, rho=rho, R=R)


def linking_gap(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                geom: LinkingGeometry, opts: SolverOptions | None = None,
                margin: float = 0.0) -> GapReport:
    """Measure sup f(T) and inf f(S) for the two-piece boundary set.

    T is the union of the R-sphere in the low block (modes 1..j) and the
    R-ball in modes 1..i-1; S is the rho-sphere in span(modes >= i) of the
    truncated space.  ``certified`` means gap = inf - sup > margin; an
    uncertified report still carries both measured values.
    """
    opts = opts or SolverOptions()
    split = geom.split
    check_split(basis, split)
    if split.i < 2:
        raise ValueError("gap check needs i >= 2 (nontrivial low block)")
    lam_lo, lam_j = basis.lam(split.i - 1), basis.lam(split.j)
    in_range = lam_lo < params.lam < lam_j
    mask_S = np.zeros(basis.K_max, dtype=bool)
    mask_S[split.i - 1:] = True
    inf_S, arg_S, meta_S = sphere_extremum(basis, nl, params, mask_S, geom.rho,
                                           minimize=True, opts=opts)
    mask_T = np.zeros(basis.K_max, dtype=bool)
    mask_T[:split.j] = True
    sup_sphere, _, meta_T = sphere_extremum(basis, nl, params, mask_T, geom.R,
                                            minimize=False, opts=opts)
    sup_ball = _sup_on_ball(basis, nl, params, split.i - 1, geom.R, opts)
    sup_T = max(sup_sphere, sup_ball)
    gap = inf_S - sup_T
    metadata = {
        "lambda": params.lam,
        "lambda_in_range": bool(in_range),
        "margin": margin,
        "rng_seed": opts.rng_seed,
        "sup_sphere_lowblock": sup_sphere,
        "sup_ball": sup_ball,
        "sphere_meta": meta_S,
        "cap_meta": meta_T,
    }
    return GapReport(sup_T=sup_T, inf_S=inf_S, gap=gap,
                     certified=bool(gap > margin), rho=geom.rho, R=geom.R,
                     metadata=metadata)


def third_solution_threshold(basis: SpectralBasis, nl: Nonlinearity,
                             params: ProblemParams, split: SubspaceSplit,
                             opts: SolverOptions | None = None,
                             rho_grid: np.ndarray | None = None,
                             tau_factor: float = 0.1
                             ) -> tuple[float, float, float] | None:
    """Certify a sphere radius rho1 whose infimum dominates C * rho1^2.

    C = (1 - lam/lam_{j+1} - tau)/2 with tau = tau_factor*(1 - lam_j/lam_{j+1}).
    Scans rho1 from large to small and returns (rho1, C*rho1^2, inf_S) for the
    largest certified radius, or None if the scan fails everywhere.
    """
    opts = opts or SolverOptions()
    check_split(basis, split)
    j = split.j
    lam_j, lam_next = basis.lam(j), basis.lam(j + 1)
    tau = tau_factor * (1.0 - lam_j / lam_next)
    C = 0.5 * (1.0 - params.lam / lam_next - tau)
    if C <= 0.0:
        return None
    if rho_grid is None:
        rho_grid = np.geomspace(1.0, 1e-3, 16)
    mask = np.zeros(basis.K_max, dtype=bool)
    mask[j:] = True
    quick = replace(opts, sphere_iters=150, n_random_starts=4)
    for rho1 in rho_grid:
        inf_S, _, _ = sphere_extremum(basis, nl, params, mask, float(rho1),
                                      minimize=True, opts=quick)
        thr = C * float(rho1) ** 2
        if inf_S >= thr > 0.0:
            return float(rho1), thr, inf_S
    return None


# ---------------------------------------------------------------------------
# projected-gradient lower bound on a level band


def nabla_condition_estimate(basis: SpectralBasis, nl: Nonlinearity,
                             params: ProblemParams, chk: NablaCheckParams,
                             opts: SolverOptions | None = None,
                             descend_from: int = 5, descent_iters: int = 80
                             ) -> tuple[float, CoefVec, dict]:
    """Estimate inf ||Q grad f|| over {eps_lo <= f <= eps_hi, d(u, M) <= gamma}.

    M is the complement of the split's mid block.  Random directions in M,
    perturbed inside the gamma-ball of the mid block, are amplitude-scanned
    for level-window hits; the projected-gradient norm is then locally
    minimized (with window and band projection) from the smallest sampled
    values.  A strictly positive estimate is evidence, not proof.
    """
    opts = opts or SolverOptions()
    split = chk.split
    check_split(basis, split)
    mid = np.zeros(basis.K_max, dtype=bool)
    mid[split.i - 1:split.j] = True
    Mmask = ~mid
    rng = np.random.default_rng(chk.rng_seed)

    t_grid = np.geomspace(1e-4, 16.0, 48)
    samples: list[np.ndarray] = []
    n_rounds = 0
    max_rounds = 400 * max(1, chk.sample_count // len(t_grid))
    while len(samples) < chk.sample_count and n_rounds < max_rounds:
        n_rounds += 1
        d = np.zeros(basis.K_max)
        d[Mmask] = rng.standard_normal(int(Mmask.sum()))
        d /= h_norm(basis, d)
        n_vec = np.zeros(basis.K_max)
        n_vec[mid] = rng.standard_normal(int(mid.sum()))
        nn = h_norm(basis, n_vec)
        if nn > 0:
            n_vec *= chk.gamma * rng.uniform() / nn
        cand = np.outer(t_grid, d) + n_vec
        fv = energy_many(basis, nl, params, cand)
        hits = np.flatnonzero((fv >= chk.eps_lo) & (fv <= chk.eps_hi))
        for h in hits:
            samples.append(cand[h])
            if len(samples) >= chk.sample_count:
                break
    if not samples:
        raise NablaWindowError(
            "no sample landed in the level window [%g, %g]; widen the window "
            "or rescale (tried %d directions)" % (chk.eps_lo, chk.eps_hi, n_rounds))
    if len(samples) < max(100, chk.sample_count // 10):
        raise NablaWindowError(
            "level window [%g, %g] too narrow: only %d of %d requested samples "
            "found" % (chk.eps_lo, chk.eps_hi, len(samples), chk.sample_count))

    def q_norm(u: np.ndarray) -> float:
        g = gradient(basis, nl, params, u)
        return float(np.sqrt(np.dot(basis.lams[Mmask], g[Mmask] ** 2)))

    norms = np.array([q_norm(u) for u in samples])
    order = np.argsort(norms)
    best_val = float(norms[order[0]])
    best_wit = samples[order[0]]

    lamM = np.where(Mmask, basis.lams, 0.0)

    def in_window(u: np.ndarray) -> bool:
        f = energy(basis, nl, params, u)
        return chk.eps_lo <= f <= chk.eps_hi

    def project_band(u: np.ndarray) -> np.ndarray:
        v = u.copy()
        mid_norm = float(np.sqrt(np.dot(basis.lams[mid], v[mid] ** 2)))
        if mid_norm > chk.gamma:
            v[mid] *= chk.gamma / mid_norm
        return v

    for k in order[:descend_from]:
        u = samples[k].copy()
        hval = q_norm(u) ** 2
        for _ in range(descent_iters):
            g = gradient(basis, nl, params, u)
            J = hessian_matrix(basis, nl, params, u) if nl.g_t is not None else None
            if J is None:
                break
            gh = 2.0 * (J.T @ (lamM * g))
            gn = float(np.linalg.norm(gh))
            if gn <= 1e-14 * (1.0 + hval):
                break
            s, moved = 0.5 / (1.0 + gn), False
            for _ in range(opts.max_halvings):
                cand = project_band(u - s * gh)
                if in_window(cand):
                    hc = q_norm(cand) ** 2
                    if hc < hval:
                        u, hval, moved = cand, hc, True
                        break
                s *= 0.5
            if not moved:
                break
        val = np.sqrt(hval)
        if val < best_val:
            best_val, best_wit = float(val), u

    meta = {"n_samples": len(samples), "n_directions": n_rounds,
            "rng_seed": chk.rng_seed, "min_sampled": float(norms[order[0]]),
            "descents": int(min(descend_from, len(samples)))}
    return best_val, best_wit, meta


# ---------------------------------------------------------------------------
# vanishing supremum sweep


def sup_hj_sweep(basis: SpectralBasis, nl: Nonlinearity, j: int,
                 lambda_list, opts: SolverOptions | None = None,
                 threshold: float = 1e-3) -> dict:
    """Tabulate sup f over the first-j-modes block for increasing lam.

    ``lambda_list`` must increase toward lambda_j from below (lambda_j itself
    is allowed).  The table is checked for monotone decrease and for the
    final value dropping below the threshold.
    """
    opts = opts or SolverOptions()
    lam_j = basis.lam(j)
    lams = [float(x) for x in lambda_list]
    if any(b <= a for a, b in zip(lams, lams[1:])):
        raise ValueError("lambda_list must be strictly increasing")
    if any(x > lam_j for x in lams):
        raise ValueError("lambda_list must not exceed lambda_j = %.6g" % lam_j)
    rows = []
    warm = None
    for lam in lams:
        val, arg = sup_on_subspace(basis, nl, ProblemParams(lam), j, opts,
                                   warm_start=warm)
        if val > 0:
            warm = arg
        rows.append({"lambda": lam, "lambda_gap": lam_j - lam, "sup": val})
    sups = [r["sup"] for r in rows]
    return {
        "j": j,
        "lambda_j": lam_j,
        "rows": rows,
        "nonincreasing": all(b <= a for a, b in zip(sups, sups[1:])),
        "strictly_decreasing": all(b < a for a, b in zip(sups, sups[1:])),
        "final_below_threshold": bool(sups[-1] < threshold) if sups else True,
        "threshold": threshold,
    }


# ---------------------------------------------------------------------------
# solution classification


def classify_solutions(points: list[CriticalPoint], sup_hj: float,
                       c_rho1_sq: float, lambdas: np.ndarray | None = None,
                       dedup_tol: float = 1e-4, trivial_tol: float = 1e-6) -> dict:
    """Partition nontrivial points into level bands and check the 2+1 count.

    The low band is {level <= sup_hj}, the high band {level >= c_rho1_sq}.
    A pass needs at least two low-band and one high-band point, pairwise
    separated by more than ``dedup_tol`` in the H metric (plain Euclidean
    distance when no eigenvalues are supplied).  Pure function: identical
    inputs yield an identical report.
    """

    def dist(a: np.ndarray, b: np.ndarray) -> float:
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        if lambdas is None:
            return float(np.linalg.norm(d))
        return float(np.sqrt(np.dot(lambdas, d * d)))

    def norm(a) -> float:
        return dist(a, np.zeros_like(np.asarray(a, dtype=float)))

    nontrivial = [(k, cp) for k, cp in enumerate(points) if norm(cp.u) > trivial_tol]
    low = [k for k, cp in nontrivial if cp.level <= sup_hj]
    high = [k for k, cp in nontrivial if cp.level >= c_rho1_sq]
    n = len(nontrivial)
    dmat = [[dist(nontrivial[a][1].u, nontrivial[b][1].u) for b in range(n)]
            for a in range(n)]
    separated = all(dmat[a][b] > dedup_tol for a in range(n) for b in range(a + 1, n))

    reason = None
    if sup_hj >= c_rho1_sq:
        reason = "band thresholds not ordered: sup_hj >= c_rho1_sq"
    elif len(low) < 2:
        reason = "fewer than two low-level solutions"
    elif len(high) < 1:
        reason = "missing third solution"
    elif not separated:
        reason = "points not pairwise separated"
    return {
        "n_input": len(points),
        "n_nontrivial": n,
        "sup_hj": sup_hj,
        "c_rho1_sq": c_rho1_sq,
        "low_band": [{"index": k, "level": points[k].level} for k in low],
        "high_band": [{"index": k, "level": points[k].level} for k in high],
        "pairwise_h_distances": dmat,
        "min_pairwise_distance": (min(dmat[a][b] for a in range(n)
                                      for b in range(a + 1, n)) if n > 1 else None),
        "passed": reason is None,
        "reason": reason,
    }
