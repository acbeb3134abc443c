"""Minimax and deflation solvers for critical points of the energy functional.

Three discovery routes are provided:

* a mountain-pass path algorithm (descend the maximum of a polyline from the
  origin to a far low-energy endpoint, with arclength reparametrization),
* a linking algorithm over a meshed half-ball spanning a low subspace and
  one transversal mode (descend the mesh maximum, boundary frozen),
* damped Newton on the gradient coefficients with multiplicative deflation
  of already-found roots.

Path and mesh maxima are polished by Newton before a point is accepted, and
every accepted point is re-certified with a fresh gradient evaluation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import (CoefVec, SpectralBasis, SubspaceSplit, check_split, h_norm,
                    h_norm_sq)
from .functional import (Nonlinearity, ProblemParams, energy, energy_many,
                         euclidean_hessian, gradient)


class IterateBlowupError(RuntimeError):
    """A descent trajectory exceeded the configured norm cap."""


class LinkingGapError(RuntimeError):
    """The linking geometry failed verification; carries the measured values."""

    def __init__(self, message: str, inf_sphere: float, sup_boundary: float):
        super().__init__(message)
        self.inf_sphere = inf_sphere
        self.sup_boundary = sup_boundary


@dataclass(frozen=True)
class SolverOptions:
    residual_tol: float = 1e-8       # certification threshold on ||grad f||_H
    dedup_tol: float = 1e-4          # H-distance separating distinct points
    flow_tol: float = 1e-3           # residual at which flows hand off to Newton
    max_flow_iters: int = 10_000
    max_newton_iters: int = 200
    newton_every: int = 25           # polish attempt cadence during flows
    armijo_c: float = 1e-4
    max_halvings: int = 40
    path_nodes: int = 65
    mesh_subdivisions: int = 16
    norm_cap: float = 1e8
    rng_seed: int = 42
    n_random_starts: int = 8
    sphere_iters: int = 400
    compute_morse: bool = True
    trivial_tol: float = 1e-6        # below this H-norm a point counts as trivial

    def validate(self) -> None:
        for name in ("residual_tol", "dedup_tol", "flow_tol", "norm_cap",
                     "trivial_tol"):
            if not getattr(self, name) > 0:
                raise ValueError("%s must be positive" % name)
        if self.path_nodes < 3:
            raise ValueError("path_nodes must be >= 3")
        if self.mesh_subdivisions < 2:
            raise ValueError("mesh_subdivisions must be >= 2")


@dataclass(frozen=True)
class LinkingGeometry:
    """Radii and subspace split for the linking constructions.

    ``split`` delimits the eigenvalue cluster; ``rho`` is the sphere radius
    in the orthogonal block, ``R`` the cap radius, and ``direction`` the
    1-based index of the transversal mode (defaults to j+1).  The optional
    radii ``rho1``/``rho_lo``/``rho_hi`` describe the annular box set of the
    two-point construction.
    """

    split: SubspaceSplit
    rho: float
    R: float
    direction: int | None = None
    rho1: float | None = None
    rho_lo: float | None = None
    rho_hi: float | None = None

    def __post_init__(self):
        if not 0 < self.rho < self.R:
            raise ValueError("need 0 < rho < R, got rho=%g R=%g" % (self.rho, self.R))
        if self.rho_lo is not None or self.rho_hi is not None:
            if self.rho_lo is None or self.rho_hi is None or self.rho1 is None:
                raise ValueError("rho_lo, rho_hi and rho1 must be given together")
            if not (0 <= self.rho_lo < self.rho < self.rho_hi):
                raise ValueError("need 0 <= rho_lo < rho < rho_hi")
            if not self.rho1 > 0:
                raise ValueError("rho1 must be positive")

    def direction_index(self) -> int:
        return self.split.j + 1 if self.direction is None else self.direction


@dataclass
class CriticalPoint:
    u: CoefVec
    level: float
    residual: float
    method: str
    morse_estimate: int | None = None
    provenance: str = ""
    rng_seed: int | None = None

    def to_json_dict(self) -> dict:
        return {
            "coeffs": np.asarray(self.u, dtype=float).tolist(),
            "level": self.level,
            "residual": self.residual,
            "method": self.method,
            "morse_estimate": self.morse_estimate,
            "provenance": self.provenance,
            "rng_seed": self.rng_seed,
        }


@dataclass
class MinimaxResult:
    points: list[CriticalPoint] = field(default_factory=list)
    beta: float | None = None
    history: list[dict] = field(default_factory=list)
    failure: str | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.failure is None and bool(self.points)


# ---------------------------------------------------------------------------
# shared machinery


def _check_cap(basis: SpectralBasis, u: CoefVec, opts: SolverOptions, where: str) -> None:
    n = h_norm(basis, u)
    if n > opts.norm_cap:
        raise IterateBlowupError(
            "%s: iterate H-norm %.3e exceeded cap %.3e (unbounded trajectory)"
            % (where, n, opts.norm_cap)
        )


def morse_index(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                u: CoefVec, tol: float = 1e-8) -> int | None:
    """Number of negative Hessian directions in the H inner product."""
    if nl.g_t is None:
        return None
    from scipy.linalg import eigh

    H = euclidean_hessian(basis, nl, params, u)
    w = eigh(H, np.diag(basis.lams), eigvals_only=True)
    return int(np.sum(w < -tol))


def certify(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
            u: CoefVec, method: str, opts: SolverOptions,
            provenance: str = "") -> CriticalPoint:
    """Build a certified CriticalPoint from a fresh gradient evaluation."""
    g = gradient(basis, nl, params, u)
    res = h_norm(basis, g)
    if res > opts.residual_tol:
        raise RuntimeError(
            "certification failed: residual %.3e > %.1e" % (res, opts.residual_tol)
        )
    lev = energy(basis, nl, params, u)
    mi = morse_index(basis, nl, params, u) if opts.compute_morse else None
    return CriticalPoint(u=np.array(u, dtype=float), level=lev, residual=res,
                         method=method, morse_estimate=mi, provenance=provenance,
                         rng_seed=opts.rng_seed)


def _deflation(basis: SpectralBasis, u: CoefVec, roots: list[CoefVec]):
    """Shifted inverse-distance deflation factor and its coefficient gradient."""
    D = 1.0
    grad_over_D = np.zeros_like(u)
    for r in roots:
        diff = u - r
        d2 = max(h_norm_sq(basis, diff), 1e-30)
        m = 1.0 / d2 + 1.0
        D *= m
        grad_over_D += (-2.0 / d2**2) * (basis.lams * diff) / m
    return D, D * grad_over_D


def _deflated_merit(basis, nl, params, roots, v) -> float:
    F = gradient(basis, nl, params, v)
    D, _ = _deflation(basis, v, roots)
    return 0.5 * h_norm_sq(basis, D * F)


def newton_polish(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                  u0: CoefVec, opts: SolverOptions,
                  roots: list[CoefVec] | None = None) -> tuple[CoefVec, bool, int]:
    """Damped Newton on the gradient coefficients, optionally deflated.

    Returns (point, converged, iterations).  Convergence is measured on the
    plain (undeflated) residual.  A singular Newton system falls back to a
    deflated-gradient step.
    """
    from .functional import hessian_matrix

    roots = list(roots or [])
    u = np.array(u0, dtype=float)
    for it in range(opts.max_newton_iters):
        F = gradient(basis, nl, params, u)
        res = h_norm(basis, F)
        if res <= opts.residual_tol:
            return u, True, it
        D, gradD = _deflation(basis, u, roots)
        Ft = D * F
        try:
            J = hessian_matrix(basis, nl, params, u)
        except ValueError:
            # no analytic derivative: secant-style fallback on the merit
            J = None
        if J is not None:
            Jt = D * J + np.outer(F, gradD)
            try:
                step = np.linalg.solve(Jt, -Ft)
                if not np.all(np.isfinite(step)):
                    raise np.linalg.LinAlgError
            except np.linalg.LinAlgError:
                step = -Ft
        else:
            step = -Ft
        merit0 = 0.5 * h_norm_sq(basis, Ft)
        s, accepted = 1.0, False
        for _ in range(opts.max_halvings):
            cand = u + s * step
            if _deflated_merit(basis, nl, params, roots, cand) <= merit0 * (1.0 - opts.armijo_c * s):
                u = cand
                accepted = True
                break
            s *= 0.5
        if not accepted:
            return u, False, it
        _check_cap(basis, u, opts, "newton")
    return u, False, opts.max_newton_iters


def _armijo_descent(basis, nl, params, z, g, f_z, opts) -> tuple[CoefVec, float, bool]:
    """One Armijo-backtracked H-steepest-descent step from z."""
    slope = h_norm_sq(basis, g)
    s = 1.0
    for _ in range(opts.max_halvings):
        cand = z - s * g
        fc = energy(basis, nl, params, cand)
        if fc <= f_z - opts.armijo_c * s * slope:
            return cand, fc, True
        s *= 0.5
    return z, f_z, False


def _band_slack(x: float) -> float:
    return 1e-9 * (1.0 + abs(x))


# ---------------------------------------------------------------------------
# ray and subspace maximization


def dyadic_far_point(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                     direction: CoefVec, floor: float = -1.0,
                     t_limit: float = 2.0**60) -> float:
    """Smallest dyadic t with f(t * direction) < floor."""
    t = 1.0
    while energy(basis, nl, params, t * direction) >= floor:
        t *= 2.0
        if t > t_limit:
            raise ValueError(
                "no far endpoint with f < %g found along the ray (superlinear "
                "decay absent?)" % floor
            )
    while t > 2.0**-60 and energy(basis, nl, params, 0.5 * t * direction) < floor:
        t *= 0.5
    return t


def ray_max(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
            direction: CoefVec, grid_n: int = 129,
            tol: float = 1e-12) -> tuple[float, float]:
    """Maximize t -> f(t * direction) on [0, t_far] by grid + golden section.

    Returns (t_star, value) with value >= 0 (the ray contains the origin).
    """
    d = basis.check_coeffs(direction)
    if h_norm(basis, d) == 0.0:
        raise ValueError("direction must be nonzero")
    t_far = dyadic_far_point(basis, nl, params, d)
    ts = np.linspace(0.0, t_far, grid_n)
    fs = energy_many(basis, nl, params, np.outer(ts, d))
    k = int(np.argmax(fs))
    if fs[k] <= 0.0:
        return 0.0, 0.0
    lo = ts[max(k - 1, 0)]
    hi = ts[min(k + 1, grid_n - 1)]
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    e = a + invphi * (b - a)
    fc = energy(basis, nl, params, c * d)
    fe = energy(basis, nl, params, e * d)
    while b - a > tol * max(1.0, t_far):
        if fc > fe:
            b, e, fe = e, c, fc
            c = b - invphi * (b - a)
            fc = energy(basis, nl, params, c * d)
        else:
            a, c, fc = c, e, fe
            e = a + invphi * (b - a)
            fe = energy(basis, nl, params, e * d)
    t_star = 0.5 * (a + b)
    val = energy(basis, nl, params, t_star * d)
    if val <= 0.0:
        return 0.0, 0.0
    return float(t_star), float(val)


def sup_on_subspace(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                    j: int, opts: SolverOptions | None = None,
                    warm_start: CoefVec | None = None) -> tuple[float, CoefVec]:
    """Maximize f over the span of the first j modes by multistart trust region.

    For lam >= lambda_j the supremum is 0, attained at the origin, and is
    returned exactly.  Restarts include symmetric +- pairs seeded at the
    per-mode ray maxima; at least 2j+1 starts are used.
    """
    from scipy.optimize import minimize

    opts = opts or SolverOptions()
    if not 1 <= j <= basis.K_max:
        raise ValueError("j must be in 1..%d, got %d" % (basis.K_max, j))
    zeros = np.zeros(basis.K_max)
    if params.lam >= basis.lam(j):
        return 0.0, zeros

    def embed(aj: np.ndarray) -> np.ndarray:
        a = np.zeros(basis.K_max)
        a[:j] = aj
        return a

    def neg_f(aj):
        return -energy(basis, nl, params, embed(aj))

    def neg_grad(aj):
        a = embed(aj)
        return -(basis.lams * gradient(basis, nl, params, a))[:j]

    have_hess = nl.g_t is not None

    def neg_hess(aj):
        return -euclidean_hessian(basis, nl, params, embed(aj))[:j, :j]

    starts: list[np.ndarray] = []
    for k in range(1, j + 1):
        try:
            t_k, _ = ray_max(basis, nl, params, basis.unit_mode(k))
        except ValueError:
            t_k = 0.0
        amp = t_k if t_k > 0 else 0.1
        e = np.zeros(j)
        e[k - 1] = amp
        starts.extend([e, -e])
    if warm_start is not None:
        starts.append(np.asarray(warm_start, dtype=float)[:j])
    rng = np.random.default_rng(opts.rng_seed)
    while len(starts) < 2 * j + 1 + opts.n_random_starts:
        starts.append(0.3 * rng.standard_normal(j))

    best_val, best_arg = 0.0, zeros
    failed = 0
    for s0 in starts:
        if have_hess:
            r = minimize(neg_f, s0, jac=neg_grad, hess=neg_hess, method="trust-exact",
                         options={"gtol": 1e-12, "maxiter": 500})
        else:
            r = minimize(neg_f, s0, jac=neg_grad, method="L-BFGS-B",
                         options={"gtol": 1e-12, "maxiter": 500})
        if not r.success:
            failed += 1
        if -r.fun > best_val:
            best_val, best_arg = float(-r.fun), embed(r.x)
    if failed:
        import logging

        logging.getLogger(__name__).debug(
            "sup_on_subspace: %d/%d restarts did not report convergence",
            failed, len(starts))
    return best_val, best_arg


# ---------------------------------------------------------------------------
# sphere-constrained extremization (used by gap checks and scans)


def sphere_extremum(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                    mask: np.ndarray, radius: float, minimize: bool = True,
                    opts: SolverOptions | None = None,
                    extra_starts: list[CoefVec] | None = None,
                    max_mode_starts: int = 24) -> tuple[float, CoefVec, dict]:
    """Extremize f over the H-sphere of given radius inside a mode block.

    Each start runs a short projected H-gradient warmup on the sphere, then
    a quasi-Newton polish of the radially normalized objective
    v -> f(radius * v / ||v||_H), which is smooth and scale invariant, so
    converged values are seed-stable wherever the deterministic +-unit-mode
    starts reach the extremal basin.  The reduction over starts is a plain
    minimum in start order.
    """
    from scipy.optimize import minimize as scipy_minimize

    opts = opts or SolverOptions()
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (basis.K_max,) or not mask.any():
        raise ValueError("mask must select at least one mode")
    if radius <= 0:
        raise ValueError("radius must be positive")
    sign = 1.0 if minimize else -1.0
    midx = np.flatnonzero(mask)
    lam_m = basis.lams[midx]

    starts: list[np.ndarray] = []
    for k in midx[: max_mode_starts // 2]:
        e = np.zeros(basis.K_max)
        e[k] = 1.0
        starts.extend([e, -e])
    for v in extra_starts or []:
        w = np.asarray(v, dtype=float) * mask
        if h_norm(basis, w) > 0:
            starts.append(w)
    rng = np.random.default_rng(opts.rng_seed)
    for _ in range(opts.n_random_starts):
        v = np.zeros(basis.K_max)
        v[mask] = rng.standard_normal(int(mask.sum()))
        starts.append(v)

    def renorm(v: np.ndarray) -> np.ndarray:
        return v * (radius / h_norm(basis, v))

    def embed(vm: np.ndarray) -> np.ndarray:
        v = np.zeros(basis.K_max)
        v[midx] = vm
        return v

    def radial_fg(vm: np.ndarray) -> tuple[float, np.ndarray]:
        n = float(np.sqrt(np.dot(lam_m, vm * vm)))
        w = embed((radius / n) * vm)
        fval = sign * energy(basis, nl, params, w)
        e_full = basis.lams * gradient(basis, nl, params, w)
        e = sign * e_full[midx]
        s = float(np.dot(e, vm))
        grad_v = (radius / n) * e - (radius / n**3) * s * (lam_m * vm)
        return fval, grad_v

    best_val, best_arg = np.inf, None
    converged = 0
    r2 = radius * radius
    for v0 in starts:
        v = renorm(v0)
        fv = sign * energy(basis, nl, params, v)
        for _ in range(opts.sphere_iters):
            g = sign * gradient(basis, nl, params, v)
            g = g * mask
            g_tan = g - (np.dot(basis.lams, g * v) / r2) * v
            if h_norm(basis, g_tan) <= 1e-12 * (1.0 + abs(fv)):
                break
            slope = h_norm_sq(basis, g_tan)
            s, moved = 1.0, False
            for _ in range(opts.max_halvings):
                cand = renorm((v - s * g_tan) * mask)
                fc = sign * energy(basis, nl, params, cand)
                if fc <= fv - opts.armijo_c * s * slope:
                    v, fv, moved = cand, fc, True
                    break
                s *= 0.5
            if not moved:
                break
        res = scipy_minimize(radial_fg, v[midx], jac=True, method="L-BFGS-B",
                             options={"gtol": 1e-14, "ftol": 1e-16,
                                      "maxiter": 500})
        if res.success:
            converged += 1
        cand = renorm(embed(res.x))
        fc = sign * energy(basis, nl, params, cand)
        if fc < fv:
            v, fv = cand, fc
        if fv < best_val:
            best_val, best_arg = fv, v
    meta = {"n_starts": len(starts), "n_converged": converged}
    return sign * best_val, best_arg, meta


# ---------------------------------------------------------------------------
# mountain pass


def _reparametrize(basis: SpectralBasis, path: np.ndarray) -> np.ndarray:
    """Redistribute path nodes uniformly in H-arclength (endpoints fixed)."""
    diffs = path[1:] - path[:-1]
    seg = np.sqrt(np.maximum((diffs * diffs) @ basis.lams, 0.0))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total <= 0:
        return path
    target = np.linspace(0.0, total, len(path))
    out = np.empty_like(path)
    k = 0
    for i, si in enumerate(target):
        while k < len(seg) - 1 and s[k + 1] < si:
            k += 1
        t = 0.0 if seg[k] == 0 else (si - s[k]) / seg[k]
        out[i] = (1.0 - t) * path[k] + t * path[k + 1]
    out[0], out[-1] = path[0], path[-1]
    return out


def mountain_pass(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                  direction: CoefVec, opts: SolverOptions | None = None) -> MinimaxResult:
    """Mountain-pass search along deformations of the ray path to a far point.

    The polyline from 0 to the far endpoint is deformed by Armijo descent of
    its maximum node (ties: lowest index) with arclength reparametrization;
    the maximum is Newton-polished and accepted once it is a nontrivial
    critical point whose level lies in (0, initial path max].
    """
    opts = opts or SolverOptions()
    opts.validate()
    d = basis.check_coeffs(direction)
    dn = h_norm(basis, d)
    if dn == 0.0:
        raise ValueError("direction must be nonzero")
    d = d / dn
    if params.lam >= basis.lam(1):
        warnings.warn(
            "mountain_pass: lam=%.6g >= lambda_1=%.6g; geometry unverified, "
            "proceeding heuristically" % (params.lam, basis.lam(1)),
            RuntimeWarning)

    result = MinimaxResult()
    t_far = dyadic_far_point(basis, nl, params, d)
    n = opts.path_nodes
    path = np.outer(np.linspace(0.0, 1.0, n), t_far * d)
    fvals = energy_many(basis, nl, params, path)
    sup0 = float(np.max(fvals))
    result.diagnostics = {"t_far": t_far, "initial_path_sup": sup0}
    if sup0 <= 0.0:
        result.failure = "path collapse: no positive barrier along the initial path"
        return result

    flow_tol = opts.flow_tol
    for it in range(opts.max_flow_iters):
        m = int(np.argmax(fvals))
        if m in (0, n - 1) or fvals[m] <= 1e-12:
            result.failure = "path collapse onto the trivial solution"
            result.history.append({"iter": it, "max_f": float(fvals[m])})
            return result
        z = path[m]
        g = gradient(basis, nl, params, z)
        res = h_norm(basis, g)
        if it % 10 == 0:
            result.history.append({"iter": it, "max_f": float(fvals[m]),
                                   "residual": res})
        at_tol = res <= flow_tol
        if at_tol or (it + 1) % opts.newton_every == 0:
            u, ok, _ = newton_polish(basis, nl, params, z, opts)
            if ok:
                lev = energy(basis, nl, params, u)
                if (h_norm(basis, u) > opts.trivial_tol and 0.0 < lev
                        and lev <= sup0 + _band_slack(sup0)):
                    cp = certify(basis, nl, params, u, "mountain_pass", opts,
                                 provenance="path max, iter %d" % it)
                    result.points = [cp]
                    result.beta = cp.level
                    result.history.append({"iter": it, "accepted_level": cp.level})
                    return result
            if at_tol:
                flow_tol *= 0.1
                if flow_tol < opts.residual_tol:
                    result.failure = ("flow reached tolerance but Newton refinement "
                                      "found no admissible critical point")
                    return result
        cand, fc, moved = _armijo_descent(basis, nl, params, z, g, fvals[m], opts)
        if not moved:
            u, ok, _ = newton_polish(basis, nl, params, z, opts)
            if ok and h_norm(basis, u) > opts.trivial_tol:
                lev = energy(basis, nl, params, u)
                if 0.0 < lev <= sup0 + _band_slack(sup0):
                    cp = certify(basis, nl, params, u, "mountain_pass", opts,
                                 provenance="stalled path max, iter %d" % it)
                    result.points = [cp]
                    result.beta = cp.level
                    return result
            result.failure = "line search stalled before reaching a critical point"
            return result
        try:
            _check_cap(basis, cand, opts, "mountain_pass")
        except IterateBlowupError as exc:
            result.failure = str(exc)
            return result
        path[m] = cand
        path = _reparametrize(basis, path)
        fvals = energy_many(basis, nl, params, path)
    result.failure = "iteration cap exceeded"
    return result


# ---------------------------------------------------------------------------
# linking over the meshed half-ball


def _half_ball_mesh(sub: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Scaled-coordinate nodes of the unit half-ball and their interior mask."""
    axes = [np.linspace(-1.0, 1.0, 2 * sub + 1) for _ in range(dim - 1)]
    axes.append(np.linspace(0.0, 1.0, sub + 1))
    grids = np.meshgrid(*axes, indexing="ij")
    beta = np.column_stack([g.ravel() for g in grids])
    r = np.sqrt(np.sum(beta * beta, axis=1))
    keep = r <= 1.0 + 1e-12
    beta, r = beta[keep], r[keep]
    interior = (r <= 1.0 - 1.49 / sub) & (beta[:, -1] > 1e-12)
    return beta, interior


def _energy_block(basis, nl, params, idx, block_coeffs, chunk=8192) -> np.ndarray:
    """Energies of points supported on the modes listed in idx (0-based)."""
    lams = basis.lams[idx]
    phi = basis.phi_values[idx]
    A = np.asarray(block_coeffs, dtype=float)
    out = np.empty(len(A))
    for s in range(0, len(A), chunk):
        blk = A[s:s + chunk]
        vals = blk @ phi
        out[s:s + chunk] = (0.5 * (blk * blk) @ lams
                            - 0.5 * params.lam * np.sum(blk * blk, axis=1)
                            - nl.G(basis.quad_points, vals) @ basis.quad_weights)
    return out


def verify_linking_gap(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                       geom: LinkingGeometry, opts: SolverOptions
                       ) -> tuple[float, float, dict]:
    """Measure inf f on the high-block sphere and sup f on the cap boundary.

    Returns (inf_sphere, sup_boundary, meta).  The boundary estimate combines
    the base face (ball of radius R in the low block, supremum 0 at the
    origin when lam >= lambda_j) and the full R-sphere of the low+transversal
    block, an upper bound for the spherical cap.
    """
    j = geom.split.j
    e_idx = geom.direction_index()
    mask_high = np.zeros(basis.K_max, dtype=bool)
    mask_high[j:] = True
    inf_s, arg_s, meta_s = sphere_extremum(basis, nl, params, mask_high, geom.rho,
                                           minimize=True, opts=opts)
    # base face: unconstrained maximum over the low block, clipped to the ball
    sup_face, arg_face = sup_on_subspace(basis, nl, params, j, opts)
    if h_norm(basis, arg_face) > geom.R:
        mask_low = np.zeros(basis.K_max, dtype=bool)
        mask_low[:j] = True
        sup_face, _, _ = sphere_extremum(basis, nl, params, mask_low, geom.R,
                                         minimize=False, opts=opts)
        sup_face = max(sup_face, 0.0)
    mask_cap = np.zeros(basis.K_max, dtype=bool)
    mask_cap[:j] = True
    mask_cap[e_idx - 1] = True
    sup_cap, _, meta_c = sphere_extremum(basis, nl, params, mask_cap, geom.R,
                                         minimize=False, opts=opts)
    sup_b = max(sup_face, sup_cap)
    meta = {"inf_sphere": inf_s, "sup_base_face": sup_face, "sup_cap_bound": sup_cap,
            "sphere_meta": meta_s, "cap_meta": meta_c}
    return inf_s, sup_b, meta


def linking_solve(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                  geom: LinkingGeometry, opts: SolverOptions | None = None
                  ) -> MinimaxResult:
    """Linking search over a meshed half-ball in the low block plus one mode.

    Verifies the gap inf f(sphere) > 0 >= sup f(boundary) before flowing;
    refuses to run otherwise.  Interior mesh nodes descend one at a time
    (boundary frozen); the mesh maximum is Newton-polished and accepted when
    its level lies within [inf f(sphere), initial mesh sup] and the point is
    nontrivial.
    """
    opts = opts or SolverOptions()
    opts.validate()
    check_split(basis, geom.split)
    j = geom.split.j
    e_idx = geom.direction_index()
    if not (j < e_idx <= basis.K_max):
        raise ValueError("transversal mode %d must lie in %d..%d"
                         % (e_idx, j + 1, basis.K_max))
    lam_j, lam_next = basis.lam(j), basis.lam(j + 1)
    if not (lam_j <= params.lam < lam_next):
        warnings.warn(
            "linking_solve: lam=%.6g outside [lambda_j, lambda_j+1)=[%.6g, %.6g); "
            "geometry unverified, proceeding heuristically"
            % (params.lam, lam_j, lam_next), RuntimeWarning)

    result = MinimaxResult()
    inf_s, sup_b, gap_meta = verify_linking_gap(basis, nl, params, geom, opts)
    result.diagnostics.update(gap_meta)
    if not (inf_s > 0.0 and sup_b <= 1e-12):
        raise LinkingGapError(
            "linking gap verification failed: inf f(sphere rho=%.3g) = %.6g, "
            "sup f(boundary R=%.3g) = %.6g" % (geom.rho, inf_s, geom.R, sup_b),
            inf_sphere=inf_s, sup_boundary=sup_b)

    idx = list(range(j)) + [e_idx - 1]
    beta, interior = _half_ball_mesh(opts.mesh_subdivisions, len(idx))
    scale = geom.R / np.sqrt(basis.lams[idx])
    block = beta * scale
    fvals = _energy_block(basis, nl, params, idx, block)
    if not np.all(np.isfinite(fvals)):
        result.failure = "mesh degeneration: non-finite energies on the mesh"
        return result
    sup0 = float(np.max(fvals))
    result.diagnostics.update({"mesh_nodes": int(len(beta)),
                               "interior_nodes": int(interior.sum()),
                               "initial_mesh_sup": sup0,
                               "alpha": inf_s})
    moved: dict[int, np.ndarray] = {}

    def node_vec(m: int) -> np.ndarray:
        if m in moved:
            return moved[m]
        a = np.zeros(basis.K_max)
        a[idx] = block[m]
        return a

    masked = np.where(interior, fvals, -np.inf)
    flow_tol = opts.flow_tol
    for it in range(opts.max_flow_iters):
        m = int(np.argmax(masked))
        if fvals[m] < np.max(fvals) - 1e-12:
            result.failure = "mesh degeneration: maximum attained on the frozen boundary"
            return result
        z = node_vec(m)
        g = gradient(basis, nl, params, z)
        res = h_norm(basis, g)
        if it % 10 == 0:
            result.history.append({"iter": it, "max_f": float(fvals[m]),
                                   "residual": res})
        at_tol = res <= flow_tol
        if at_tol or (it + 1) % opts.newton_every == 0:
            u, ok, _ = newton_polish(basis, nl, params, z, opts)
            if ok:
                lev = energy(basis, nl, params, u)
                if (h_norm(basis, u) > opts.trivial_tol and 0.0 < lev
                        and inf_s - _band_slack(inf_s) <= lev <= sup0 + _band_slack(sup0)):
                    cp = certify(basis, nl, params, u, "linking", opts,
                                 provenance="mesh max, iter %d" % it)
                    result.points = [cp]
                    result.beta = cp.level
                    result.history.append({"iter": it, "accepted_level": cp.level})
                    return result
            if at_tol:
                flow_tol *= 0.1
                if flow_tol < opts.residual_tol:
                    result.failure = ("mesh flow reached tolerance but Newton found "
                                      "no admissible critical point")
                    return result
        cand, fc, ok_step = _armijo_descent(basis, nl, params, z, g, fvals[m], opts)
        if not ok_step:
            result.failure = "line search stalled on the mesh maximum"
            return result
        try:
            _check_cap(basis, cand, opts, "linking_solve")
        except IterateBlowupError as exc:
            result.failure = str(exc)
            return result
        moved[m] = cand
        fvals[m] = fc
        masked[m] = fc
    result.failure = "iteration cap exceeded"
    return result


# ---------------------------------------------------------------------------
# deflated Newton


def newton_deflated(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                    seeds: list[CoefVec], known: list[CriticalPoint] | None = None,
                    opts: SolverOptions | None = None) -> list[CriticalPoint]:
    """Damped deflated Newton from each seed; returns new certified points.

    Already-known points (and every point found during the run) enter the
    deflation product so later seeds are repelled from them.  No seed
    converging is not an error: the list is simply empty.  A point within
    ``dedup_tol`` of a deflated root is never returned.
    """
    opts = opts or SolverOptions()
    opts.validate()
    known = known or []
    roots: list[np.ndarray] = [np.asarray(cp.u, dtype=float) for cp in known]
    n_known = len(roots)
    found: list[CriticalPoint] = []
    for i, seed in enumerate(seeds):
        s = basis.check_coeffs(seed)
        try:
            u, ok, _ = newton_polish(basis, nl, params, s, opts, roots=roots)
        except IterateBlowupError:
            continue
        if not ok:
            continue
        if any(h_norm(basis, u - r) <= opts.dedup_tol for r in roots):
            continue
        cp = certify(basis, nl, params, u, "newton_deflated", opts,
                     provenance="seed %d" % i)
        found.append(cp)
        roots.append(np.asarray(cp.u, dtype=float))
    del n_known
    return found


def dedup_points(basis: SpectralBasis, points: list[CriticalPoint],
                 dedup_tol: float) -> list[CriticalPoint]:
    """Drop points within dedup_tol (H-distance) of an earlier one."""
    kept: list[CriticalPoint] = []
    for cp in points:
        if all(h_norm(basis, cp.u - q.u) > dedup_tol for q in kept):
            kept.append(cp)
    return kept
