"""Energy functional, its gradient and Hessian action, and nonlinearity checks.

The energy of a coefficient vector u is

    f(u) = 1/2 ||u||_H^2 - lam/2 ||u||_L2^2 - int_Omega G(x, u(x)) dx,

with the last term evaluated by the basis quadrature.  The gradient is
represented in the H metric through the inverse of the diagonal spectral
operator (coefficient map b_k -> b_k / lambda_k), so that

    <grad f(u), w>_H  =  d/dt f(u + t w) at t = 0.

The same coefficient vector doubles as the Newton residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .basis import CoefVec, SpectralBasis, h_norm, h_norm_sq, l2_norm_sq, point_values


class FunctionalEvaluationError(Exception):
    """Raised when a quadrature evaluation produces non-finite values."""


@dataclass(frozen=True)
class ProblemParams:
    """Linear spectral shift lam of the problem."""

    lam: float

    def __post_init__(self):
        if not np.isfinite(self.lam):
            raise ValueError("lam must be finite, got %r" % (self.lam,))


@dataclass(frozen=True)
class Nonlinearity:
    """Superlinear perturbation g with primitive G(x, t) = int_0^t g(x, s) ds.

    ``g``, ``G`` and the optional derivative ``g_t`` are vectorized callables
    taking aligned arrays ``(x_points, t_values)``; built-in kinds ignore x.
    ``p`` is the declared growth exponent (> 2) and ``c1`` the declared
    constant in the lower bound G >= c1 |t|^p.
    """

    name: str
    p: float
    c1: float
    g: Callable[[np.ndarray | None, np.ndarray], np.ndarray]
    G: Callable[[np.ndarray | None, np.ndarray], np.ndarray]
    g_t: Callable[[np.ndarray | None, np.ndarray], np.ndarray] | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.p > 2:
            raise ValueError("exponent p must be > 2, got %g" % self.p)
        if not self.c1 > 0:
            raise ValueError("c1 must be positive, got %g" % self.c1)

    def to_json_dict(self) -> dict:
        return {"kind": self.name, **self.params}


def power_nonlinearity(p: float = 3.0) -> Nonlinearity:
    """g(t) = |t|^(p-2) t, the canonical superlinear model; c1 = 1/p."""
    if not p > 2:
        raise ValueError("power nonlinearity needs p > 2, got %g" % p)
    if p == 3.0:
        # avoid generic pow on hot paths
        def g(x, t):
            return np.abs(t) * t

        def G(x, t):
            return (np.abs(t) * t * t) / 3.0

        def g_t(x, t):
            return 2.0 * np.abs(t)
    else:
        def g(x, t):
            return np.abs(t) ** (p - 2.0) * t

        def G(x, t):
            return np.abs(t) ** p / p

        def g_t(x, t):
            return (p - 1.0) * np.abs(t) ** (p - 2.0)

    return Nonlinearity(name="power", p=p, c1=1.0 / p, g=g, G=G, g_t=g_t,
                        params={"p": p})


def linear_nonlinearity(slope: float = 1.0, p_declared: float = 3.0) -> Nonlinearity:
    """g(t) = slope * t; a test nonlinearity that fails the superlinear audit."""

    def g(x, t):
        return slope * t

    def G(x, t):
        return 0.5 * slope * t * t

    def g_t(x, t):
        return np.full_like(np.asarray(t, dtype=float), slope)

    return Nonlinearity(name="linear", p=p_declared, c1=1.0, g=g, G=G, g_t=g_t,
                        params={"slope": slope, "p": p_declared})


def zero_nonlinearity(p_declared: float = 3.0) -> Nonlinearity:
    """g = 0; fails strict superlinearity (its primitive vanishes)."""

    def zero(x, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    return Nonlinearity(name="zero", p=p_declared, c1=1.0, g=zero, G=zero, g_t=zero,
                        params={"p": p_declared})


def table_nonlinearity(t_nodes, g_values, p: float, c1: float | None = None) -> Nonlinearity:
    """Piecewise-linear g tabulated on t_nodes; G integrated exactly from 0.

    Outside the table g is extended with its end values held constant.
    """
    t_nodes = np.asarray(t_nodes, dtype=float)
    g_values = np.asarray(g_values, dtype=float)
    if t_nodes.ndim != 1 or t_nodes.shape != g_values.shape or len(t_nodes) < 2:
        raise ValueError("t_nodes and g_values must be equal-length 1-D arrays")
    if np.any(np.diff(t_nodes) <= 0):
        raise ValueError("t_nodes must be strictly increasing")
    if not (t_nodes[0] <= 0.0 <= t_nodes[-1]):
        raise ValueError("t_nodes must straddle 0")

    # exact antiderivative of the piecewise-linear interpolant, anchored at 0
    seg = np.diff(t_nodes)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (g_values[1:] + g_values[:-1]) * seg)])
    G0 = float(np.interp(0.0, t_nodes, cum))  # exact: cum is piecewise quadratic but
    # 0 lies on the grid or inside a segment; correct the in-segment case below
    k0 = int(np.searchsorted(t_nodes, 0.0, side="right") - 1)
    k0 = min(max(k0, 0), len(seg) - 1)
    dt0 = 0.0 - t_nodes[k0]
    gslope = (g_values[k0 + 1] - g_values[k0]) / seg[k0]
    G0 = float(cum[k0] + g_values[k0] * dt0 + 0.5 * gslope * dt0 * dt0)

    def g(x, t):
        t = np.asarray(t, dtype=float)
        return np.interp(t, t_nodes, g_values)

    def G(x, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(t_nodes, t, side="right") - 1, 0, len(seg) - 1)
        dt = t - t_nodes[k]
        slope = (g_values[k + 1] - g_values[k]) / seg[k]
        inside = cum[k] + g_values[k] * dt + 0.5 * slope * dt * dt
        below = cum[0] + g_values[0] * (t - t_nodes[0])
        above = cum[-1] + g_values[-1] * (t - t_nodes[-1])
        out = np.where(t < t_nodes[0], below, np.where(t > t_nodes[-1], above, inside))
        return out - G0

    return Nonlinearity(name="custom-table", p=p, c1=c1 if c1 is not None else 1.0,
                        g=g, G=G, g_t=None,
                        params={"p": p, "t": t_nodes.tolist(), "g": g_values.tolist()})


def make_nonlinearity(spec: dict) -> Nonlinearity:
    """Build a nonlinearity from its config mapping ({"kind": ..., ...})."""
    kind = spec.get("kind")
    if kind == "power":
        return power_nonlinearity(float(spec.get("p", 3.0)))
    if kind == "linear":
        return linear_nonlinearity(float(spec.get("slope", 1.0)),
                                   float(spec.get("p", 3.0)))
    if kind == "zero":
        return zero_nonlinearity(float(spec.get("p", 3.0)))
    if kind == "custom-table":
        return table_nonlinearity(spec["t"], spec["g"], float(spec["p"]),
                                  spec.get("c1"))
    raise ValueError("unknown nonlinearity kind: %r" % (kind,))


# ---------------------------------------------------------------------------
# functional, gradient, Hessian


def energy(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
           u: CoefVec) -> float:
    """f(u) = 1/2 ||u||_H^2 - lam/2 ||u||_L2^2 - int G(x, u)."""
    a = basis.check_coeffs(u)
    vals = a @ basis.phi_values
    with np.errstate(over="ignore", invalid="ignore"):
        gv = nl.G(basis.quad_points, vals)
        integral = float(np.dot(basis.quad_weights, gv))
    out = 0.5 * h_norm_sq(basis, a) - 0.5 * params.lam * l2_norm_sq(basis, a) - integral
    if not np.isfinite(out):
        raise FunctionalEvaluationError(
            "energy is non-finite (||u||_H = %.3e); integrand overflow?" % h_norm(basis, a)
        )
    return out


def energy_many(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                coeffs: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Vectorized energy over the rows of a coefficient matrix."""
    A = np.asarray(coeffs, dtype=float)
    if A.ndim != 2 or A.shape[1] != basis.K_max:
        raise ValueError("expected (n, %d) coefficient matrix" % basis.K_max)
    out = np.empty(len(A))
    for s in range(0, len(A), chunk):
        block = A[s:s + chunk]
        vals = block @ basis.phi_values
        out[s:s + chunk] = (
            0.5 * (block * block) @ basis.lams
            - 0.5 * params.lam * np.sum(block * block, axis=1)
            - nl.G(basis.quad_points, vals) @ basis.quad_weights
        )
    if not np.all(np.isfinite(out)):
        raise FunctionalEvaluationError("non-finite energy in batched evaluation")
    return out


def apply_K(basis: SpectralBasis, b: CoefVec) -> CoefVec:
    """Spectral action of the Neumann-to-trace operator: b_k -> b_k / lambda_k."""
    return basis.check_coeffs(b) / basis.lams


def gradient(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
             u: CoefVec) -> CoefVec:
    """H-metric gradient u - K(lam*u + g(., u)) in coefficients.

    Componentwise (grad f)_k = a_k - (lam a_k + <g(., u), phi_k>_L2) / lambda_k;
    the same vector is the root-finding residual used by Newton.
    """
    a = basis.check_coeffs(u)
    vals = a @ basis.phi_values
    gv = nl.g(basis.quad_points, vals)
    gk = basis.phi_values @ (basis.quad_weights * gv)
    out = a - (params.lam * a + gk) / basis.lams
    if not np.all(np.isfinite(out)):
        raise FunctionalEvaluationError("gradient quadrature produced non-finite values")
    return out


def euclidean_gradient(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                       u: CoefVec) -> CoefVec:
    """Plain partial derivatives d f / d a_k = lambda_k * (grad f)_k."""
    return basis.lams * gradient(basis, nl, params, u)


def residual_h_norm(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                    u: CoefVec) -> float:
    return h_norm(basis, gradient(basis, nl, params, u))


def _gt_values(basis: SpectralBasis, nl: Nonlinearity, vals: np.ndarray) -> np.ndarray:
    if nl.g_t is None:
        raise ValueError(
            "nonlinearity %r has no derivative g_t; use hessian_apply with "
            "fd_fallback=True" % nl.name
        )
    return nl.g_t(basis.quad_points, vals)


def hessian_matrix(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                   u: CoefVec) -> np.ndarray:
    """Jacobian of the gradient coefficients: J = I - diag(1/lam) (lam I + M),
    where M_kl = <g_t(., u) phi_l, phi_k>_L2."""
    a = basis.check_coeffs(u)
    vals = a @ basis.phi_values
    gt = _gt_values(basis, nl, vals)
    M = (basis.phi_values * (basis.quad_weights * gt)) @ basis.phi_values.T
    K = basis.K_max
    return np.eye(K) - (params.lam * np.eye(K) + M) / basis.lams[:, None]


def euclidean_hessian(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                      u: CoefVec) -> np.ndarray:
    """Symmetric Hessian of f in plain coefficients: diag(lam) @ hessian_matrix."""
    a = basis.check_coeffs(u)
    vals = a @ basis.phi_values
    gt = _gt_values(basis, nl, vals)
    M = (basis.phi_values * (basis.quad_weights * gt)) @ basis.phi_values.T
    H = np.diag(basis.lams - params.lam) - M
    return 0.5 * (H + H.T)


def hessian_apply(basis: SpectralBasis, nl: Nonlinearity, params: ProblemParams,
                  u: CoefVec, w: CoefVec, fd_fallback: bool = True) -> CoefVec:
    """Directional derivative of the gradient at u in direction w.

    Uses the analytic derivative g_t when available; otherwise (with
    ``fd_fallback``) a central difference of the gradient with step
    1e-6 * (1 + ||u||_H) along w.
    """
    a = basis.check_coeffs(u)
    b = basis.check_coeffs(w)
    if nl.g_t is not None:
        vals = a @ basis.phi_values
        wvals = b @ basis.phi_values
        gt = nl.g_t(basis.quad_points, vals)
        mk = basis.phi_values @ (basis.quad_weights * gt * wvals)
        return b - (params.lam * b + mk) / basis.lams
    if not fd_fallback:
        raise ValueError("no g_t available and finite-difference fallback disabled")
    wn = h_norm(basis, b)
    if wn == 0.0:
        return np.zeros_like(b)
    h = 1e-6 * (1.0 + h_norm(basis, a)) / wn
    gp = gradient(basis, nl, params, a + h * b)
    gm = gradient(basis, nl, params, a - h * b)
    return (gp - gm) / (2.0 * h)


# ---------------------------------------------------------------------------
# hypothesis audit


@dataclass(frozen=True)
class SampleSpec:
    """Sampling plan for the nonlinearity audit: |t| grid and x probes."""

    t_magnitudes: np.ndarray
    x_points: np.ndarray | None = None

    @staticmethod
    def default(t_min: float = 1e-6, t_max: float = 1e3,
                per_decade: int = 12) -> "SampleSpec":
        n = int(np.round(per_decade * np.log10(t_max / t_min))) + 1
        return SampleSpec(t_magnitudes=np.geomspace(t_min, t_max, n))


def _audit_xs(sample_spec: SampleSpec) -> list[np.ndarray | None]:
    if sample_spec.x_points is None:
        return [None]
    return [np.tile(x, (1, 1)) for x in np.atleast_2d(sample_spec.x_points)]


def validate_hypotheses(nl: Nonlinearity, sample_spec: SampleSpec | None = None) -> dict:
    """Sampling audit of the growth/superlinearity hypotheses on g.

    Checks, over the signed |t| grid and every x probe:

    * ``G0``:  G(x, 0) = 0.
    * ``g2``:  |g| <= a1 + a2 |t|^(p-1), with (a1, a2) fitted by nonnegative
      least squares on |t| <= 100 and tested beyond; the fitted pair is
      reported.
    * ``g3``:  g(x, t) / |t| -> 0 as t -> 0 (vanishing-ratio trend).
    * ``g4``:  0 < p G <= g t for t != 0 (worst margins reported).
    * ``g5``:  G >= c1 |t|^p for a uniform c1 > 0; the infimum of G/|t|^p is
      the estimated c1 and a decaying tail trend is a failure.

    Failures are report entries, never exceptions.  The report is
    JSON-serializable.
    """
    if sample_spec is None:
        sample_spec = SampleSpec.default()
    mags = np.asarray(sample_spec.t_magnitudes, dtype=float)
    t = np.concatenate([-mags[::-1], mags])
    absr = np.abs(t)
    p = nl.p

    g_all, G_all = [], []
    for x in _audit_xs(sample_spec):
        xs = None if x is None else np.repeat(x, len(t), axis=0)
        g_all.append(np.asarray(nl.g(xs, t), dtype=float))
        G_all.append(np.asarray(nl.G(xs, t), dtype=float))
    gv = np.max(np.abs(np.vstack(g_all)), axis=0)          # worst |g| over x
    gt_signed = np.vstack(g_all) * t                       # g*t per x row
    Gv = np.vstack(G_all)

    report: dict = {"nonlinearity": nl.name, "p": p, "hypotheses": {}}
    hyp = report["hypotheses"]

    # G(x, 0) = 0
    G_at_0 = max(abs(float(nl.G(x, np.array([0.0]))[0]))
                 for x in _audit_xs(sample_spec))
    hyp["G0"] = {"passed": G_at_0 <= 1e-12, "max_abs_G_at_0": G_at_0}

    # (g2) growth bound with fitted constants
    from scipy.optimize import nnls

    fit_mask = absr <= 1e2
    A = np.column_stack([np.ones(fit_mask.sum()), absr[fit_mask] ** (p - 1.0)])
    coef, _ = nnls(A, gv[fit_mask])
    a1, a2 = float(coef[0]), float(coef[1])
    bound_fit = a1 + a2 * absr[fit_mask] ** (p - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        infl = np.max(np.where(bound_fit > 0, gv[fit_mask] / bound_fit, np.inf))
    if np.isfinite(infl) and infl > 1.0:
        a1, a2 = a1 * infl, a2 * infl
    tail = ~fit_mask
    bound_tail = a1 + a2 * absr[tail] ** (p - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(bound_tail > 0, gv[tail] / bound_tail,
                          np.where(gv[tail] > 0, np.inf, 1.0))
    tail_ratio = float(np.max(ratios)) if tail.any() else 1.0
    hyp["g2"] = {
        "passed": bool(np.isfinite(infl) and tail_ratio <= 1.05),
        "a1": a1, "a2": a2, "tail_ratio": tail_ratio,
    }

    # (g3) g = o(|t|) at 0: ratio at the smallest |t| vs near |t| = 1
    ratio = gv / absr
    k_small = int(np.argmin(absr))
    k_one = int(np.argmin(np.abs(absr - 1.0)))
    r_small, r_one = float(ratio[k_small]), float(ratio[k_one])
    hyp["g3"] = {
        "passed": bool(r_small <= max(0.5 * r_one, 1e-12)),
        "ratio_at_tmin": r_small, "ratio_at_1": r_one,
    }

    # (g4) 0 < pG <= g t
    pG = p * Gv
    min_pG = float(np.min(pG))
    slack = 1e-12 * (1.0 + np.abs(gt_signed))
    min_gap = float(np.min(gt_signed - pG + slack))
    hyp["g4"] = {
        "passed": bool(min_pG > 0.0 and min_gap >= 0.0),
        "min_pG": min_pG, "min_gt_minus_pG": float(np.min(gt_signed - pG)),
    }

    # (g5) G >= c1 |t|^p with uniform c1
    with np.errstate(divide="ignore", invalid="ignore"):
        r5 = np.min(Gv, axis=0) / absr**p
    mid = (absr >= 1.0) & (absr <= 10.0)
    end = absr >= 0.1 * float(np.max(absr))
    r_mid = float(np.min(r5[mid])) if mid.any() else float(np.min(r5))
    r_end = float(np.min(r5[end]))
    c1_hat = float(np.min(r5))
    decaying = r_end < 0.5 * r_mid
    hyp["g5"] = {
        "passed": bool(c1_hat > 0.0 and not decaying),
        "c1_estimate": c1_hat, "tail_min": r_end, "mid_min": r_mid,
    }

    report["all_passed"] = all(h["passed"] for h in hyp.values())
    return report
