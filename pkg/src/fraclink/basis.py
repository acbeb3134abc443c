"""Dirichlet eigenbasis of the half-Laplacian on model domains.

On an interval (0, L) the Laplacian eigenpairs are ((k*pi/L)^2, sin(k*pi*x/L));
on a rectangle (0, L1) x (0, L2) they are tensor products of sines.  The
half-Laplacian acts diagonally on this basis with eigenvalues lambda_k equal
to the square roots of the Laplacian ones, and the natural ("extension")
inner product weights mode k by lambda_k:

    ||u||_H^2 = sum_k lambda_k * a_k^2      for u = sum_k a_k * phi_k.

A basis object bundles the first K_max modes (sorted by eigenvalue, ties
broken lexicographically in the multi-index), a tensor Gauss-Legendre
quadrature rule on the domain, and the cached eigenfunction values on the
quadrature grid.  Everything is immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import jsonio

# Coefficient vectors are plain float arrays of length basis.K_max.
CoefVec = np.ndarray

#: Parts selectable in :func:`project`.
PROJECTION_PARTS = ("low", "mid", "high")


class QuadratureError(Exception):
    """Raised when the quadrature rule fails to resolve the eigenbasis."""


@dataclass(frozen=True)
class DomainSpec:
    """Model domain: an interval (0, L) or a rectangle (0, L1) x (0, L2)."""

    kind: str
    side_lengths: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("interval", "rectangle"):
            raise ValueError("unsupported domain kind: %r" % (self.kind,))
        sides = tuple(float(s) for s in self.side_lengths)
        object.__setattr__(self, "side_lengths", sides)
        expected = 1 if self.kind == "interval" else 2
        if len(sides) != expected:
            raise ValueError(
                "%s domain needs %d side length(s), got %d"
                % (self.kind, expected, len(sides))
            )
        if any(not np.isfinite(s) or s <= 0 for s in sides):
            raise ValueError("side_lengths must be strictly positive, got %r" % (sides,))

    @property
    def ambient_dim(self) -> int:
        return len(self.side_lengths)

    @property
    def volume(self) -> float:
        return float(np.prod(self.side_lengths))

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "side_lengths": list(self.side_lengths)}

    @staticmethod
    def from_json_dict(doc: dict) -> "DomainSpec":
        return DomainSpec(kind=doc["kind"], side_lengths=tuple(doc["side_lengths"]))


@dataclass(frozen=True)
class SubspaceSplit:
    """1-based index pair (i, j) delimiting a cluster of equal eigenvalues.

    Modes 1..i-1 form the low block, i..j the mid block and j+1.. the high
    block of the coefficient space.
    """

    i: int
    j: int

    def __post_init__(self):
        if not (1 <= self.i <= self.j):
            raise ValueError("need 1 <= i <= j, got (%d, %d)" % (self.i, self.j))

    @property
    def size(self) -> int:
        return self.j - self.i + 1


@dataclass(frozen=True)
class SpectralBasis:
    """Truncated Dirichlet eigenbasis with quadrature and cached values."""

    domain: DomainSpec
    K_max: int
    multi_indices: tuple[tuple[int, ...], ...]
    lams: np.ndarray          # (K_max,) half-Laplacian eigenvalues, nondecreasing
    quad_points: np.ndarray   # (n_quad, ambient_dim)
    quad_weights: np.ndarray  # (n_quad,)
    phi_values: np.ndarray    # (K_max, n_quad)
    quad_order: int

    def __post_init__(self):
        for arr in (self.lams, self.quad_points, self.quad_weights, self.phi_values):
            arr.setflags(write=False)

    @property
    def modes(self) -> list[tuple[tuple[int, ...], float]]:
        return [(mi, float(l)) for mi, l in zip(self.multi_indices, self.lams)]

    @property
    def n_quad(self) -> int:
        return len(self.quad_weights)

    def lam(self, k: int) -> float:
        """Eigenvalue of mode k (1-based)."""
        if not 1 <= k <= self.K_max:
            raise IndexError("mode index %d out of range 1..%d" % (k, self.K_max))
        return float(self.lams[k - 1])

    def check_coeffs(self, u: Sequence[float] | np.ndarray) -> np.ndarray:
        a = np.asarray(u, dtype=float)
        if a.shape != (self.K_max,):
            raise ValueError(
                "coefficient vector has shape %s, expected (%d,)" % (a.shape, self.K_max)
            )
        if not np.all(np.isfinite(a)):
            raise ValueError("coefficient vector contains non-finite entries")
        return a

    def unit_mode(self, k: int) -> CoefVec:
        """Coefficient vector of phi_k (1-based index)."""
        self.lam(k)
        e = np.zeros(self.K_max)
        e[k - 1] = 1.0
        return e


def _gauss_legendre(n: int, length: float) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return length * (x + 1.0) / 2.0, w * length / 2.0


def _interval_phi(k: np.ndarray, x: np.ndarray, L: float) -> np.ndarray:
    return np.sqrt(2.0 / L) * np.sin(np.outer(k, x) * (np.pi / L))


def _eval_phi(domain: DomainSpec, multi_indices: Iterable[tuple[int, ...]],
              points: np.ndarray) -> np.ndarray:
    """Eigenfunction values, one row per mode, at the given points."""
    mi = list(multi_indices)
    if domain.kind == "interval":
        (L,) = domain.side_lengths
        k = np.array([m[0] for m in mi], dtype=float)
        return _interval_phi(k, points[:, 0], L)
    L1, L2 = domain.side_lengths
    m = np.array([t[0] for t in mi], dtype=float)
    n = np.array([t[1] for t in mi], dtype=float)
    sx = np.sin(np.outer(m, points[:, 0]) * (np.pi / L1))
    sy = np.sin(np.outer(n, points[:, 1]) * (np.pi / L2))
    return (2.0 / np.sqrt(L1 * L2)) * sx * sy


def _enumerate_modes(domain: DomainSpec, K_max: int) -> list[tuple[tuple[int, ...], float]]:
    """First K_max modes as (multi_index, lambda), sorted with lexicographic ties."""
    if domain.kind == "interval":
        (L,) = domain.side_lengths
        return [((k,), k * np.pi / L) for k in range(1, K_max + 1)]
    L1, L2 = domain.side_lengths
    M = int(np.ceil(np.sqrt(K_max))) + 2
    while True:
        cand = []
        for m in range(1, M + 1):
            for n in range(1, M + 1):
                lam2 = np.pi**2 * (m * m / L1**2 + n * n / L2**2)
                cand.append((np.sqrt(lam2), (m, n)))
        cand.sort(key=lambda t: (t[0], t[1]))
        kth = cand[K_max - 1][0]
        # smallest eigenvalue outside the (1..M)^2 enumeration window
        excluded = np.pi * np.sqrt(
            min((M + 1) ** 2 / L1**2 + 1.0 / L2**2,
                1.0 / L1**2 + (M + 1) ** 2 / L2**2)
        )
        if kth < excluded:
            return [(mi, lam) for lam, mi in cand[:K_max]]
        M += 4


def default_quad_order(domain: DomainSpec, K_max: int) -> int:
    """Points per dimension: twice the largest mode frequency plus a buffer.

    The +12 buffer keeps the quadrature Gram matrix of the basis within
    1e-10 of the identity down to small K_max (a +8 buffer leaves ~3e-10
    residuals there).
    """
    modes = _enumerate_modes(domain, K_max)
    max_freq = max(max(mi) for mi, _ in modes)
    return 2 * max_freq + 12


def build_basis(domain: DomainSpec, K_max: int, quad_order: int | None = None,
                quad_tol: float = 1e-10) -> SpectralBasis:
    """Build the truncated eigenbasis with a tensor Gauss-Legendre rule.

    Parameters
    ----------
    domain : DomainSpec
    K_max : int
        Number of modes kept; at least 1 (8 or more for production use).
    quad_order : int, optional
        Quadrature points per dimension.  Defaults to
        :func:`default_quad_order`.
    quad_tol : float
        Tolerance for the orthonormality (Gram-matrix) self check.

    Raises
    ------
    QuadratureError
        If the Gram matrix of the basis on the quadrature grid deviates from
        the identity by more than ``quad_tol`` (under-resolved rule).
    """
    if K_max < 1:
        raise ValueError("K_max must be >= 1, got %d" % K_max)
    if quad_order is None:
        quad_order = default_quad_order(domain, K_max)
    if quad_order < 2:
        raise ValueError("quad_order must be >= 2, got %d" % quad_order)

    modes = _enumerate_modes(domain, K_max)
    multi_indices = tuple(mi for mi, _ in modes)
    lams = np.array([lam for _, lam in modes], dtype=float)

    if domain.kind == "interval":
        x, w = _gauss_legendre(quad_order, domain.side_lengths[0])
        points = x[:, None]
        weights = w
    else:
        L1, L2 = domain.side_lengths
        x1, w1 = _gauss_legendre(quad_order, L1)
        x2, w2 = _gauss_legendre(quad_order, L2)
        X, Y = np.meshgrid(x1, x2, indexing="ij")
        points = np.column_stack([X.ravel(), Y.ravel()])
        weights = np.outer(w1, w2).ravel()

    phi = _eval_phi(domain, multi_indices, points)
    basis = SpectralBasis(domain=domain, K_max=K_max, multi_indices=multi_indices,
                          lams=lams, quad_points=points, quad_weights=weights,
                          phi_values=phi, quad_order=quad_order)
    err = gram_error(basis)
    if err > quad_tol:
        raise QuadratureError(
            "quadrature under-resolution: Gram matrix deviates from identity by "
            "%.3e > %.1e; increase quad_order (currently %d per dimension)"
            % (err, quad_tol, quad_order)
        )
    return basis


def gram_error(basis: SpectralBasis) -> float:
    """Max deviation of the quadrature Gram matrix from the identity."""
    G = (basis.phi_values * basis.quad_weights) @ basis.phi_values.T
    return float(np.max(np.abs(G - np.eye(basis.K_max))))


def group_eigenvalues(basis: SpectralBasis, rel_tol: float = 1e-9) -> list[SubspaceSplit]:
    """Partition 1..K_max into clusters of numerically equal eigenvalues.

    Consecutive eigenvalues with |lam_a - lam_b| <= rel_tol * lam_b fall in
    the same cluster.  ``rel_tol`` must lie in (0, 1e-6].
    """
    if not 0.0 < rel_tol <= 1e-6:
        raise ValueError("rel_tol must be in (0, 1e-6], got %g" % rel_tol)
    clusters: list[SubspaceSplit] = []
    start = 1
    for k in range(1, basis.K_max):
        a, b = basis.lams[k - 1], basis.lams[k]
        if abs(a - b) > rel_tol * b:
            clusters.append(SubspaceSplit(start, k))
            start = k + 1
    clusters.append(SubspaceSplit(start, basis.K_max))
    return clusters


def check_split(basis: SpectralBasis, split: SubspaceSplit,
                rel_tol: float = 1e-9) -> None:
    """Validate that a split delimits a full cluster strictly inside the basis.

    Requires j < K_max (the mode j+1 must exist), strict eigenvalue gaps at
    both borders, and equality within the cluster.
    """
    if split.j >= basis.K_max:
        raise ValueError(
            "split (%d, %d) needs j < K_max = %d" % (split.i, split.j, basis.K_max)
        )
    lam_i, lam_j = basis.lam(split.i), basis.lam(split.j)
    if split.i > 1 and not basis.lam(split.i - 1) < lam_i - rel_tol * lam_i:
        raise ValueError("no spectral gap below mode i=%d" % split.i)
    if not lam_j < basis.lam(split.j + 1) - rel_tol * lam_j:
        raise ValueError("no spectral gap above mode j=%d" % split.j)
    if abs(lam_j - lam_i) > rel_tol * lam_j:
        raise ValueError(
            "modes %d..%d do not form one eigenvalue cluster" % (split.i, split.j)
        )


# ---------------------------------------------------------------------------
# norms, inner products, projections


def h_norm_sq(basis: SpectralBasis, u: CoefVec) -> float:
    """Extension-space norm squared: sum_k lambda_k * a_k^2."""
    a = basis.check_coeffs(u)
    return float(np.dot(basis.lams, a * a))


def h_norm(basis: SpectralBasis, u: CoefVec) -> float:
    return float(np.sqrt(max(h_norm_sq(basis, u), 0.0)))


def h_inner(basis: SpectralBasis, u: CoefVec, v: CoefVec) -> float:
    a = basis.check_coeffs(u)
    b = basis.check_coeffs(v)
    return float(np.dot(basis.lams, a * b))


def l2_norm_sq(basis: SpectralBasis, u: CoefVec) -> float:
    """L2 norm squared; exact in coefficients by orthonormality."""
    a = basis.check_coeffs(u)
    return float(np.dot(a, a))


def point_values(basis: SpectralBasis, u: CoefVec) -> np.ndarray:
    """Values of u on the quadrature grid."""
    return basis.check_coeffs(u) @ basis.phi_values


def lp_norm(basis: SpectralBasis, u: CoefVec, p: float) -> float:
    """L^p norm computed by quadrature of |u|^p on the grid."""
    if p < 1:
        raise ValueError("p must be >= 1, got %g" % p)
    vals = point_values(basis, u)
    integral = float(np.dot(basis.quad_weights, np.abs(vals) ** p))
    return integral ** (1.0 / p)


def _block_slice(split: SubspaceSplit, part: str) -> slice:
    if part == "low":
        return slice(0, split.i - 1)
    if part == "mid":
        return slice(split.i - 1, split.j)
    if part == "high":
        return slice(split.j, None)
    raise ValueError("part must be one of %s, got %r" % (PROJECTION_PARTS, part))


def project(u: CoefVec, split: SubspaceSplit, part: str) -> CoefVec:
    """Zero all coefficients outside the selected block (low/mid/high)."""
    a = np.asarray(u, dtype=float)
    out = np.zeros_like(a)
    sl = _block_slice(split, part)
    out[sl] = a[sl]
    return out


# ---------------------------------------------------------------------------
# serialization


def basis_to_json_dict(basis: SpectralBasis) -> dict:
    return {
        "domain": basis.domain.to_json_dict(),
        "K_max": basis.K_max,
        "quad_order": basis.quad_order,
        "modes": [
            {"index": list(mi), "lambda": lam} for mi, lam in basis.modes
        ],
        "quad": {
            "points": basis.quad_points.tolist(),
            "weights": basis.quad_weights.tolist(),
        },
    }


def dump_basis(basis: SpectralBasis, path: str) -> None:
    jsonio.dump(basis_to_json_dict(basis), path)


def basis_from_json_dict(doc: dict, quad_tol: float = 1e-10) -> SpectralBasis:
    """Rebuild a basis from its JSON document.

    Eigenfunction values are re-evaluated in closed form at the stored
    quadrature points, and the orthonormality check is re-run.
    """
    domain = DomainSpec.from_json_dict(doc["domain"])
    multi_indices = tuple(tuple(int(i) for i in m["index"]) for m in doc["modes"])
    lams = np.array([float(m["lambda"]) for m in doc["modes"]])
    points = np.asarray(doc["quad"]["points"], dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    weights = np.asarray(doc["quad"]["weights"], dtype=float)
    phi = _eval_phi(domain, multi_indices, points)
    basis = SpectralBasis(domain=domain, K_max=int(doc["K_max"]),
                          multi_indices=multi_indices, lams=lams,
                          quad_points=points, quad_weights=weights,
                          phi_values=phi, quad_order=int(doc["quad_order"]))
    err = gram_error(basis)
    if err > quad_tol:
        raise QuadratureError(
            "imported basis fails the Gram-matrix check: %.3e > %.1e" % (err, quad_tol)
        )
    return basis


def load_basis(path: str) -> SpectralBasis:
    import json

    with open(path) as fh:
        return basis_from_json_dict(json.load(fh))
