"""Matrix-free linear operators, conjugate gradients and spectral estimates."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

logger = logging.getLogger(__name__)

#: Largest dimension for which :meth:`LinearMap.to_dense` is allowed.
DENSE_LIMIT = 1024

#: Seed of the deterministic starting vector used by the power iterations.
POWER_SEED = 20190607


class LinearMap:
    """A linear operator given by a forward/adjoint function pair.

    Parameters
    ----------
    domain_dim, range_dim : int
        Lengths of input and output vectors.
    forward, adjoint : callable
        ``forward`` maps length-``domain_dim`` vectors to length-``range_dim``
        vectors; ``adjoint`` maps the other way.
    tag : str
        Free-form label used in error messages and reprs.
    diag : array, optional
        Diagonal of the operator if it is known to be diagonal. Used by
        :func:`min_eig_lower_bound` and for cheap Jacobi preconditioning.
    norm_bound : float, optional
        A known upper bound on the spectral norm.
    """

    def __init__(
        self,
        domain_dim: int,
        range_dim: int,
        forward: Callable[[np.ndarray], np.ndarray],
        adjoint: Callable[[np.ndarray], np.ndarray],
        tag: str = "",
        diag: Optional[np.ndarray] = None,
        norm_bound: Optional[float] = None,
    ):
        if domain_dim <= 0 or range_dim <= 0:
            raise ValueError(f"operator dimensions must be positive, got {range_dim}x{domain_dim}")
        self.domain_dim = int(domain_dim)
        self.range_dim = int(range_dim)
        self._forward = forward
        self._adjoint = adjoint
        self.tag = tag
        self.diag = None if diag is None else np.asarray(diag, dtype=float)
        self.norm_bound = norm_bound

    @property
    def shape(self):
        return (self.range_dim, self.domain_dim)

    def __repr__(self):
        return f"LinearMap({self.tag or 'anonymous'}, {self.range_dim}x{self.domain_dim})"

    def __call__(self, u):
        return self.apply(u)

    def apply(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.domain_dim,):
            raise ValueError(f"{self!r}: expected input of length {self.domain_dim}, got shape {u.shape}")
        return self._forward(u)

    def apply_adjoint(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.range_dim,):
            raise ValueError(f"{self!r}: adjoint expects length {self.range_dim}, got shape {v.shape}")
        return self._adjoint(v)

    @property
    def T(self) -> "LinearMap":
        diag = self.diag
        return LinearMap(self.range_dim, self.domain_dim, self._adjoint, self._forward,
                         tag=f"{self.tag}^T", diag=diag, norm_bound=self.norm_bound)

    def __matmul__(self, other: "LinearMap") -> "LinearMap":
        if not isinstance(other, LinearMap):
            return NotImplemented
        if other.range_dim != self.domain_dim:
            raise ValueError(f"cannot compose {self!r} with {other!r}")
        diag = None
        if self.diag is not None and other.diag is not None:
            diag = self.diag * other.diag
        bound = None
        if self.norm_bound is not None and other.norm_bound is not None:
            bound = self.norm_bound * other.norm_bound
        return LinearMap(
            other.domain_dim, self.range_dim,
            lambda u: self._forward(other._forward(u)),
            lambda v: other._adjoint(self._adjoint(v)),
            tag=f"{self.tag}*{other.tag}", diag=diag, norm_bound=bound,
        )

    def __add__(self, other: "LinearMap") -> "LinearMap":
        if not isinstance(other, LinearMap):
            return NotImplemented
        if other.shape != self.shape:
            raise ValueError(f"cannot add {self!r} and {other!r}")
        diag = None
        if self.diag is not None and other.diag is not None:
            diag = self.diag + other.diag
        return LinearMap(
            self.domain_dim, self.range_dim,
            lambda u: self._forward(u) + other._forward(u),
            lambda v: self._adjoint(v) + other._adjoint(v),
            tag=f"({self.tag}+{other.tag})", diag=diag,
        )

    def __neg__(self):
        return self.scaled(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def scaled(self, a: float) -> "LinearMap":
        a = float(a)
        diag = None if self.diag is None else a * self.diag
        bound = None if self.norm_bound is None else abs(a) * self.norm_bound
        return LinearMap(self.domain_dim, self.range_dim,
                         lambda u: a * self._forward(u), lambda v: a * self._adjoint(v),
                         tag=f"{a:g}*{self.tag}", diag=diag, norm_bound=bound)

    def __rmul__(self, a):
        return self.scaled(a)

    def gram(self) -> "LinearMap":
        """Return ``A^T A``."""
        return self.T @ self

    def to_dense(self) -> np.ndarray:
        """Materialize the operator; only meant for test oracles."""
        if max(self.domain_dim, self.range_dim) > DENSE_LIMIT:
            raise ValueError(f"refusing to materialize {self!r}: larger than {DENSE_LIMIT}")
        eye = np.eye(self.domain_dim)
        return np.column_stack([self._forward(eye[:, j]) for j in range(self.domain_dim)])


def identity(n: int) -> LinearMap:
    return LinearMap(n, n, lambda u: u.copy(), lambda v: v.copy(), tag="I",
                     diag=np.ones(n), norm_bound=1.0)


def diagonal(d) -> LinearMap:
    d = np.asarray(d, dtype=float).ravel()
    return LinearMap(d.size, d.size, lambda u: d * u, lambda v: d * v,
                     tag="diag", diag=d, norm_bound=float(np.max(np.abs(d))))


def zero(domain_dim: int, range_dim: Optional[int] = None) -> LinearMap:
    range_dim = domain_dim if range_dim is None else range_dim
    diag = np.zeros(domain_dim) if range_dim == domain_dim else None
    return LinearMap(domain_dim, range_dim, lambda u: np.zeros(range_dim),
                     lambda v: np.zeros(domain_dim), tag="0", diag=diag, norm_bound=0.0)


def matrix(M) -> LinearMap:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    diag = None
    if M.shape[0] == M.shape[1] and np.count_nonzero(M - np.diag(np.diag(M))) == 0:
        diag = np.diag(M).copy()
    return LinearMap(M.shape[1], M.shape[0], lambda u: M @ u, lambda v: M.T @ v,
                     tag="matrix", diag=diag)


def vstack(*maps: LinearMap) -> LinearMap:
    """Stack operators sharing a domain: ``u -> (A1 u, A2 u, ...)``."""
    n = maps[0].domain_dim
    if any(m.domain_dim != n for m in maps):
        raise ValueError("vstack requires a common domain")
    sizes = [m.range_dim for m in maps]
    splits = np.cumsum(sizes)[:-1]

    def fwd(u):
        return np.concatenate([m._forward(u) for m in maps])

    def adj(v):
        out = np.zeros(n)
        for m, part in zip(maps, np.split(v, splits)):
            out += m._adjoint(part)
        return out

    return LinearMap(n, int(sum(sizes)), fwd, adj, tag="[" + ";".join(m.tag for m in maps) + "]")


@dataclass(frozen=True)
class SpdSystem:
    """A symmetric positive definite operator plus a record of how it was built.

    ``eig_floor`` is an analytically known lower bound on the spectrum (for
    example ``tau**2`` when the system is ``tau**2 I + beta A^T A``).
    """

    operator: LinearMap
    description: str = ""
    eig_floor: Optional[float] = None
    preconditioner: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def dim(self) -> int:
        return self.operator.domain_dim

    def __post_init__(self):
        if self.operator.domain_dim != self.operator.range_dim:
            raise ValueError(f"SPD system must be square, got {self.operator!r}")


@dataclass
class PowerEstimate:
    """Result of a power iteration: ``value`` estimates the top eigenvalue."""

    value: float
    iterations: int
    converged: bool

    def __float__(self):
        return float(self.value)


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def _start_vector(n: int, seed: int = POWER_SEED) -> np.ndarray:
    v = np.random.default_rng(seed).standard_normal(n)
    return v / np.linalg.norm(v)


def power_iteration(apply_sym: Callable[[np.ndarray], np.ndarray], n: int,
                    tol: float = 1e-12, max_iter: int = 5000) -> PowerEstimate:
    """Top eigenvalue of a symmetric positive semidefinite operator.

    Stops when successive Rayleigh quotients agree to ``tol`` relative.
    """
    v = _start_vector(n)
    est = 0.0
    for it in range(1, max_iter + 1):
        w = apply_sym(v)
        new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return PowerEstimate(0.0, it, True)
        if abs(new - est) <= tol * abs(new):
            return PowerEstimate(max(new, est), it, True)
        est = new
        v = w / nw
    logger.warning("power iteration did not converge in %d iterations (estimate %.6g)", max_iter, est)
    return PowerEstimate(est, max_iter, False)


def operator_norm_sq(op: LinearMap, tol: float = 1e-12, max_iter: int = 5000) -> PowerEstimate:
    """Estimate ``||A||_2^2`` by power iteration on ``A^T A``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if op.range_dim < op.domain_dim:
        # the smaller Gram matrix has the same top eigenvalue
        return power_iteration(lambda v: op._forward(op._adjoint(v)), op.range_dim, tol, max_iter)
    return power_iteration(lambda u: op._adjoint(op._forward(u)), op.domain_dim, tol, max_iter)


def jacobi_preconditioner(diag) -> Callable[[np.ndarray], np.ndarray]:
    d = np.asarray(diag, dtype=float)
    if np.any(d <= 0):
        raise ValueError("Jacobi preconditioner needs a positive diagonal")
    inv = 1.0 / d
    return lambda r: inv * r


def cg_solve(system: SpdSystem, rhs, tol: float = 1e-10, max_iter: int = 1000,
             x0: Optional[np.ndarray] = None,
             precond: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> CGResult:
    """Solve ``S z = rhs`` by (preconditioned) conjugate gradients.

    Converged means ``||S z - rhs|| <= tol * max(1, ||rhs||)``. When
    ``max_iter`` is exhausted the best iterate is returned with
    ``converged=False``; the caller decides what to do with it.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    S = system.operator
    b = np.asarray(rhs, dtype=float)
    if b.shape != (S.domain_dim,):
        raise ValueError(f"rhs length {b.shape} does not match system dimension {S.domain_dim}")
    precond = precond or system.preconditioner
    threshold = tol * max(1.0, float(np.linalg.norm(b)))

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - S.apply(x) if x0 is not None else b.copy()
    rnorm = float(np.linalg.norm(r))
    best_x, best_r = x.copy(), rnorm
    if rnorm <= threshold:
        return CGResult(x, 0, rnorm, True)
    z = precond(r) if precond else r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, max_iter + 1):
        Sp = S.apply(p)
        pSp = float(p @ Sp)
        if pSp <= 0.0:
            if pSp < 0.0:
                raise np.linalg.LinAlgError(f"{system.description or S!r} is not positive definite")
            break
        a = rz / pSp
        x = x + a * p
        r = r - a * Sp
        rnorm = float(np.linalg.norm(r))
        if rnorm < best_r:
            best_x, best_r = x.copy(), rnorm
        if rnorm <= threshold:
            return CGResult(x, it, rnorm, True)
        z = precond(r) if precond else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    # recompute the true residual; the recursive one drifts
    true_r = float(np.linalg.norm(b - S.apply(best_x)))
    return CGResult(best_x, max_iter, true_r, true_r <= threshold)


def min_eig_lower_bound(system: SpdSystem, safety: float = 0.99, tol: float = 1e-8,
                        max_iter: int = 2000) -> float:
    """A lower bound on the smallest eigenvalue of an SPD system.

    Uses the analytic floor when the system carries one, the diagonal when
    the operator is diagonal, and inverse power iteration otherwise (the
    estimate is scaled by ``safety``).
    """
    if system.eig_floor is not None:
        if system.eig_floor <= 0:
            raise ValueError(f"{system.description}: non-positive eigenvalue floor {system.eig_floor}")
        return float(system.eig_floor)
    S = system.operator
    if S.diag is not None:
        lo = float(np.min(S.diag))
        if lo <= 0:
            raise ValueError(f"{system.description or S!r} is not positive definite (diagonal min {lo})")
        return lo

    def inv(v):
        res = cg_solve(system, v, tol=1e-12, max_iter=10 * S.domain_dim + 100)
        if not res.converged:
            raise ValueError(f"{system.description or S!r} appears singular; CG did not converge")
        return res.x

    try:
        est = power_iteration(inv, S.domain_dim, tol=tol, max_iter=max_iter)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{system.description or S!r} is indefinite") from exc
    if est.value <= 0 or not np.isfinite(est.value):
        raise ValueError(f"{system.description or S!r} is not positive definite")
    return safety / est.value
