"""Linearly constrained separable problems ``min l(Qx) + g(y)  s.t.  Ax + By = c``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .linops import (LinearMap, SpdSystem, cg_solve, identity, operator_norm_sq,
                     zero)


@dataclass(frozen=True)
class SmoothLoss:
    """A strongly convex loss ``l`` with Lipschitz gradient.

    ``alpha`` and ``lipschitz`` are declared by the caller; use
    :func:`check_loss_constants` to probe them. ``quadratic`` is set for
    losses of the form ``0.5 * sum(w * (z - b)**2)`` and holds ``(w, b)``;
    solvers use it to reduce subproblems to one linear solve.
    ``hessian_vec(z, v)`` is optional and enables Newton-CG.
    """

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    alpha: float
    lipschitz: float
    dim: int
    hessian_vec: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    quadratic: Optional[Tuple[np.ndarray, np.ndarray]] = None
    label: str = "loss"

    def __post_init__(self):
        if not (self.alpha > 0 and self.lipschitz >= self.alpha):
            raise ValueError(f"need 0 < alpha <= L, got alpha={self.alpha}, L={self.lipschitz}")


def quadratic_loss(b, weights=None) -> SmoothLoss:
    """``l(z) = 0.5 * sum(w * (z - b)**2)``; ``alpha = min w``, ``L = max w``."""
    b = np.asarray(b, dtype=float).ravel().copy()
    w = np.ones_like(b) if weights is None else np.broadcast_to(np.asarray(weights, dtype=float), b.shape).copy()
    if np.any(w <= 0):
        raise ValueError("quadratic loss weights must be positive")
    return SmoothLoss(
        value=lambda z: 0.5 * float(np.sum(w * (z - b) ** 2)),
        gradient=lambda z: w * (z - b),
        alpha=float(w.min()), lipschitz=float(w.max()), dim=b.size,
        hessian_vec=lambda z, v: w * v,
        quadratic=(w, b), label="quadratic",
    )


def softplus_ridge_loss(b, alpha: float = 1.0) -> SmoothLoss:
    """``l(z) = alpha/2 ||z - b||^2 + sum(log(1 + exp(z)))``.

    A non-quadratic loss with modulus ``alpha`` and gradient Lipschitz
    constant ``alpha + 1/4``.
    """
    b = np.asarray(b, dtype=float).ravel().copy()

    def sigmoid(z):
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    return SmoothLoss(
        value=lambda z: 0.5 * alpha * float(np.sum((z - b) ** 2)) + float(np.sum(np.logaddexp(0.0, z))),
        gradient=lambda z: alpha * (z - b) + sigmoid(z),
        alpha=float(alpha), lipschitz=float(alpha) + 0.25, dim=b.size,
        hessian_vec=lambda z, v: (alpha + sigmoid(z) * (1.0 - sigmoid(z))) * v,
        label="softplus-ridge",
    )


def check_loss_constants(loss: SmoothLoss, n_probes: int = 1000, seed: int = 0,
                         scale: float = 3.0) -> bool:
    """Probe the strong convexity and Lipschitz inequalities on random pairs."""
    rng = np.random.default_rng(seed)
    for _ in range(n_probes):
        z1 = scale * rng.standard_normal(loss.dim)
        z2 = scale * rng.standard_normal(loss.dim)
        d = z1 - z2
        gd = loss.gradient(z1) - loss.gradient(z2)
        dd = float(d @ d)
        if loss.alpha * dd > float(d @ gd) + 1e-12 * max(1.0, dd):
            return False
        if np.linalg.norm(gd) > loss.lipschitz * np.sqrt(dd) * (1 + 1e-12) + 1e-12:
            return False
    return True


def l1_norm(mu: float):
    """Value and prox of ``mu * ||y||_1``."""
    from .applications import soft_threshold

    return (lambda y: mu * float(np.sum(np.abs(y))),
            lambda v, theta: soft_threshold(v, mu * theta))


@dataclass(frozen=True)
class SeparableProblem:
    loss: SmoothLoss
    Q: LinearMap
    g_value: Callable[[np.ndarray], float]
    g_prox: Callable[[np.ndarray, float], np.ndarray]
    A: LinearMap
    B: LinearMap
    c: np.ndarray
    label: str = ""

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        object.__setattr__(self, "c", c)
        if self.Q.range_dim != self.loss.dim:
            raise ValueError(f"range of Q ({self.Q.range_dim}) must match loss dimension ({self.loss.dim})")
        if self.A.domain_dim != self.Q.domain_dim:
            raise ValueError("A and Q must share the x domain")
        if not (self.A.range_dim == self.B.range_dim == c.size):
            raise ValueError(f"range(A)={self.A.range_dim}, range(B)={self.B.range_dim}, len(c)={c.size} must agree")

    @property
    def n(self):
        return self.Q.domain_dim

    @property
    def m(self):
        return self.B.domain_dim

    @property
    def l(self):
        return self.c.size

    def f_value(self, x):
        return self.loss.value(self.Q.apply(x))

    def residual(self, x, y):
        """``Ax + By - c``."""
        return self.A.apply(x) + self.B.apply(y) - self.c


@dataclass
class IterateW:
    """Primal-dual state ``w = (x, y, lambda)``."""

    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray

    @classmethod
    def zeros(cls, problem: SeparableProblem) -> "IterateW":
        return cls(np.zeros(problem.n), np.zeros(problem.m), np.zeros(problem.l))

    def copy(self) -> "IterateW":
        return IterateW(self.x.copy(), self.y.copy(), self.lam.copy())

    def __sub__(self, other: "IterateW") -> "IterateW":
        return IterateW(self.x - other.x, self.y - other.y, self.lam - other.lam)

    def __add__(self, other: "IterateW") -> "IterateW":
        return IterateW(self.x + other.x, self.y + other.y, self.lam + other.lam)

    def scaled(self, a: float) -> "IterateW":
        return IterateW(a * self.x, a * self.y, a * self.lam)

    def check(self, problem: SeparableProblem):
        if (self.x.shape, self.y.shape, self.lam.shape) != ((problem.n,), (problem.m,), (problem.l,)):
            raise ValueError(
                f"iterate shapes {self.x.shape}, {self.y.shape}, {self.lam.shape} do not match "
                f"problem dimensions n={problem.n}, m={problem.m}, l={problem.l}")


@dataclass(frozen=True)
class ProximalWeight:
    """The proximal weight ``W`` of ``0.5 ||W (x - x_k)||^2``.

    ``W`` may be ``None`` with ``wbar`` given directly (as for the
    linearized scheme, where only ``W^T W`` is known). ``scale`` is set when
    ``W = scale * I``.
    """

    n: int
    W: Optional[LinearMap] = None
    wbar_map: Optional[LinearMap] = None
    scale: Optional[float] = None

    @classmethod
    def zero(cls, n: int) -> "ProximalWeight":
        return cls(n, zero(n), zero(n), 0.0)

    @classmethod
    def scaled_identity(cls, n: int, tau: float) -> "ProximalWeight":
        if tau < 0:
            raise ValueError("tau must be non-negative")
        W = identity(n).scaled(tau)
        return cls(n, W, identity(n).scaled(tau * tau), float(tau))

    @classmethod
    def from_map(cls, W: LinearMap) -> "ProximalWeight":
        return cls(W.domain_dim, W, W.gram(), None)

    @classmethod
    def from_gram(cls, wbar: LinearMap) -> "ProximalWeight":
        return cls(wbar.domain_dim, None, wbar, None)

    @property
    def is_zero(self) -> bool:
        return self.scale == 0.0

    @property
    def wbar(self) -> LinearMap:
        if self.wbar_map is not None:
            return self.wbar_map
        return self.W.gram()

    def quad(self, x) -> float:
        """``||W x||^2``."""
        if self.is_zero:
            return 0.0
        if self.W is not None:
            Wx = self.W.apply(x)
            return float(Wx @ Wx)
        return float(x @ self.wbar.apply(x))


def _check_xy(problem: SeparableProblem, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (problem.n,) or y.shape != (problem.m,):
        raise ValueError(f"expected x of length {problem.n} and y of length {problem.m}, "
                         f"got shapes {x.shape} and {y.shape}")
    return x, y


def objective(problem: SeparableProblem, x, y) -> float:
    x, y = _check_xy(problem, x, y)
    return problem.f_value(x) + problem.g_value(y)


def constraint_violation(problem: SeparableProblem, x, y) -> float:
    x, y = _check_xy(problem, x, y)
    return float(np.linalg.norm(problem.residual(x, y)))


def aug_lagrangian(problem: SeparableProblem, beta: float, w: IterateW) -> float:
    if beta <= 0:
        raise ValueError("beta must be positive")
    w.check(problem)
    r = problem.residual(w.x, w.y)
    return objective(problem, w.x, w.y) - float(w.lam @ r) + 0.5 * beta * float(r @ r)


def m_norm(w: IterateW, weight: ProximalWeight, beta: float, B: LinearMap) -> float:
    """The seminorm ``sqrt(||W x||^2 + beta ||B y||^2 + ||lambda||^2 / beta)``."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if w.x.shape != (weight.n,) or w.y.shape != (B.domain_dim,) or w.lam.shape != (B.range_dim,):
        raise ValueError("iterate dimensions do not match weight/B")
    By = B.apply(w.y)
    return float(np.sqrt(weight.quad(w.x) + beta * float(By @ By) + float(w.lam @ w.lam) / beta))


def vi_operator_f(problem: SeparableProblem, w: IterateW):
    """Blocks of ``F(w) = (Q^T grad l(Qx) - A^T lam, -B^T lam, Ax + By - c)``."""
    w.check(problem)
    b1 = problem.Q.apply_adjoint(problem.loss.gradient(problem.Q.apply(w.x))) - problem.A.apply_adjoint(w.lam)
    b2 = -problem.B.apply_adjoint(w.lam)
    b3 = problem.residual(w.x, w.y)
    return b1, b2, b3


def b_gram_scale(B: LinearMap, n_probes: int = 3, rtol: float = 1e-10) -> float:
    """Return ``kappa`` if ``B^T B = kappa I``; raise otherwise."""
    if B.diag is not None:
        d2 = B.diag ** 2
        if np.allclose(d2, d2[0], rtol=rtol, atol=0) and d2[0] > 0:
            return float(d2[0])
    rng = np.random.default_rng(7)
    kappa = None
    for _ in range(n_probes):
        v = rng.standard_normal(B.domain_dim)
        Gv = B.apply_adjoint(B.apply(v))
        k = float(v @ Gv) / float(v @ v)
        if np.linalg.norm(Gv - k * v) > rtol * max(1.0, np.linalg.norm(Gv)):
            break
        if kappa is not None and abs(k - kappa) > rtol * kappa:
            break
        kappa = k
    else:
        if kappa > 0:
            return kappa
    raise ValueError("y-update needs B^T B to be a positive multiple of the identity; "
                     "general B is not supported")


def y_update(problem: SeparableProblem, beta: float, x, lam, kappa: Optional[float] = None):
    """``argmin_y L_beta(x, y, lam)`` through the prox of ``g``.

    Completing the square with ``B^T B = kappa I`` gives
    ``prox_g(-B^T v / kappa, 1 / (beta kappa))`` with ``v = Ax - c - lam/beta``.
    """
    if kappa is None:
        kappa = b_gram_scale(problem.B)
    v = problem.A.apply(x) - problem.c - lam / beta
    return problem.g_prox(-problem.B.apply_adjoint(v) / kappa, 1.0 / (beta * kappa))


def dual_update(problem: SeparableProblem, beta: float, x, y, lam):
    return lam - beta * problem.residual(x, y)


# --- smooth x-subproblems -------------------------------------------------
#
# Every x-step here minimizes  phi(x) = l(Qx) + 0.5 x^T H x - r^T x  with H
# symmetric positive semidefinite (and QᵀQ + H positive definite).


@dataclass
class SubproblemSolve:
    x: np.ndarray
    iterations: int
    converged: bool
    grad_norm: float


def solve_smooth_subproblem(problem: SeparableProblem, H: LinearMap, r, x0=None,
                            tol: float = 1e-10, max_iter: int = 500, method: str = "cg-newton",
                            eig_floor: Optional[float] = None,
                            stop: Optional[Callable[[np.ndarray], bool]] = None) -> SubproblemSolve:
    """Minimize ``l(Qx) + 0.5 x^T H x - r^T x``.

    Quadratic losses are handled by a single CG solve on
    ``(Q^T D Q + H) x = Q^T D b + r``. Otherwise Newton-CG (when the loss
    supplies a Hessian-vector product) or gradient descent is run until the
    gradient norm is ``<= tol * max(1, ||r||)`` or ``stop(x)`` is true.
    """
    loss, Q = problem.loss, problem.Q
    r = np.asarray(r, dtype=float)
    x = np.zeros(problem.n) if x0 is None else np.array(x0, dtype=float)
    rscale = max(1.0, float(np.linalg.norm(r)))

    if loss.quadratic is not None:
        wts, b = loss.quadratic
        op = LinearMap(problem.n, problem.n,
                       lambda u: Q.apply_adjoint(wts * Q.apply(u)) + H.apply(u),
                       lambda u: Q.apply_adjoint(wts * Q.apply(u)) + H.apply(u), tag="QtDQ+H")
        precond = None
        if Q.diag is not None and H.diag is not None:
            d = wts * Q.diag ** 2 + H.diag
            if np.all(d > 0):
                precond = lambda v, d=d: v / d
        system = SpdSystem(op, "x-subproblem")
        rhs = Q.apply_adjoint(wts * b) + r
        res = cg_solve(system, rhs, tol=tol, max_iter=max(max_iter, 10 * problem.n), x0=x, precond=precond)
        return SubproblemSolve(res.x, res.iterations, res.converged, res.residual)

    def grad(u):
        return Q.apply_adjoint(loss.gradient(Q.apply(u))) + H.apply(u) - r

    def phi(u):
        return loss.value(Q.apply(u)) + 0.5 * float(u @ H.apply(u)) - float(r @ u)

    g = grad(x)
    gn = float(np.linalg.norm(g))
    if method == "cg-newton" and loss.hessian_vec is not None:
        for it in range(1, max_iter + 1):
            if gn <= tol * rscale or (stop is not None and stop(x)):
                return SubproblemSolve(x, it - 1, True, gn)
            z = Q.apply(x)
            hess = LinearMap(problem.n, problem.n,
                             lambda u: Q.apply_adjoint(loss.hessian_vec(z, Q.apply(u))) + H.apply(u),
                             lambda u: Q.apply_adjoint(loss.hessian_vec(z, Q.apply(u))) + H.apply(u))
            step = cg_solve(SpdSystem(hess, "newton"), -g, tol=min(0.1, gn) * 1e-2,
                            max_iter=10 * problem.n + 50).x
            # backtracking on phi
            t, f0, slope = 1.0, phi(x), float(g @ step)
            while phi(x + t * step) > f0 + 1e-4 * t * slope and t > 1e-10:
                t *= 0.5
            x = x + t * step
            g = grad(x)
            gn = float(np.linalg.norm(g))
        return SubproblemSolve(x, max_iter, gn <= tol * rscale, gn)

    if method not in ("cg-newton", "gradient-descent"):
        raise ValueError(f"unknown subproblem method {method!r}")
    # gradient descent with step 1/L_phi
    qn2 = Q.norm_bound ** 2 if Q.norm_bound is not None else operator_norm_sq(Q, tol=1e-6).value
    hn = operator_norm_sq(H, tol=1e-6).value ** 0.5
    lphi = loss.lipschitz * qn2 + hn
    mu = eig_floor or 0.0
    step = 2.0 / (lphi + mu) if mu > 0 else 1.0 / lphi
    for it in range(1, 50 * max_iter + 1):
        if gn <= tol * rscale or (stop is not None and stop(x)):
            return SubproblemSolve(x, it - 1, True, gn)
        x = x - step * g
        g = grad(x)
        gn = float(np.linalg.norm(g))
    return SubproblemSolve(x, 50 * max_iter, gn <= tol * rscale, gn)
