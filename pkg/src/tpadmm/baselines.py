"""Exact, linearized and proximal ADMM for ``min l(Qx) + g(y)  s.t.  Ax + By = c``.

All three share one outer loop::

    x+ = argmin_x L_beta(x, y, lam) + 0.5 ||x - x_k||_G^2
    y+ = argmin_y L_beta(x+, y, lam)
    lam+ = lam - beta (A x+ + B y+ - c)

with ``G = 0`` (ADMM), ``G = tau I`` (proximal ADMM) or
``G = tau beta I - beta A^T A`` (linearized ADMM).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg

from .linops import LinearMap, identity, operator_norm_sq
from .problem import (IterateW, ProximalWeight, SeparableProblem, b_gram_scale,
                      constraint_violation, dual_update, m_norm, objective,
                      solve_smooth_subproblem, y_update)

TERMINATION_REASONS = ("tol-met", "max-iter")


@dataclass
class IterationRecord:
    """Diagnostics for one outer iteration ``w^k -> w^{k+1}``.

    ``lambda_gap`` is the M-seminorm of ``w^{k+1} - w^k``. ``ek_norm`` is
    ``||e_k(xhat^{k+1})||`` for the task-adaptive solver and the inner
    solver residual for the baselines; ``ek_prev`` is ``||e_k(xhat^k)||``.
    """

    k: int
    objective: float
    violation: float
    lambda_gap: float
    ek_norm: float
    accepted_source: str = "exact"
    t_used: int = 0
    psnr: Optional[float] = None
    wall_ms: float = 0.0
    ek_prev: float = float("nan")
    y_change: float = 0.0
    inner_converged: bool = True


@dataclass
class SolveTrace:
    records: List[IterationRecord] = field(default_factory=list)
    final: Optional[IterateW] = None
    termination: str = "max-iter"
    solver: str = ""
    inner_failures: int = 0
    history: Optional[List[IterateW]] = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def converged(self) -> bool:
        return self.termination == "tol-met"


@dataclass
class BaselineConfig:
    beta: float = 1.0
    tau: float = 0.0
    max_outer: int = 1000
    tol_violation: float = 1e-9
    tol_change: float = 1e-9
    x_inner: str = "cg"
    inner_tol: float = 1e-12
    keep_iterates: bool = False
    psnr_ref: Optional[np.ndarray] = None

    def validate(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.tau < 0:
            raise ValueError(f"tau must be non-negative, got {self.tau}")
        if self.x_inner not in ("cg", "direct-small"):
            raise ValueError(f"x_inner must be 'cg' or 'direct-small', got {self.x_inner!r}")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")


def psnr_of(x, ref) -> float:
    mse = float(np.mean((np.asarray(x) - np.asarray(ref)) ** 2))
    if mse == 0.0:
        return 99.0
    return min(99.0, 10.0 * np.log10(1.0 / mse))


class _DirectSolver:
    """Dense Cholesky solve of the (constant) quadratic x-subproblem."""

    def __init__(self, problem: SeparableProblem, H: LinearMap):
        wts, b = problem.loss.quadratic
        Qd = problem.Q.to_dense()
        mat = Qd.T @ (wts[:, None] * Qd) + H.to_dense()
        self.factor = scipy.linalg.cho_factor(0.5 * (mat + mat.T))
        self.offset = Qd.T @ (wts * b)

    def __call__(self, r):
        return scipy.linalg.cho_solve(self.factor, self.offset + r)


def run_outer_loop(problem: SeparableProblem, beta: float, init: IterateW, x_step: Callable,
                   weight: ProximalWeight, max_outer: int, tol_violation: float,
                   tol_change: float, solver: str, keep_iterates: bool = False,
                   psnr_ref=None) -> SolveTrace:
    """Shared ADMM outer loop.

    ``x_step(k, w)`` returns ``(x_next, info)`` where ``info`` is a dict
    with optional keys ``ek_norm``, ``ek_prev``, ``accepted_source``,
    ``t_used`` and ``inner_converged``.
    """
    init.check(problem)
    kappa = b_gram_scale(problem.B)
    w = init.copy()
    trace = SolveTrace(solver=solver, history=[w.copy()] if keep_iterates else None)
    for k in range(max_outer):
        t0 = time.perf_counter()
        x_next, info = x_step(k, w)
        y_next = y_update(problem, beta, x_next, w.lam, kappa)
        lam_next = dual_update(problem, beta, x_next, y_next, w.lam)
        w_next = IterateW(x_next, y_next, lam_next)
        gap = m_norm(w_next - w, weight, beta, problem.B)
        viol = constraint_violation(problem, x_next, y_next)
        dBy = problem.B.apply(w.y - y_next)
        rec = IterationRecord(
            k=k,
            objective=objective(problem, x_next, y_next),
            violation=viol,
            lambda_gap=gap,
            ek_norm=float(info.get("ek_norm", 0.0)),
            accepted_source=info.get("accepted_source", "exact"),
            t_used=int(info.get("t_used", 0)),
            psnr=None if psnr_ref is None else psnr_of(x_next, psnr_ref),
            wall_ms=1e3 * (time.perf_counter() - t0),
            ek_prev=float(info.get("ek_prev", float("nan"))),
            y_change=float(np.linalg.norm(dBy)),
            inner_converged=bool(info.get("inner_converged", True)),
        )
        if not rec.inner_converged:
            trace.inner_failures += 1
        trace.records.append(rec)
        w = w_next
        if keep_iterates:
            trace.history.append(w.copy())
        if viol <= tol_violation and gap <= tol_change:
            trace.termination = "tol-met"
            break
    trace.final = w
    return trace


def _quadratic_x_step(problem, config, H, G, solver_kind):
    """Build ``x_step`` for the subproblem ``l(Qx) + 0.5 x^T H x - r^T x``.

    ``r = beta A^T (c - B y + lam / beta) + G x_k``; ``G`` may be None.
    """
    beta = config.beta
    direct = None
    if solver_kind == "direct-small":
        if problem.loss.quadratic is None:
            raise ValueError("direct-small x-solver needs a quadratic loss")
        direct = _DirectSolver(problem, H)

    def x_step(k, w):
        r = beta * problem.A.apply_adjoint(problem.c - problem.B.apply(w.y) + w.lam / beta)
        if G is not None:
            r = r + G.apply(w.x)
        if direct is not None:
            return direct(r), {"ek_norm": 0.0}
        res = solve_smooth_subproblem(problem, H, r, x0=w.x, tol=config.inner_tol)
        return res.x, {"ek_norm": res.grad_norm, "inner_converged": res.converged}

    return x_step


def admm_solve(problem: SeparableProblem, config: BaselineConfig,
               init: Optional[IterateW] = None) -> SolveTrace:
    """Classical ADMM with the x-subproblem solved to ``config.inner_tol``."""
    config.validate()
    init = IterateW.zeros(problem) if init is None else init
    H = problem.A.gram().scaled(config.beta)
    x_step = _quadratic_x_step(problem, config, H, None, config.x_inner)
    return run_outer_loop(problem, config.beta, init, x_step, ProximalWeight.zero(problem.n),
                          config.max_outer, config.tol_violation, config.tol_change, "admm",
                          config.keep_iterates, config.psnr_ref)


def proximal_admm_solve(problem: SeparableProblem, config: BaselineConfig,
                        init: Optional[IterateW] = None) -> SolveTrace:
    """ADMM with the proximal term ``tau/2 ||x - x_k||^2`` (``tau > 0``)."""
    config.validate()
    if not config.tau > 0:
        raise ValueError(f"proximal ADMM needs tau > 0, got {config.tau}")
    init = IterateW.zeros(problem) if init is None else init
    G = identity(problem.n).scaled(config.tau)
    H = problem.A.gram().scaled(config.beta) + G
    x_step = _quadratic_x_step(problem, config, H, G, config.x_inner)
    weight = ProximalWeight.scaled_identity(problem.n, np.sqrt(config.tau))
    return run_outer_loop(problem, config.beta, init, x_step, weight, config.max_outer,
                          config.tol_violation, config.tol_change, "padmm",
                          config.keep_iterates, config.psnr_ref)


def ladmm_solve(problem: SeparableProblem, config: BaselineConfig,
                init: Optional[IterateW] = None) -> SolveTrace:
    """Linearized ADMM: ``G = tau beta I - beta A^T A`` with ``tau >= ||A||^2``."""
    config.validate()
    a2 = operator_norm_sq(problem.A).value
    if config.tau < a2 * (1 - 1e-8):
        raise ValueError(f"linearized ADMM needs tau >= ||A||_2^2 = {a2:.12g}, got tau = {config.tau}")
    init = IterateW.zeros(problem) if init is None else init
    beta = config.beta
    H = identity(problem.n).scaled(config.tau * beta)
    G = H - problem.A.gram().scaled(beta)
    x_step = _quadratic_x_step(problem, config, H, G, config.x_inner)
    return run_outer_loop(problem, beta, init, x_step, ProximalWeight.from_gram(G),
                          config.max_outer, config.tol_violation, config.tol_change, "ladmm",
                          config.keep_iterates, config.psnr_ref)
