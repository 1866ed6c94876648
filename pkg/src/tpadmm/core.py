"""Task-adaptive proximal ADMM.

The x-subproblem ``min L_beta(x, y_k, lam_k) + 0.5 ||W (x - x_k)||^2`` is
the fixed-point problem ``x = F_k(x)`` with

    F_k(x) = (Wbar + beta A^T A)^{-1} (s_k - Q^T grad l(Qx)),
    s_k    = beta A^T (-B y_k + c + lam_k / beta) + Wbar x_k.

A task module proposes a candidate ``xhat``; it is accepted only if its
optimality residual ``e_k(x) = grad l(Q F_k(x)) - grad l(Qx)`` contracts by
``eta`` relative to the previous accepted candidate. Otherwise the
candidate is blended towards a numerically computed solution until it
passes. The new primal iterate is ``x_{k+1} = F_k(xhat_{k+1})``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from .baselines import IterationRecord, SolveTrace, run_outer_loop
from .linops import (LinearMap, SpdSystem, cg_solve, min_eig_lower_bound,
                     operator_norm_sq)
from .problem import IterateW, ProximalWeight, SeparableProblem, solve_smooth_subproblem

logger = logging.getLogger(__name__)

DEFAULT_W_SCALE = float(np.sqrt(2.0))
CG_TOL_CAP = 1e-10
CG_TOL_FLOOR = 1e-14


@dataclass
class ErrorController:
    """Contraction factor ``eta`` and the residual history it governs."""

    eta: float
    eta_max: float
    gamma: float
    abs_floor: float = 1e-12
    residual_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        if not 0 < self.eta < self.eta_max:
            raise ValueError(f"eta = {self.eta} must satisfy 0 < eta < eta_max = {self.eta_max:.12g}")
        if not self.abs_floor > 0:
            raise ValueError("abs_floor must be positive")

    def cg_tol(self, prev_residual: float, scale: float = 1.0) -> float:
        """Relative CG tolerance keeping the error in ``F_k`` below ``0.01 eta prev``.

        ``scale`` is the right-hand-side magnitude the CG test is relative to.
        """
        return max(CG_TOL_FLOOR, min(CG_TOL_CAP, 0.01 * self.eta * prev_residual / max(1.0, scale)))


@dataclass
class TpadmmConfig:
    """Parameters of the task-adaptive solver.

    ``weight`` defaults to ``sqrt(2) I`` (so ``Wbar = 2 I``); ``eta="auto"``
    picks ``0.9 * eta_max``. ``xi0`` is accepted for completeness and unused.
    """

    beta: float = 1.0
    weight: Optional[ProximalWeight] = None
    w_scale: float = DEFAULT_W_SCALE
    eta: Union[float, str] = "auto"
    zeta0: float = 1.0
    C: float = 0.1
    t_max: int = 20
    max_outer: int = 2000
    tol_violation: float = 1e-9
    tol_change: float = 1e-9
    fallback: str = "cg-newton"
    norm_mode: str = "bound"
    abs_floor: float = 1e-12
    fallback_fraction: float = 0.5
    xi0: float = 0.0
    keep_iterates: bool = False
    psnr_ref: Optional[np.ndarray] = None

    def validate(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not 0 <= self.zeta0 <= 1:
            raise ValueError(f"zeta0 must lie in [0, 1], got {self.zeta0}")
        if not 0 < self.C <= 0.5:
            raise ValueError(f"C must lie in (0, 0.5], got {self.C}")
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if self.fallback not in ("cg-newton", "gradient-descent"):
            raise ValueError(f"unknown fallback {self.fallback!r}")
        if self.norm_mode not in ("bound", "power"):
            raise ValueError(f"norm_mode must be 'bound' or 'power', got {self.norm_mode!r}")
        if not 0 < self.fallback_fraction < 1:
            raise ValueError("fallback_fraction must lie in (0, 1)")
        if isinstance(self.eta, str) and self.eta != "auto":
            raise ValueError(f"eta must be a number or 'auto', got {self.eta!r}")

    def resolve_weight(self, n: int) -> ProximalWeight:
        if self.weight is not None:
            return self.weight
        return ProximalWeight.scaled_identity(n, self.w_scale)


@dataclass
class InnerReport:
    accepted_source: str
    t_used: int
    residual_before: float
    residual_after: float
    x_next: Optional[np.ndarray] = None


# --- the proximal system and the F_k / e_k maps ---------------------------

def proximal_system(problem: SeparableProblem, weight: ProximalWeight, beta: float) -> SpdSystem:
    """``Wbar + beta A^T A`` with its analytic eigenvalue floor when known."""
    op = weight.wbar + problem.A.gram().scaled(beta)
    floor = weight.scale ** 2 if weight.scale else None
    return SpdSystem(op, f"Wbar + {beta:g} A^T A", eig_floor=floor)


def check_invertible(problem: SeparableProblem, weight: ProximalWeight, beta: float,
                     system: Optional[SpdSystem] = None) -> float:
    system = system or proximal_system(problem, weight, beta)
    try:
        lam = min_eig_lower_bound(system)
    except ValueError as exc:
        raise ValueError(
            "Wbar + beta A^T A is singular (A is not full column rank); use a nonzero proximal weight W"
        ) from exc
    if lam <= 1e-12:
        raise ValueError(
            "Wbar + beta A^T A is numerically singular; use a nonzero proximal weight W")
    return lam


def compute_sk(problem: SeparableProblem, weight: ProximalWeight, beta: float, y_k, lambda_k, x_k):
    """``s_k = beta A^T (-B y_k + c + lam_k / beta) + Wbar x_k``."""
    y_k, lambda_k, x_k = (np.asarray(v, dtype=float) for v in (y_k, lambda_k, x_k))
    if y_k.shape != (problem.m,) or lambda_k.shape != (problem.l,) or x_k.shape != (problem.n,):
        raise ValueError("dimension mismatch in compute_sk")
    s = beta * problem.A.apply_adjoint(-problem.B.apply(y_k) + problem.c + lambda_k / beta)
    if not weight.is_zero:
        s = s + weight.wbar.apply(x_k)
    return s


class XSubproblem:
    """``F_k`` and ``e_k`` for a fixed ``s_k``."""

    def __init__(self, problem: SeparableProblem, weight: ProximalWeight, beta: float, s_k,
                 system: Optional[SpdSystem] = None):
        self.problem = problem
        self.weight = weight
        self.beta = beta
        self.s_k = np.asarray(s_k, dtype=float)
        if self.s_k.shape != (problem.n,):
            raise ValueError(f"s_k must have length {problem.n}")
        self.system = system or proximal_system(problem, weight, beta)
        self.solves = 0

    def F(self, x, tol: float = 1e-12, x0=None):
        Q, loss = self.problem.Q, self.problem.loss
        rhs = self.s_k - Q.apply_adjoint(loss.gradient(Q.apply(x)))
        res = cg_solve(self.system, rhs, tol=tol, max_iter=10 * self.problem.n + 200, x0=x0)
        self.solves += 1
        if not res.converged and res.residual > 100 * tol * max(1.0, np.linalg.norm(rhs)):
            raise RuntimeError(f"CG failed inside F_k: residual {res.residual:.3e}")
        return res.x

    def residual(self, x, tol: float = 1e-12, x0=None):
        """Return ``(e_k(x), F_k(x))``; ``x0`` warm-starts CG (default ``x``)."""
        x = np.asarray(x, dtype=float)
        Q, grad = self.problem.Q, self.problem.loss.gradient
        Fx = self.F(x, tol, x0=x if x0 is None else x0)
        return grad(Q.apply(Fx)) - grad(Q.apply(x)), Fx

    def residual_norm(self, x, tol: float = 1e-12) -> float:
        return float(np.linalg.norm(self.residual(x, tol)[0]))


def fk_apply(problem, weight, beta, s_k, x_hat, tol: float = 1e-12):
    """``F_k(xhat)``; its fixed point solves the proximal x-subproblem."""
    check_invertible(problem, weight, beta)
    return XSubproblem(problem, weight, beta, s_k).F(np.asarray(x_hat, dtype=float), tol)


def ek_residual(problem, weight, beta, s_k, x, tol: float = 1e-12):
    """``e_k(x) = grad l(Q F_k(x)) - grad l(Qx)``."""
    check_invertible(problem, weight, beta)
    return XSubproblem(problem, weight, beta, s_k).residual(x, tol)[0]


# --- admissible eta -------------------------------------------------------

def eta_from_norm(alpha: float, lipschitz: float, n_norm: float) -> float:
    """``sqrt(2 alpha) / (sqrt(2 alpha) + L ||N||)``."""
    r = np.sqrt(2.0 * alpha)
    return float(r / (r + lipschitz * n_norm))


def composite_n(problem: SeparableProblem, weight: ProximalWeight, beta: float,
                system: Optional[SpdSystem] = None, tol: float = 1e-12) -> LinearMap:
    """``N = Q (Wbar + beta A^T A)^{-1} [W^T, sqrt(beta) A^T]`` as a linear map."""
    if weight.W is None:
        raise ValueError("the composite N needs W itself, not only W^T W")
    system = system or proximal_system(problem, weight, beta)
    W, A, Q = weight.W, problem.A, problem.Q
    nw, l, sb = W.range_dim, A.range_dim, np.sqrt(beta)

    def solve(v):
        return cg_solve(system, v, tol=tol, max_iter=10 * problem.n + 200).x

    def fwd(uv):
        return Q.apply(solve(W.apply_adjoint(uv[:nw]) + sb * A.apply_adjoint(uv[nw:])))

    def adj(z):
        t = solve(Q.apply_adjoint(z))
        return np.concatenate([W.apply(t), sb * A.apply(t)])

    return LinearMap(nw + l, Q.range_dim, fwd, adj, tag="N")


def n_norm_estimate(problem: SeparableProblem, weight: ProximalWeight, beta: float,
                    mode: str = "bound", power_tol: float = 1e-10, power_max_iter: int = 3000) -> float:
    """``||N||_2``: an upper bound from ``lambda_min`` or a power-iteration estimate."""
    system = proximal_system(problem, weight, beta)
    bound = None
    try:
        lam_min = min_eig_lower_bound(system)
        if problem.Q.norm_bound is not None:
            qn = problem.Q.norm_bound
        else:
            qn = float(np.sqrt(operator_norm_sq(problem.Q, tol=1e-10).value))
        # ||N|| <= ||Q|| ||S^{-1} K|| = ||Q|| / sqrt(lambda_min) since K K^T = S
        bound = max(qn, 1.0) / np.sqrt(lam_min)
    except ValueError:
        if mode == "bound":
            logger.info("lambda_min bound unavailable, falling back to power iteration")
    if mode == "bound" and bound is not None:
        return float(bound)
    est = operator_norm_sq(composite_n(problem, weight, beta, system), tol=power_tol,
                           max_iter=power_max_iter)
    if est.converged:
        return float(np.sqrt(est.value))
    if bound is not None:
        logger.warning("power iteration on N unconverged; using the lambda_min bound")
        return float(bound)
    raise RuntimeError("||N||_2 unavailable: no lambda_min bound and power iteration did not converge")


def eta_upper_bound(problem: SeparableProblem, weight: ProximalWeight, beta: float,
                    norm_mode: str = "bound") -> float:
    nn = n_norm_estimate(problem, weight, beta, norm_mode)
    return eta_from_norm(problem.loss.alpha, problem.loss.lipschitz, nn)


def make_controller(problem: SeparableProblem, weight: ProximalWeight, beta: float,
                    eta="auto", norm_mode: str = "bound", abs_floor: float = 1e-12,
                    gamma_mode: Optional[str] = None) -> ErrorController:
    """Build an :class:`ErrorController`; ``eta="auto"`` means ``0.9 eta_max``."""
    nn = n_norm_estimate(problem, weight, beta, norm_mode)
    eta_max = eta_from_norm(problem.loss.alpha, problem.loss.lipschitz, nn)
    if gamma_mode is not None and gamma_mode != norm_mode:
        nn = n_norm_estimate(problem, weight, beta, gamma_mode)
    if eta == "auto":
        eta = 0.9 * eta_max
    elif not 0 < float(eta) < eta_max:
        raise ValueError(f"eta = {eta} is not admissible: it must satisfy 0 < eta < eta_max = {eta_max:.6g}")
    return ErrorController(float(eta), eta_max, problem.loss.lipschitz * nn, abs_floor)


# --- inner acceptance loop ------------------------------------------------

def fallback_solve(problem: SeparableProblem, weight: ProximalWeight, beta: float, s_k,
                   target_residual: float, x0=None, method: str = "cg-newton",
                   sub: Optional[XSubproblem] = None, max_rounds: int = 12,
                   check_tol: Optional[float] = None):
    """A numerical solution ``xtilde`` of the x-subproblem with ``||e_k(xtilde)|| <= target``."""
    if not target_residual > 0:
        raise ValueError("target_residual must be positive")
    sub = sub or XSubproblem(problem, weight, beta, s_k)
    x = np.zeros(problem.n) if x0 is None else np.array(x0, dtype=float)
    if check_tol is None:
        scale = max(1.0, float(np.linalg.norm(sub.s_k)))
        check_tol = max(CG_TOL_FLOOR, min(1e-12, 0.01 * target_residual / scale))
    best = sub.residual_norm(x, check_tol)
    if best <= target_residual:
        return x
    best_x = x
    scale = max(1.0, float(np.linalg.norm(sub.s_k)))
    tol = min(1e-6, 0.1 * target_residual / scale)
    H = sub.system.operator
    floor = sub.system.eig_floor
    for _ in range(max_rounds):
        if problem.loss.quadratic is None:
            stop = lambda u: sub.residual_norm(u, check_tol) <= target_residual
        else:
            stop = None
        res = solve_smooth_subproblem(problem, H, sub.s_k, x0=x, tol=tol, method=method,
                                      eig_floor=floor, stop=stop)
        x = res.x
        r = sub.residual_norm(x, check_tol)
        if r < best:
            best, best_x = r, x
        if r <= target_residual:
            return x
        tol = max(tol * 1e-2, 1e-16)
    raise RuntimeError(f"fallback solver could not reach residual {target_residual:.3e}; "
                       f"best achieved {best:.3e}")


def inner_select(problem: SeparableProblem, weight: ProximalWeight, beta: float, s_k, x_k,
                 x_hat_prev, module, controller: ErrorController, config: TpadmmConfig,
                 k: int = 0, sub: Optional[XSubproblem] = None):
    """Choose ``xhat_{k+1}`` under the error-control condition.

    Returns ``(xhat, report)``; ``report.x_next`` holds ``F_k(xhat)``.
    """
    sub = sub or XSubproblem(problem, weight, beta, s_k)
    eta = controller.eta
    scale = float(np.linalg.norm(sub.s_k))
    tol = CG_TOL_CAP
    prev = sub.residual_norm(x_hat_prev, tol)
    for _ in range(3):
        new_tol = controller.cg_tol(prev, scale)
        if new_tol >= tol:
            break
        tol = new_tol
        prev = sub.residual_norm(x_hat_prev, tol)

    if prev < controller.abs_floor:
        xt = fallback_solve(problem, weight, beta, s_k, controller.abs_floor, x0=x_hat_prev,
                            method=config.fallback, sub=sub, check_tol=tol)
        e, Fx = sub.residual(xt, tol)
        return xt, InnerReport("fallback-forced", 0, prev, float(np.linalg.norm(e)), Fx)

    proposal = np.asarray(module(k, x_k, context={"s_k": sub.s_k}), dtype=float)
    if proposal.shape != (problem.n,):
        raise ValueError(f"task module returned shape {proposal.shape}, expected ({problem.n},)")
    e, F_prop = sub.residual(proposal, tol)
    r = float(np.linalg.norm(e))
    if r <= eta * prev:
        return proposal, InnerReport("module", 0, prev, r, F_prop)

    target = config.fallback_fraction * eta * prev
    xt = fallback_solve(problem, weight, beta, s_k, target, x0=x_k, method=config.fallback, sub=sub,
                        check_tol=tol)
    e_t, F_t = sub.residual(xt, tol)
    for t in range(1, config.t_max + 1):
        zeta = config.zeta0 * config.C ** t
        cand = (1.0 - zeta) * xt + zeta * proposal
        # F_k is affine for quadratic losses, so this guess is usually close
        e, Fx = sub.residual(cand, tol, x0=(1.0 - zeta) * F_t + zeta * F_prop)
        r = float(np.linalg.norm(e))
        if r <= eta * prev:
            return cand, InnerReport(f"blend({t})", t, prev, r, Fx)
    e, Fx = e_t, F_t
    r = float(np.linalg.norm(e))
    if r > eta * prev:
        raise RuntimeError(f"fallback candidate residual {r:.3e} exceeds eta * previous = {eta * prev:.3e}")
    return xt, InnerReport("fallback-forced", config.t_max + 1, prev, r, Fx)


# --- the solver -----------------------------------------------------------

def tpadmm_solve(problem: SeparableProblem, config: TpadmmConfig, module,
                 init: Optional[IterateW] = None, x_hat0=None,
                 controller: Optional[ErrorController] = None) -> SolveTrace:
    """Run task-adaptive proximal ADMM with the given task module.

    The returned trace carries ``meta["controller"]`` with the residual
    history and the ``eta``/``gamma`` in force.
    """
    config.validate()
    init = IterateW.zeros(problem) if init is None else init
    init.check(problem)
    weight = config.resolve_weight(problem.n)
    beta = config.beta
    system = proximal_system(problem, weight, beta)
    check_invertible(problem, weight, beta, system)
    if controller is None:
        controller = make_controller(problem, weight, beta, config.eta, config.norm_mode,
                                     config.abs_floor)
    state = {"x_hat": init.x.copy() if x_hat0 is None else np.array(x_hat0, dtype=float)}

    def x_step(k, w):
        s_k = compute_sk(problem, weight, beta, w.y, w.lam, w.x)
        sub = XSubproblem(problem, weight, beta, s_k, system)
        x_hat, rep = inner_select(problem, weight, beta, s_k, w.x, state["x_hat"], module,
                                  controller, config, k, sub)
        state["x_hat"] = x_hat
        controller.residual_history.append(rep.residual_after)
        return rep.x_next, {"ek_norm": rep.residual_after, "ek_prev": rep.residual_before,
                            "accepted_source": rep.accepted_source, "t_used": rep.t_used}

    trace = run_outer_loop(problem, beta, init, x_step, weight, config.max_outer,
                           config.tol_violation, config.tol_change, "tpadmm",
                           config.keep_iterates, config.psnr_ref)
    trace.meta.update(controller=controller, eta=controller.eta, eta_max=controller.eta_max,
                      gamma=controller.gamma, weight=weight, x_hat=state["x_hat"])
    return trace


# --- diagnostics ----------------------------------------------------------

def acceptance_holds(trace: SolveTrace, eta: float, abs_floor: float = 1e-12) -> bool:
    """Every accepted iterate satisfies ``||e_k(xhat^{k+1})|| <= eta ||e_k(xhat^k)|| + abs_floor``."""
    return all(r.ek_norm <= eta * r.ek_prev + abs_floor for r in trace.records)


def prop1_check(trace: SolveTrace, controller: ErrorController, slack: float = 1e-9) -> bool:
    """Check ``r_k <= eta r_{k-1} + eta gamma Lambda^{k-1,k}`` for every ``k >= 1``.

    ``r_k = ||e_k(xhat^{k+1})||`` and ``Lambda`` is the M-seminorm of the
    iterate change, both read from the trace records.
    """
    recs = trace.records
    ek = np.array([r.ek_norm for r in recs], dtype=float)
    gaps = np.array([r.lambda_gap for r in recs], dtype=float)
    if not np.all(np.isfinite(ek)) or not np.all(np.isfinite(gaps)):
        raise ValueError("trace lacks residual or gap fields")
    eta, gamma = controller.eta, controller.gamma
    for k in range(1, len(recs)):
        if ek[k] - (eta * ek[k - 1] + eta * gamma * gaps[k - 1]) > slack:
            return False
    return True


def rate_series(trace: SolveTrace):
    """``(K, K min_{k<=K} Lambda_k^2, K min_{k<=K} ||e_k||^2)`` for every prefix length ``K``."""
    gaps = trace.column("lambda_gap") ** 2
    ek = trace.column("ek_norm") ** 2
    mg = np.minimum.accumulate(gaps)
    me = np.minimum.accumulate(ek)
    return [(K, K * float(mg[K - 1]), K * float(me[K - 1])) for K in range(1, len(gaps) + 1)]


def lambda_bar(problem: SeparableProblem, beta: float, x_next, y_k, lambda_k):
    """``lam_k - beta (A x_{k+1} + B y_k - c)``."""
    return np.asarray(lambda_k, dtype=float) - beta * problem.residual(np.asarray(x_next, dtype=float),
                                                                        np.asarray(y_k, dtype=float))
