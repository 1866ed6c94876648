"""Task modules: per-iteration maps ``x -> D_k(x)`` proposing x-candidates."""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage


class TaskModule:
    """A deterministic map ``(k, x) -> x'`` with ``len(x') == len(x)``.

    ``context`` is a read-only dict supplied by the solver (currently the
    key ``"s_k"``); ordinary modules ignore it.
    """

    def __init__(self, fn: Callable, label: str,
                 shape_hint: Optional[Tuple[int, int, int]] = None, uses_context: bool = False):
        self._fn = fn
        self.label = label
        self.shape_hint = shape_hint
        self.uses_context = uses_context

    def __repr__(self):
        return f"TaskModule({self.label})"

    def apply(self, k: int, x, context: Optional[dict] = None):
        x = np.asarray(x, dtype=float)
        out = self._fn(k, x, context) if self.uses_context else self._fn(k, x)
        out = np.asarray(out, dtype=float)
        if out.shape != x.shape:
            raise ValueError(f"{self.label}: output shape {out.shape} differs from input {x.shape}")
        return out

    __call__ = apply


def make_identity_module() -> TaskModule:
    return TaskModule(lambda k, x: x.copy(), "identity")


def make_exact_oracle_module(problem, weight, beta, tol: float = 1e-12) -> TaskModule:
    """Returns the exact solution of the proximal x-subproblem.

    The solver passes ``s_k`` through ``context``; calling without it is an
    error.
    """
    from .core import XSubproblem, fallback_solve, proximal_system

    system = proximal_system(problem, weight, beta)

    def fn(k, x, context):
        if not context or "s_k" not in context:
            raise ValueError("exact oracle module needs the solver context (s_k)")
        sub = XSubproblem(problem, weight, beta, context["s_k"], system)
        return fallback_solve(problem, weight, beta, context["s_k"], 1e-11, x0=x, sub=sub)

    return TaskModule(fn, "exact", uses_context=True)


def _grid_filter(filt, shape_hint):
    w, h, ch = shape_hint

    def fn(k, x):
        if x.size != w * h * ch:
            raise ValueError(f"vector of length {x.size} does not match shape hint {shape_hint}")
        img = x.reshape(h, w, ch)
        out = np.empty_like(img)
        for c in range(ch):
            out[:, :, c] = filt(img[:, :, c])
        return out.ravel()

    return fn


def make_smoothing_module(kind: str, shape_hint: Tuple[int, int, int], param: float = 1.0) -> TaskModule:
    """Box (3x3), Gaussian (``param`` = sigma) or median (``param`` = radius) filter.

    Borders use half-sample symmetric reflection, which equals edge
    replication for the radius-1 stencils (box, median:1) and keeps the
    linear filters non-expansive. Channels are filtered independently.
    """
    if len(shape_hint) != 3 or min(shape_hint) < 1:
        raise ValueError(f"shape_hint must be (width, height, channels), got {shape_hint}")
    if kind == "box":
        filt = lambda img: ndimage.uniform_filter(img, size=3, mode="reflect")
        label = "box"
    elif kind == "gaussian":
        sigma = float(param)
        filt = lambda img: ndimage.gaussian_filter(img, sigma=sigma, mode="reflect")
        label = f"gaussian:{sigma:g}"
    elif kind == "median":
        r = int(param)
        filt = lambda img: ndimage.median_filter(img, size=2 * r + 1, mode="reflect")
        label = f"median:{r}"
    else:
        raise ValueError(f"unknown smoothing kind {kind!r}")
    return TaskModule(_grid_filter(filt, tuple(shape_hint)), label, tuple(shape_hint))


def make_adversarial_module(mode: str = "constant", value: float = 0.0, seed: int = 0,
                            scale: float = 1.0) -> TaskModule:
    """``constant``: ignore x and return ``value`` everywhere.
    ``noise``: add seeded Gaussian noise of std ``scale``; the stream depends on ``(seed, k)``.
    """
    if mode == "constant":
        return TaskModule(lambda k, x: np.full_like(x, value), f"adversarial:constant:{value:g}")
    if mode == "noise":
        def fn(k, x):
            rng = np.random.default_rng([seed, k])
            return x + scale * rng.standard_normal(x.shape)
        return TaskModule(fn, f"adversarial:noise:{seed}:{scale:g}")
    raise ValueError(f"unknown adversarial mode {mode!r}")


def make_schedule_module(schedule: Sequence[Tuple[int, TaskModule]]) -> TaskModule:
    """Switch modules by iteration: ``[(0, m0), (10, m1)]`` uses ``m1`` from k = 10 on."""
    schedule = sorted(schedule, key=lambda s: s[0])
    if not schedule or schedule[0][0] > 0:
        raise ValueError("schedule must start at iteration 0")

    def fn(k, x, context):
        active = schedule[0][1]
        for start, mod in schedule:
            if k >= start:
                active = mod
        return active.apply(k, x, context)

    return TaskModule(fn, "schedule[" + ",".join(f"{s}:{m.label}" for s, m in schedule) + "]",
                      uses_context=True)


def parse_module(text: str, shape_hint=None, problem=None, weight=None, beta=None) -> TaskModule:
    """Build a module from a CLI string such as ``gaussian:1.0`` or ``median:1``."""
    name, _, arg = text.partition(":")
    if name == "identity":
        return make_identity_module()
    if name == "exact":
        return make_exact_oracle_module(problem, weight, beta)
    if name == "box":
        return make_smoothing_module("box", shape_hint)
    if name == "gaussian":
        return make_smoothing_module("gaussian", shape_hint, float(arg or 1.0))
    if name == "median":
        return make_smoothing_module("median", shape_hint, int(arg or 1))
    if name == "adversarial":
        if arg.startswith("noise"):
            parts = arg.split(":")
            seed = int(parts[1]) if len(parts) > 1 else 0
            scale = float(parts[2]) if len(parts) > 2 else 1.0
            return make_adversarial_module("noise", seed=seed, scale=scale)
        return make_adversarial_module("constant", value=float(arg or 0.0))
    raise ValueError(f"unknown module {text!r}")
