"""Image restoration instances: TV denoising, TV inpainting and rain-streak removal."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .baselines import IterationRecord, SolveTrace, psnr_of
from .core import (TpadmmConfig, compute_sk, inner_select, make_controller,
                   proximal_system, XSubproblem)
from .linops import LinearMap, diagonal, identity
from .problem import IterateW, SeparableProblem, quadratic_loss


@dataclass
class ImageGrid:
    """Row-major, channel-interleaved pixels: index ``(row * width + col) * channels + ch``."""

    width: int
    height: int
    channels: int
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float).ravel()
        if min(self.width, self.height, self.channels) < 1:
            raise ValueError("image dimensions must be positive")
        if self.pixels.size != self.width * self.height * self.channels:
            raise ValueError(f"{self.pixels.size} pixels do not fit "
                             f"{self.width}x{self.height}x{self.channels}")

    @property
    def shape_hint(self):
        return (self.width, self.height, self.channels)

    @property
    def size(self):
        return self.pixels.size

    def as_array(self) -> np.ndarray:
        return self.pixels.reshape(self.height, self.width, self.channels)

    @classmethod
    def from_array(cls, arr) -> "ImageGrid":
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(w, h, c, arr.ravel())

    def with_pixels(self, pixels) -> "ImageGrid":
        return ImageGrid(self.width, self.height, self.channels, pixels)

    def clamped(self) -> "ImageGrid":
        return self.with_pixels(np.clip(self.pixels, 0.0, 1.0))


def soft_threshold(v, theta: float):
    """Componentwise ``sign(v) * max(|v| - theta, 0)``."""
    if theta < 0:
        raise ValueError("theta must be non-negative")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)


def l1_functional(mu: float):
    return (lambda y: mu * float(np.sum(np.abs(y))),
            lambda v, theta: soft_threshold(v, mu * theta))


def gradient_operator(width: int, height: int, channels: int = 1) -> LinearMap:
    """Forward differences ``[grad_h; grad_v]``, zero in the last column/row."""
    n = width * height * channels

    def fwd(u):
        img = u.reshape(height, width, channels)
        gh = np.zeros_like(img)
        gv = np.zeros_like(img)
        gh[:, :-1] = img[:, 1:] - img[:, :-1]
        gv[:-1] = img[1:] - img[:-1]
        return np.concatenate([gh.ravel(), gv.ravel()])

    def adj(v):
        gh = v[:n].reshape(height, width, channels)
        gv = v[n:].reshape(height, width, channels)
        out = np.zeros((height, width, channels))
        out[:, :-1] -= gh[:, :-1]
        out[:, 1:] += gh[:, :-1]
        out[:-1] -= gv[:-1]
        out[1:] += gv[:-1]
        return out.ravel()

    return LinearMap(n, 2 * n, fwd, adj, tag="grad", norm_bound=np.sqrt(8.0))


class MaskOperator(LinearMap):
    """Diagonal 0/1 sampling operator; ``ratio`` is the fraction of missing entries."""

    def __init__(self, mask):
        mask = np.asarray(mask, dtype=float).ravel()
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mask entries must be 0 or 1")
        base = diagonal(mask)
        super().__init__(mask.size, mask.size, base._forward, base._adjoint, tag="mask",
                         diag=mask, norm_bound=1.0 if mask.any() else 0.0)
        self.mask = mask
        self.ratio = float(1.0 - mask.mean())


def random_mask(shape_hint, missing_ratio: float, seed: int = 0) -> MaskOperator:
    """Drop ``round(missing_ratio * pixels)`` pixel locations (all channels together)."""
    w, h, c = shape_hint
    rng = np.random.default_rng(seed)
    npx = w * h
    drop = rng.permutation(npx)[: int(round(missing_ratio * npx))]
    keep = np.ones(npx)
    keep[drop] = 0.0
    return MaskOperator(np.repeat(keep, c))


def build_tv_denoise(b: ImageGrid, mu: float) -> SeparableProblem:
    """``min 0.5 ||x - b||^2 + mu ||u||_1  s.t.  grad x - u = 0``."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    if b.size == 0:
        raise ValueError("empty image")
    n = b.size
    grad = gradient_operator(*b.shape_hint)
    gv, gp = l1_functional(mu)
    return SeparableProblem(quadratic_loss(b.pixels), identity(n), gv, gp, grad,
                            -identity(2 * n), np.zeros(2 * n), label="tv-denoise")


def build_inpaint(b: ImageGrid, mask: MaskOperator, mu: float) -> SeparableProblem:
    """``min 0.5 ||Mx - b||^2 + mu ||grad x||_1`` in the same split form as denoising."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    if mask.domain_dim != b.size:
        raise ValueError(f"mask of size {mask.domain_dim} does not match image of size {b.size}")
    if not mask.mask.any():
        raise ValueError("mask observes no pixels")
    n = b.size
    grad = gradient_operator(*b.shape_hint)
    gv, gp = l1_functional(mu)
    return SeparableProblem(quadratic_loss(mask.mask * b.pixels), mask, gv, gp, grad,
                            -identity(2 * n), np.zeros(2 * n), label="inpaint")


def psnr(a, ref) -> float:
    """PSNR for peak 1.0, capped at 99 dB."""
    pa = a.pixels if isinstance(a, ImageGrid) else np.asarray(a, dtype=float)
    pr = ref.pixels if isinstance(ref, ImageGrid) else np.asarray(ref, dtype=float)
    if pa.shape != pr.shape:
        raise ValueError(f"shape mismatch: {pa.shape} vs {pr.shape}")
    return psnr_of(pa, pr)


def add_noise(img: ImageGrid, kind: str = "uniform", amplitude: float = 0.2, seed: int = 0) -> ImageGrid:
    """Additive noise clipped to [0, 1]: uniform on ``[-a, a]`` or Gaussian with std ``a``."""
    rng = np.random.default_rng(seed)
    if kind == "uniform":
        noise = rng.uniform(-amplitude, amplitude, img.size)
    elif kind == "gaussian":
        noise = amplitude * rng.standard_normal(img.size)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return img.with_pixels(np.clip(img.pixels + noise, 0.0, 1.0))


def step_image(width: int, height: int, low: float = 0.2, high: float = 0.8) -> ImageGrid:
    arr = np.full((height, width), low)
    arr[:, width // 2:] = high
    return ImageGrid.from_array(arr)


def smooth_image(width: int, height: int) -> ImageGrid:
    yy, xx = np.mgrid[0:height, 0:width]
    arr = 0.5 + 0.3 * np.sin(np.pi * xx / max(width, 2)) * np.cos(np.pi * yy / max(height, 2))
    return ImageGrid.from_array(arr)


# --- rain-streak removal --------------------------------------------------

def multiblock_rain_solve(b: ImageGrid, mu1: float, mu2: float, config: TpadmmConfig,
                          module_b, module_r):
    """Split ``b`` into background ``x_b`` and rain ``x_r`` (experimental).

    Solves ``min 0.5 ||x_b + x_r - b||^2 + mu1 ||u||_1 + mu2 ||v||_1``
    subject to ``grad x_b = u`` and ``x_r = v``. Both x-blocks are updated
    from the previous iterate (Jacobi style) with their own task module and
    error controller; ``u`` and ``v`` by soft thresholding. Convergence of
    this multi-block scheme is not covered by the two-block theory.
    """
    if not (mu1 > 0 and mu2 > 0):
        raise ValueError("mu1 and mu2 must be positive")
    config.validate()
    n = b.size
    beta = config.beta
    grad = gradient_operator(*b.shape_hint)
    weight = config.resolve_weight(n)
    g1 = l1_functional(mu1)
    g2 = l1_functional(mu2)

    def block_b(xr):
        return SeparableProblem(quadratic_loss(b.pixels - xr), identity(n), *g1, grad,
                                -identity(2 * n), np.zeros(2 * n))

    def block_r(xb):
        return SeparableProblem(quadratic_loss(b.pixels - xb), identity(n), *g2, identity(n),
                                -identity(n), np.zeros(n))

    xb, xr = b.pixels.copy(), np.zeros(n)
    u, v = grad.apply(xb), np.zeros(n)
    lam1, lam2 = np.zeros(2 * n), np.zeros(n)
    hat_b, hat_r = xb.copy(), xr.copy()

    pb0, pr0 = block_b(xr), block_r(xb)
    sys_b, sys_r = proximal_system(pb0, weight, beta), proximal_system(pr0, weight, beta)
    ctrl_b = make_controller(pb0, weight, beta, config.eta, config.norm_mode, config.abs_floor)
    ctrl_r = make_controller(pr0, weight, beta, config.eta, config.norm_mode, config.abs_floor)

    trace = SolveTrace(solver="tpadmm-rain")
    for k in range(config.max_outer):
        t0 = time.perf_counter()
        pb, pr = block_b(xr), block_r(xb)
        sb = compute_sk(pb, weight, beta, u, lam1, xb)
        sr = compute_sk(pr, weight, beta, v, lam2, xr)
        hat_b, rep_b = inner_select(pb, weight, beta, sb, xb, hat_b, module_b, ctrl_b, config, k,
                                    XSubproblem(pb, weight, beta, sb, sys_b))
        hat_r, rep_r = inner_select(pr, weight, beta, sr, xr, hat_r, module_r, ctrl_r, config, k,
                                    XSubproblem(pr, weight, beta, sr, sys_r))
        ctrl_b.residual_history.append(rep_b.residual_after)
        ctrl_r.residual_history.append(rep_r.residual_after)
        xb_new, xr_new = rep_b.x_next, rep_r.x_next
        gxb = grad.apply(xb_new)
        u_new = soft_threshold(gxb - lam1 / beta, mu1 / beta)
        v_new = soft_threshold(xr_new - lam2 / beta, mu2 / beta)
        r1, r2 = gxb - u_new, xr_new - v_new
        lam1_new, lam2_new = lam1 - beta * r1, lam2 - beta * r2

        gap2 = (weight.quad(xb_new - xb) + weight.quad(xr_new - xr)
                + beta * (float(np.sum((u_new - u) ** 2)) + float(np.sum((v_new - v) ** 2)))
                + (float(np.sum((lam1_new - lam1) ** 2)) + float(np.sum((lam2_new - lam2) ** 2))) / beta)
        viol = float(np.sqrt(r1 @ r1 + r2 @ r2))
        obj = (0.5 * float(np.sum((xb_new + xr_new - b.pixels) ** 2))
               + mu1 * float(np.abs(u_new).sum()) + mu2 * float(np.abs(v_new).sum()))
        dy = float(np.sqrt(np.sum((u_new - u) ** 2) + np.sum((v_new - v) ** 2)))
        rec = IterationRecord(
            k=k, objective=obj, violation=viol, lambda_gap=float(np.sqrt(gap2)),
            ek_norm=float(np.hypot(rep_b.residual_after, rep_r.residual_after)),
            accepted_source=f"{rep_b.accepted_source}|{rep_r.accepted_source}",
            t_used=max(rep_b.t_used, rep_r.t_used),
            wall_ms=1e3 * (time.perf_counter() - t0),
            ek_prev=float(np.hypot(rep_b.residual_before, rep_r.residual_before)),
            y_change=dy,
        )
        rec.violations = (float(np.linalg.norm(r1)), float(np.linalg.norm(r2)))
        trace.records.append(rec)
        xb, xr, u, v, lam1, lam2 = xb_new, xr_new, u_new, v_new, lam1_new, lam2_new
        if viol <= config.tol_violation and rec.lambda_gap <= config.tol_change:
            trace.termination = "tol-met"
            break
    trace.final = IterateW(np.concatenate([xb, xr]), np.concatenate([u, v]),
                           np.concatenate([lam1, lam2]))
    trace.meta.update(controllers=(ctrl_b, ctrl_r), eta=ctrl_b.eta)
    return b.with_pixels(xb), b.with_pixels(xr), trace
