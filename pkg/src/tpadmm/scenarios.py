"""Small reproducible problem instances used by the CLI bench and the tests."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .applications import (ImageGrid, add_noise, build_inpaint, build_tv_denoise, l1_functional,
                           random_mask, smooth_image, step_image)
from .linops import identity, matrix
from .problem import SeparableProblem, quadratic_loss

DEFAULT_MU = 1e-4
# With mu = 1e-4 the unobserved pixels are tied together so weakly that every
# proximal variant with Wbar = 2 I needs many thousands of iterations.
INPAINT_MU = 1e-2


@dataclass
class Scenario:
    name: str
    problem: SeparableProblem
    shape_hint: Tuple[int, int, int]
    clean: Optional[ImageGrid] = None
    observed: Optional[ImageGrid] = None


def lasso_1d(b: float = 2.0, mu: float = 1.0) -> Scenario:
    """``min 0.5 (x - b)^2 + mu |y|  s.t.  x - y = 0``; optimum ``x = y = 1`` for the defaults."""
    gv, gp = l1_functional(mu)
    prob = SeparableProblem(quadratic_loss(np.array([b])), identity(1), gv, gp, identity(1),
                            -identity(1), np.zeros(1), label="lasso-1d")
    return Scenario("lasso-1d", prob, (1, 1, 1))


def synthetic_image(size: int, kind: str = "step") -> ImageGrid:
    if kind == "step":
        return step_image(size, size)
    if kind == "smooth":
        return smooth_image(size, size)
    raise ValueError(f"unknown synthetic image {kind!r}")


def tv_denoise_scenario(size: int = 8, noise: float = 0.2, mu: float = DEFAULT_MU,
                        seed: int = 0, kind: str = "step") -> Scenario:
    clean = synthetic_image(size, kind)
    noisy = add_noise(clean, "uniform", noise, seed)
    return Scenario(f"tv-{size}x{size}", build_tv_denoise(noisy, mu), clean.shape_hint, clean, noisy)


def inpaint_scenario(size: int = 16, ratio: float = 0.4, mu: float = INPAINT_MU,
                     seed: int = 0, kind: str = "smooth") -> Scenario:
    clean = synthetic_image(size, kind)
    mask = random_mask(clean.shape_hint, ratio, seed)
    observed = clean.with_pixels(mask.mask * clean.pixels)
    return Scenario(f"inpaint-{size}x{size}", build_inpaint(observed, mask, mu), clean.shape_hint,
                    clean, observed)


def random_instance(seed: int, n: Optional[int] = None, l: Optional[int] = None,
                    mu: float = 0.1) -> SeparableProblem:
    """Random quadratic + l1 instance with ``B = -I`` (so ``m = l``) and sizes at most 20."""
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(3, 21))
    l = l or int(rng.integers(3, 21))
    p = int(rng.integers(n, 21))
    Q = matrix(rng.standard_normal((p, n)) / np.sqrt(p) + np.eye(p, n))
    A = matrix(rng.standard_normal((l, n)) / np.sqrt(n))
    b = rng.standard_normal(p)
    gv, gp = l1_functional(mu)
    return SeparableProblem(quadratic_loss(b), Q, gv, gp, A, -identity(l), np.zeros(l),
                            label=f"random-{seed}")
