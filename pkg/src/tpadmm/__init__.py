"""Task-adaptive proximal ADMM with classical ADMM baselines and image restoration instances."""

from .linops import LinearMap, SpdSystem, cg_solve, diagonal, identity, matrix, operator_norm_sq
from .problem import (IterateW, ProximalWeight, SeparableProblem, l1_norm, quadratic_loss,
                      softplus_ridge_loss)
from .baselines import BaselineConfig, SolveTrace, admm_solve, ladmm_solve, proximal_admm_solve
from .core import (ErrorController, TpadmmConfig, eta_upper_bound, make_controller, prop1_check,
                   rate_series, tpadmm_solve)
from .modules import (TaskModule, make_adversarial_module, make_exact_oracle_module,
                      make_identity_module, make_smoothing_module, parse_module)
from .applications import (ImageGrid, build_inpaint, build_tv_denoise, gradient_operator,
                           multiblock_rain_solve, psnr, soft_threshold)

__version__ = "0.1.0"
