"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from .applications import (ImageGrid, add_noise, build_inpaint, build_tv_denoise,
                           multiblock_rain_solve, psnr, random_mask)
from .baselines import BaselineConfig, admm_solve, ladmm_solve, proximal_admm_solve
from .core import (TpadmmConfig, eta_upper_bound, make_controller, n_norm_estimate,
                   proximal_system, tpadmm_solve)
from .io import read_image, write_image, write_trace
from .linops import min_eig_lower_bound, operator_norm_sq
from .modules import parse_module
from .problem import ProximalWeight
from .scenarios import DEFAULT_MU, synthetic_image

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED = 0, 2, 3
SOLVERS = ("admm", "ladmm", "padmm", "tpadmm")
BENCH_MODULES = ("identity", "box", "gaussian:1", "median:1", "adversarial")


class ConfigError(ValueError):
    pass


def _add_common(p: argparse.ArgumentParser, image: bool = True):
    if image:
        p.add_argument("--in", dest="inp", help="input PGM/PPM (default: synthetic image)")
        p.add_argument("--synthetic", default="step:32",
                       help="synthetic clean image kind:size when --in is absent")
        p.add_argument("--out", help="output image path")
        p.add_argument("--noise", help="kind:amplitude, e.g. uniform:0.2")
    p.add_argument("--solver", default="tpadmm", choices=SOLVERS)
    p.add_argument("--module", default="identity")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=None,
                   help="padmm: proximal weight (default 2); ladmm: >= ||A||^2 (default 8)")
    p.add_argument("--eta", default="auto")
    p.add_argument("--zeta0", type=float, default=1.0)
    p.add_argument("--C", type=float, default=0.1)
    p.add_argument("--t-max", type=int, default=20)
    p.add_argument("--mu", type=float, default=DEFAULT_MU)
    p.add_argument("--max-outer", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-9, help="violation and iterate-change tolerance")
    p.add_argument("--norm-mode", default="bound", choices=("bound", "power"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="CSV trace path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tpadmm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("denoise", help="TV denoising"))
    p = sub.add_parser("inpaint", help="TV inpainting")
    _add_common(p)
    p.add_argument("--mask", default="ratio:0.4:0", help="ratio:<missing fraction>:<seed>")
    p = sub.add_parser("derain", help="rain-streak removal (tpadmm only)")
    _add_common(p)
    p.add_argument("--mu1", type=float, default=DEFAULT_MU)
    p.add_argument("--mu2", type=float, default=DEFAULT_MU)
    p.add_argument("--module-r", default="identity", help="task module for the rain layer")
    p.add_argument("--rain-out", help="output path for the rain layer")
    p = sub.add_parser("bench", help="solver x module matrix on one instance")
    _add_common(p)
    p.add_argument("--task", default="denoise", choices=("denoise", "inpaint"))
    p.add_argument("--mask", default="ratio:0.4:0")
    p.add_argument("--out-dir", help="directory for one trace per cell")
    p.add_argument("--modules", default=",".join(BENCH_MODULES))
    p = sub.add_parser("diagnose", help="print eta_max and operator estimates")
    _add_common(p)
    p.add_argument("--task", default="denoise", choices=("denoise", "inpaint"))
    p.add_argument("--mask", default="ratio:0.4:0")
    return parser


# --- argument interpretation ----------------------------------------------

def _load_image(args) -> ImageGrid:
    if args.inp:
        return read_image(args.inp)
    kind, _, size = args.synthetic.partition(":")
    try:
        return synthetic_image(int(size or 32), kind)
    except ValueError as exc:
        raise ConfigError(f"--synthetic: {exc}") from None


def _apply_noise(args, img: ImageGrid) -> ImageGrid:
    if not args.noise:
        return img
    kind, _, amp = args.noise.partition(":")
    try:
        return add_noise(img, kind, float(amp or 0.2), args.seed)
    except ValueError as exc:
        raise ConfigError(f"--noise {args.noise!r}: {exc}") from None


def _parse_mask(text: str, img: ImageGrid):
    parts = text.split(":")
    if parts[0] != "ratio" or len(parts) not in (2, 3):
        raise ConfigError(f"--mask must look like ratio:0.4:seed, got {text!r}")
    ratio = float(parts[1])
    if not 0 <= ratio < 1:
        raise ConfigError(f"mask ratio must lie in [0, 1), got {ratio}")
    return random_mask(img.shape_hint, ratio, int(parts[2]) if len(parts) == 3 else 0)


def _build_problem(args, task: str):
    img = _apply_noise(args, _load_image(args))
    if task == "denoise":
        return build_tv_denoise(img, args.mu), img
    mask = _parse_mask(args.mask, img)
    observed = img.with_pixels(mask.mask * img.pixels)
    return build_inpaint(observed, mask, args.mu), observed


def _eta(args):
    if args.eta == "auto":
        return "auto"
    try:
        return float(args.eta)
    except ValueError:
        raise ConfigError(f"--eta must be a number or 'auto', got {args.eta!r}") from None


def _tpadmm_config(args) -> TpadmmConfig:
    cfg = TpadmmConfig(beta=args.beta, eta=_eta(args), zeta0=args.zeta0, C=args.C,
                       t_max=args.t_max, max_outer=args.max_outer, tol_violation=args.tol,
                       tol_change=args.tol, norm_mode=args.norm_mode)
    cfg.validate()
    return cfg


def _reference(args):
    # only synthetic inputs come with a clean image to score against
    return None if args.inp else _load_image(args).pixels


def run_solver(args, problem, img: ImageGrid, solver: str, module_spec: str):
    ref = _reference(args)
    if solver == "tpadmm":
        cfg = _tpadmm_config(args)
        cfg.psnr_ref = ref
        weight = cfg.resolve_weight(problem.n)
        # fail fast on an inadmissible eta before building modules
        controller = make_controller(problem, weight, cfg.beta, cfg.eta, cfg.norm_mode, cfg.abs_floor)
        module = parse_module(module_spec, img.shape_hint, problem, weight, cfg.beta)
        return tpadmm_solve(problem, cfg, module, controller=controller)
    tau = args.tau
    if solver == "padmm":
        tau = 2.0 if tau is None else tau
    elif solver == "ladmm":
        tau = 8.0 if tau is None else tau
    cfg = BaselineConfig(beta=args.beta, tau=tau or 0.0, max_outer=args.max_outer,
                         tol_violation=args.tol, tol_change=args.tol, psnr_ref=ref)
    fn = {"admm": admm_solve, "padmm": proximal_admm_solve, "ladmm": ladmm_solve}[solver]
    return fn(problem, cfg)


def _report(trace, out=sys.stdout):
    last = trace.records[-1] if trace.records else None
    if last is not None:
        print(f"{trace.solver}: {len(trace)} iterations, objective {last.objective:.10g}, "
              f"violation {last.violation:.3e}, termination {trace.termination}", file=out)


def _finish(trace) -> int:
    if not trace.converged:
        print(f"error: no convergence within max_outer = {len(trace)} iterations", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


# --- subcommands ----------------------------------------------------------

def cmd_solve(args, task: str) -> int:
    problem, img = _build_problem(args, task)
    trace = run_solver(args, problem, img, args.solver, args.module)
    _report(trace)
    if args.out:
        write_image(img.with_pixels(trace.final.x), args.out)
    if args.trace:
        write_trace(trace, args.trace)
    return _finish(trace)


def cmd_derain(args) -> int:
    if args.solver != "tpadmm":
        raise ConfigError("derain supports only --solver tpadmm")
    img = _apply_noise(args, _load_image(args))
    cfg = _tpadmm_config(args)
    mod_b = parse_module(args.module, img.shape_hint)
    mod_r = parse_module(args.module_r, img.shape_hint)
    if "exact" in (args.module, args.module_r):
        raise ConfigError("the exact oracle module is not available for derain")
    bg, rain, trace = multiblock_rain_solve(img, args.mu1, args.mu2, cfg, mod_b, mod_r)
    _report(trace)
    if args.out:
        write_image(bg, args.out)
    if args.rain_out:
        write_image(rain, args.rain_out)
    if args.trace:
        write_trace(trace, args.trace)
    return _finish(trace)


def cmd_bench(args) -> int:
    problem, img = _build_problem(args, args.task)
    clean = _load_image(args)
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    cells = [(s, "-") for s in ("admm", "ladmm", "padmm")]
    cells += [("tpadmm", m) for m in args.modules.split(",") if m]
    print(f"{'solver':8s} {'module':14s} {'iters':>6s} {'objective':>18s} {'violation':>10s} "
          f"{'psnr':>7s} {'ms':>9s} termination")
    status = EXIT_OK
    for solver, mod in cells:
        t0 = time.perf_counter()
        trace = run_solver(args, problem, img, solver, mod if mod != "-" else "identity")
        ms = 1e3 * (time.perf_counter() - t0)
        last = trace.records[-1]
        q = psnr(trace.final.x, clean.pixels)
        print(f"{solver:8s} {mod:14s} {len(trace):6d} {last.objective:18.12g} {last.violation:10.2e} "
              f"{q:7.2f} {ms:9.1f} {trace.termination}")
        if out_dir:
            write_trace(trace, out_dir / f"{solver}_{mod.replace(':', '-')}.csv")
        if not trace.converged:
            status = EXIT_NONCONVERGED
    return status


def cmd_diagnose(args) -> int:
    problem, _ = _build_problem(args, args.task)
    beta = args.beta
    weight = ProximalWeight.scaled_identity(problem.n, float(np.sqrt(2.0)))
    system = proximal_system(problem, weight, beta)
    print(f"instance           {problem.label} (n={problem.n}, m={problem.m}, l={problem.l})")
    print(f"weight             W = sqrt(2) I, Wbar = 2 I, beta = {beta:g}")
    print(f"alpha, L           {problem.loss.alpha:g}, {problem.loss.lipschitz:g}")
    print(f"lambda_min bound   {min_eig_lower_bound(system):.12g}")
    print(f"||A||_2^2 estimate {operator_norm_sq(problem.A).value:.12g}")
    for mode in ("bound", "power"):
        nn = n_norm_estimate(problem, weight, beta, mode)
        print(f"||N||_2 ({mode:5s})    {nn:.12g}")
        print(f"eta_max ({mode:5s})    {eta_upper_bound(problem, weight, beta, mode):.12g}")
    return EXIT_OK


def run_command(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        if args.command in ("denoise", "inpaint"):
            return cmd_solve(args, args.command)
        if args.command == "derain":
            return cmd_derain(args)
        if args.command == "bench":
            return cmd_bench(args)
        return cmd_diagnose(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
