import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tpadmm.applications import (ImageGrid, MaskOperator, add_noise, build_inpaint,
                                 build_tv_denoise, gradient_operator, multiblock_rain_solve, psnr,
                                 random_mask, smooth_image, soft_threshold, step_image)
from tpadmm.baselines import BaselineConfig, admm_solve, ladmm_solve, proximal_admm_solve
from tpadmm.core import TpadmmConfig, tpadmm_solve
from tpadmm.modules import make_identity_module
from tpadmm.problem import check_loss_constants, objective
from tpadmm.scenarios import tv_denoise_scenario


def prox_grid_search(v, theta):
    z = np.linspace(v - 3 - theta, v + 3 + theta, 600001)
    return z[np.argmin(0.5 * (z - v) ** 2 + theta * np.abs(z))]


@pytest.mark.oracle
@pytest.mark.parametrize("v,theta,expected", [(2.0, 1.0, 1.0), (-0.5, 1.0, 0.0)])
def test_soft_threshold_examples(v, theta, expected):
    assert soft_threshold(np.array([v]), theta)[0] == pytest.approx(expected)
    assert prox_grid_search(v, theta) == pytest.approx(expected, abs=1e-4)


@pytest.mark.oracle
@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.floats(0, 5))
def test_soft_threshold_matches_grid_search(v, theta):
    assert soft_threshold(np.array([v]), theta)[0] == pytest.approx(prox_grid_search(v, theta), abs=1e-4)


def test_soft_threshold_rejects_negative_theta():
    with pytest.raises(ValueError):
        soft_threshold(np.ones(2), -1.0)


def test_image_grid_indexing():
    img = ImageGrid(3, 2, 2, np.arange(12.0))
    arr = img.as_array()
    # (row * width + col) * channels + ch
    assert arr[1, 2, 1] == (1 * 3 + 2) * 2 + 1
    assert ImageGrid.from_array(arr).pixels.tolist() == img.pixels.tolist()
    with pytest.raises(ValueError):
        ImageGrid(3, 2, 2, np.zeros(5))


def test_gradient_of_constant_is_zero():
    g = gradient_operator(6, 5, 3)
    assert np.all(g.apply(np.full(90, 0.37)) == 0.0)


def test_gradient_values_and_dense_adjoint():
    g = gradient_operator(3, 2)
    x = np.array([1.0, 2.0, 4.0, 0.0, 0.0, 1.0])
    out = g.apply(x)
    np.testing.assert_allclose(out[:6], [1, 2, 0, 0, 1, 0])
    np.testing.assert_allclose(out[6:], [-1, -2, -3, 0, 0, 0])
    D = g.to_dense()
    np.testing.assert_allclose(g.T.to_dense(), D.T, atol=1e-14)


def test_mask_operator():
    m = MaskOperator(np.array([1, 0, 1, 1.0]))
    assert m.ratio == pytest.approx(0.25)
    np.testing.assert_array_equal(m.apply(np.arange(4.0)), [0, 0, 2, 3])
    with pytest.raises(ValueError):
        MaskOperator(np.array([0.5, 1.0]))
    rm = random_mask((10, 10, 3), 0.4, seed=1)
    assert rm.ratio == pytest.approx(0.4)
    # channels of a pixel share their mask bit
    assert np.all(rm.mask.reshape(100, 3).std(axis=1) == 0)


def test_tv_instance_loss_constants():
    p = tv_denoise_scenario(8).problem
    assert p.loss.alpha == 1.0 and p.loss.lipschitz == 1.0
    assert check_loss_constants(p.loss)


def test_builders_validate_input():
    img = step_image(4, 4)
    with pytest.raises(ValueError):
        build_tv_denoise(img, 0.0)
    with pytest.raises(ValueError):
        build_inpaint(img, MaskOperator(np.zeros(16)), 0.1)
    with pytest.raises(ValueError):
        build_inpaint(img, MaskOperator(np.ones(9)), 0.1)


def test_full_mask_inpaint_equals_denoise():
    img = add_noise(smooth_image(6, 5), "uniform", 0.2, seed=3)
    a = build_tv_denoise(img, 0.05)
    b = build_inpaint(img, MaskOperator(np.ones(30)), 0.05)
    rng = np.random.default_rng(0)
    for _ in range(10):
        x, y = rng.random(30), rng.standard_normal(60)
        assert objective(a, x, y) == pytest.approx(objective(b, x, y), rel=1e-14)


@pytest.mark.oracle
def test_tpadmm_tv_8x8_matches_long_admm():
    scen = tv_denoise_scenario(8)
    tr = tpadmm_solve(scen.problem, TpadmmConfig(), make_identity_module())
    ref = admm_solve(scen.problem, BaselineConfig(max_outer=20000, tol_violation=1e-12, tol_change=1e-12))
    f, fr = tr.records[-1].objective, ref.records[-1].objective
    assert abs(f - fr) <= 1e-4 * abs(fr)


def test_all_solvers_agree_on_tv_8x8():
    p = tv_denoise_scenario(8).problem
    objs = [admm_solve(p, BaselineConfig()).records[-1].objective,
            ladmm_solve(p, BaselineConfig(tau=8.0)).records[-1].objective,
            proximal_admm_solve(p, BaselineConfig(tau=2.0)).records[-1].objective,
            tpadmm_solve(p, TpadmmConfig(), make_identity_module()).records[-1].objective]
    assert (max(objs) - min(objs)) <= 1e-4 * min(objs)


@pytest.mark.oracle
def test_inpaint_single_missing_pixel_between_neighbors():
    rng = np.random.default_rng(5)
    img = ImageGrid.from_array(rng.random((4, 4)))
    mask = np.ones(16)
    mask[5] = 0.0                      # row 1, col 1
    p = build_inpaint(img, MaskOperator(mask), 1e-3)
    tr = admm_solve(p, BaselineConfig(max_outer=20000, tol_violation=1e-11, tol_change=1e-11))
    arr = img.as_array()[:, :, 0]
    nb = [arr[0, 1], arr[2, 1], arr[1, 0], arr[1, 2]]
    assert min(nb) - 1e-9 <= tr.final.x[5] <= max(nb) + 1e-9


@pytest.mark.oracle
def test_inpaint_fits_observed_pixels():
    clean = smooth_image(12, 12)
    noisy = add_noise(clean, "uniform", 0.2, seed=2)
    mask = random_mask(clean.shape_hint, 0.4, seed=2)
    p = build_inpaint(noisy.with_pixels(mask.mask * noisy.pixels), mask, 1e-2)
    tr = admm_solve(p, BaselineConfig(max_outer=5000))
    obs = mask.mask == 1
    assert np.max(np.abs(tr.final.x[obs] - noisy.pixels[obs])) <= 0.2


@pytest.mark.oracle
def test_psnr_formula():
    rng = np.random.default_rng(9)
    a, b = rng.random(50), rng.random(50)
    mse = np.mean((a - b) ** 2)
    assert psnr(a, b) == pytest.approx(10 * np.log10(1 / mse), rel=1e-13)
    assert psnr(ImageGrid(5, 10, 1, a), ImageGrid(5, 10, 1, a)) == 99.0
    with pytest.raises(ValueError):
        psnr(a, b[:10])


def test_add_noise_seeded_and_clamped():
    img = step_image(8, 8)
    a = add_noise(img, "uniform", 0.2, seed=1)
    b = add_noise(img, "uniform", 0.2, seed=1)
    np.testing.assert_array_equal(a.pixels, b.pixels)
    assert a.pixels.min() >= 0 and a.pixels.max() <= 1
    assert np.max(np.abs(a.pixels - img.pixels)) <= 0.2
    g = add_noise(img, "gaussian", 0.1, seed=1)
    assert not np.array_equal(g.pixels, a.pixels)
    with pytest.raises(ValueError):
        add_noise(img, "salt", 0.1)


# --- rain-streak removal ----------------------------------------------------

RAIN_CFG = dict(max_outer=2000)


def streak_image():
    arr = smooth_image(24, 24).as_array().copy()
    cols = [3, 10, 17]
    arr[:, cols, 0] += 0.3
    return ImageGrid.from_array(arr), cols


@pytest.fixture(scope="module")
def rain_free_run():
    b = smooth_image(16, 16)
    return b, multiblock_rain_solve(b, 0.01, 0.05, TpadmmConfig(**RAIN_CFG),
                                    make_identity_module(), make_identity_module())


@pytest.fixture(scope="module")
def streak_run():
    b, cols = streak_image()
    return cols, multiblock_rain_solve(b, 0.05, 0.02, TpadmmConfig(**RAIN_CFG),
                                       make_identity_module(), make_identity_module())


@pytest.mark.oracle
def test_rain_free_input_gives_empty_rain_layer(rain_free_run):
    b, (bg, rain, tr) = rain_free_run
    assert tr.converged
    assert np.max(np.abs(rain.pixels)) <= 1e-3
    ref = admm_solve(build_tv_denoise(b, 0.01), BaselineConfig(tol_violation=1e-11, tol_change=1e-11,
                                                               max_outer=5000))
    assert np.max(np.abs(bg.pixels - ref.final.x)) <= 1e-2


@pytest.mark.oracle
def test_rain_layer_supported_on_streaks(streak_run):
    cols, (bg, rain, tr) = streak_run
    energy = rain.as_array()[:, :, 0] ** 2
    assert energy[:, cols].sum() >= 0.8 * energy.sum()


@pytest.mark.oracle
def test_rain_constraint_violations_vanish(rain_free_run, streak_run):
    for _, (_, _, tr) in (rain_free_run, streak_run):
        v_b, v_r = tr.records[-1].violations
        assert v_b <= 1e-6 and v_r <= 1e-6


@pytest.mark.xfail(strict=True, reason="consecutive ADMM primal residuals are not monotone; the "
                   "Jacobi multi-block traces rise by 13-28% at some iterations")
def test_rain_violation_never_jumps_after_iteration_10(rain_free_run, streak_run):
    for _, (_, _, tr) in (rain_free_run, streak_run):
        v = tr.column("violation")
        assert np.all(v[11:] <= 1.1 * v[10:-1])


def test_rain_rejects_bad_weights():
    with pytest.raises(ValueError):
        multiblock_rain_solve(smooth_image(4, 4), 0.0, 0.1, TpadmmConfig(),
                              make_identity_module(), make_identity_module())
