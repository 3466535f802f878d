import math

import numpy as np
import pytest

from illum_align.errors import NonFiniteError, ShapeMismatchError
from illum_align.evaluation import SsimConfig, ssim as windowed_ssim
from illum_align.gsra import (
    GsraParams,
    LossConfig,
    attention_map,
    charbonnier_loss,
    finite_diff_gradient,
    global_ssim,
    gsra_attention,
    gsra_forward,
    kv_project,
    prior_inject,
    random_instance,
    rectify,
    run_self_check,
    scalar_loss_gradients,
    total_loss,
    _global_ssim_grad,
)

from conftest import random_image


def reference_forward(inp, geo_prior, sem_prior, params):
    """Straight-line reimplementation used as the independent oracle.

    Shares no code with the library path: its own softmax, explicit loops
    for the projections.
    """
    n, d = inp.shape
    f_geo = inp + params.alpha_geo * geo_prior
    f_sem = inp + params.alpha_sem * sem_prior
    q = inp @ params.w_q

    def project(features, weights):
        out = np.zeros((n, d))
        for i in range(n):
            for j in range(d):
                acc = 0.0
                for k in range(d):
                    acc += features[i, k] * weights[k, j]
                out[i, j] = acc
        return out

    def softmax_rows(logits):
        out = np.zeros_like(logits)
        for i in range(logits.shape[0]):
            row = logits[i] - logits[i].max()
            e = np.array([math.exp(v) for v in row])
            out[i] = e / e.sum()
        return out

    k_geo = project(f_geo, params.w_k_geo)
    v_geo = project(f_geo, params.w_v_geo)
    k_sem = project(f_sem, params.w_k_sem)
    v_sem = project(f_sem, params.w_v_sem)
    a_geo = softmax_rows(q @ k_geo.T / math.sqrt(d) + params.bias)
    a_sem = softmax_rows(q @ k_sem.T / math.sqrt(d) + params.bias)
    a_rect = a_sem - params.lam * a_geo
    return np.concatenate([a_rect @ v_geo, a_rect @ v_sem], axis=1)


class TestPriorInject:
    def test_zero_alpha_exact(self, rng):
        f = rng.normal(size=(4, 8))
        p = rng.normal(size=(4, 8))
        assert np.array_equal(prior_inject(f, p, 0.0), f)

    def test_cancellation(self, rng):
        f = rng.normal(size=(3, 5))
        assert np.array_equal(prior_inject(f, -f, 1.0), np.zeros((3, 5)))

    def test_elementwise_oracle(self, rng):
        f = rng.normal(size=(4, 8))
        p = rng.normal(size=(4, 8))
        out = prior_inject(f, p, 0.5)
        for i in range(4):
            for j in range(8):
                assert abs(out[i, j] - (f[i, j] + 0.5 * p[i, j])) < 1e-12

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatchError):
            prior_inject(rng.normal(size=(4, 8)), rng.normal(size=(4, 7)), 1.0)


class TestKvProject:
    def test_identity_weights(self, rng):
        f = rng.normal(size=(3, 4))
        k, v = kv_project(f, np.eye(4), np.eye(4))
        assert np.array_equal(k, f)
        assert np.array_equal(v, f)

    def test_zero_weights(self, rng):
        f = rng.normal(size=(3, 4))
        k, v = kv_project(f, np.zeros((4, 4)), np.zeros((4, 4)))
        assert not k.any() and not v.any()

    def test_triple_loop_matmul_oracle(self, rng):
        f = rng.normal(size=(3, 4))
        wk = rng.normal(size=(4, 4))
        wv = rng.normal(size=(4, 4))
        k, v = kv_project(f, wk, wv)
        for mat, weights in ((k, wk), (v, wv)):
            for i in range(3):
                for j in range(4):
                    acc = sum(f[i, m] * weights[m, j] for m in range(4))
                    assert abs(mat[i, j] - acc) < 1e-10

    def test_rejects_non_square(self, rng):
        with pytest.raises(ShapeMismatchError):
            kv_project(rng.normal(size=(3, 4)), np.eye(3), np.eye(4))


class TestAttentionMap:
    def test_zero_keys_uniform(self, rng):
        q = rng.normal(size=(5, 4))
        a = attention_map(q, np.zeros((5, 4)), np.zeros((5, 5)))
        assert np.allclose(a, 1.0 / 5.0, atol=1e-12)

    def test_single_token(self, rng):
        a = attention_map(rng.normal(size=(1, 3)), rng.normal(size=(1, 3)))
        assert a.shape == (1, 1)
        assert a[0, 0] == 1.0

    def test_known_logits(self):
        # Every row sees logits (0, ln 2, ln 4) -> softmax (1/7, 2/7, 4/7).
        q = np.ones((3, 1))
        k = np.array([[0.0], [math.log(2.0)], [math.log(4.0)]])
        a = attention_map(q, k, dim=1.0)
        expected = np.array([1 / 7, 2 / 7, 4 / 7])
        for row in a:
            assert np.abs(row - expected).max() < 1e-12

    def test_rows_stochastic_random(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 7))
            d = int(rng.integers(1, 6))
            a = attention_map(
                rng.normal(size=(n, d)) * 3,
                rng.normal(size=(n, d)) * 3,
                rng.normal(size=(n, n)),
            )
            assert (a >= 0).all()
            assert np.abs(a.sum(axis=1) - 1.0).max() < 1e-9

    def test_shift_invariance(self, rng):
        q = rng.normal(size=(4, 3))
        k = rng.normal(size=(4, 3))
        bias = rng.normal(size=(4, 4))
        shift = rng.normal(size=(4, 1)) * np.ones((1, 4))
        a1 = attention_map(q, k, bias)
        a2 = attention_map(q, k, bias + shift)
        assert np.abs(a1 - a2).max() < 1e-12

    def test_extreme_logits_stable(self):
        q = np.array([[1000.0], [-1000.0]])
        k = np.array([[1.0], [2.0]])
        a = attention_map(q, k)
        assert np.isfinite(a).all()
        assert np.abs(a.sum(axis=1) - 1.0).max() < 1e-9

    def test_bias_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatchError):
            attention_map(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)),
                          np.zeros((2, 3)))


class TestRectify:
    def test_lambda_zero_exact(self, rng):
        a_sem = attention_map(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)))
        a_geo = attention_map(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)))
        assert np.array_equal(rectify(a_sem, a_geo, 0.0), a_sem)

    def test_full_cancellation(self, rng):
        a = attention_map(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)))
        assert np.abs(rectify(a, a, 1.0)).max() == 0.0

    def test_elementwise_arithmetic(self):
        a_sem = np.array([[0.6, 0.4], [0.3, 0.7]])
        a_geo = np.array([[0.5, 0.5], [0.5, 0.5]])
        expected = np.array([[0.5, 0.3], [0.2, 0.6]])
        assert np.abs(rectify(a_sem, a_geo, 0.2) - expected).max() < 1e-12

    @pytest.mark.parametrize("lam", [-1.0, -0.5, 0.0, 0.3, 1.0, 1.7, 2.0])
    def test_row_sum_law(self, rng, lam):
        a_sem = attention_map(rng.normal(size=(5, 4)), rng.normal(size=(5, 4)))
        a_geo = attention_map(rng.normal(size=(5, 4)), rng.normal(size=(5, 4)))
        rows = rectify(a_sem, a_geo, lam).sum(axis=1)
        assert np.abs(rows - (1.0 - lam)).max() < 1e-9


class TestGsraForward:
    def test_matches_reference_reimplementation(self, rng):
        for _ in range(10):
            inp, geo, sem, params, _ = random_instance(rng, 5, 6)
            mine = gsra_forward(inp, geo, sem, params)
            theirs = reference_forward(inp, geo, sem, params)
            assert np.abs(mine - theirs).max() < 1e-9

    def test_lambda_zero_semantic_half_bitwise(self, rng):
        inp, geo, sem, params, _ = random_instance(rng, 4, 8)
        params.lam = 0.0
        out = gsra_forward(inp, geo, sem, params)
        sem_stream = prior_inject(inp, sem, params.alpha_sem)
        k_sem, v_sem = kv_project(sem_stream, params.w_k_sem, params.w_v_sem)
        plain = attention_map(inp @ params.w_q, k_sem, params.bias, 8) @ v_sem
        assert np.array_equal(out[:, 8:], plain)

    def test_branch_symmetry_degenerate(self, rng):
        inp, geo, _, params, _ = random_instance(rng, 4, 6)
        params.lam = 0.0
        params.alpha_sem = params.alpha_geo
        params.w_k_sem = params.w_k_geo
        params.w_v_sem = params.w_v_geo
        out = gsra_forward(inp, geo, geo, params)
        assert np.array_equal(out[:, :6], out[:, 6:])

    def test_hand_computed_two_token_case(self):
        # Zero priors, identity projections, zero bias, orthonormal input
        # rows: logits = I / sqrt(2), both maps equal, so each output half
        # is (1 - lam) * A with A from the 2x2 softmax.
        lam = 0.3
        params = GsraParams.default(tokens=2, dim=2, alpha_geo=0.0,
                                    alpha_sem=0.0, lam=lam)
        inp = np.eye(2)
        zeros = np.zeros((2, 2))
        out = gsra_forward(inp, zeros, zeros, params)
        e = math.exp(1.0 / math.sqrt(2.0))
        p = e / (e + 1.0)
        att = np.array([[p, 1 - p], [1 - p, p]])
        expected_half = (1.0 - lam) * att  # att @ I2 == att
        assert np.abs(out[:, :2] - expected_half).max() < 1e-12
        assert np.abs(out[:, 2:] - expected_half).max() < 1e-12

    def test_shared_modality_collapse(self, rng):
        inp, geo, _, params, _ = random_instance(rng, 4, 8)
        params.alpha_sem = params.alpha_geo
        params.w_k_sem = params.w_k_geo
        params.w_v_sem = params.w_v_geo
        bundle = gsra_attention(inp, geo, geo, params)
        assert np.abs(bundle.a_geo - bundle.a_sem).max() < 1e-12
        rect_expected = (1.0 - params.lam) * bundle.a_sem
        assert np.abs(bundle.a_rect - rect_expected).max() < 1e-12

    def test_attention_bundle_invariants(self, rng):
        inp, geo, sem, params, _ = random_instance(rng, 6, 4)
        bundle = gsra_attention(inp, geo, sem, params)
        for a in (bundle.a_geo, bundle.a_sem):
            assert (a >= 0).all()
            assert np.abs(a.sum(axis=1) - 1.0).max() < 1e-9
        rows = bundle.a_rect.sum(axis=1)
        assert np.abs(rows - (1.0 - params.lam)).max() < 1e-9

    def test_shape_mismatch(self, rng):
        inp, geo, sem, params, _ = random_instance(rng, 4, 8)
        with pytest.raises(ShapeMismatchError):
            gsra_forward(inp, geo[:, :4], sem, params)

    def test_deterministic(self, rng):
        inp, geo, sem, params, _ = random_instance(rng, 4, 8)
        a = gsra_forward(inp, geo, sem, params)
        b = gsra_forward(inp, geo, sem, params)
        assert a.tobytes() == b.tobytes()


class TestCharbonnier:
    @pytest.mark.parametrize("shape", [(1,), (2, 3), (8, 8, 3), (11, 11, 3), (7, 13)])
    def test_exact_floor(self, rng, shape):
        x = rng.uniform(0, 1, size=shape)
        assert charbonnier_loss(x, x) == 1e-6

    def test_single_element(self):
        value = charbonnier_loss(np.array([5.0]), np.array([2.0]))
        assert abs(value - math.sqrt(9.0 + 1e-12)) < 1e-12
        assert abs(value - 3.0) < 1e-9

    def test_two_element_mean(self):
        pred = np.array([1.0, 4.0])
        target = np.array([1.0, 0.0])
        expected = (1e-6 + math.sqrt(16.0 + 1e-12)) / 2.0
        assert abs(charbonnier_loss(pred, target) - expected) < 1e-12
        assert abs(charbonnier_loss(pred, target) - 2.0000005) < 1e-9

    def test_whole_tensor_norm_variant(self, rng):
        a = rng.normal(size=(4, 4))
        b = rng.normal(size=(4, 4))
        expected = math.sqrt(np.sum((a - b) ** 2) + 1e-12)
        assert abs(charbonnier_loss(a, b, whole_tensor_norm=True) - expected) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            charbonnier_loss(np.zeros(3), np.zeros(4))


class TestTotalLoss:
    def test_floor_on_images(self, rng):
        img = random_image(rng, 16, 16)
        assert abs(total_loss(img, img) - 0.95e-6) < 1e-12

    def test_floor_on_feature_grids(self, rng):
        grid = rng.normal(size=(4, 16))
        assert abs(total_loss(grid, grid) - 0.95e-6) < 1e-12

    def test_weighted_sum_wiring(self, rng):
        a = random_image(rng, 16, 16)
        b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
        charb = charbonnier_loss(a, b)
        structural = windowed_ssim(a, b)
        assert abs(total_loss(a, b) - (0.95 * charb + 0.05 * (1 - structural))) < 1e-15

    def test_arithmetic_example(self):
        # charb 0.1 and ssim 0.8 weigh to 0.95*0.1 + 0.05*0.2 = 0.105.
        assert abs(0.95 * 0.1 + 0.05 * (1 - 0.8) - 0.105) < 1e-15

    def test_charbonnier_only_weights(self, rng):
        a = random_image(rng, 12, 12)
        b = random_image(rng, 12, 12)
        cfg = LossConfig(weight_charb=1.0, weight_ssim=0.0)
        assert total_loss(a, b, cfg) == charbonnier_loss(a, b)

    def test_small_input_uses_global_index(self, rng):
        a = rng.normal(size=(4, 16))
        b = rng.normal(size=(4, 16))
        expected = 0.95 * charbonnier_loss(a, b) + 0.05 * (1 - global_ssim(a, b))
        assert abs(total_loss(a, b) - expected) < 1e-15

    def test_global_matches_constant_closed_form(self):
        a = np.full((4, 4), 0.5)
        b = np.full((4, 4), 0.6)
        c1 = 1e-4
        expected = (2 * 0.5 * 0.6 + c1) / (0.25 + 0.36 + c1)
        assert abs(global_ssim(a, b) - expected) < 1e-12


class TestGradients:
    def test_quadratic(self):
        grad = finite_diff_gradient(lambda v: float(v[0] ** 2), np.array([3.0]), 1e-5)
        assert abs(grad[0] - 6.0) < 1e-8

    def test_charbonnier_derivative(self):
        # d/dx sqrt((x-2)^2 + eps^2) at x=5 is 3/sqrt(9+eps^2) ~ 1.
        func = lambda v: charbonnier_loss(np.array([v[0]]), np.array([2.0]))
        grad = finite_diff_gradient(func, np.array([5.0]), 1e-5)
        assert abs(grad[0] - 1.0) < 1e-6

    def test_nonfinite_probe_raises(self):
        def bad(v):
            return float("nan")

        with pytest.raises(NonFiniteError):
            finite_diff_gradient(bad, np.array([1.0]))

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            finite_diff_gradient(lambda v: 0.0, np.array([1.0]), 0.0)

    def test_global_ssim_grad_matches_finite_diff(self, rng):
        a = rng.normal(size=(3, 5))
        b = rng.normal(size=(3, 5))
        analytic = _global_ssim_grad(a, b, 1e-4, 9e-4)

        def func(vec):
            return float(global_ssim(vec.reshape(3, 5), b))

        numeric = finite_diff_gradient(func, a.ravel(), 1e-6).reshape(3, 5)
        assert np.abs(analytic - numeric).max() < 1e-8

    def test_lambda_gradient_hand_chain_rule(self, rng):
        # d(out)/d(lam) = [-A_geo V_geo, -A_geo V_sem]; push the loss
        # gradient through by hand and compare.
        inp, geo, sem, params, target = random_instance(rng, 2, 2)
        grads = scalar_loss_gradients(inp, geo, sem, params, target)

        def loss_of_lam(vec):
            probe = GsraParams(
                alpha_geo=params.alpha_geo, alpha_sem=params.alpha_sem,
                lam=float(vec[0]), w_q=params.w_q,
                w_k_geo=params.w_k_geo, w_v_geo=params.w_v_geo,
                w_k_sem=params.w_k_sem, w_v_sem=params.w_v_sem,
                bias=params.bias,
            )
            return total_loss(gsra_forward(inp, geo, sem, probe), target)

        numeric = finite_diff_gradient(loss_of_lam, np.array([params.lam]), 1e-5)
        assert abs(grads["lam"] - numeric[0]) < 1e-4 * max(abs(numeric[0]), 1e-8)

    @pytest.mark.parametrize("seed", range(20))
    def test_scalar_gradients_match_finite_diff(self, seed):
        rng = np.random.default_rng(1234 + seed)
        inp, geo, sem, params, target = random_instance(rng, 4, 8)
        analytic = scalar_loss_gradients(inp, geo, sem, params, target)

        base = np.array([params.lam, params.alpha_geo, params.alpha_sem])

        def objective(vec):
            probe = GsraParams(
                alpha_geo=float(vec[1]), alpha_sem=float(vec[2]),
                lam=float(vec[0]), w_q=params.w_q,
                w_k_geo=params.w_k_geo, w_v_geo=params.w_v_geo,
                w_k_sem=params.w_k_sem, w_v_sem=params.w_v_sem,
                bias=params.bias,
            )
            return total_loss(gsra_forward(inp, geo, sem, probe), target)

        numeric = finite_diff_gradient(objective, base, 1e-5)
        for i, name in enumerate(("lam", "alpha_geo", "alpha_sem")):
            rel = abs(analytic[name] - numeric[i]) / max(abs(numeric[i]), 1e-8)
            assert rel < 1e-4, f"{name}: analytic {analytic[name]} vs fd {numeric[i]}"


class TestSelfCheck:
    def test_all_pass(self):
        results = run_self_check(seed=7, tokens=4, dim=8, trials=5)
        assert results
        for r in results:
            assert r.passed, f"{r.name}: {r.detail}"
