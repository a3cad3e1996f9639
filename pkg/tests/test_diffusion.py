import math

import numpy as np
import pytest

from tinymol import autograd as ag
from tinymol import diffusion as dif
from tinymol.rng import Rng


@pytest.fixture(scope="module")
def small_params():
    cfg = dif.DitConfig(latent_len=4, d_latent=3, d_model=8, layers=1,
                        heads=2, d_cond=4, d_text=8)
    ae_cfg = dif.AeConfig(max_len=4, d_latent=3, d_model=8, layers=1, heads=2)
    return dif.DiffusionParams(ae=dif.init_ae_params(ae_cfg, Rng(0)),
                               dit=dif.init_dit_params(cfg, Rng(1)))


class TestSchedule:
    def test_single_step(self):
        s = dif.build_schedule(1, 0.1, 0.1)
        assert s.alpha_bar(1) == pytest.approx(0.9)

    def test_two_step_product(self):
        s = dif.NoiseSchedule(np.array([0.1, 0.2]))
        assert s.alpha_bar(2) == pytest.approx(0.72)

    def test_default_table(self):
        s = dif.build_schedule(1000)
        assert s.alpha_bar(1000) < 1e-4
        assert (np.diff(s.alpha_bars) < 0).all()
        assert s.alpha_bar(0) == 1.0

    def test_invalid_ranges(self):
        with pytest.raises(dif.InvalidRange):
            dif.build_schedule(10, 0.2, 0.1)
        with pytest.raises(dif.InvalidRange):
            dif.build_schedule(10, 0.0, 0.5)
        with pytest.raises(dif.InvalidRange):
            dif.build_schedule(0)

    def test_sqrt_table_composes_bit_exactly(self):
        s = dif.NoiseSchedule(np.array([0.1, 0.2]))
        assert math.sqrt(1 - 0.2) * math.sqrt(1 - 0.1) == s.sqrt_alpha_bar(2)
        full = dif.build_schedule(50)
        acc = 1.0
        for t in range(1, 51):
            acc = acc * math.sqrt(full.alpha(t))
            assert acc == full.sqrt_alpha_bar(t)

    def test_sqrt_table_squares_to_alpha_bar(self):
        s = dif.build_schedule(100)
        np.testing.assert_allclose(s.sqrt_alpha_bars ** 2, s.alpha_bars,
                                   rtol=1e-12)


class TestForwardNoise:
    def test_t_zero_returns_input(self):
        s = dif.build_schedule(10)
        z0 = np.ones((2, 2))
        np.testing.assert_array_equal(
            dif.forward_noise(z0, 0, np.ones((2, 2)), s), z0)

    def test_pure_noise_limit(self):
        s = dif.build_schedule(1000)
        z0 = np.full((2, 2), 7.0)
        eps = np.ones((2, 2))
        out = dif.forward_noise(z0, 1000, eps, s)
        np.testing.assert_allclose(out, eps, atol=0.1)

    def test_closed_form_arithmetic(self):
        # alpha_bar = 0.25 via one step of beta = 0.75
        s = dif.NoiseSchedule(np.array([0.75]))
        out = dif.forward_noise(np.array([[1.0]]), 1, np.array([[2.0]]), s)
        assert out[0, 0] == pytest.approx(0.5 + math.sqrt(0.75) * 2, abs=1e-12)
        assert out[0, 0] == pytest.approx(2.2321, abs=1e-4)

    def test_step_out_of_range(self):
        s = dif.build_schedule(5)
        with pytest.raises(dif.StepOutOfRange):
            dif.forward_noise(np.ones((1, 1)), 6, np.ones((1, 1)), s)

    def test_marginal_consistency_statistical(self):
        # Two single-step transitions match the closed form on 1e4 samples.
        s = dif.NoiseSchedule(np.array([0.1, 0.2]))
        rng = Rng(123)
        n = 10_000
        z0 = np.full(n, 2.0)
        z1 = math.sqrt(1 - 0.1) * z0 + math.sqrt(0.1) * rng.normal((n,))
        z2 = math.sqrt(1 - 0.2) * z1 + math.sqrt(0.2) * rng.normal((n,))
        target_mean = s.sqrt_alpha_bar(2) * 2.0
        target_var = 1.0 - s.alpha_bar(2)
        mean_se = math.sqrt(target_var / n)
        assert abs(z2.mean() - target_mean) < 3 * mean_se
        var_se = target_var * math.sqrt(2.0 / (n - 1))
        assert abs(z2.var() - target_var) < 3 * var_se


class TestCfg:
    def test_scale_one_is_cond_bit_exact(self):
        rng = Rng(0)
        eu, ec = rng.normal((3, 2)), rng.normal((3, 2))
        np.testing.assert_array_equal(dif.cfg_combine(eu, ec, 1.0), ec)

    def test_scale_zero_is_uncond_bit_exact(self):
        rng = Rng(1)
        eu, ec = rng.normal((3, 2)), rng.normal((3, 2))
        np.testing.assert_array_equal(dif.cfg_combine(eu, ec, 0.0), eu)

    def test_arithmetic(self):
        out = dif.cfg_combine(np.array([0.0]), np.array([1.0]), 2.0)
        np.testing.assert_array_equal(out, [2.0])

    def test_linear_in_scale(self):
        rng = Rng(2)
        eu, ec = rng.normal((4,)), rng.normal((4,))
        a = dif.cfg_combine(eu, ec, 0.3)
        b = dif.cfg_combine(eu, ec, 0.7)
        mid = dif.cfg_combine(eu, ec, 0.5)
        np.testing.assert_allclose((a + b) / 2, mid, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ag.ShapeMismatch):
            dif.cfg_combine(np.zeros(2), np.zeros(3), 0.5)


class TestAutoencoder:
    def test_encode_shape(self, small_params):
        z = dif.ae_encode("CCO", small_params.ae)
        assert z.shape == (4, 3)

    def test_too_long(self, small_params):
        with pytest.raises(dif.TooLong):
            dif.ae_encode("CCCCCCCCCC", small_params.ae)

    def test_invalid_smiles(self, small_params):
        with pytest.raises(dif.InvalidSmiles):
            dif.ae_encode("C(", small_params.ae)

    def test_decode_any_finite_latent(self, small_params):
        out = dif.ae_decode(np.full((4, 3), 3.5), small_params.ae)
        assert isinstance(out, str)

    def test_reconstruction_after_pretraining(self):
        ae_cfg = dif.AeConfig(max_len=8, d_latent=8, d_model=32,
                              layers=2, heads=2)
        params = dif.init_ae_params(ae_cfg, Rng(7))
        corpus = ["C", "CC", "CCO", "CCN", "CO", "C=C"]
        dif.pretrain_autoencoder(corpus, params, steps=400, lr=3e-3)
        for text in corpus:
            assert dif.ae_decode(dif.ae_encode(text, params), params) == text


class TestBridge:
    def test_zero_noise_endpoint_is_encoding(self, small_params):
        s = dif.build_schedule(10)
        enc = dif.ae_encode("CC", small_params.ae)
        out = dif.bridge_init("CC", 0, np.zeros_like(enc), s, small_params.ae)
        np.testing.assert_array_equal(out, enc)

    def test_arithmetic(self):
        # alpha_bar = 0.81 -> coefficient 0.9 on the encoding
        s = dif.NoiseSchedule(np.array([0.19]))
        z0 = np.array([[1.0]])
        got = s.sqrt_alpha_bar(1) * z0
        np.testing.assert_allclose(got, [[0.9]], atol=1e-12)


class TestDenoiser:
    def test_output_shape_all_steps(self, small_params):
        s = dif.build_schedule(5)
        z = Rng(3).normal((4, 3))
        for t in range(1, 6):
            out = dif.predict_noise(z, t, None, small_params.dit, s)
            assert out.shape == (4, 3)

    def test_condition_changes_output(self, small_params):
        z = Rng(4).normal((4, 3))
        cond = Rng(5).normal((1, 4))
        a = dif.predict_noise(z, 1, None, small_params.dit)
        b = dif.predict_noise(z, 1, cond, small_params.dit)
        assert not np.array_equal(a.data, b.data)

    def test_gradients_match_finite_differences(self, small_params):
        z_t = Rng(6).normal((4, 3))
        eps = Rng(7).normal((4, 3))
        cond = Rng(8).normal((1, 4))

        def f():
            pred = dif.predict_noise(z_t, 2, cond, small_params.dit)
            return ag.sum_squares(ag.sub(pred, ag.tensor(eps)))

        tensors = [t for _, t in small_params.dit.named()]
        assert ag.finite_diff_check(f, tensors) < 1e-4


class TestSampling:
    def test_deterministic_under_seed(self, small_params):
        s = dif.build_schedule(5)
        g = dif.GuidanceConfig(scale=1.5, steps=5)
        cond = Rng(9).normal((1, 4))
        a = dif.sample(cond, g, s, small_params, Rng(42))
        b = dif.sample(cond, g, s, small_params, Rng(42))
        assert a == b

    def test_scale_zero_is_condition_independent(self, small_params):
        s = dif.build_schedule(5)
        g = dif.GuidanceConfig(scale=0.0, steps=5)
        a = dif.sample(Rng(1).normal((1, 4)), g, s, small_params, Rng(7))
        b = dif.sample(Rng(2).normal((1, 4)), g, s, small_params, Rng(7))
        assert a == b

    def test_bridge_start(self, small_params):
        s = dif.build_schedule(5)
        g = dif.GuidanceConfig(scale=1.0, steps=5)
        out = dif.sample(None, g, s, small_params, Rng(3), source="CC",
                         bridge_t=2)
        assert isinstance(out, str)


class TestLoss:
    def test_oracle_denoiser_gives_zero(self, small_params, monkeypatch):
        s = dif.build_schedule(5)
        captured = {}

        real_forward = dif.forward_noise

        def spy(z0, t, eps, schedule):
            captured["eps"] = eps
            return real_forward(z0, t, eps, schedule)

        monkeypatch.setattr(dif, "forward_noise", spy)
        monkeypatch.setattr(dif, "predict_noise",
                            lambda z_t, t, cond, params: ag.tensor(captured["eps"]))
        loss = dif.diffusion_loss([("CC", None)], s, small_params, Rng(0))
        assert loss.item() == 0.0

    def test_zero_denoiser_loss_near_latent_size(self, small_params, monkeypatch):
        s = dif.build_schedule(5)
        monkeypatch.setattr(dif, "predict_noise",
                            lambda z_t, t, cond, params: ag.tensor(np.zeros((4, 3))))
        batch = [("CC", None)] * 200
        loss = dif.diffusion_loss(batch, s, small_params, Rng(1))
        assert abs(loss.item() - 12.0) < 2.0  # E||eps||^2 = L * d_z = 12

    def test_empty_batch(self, small_params):
        with pytest.raises(dif.EmptyBatch):
            dif.diffusion_loss([], dif.build_schedule(5), small_params, Rng(0))
