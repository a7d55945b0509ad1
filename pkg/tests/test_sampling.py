import numpy as np
import pytest
import torch

from ldmkit.sampling import (
    NoiseSchedule,
    SamplerConfig,
    cfg_combine,
    ddim_step,
    ddim_timesteps,
    make_schedule,
    q_sample,
    sample,
)


class TestMakeSchedule:
    def test_linear_first_alpha_bar(self):
        sched = make_schedule("linear", 1000)
        assert sched.alpha_bar(1) == pytest.approx(0.9999, abs=1e-12)

    def test_linear_two_step_product(self):
        # hand oracle: (1 - 1e-4) * (1 - 2e-2)
        sched = make_schedule("linear", 2)
        assert sched.alpha_bar(2) == pytest.approx(0.9799019999999999, abs=1e-15)

    @pytest.mark.parametrize("kind", ["linear", "cosine"])
    @pytest.mark.parametrize("T", [2, 10, 1000])
    def test_invariants_exhaustive(self, kind, T):
        sched = make_schedule(kind, T)
        assert np.all(sched.betas > 0) and np.all(sched.betas < 1)
        assert np.all(np.diff(sched.alpha_bars) < 0), "alpha_bar must strictly decrease"
        assert sched.alpha_bar(0) == 1.0
        for t in range(1, T + 1):
            assert sched.alpha_bar(t) == pytest.approx(
                sched.alpha_bar(t - 1) * sched.alphas[t - 1], abs=1e-12
            )

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            make_schedule("linear", 1)
        with pytest.raises(ValueError):
            make_schedule("quadratic", 100)


class TestQSample:
    def test_zero_noise(self):
        sched = make_schedule("linear", 10)
        x0 = np.full((3, 3), 2.0)
        out = q_sample(x0, 5, np.zeros_like(x0), sched)
        np.testing.assert_allclose(out, np.sqrt(sched.alpha_bar(5)) * x0, atol=1e-14)

    def test_boundary_t0_returns_x0(self):
        sched = make_schedule("linear", 10)
        x0 = np.random.default_rng(0).normal(size=(4, 4))
        out = q_sample(x0, 0, np.ones_like(x0), sched)
        np.testing.assert_array_equal(out, x0)

    def test_scalar_hand_oracle(self):
        # 0.5 * 2 + sqrt(0.75) * 1 with alpha_bar forced to 0.25
        sched = NoiseSchedule(
            T=1, betas=np.array([0.75]), alphas=np.array([0.25]), alpha_bars=np.array([0.25])
        )
        out = q_sample(np.array(2.0), 1, np.array(1.0), sched)
        assert float(out) == pytest.approx(1.8660254037844386, abs=1e-12)

    def test_per_sample_timesteps_torch(self):
        sched = make_schedule("linear", 100)
        x0 = torch.randn(4, 2, 3, 3, generator=torch.Generator().manual_seed(1))
        eps = torch.randn(x0.shape, generator=torch.Generator().manual_seed(2))
        t = torch.tensor([1, 10, 50, 100])
        out = q_sample(x0, t, eps, sched)
        for i, ti in enumerate(t.tolist()):
            expected = q_sample(x0[i : i + 1], ti, eps[i : i + 1], sched)
            np.testing.assert_allclose(out[i].numpy(), expected[0].numpy(), atol=1e-7)

    def test_shape_mismatch(self):
        sched = make_schedule("linear", 10)
        with pytest.raises(ValueError):
            q_sample(np.zeros((2, 2)), 1, np.zeros((3, 3)), sched)


class TestDdimStep:
    def test_exact_eps_stays_on_trajectory(self):
        sched = make_schedule("linear", 200)
        rng = np.random.default_rng(42)
        for _ in range(10):
            x0 = rng.normal(size=(2, 3, 3))
            eps = rng.normal(size=x0.shape)
            t, t_prev = 150, 70
            x_t = q_sample(x0, t, eps, sched)
            stepped = ddim_step(x_t, eps, t, t_prev, sched, eta=0.0)
            np.testing.assert_allclose(stepped, q_sample(x0, t_prev, eps, sched), atol=1e-6)

    def test_terminal_step_recovers_x0(self):
        sched = make_schedule("linear", 50)
        rng = np.random.default_rng(7)
        x0 = rng.normal(size=(4, 4))
        eps = rng.normal(size=x0.shape)
        x_t = q_sample(x0, 50, eps, sched)
        np.testing.assert_allclose(ddim_step(x_t, eps, 50, 0, sched), x0, atol=1e-9)

    def test_scalar_hand_oracle(self):
        # alpha_bar_t = 0.25, alpha_bar_prev = 0.81:
        # x0_pred = (1 - sqrt(0.75)*0.5) / 0.5, out = 0.9*x0_pred + sqrt(0.19)*0.5
        sched = NoiseSchedule(
            T=2,
            betas=np.array([0.19, 1 - 0.25 / 0.81]),
            alphas=np.array([0.81, 0.25 / 0.81]),
            alpha_bars=np.array([0.81, 0.25]),
        )
        out = ddim_step(np.array(1.0), np.array(0.5), 2, 1, sched, eta=0.0)
        assert float(out) == pytest.approx(1.238522083771039, abs=1e-12)

    def test_eta_errors(self):
        sched = make_schedule("linear", 10)
        x = np.zeros((2, 2))
        with pytest.raises(ValueError):
            ddim_step(x, x, 5, 1, sched, eta=0.5)  # noise missing
        with pytest.raises(ValueError):
            ddim_step(x, x, 3, 3, sched)


class TestCfgCombine:
    def test_endpoints(self):
        u = np.array([0.0, 2.0])
        c = np.array([1.0, -1.0])
        np.testing.assert_array_equal(cfg_combine(u, c, 0.0), u)
        np.testing.assert_array_equal(cfg_combine(u, c, 1.0), c)

    def test_scalar_at_operating_scale(self):
        assert float(cfg_combine(np.array(0.0), np.array(1.0), 1.75)) == pytest.approx(1.75)

    def test_affine_in_scale(self):
        rng = np.random.default_rng(3)
        u, c = rng.normal(size=(2, 5, 5))
        for s1, s2 in [(0.3, 1.2), (1.75, 0.9), (2.5, 0.1)]:
            lhs = cfg_combine(u, c, s1) + cfg_combine(u, c, s2)
            rhs = cfg_combine(u, c, s1 + s2) + u
            np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            cfg_combine(np.zeros(3), np.zeros(4), 1.0)


class TestDdimTimesteps:
    def test_uniform_stride_50_of_1000(self):
        ts = ddim_timesteps(1000, 50)
        assert len(ts) == 50
        assert ts[0] == 1000 and ts[-1] == 20
        assert all(a > b for a, b in zip(ts, ts[1:]))
        assert all(1 <= t <= 1000 for t in ts)

    def test_full_sequence(self):
        assert ddim_timesteps(10, 10) == list(range(10, 0, -1))

    def test_rejects_too_many(self):
        with pytest.raises(ValueError):
            ddim_timesteps(10, 11)


class TestSampleLoop:
    @staticmethod
    def _toy_denoiser(z, t, cond):
        shift = 0.0 if cond is None else float(cond)
        return 0.05 * z + shift

    def test_deterministic_at_fixed_seed(self):
        sched = make_schedule("linear", 100)
        config = SamplerConfig(num_steps=10, guidance_scale=1.75, eta=0.0, seed=11)
        runs = [
            sample(self._toy_denoiser, lambda z: z.numpy(), 0.2, None, config, sched, (2, 1, 4, 4))
            for _ in range(2)
        ]
        np.testing.assert_allclose(runs[0], runs[1], atol=1e-7)

    def test_guidance_zero_matches_unconditional_loop(self):
        sched = make_schedule("linear", 100)
        config = SamplerConfig(num_steps=8, guidance_scale=0.0, eta=0.0, seed=5)
        got = sample(self._toy_denoiser, lambda z: z.numpy(), 0.7, None, config, sched, (1, 1, 3, 3))

        # independent unconditional-only loop
        gen = torch.Generator().manual_seed(5)
        z = torch.randn((1, 1, 3, 3), generator=gen, dtype=torch.float32)
        ts = ddim_timesteps(100, 8)
        for i, t in enumerate(ts):
            t_prev = ts[i + 1] if i + 1 < len(ts) else 0
            z = ddim_step(z, self._toy_denoiser(z, t, None), t, t_prev, sched)
        np.testing.assert_allclose(got, z.numpy(), atol=1e-6)

    def test_eta_requires_and_uses_noise(self):
        sched = make_schedule("linear", 100)
        eta_on = sample(self._toy_denoiser, lambda z: z.numpy(), 0.1, None,
                        SamplerConfig(num_steps=6, guidance_scale=1.0, eta=0.7, seed=3),
                        sched, (1, 1, 3, 3))
        eta_off = sample(self._toy_denoiser, lambda z: z.numpy(), 0.1, None,
                         SamplerConfig(num_steps=6, guidance_scale=1.0, eta=0.0, seed=3),
                         sched, (1, 1, 3, 3))
        assert not np.allclose(eta_on, eta_off)

    def test_invalid_config_rejected(self):
        sched = make_schedule("linear", 10)
        with pytest.raises(ValueError):
            sample(self._toy_denoiser, lambda z: z, 0.0, None,
                   SamplerConfig(num_steps=11), sched, (1, 1, 2, 2))
