import numpy as np
import pytest
import torch

from ldmkit.vqvae import LatentTensor, VqVae, quantize


def _structured_images(n, size, seed):
    """Flat-color tiles with a bright square, easy to compress."""
    rng = np.random.default_rng(seed)
    images = np.zeros((n, size, size, 3))
    for i in range(n):
        images[i] = rng.uniform(0.2, 0.8, size=3)
        y, x = rng.integers(2, size - 8, size=2)
        images[i, y : y + 6, x : x + 6] = rng.uniform(0.7, 1.0, size=3)
    return np.clip(images + rng.normal(0, 0.01, size=images.shape), 0, 1)


class TestQuantize:
    def test_codebook_entry_is_fixed_point(self):
        codebook = np.array([[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]])
        z_q, idx, commitment = quantize(codebook[1].copy(), codebook)
        np.testing.assert_array_equal(z_q, codebook[1])
        assert idx == 1 and commitment == 0.0

    def test_simple_nearest_neighbor(self):
        z_q, idx, _ = quantize(np.array([0.4]), np.array([[0.0], [1.0]]))
        assert idx == 0
        np.testing.assert_array_equal(z_q, [0.0])

    def test_matches_exhaustive_scan_oracle(self):
        rng = np.random.default_rng(0)
        codebook = rng.normal(size=(16, 5))
        z = rng.normal(size=(7, 9, 5))
        _, indices, commitment = quantize(z, codebook)
        # brute-force scan oracle
        expected = np.zeros((7, 9), dtype=np.int64)
        total = 0.0
        for i in range(7):
            for j in range(9):
                dists = [np.sum((z[i, j] - e) ** 2) for e in codebook]
                expected[i, j] = int(np.argmin(dists))
                total += min(dists)
        np.testing.assert_array_equal(indices, expected)
        assert commitment == pytest.approx(total / z.size, rel=1e-9)

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        codebook = rng.normal(size=(8, 3))
        z_q, idx, _ = quantize(rng.normal(size=(4, 4, 3)), codebook)
        z_qq, idx2, commitment = quantize(z_q, codebook)
        np.testing.assert_array_equal(z_q, z_qq)
        np.testing.assert_array_equal(idx, idx2)
        assert commitment == 0.0

    def test_straight_through_gradient(self):
        codebook = torch.randn(6, 4, generator=torch.Generator().manual_seed(2))
        z = torch.randn(5, 4, generator=torch.Generator().manual_seed(3), requires_grad=True)
        z_q, _, _ = quantize(z, codebook)
        z_q.sum().backward()
        np.testing.assert_array_equal(z.grad.numpy(), np.ones((5, 4)))

    def test_empty_codebook_rejected(self):
        with pytest.raises(ValueError):
            quantize(np.zeros(3), np.zeros((0, 3)))


class TestGeometry:
    @pytest.mark.parametrize("image_size,f,c,side", [
        (256, 4, 3, 64),   # 256 -> 64x64x3
        (256, 8, 4, 32),   # 256 -> 32x32x4
        (512, 8, 4, 64),   # 512 -> 64x64x4
        (32, 4, 3, 8),
        (32, 8, 4, 4),
        (64, 8, 4, 8),
        (64, 4, 3, 16),
    ])
    def test_latent_shapes(self, image_size, f, c, side):
        vae = VqVae(downsample_factor=f, latent_channels=c, base_width=8,
                    image_size=image_size).initialize()
        assert vae.latent_shape == (side, side, c)
        image = np.random.default_rng(0).uniform(size=(image_size, image_size, 3))
        latent = vae.encode(image)
        assert latent.data.shape == (side, side, c)
        assert latent.f == f and latent.quantized

    def test_round_trip_shape(self):
        vae = VqVae(downsample_factor=4, base_width=8, image_size=32).initialize()
        x = np.random.default_rng(1).uniform(size=(32, 32, 3))
        recon = vae.decode(vae.encode(x))
        assert recon.shape == x.shape
        assert recon.min() >= 0.0 and recon.max() <= 1.0

    def test_untrained_reconstruction_is_finite(self):
        vae = VqVae(downsample_factor=4, base_width=8, image_size=32).initialize()
        x = np.random.default_rng(2).uniform(size=(4, 32, 32, 3))
        report = vae.reconstruction_report(x)
        assert np.isfinite(report.mse) and np.isfinite(report.ssim)

    def test_rejects_bad_factor_and_size(self):
        with pytest.raises(ValueError):
            VqVae(downsample_factor=3).initialize()
        with pytest.raises(ValueError):
            VqVae(downsample_factor=8, image_size=36).initialize()

    def test_rejects_wrong_input_geometry(self):
        vae = VqVae(downsample_factor=4, base_width=8, image_size=32).initialize()
        with pytest.raises(ValueError):
            vae.transform(np.zeros((1, 64, 64, 3)))
        with pytest.raises(ValueError):
            vae.inverse_transform(np.zeros((1, 4, 4, 3)))  # wrong latent side


class TestTraining:
    def test_single_image_memorization(self):
        x = _structured_images(1, 32, seed=3)
        vae = VqVae(downsample_factor=4, base_width=16, steps=500, batch_size=1,
                    lr=3e-3, seed=0).fit(x)
        assert vae.loss_curve_[-1]["recon_mse"] < 1e-3

    def test_loss_decreases_on_toy_set(self):
        x = _structured_images(24, 32, seed=4)
        vae = VqVae(downsample_factor=4, base_width=16, steps=220, batch_size=24,
                    lr=2e-3, seed=0).fit(x)
        first = np.mean([e["loss"] for e in vae.loss_curve_[:20]])
        last = np.mean([e["loss"] for e in vae.loss_curve_[-20:]])
        assert last <= first

    def test_trained_beats_untrained(self):
        x = _structured_images(16, 32, seed=5)
        params = dict(downsample_factor=4, base_width=16, steps=250, batch_size=16,
                      lr=2e-3, seed=0)
        trained = VqVae(**params).fit(x).reconstruction_report(x)
        untrained = VqVae(**params).initialize().reconstruction_report(x)
        assert trained.mse <= untrained.mse

    def test_divergence_detection(self):
        x = _structured_images(8, 32, seed=6)
        with pytest.raises(FloatingPointError):
            VqVae(downsample_factor=4, base_width=16, steps=80, batch_size=8,
                  lr=1e5, seed=0).fit(x)

    def test_save_load_round_trip(self, tmp_path):
        x = _structured_images(8, 32, seed=7)
        vae = VqVae(downsample_factor=4, base_width=16, steps=40, batch_size=8, seed=0).fit(x)
        path = tmp_path / "vae.pt"
        vae.save(path)
        loaded = VqVae.load(path)
        np.testing.assert_allclose(vae.transform(x), loaded.transform(x), atol=1e-7)
        np.testing.assert_allclose(vae.reconstruct(x), loaded.reconstruct(x), atol=1e-7)


class TestReports:
    def test_exact_reconstruction_scores(self):
        class IdentityVae(VqVae):
            def reconstruct(self, X):
                return np.asarray(X, dtype=np.float64)

        vae = IdentityVae(downsample_factor=4, base_width=8, image_size=32).initialize()
        x = np.random.default_rng(8).uniform(size=(3, 32, 32, 3))
        report = vae.reconstruction_report(x)
        assert report.ssim == pytest.approx(1.0, abs=1e-12)
        assert report.mse == 0.0
        assert report.n_images == 3

    def test_empty_dataset_rejected(self):
        vae = VqVae(downsample_factor=4, base_width=8, image_size=32).initialize()
        with pytest.raises(ValueError):
            vae.reconstruction_report(np.zeros((0, 32, 32, 3)))

    def test_latent_tensor_decode_path(self):
        vae = VqVae(downsample_factor=8, latent_channels=4, base_width=8,
                    image_size=32).initialize()
        latent = LatentTensor(data=np.zeros((4, 4, 4)), f=8, quantized=False)
        assert vae.decode(latent).shape == (32, 32, 3)
