import numpy as np
import pytest

from ldmkit.metrics import (
    GaussianStats,
    cas,
    fid,
    frechet_distance,
    gaussian_fit,
    mse,
    ssim,
    ssim_components,
)


class MomentExtractor:
    """Tiny stand-in feature extractor: per-channel mean/std plus quadrant means."""

    extractor_id = "test-moments"

    def __call__(self, images):
        images = np.asarray(images, dtype=np.float64)
        n, h, w, _ = images.shape
        feats = [images.mean(axis=(1, 2)), images.std(axis=(1, 2))]
        feats.append(images[:, : h // 2, : w // 2].mean(axis=(1, 2)))
        feats.append(images[:, h // 2 :, w // 2 :].mean(axis=(1, 2)))
        return np.concatenate(feats, axis=1)


# ---------------------------------------------------------------------------
# gaussian_fit
# ---------------------------------------------------------------------------


class TestGaussianFit:
    def test_two_point_hand_moments(self):
        stats = gaussian_fit(np.array([[0.0, 0.0], [2.0, 0.0]]))
        np.testing.assert_allclose(stats.mu, [1.0, 0.0])
        np.testing.assert_allclose(stats.sigma, [[2.0, 0.0], [0.0, 0.0]])

    def test_identical_rows_zero_covariance(self):
        stats = gaussian_fit(np.tile([1.5, -2.0, 3.0], (7, 1)))
        np.testing.assert_allclose(stats.sigma, np.zeros((3, 3)), atol=1e-14)

    def test_matches_two_pass_moment_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(100, 4))
        stats = gaussian_fit(x)
        # independent two-pass oracle
        mu = np.array([x[:, j].sum() / len(x) for j in range(4)])
        sigma = np.zeros((4, 4))
        for row in x:
            d = row - mu
            sigma += np.outer(d, d)
        sigma /= len(x) - 1
        np.testing.assert_allclose(stats.mu, mu, atol=1e-10)
        np.testing.assert_allclose(stats.sigma, sigma, atol=1e-10)

    def test_rejects_single_sample(self):
        with pytest.raises(ValueError):
            gaussian_fit(np.zeros((1, 3)))


# ---------------------------------------------------------------------------
# frechet_distance
# ---------------------------------------------------------------------------


def _stats(mu, sigma):
    return GaussianStats(mu=np.asarray(mu, float), sigma=np.asarray(sigma, float), n=100)


class TestFrechetDistance:
    def test_identical_gaussians(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(5, 5))
        stats = _stats(rng.normal(size=5), a @ a.T)
        assert frechet_distance(stats, stats) == pytest.approx(0.0, abs=1e-9)

    def test_unit_1d_case(self):
        # N(0,1) vs N(1,1): (1)^2 + (1 + 1 - 2) = 1
        assert frechet_distance(_stats([0.0], [[1.0]]), _stats([1.0], [[1.0]])) == \
            pytest.approx(1.0, abs=1e-9)

    def test_commuting_diagonal_eigen_oracle(self):
        a = _stats([0.0, 0.0], np.diag([1.0, 4.0]))
        b = _stats([0.0, 0.0], np.diag([4.0, 1.0]))
        # commuting case: sum_i (sqrt(lam_i) - sqrt(mu_i))^2 = (1-2)^2 + (2-1)^2 = 2
        assert frechet_distance(a, b) == pytest.approx(2.0, abs=1e-9)

    def test_general_commuting_eigen_oracle(self):
        rng = np.random.default_rng(2)
        lam = rng.uniform(0.5, 3.0, size=6)
        mu_eig = rng.uniform(0.5, 3.0, size=6)
        dmu = rng.normal(size=6)
        expected = float(dmu @ dmu + np.sum((np.sqrt(lam) - np.sqrt(mu_eig)) ** 2))
        got = frechet_distance(_stats(dmu, np.diag(lam)), _stats(np.zeros(6), np.diag(mu_eig)))
        assert got == pytest.approx(expected, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(60, 4))
        y = rng.normal(size=(60, 4)) * 1.7 + 0.3
        a, b = gaussian_fit(x), gaussian_fit(y)
        assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-8)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            frechet_distance(_stats([0.0], [[1.0]]), _stats([0.0, 0.0], np.eye(2)))


# ---------------------------------------------------------------------------
# fid
# ---------------------------------------------------------------------------


class TestFid:
    def test_self_distance(self):
        rng = np.random.default_rng(4)
        images = rng.uniform(size=(120, 16, 16, 3))
        report = fid(images, images.copy(), MomentExtractor())
        assert report.fid <= 1e-6
        assert report.provenance["extractor_id"] == "test-moments"
        assert report.provenance["n_real"] == 120

    def test_separated_sets_positive(self):
        rng = np.random.default_rng(5)
        black = np.clip(rng.normal(0.05, 0.02, size=(50, 16, 16, 3)), 0, 1)
        white = np.clip(rng.normal(0.95, 0.02, size=(50, 16, 16, 3)), 0, 1)
        assert fid(black, white, MomentExtractor()).fid > 0.1

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            fid(np.zeros((0, 8, 8, 3)), np.zeros((4, 8, 8, 3)), MomentExtractor())


# ---------------------------------------------------------------------------
# ssim / mse
# ---------------------------------------------------------------------------


def _naive_ssim(x, y, size=11, sigma=1.5, k1=0.01, k2=0.03, rng_val=1.0):
    """Independent windowed-SSIM oracle: explicit loops over valid windows."""
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2 * sigma**2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = (k1 * rng_val) ** 2, (k2 * rng_val) ** 2
    h, wid = x.shape
    values = []
    for i in range(h - size + 1):
        for j in range(wid - size + 1):
            px = x[i : i + size, j : j + size]
            py = y[i : i + size, j : j + size]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * px * px).sum() - mx**2
            vy = (w * py * py).sum() - my**2
            cxy = (w * px * py).sum() - mx * my
            values.append(
                ((2 * mx * my + c1) * (2 * cxy + c2))
                / ((mx**2 + my**2 + c1) * (vx + vy + c2))
            )
    return float(np.mean(values))


class TestSsim:
    def test_identity(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(size=(16, 16, 3))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(size=(14, 14, 3))
        y = rng.uniform(size=(14, 14, 3))
        assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-12)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(size=(20, 18))
        y = np.clip(x + rng.normal(0, 0.08, size=x.shape), 0, 1)
        assert ssim(x, y) == pytest.approx(_naive_ssim(x, y), abs=1e-6)

    def test_bounded(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            x = rng.uniform(size=(12, 12))
            y = rng.uniform(size=(12, 12))
            assert -1.0 <= ssim(x, y) <= 1.0

    def test_identity_stable_under_shift(self):
        rng = np.random.default_rng(10)
        x = rng.uniform(0.0, 0.5, size=(16, 16))
        for c in (0.1, 0.3, 0.5):
            assert ssim(x + c, x + c) == pytest.approx(1.0, abs=1e-12)

    def test_contrast_structure_term_shift_invariant(self):
        # the cs component depends only on central moments, so a simultaneous
        # constant shift of both images must leave it unchanged
        rng = np.random.default_rng(11)
        x = rng.uniform(0.0, 0.5, size=(16, 16))
        y = rng.uniform(0.0, 0.5, size=(16, 16))
        _, cs0 = ssim_components(x, y)
        _, cs1 = ssim_components(x + 0.4, y + 0.4)
        np.testing.assert_allclose(cs0, cs1, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((12, 12)), np.zeros((13, 13)))


class TestMse:
    def test_identity(self):
        x = np.random.default_rng(12).uniform(size=(8, 8, 3))
        assert mse(x, x) == 0.0

    def test_full_range(self):
        assert mse(np.zeros((4, 4)), np.ones((4, 4))) == pytest.approx(65025.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(13)
        x = rng.uniform(size=(6, 5))
        y = rng.uniform(size=(6, 5))
        total = 0.0
        for i in range(6):
            for j in range(5):
                total += (255 * (x[i, j] - y[i, j])) ** 2
        assert mse(x, y) == pytest.approx(total / 30, rel=1e-12)


# ---------------------------------------------------------------------------
# cas
# ---------------------------------------------------------------------------


def _colored_squares(n, labels, rng):
    colors = np.array([[0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.9], [0.8, 0.8, 0.1]])
    images = np.clip(
        colors[labels][:, None, None, :] + rng.normal(0, 0.05, size=(n, 16, 16, 3)), 0, 1
    )
    return images


CLF_CONFIG = {"epochs": 16, "batch_size": 64, "drop_at": (8, 12), "width": 16, "seed": 0}


class TestCas:
    def test_separable_task_high_accuracy(self):
        rng = np.random.default_rng(14)
        y_train = rng.integers(0, 4, size=240)
        y_val = rng.integers(0, 4, size=120)
        report = cas(_colored_squares(240, y_train, rng), y_train,
                     _colored_squares(120, y_val, rng), y_val,
                     classifier_config=CLF_CONFIG)
        assert report.cas >= 0.95
        assert 0.0 <= report.cas <= 1.0

    def test_constant_predictor_matches_majority_counting_oracle(self):
        rng = np.random.default_rng(15)
        # all synthetic labels are class 2 -> classifier must predict 2 always
        y_train = np.full(160, 2)
        y_val = rng.integers(0, 4, size=200)
        report = cas(_colored_squares(160, y_train, rng), y_train,
                     _colored_squares(200, y_val, rng), y_val,
                     classifier_config=CLF_CONFIG)
        prior = np.mean(y_val == 2)  # counting oracle
        assert report.cas == pytest.approx(prior, abs=1e-12)

    def test_deterministic_at_fixed_seed(self):
        rng = np.random.default_rng(16)
        y_train = rng.integers(0, 4, size=120)
        y_val = rng.integers(0, 4, size=80)
        imgs_train = _colored_squares(120, y_train, rng)
        imgs_val = _colored_squares(80, y_val, rng)
        r1 = cas(imgs_train, y_train, imgs_val, y_val, classifier_config=CLF_CONFIG)
        r2 = cas(imgs_train, y_train, imgs_val, y_val, classifier_config=CLF_CONFIG)
        assert r1.cas == r2.cas

    def test_label_space_mismatch(self):
        rng = np.random.default_rng(17)
        y_train = np.zeros(40, dtype=int)
        y_val = rng.integers(0, 4, size=40)
        with pytest.raises(ValueError, match="label"):
            cas(_colored_squares(40, y_train, rng), y_train,
                _colored_squares(40, y_val, rng), y_val, n_classes=2)

    def test_label_count_mismatch(self):
        rng = np.random.default_rng(18)
        y = rng.integers(0, 4, size=40)
        with pytest.raises(ValueError, match="counts"):
            cas(_colored_squares(40, y, rng), y[:39], _colored_squares(40, y, rng), y)
