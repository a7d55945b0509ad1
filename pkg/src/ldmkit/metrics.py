"""Evaluation kernels: Frechet distance / FID, SSIM, MSE and the
train-on-synthetic classification accuracy harness.

Images are (N, H, W, C) float arrays in [0, 1] unless noted. MSE is reported on
the 0-255 scale so the magnitudes stay commensurate with common 8-bit reporting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .validation import check_image_batch, check_same_shape

FID_CLAMP_TOL = -1e-6
_EIG_JITTER = 1e-10


@dataclass(frozen=True)
class GaussianStats:
    """Sample mean and covariance of a feature matrix."""

    mu: np.ndarray
    sigma: np.ndarray
    n: int


@dataclass
class MetricReport:
    """One evaluation result plus the configuration that produced it."""

    fid: float | None = None
    ssim: float | None = None
    mse: float | None = None
    cas: float | None = None
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)


def gaussian_fit(features: np.ndarray) -> GaussianStats:
    """Fit mean and (n-1)-denominator covariance to (n, d) features."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (n, d) feature matrix, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 samples to fit a Gaussian, got {n}")
    mu = x.mean(axis=0)
    centered = x - mu
    sigma = centered.T @ centered / (n - 1)
    sigma = (sigma + sigma.T) / 2.0
    return GaussianStats(mu=mu, sigma=sigma, n=n)


def _psd_sqrt(sigma: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(sigma)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def _sqrt_product_trace(sigma_a: np.ndarray, sigma_b: np.ndarray) -> float:
    """trace((sigma_a sigma_b)^{1/2}) via the symmetric form a^{1/2} b a^{1/2}."""
    root_a = _psd_sqrt(sigma_a)
    inner = root_a @ sigma_b @ root_a
    inner = (inner + inner.T) / 2.0
    w = np.linalg.eigvalsh(inner)
    if w.min() < FID_CLAMP_TOL:
        raise FloatingPointError(
            f"matrix square root failed: eigenvalue {w.min():.3e} below tolerance"
        )
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Frechet distance between two Gaussians, clamped at 0 from below."""
    if a.mu.shape != b.mu.shape:
        raise ValueError(f"dimension mismatch: {a.mu.shape} vs {b.mu.shape}")
    try:
        cross = _sqrt_product_trace(a.sigma, b.sigma)
    except FloatingPointError:
        d = a.sigma.shape[0]
        jitter = _EIG_JITTER * np.eye(d)
        cross = _sqrt_product_trace(a.sigma + jitter, b.sigma + jitter)
    diff = a.mu - b.mu
    value = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * cross)
    if value < FID_CLAMP_TOL:
        raise FloatingPointError(f"frechet distance {value:.3e} below clamp tolerance")
    return max(value, 0.0)


def fid(real_images, fake_images, extractor) -> MetricReport:
    """FID between two image sets under a feature extractor.

    `extractor` maps an (N, H, W, C) batch to (N, d) features and should expose
    an `extractor_id` attribute for provenance.
    """
    real = check_image_batch(real_images, name="real_images")
    fake = check_image_batch(fake_images, name="fake_images")
    if real.shape[0] == 0 or fake.shape[0] == 0:
        raise ValueError("both image sets must be nonempty")
    stats_real = gaussian_fit(np.asarray(extractor(real), dtype=np.float64))
    stats_fake = gaussian_fit(np.asarray(extractor(fake), dtype=np.float64))
    value = frechet_distance(stats_real, stats_fake)
    return MetricReport(
        fid=value,
        provenance={
            "extractor_id": getattr(extractor, "extractor_id", extractor.__class__.__name__),
            "n_real": int(real.shape[0]),
            "n_fake": int(fake.shape[0]),
        },
    )


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    w = np.exp(-(x**2) / (2.0 * sigma**2))
    w /= w.sum()
    return w


def _window_means(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid-mode Gaussian-weighted local means over a 2-D image."""
    k = len(w)
    windows = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("ijkl,kl->ij", windows, np.outer(w, w))


def ssim_components(x: np.ndarray, y: np.ndarray, window_size: int = 11, sigma: float = 1.5,
                    k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0):
    """Per-window luminance and contrast-structure maps for one channel pair."""
    w = _gaussian_window(window_size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_x = _window_means(x, w)
    mu_y = _window_means(y, w)
    mu_xx = _window_means(x * x, w)
    mu_yy = _window_means(y * y, w)
    mu_xy = _window_means(x * y, w)
    var_x = mu_xx - mu_x**2
    var_y = mu_yy - mu_y**2
    cov_xy = mu_xy - mu_x * mu_y
    luminance = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    cs = (2 * cov_xy + c2) / (var_x + var_y + c2)
    return luminance, cs


def ssim(x, y) -> float:
    """Mean windowed SSIM (Gaussian window 11, sigma 1.5, K1=.01, K2=.03, range 1).

    Inputs are images in [0, 1]; channels are averaged. Windows are valid-mode,
    so images must be at least 11 pixels on each side.
    """
    x, y = check_same_shape(x, y)
    if x.ndim == 2:
        x = x[..., None]
        y = y[..., None]
    if x.ndim != 3:
        raise ValueError(f"expected (H, W) or (H, W, C) images, got shape {x.shape}")
    if min(x.shape[0], x.shape[1]) < 11:
        raise ValueError("images must be at least 11x11 for the SSIM window")
    values = []
    for c in range(x.shape[2]):
        luminance, cs = ssim_components(x[..., c], y[..., c])
        values.append(float((luminance * cs).mean()))
    return float(np.mean(values))


def mse(x, y) -> float:
    """Mean squared error on the 0-255 scale for [0, 1] inputs."""
    x, y = check_same_shape(x, y)
    return float(np.mean((255.0 * (x - y)) ** 2))


def cas(synthetic_train, synthetic_labels, real_val, real_labels, classifier_config=None,
        n_classes=None) -> MetricReport:
    """Classification accuracy score: train on synthetic, evaluate on real.

    Labels of the synthetic set are the class conditions that generated the
    images. The label space is 0..n_classes-1 (inferred from both sets when not
    given); a set containing labels outside it is rejected. Returns top-1
    accuracy on the real validation set.
    """
    from .features import PatchClassifier

    synthetic_train = check_image_batch(synthetic_train, name="synthetic_train")
    real_val = check_image_batch(real_val, name="real_val")
    synthetic_labels = np.asarray(synthetic_labels, dtype=np.int64)
    real_labels = np.asarray(real_labels, dtype=np.int64)
    if len(synthetic_train) == 0 or len(real_val) == 0:
        raise ValueError("both synthetic and real sets must be nonempty")
    if len(synthetic_labels) != len(synthetic_train) or len(real_labels) != len(real_val):
        raise ValueError("label counts must match image counts")
    observed = int(max(synthetic_labels.max(), real_labels.max())) + 1
    if min(synthetic_labels.min(), real_labels.min()) < 0:
        raise ValueError("labels must be nonnegative integers")
    if n_classes is None:
        n_classes = observed
    elif observed > n_classes:
        raise ValueError(f"label spaces differ: saw label {observed - 1} "
                         f"outside 0..{n_classes - 1}")

    clf = PatchClassifier(**(classifier_config or {}))
    clf.fit(synthetic_train, synthetic_labels, classes=range(n_classes))
    accuracy = float(np.mean(clf.predict(real_val) == real_labels))
    return MetricReport(
        cas=accuracy,
        provenance={
            "n_synthetic": int(len(synthetic_train)),
            "n_real_val": int(len(real_val)),
            "classifier": clf.get_params(),
        },
    )
