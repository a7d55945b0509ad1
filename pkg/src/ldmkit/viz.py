"""Image-grid and sweep-plot emitters for run artifacts."""

from __future__ import annotations

import numpy as np
from PIL import Image


def save_image_grid(images, path, n_cols: int = 8, pad: int = 2) -> None:
    """Tile (N, H, W, 3) images in [0, 1] into one PNG grid."""
    images = np.asarray(images)
    n, h, w = images.shape[:3]
    n_cols = min(n_cols, n)
    n_rows = (n + n_cols - 1) // n_cols
    canvas = np.ones((n_rows * (h + pad) + pad, n_cols * (w + pad) + pad, 3))
    for i, img in enumerate(images):
        r, c = divmod(i, n_cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        canvas[y : y + h, x : x + w] = np.clip(img, 0, 1)
    Image.fromarray((canvas * 255).round().astype(np.uint8)).save(path)


def plot_guidance_sweep(scales, fids, path) -> None:
    """FID as a function of the guidance scale, written to an image file."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(list(scales), list(fids), marker="o")
    ax.set_xlabel("guidance scale")
    ax.set_ylabel("FID (toy extractor)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
