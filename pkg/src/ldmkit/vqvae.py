"""Vector-quantized autoencoder with a configurable downsampling factor.

The estimator compresses (H, W, 3) images in [0, 1] to an (H/f, W/f, c) latent
grid, quantizes each latent vector to its nearest codebook entry, and decodes
back to image space (clamped to [0, 1]). The codebook is maintained with EMA
updates; the training loss is reconstruction MSE plus a weighted commitment
term. Gradients pass straight through the quantizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from torch import nn
from torch.nn import functional as F

from .validation import check_fitted, check_image_batch

ALLOWED_FACTORS = (4, 8)


@dataclass(frozen=True)
class LatentTensor:
    """A VAE-encoded image with its provenance downsample factor."""

    data: np.ndarray  # (h, w, c)
    f: int
    quantized: bool


@dataclass(frozen=True)
class ReconstructionReport:
    """Mean SSIM and mean MSE (0-255 scale) of a dataset round-trip."""

    ssim: float
    mse: float
    n_images: int
    config: dict

    def to_dict(self) -> dict:
        return {"ssim": self.ssim, "mse": self.mse, "n_images": self.n_images, "config": self.config}


def quantize(z, codebook):
    """Map each latent vector to its nearest codebook entry (Euclidean).

    z is (..., c), codebook is (K, c). Returns (z_q, indices, commitment_loss)
    where commitment_loss is mean ||z - sg(z_q)||^2. For torch inputs with
    gradients, z_q carries the straight-through estimator.
    """
    is_torch = torch.is_tensor(z)
    zt = z if is_torch else torch.from_numpy(np.asarray(z, dtype=np.float64))
    cb = codebook if torch.is_tensor(codebook) else torch.from_numpy(np.asarray(codebook, dtype=np.float64))
    if cb.ndim != 2 or cb.shape[0] == 0:
        raise ValueError(f"codebook must be a nonempty (K, c) table, got shape {tuple(cb.shape)}")
    cb = cb.to(zt.dtype)
    flat = zt.reshape(-1, zt.shape[-1])
    d = (
        flat.pow(2).sum(1, keepdim=True)
        - 2.0 * flat @ cb.t()
        + cb.pow(2).sum(1)
    )
    indices = d.argmin(dim=1)
    z_q = cb[indices].reshape(zt.shape)
    commitment = F.mse_loss(zt, z_q.detach())
    z_q = zt + (z_q - zt).detach()  # straight-through
    indices = indices.reshape(zt.shape[:-1])
    if not is_torch:
        return z_q.numpy(), indices.numpy(), float(commitment)
    return z_q, indices, commitment


class _EmaCodebook(nn.Module):
    """EMA-updated codebook, lazily initialised from the first training batch."""

    def __init__(self, codebook_size: int, dim: int, decay: float = 0.99, eps: float = 1e-5):
        super().__init__()
        self.decay = decay
        self.eps = eps
        self.register_buffer("entries", torch.zeros(codebook_size, dim))
        self.register_buffer("cluster_size", torch.zeros(codebook_size))
        self.register_buffer("ema_sum", torch.zeros(codebook_size, dim))
        self.register_buffer("initialized", torch.tensor(False))

    def maybe_init(self, flat: torch.Tensor, gen: torch.Generator):
        if bool(self.initialized):
            return
        k = self.entries.shape[0]
        idx = torch.randint(0, flat.shape[0], (k,), generator=gen)
        self.entries.copy_(flat[idx].detach())
        self.ema_sum.copy_(self.entries)
        self.cluster_size.fill_(1.0)
        self.initialized.fill_(True)

    @torch.no_grad()
    def update(self, flat: torch.Tensor, indices: torch.Tensor):
        onehot = F.one_hot(indices, self.entries.shape[0]).to(flat.dtype)
        counts = onehot.sum(0)
        sums = onehot.t() @ flat
        self.cluster_size.mul_(self.decay).add_(counts, alpha=1 - self.decay)
        self.ema_sum.mul_(self.decay).add_(sums, alpha=1 - self.decay)
        n = self.cluster_size.sum()
        weights = (self.cluster_size + self.eps) / (n + self.entries.shape[0] * self.eps) * n
        self.entries.copy_(self.ema_sum / weights.unsqueeze(1))


def _down_stage(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(cin, cout, 4, stride=2, padding=1), nn.SiLU(),
                         nn.Conv2d(cout, cout, 3, padding=1), nn.SiLU())


def _up_stage(cin: int, cout: int) -> nn.Sequential:
    # single conv per upsample keeps the full-resolution stages cheap
    return nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"),
                         nn.Conv2d(cin, cout, 3, padding=1), nn.SiLU())


class _VqNet(nn.Module):
    def __init__(self, f: int, latent_channels: int, codebook_size: int, base_width: int):
        super().__init__()
        n_stages = int(round(np.log2(f)))
        widths = [base_width * min(2**i, 4) for i in range(n_stages)]
        enc = [nn.Conv2d(3, widths[0], 3, padding=1), nn.SiLU()]
        for i in range(n_stages):
            enc.append(_down_stage(widths[max(i - 1, 0)] if i else widths[0], widths[i]))
        enc += [nn.Conv2d(widths[-1], widths[-1], 3, padding=1), nn.SiLU(),
                nn.Conv2d(widths[-1], latent_channels, 1)]
        self.encoder = nn.Sequential(*enc)
        dec = [nn.Conv2d(latent_channels, widths[-1], 3, padding=1), nn.SiLU(),
               nn.Conv2d(widths[-1], widths[-1], 3, padding=1), nn.SiLU()]
        for i in reversed(range(n_stages)):
            dec.append(_up_stage(widths[i], widths[max(i - 1, 0)]))
        dec.append(nn.Conv2d(widths[0], 3, 3, padding=1))
        self.decoder = nn.Sequential(*dec)
        self.codebook = _EmaCodebook(codebook_size, latent_channels)


class VqVae(TransformerMixin, BaseEstimator):
    """VQ autoencoder estimator: fit on images, transform to latents and back.

    Latent geometry is (image_size/f, image_size/f, latent_channels); f is
    restricted to 4 or 8, the two factors under comparison.
    """

    def __init__(self, downsample_factor=4, latent_channels=3, codebook_size=512,
                 base_width=64, image_size=32, steps=800, batch_size=64, lr=2e-3,
                 commitment_weight=0.25, seed=0):
        self.downsample_factor = downsample_factor
        self.latent_channels = latent_channels
        self.codebook_size = codebook_size
        self.base_width = base_width
        self.image_size = image_size
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.commitment_weight = commitment_weight
        self.seed = seed

    # -- geometry ----------------------------------------------------------

    def _check_config(self):
        if self.downsample_factor not in ALLOWED_FACTORS:
            raise ValueError(f"downsample_factor must be one of {ALLOWED_FACTORS}")
        if self.image_size % self.downsample_factor != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by f={self.downsample_factor}"
            )

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        side = self.image_size // self.downsample_factor
        return (side, side, self.latent_channels)

    def _build(self):
        self._check_config()
        torch.manual_seed(self.seed)
        self.net_ = _VqNet(self.downsample_factor, self.latent_channels,
                           self.codebook_size, self.base_width)

    def initialize(self) -> "VqVae":
        """Build the (untrained) network so encode/decode geometry is usable."""
        self._build()
        self.net_.eval()
        self.loss_curve_ = []
        return self

    # -- training ----------------------------------------------------------

    def fit(self, X, y=None):
        X = check_image_batch(X, image_size=self.image_size, name="X")
        self._build()
        x = torch.from_numpy(np.ascontiguousarray(X.transpose(0, 3, 1, 2))).float() * 2 - 1
        opt = torch.optim.Adam(self.net_.parameters(), lr=self.lr)
        gen = torch.Generator().manual_seed(self.seed)
        self.loss_curve_ = []
        for step in range(self.steps):
            idx = torch.randint(0, len(x), (min(self.batch_size, len(x)),), generator=gen)
            batch = x[idx]
            z = self.net_.encoder(batch)
            flat = z.permute(0, 2, 3, 1).reshape(-1, self.latent_channels)
            self.net_.codebook.maybe_init(flat, gen)
            z_grid = z.permute(0, 2, 3, 1)
            z_q, indices, commitment = quantize(z_grid, self.net_.codebook.entries)
            recon = self.net_.decoder(z_q.permute(0, 3, 1, 2))
            recon_mse = F.mse_loss((recon + 1) / 2, (batch + 1) / 2)
            loss = recon_mse + self.commitment_weight * commitment
            opt.zero_grad()
            loss.backward()
            opt.step()
            self.net_.codebook.update(flat.detach(), indices.reshape(-1))
            entry = {"step": step, "loss": float(loss.detach()),
                     "recon_mse": float(recon_mse.detach()),
                     "commitment": float(commitment.detach())}
            self.loss_curve_.append(entry)
            if not np.isfinite(entry["loss"]):
                raise FloatingPointError(f"VQ-VAE loss diverged at step {step}: {entry['loss']}")
        self.net_.eval()
        return self

    # -- inference ---------------------------------------------------------

    @torch.no_grad()
    def transform(self, X, quantized: bool = True) -> np.ndarray:
        """Encode an image batch to (N, h, w, c) latents."""
        check_fitted(self, "net_")
        X = check_image_batch(X, image_size=self.image_size, name="X")
        x = torch.from_numpy(np.ascontiguousarray(X.transpose(0, 3, 1, 2))).float() * 2 - 1
        out = []
        for start in range(0, len(x), 256):
            z = self.net_.encoder(x[start : start + 256]).permute(0, 2, 3, 1)
            if quantized:
                z, _, _ = quantize(z, self.net_.codebook.entries)
            out.append(z.numpy())
        return np.concatenate(out, axis=0)

    @torch.no_grad()
    def inverse_transform(self, Z) -> np.ndarray:
        """Decode (N, h, w, c) latents to images in [0, 1]; quantizes first."""
        check_fitted(self, "net_")
        z = torch.as_tensor(np.asarray(Z, dtype=np.float32))
        if z.ndim == 3:
            z = z[None]
        side = self.image_size // self.downsample_factor
        if tuple(z.shape[1:]) != (side, side, self.latent_channels):
            raise ValueError(
                f"latent geometry {tuple(z.shape[1:])} does not match "
                f"(h, w, c) = {(side, side, self.latent_channels)}"
            )
        out = []
        for start in range(0, len(z), 256):
            z_q, _, _ = quantize(z[start : start + 256], self.net_.codebook.entries)
            recon = self.net_.decoder(z_q.permute(0, 3, 1, 2))
            out.append(((recon.permute(0, 2, 3, 1).numpy() + 1) / 2).clip(0.0, 1.0))
        return np.concatenate(out, axis=0).astype(np.float64)

    def encode(self, image, quantized: bool = True) -> LatentTensor:
        """Encode a single (H, W, 3) image to a LatentTensor."""
        data = self.transform(np.asarray(image)[None], quantized=quantized)[0]
        return LatentTensor(data=data, f=self.downsample_factor, quantized=quantized)

    def decode(self, latent: LatentTensor | np.ndarray) -> np.ndarray:
        """Decode one latent back to an (H, W, 3) image in [0, 1]."""
        data = latent.data if isinstance(latent, LatentTensor) else np.asarray(latent)
        return self.inverse_transform(data[None])[0]

    def reconstruct(self, X) -> np.ndarray:
        return self.inverse_transform(self.transform(X, quantized=True))

    def reconstruction_report(self, X) -> ReconstructionReport:
        """Mean SSIM / mean MSE (0-255 scale) of encode-decode round trips."""
        from .metrics import mse, ssim

        X = check_image_batch(X, image_size=self.image_size, name="X")
        if len(X) == 0:
            raise ValueError("dataset must be nonempty")
        recon = self.reconstruct(X)
        ssims = [ssim(X[i], recon[i]) for i in range(len(X))]
        mses = [mse(X[i], recon[i]) for i in range(len(X))]
        return ReconstructionReport(
            ssim=float(np.mean(ssims)), mse=float(np.mean(mses)),
            n_images=len(X), config=self.get_params(),
        )

    @property
    def codebook_(self) -> np.ndarray:
        check_fitted(self, "net_")
        return self.net_.codebook.entries.numpy().copy()

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        check_fitted(self, "net_")
        torch.save(
            {"format": "ldmkit-vqvae-v1", "params": self.get_params(),
             "state_dict": self.net_.state_dict()},
            path,
        )

    @classmethod
    def load(cls, path) -> "VqVae":
        payload = torch.load(path, weights_only=False)
        if payload.get("format") != "ldmkit-vqvae-v1":
            raise ValueError(f"{path} is not a VQ-VAE checkpoint")
        vae = cls(**payload["params"])
        vae._build()
        vae.net_.load_state_dict(payload["state_dict"])
        vae.net_.eval()
        return vae
