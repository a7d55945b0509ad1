"""Text- or class-conditioned latent diffusion estimator.

fit() freezes a trained VQ autoencoder, trains the denoiser (and, unless
frozen, the text encoder) on epsilon prediction with condition dropout, and
sample() runs the guided DDIM loop and decodes back to image space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator
from torch import nn

from .conditioning import NULL_CLASS_ID, BpeTokenizer, ClassEmbedder, TextEncoder
from .denoiser import CondUNet, load_init
from .sampling import SamplerConfig, ddim_timesteps, make_schedule, q_sample
from .sampling import sample as run_sampler
from .validation import check_fitted, check_image_batch

CONDITIONING_MODES = ("text", "class")


@dataclass(frozen=True)
class Context:
    """Embedded conditioning for a batch: (B, L, d) tensor plus key mask."""

    tensor: torch.Tensor
    mask: torch.Tensor

    def __post_init__(self):
        if self.tensor.shape[:2] != self.mask.shape:
            raise ValueError("context tensor and mask batch/length dims differ")


class LatentDiffusion(BaseEstimator):
    """Latent diffusion over a frozen VQ autoencoder with conditioning dropout.

    y passed to fit() is a list of caption strings (text mode) or an integer
    class-id array (class mode). Training follows epsilon prediction: sample a
    uniform timestep, noise the latent, drop the condition with probability
    p_uncond, and regress the injected noise under Adam with linear warmup.
    """

    def __init__(self, conditioning_mode="text", d_model=128, text_layers=2, text_heads=4,
                 vocab_size=2048, freeze_text_encoder=False, base_width=64, depth=3,
                 attention_stages=None, time_embed_dim=128, n_heads=4,
                 schedule_kind="linear", num_train_timesteps=1000, lr=2e-5,
                 warmup_steps=10000, batch_size=48, max_steps=2000, p_uncond=0.1,
                 init="scratch", seed=0):
        self.conditioning_mode = conditioning_mode
        self.d_model = d_model
        self.text_layers = text_layers
        self.text_heads = text_heads
        self.vocab_size = vocab_size
        self.freeze_text_encoder = freeze_text_encoder
        self.base_width = base_width
        self.depth = depth
        self.attention_stages = attention_stages
        self.time_embed_dim = time_embed_dim
        self.n_heads = n_heads
        self.schedule_kind = schedule_kind
        self.num_train_timesteps = num_train_timesteps
        self.lr = lr
        self.warmup_steps = warmup_steps
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.p_uncond = p_uncond
        self.init = init
        self.seed = seed

    # -- conditioning ------------------------------------------------------

    def _check_mode(self):
        if self.conditioning_mode not in CONDITIONING_MODES:
            raise ValueError(f"conditioning_mode must be one of {CONDITIONING_MODES}")
        if not 0.0 <= self.p_uncond < 1.0:
            raise ValueError(f"p_uncond must lie in [0, 1), got {self.p_uncond}")

    def encode_text(self, captions: list[str]) -> Context:
        """Tokenize, pad to the batch maximum, and run the text encoder."""
        check_fitted(self, "tokenizer_")
        seqs = [self.tokenizer_.tokenize(c) for c in captions]
        lengths = [len(s) for s in seqs]
        width = max(lengths + [0])
        ids = torch.zeros(len(seqs), width, dtype=torch.long)
        mask = torch.zeros(len(seqs), width, dtype=torch.bool)
        for i, seq in enumerate(seqs):
            ids[i, : len(seq)] = torch.tensor(seq.tokens, dtype=torch.long)
            mask[i, : len(seq)] = True
        hidden = self.text_encoder_(ids)
        return Context(tensor=hidden, mask=mask)

    def encode_class(self, class_ids) -> Context:
        ids = torch.as_tensor(np.asarray(class_ids, dtype=np.int64))
        hidden = self.class_embedder_(ids)[:, None, :]
        return Context(tensor=hidden, mask=torch.ones(len(ids), 1, dtype=torch.bool))

    def null_context(self, n: int) -> Context:
        """The classifier-free null condition for a batch of size n."""
        if self.conditioning_mode == "text":
            # encoding of the empty caption: zero tokens, so no attention keys
            return Context(tensor=torch.zeros(n, 0, self.d_model),
                           mask=torch.zeros(n, 0, dtype=torch.bool))
        return self.encode_class(np.full(n, NULL_CLASS_ID))

    def _context_for(self, y) -> Context:
        if self.conditioning_mode == "text":
            return self.encode_text(list(y))
        return self.encode_class(y)

    # -- training ----------------------------------------------------------

    def fit(self, X, y, vae=None, tokenizer=None):
        self._check_mode()
        if vae is None:
            raise ValueError("fit requires a trained VqVae via the vae argument")
        check_fitted(vae, "net_")
        X = check_image_batch(X, image_size=vae.image_size, name="X")
        if len(y) != len(X):
            raise ValueError("X and y lengths differ")
        self.vae_ = vae
        self.schedule_ = make_schedule(self.schedule_kind, self.num_train_timesteps)

        latents = vae.transform(X, quantized=False).astype(np.float32)
        self.latent_scale_ = float(1.0 / max(latents.std(), 1e-8))
        z0 = torch.from_numpy(latents.transpose(0, 3, 1, 2)) * self.latent_scale_

        torch.manual_seed(self.seed)
        trained_modules: list[nn.Module] = []
        if self.conditioning_mode == "text":
            self.tokenizer_ = tokenizer if tokenizer is not None else \
                BpeTokenizer(vocab_size=self.vocab_size).fit(list(y))
            self.text_encoder_ = TextEncoder(
                self.tokenizer_.effective_vocab_size, d_model=self.d_model,
                n_layers=self.text_layers, n_heads=self.text_heads,
            )
            self.class_embedder_ = None
            if self.freeze_text_encoder:
                self.text_encoder_.requires_grad_(False)
            else:
                trained_modules.append(self.text_encoder_)
            cond_raw = list(y)
        else:
            self.tokenizer_ = None
            self.text_encoder_ = None
            self.class_embedder_ = ClassEmbedder(d_model=self.d_model)
            trained_modules.append(self.class_embedder_)
            cond_raw = np.asarray(y, dtype=np.int64)
            if cond_raw.min() < 0 or cond_raw.max() > 3:
                raise ValueError("class ids must lie in 0..3")

        self.denoiser_ = CondUNet(
            latent_channels=vae.latent_channels, base_width=self.base_width,
            depth=self.depth, attention_stages=self.attention_stages,
            context_dim=self.d_model, time_embed_dim=self.time_embed_dim,
            n_heads=self.n_heads,
        )
        self.init_provenance_ = load_init(self.denoiser_, self.init, seed=self.seed)
        trained_modules.append(self.denoiser_)

        params = [p for m in trained_modules for p in m.parameters()]
        opt = torch.optim.Adam(params, lr=self.lr)
        gen = torch.Generator().manual_seed(self.seed)
        self.loss_curve_ = []
        for step in range(self.max_steps):
            lr_step = self.lr * min(1.0, (step + 1) / max(self.warmup_steps, 1))
            for group in opt.param_groups:
                group["lr"] = lr_step
            idx = torch.randint(0, len(z0), (min(self.batch_size, len(z0)),), generator=gen)
            t = torch.randint(1, self.schedule_.T + 1, (len(idx),), generator=gen)
            eps = torch.randn(z0[idx].shape, generator=gen)
            z_t = q_sample(z0[idx], t, eps, self.schedule_)

            drop = torch.rand(len(idx), generator=gen) < self.p_uncond
            if self.conditioning_mode == "text":
                ctx = self.encode_text([cond_raw[i] for i in idx.tolist()])
                mask = ctx.mask & ~drop[:, None]
                ctx = Context(tensor=ctx.tensor, mask=mask)
            else:
                ids = cond_raw[idx.numpy()].copy()
                ids[drop.numpy()] = NULL_CLASS_ID
                ctx = self.encode_class(ids)

            eps_hat = self.denoiser_(z_t, t, ctx.tensor, ctx.mask)
            loss = nn.functional.mse_loss(eps_hat, eps)
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_value = float(loss.detach())
            self.loss_curve_.append({"step": step, "loss": loss_value, "lr": lr_step})
            if not np.isfinite(loss_value):
                raise FloatingPointError(f"LDM loss diverged at step {step}: {loss_value}")
        self.step_ = self.max_steps
        self._eval_mode()
        return self

    def _eval_mode(self):
        for module in (self.denoiser_, self.text_encoder_, self.class_embedder_):
            if module is not None:
                module.eval()

    # -- inference ---------------------------------------------------------

    @torch.no_grad()
    def predict_eps(self, z_t, t, y=None):
        """Noise prediction for normalized latents (B, h, w, c); y as in fit, or None."""
        check_fitted(self, "denoiser_")
        z = torch.as_tensor(np.asarray(z_t, dtype=np.float32)).permute(0, 3, 1, 2)
        ctx = self.null_context(len(z)) if y is None else self._context_for(y)
        out = self.denoiser_(z, t, ctx.tensor, ctx.mask)
        return out.permute(0, 2, 3, 1).numpy()

    @torch.no_grad()
    def sample(self, y, num_steps=50, guidance_scale=1.75, eta=0.0, seed=0):
        """Generate one image per condition in y with guided DDIM sampling."""
        check_fitted(self, "denoiser_")
        ctx = self._context_for(y)
        n = ctx.tensor.shape[0]
        side = self.vae_.image_size // self.vae_.downsample_factor
        config = SamplerConfig(num_steps=num_steps, guidance_scale=guidance_scale,
                               eta=eta, seed=seed)
        null = self.null_context(n)

        def denoise_fn(z, t, cond: Context):
            return self.denoiser_(z, t, cond.tensor, cond.mask)

        def decode_fn(z):
            latents = (z / self.latent_scale_).permute(0, 2, 3, 1).numpy()
            return self.vae_.inverse_transform(latents)

        return run_sampler(
            denoise_fn, decode_fn, ctx, null, config, self.schedule_,
            (n, self.vae_.latent_channels, side, side),
        )

    def sampling_timesteps(self, num_steps=50) -> list[int]:
        check_fitted(self, "schedule_")
        return ddim_timesteps(self.schedule_.T, num_steps)

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        check_fitted(self, "denoiser_")
        payload = {
            "format": "ldmkit-ldm-v1",
            "params": self.get_params(),
            "denoiser": self.denoiser_.state_dict(),
            "text_encoder": None if self.text_encoder_ is None else self.text_encoder_.state_dict(),
            "class_embedder": None if self.class_embedder_ is None
            else self.class_embedder_.state_dict(),
            "merges": None if self.tokenizer_ is None else self.tokenizer_.merges_,
            "tokenizer_vocab_size": None if self.tokenizer_ is None else self.tokenizer_.vocab_size,
            "latent_scale": self.latent_scale_,
            "step": self.step_,
            "init_provenance": self.init_provenance_,
            "torch_rng": torch.get_rng_state(),
        }
        torch.save(payload, path)

    @classmethod
    def load(cls, path, vae) -> "LatentDiffusion":
        payload = torch.load(path, weights_only=False)
        if payload.get("format") != "ldmkit-ldm-v1":
            raise ValueError(f"{path} is not an LDM checkpoint")
        ldm = cls(**payload["params"])
        ldm._check_mode()
        check_fitted(vae, "net_")
        ldm.vae_ = vae
        ldm.schedule_ = make_schedule(ldm.schedule_kind, ldm.num_train_timesteps)
        ldm.latent_scale_ = payload["latent_scale"]
        ldm.step_ = payload["step"]
        ldm.init_provenance_ = payload["init_provenance"]
        if payload["merges"] is not None:
            ldm.tokenizer_ = BpeTokenizer.from_merges(
                payload["merges"], payload["tokenizer_vocab_size"]
            )
        else:
            ldm.tokenizer_ = None
        if payload["text_encoder"] is not None:
            ldm.text_encoder_ = TextEncoder(
                ldm.tokenizer_.effective_vocab_size, d_model=ldm.d_model,
                n_layers=ldm.text_layers, n_heads=ldm.text_heads,
            )
            ldm.text_encoder_.load_state_dict(payload["text_encoder"])
        else:
            ldm.text_encoder_ = None
        if payload["class_embedder"] is not None:
            ldm.class_embedder_ = ClassEmbedder(d_model=ldm.d_model)
            ldm.class_embedder_.load_state_dict(payload["class_embedder"])
        else:
            ldm.class_embedder_ = None
        ldm.denoiser_ = CondUNet(
            latent_channels=vae.latent_channels, base_width=ldm.base_width, depth=ldm.depth,
            attention_stages=ldm.attention_stages, context_dim=ldm.d_model,
            time_embed_dim=ldm.time_embed_dim, n_heads=ldm.n_heads,
        )
        ldm.denoiser_.load_state_dict(payload["denoiser"])
        ldm._eval_mode()
        return ldm
