"""ldmkit: desk-scale text-conditioned latent diffusion for tiled images.

Estimator-style building blocks (VqVae, LatentDiffusion, PatchClassifier,
FeatureExtractor) plus functional kernels for diffusion math, metrics, data
plumbing and report summarization.
"""

from .conditioning import (
    BpeTokenizer,
    Caption,
    ClassEmbedder,
    ClassLabel,
    TextEncoder,
    TokenSequence,
    build_caption,
    class_label,
)
from .data import PatchRecord, SlideRecord, make_toy_corpus, split_by_slide, tile_image
from .denoiser import CondUNet, load_init
from .features import FeatureExtractor, PatchClassifier
from .metrics import GaussianStats, MetricReport, cas, fid, frechet_distance, gaussian_fit, mse, ssim
from .pipeline import LatentDiffusion
from .sampling import (
    NoiseSchedule,
    SamplerConfig,
    cfg_combine,
    ddim_step,
    ddim_timesteps,
    make_schedule,
    q_sample,
    sample,
)
from .summarize import (
    HttpChatTransport,
    MockTransport,
    SummaryRecord,
    TemplateTransport,
    assign_summary,
    summarize_multi,
    summarize_report,
)
from .vqvae import LatentTensor, ReconstructionReport, VqVae, quantize

__version__ = "0.1.0"

__all__ = [
    "BpeTokenizer", "Caption", "ClassEmbedder", "ClassLabel", "TextEncoder",
    "TokenSequence", "build_caption", "class_label",
    "PatchRecord", "SlideRecord", "make_toy_corpus", "split_by_slide", "tile_image",
    "CondUNet", "load_init",
    "FeatureExtractor", "PatchClassifier",
    "GaussianStats", "MetricReport", "cas", "fid", "frechet_distance",
    "gaussian_fit", "mse", "ssim",
    "LatentDiffusion",
    "NoiseSchedule", "SamplerConfig", "cfg_combine", "ddim_step", "ddim_timesteps",
    "make_schedule", "q_sample", "sample",
    "HttpChatTransport", "MockTransport", "SummaryRecord", "TemplateTransport",
    "assign_summary", "summarize_multi", "summarize_report",
    "LatentTensor", "ReconstructionReport", "VqVae", "quantize",
]
