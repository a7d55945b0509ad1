"""Small convolutional classifier and the frozen feature extractor backing toy FID.

Both follow the sklearn estimator API so they compose with the metric kernels
and with standard model-selection tooling.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from torch import nn

from .validation import check_fitted, check_image_batch


class _ConvNet(nn.Module):
    """Three stride-2 conv stages, global average pool, one linear head per task."""

    def __init__(self, width: int, feature_dim: int, head_sizes: list[int]):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, width, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(2 * width, feature_dim, 3, stride=2, padding=1),
            nn.SiLU(),
        )
        self.heads = nn.ModuleList([nn.Linear(feature_dim, n) for n in head_sizes])

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x).mean(dim=(2, 3))

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = self.features(x)
        return [head(feats) for head in self.heads]


def _to_tensor(images: np.ndarray) -> torch.Tensor:
    # (N, H, W, C) in [0, 1] -> (N, C, H, W) float32
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))).float()


def _staged_lr(epoch: int, base_lr: float, drop_epochs: tuple[int, int]) -> float:
    lr = base_lr
    if epoch >= drop_epochs[0]:
        lr *= 0.1
    if epoch >= drop_epochs[1]:
        lr *= 0.1
    return lr


def _train_heads(net, images, label_columns, epochs, batch_size, lr, drop_epochs, seed):
    """Adam training with the staged learning-rate schedule; returns loss curve."""
    x = _to_tensor(images)
    ys = [torch.from_numpy(np.asarray(col, dtype=np.int64)) for col in label_columns]
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss()
    gen = torch.Generator().manual_seed(seed)
    curve = []
    for epoch in range(epochs):
        for group in opt.param_groups:
            group["lr"] = _staged_lr(epoch, lr, drop_epochs)
        order = torch.randperm(len(x), generator=gen)
        for start in range(0, len(x), batch_size):
            idx = order[start : start + batch_size]
            logits = net(x[idx])
            loss = sum(loss_fn(l, y[idx]) for l, y in zip(logits, ys))
            opt.zero_grad()
            loss.backward()
            opt.step()
            curve.append(float(loss.detach()))
        if not np.isfinite(curve[-1]):
            raise FloatingPointError(f"classifier loss diverged at epoch {epoch}")
    return curve


class PatchClassifier(ClassifierMixin, BaseEstimator):
    """Small conv net trained with the staged LR recipe (base lr, /10 at the two drops).

    Defaults scale the 40-epoch reference recipe (drops at epochs 20 and 30,
    batch 256) down to a desk-size budget with the same drop fractions.
    """

    def __init__(self, width=32, feature_dim=64, epochs=8, batch_size=256, lr=1e-3,
                 drop_at=(4, 6), seed=0):
        self.width = width
        self.feature_dim = feature_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.drop_at = drop_at
        self.seed = seed

    def fit(self, X, y, classes=None):
        """classes fixes the label space explicitly; defaults to unique(y)."""
        X = check_image_batch(X, name="X")
        y = np.asarray(y, dtype=np.int64)
        if len(y) != len(X):
            raise ValueError("X and y lengths differ")
        self.classes_ = np.unique(y) if classes is None else np.asarray(sorted(classes))
        if not set(np.unique(y)) <= set(self.classes_):
            raise ValueError("y contains labels outside the declared class space")
        torch.manual_seed(self.seed)
        self.net_ = _ConvNet(self.width, self.feature_dim, [len(self.classes_)])
        self.loss_curve_ = _train_heads(
            self.net_, X, [np.searchsorted(self.classes_, y)],
            self.epochs, self.batch_size, self.lr, tuple(self.drop_at), self.seed,
        )
        self.net_.eval()
        return self

    @torch.no_grad()
    def predict(self, X):
        check_fitted(self, "net_")
        X = check_image_batch(X, name="X")
        out = []
        for start in range(0, len(X), 512):
            logits = self.net_(_to_tensor(X[start : start + 512]))[0]
            out.append(logits.argmax(dim=1).numpy())
        return self.classes_[np.concatenate(out)]


class FeatureExtractor(BaseEstimator):
    """Frozen penultimate-layer features of a conv net trained on the real corpus.

    fit() takes class labels and optionally a second style-label column
    (stacked as y of shape (N, 2)); the joint objective keeps the features
    sensitive to both local structure and global appearance. Calling the fitted
    extractor on an image batch returns (N, feature_dim) float64 features.
    """

    def __init__(self, width=32, feature_dim=64, epochs=6, batch_size=256, lr=1e-3,
                 drop_at=(3, 5), seed=0):
        self.width = width
        self.feature_dim = feature_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.drop_at = drop_at
        self.seed = seed

    def fit(self, X, y):
        X = check_image_batch(X, name="X")
        y = np.asarray(y, dtype=np.int64)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or len(y) != len(X):
            raise ValueError("y must be (N,) class labels or (N, k) label columns")
        columns = [y[:, j] for j in range(y.shape[1])]
        head_sizes = [int(col.max()) + 1 for col in columns]
        torch.manual_seed(self.seed)
        self.net_ = _ConvNet(self.width, self.feature_dim, head_sizes)
        self.loss_curve_ = _train_heads(
            self.net_, X, columns, self.epochs, self.batch_size, self.lr,
            tuple(self.drop_at), self.seed,
        )
        self.net_.eval()
        return self

    @property
    def extractor_id(self) -> str:
        return f"toy-convnet-f{self.feature_dim}-seed{self.seed}"

    @torch.no_grad()
    def transform(self, X) -> np.ndarray:
        check_fitted(self, "net_")
        X = check_image_batch(X, name="X")
        out = []
        for start in range(0, len(X), 512):
            feats = self.net_.features(_to_tensor(X[start : start + 512]))
            out.append(feats.double().numpy())
        return np.concatenate(out, axis=0)

    def __call__(self, X) -> np.ndarray:
        return self.transform(X)

    def save(self, path):
        check_fitted(self, "net_")
        torch.save(
            {"format": "ldmkit-feature-extractor-v1", "params": self.get_params(),
             "head_sizes": [h.out_features for h in self.net_.heads],
             "state_dict": self.net_.state_dict()},
            path,
        )

    @classmethod
    def load(cls, path) -> "FeatureExtractor":
        payload = torch.load(path, weights_only=False)
        if payload.get("format") != "ldmkit-feature-extractor-v1":
            raise ValueError(f"{path} is not a feature-extractor checkpoint")
        extractor = cls(**payload["params"])
        extractor.net_ = _ConvNet(extractor.width, extractor.feature_dim, payload["head_sizes"])
        extractor.net_.load_state_dict(payload["state_dict"])
        extractor.net_.eval()
        return extractor
