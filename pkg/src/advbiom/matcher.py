"""Embedding matchers: the frozen embedder abstraction used by every attack,
the feature-matching loss, and a small trainable embedder that stands in for
a production face/fingerprint network at desk scale.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
from sklearn.base import BaseEstimator

from . import checkpoint as ckpt
from .core import check_image_batch, cosine_similarity, derive_seed, to_nchw, to_nhwc


class EmbedderNet(nn.Module):
    """Strided conv blocks -> global average pool -> projection -> L2 norm."""

    def __init__(
        self,
        in_channels: int = 3,
        embedding_dim: int = 64,
        base_channels: int = 16,
        n_blocks: int = 4,
    ):
        super().__init__()
        c = base_channels
        layers = [nn.Conv2d(in_channels, c, 4, stride=2, padding=1), nn.ReLU(inplace=True)]
        width = c
        for _ in range(n_blocks - 1):
            layers += [
                nn.Conv2d(width, 2 * width, 4, stride=2, padding=1),
                nn.BatchNorm2d(2 * width),
                nn.ReLU(inplace=True),
            ]
            width *= 2
        self.features = nn.Sequential(*layers)
        self.project = nn.Linear(width, embedding_dim)
        self.embedding_dim = embedding_dim
        self.in_channels = in_channels
        self.base_channels = base_channels
        self.n_blocks = n_blocks

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.features(x)
        h = h.mean(dim=(2, 3))
        h = self.project(h)
        return h / h.norm(dim=1, keepdim=True).clamp_min(1e-12)


class Matcher:
    """A frozen embedder with cosine scoring.

    Embeddings are unit-norm and deterministic in inference mode; gradients
    can still flow through :meth:`embed_tensor` for white-box attacks.
    """

    def __init__(self, net: EmbedderNet, image_shape, name: str = "matcher"):
        self.net = net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.image_shape = tuple(image_shape)  # (H, W, C)
        self.name = name

    @property
    def embedding_dim(self) -> int:
        return self.net.embedding_dim

    @property
    def dtype(self) -> torch.dtype:
        return next(self.net.parameters()).dtype

    def _check_shape(self, batch: np.ndarray) -> None:
        if tuple(batch.shape[1:]) != self.image_shape:
            raise ValueError(
                f"matcher {self.name!r} expects images of shape {self.image_shape}, got {tuple(batch.shape[1:])}"
            )

    def embed_tensor(self, x: torch.Tensor) -> torch.Tensor:
        """Differentiable embedding of an (N, C, H, W) tensor."""
        if x.dim() != 4:
            raise ValueError(f"expected NCHW tensor, got shape {tuple(x.shape)}")
        if (x.shape[1], x.shape[2], x.shape[3]) != (
            self.image_shape[2],
            self.image_shape[0],
            self.image_shape[1],
        ):
            raise ValueError(
                f"matcher {self.name!r} expects {self.image_shape} images, got NCHW {tuple(x.shape)}"
            )
        return self.net(x.to(self.dtype))

    def embed_batch(self, batch: np.ndarray) -> np.ndarray:
        batch = check_image_batch(batch)
        self._check_shape(batch)
        with torch.no_grad():
            emb = self.embed_tensor(to_nchw(batch, dtype=self.dtype))
        return emb.cpu().numpy()

    def embed(self, image: np.ndarray) -> np.ndarray:
        return self.embed_batch(np.asarray(image)[None])[0]

    def score(self, image_a: np.ndarray, image_b: np.ndarray) -> float:
        return cosine_similarity(self.embed(image_a), self.embed(image_b))

    def score_batch(self, batch_a: np.ndarray, batch_b: np.ndarray) -> np.ndarray:
        ea = self.embed_batch(batch_a)
        eb = self.embed_batch(batch_b)
        return np.sum(ea * eb, axis=1)

    def to_double(self) -> "Matcher":
        """Float64 copy for finite-difference gradient checks."""
        net = EmbedderNet(
            self.net.in_channels, self.net.embedding_dim, self.net.base_channels, self.net.n_blocks
        )
        net.load_state_dict(self.net.state_dict())
        return Matcher(net.double(), self.image_shape, name=self.name + "_f64")

    def save(self, path) -> None:
        header = {
            "kind": "matcher",
            "architecture": "embedder_conv4",
            "name": self.name,
            "embedding_dim": self.net.embedding_dim,
            "in_channels": self.net.in_channels,
            "base_channels": self.net.base_channels,
            "n_blocks": self.net.n_blocks,
            "image_shape": list(self.image_shape),
            "normalization": {"subtract": 127.5, "divide": 128.0},
        }
        ckpt.save_checkpoint(path, header, ckpt.module_to_arrays(self.net, "net"))

    @classmethod
    def load(cls, path) -> "Matcher":
        header, arrays = ckpt.load_checkpoint(path)
        if header.get("kind") != "matcher":
            raise ValueError(f"not a matcher checkpoint: {path}")
        net = EmbedderNet(
            header["in_channels"],
            header["embedding_dim"],
            header["base_channels"],
            header.get("n_blocks", 4),
        )
        ckpt.module_from_arrays(net, arrays, "net")
        return cls(net, header["image_shape"], name=header["name"])


# ---------------------------------------------------------------------------
# losses


def feature_match_loss_t(matcher: Matcher, x: torch.Tensor, x_adv: torch.Tensor) -> torch.Tensor:
    """1 - mean cosine between embeddings of aligned batches (torch path)."""
    if x.shape != x_adv.shape:
        raise ValueError("batches must be aligned")
    if x.shape[0] == 0:
        raise ValueError("batch is empty")
    ea = matcher.embed_tensor(x)
    eb = matcher.embed_tensor(x_adv)
    return 1.0 - (ea * eb).sum(dim=1).mean()


def feature_match_loss(matcher: Matcher, x_batch: np.ndarray, x_adv_batch: np.ndarray) -> float:
    x_batch = check_image_batch(x_batch)
    x_adv_batch = check_image_batch(x_adv_batch)
    if x_batch.shape != x_adv_batch.shape:
        raise ValueError("batches must be aligned")
    with torch.no_grad():
        loss = feature_match_loss_t(
            matcher, to_nchw(x_batch, dtype=matcher.dtype), to_nchw(x_adv_batch, dtype=matcher.dtype)
        )
    return float(loss)


def loss_gradient(matcher: Matcher, loss_fn, x: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss with respect to the input image pixels.

    ``loss_fn(matcher, x_tensor)`` must return a scalar torch tensor built
    from differentiable ops.
    """
    x = np.asarray(x)
    batch = x[None] if x.ndim == 3 else x
    t = to_nchw(batch, dtype=matcher.dtype).requires_grad_(True)
    loss = loss_fn(matcher, t)
    if not torch.isfinite(loss):
        raise FloatingPointError("loss is non-finite")
    (grad,) = torch.autograd.grad(loss, t)
    if not torch.isfinite(grad).all():
        raise FloatingPointError("gradient contains non-finite values")
    out = to_nhwc(grad)
    return out[0] if x.ndim == 3 else out


# ---------------------------------------------------------------------------
# toy matcher training


class _ClassifierHead(nn.Module):
    def __init__(self, embedder: EmbedderNet, n_classes: int):
        super().__init__()
        self.embedder = embedder
        self.head = nn.Linear(embedder.embedding_dim, n_classes)

    def forward(self, x):
        return self.head(self.embedder(x))


class ToyMatcherTrainer(BaseEstimator):
    """Trains a small identity-classification embedder, then drops the head.

    Follows the estimator protocol: hyperparameters in ``__init__``, learned
    state on ``fit`` in trailing-underscore attributes, ``transform`` maps
    images to embeddings.
    """

    def __init__(
        self,
        embedding_dim: int = 64,
        base_channels: int = 16,
        steps: int = 1500,
        batch_size: int = 32,
        learning_rate: float = 1e-3,
        seed: int = 0,
        name: str = "toy",
    ):
        self.embedding_dim = embedding_dim
        self.base_channels = base_channels
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.name = name

    def fit(self, X, y):
        X = check_image_batch(np.asarray(X))
        y = list(y)
        if len(y) != X.shape[0]:
            raise ValueError("labels must align with images")
        classes = sorted(set(y))
        counts = {c: y.count(c) for c in classes}
        if len(classes) < 2 or min(counts.values()) < 4:
            raise ValueError("need at least 2 identities with at least 4 images each")

        torch.manual_seed(derive_seed(self.seed, "matcher.init"))
        rng = np.random.default_rng(derive_seed(self.seed, "matcher.batches"))
        label_idx = {c: i for i, c in enumerate(classes)}
        targets = torch.tensor([label_idx[v] for v in y], dtype=torch.long)
        images = to_nchw(X)

        embedder = EmbedderNet(X.shape[3], self.embedding_dim, self.base_channels)
        model = _ClassifierHead(embedder, len(classes)).train()
        opt = torch.optim.Adam(model.parameters(), lr=self.learning_rate)
        loss_fn = nn.CrossEntropyLoss()

        trace = []
        n = X.shape[0]
        for _ in range(self.steps):
            idx = rng.choice(n, size=min(self.batch_size, n), replace=False)
            batch = images[idx]
            opt.zero_grad()
            logits = model(batch)
            loss = loss_fn(logits, targets[idx])
            loss.backward()
            opt.step()
            trace.append(float(loss.detach()))

        self.classes_ = classes
        self.loss_trace_ = trace
        self.matcher_ = Matcher(embedder, X.shape[1:], name=self.name)
        return self

    def transform(self, X):
        return self.matcher_.embed_batch(np.asarray(X))


def train_toy_matcher(images, labels, **params) -> Matcher:
    """Convenience wrapper returning the trained frozen matcher."""
    return ToyMatcherTrainer(**params).fit(images, labels).matcher_
