"""Minutiae heat maps: rendering ground truth, peak detection with
quadratic orientation interpolation, and the trainable convolutional
extractor that produces maps from fingerprint images.

A minutiae map is an (H, W, 12) non-negative array; channel k carries the
contribution of minutiae oriented near k*pi/6.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from scipy.ndimage import maximum_filter
from sklearn.base import BaseEstimator

from .. import checkpoint as ckpt
from ..core import derive_seed, to_nchw

N_CHANNELS = 12
CHANNEL_STEP = np.pi / 6.0
DETECTION_THRESHOLD = 0.2
SPLAT_SIGMA = 2.0


@dataclass(frozen=True)
class MinutiaPoint:
    i: float  # row, pixels
    j: float  # col, pixels
    theta: float  # orientation, radians in [0, 2pi)
    strength: float = 1.0

    def to_dict(self) -> dict:
        return {"i": float(self.i), "j": float(self.j), "theta": float(self.theta)}


ANGULAR_SIGMA = 0.75  # channel units
_ANGULAR_CUTOFF = 0.05


def render_minutiae_map(
    points, shape, splat_sigma: float = SPLAT_SIGMA, angular_sigma: float = ANGULAR_SIGMA
) -> np.ndarray:
    """Splat each minutia as an isotropic spatial Gaussian, spread across
    orientation channels with Gaussian angular weighting (peak weight 1 at
    the true orientation). The smooth angular profile keeps the quadratic
    orientation interpolation accurate on regressed maps."""
    h, w = shape
    out = np.zeros((h, w, N_CHANNELS), dtype=np.float64)
    radius = int(np.ceil(3 * splat_sigma))
    for pt in points:
        pos = (pt.theta % (2 * np.pi)) / CHANNEL_STEP
        i0, j0 = int(round(pt.i)), int(round(pt.j))
        r_lo, r_hi = max(0, i0 - radius), min(h, i0 + radius + 1)
        c_lo, c_hi = max(0, j0 - radius), min(w, j0 + radius + 1)
        if r_lo >= r_hi or c_lo >= c_hi:
            continue
        rows = np.arange(r_lo, r_hi, dtype=np.float64)
        cols = np.arange(c_lo, c_hi, dtype=np.float64)
        gauss = np.exp(
            -(((rows[:, None] - pt.i) ** 2) + ((cols[None, :] - pt.j) ** 2)) / (2 * splat_sigma**2)
        )
        for c in range(N_CHANNELS):
            dist = (c - pos + N_CHANNELS / 2) % N_CHANNELS - N_CHANNELS / 2
            weight = np.exp(-(dist**2) / (2 * angular_sigma**2))
            if weight > _ANGULAR_CUTOFF:
                out[r_lo:r_hi, c_lo:c_hi, c] += weight * gauss
    return out


def _parabola_offset(f_minus: float, f_center: float, f_plus: float) -> float:
    """Vertex offset in channel units of the quadratic through three samples."""
    denom = f_plus - 2.0 * f_center + f_minus
    if denom == 0.0:
        return 0.0
    return (f_minus - f_plus) / (2.0 * denom)


def interpolate_orientation(f_minus: float, f_center: float, f_plus: float, channel: int) -> float:
    """Orientation from quadratic interpolation across adjacent channels."""
    offset = _parabola_offset(f_minus, f_center, f_plus)
    return (((channel + offset) % N_CHANNELS) * CHANNEL_STEP) % (2 * np.pi)


def detect_minutiae(heat_map: np.ndarray, threshold: float = DETECTION_THRESHOLD):
    """Find cells above threshold that are the maximum of their 5x5x3 cube
    (5x5 spatial window, adjacent orientation channels with wraparound) and
    interpolate each peak's orientation."""
    hm = np.asarray(heat_map, dtype=np.float64)
    if hm.ndim != 3 or hm.shape[2] != N_CHANNELS:
        raise ValueError(f"expected HxWx{N_CHANNELS} map, got shape {hm.shape}")
    cube_max = maximum_filter(hm, size=(5, 5, 3), mode=("nearest", "nearest", "wrap"))
    peaks = np.argwhere((hm > threshold) & (hm >= cube_max))
    dedup = {}
    for i, j, c in peaks:
        f_center = hm[i, j, c]
        key = (int(i), int(j))
        if key in dedup and dedup[key].strength >= f_center:
            continue
        f_minus = hm[i, j, (c - 1) % N_CHANNELS]
        f_plus = hm[i, j, (c + 1) % N_CHANNELS]
        theta = interpolate_orientation(f_minus, f_center, f_plus, int(c))
        dedup[key] = MinutiaPoint(i=float(i), j=float(j), theta=theta, strength=float(f_center))
    return sorted(dedup.values(), key=lambda p: (p.i, p.j))


def _displacement_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(derive_seed(seed, "minutiae.displace"))


def displace_minutiae(points, distance: int, shape, seed):
    """Move each point by a random (di, dj) with |di| + |dj| = distance,
    clipped to the image bounds. ``seed`` is an int or a Generator to draw
    from; an int always produces the same displacements."""
    h, w = shape
    rng = _displacement_rng(seed)
    out = []
    for pt in points:
        a = int(rng.integers(0, distance + 1)) if distance > 0 else 0
        di = a * (1 if rng.random() < 0.5 else -1)
        dj = (distance - a) * (1 if rng.random() < 0.5 else -1)
        out.append(
            MinutiaPoint(
                i=float(np.clip(pt.i + di, 0, h - 1)),
                j=float(np.clip(pt.j + dj, 0, w - 1)),
                theta=pt.theta,
                strength=pt.strength,
            )
        )
    return out


def build_target_map(
    points, distance: int, shape, seed, splat_sigma: float = SPLAT_SIGMA
) -> np.ndarray:
    """Render the displaced-minutiae target map (original orientations kept)."""
    return render_minutiae_map(displace_minutiae(points, distance, shape, seed), shape, splat_sigma)


# ---------------------------------------------------------------------------
# trainable extractor


class MinutiaeMapNet(nn.Module):
    """Dilated full-resolution conv stack; ReLU output keeps maps non-negative."""

    def __init__(self, base_channels: int = 32):
        super().__init__()
        c = base_channels
        self.config = {"base_channels": base_channels}
        self.model = nn.Sequential(
            nn.Conv2d(1, c, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, c, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, c, 3, padding=2, dilation=2),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, c, 3, padding=4, dilation=4),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, c, 3, padding=8, dilation=8),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, c, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, N_CHANNELS, 1),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.model(x)


class MinutiaeExtractor(BaseEstimator):
    """Supervised heat-map regressor trained on images with known minutiae.

    ``fit(X, y)`` takes (N, H, W, 1) fingerprint images and per-image lists
    of :class:`MinutiaPoint`; ``transform(X)`` predicts (N, H, W, 12) maps.
    """

    def __init__(
        self,
        base_channels: int = 32,
        steps: int = 1500,
        batch_size: int = 8,
        learning_rate: float = 2e-3,
        peak_weight: float = 30.0,
        splat_sigma: float = SPLAT_SIGMA,
        seed: int = 0,
    ):
        self.base_channels = base_channels
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.peak_weight = peak_weight
        self.splat_sigma = splat_sigma
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 4 or X.shape[3] != 1:
            raise ValueError("expected (N, H, W, 1) single-channel fingerprint images")
        if len(y) != X.shape[0]:
            raise ValueError("need one minutiae list per image")
        n, h, w, _ = X.shape

        targets = np.stack(
            [render_minutiae_map(pts, (h, w), self.splat_sigma) for pts in y]
        ).astype(np.float32)

        torch.manual_seed(derive_seed(self.seed, "extractor.init"))
        rng = np.random.default_rng(derive_seed(self.seed, "extractor.batches"))
        net = MinutiaeMapNet(self.base_channels)
        opt = torch.optim.Adam(net.parameters(), lr=self.learning_rate)
        images = to_nchw(X)
        maps = to_nchw(targets)

        trace = []
        net.train()
        for step in range(self.steps):
            # two-stage decay sharpens channel profiles near the end of training
            if step == int(self.steps * 0.6):
                for group in opt.param_groups:
                    group["lr"] = self.learning_rate * 0.25
            if step == int(self.steps * 0.85):
                for group in opt.param_groups:
                    group["lr"] = self.learning_rate * 0.08
            idx = rng.choice(n, size=min(self.batch_size, n), replace=False)
            opt.zero_grad()
            pred = net(images[idx])
            target = maps[idx]
            # weight whole minutia neighborhoods, not only the peak channel,
            # so the angular profile is regressed accurately
            weight = 1.0 + self.peak_weight * target.amax(dim=1, keepdim=True)
            loss = (weight * (pred - target) ** 2).mean()
            loss.backward()
            opt.step()
            trace.append(float(loss.detach()))

        net.eval()
        for p in net.parameters():
            p.requires_grad_(False)
        self.net_ = net
        self.loss_trace_ = trace
        return self

    def _require_fitted(self):
        if not hasattr(self, "net_"):
            raise RuntimeError("extractor is not trained; call fit or load first")

    def extract_tensor(self, x: torch.Tensor) -> torch.Tensor:
        """Differentiable map prediction for an (N, 1, H, W) tensor."""
        self._require_fitted()
        if x.dim() != 4 or x.shape[1] != 1:
            raise ValueError("expected (N, 1, H, W) tensor")
        return self.net_(x)

    def transform(self, X) -> np.ndarray:
        self._require_fitted()
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 3:
            X = X[None]
        if X.shape[3] != 1:
            raise ValueError("fingerprint images must be single-channel")
        with torch.no_grad():
            maps = self.extract_tensor(to_nchw(X))
        return maps.permute(0, 2, 3, 1).numpy()

    def extract(self, x: np.ndarray) -> np.ndarray:
        """Single-image convenience: (H, W, 1) image -> (H, W, 12) map."""
        x = np.asarray(x)
        if x.ndim != 3 or x.shape[2] != 1:
            raise ValueError("expected a single-channel (H, W, 1) image")
        return self.transform(x[None])[0]

    def save(self, path) -> None:
        self._require_fitted()
        header = {
            "kind": "minutiae_extractor",
            "net": self.net_.config,
            "params": {
                "base_channels": self.base_channels,
                "steps": self.steps,
                "batch_size": self.batch_size,
                "learning_rate": self.learning_rate,
                "peak_weight": self.peak_weight,
                "splat_sigma": self.splat_sigma,
                "seed": self.seed,
            },
        }
        ckpt.save_checkpoint(path, header, ckpt.module_to_arrays(self.net_, "net"))

    @classmethod
    def load(cls, path) -> "MinutiaeExtractor":
        header, arrays = ckpt.load_checkpoint(path)
        if header.get("kind") != "minutiae_extractor":
            raise ValueError(f"not an extractor checkpoint: {path}")
        est = cls(**header["params"])
        net = MinutiaeMapNet(header["net"]["base_channels"])
        ckpt.module_from_arrays(net, arrays, "net")
        net.eval()
        for p in net.parameters():
            p.requires_grad_(False)
        est.net_ = net
        est.loss_trace_ = []
        return est


def extract_minutiae_map(extractor: MinutiaeExtractor, x: np.ndarray) -> np.ndarray:
    """Module-level convenience mirroring :meth:`MinutiaeExtractor.extract`."""
    return extractor.extract(x)
