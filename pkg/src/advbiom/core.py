"""Image normalization, composition arithmetic, and similarity primitives.

Conventions used across the package:

* images are numpy arrays with shape ``(H, W, C)``, channel-last
  (``C=3`` for faces, ``C=1`` for fingerprints); batches are ``(N, H, W, C)``
* raw images are ``uint8`` in ``[0, 255]``; normalized images are floats
  in ``[-1, 1]`` obtained via :func:`normalize_image`
* training tensors are float32, metric and gradient-check computations
  run in float64
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch
from PIL import Image

MIN_IMAGE_SIDE = 8


def derive_seed(root_seed: int, tag: str) -> int:
    """Split one root seed into stable per-subsystem seeds."""
    digest = hashlib.sha256(f"{root_seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


# ---------------------------------------------------------------------------
# validation helpers


def check_raw_image(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw)
    if raw.ndim == 2:
        raw = raw[:, :, None]
    if raw.ndim != 3:
        raise ValueError(f"raw image must be HxWxC, got shape {raw.shape}")
    if raw.dtype != np.uint8:
        raise ValueError(f"raw image must be uint8, got {raw.dtype}")
    h, w = raw.shape[:2]
    if h < MIN_IMAGE_SIDE or w < MIN_IMAGE_SIDE:
        raise ValueError(f"image sides must be >= {MIN_IMAGE_SIDE}, got {h}x{w}")
    return raw


def check_normalized_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ValueError(f"{name} must be HxWxC, got shape {img.shape}")
    if not np.issubdtype(img.dtype, np.floating):
        raise ValueError(f"{name} must be floating point, got {img.dtype}")
    if not np.isfinite(img).all():
        raise ValueError(f"{name} contains non-finite values")
    lo, hi = float(img.min()), float(img.max())
    if lo < -1.0 - 1e-6 or hi > 1.0 + 1e-6:
        raise ValueError(f"{name} values must lie in [-1, 1], got [{lo}, {hi}]")
    return img


def check_image_batch(batch: np.ndarray, name: str = "batch") -> np.ndarray:
    """Validate an (N, H, W, C) stack of normalized images."""
    batch = np.asarray(batch)
    if batch.ndim == 3:
        batch = batch[None]
    if batch.ndim != 4:
        raise ValueError(f"{name} must be NxHxWxC, got shape {batch.shape}")
    if batch.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    check_normalized_image(batch.reshape(-1, *batch.shape[2:])[0], name=name)
    if not np.isfinite(batch).all():
        raise ValueError(f"{name} contains non-finite values")
    lo, hi = float(batch.min()), float(batch.max())
    if lo < -1.0 - 1e-6 or hi > 1.0 + 1e-6:
        raise ValueError(f"{name} values must lie in [-1, 1], got [{lo}, {hi}]")
    return batch


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what} must share a shape, got {np.shape(a)} vs {np.shape(b)}")


# ---------------------------------------------------------------------------
# normalization


def normalize_image(raw: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Map uint8 pixels to [-1, 1] via (pixel - 127.5) / 128."""
    raw = check_raw_image(raw)
    return ((raw.astype(np.float64) - 127.5) / 128.0).astype(dtype)


def denormalize_image(img: np.ndarray) -> np.ndarray:
    """Invert :func:`normalize_image`: pixel = round(v * 128 + 127.5), half-up.

    The round-trip raw -> normalized -> raw is the identity on all 256
    intensity values.
    """
    img = check_normalized_image(img)
    v = img.astype(np.float64) * 128.0 + 127.5
    # numpy rounds half-to-even; the export convention is half-up
    pixels = np.floor(v + 0.5)
    return np.clip(pixels, 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# similarity and composition


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"vectors must share length, got {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for zero-norm vectors")
    return float(np.dot(a, b) / (na * nb))


def clamp_compose(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Compose an image with an additive mask: 2 * clamp(mask + (x+1)/2, 0, 1) - 1.

    Evaluated in the algebraically identical form clamp(x + 2*mask, -1, 1),
    which keeps the zero-mask case exact in floating point. The mask can add
    or subtract intensity and the output always stays inside [-1, 1].
    """
    x = np.asarray(x)
    mask = np.asarray(mask)
    check_same_shape(x, mask, what="image and mask")
    out = np.clip(x + 2.0 * mask, -1.0, 1.0)
    return out.astype(x.dtype, copy=False)


def clamp_compose_t(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Differentiable torch version of :func:`clamp_compose`."""
    if x.shape != mask.shape:
        raise ValueError(f"image and mask must share a shape, got {x.shape} vs {mask.shape}")
    return torch.clamp(x + 2.0 * mask, -1.0, 1.0)


# ---------------------------------------------------------------------------
# torch bridging


def to_nchw(batch: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(N, H, W, C) numpy -> (N, C, H, W) torch tensor."""
    batch = np.asarray(batch)
    if batch.ndim == 3:
        batch = batch[None]
    if batch.ndim != 4:
        raise ValueError(f"expected NxHxWxC, got shape {batch.shape}")
    return torch.from_numpy(np.ascontiguousarray(batch)).permute(0, 3, 1, 2).to(dtype)


def to_nhwc(tensor: torch.Tensor) -> np.ndarray:
    """(N, C, H, W) torch tensor -> (N, H, W, C) numpy array."""
    if tensor.dim() == 3:
        tensor = tensor[None]
    return tensor.detach().permute(0, 2, 3, 1).contiguous().cpu().numpy()


# ---------------------------------------------------------------------------
# image files (PNG for export, JPEG accepted on import only)


def load_image(path, grayscale: bool = False) -> np.ndarray:
    """Load a PNG or JPEG file as a raw uint8 HxWxC array."""
    with Image.open(path) as im:
        im = im.convert("L" if grayscale else "RGB")
        arr = np.asarray(im, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def save_image_png(path, raw: np.ndarray) -> None:
    """Write a raw uint8 image as lossless PNG."""
    raw = check_raw_image(raw)
    if raw.shape[2] == 1:
        im = Image.fromarray(raw[:, :, 0], mode="L")
    elif raw.shape[2] == 3:
        im = Image.fromarray(raw, mode="RGB")
    else:
        raise ValueError(f"unsupported channel count {raw.shape[2]}")
    im.save(path, format="PNG")
