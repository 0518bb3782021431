"""Procedural fingerprint synthesis with planted, labeled minutiae.

Ridges are rendered as ``cos`` of a phase field: a smooth per-type flow
potential (scaled to the ridge period) plus one signed spiral term per
minutia. Each spiral creates exactly one ridge anomaly at a known location,
which gives pixel-accurate ground truth for extractor training. Five flow
templates cover the classic pattern types (left/right loop, whorl, arch,
tented arch).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..core import derive_seed, save_image_png
from ..datasets import DatasetManifest, scan_dataset
from ..metrics import FINGERPRINT_TYPES
from .minutiae import MinutiaPoint


def _flow_potential(finger_type: str, size: int, rng: np.random.Generator):
    """Scalar potential whose level sets are the ridge curves for one type.

    Parameter ranges are deliberately wide so prints of the same type stay
    separable as identities.
    """
    cy = size * (0.5 + rng.uniform(-0.10, 0.10))
    cx = size * (0.5 + rng.uniform(-0.10, 0.10))
    tilt = rng.uniform(-0.35, 0.35)
    ct, st = np.cos(tilt), np.sin(tilt)

    def rot(i, j):
        di, dj = i - cy, j - cx
        return ct * di - st * dj, st * di + ct * dj

    if finger_type == "whorl":
        ecc = rng.uniform(0.55, 1.7)

        def g(i, j):
            ri, rj = rot(i, j)
            return np.sqrt(rj**2 + ecc * ri**2 + 1e-9)

    elif finger_type in ("left_loop", "right_loop"):
        beta = rng.uniform(0.35, 0.80)
        if finger_type == "right_loop":
            beta = -beta

        def g(i, j):
            ri, rj = rot(i, j)
            r = np.sqrt(rj**2 + ri**2 + 1e-9)
            return r + beta * rj

    elif finger_type in ("arch", "tented_arch"):
        if finger_type == "arch":
            amp = size * rng.uniform(0.14, 0.32)
            width = size * rng.uniform(0.20, 0.34)
        else:
            amp = size * rng.uniform(0.34, 0.55)
            width = size * rng.uniform(0.11, 0.20)

        def g(i, j):
            ri, rj = rot(i, j)
            return ri - amp * np.exp(-(rj**2) / (2 * width**2))

    else:
        raise ValueError(f"unknown fingerprint type {finger_type!r}; expected one of {FINGERPRINT_TYPES}")
    return g, (cy, cx)


def _spiral_sum(i, j, points, signs, skip=None):
    total = np.zeros_like(np.asarray(i, dtype=np.float64))
    for idx, (pt, sign) in enumerate(zip(points, signs)):
        if skip is not None and idx == skip:
            continue
        total = total + sign * np.arctan2(i - pt[0], j - pt[1])
    return total


def _sample_positions(rng, size, n_points, center, min_sep=12.0, margin_frac=0.34):
    cy, cx = center
    max_r = size * margin_frac
    positions = []
    attempts = 0
    while len(positions) < n_points and attempts < 4000:
        attempts += 1
        ang = rng.uniform(0, 2 * np.pi)
        rad = max_r * np.sqrt(rng.uniform(0.02, 1.0))
        i, j = cy + rad * np.sin(ang), cx + rad * np.cos(ang)
        if np.hypot(i - cy, j - cx) < 7.0:
            continue
        if all(abs(i - p[0]) + abs(j - p[1]) >= min_sep for p in positions):
            positions.append((float(np.round(i)), float(np.round(j))))
    return positions


def synth_fingerprint(
    seed: int,
    size: int = 96,
    finger_type: str = "whorl",
    n_minutiae: int = 12,
    ridge_period: float | None = None,
    noise: float = 0.03,
    offset=(0.0, 0.0),
    contrast: float = 1.0,
):
    """Generate one fingerprint image plus its ground-truth minutiae.

    Returns an (H, W, 1) float32 image in [-1, 1] (dark ridges on a light
    background) and a list of :class:`MinutiaPoint`. Deterministic per
    (seed, params); ``offset`` shifts the whole pattern, minutiae included,
    for impression jitter.
    """
    rng = np.random.default_rng(derive_seed(seed, "fp.synth"))
    g, center = _flow_potential(finger_type, size, rng)
    if ridge_period is None:
        ridge_period = rng.uniform(5.5, 9.0)
    di, dj = offset
    center = (center[0] + di, center[1] + dj)

    raw_positions = _sample_positions(rng, size, n_minutiae, center)
    signs = [1 if rng.random() < 0.5 else -1 for _ in raw_positions]

    ii, jj = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij")
    base_phase = (2 * np.pi / ridge_period) * g(ii - di, jj - dj)
    phase = base_phase + _spiral_sum(ii, jj, raw_positions, signs)
    ridges = np.tanh(3.0 * np.cos(phase)) / np.tanh(3.0)

    # elliptical print boundary fading into a light background
    cy, cx = center
    boundary = 1.0 - np.sqrt(((ii - cy) / (0.46 * size)) ** 2 + ((jj - cx) / (0.42 * size)) ** 2)
    mask = 1.0 / (1.0 + np.exp(-np.clip(12.0 * boundary, -60, 60)))
    background = 0.85
    img = mask * (-ridges * contrast * 0.9) + (1 - mask) * background
    img = img + rng.normal(scale=noise, size=img.shape)
    img = np.clip(img, -1.0, 1.0).astype(np.float32)[:, :, None]

    points = []
    h = 0.5
    for idx, ((pi, pj), sign) in enumerate(zip(raw_positions, signs)):

        def phase_wo(i, j, _idx=idx):
            return (2 * np.pi / ridge_period) * g(np.asarray(i, float) - di, np.asarray(j, float) - dj) + _spiral_sum(
                np.asarray(i, float), np.asarray(j, float), raw_positions, signs, skip=_idx
            )

        d_i = (phase_wo(pi + h, pj) - phase_wo(pi - h, pj)) / (2 * h)
        d_j = (phase_wo(pi, pj + h) - phase_wo(pi, pj - h)) / (2 * h)
        tangent_i, tangent_j = -d_j, d_i  # ridge runs along level sets of the phase
        theta = float(np.arctan2(tangent_i, tangent_j) % (2 * np.pi))
        if sign < 0:
            theta = float((theta + np.pi) % (2 * np.pi))
        points.append(MinutiaPoint(i=pi, j=pj, theta=theta))
    return img, points


def blank_fingerprint(seed: int, size: int = 96, noise: float = 0.03) -> np.ndarray:
    """Ridge-free background image used as a negative extractor sample."""
    rng = np.random.default_rng(derive_seed(seed, "fp.blank"))
    img = 0.85 + rng.normal(scale=noise, size=(size, size))
    return np.clip(img, -1.0, 1.0).astype(np.float32)[:, :, None]


def synth_fingerprint_dataset(
    out_dir,
    n_ids: int,
    per_id: int,
    seed: int,
    size: int = 96,
    n_minutiae: int = 12,
    shift_px: int = 0,
    write_minutiae: bool = True,
) -> DatasetManifest:
    """Write an identity-labeled fingerprint dataset (PNG + minutiae JSON).

    Each identity is one base print; impressions vary in contrast and noise
    (and optionally an integer translation of up to ``shift_px``), matching
    pre-aligned rolled acquisitions. Types cycle through the five classic
    patterns and ridge periods are spread across same-type identities so no
    two prints of one type are near-twins.
    """
    if n_ids < 2:
        raise ValueError("need at least two identities")
    if shift_px < 0:
        raise ValueError("shift_px must be >= 0")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_types = len(FINGERPRINT_TYPES)
    per_type = max(1, -(-n_ids // n_types))
    for ident in range(n_ids):
        finger_type = FINGERPRINT_TYPES[ident % n_types]
        rank = ident // n_types
        period_rng = np.random.default_rng(derive_seed(seed, f"fp.id{ident}.period"))
        period = 5.5 + 3.5 * (rank / max(1, per_type - 1)) + period_rng.uniform(-0.15, 0.15)
        ident_dir = out_dir / f"id_{ident:04d}"
        ident_dir.mkdir(exist_ok=True)
        base_seed = derive_seed(seed, f"fp.id{ident}")
        for sample in range(per_id):
            s_rng = np.random.default_rng(derive_seed(seed, f"fp.id{ident}.s{sample}"))
            if sample and shift_px:
                shift = (int(s_rng.integers(-shift_px, shift_px + 1)),
                         int(s_rng.integers(-shift_px, shift_px + 1)))
            else:
                shift = (0, 0)
            contrast = 1.0 + s_rng.uniform(-0.1, 0.1)
            img, points = synth_fingerprint(
                base_seed,
                size=size,
                finger_type=finger_type,
                n_minutiae=n_minutiae,
                ridge_period=period,
                offset=shift,
                contrast=contrast,
                noise=0.03,
            )
            raw = np.floor((img[:, :, 0] + 1.0) * 127.5 + 0.5).clip(0, 255).astype(np.uint8)
            save_image_png(ident_dir / f"img_{sample:04d}.png", raw[:, :, None])
            if write_minutiae:
                shifted = [
                    MinutiaPoint(p.i + shift[0], p.j + shift[1], p.theta).to_dict() for p in points
                ]
                with open(ident_dir / f"img_{sample:04d}.minutiae.json", "w") as fh:
                    json.dump({"finger_type": finger_type, "minutiae": shifted}, fh, indent=2)
    return scan_dataset(out_dir)


def load_minutiae_sidecar(path):
    with open(path) as fh:
        data = json.load(fh)
    return data["finger_type"], [
        MinutiaPoint(m["i"], m["j"], m["theta"]) for m in data["minutiae"]
    ]
