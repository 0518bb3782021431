"""Dataset ingestion and desk-scale synthetic data.

Datasets live on disk as ``root/<identity_id>/<image>.png`` so public face
datasets drop in unchanged. Identities with fewer than two images stay
available for training but are excluded from evaluation pairs.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import derive_seed, load_image, normalize_image, save_image_png

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg"}


@dataclass
class DatasetManifest:
    root: str
    entries: list = field(default_factory=list)  # sorted (identity_id, relpath)
    split: str = ""

    def identities(self) -> dict:
        out: dict = {}
        for identity, rel in self.entries:
            out.setdefault(identity, []).append(rel)
        return out

    def eval_identities(self) -> list:
        """Identities usable for genuine comparisons (at least two images)."""
        return sorted(i for i, paths in self.identities().items() if len(paths) >= 2)

    def single_image_identities(self) -> list:
        return sorted(i for i, paths in self.identities().items() if len(paths) < 2)

    def image_path(self, rel: str) -> Path:
        return Path(self.root) / rel

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for identity, rel in self.entries:
            h.update(identity.encode())
            h.update(rel.encode())
            h.update(Path(self.root, rel).read_bytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "root": str(self.root),
            "entries": [list(e) for e in self.entries],
            "split": self.split,
            "content_hash": self.content_hash(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        return cls(
            root=data["root"],
            entries=[tuple(e) for e in data["entries"]],
            split=data.get("split", ""),
        )


def scan_dataset(root, split: str = "") -> DatasetManifest:
    """Build a manifest from a directory of identity subdirectories."""
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"dataset root {root} is not a directory")
    entries = []
    for ident_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for img in sorted(ident_dir.iterdir()):
            if img.suffix.lower() in IMAGE_EXTENSIONS:
                entries.append((ident_dir.name, str(img.relative_to(root))))
    if not entries:
        raise ValueError(f"dataset root {root} contains no identity images")
    return DatasetManifest(root=str(root), entries=entries, split=split)


def cache_manifest(manifest: DatasetManifest, path=None) -> Path:
    path = Path(path) if path else Path(manifest.root) / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
    return path


def load_cached_manifest(path) -> DatasetManifest:
    """Load a cached manifest, rescanning if the content hash is stale."""
    path = Path(path)
    with open(path) as fh:
        data = json.load(fh)
    manifest = DatasetManifest.from_dict(data)
    if manifest.content_hash() != data.get("content_hash"):
        manifest = scan_dataset(manifest.root, split=manifest.split)
    return manifest


def split_manifest(manifest: DatasetManifest, test_fraction: float, seed: int):
    """Split into identity-disjoint train/test manifests."""
    idents = sorted(manifest.identities())
    if len(idents) < 2:
        raise ValueError("need at least two identities to split")
    rng = np.random.default_rng(derive_seed(seed, "dataset.split"))
    order = list(rng.permutation(idents))
    n_test = max(1, int(round(test_fraction * len(idents))))
    test_ids = set(order[:n_test])
    train = DatasetManifest(
        root=manifest.root,
        entries=[e for e in manifest.entries if e[0] not in test_ids],
        split="train",
    )
    test = DatasetManifest(
        root=manifest.root,
        entries=[e for e in manifest.entries if e[0] in test_ids],
        split="test",
    )
    assert_identity_disjoint(train, test)
    return train, test


def assert_identity_disjoint(a: DatasetManifest, b: DatasetManifest) -> None:
    overlap = set(a.identities()) & set(b.identities())
    if overlap:
        raise ValueError(f"identity overlap between splits: {sorted(overlap)[:5]}")


@dataclass(frozen=True)
class PairSample:
    image_a: str
    image_b: str
    label: str  # "genuine" | "imposter"


def sample_pairs(manifest: DatasetManifest, n_genuine: int, n_imposter: int, seed: int):
    """Draw label-correct comparison pairs with no duplicate unordered pairs."""
    by_id = {i: paths for i, paths in manifest.identities().items()}
    eval_ids = manifest.eval_identities()
    rng = np.random.default_rng(derive_seed(seed, "dataset.pairs"))

    genuine_pool = []
    for ident in eval_ids:
        paths = by_id[ident]
        for i in range(len(paths)):
            for j in range(i + 1, len(paths)):
                genuine_pool.append((paths[i], paths[j]))
    if n_genuine > len(genuine_pool):
        raise ValueError(f"requested {n_genuine} genuine pairs, only {len(genuine_pool)} exist")

    all_ids = sorted(by_id)
    total_imposter = 0
    for i in range(len(all_ids)):
        for j in range(i + 1, len(all_ids)):
            total_imposter += len(by_id[all_ids[i]]) * len(by_id[all_ids[j]])
    if n_imposter > total_imposter:
        raise ValueError(f"requested {n_imposter} imposter pairs, only {total_imposter} exist")

    pairs = []
    if n_genuine:
        idx = rng.choice(len(genuine_pool), size=n_genuine, replace=False)
        pairs.extend(
            PairSample(image_a=genuine_pool[int(k)][0], image_b=genuine_pool[int(k)][1], label="genuine")
            for k in idx
        )

    seen = set()
    while sum(p.label == "imposter" for p in pairs) < n_imposter:
        ia, ib = rng.choice(len(all_ids), size=2, replace=False)
        id_a, id_b = all_ids[int(ia)], all_ids[int(ib)]
        pa = by_id[id_a][int(rng.integers(len(by_id[id_a])))]
        pb = by_id[id_b][int(rng.integers(len(by_id[id_b])))]
        key = (pa, pb) if pa < pb else (pb, pa)
        if key in seen:
            continue
        seen.add(key)
        pairs.append(PairSample(image_a=pa, image_b=pb, label="imposter"))
    return pairs


def load_normalized(manifest: DatasetManifest, rel: str, grayscale: bool = False) -> np.ndarray:
    return normalize_image(load_image(manifest.image_path(rel), grayscale=grayscale))


def load_all_images(manifest: DatasetManifest, grayscale: bool = False):
    """Load every image into an (N, H, W, C) stack plus aligned identity labels."""
    images, labels = [], []
    for identity, rel in manifest.entries:
        images.append(load_normalized(manifest, rel, grayscale=grayscale))
        labels.append(identity)
    return np.stack(images), labels


# ---------------------------------------------------------------------------
# synthetic identity faces


def _smoothstep(d: np.ndarray, sharpness: float = 24.0) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(np.clip(-sharpness * d, -60, 60)))


def _ellipse_mask(xx, yy, cx, cy, rx, ry, sharpness=24.0):
    d = 1.0 - np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
    return _smoothstep(d, sharpness)


def _identity_params(rng: np.random.Generator) -> dict:
    """Identity-defining face parameters.

    Identities vary mostly in geometry (feature positions, sizes, tilts)
    with narrow color ranges, mirroring aligned face crops where matchers
    key on structure rather than palette; the face fills the frame.
    """
    return {
        "bg": np.full(3, rng.uniform(0.78, 0.92)),
        "hair": rng.uniform(0.06, 0.45, size=3),
        "hair_y": rng.uniform(0.10, 0.24),
        "skin": np.array(
            [rng.uniform(0.60, 0.92), rng.uniform(0.48, 0.74), rng.uniform(0.38, 0.62)]
        ),
        "face_cx": rng.uniform(0.48, 0.52),
        "face_cy": rng.uniform(0.51, 0.55),
        "face_rx": rng.uniform(0.36, 0.46),
        "face_ry": rng.uniform(0.46, 0.58),
        "eye_dx": rng.uniform(0.10, 0.19),
        "eye_y": rng.uniform(0.38, 0.50),
        "eye_r": rng.uniform(0.028, 0.060),
        "iris": rng.uniform(0.05, 0.45, size=3),
        "brow_dy": rng.uniform(0.050, 0.110),
        "brow_h": rng.uniform(0.008, 0.030),
        "brow_w": rng.uniform(0.04, 0.11),
        "brow_tilt": rng.uniform(-0.35, 0.35),
        "brow_shade": rng.uniform(0.06, 0.30),
        "nose_len": rng.uniform(0.08, 0.18),
        "nose_w": rng.uniform(0.015, 0.050),
        "mouth_y": rng.uniform(0.66, 0.78),
        "mouth_w": rng.uniform(0.06, 0.15),
        "mouth_h": rng.uniform(0.010, 0.035),
        "mouth": np.array([rng.uniform(0.48, 0.80), rng.uniform(0.15, 0.38), rng.uniform(0.18, 0.42)]),
    }


def render_face(params: dict, size: int, shift=(0.0, 0.0), brightness: float = 1.0) -> np.ndarray:
    """Render one face-like image in [0, 1] from identity parameters."""
    ax = np.linspace(0.0, 1.0, size)
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    xx = xx - shift[1] / size
    yy = yy - shift[0] / size
    p = params

    img = np.ones((size, size, 3)) * p["bg"][None, None, :]
    face = _ellipse_mask(xx, yy, p["face_cx"], p["face_cy"], p["face_rx"], p["face_ry"])
    shade = 1.0 - 0.25 * np.sqrt(((xx - p["face_cx"]) / p["face_rx"]) ** 2 + ((yy - p["face_cy"]) / p["face_ry"]) ** 2)
    skin = p["skin"][None, None, :] * shade[:, :, None]
    img = img * (1 - face[:, :, None]) + skin * face[:, :, None]

    hair_zone = _smoothstep(p["hair_y"] - yy, 30.0) * face
    img = img * (1 - hair_zone[:, :, None]) + p["hair"][None, None, :] * hair_zone[:, :, None]

    tilt = p.get("brow_tilt", 0.0)
    for sign in (-1.0, 1.0):
        ex = p["face_cx"] + sign * p["eye_dx"]
        sclera = _ellipse_mask(xx, yy, ex, p["eye_y"], p["eye_r"] * 1.45, p["eye_r"])
        img = img * (1 - sclera[:, :, None]) + 0.97 * sclera[:, :, None]
        iris = _ellipse_mask(xx, yy, ex, p["eye_y"], p["eye_r"] * 0.62, p["eye_r"] * 0.62)
        img = img * (1 - iris[:, :, None]) + p["iris"][None, None, :] * iris[:, :, None]
        pupil = _ellipse_mask(xx, yy, ex, p["eye_y"], p["eye_r"] * 0.26, p["eye_r"] * 0.26)
        img = img * (1 - pupil[:, :, None]) + 0.03 * pupil[:, :, None]
        # tilted eyebrow: rotate coordinates about the brow center
        bx, by = ex, p["eye_y"] - p["brow_dy"]
        ca, sa = np.cos(sign * tilt), np.sin(sign * tilt)
        rx = ca * (xx - bx) - sa * (yy - by)
        ry = sa * (xx - bx) + ca * (yy - by)
        brow = _smoothstep(1.0 - np.sqrt((rx / p["brow_w"]) ** 2 + (ry / p["brow_h"]) ** 2), 24.0)
        img = img * (1 - brow[:, :, None]) + p["brow_shade"] * brow[:, :, None]

    nose = _ellipse_mask(xx, yy, p["face_cx"], p["eye_y"] + p["nose_len"] * 0.7, p["nose_w"], p["nose_len"] * 0.55)
    nose_shade = np.clip(p["skin"] * 0.72, 0, 1)
    img = img * (1 - nose[:, :, None]) + nose_shade[None, None, :] * nose[:, :, None]

    mouth = _ellipse_mask(xx, yy, p["face_cx"], p["mouth_y"], p["mouth_w"], p["mouth_h"])
    img = img * (1 - mouth[:, :, None]) + p["mouth"][None, None, :] * mouth[:, :, None]

    return np.clip(img * brightness, 0.0, 1.0)


def synth_identity_faces(out_dir, n_ids: int, per_id: int, seed: int, size: int = 64) -> DatasetManifest:
    """Generate a deterministic identity-labeled face dataset on disk.

    Per-sample jitter: translation up to 4 px, brightness up to 10%, pixel
    noise sigma up to 0.02. The same seed always produces byte-identical
    files.
    """
    if n_ids < 2:
        raise ValueError("need at least two identities")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for ident in range(n_ids):
        id_rng = np.random.default_rng(derive_seed(seed, f"faces.id{ident}"))
        params = _identity_params(id_rng)
        ident_dir = out_dir / f"id_{ident:04d}"
        ident_dir.mkdir(exist_ok=True)
        for sample in range(per_id):
            s_rng = np.random.default_rng(derive_seed(seed, f"faces.id{ident}.s{sample}"))
            shift = s_rng.uniform(-4.0, 4.0, size=2)
            brightness = 1.0 + s_rng.uniform(-0.10, 0.10)
            img = render_face(params, size, shift=shift, brightness=brightness)
            img = np.clip(img + s_rng.normal(scale=0.02, size=img.shape), 0.0, 1.0)
            raw = np.floor(img * 255.0 + 0.5).astype(np.uint8)
            save_image_png(ident_dir / f"img_{sample:04d}.png", raw)
    return scan_dataset(out_dir)
