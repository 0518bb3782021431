"""Fingerprint attack pipeline: a displacement autoencoder that re-renders a
print so its minutiae land on a displaced target map, a distortion module
that predicts control points warped by a smooth random field, a patch
discriminator, and the joint training loop over all four loss terms.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator

from .. import checkpoint as ckpt
from ..core import derive_seed, to_nchw, to_nhwc
from .minutiae import MinutiaeExtractor, build_target_map, detect_minutiae
from .tps import tps_warp_t

EPS_DIV = 1e-6


# ---------------------------------------------------------------------------
# losses


def minutiae_map_similarity_loss_t(target: torch.Tensor, predicted: torch.Tensor) -> torch.Tensor:
    """Per-sample L1 distance between maps (summed over cells), batch mean."""
    if target.shape != predicted.shape:
        raise ValueError("maps must share a shape")
    return (target - predicted).abs().flatten(1).sum(dim=1).mean()


def minutiae_map_separation_loss_t(
    predicted: torch.Tensor, reference: torch.Tensor, eps: float = EPS_DIV
) -> torch.Tensor:
    """Reciprocal of the per-sample L1 distance; shrinks as maps move apart."""
    if predicted.shape != reference.shape:
        raise ValueError("maps must share a shape")
    dist = (predicted - reference).abs().flatten(1).sum(dim=1)
    return (1.0 / (dist + eps)).mean()


def pixel_consistency_loss_t(x: torch.Tensor, x_disp: torch.Tensor, x_adv: torch.Tensor) -> torch.Tensor:
    """Mean absolute deviation of both stages from the probe."""
    if not (x.shape == x_disp.shape == x_adv.shape):
        raise ValueError("images must share a shape")
    per_sample = (x - x_disp).abs().flatten(1).mean(dim=1) + (x - x_adv).abs().flatten(1).mean(dim=1)
    return per_sample.mean()


def _pair_to_tensors(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 3:
        a, b = a[None], b[None]
    return torch.from_numpy(a).flatten(1), torch.from_numpy(b).flatten(1)


def minutiae_map_similarity_loss(target, predicted) -> float:
    t, p = _pair_to_tensors(target, predicted)
    return float(minutiae_map_similarity_loss_t(t, p))


def minutiae_map_separation_loss(predicted, reference, eps: float = EPS_DIV) -> float:
    p, r = _pair_to_tensors(predicted, reference)
    return float(minutiae_map_separation_loss_t(p, r, eps))


def pixel_consistency_loss(x, x_disp, x_adv) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x, x_disp, x_adv = x[None], np.asarray(x_disp)[None], np.asarray(x_adv)[None]
    return float(
        pixel_consistency_loss_t(
            torch.from_numpy(np.asarray(x, np.float64)),
            torch.from_numpy(np.asarray(x_disp, np.float64)),
            torch.from_numpy(np.asarray(x_adv, np.float64)),
        )
    )


# ---------------------------------------------------------------------------
# networks


class DisplacementNet(nn.Module):
    """Autoencoder over the probe stacked with its 12-channel target map."""

    def __init__(self, base_channels: int = 24):
        super().__init__()
        c = base_channels
        self.config = {"base_channels": base_channels}
        self.model = nn.Sequential(
            nn.Conv2d(13, c, 7, stride=1, padding=3),
            nn.InstanceNorm2d(c, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * c, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1),
            nn.InstanceNorm2d(4 * c, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(4 * c, 4 * c, 3, stride=1, padding=1),
            nn.InstanceNorm2d(4 * c, affine=True),
            nn.ReLU(inplace=True),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(4 * c, 2 * c, 5, stride=1, padding=2),
            nn.InstanceNorm2d(2 * c, affine=True),
            nn.ReLU(inplace=True),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * c, c, 5, stride=1, padding=2),
            nn.InstanceNorm2d(c, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, 1, 7, stride=1, padding=3),
            nn.Tanh(),
        )

    def forward(self, x_and_target):
        return self.model(x_and_target)


class DistortionNet(nn.Module):
    """Encoder that places a fixed number of control points on the print."""

    def __init__(self, n_control_points: int = 16, base_channels: int = 16):
        super().__init__()
        c = base_channels
        self.n_control_points = n_control_points
        self.config = {"n_control_points": n_control_points, "base_channels": base_channels}
        self.features = nn.Sequential(
            nn.Conv2d(13, c, 4, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1),
            nn.ReLU(inplace=True),
        )
        self.head = nn.Linear(4 * c, 2 * n_control_points)

    def forward(self, x_and_map):
        h, w = x_and_map.shape[2], x_and_map.shape[3]
        feats = self.features(x_and_map).mean(dim=(2, 3))
        logits = self.head(feats).reshape(-1, self.n_control_points, 2)
        scale = torch.tensor([h - 1.0, w - 1.0], dtype=logits.dtype)
        return torch.sigmoid(logits) * scale


class FpDiscriminator(nn.Module):
    """Patch discriminator over single-channel prints."""

    def __init__(self, base_channels: int = 16):
        super().__init__()
        c = base_channels
        self.config = {"base_channels": base_channels}
        self.model = nn.Sequential(
            nn.Conv2d(1, c, 4, stride=2, padding=1),
            nn.BatchNorm2d(c),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
            nn.BatchNorm2d(2 * c),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1),
            nn.BatchNorm2d(4 * c),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(4 * c, 3, 1, stride=1, padding=0),
        )

    def forward(self, x):
        return self.model(x)


class SmoothDisplacementField:
    """Seeded sum of random sinusoids; evaluates a smooth 2D displacement
    direction field at arbitrary (row, col) points, differentiably."""

    N_COMPONENTS = 4

    def __init__(self, seed: int, size: int):
        rng = np.random.default_rng(derive_seed(seed, "fp.distortion_field"))
        k = self.N_COMPONENTS
        self.size = size
        # unit-RMS per axis: sum of k sinusoids with amplitude sqrt(2/k)
        self.amp = np.sqrt(2.0 / k)
        self.freq = rng.uniform(0.5, 2.5, size=(2, k, 2)) * (2 * np.pi / size)
        self.phase = rng.uniform(0, 2 * np.pi, size=(2, k))
        self.sign = rng.choice([-1.0, 1.0], size=(2, k))

    def __call__(self, points: torch.Tensor) -> torch.Tensor:
        """points: (..., 2) pixel coords -> (..., 2) unit-scale displacements."""
        out = []
        for axis in range(2):
            total = torch.zeros(points.shape[:-1], dtype=points.dtype)
            for k in range(self.N_COMPONENTS):
                arg = (
                    self.freq[axis, k, 0] * points[..., 0]
                    + self.freq[axis, k, 1] * points[..., 1]
                    + self.phase[axis, k]
                )
                total = total + self.sign[axis, k] * self.amp * torch.sin(arg)
            out.append(total)
        return torch.stack(out, dim=-1)


# ---------------------------------------------------------------------------
# estimator


class FingerprintAttack(BaseEstimator):
    """End-to-end trainable fingerprint obfuscation attack.

    ``fit(X)`` jointly trains the displacement and distortion modules against
    the GAN, map-similarity, map-separation, and pixel losses. No matcher is
    involved at any point; ``transform(X)`` then produces adversarial prints
    for any downstream matcher.
    """

    def __init__(
        self,
        extractor: MinutiaeExtractor = None,
        steps: int = 1200,
        batch_size: int = 8,
        learning_rate: float = 2e-4,
        adam_beta1: float = 0.5,
        adam_beta2: float = 0.9,
        map_similarity_weight: float = 0.05,
        map_separation_weight: float = 500000.0,
        pixel_weight: float = 1000.0,
        displacement_distance: int = 20,
        n_control_points: int = 16,
        distortion_extent: float = 2.0,
        detection_threshold: float = 0.2,
        base_channels: int = 24,
        seed: int = 0,
        checkpoint_every: int = 0,
        checkpoint_dir=None,
        log_path=None,
    ):
        self.extractor = extractor
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.map_similarity_weight = map_similarity_weight
        self.map_separation_weight = map_separation_weight
        self.pixel_weight = pixel_weight
        self.displacement_distance = displacement_distance
        self.n_control_points = n_control_points
        self.distortion_extent = distortion_extent
        self.detection_threshold = detection_threshold
        self.base_channels = base_channels
        self.seed = seed
        self.checkpoint_every = checkpoint_every
        self.checkpoint_dir = checkpoint_dir
        self.log_path = log_path

    # -- helpers --------------------------------------------------------------

    def _check_images(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 3:
            X = X[None]
        if X.ndim != 4 or X.shape[3] != 1:
            raise ValueError("expected (N, H, W, 1) single-channel fingerprint images")
        return X

    def _target_maps(self, probe_maps: np.ndarray, rng) -> np.ndarray:
        """Detect minutiae per probe map, displace them, render target maps."""
        out = np.zeros_like(probe_maps)
        h, w = probe_maps.shape[1:3]
        for i in range(probe_maps.shape[0]):
            points = detect_minutiae(probe_maps[i], self.detection_threshold)
            out[i] = build_target_map(points, self.displacement_distance, (h, w), rng)
        return out

    def _distort(self, x_disp_t: torch.Tensor, maps_t: torch.Tensor):
        """Predict control points, sample their displacements, warp."""
        cps = self.distortion_net_(torch.cat([x_disp_t, maps_t], dim=1))
        disps = self.distortion_extent * self.field_(cps)
        warped = torch.stack(
            [tps_warp_t(x_disp_t[i], cps[i], disps[i]) for i in range(x_disp_t.shape[0])]
        )
        return warped, cps, disps

    # -- training -------------------------------------------------------------

    def fit(self, X, y=None, resume_from=None):
        if self.extractor is None:
            raise ValueError("a trained minutiae extractor is required")
        X = self._check_images(X)
        n, h, w, _ = X.shape

        torch.manual_seed(derive_seed(self.seed, "fp_attack.init"))
        rng = np.random.default_rng(derive_seed(self.seed, "fp_attack.batches"))
        disp_net = DisplacementNet(self.base_channels)
        dist_net = DistortionNet(self.n_control_points, max(self.base_channels // 2, 8))
        disc = FpDiscriminator(max(self.base_channels // 2, 8))
        self.field_ = SmoothDisplacementField(self.seed, max(h, w))
        gen_params = list(disp_net.parameters()) + list(dist_net.parameters())
        opt_g = torch.optim.Adam(
            gen_params, lr=self.learning_rate, betas=(self.adam_beta1, self.adam_beta2)
        )
        opt_d = torch.optim.Adam(
            disc.parameters(), lr=self.learning_rate, betas=(self.adam_beta1, self.adam_beta2)
        )
        start_step = 0
        if resume_from is not None:
            start_step = self._restore(resume_from, disp_net, dist_net, disc, opt_g, opt_d, rng)
        self.displacement_net_ = disp_net
        self.distortion_net_ = dist_net
        self.discriminator_ = disc

        images = to_nchw(X)
        with torch.no_grad():
            probe_maps_all = self.extractor.extract_tensor(images).permute(0, 2, 3, 1).numpy()

        log_rows = []
        last_checkpoint = None
        disp_net.train(), dist_net.train(), disc.train()
        for step in range(start_step, self.steps):
            idx = rng.choice(n, size=min(self.batch_size, n), replace=False)
            x = images[idx]
            probe_maps = torch.from_numpy(probe_maps_all[idx]).permute(0, 3, 1, 2)
            target_maps = torch.from_numpy(
                self._target_maps(probe_maps_all[idx], rng).astype(np.float32)
            ).permute(0, 3, 1, 2)

            x_disp = disp_net(torch.cat([x, target_maps], dim=1))
            pred_maps = self.extractor.extract_tensor(x_disp)
            x_adv, _, _ = self._distort(x_disp, pred_maps)

            loss_sim = minutiae_map_similarity_loss_t(target_maps, pred_maps)
            loss_sep = minutiae_map_separation_loss_t(pred_maps, probe_maps)
            loss_pix = pixel_consistency_loss_t(x, x_disp, x_adv)
            loss_g_gan = F.logsigmoid(-disc(x_adv)).mean()
            loss_g = (
                loss_g_gan
                + self.map_similarity_weight * loss_sim
                + self.map_separation_weight * loss_sep
                + self.pixel_weight * loss_pix
            )
            opt_g.zero_grad()
            opt_d.zero_grad()
            loss_g.backward()
            opt_g.step()

            gan_value = F.logsigmoid(disc(x)).mean() + F.logsigmoid(-disc(x_adv.detach())).mean()
            loss_d = -gan_value
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()

            row = {
                "step": step,
                "loss_g": float(loss_g.detach()),
                "loss_d": float(loss_d.detach()),
                "loss_map_sim": float(loss_sim.detach()),
                "loss_map_sep": float(loss_sep.detach()),
                "loss_pixel": float(loss_pix.detach()),
                "loss_g_gan": float(loss_g_gan.detach()),
            }
            log_rows.append(row)
            if not all(np.isfinite(v) for k, v in row.items() if k != "step"):
                from ..advgen import TrainingDiverged

                raise TrainingDiverged(step, last_checkpoint)

            if self.checkpoint_every and (step + 1) % self.checkpoint_every == 0 and self.checkpoint_dir:
                last_checkpoint = Path(self.checkpoint_dir) / f"fp_attack_step{step + 1:06d}.ckpt"
                self._persist(last_checkpoint, disp_net, dist_net, disc, opt_g, opt_d, rng, step + 1)

        for net in (disp_net, dist_net, disc):
            net.eval()
            for p in net.parameters():
                p.requires_grad_(False)
        self.loss_log_ = log_rows
        self.final_step_ = self.steps
        self.image_shape_ = (h, w, 1)
        if self.log_path:
            from ..advgen import write_training_log

            write_training_log(self.log_path, log_rows)
        return self

    # -- inference ------------------------------------------------------------

    def _require_fitted(self):
        if not hasattr(self, "displacement_net_"):
            raise RuntimeError("attack is not trained; call fit or load first")

    def displace(self, X, seed=None) -> np.ndarray:
        """Displacement stage only: move minutiae onto a seeded target map."""
        self._require_fitted()
        X = self._check_images(X)
        rng = np.random.default_rng(
            derive_seed(self.seed if seed is None else seed, "fp_attack.transform")
        )
        x = to_nchw(X)
        with torch.no_grad():
            probe_maps = self.extractor.extract_tensor(x).permute(0, 2, 3, 1).numpy()
            targets = to_nchw(self._target_maps(probe_maps, rng).astype(np.float32))
            x_disp = self.displacement_net_(torch.cat([x, targets], dim=1))
        return to_nhwc(x_disp)

    def control_points(self, X, seed=None):
        """Distortion stage inputs: (control points, displacements) per image."""
        self._require_fitted()
        X = self._check_images(self.displace(X, seed=seed))
        x_disp = to_nchw(X)
        with torch.no_grad():
            maps = self.extractor.extract_tensor(x_disp)
            cps = self.distortion_net_(torch.cat([x_disp, maps], dim=1))
            disps = self.distortion_extent * self.field_(cps)
        return cps.numpy(), disps.numpy()

    def transform(self, X, seed=None) -> np.ndarray:
        """Full attack: displacement followed by TPS distortion."""
        self._require_fitted()
        X = self._check_images(X)
        x_disp = to_nchw(self.displace(X, seed=seed))
        with torch.no_grad():
            maps = self.extractor.extract_tensor(x_disp)
            x_adv, _, _ = self._distort(x_disp, maps)
        return to_nhwc(torch.clamp(x_adv, -1.0, 1.0))

    # -- persistence ----------------------------------------------------------

    def _headers(self, step):
        return {
            "kind": "fp_attack",
            "step": step,
            "displacement_net": self.displacement_net_.config,
            "distortion_net": self.distortion_net_.config,
            "discriminator": self.discriminator_.config,
            "params": {
                "steps": self.steps,
                "batch_size": self.batch_size,
                "learning_rate": self.learning_rate,
                "adam_beta1": self.adam_beta1,
                "adam_beta2": self.adam_beta2,
                "map_similarity_weight": self.map_similarity_weight,
                "map_separation_weight": self.map_separation_weight,
                "pixel_weight": self.pixel_weight,
                "displacement_distance": self.displacement_distance,
                "n_control_points": self.n_control_points,
                "distortion_extent": self.distortion_extent,
                "detection_threshold": self.detection_threshold,
                "base_channels": self.base_channels,
                "seed": self.seed,
            },
            "field_size": self.field_.size,
        }

    def _persist(self, path, disp_net, dist_net, disc, opt_g, opt_d, rng, step):
        header = self._headers(step)
        rng_header, rng_arrays = ckpt.rng_state_arrays(rng)
        header.update(rng_header)
        arrays = {}
        arrays.update(ckpt.module_to_arrays(disp_net, "gdisp"))
        arrays.update(ckpt.module_to_arrays(dist_net, "gdist"))
        arrays.update(ckpt.module_to_arrays(disc, "d"))
        arrays.update(ckpt.optimizer_to_arrays(opt_g, "optg"))
        arrays.update(ckpt.optimizer_to_arrays(opt_d, "optd"))
        arrays.update(rng_arrays)
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        ckpt.save_checkpoint(path, header, arrays)

    def _restore(self, path, disp_net, dist_net, disc, opt_g, opt_d, rng) -> int:
        header, arrays = ckpt.load_checkpoint(path)
        if header.get("kind") != "fp_attack":
            raise ValueError(f"not a fingerprint attack checkpoint: {path}")
        ckpt.module_from_arrays(disp_net, arrays, "gdisp")
        ckpt.module_from_arrays(dist_net, arrays, "gdist")
        ckpt.module_from_arrays(disc, arrays, "d")
        ckpt.optimizer_from_arrays(opt_g, arrays, "optg")
        ckpt.optimizer_from_arrays(opt_d, arrays, "optd")
        ckpt.restore_rng_state(header, arrays, rng)
        return int(header["step"])

    def save(self, path) -> None:
        self._require_fitted()
        arrays = {}
        arrays.update(ckpt.module_to_arrays(self.displacement_net_, "gdisp"))
        arrays.update(ckpt.module_to_arrays(self.distortion_net_, "gdist"))
        arrays.update(ckpt.module_to_arrays(self.discriminator_, "d"))
        ckpt.save_checkpoint(path, self._headers(getattr(self, "final_step_", None)), arrays)

    @classmethod
    def load(cls, path, extractor: MinutiaeExtractor) -> "FingerprintAttack":
        header, arrays = ckpt.load_checkpoint(path)
        if header.get("kind") != "fp_attack":
            raise ValueError(f"not a fingerprint attack checkpoint: {path}")
        est = cls(extractor=extractor, **header["params"])
        disp_net = DisplacementNet(header["displacement_net"]["base_channels"])
        dist_net = DistortionNet(
            header["distortion_net"]["n_control_points"], header["distortion_net"]["base_channels"]
        )
        disc = FpDiscriminator(header["discriminator"]["base_channels"])
        ckpt.module_from_arrays(disp_net, arrays, "gdisp")
        ckpt.module_from_arrays(dist_net, arrays, "gdist")
        ckpt.module_from_arrays(disc, arrays, "d")
        for net in (disp_net, dist_net, disc):
            net.eval()
            for p in net.parameters():
                p.requires_grad_(False)
        est.displacement_net_ = disp_net
        est.distortion_net_ = dist_net
        est.discriminator_ = disc
        est.field_ = SmoothDisplacementField(header["params"]["seed"], header["field_size"])
        est.image_shape_ = None
        est.loss_log_ = []
        est.final_step_ = header.get("step")
        return est
