"""GAN-based adversarial face generation: mask generator, patch
discriminator, the three training losses, the alternating training loop,
and inference-time synthesis for obfuscation and impersonation.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator

from . import checkpoint as ckpt
from .core import check_image_batch, clamp_compose_t, derive_seed, to_nchw, to_nhwc
from .matcher import Matcher

MODES = ("obfuscation", "impersonation")
DEFAULT_MIN_NORM = {"obfuscation": 3.0, "impersonation": 8.0}


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, last_checkpoint=None):
        super().__init__(f"training diverged at step {step}")
        self.step = step
        self.last_checkpoint = last_checkpoint


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, 3, 1, 1),
            nn.InstanceNorm2d(channels, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, 1, 1),
            nn.InstanceNorm2d(channels, affine=True),
        )

    def forward(self, x):
        return x + self.block(x)


class GeneratorNet(nn.Module):
    """Encoder / residual / decoder mask generator with a tanh output.

    Layout: 7x7 stride-1 stem, two stride-2 downsampling convs, residual
    blocks, two nearest-neighbor 2x upsampling stages with 5x5 convs, and a
    7x7 projection back to image channels. Fully convolutional, so any
    input size that survives two halvings works. Impersonation models take
    the probe and target concatenated channelwise.
    """

    def __init__(
        self,
        in_channels: int = 3,
        out_channels: int = 3,
        base_channels: int = 64,
        n_residual: int = 3,
    ):
        super().__init__()
        c = base_channels
        self.config = {
            "in_channels": in_channels,
            "out_channels": out_channels,
            "base_channels": base_channels,
            "n_residual": n_residual,
        }

        def down(cin, cout):
            return [
                nn.Conv2d(cin, cout, 4, stride=2, padding=1),
                nn.InstanceNorm2d(cout, affine=True),
                nn.ReLU(inplace=True),
            ]

        def up(cin, cout):
            return [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(cin, cout, 5, stride=1, padding=2),
                nn.InstanceNorm2d(cout, affine=True),
                nn.ReLU(inplace=True),
            ]

        layers = [
            nn.Conv2d(in_channels, c, 7, stride=1, padding=3),
            nn.InstanceNorm2d(c, affine=True),
            nn.ReLU(inplace=True),
        ]
        layers += down(c, 2 * c)
        layers += down(2 * c, 4 * c)
        layers += [ResidualBlock(4 * c) for _ in range(n_residual)]
        layers += up(4 * c, 2 * c)
        layers += up(2 * c, c)
        layers += [nn.Conv2d(c, out_channels, 7, stride=1, padding=3), nn.Tanh()]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


class DiscriminatorNet(nn.Module):
    """Stride-2 conv stack with a 1x1 head producing a grid of patch logits."""

    def __init__(self, in_channels: int = 3, base_channels: int = 32, n_blocks: int = 5):
        super().__init__()
        c = base_channels
        widths = [c * 2**k for k in range(n_blocks)]
        self.config = {
            "in_channels": in_channels,
            "base_channels": base_channels,
            "n_blocks": n_blocks,
        }
        layers = []
        prev = in_channels
        for w in widths:
            layers += [
                nn.Conv2d(prev, w, 4, stride=2, padding=1),
                nn.BatchNorm2d(w),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            prev = w
        layers.append(nn.Conv2d(prev, 3, 1, stride=1, padding=0))
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


# ---------------------------------------------------------------------------
# losses (torch paths used in training, numpy wrappers for the public API)


def perturbation_loss_t(masks: torch.Tensor, min_norm: float) -> torch.Tensor:
    """Mean over the batch of max(min_norm, per-image L2 norm of the mask)."""
    if masks.shape[0] == 0:
        raise ValueError("batch is empty")
    norms = masks.flatten(1).norm(dim=1)
    return torch.clamp(norms, min=min_norm).mean()


def perturbation_loss(masks: np.ndarray, min_norm: float) -> float:
    masks = np.asarray(masks)
    if masks.ndim == 3:
        masks = masks[None]
    return float(perturbation_loss_t(torch.from_numpy(masks).flatten(1), min_norm))


def identity_loss_obfuscation_t(matcher: Matcher, x: torch.Tensor, x_adv: torch.Tensor) -> torch.Tensor:
    """Mean cosine between probe and adversarial embeddings (to be minimized)."""
    ea = matcher.embed_tensor(x)
    eb = matcher.embed_tensor(x_adv)
    return (ea * eb).sum(dim=1).mean()


def identity_loss_impersonation_t(matcher: Matcher, y: torch.Tensor, x_adv: torch.Tensor) -> torch.Tensor:
    """Mean of 1 - cosine between target and adversarial embeddings."""
    ea = matcher.embed_tensor(y)
    eb = matcher.embed_tensor(x_adv)
    return (1.0 - (ea * eb).sum(dim=1)).mean()


def identity_loss_obfuscation(matcher: Matcher, x: np.ndarray, x_adv: np.ndarray) -> float:
    x, x_adv = check_image_batch(x), check_image_batch(x_adv)
    with torch.no_grad():
        return float(
            identity_loss_obfuscation_t(matcher, to_nchw(x, matcher.dtype), to_nchw(x_adv, matcher.dtype))
        )


def identity_loss_impersonation(matcher: Matcher, y: np.ndarray, x_adv: np.ndarray) -> float:
    y, x_adv = check_image_batch(y), check_image_batch(x_adv)
    with torch.no_grad():
        return float(
            identity_loss_impersonation_t(matcher, to_nchw(y, matcher.dtype), to_nchw(x_adv, matcher.dtype))
        )


def gan_value_t(disc: DiscriminatorNet, x_real: torch.Tensor, x_adv: torch.Tensor) -> torch.Tensor:
    """E[log D(real)] + E[log(1 - D(fake))], averaged over the patch grid."""
    real_logits = disc(x_real)
    fake_logits = disc(x_adv)
    return F.logsigmoid(real_logits).mean() + F.logsigmoid(-fake_logits).mean()


def generator_gan_loss_t(disc: DiscriminatorNet, x_adv: torch.Tensor) -> torch.Tensor:
    """E[log(1 - D(fake))], the generator's adversarial term."""
    return F.logsigmoid(-disc(x_adv)).mean()


def gan_losses(disc: DiscriminatorNet, x_real: np.ndarray, x_adv: np.ndarray):
    """(discriminator loss, generator adversarial loss) on numpy batches.

    Runs the discriminator in eval mode so the numbers are reproducible
    outside a training step.
    """
    x_real, x_adv = check_image_batch(x_real), check_image_batch(x_adv)
    if x_real.shape != x_adv.shape:
        raise ValueError("batches must be aligned")
    was_training = disc.training
    disc.eval()
    try:
        with torch.no_grad():
            value = gan_value_t(disc, to_nchw(x_real), to_nchw(x_adv))
            g_gan = generator_gan_loss_t(disc, to_nchw(x_adv))
    finally:
        disc.train(was_training)
    return float(-value), float(g_gan)


def patch_probabilities(disc: DiscriminatorNet, batch: np.ndarray) -> np.ndarray:
    """Per-patch real probabilities, for loss recomputation and inspection."""
    batch = check_image_batch(batch)
    was_training = disc.training
    disc.eval()
    try:
        with torch.no_grad():
            probs = torch.sigmoid(disc(to_nchw(batch)))
    finally:
        disc.train(was_training)
    return probs.numpy()


def saliency_mask_threshold(mask: np.ndarray, threshold: float = 0.40) -> np.ndarray:
    """Boolean map of pixels whose perturbation magnitude exceeds the threshold."""
    return np.abs(np.asarray(mask)) > threshold


# ---------------------------------------------------------------------------
# training


@dataclass
class AdvGenTrainConfig:
    mode: str = "obfuscation"
    steps: int = 2000
    batch_size: int = 32
    learning_rate: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    identity_weight: float = 10.0
    perturbation_weight: float = 1.0
    min_perturbation_norm: float | None = None
    base_channels: int = 64
    disc_base_channels: int = 32
    n_residual_blocks: int = 3
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.min_perturbation_norm is None:
            self.min_perturbation_norm = DEFAULT_MIN_NORM[self.mode]
        for name in ("steps", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in (
            "learning_rate",
            "adam_beta1",
            "adam_beta2",
            "identity_weight",
            "perturbation_weight",
            "min_perturbation_norm",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


class AdvFaceGenerator(BaseEstimator):
    """Trainable adversarial mask generator following the estimator protocol.

    ``fit(X, y)`` runs the alternating generator/discriminator loop against
    the supplied white-box matcher; ``transform(X)`` synthesizes adversarial
    images from the trained generator. ``y`` carries identity labels and is
    only required for impersonation training (targets are drawn from other
    identities).
    """

    def __init__(
        self,
        matcher: Matcher = None,
        mode: str = "obfuscation",
        steps: int = 2000,
        batch_size: int = 32,
        learning_rate: float = 1e-4,
        adam_beta1: float = 0.5,
        adam_beta2: float = 0.9,
        identity_weight: float = 10.0,
        perturbation_weight: float = 1.0,
        min_perturbation_norm: float | None = None,
        base_channels: int = 64,
        disc_base_channels: int = 32,
        n_residual_blocks: int = 3,
        seed: int = 0,
        checkpoint_every: int = 0,
        checkpoint_dir=None,
        log_path=None,
    ):
        self.matcher = matcher
        self.mode = mode
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.identity_weight = identity_weight
        self.perturbation_weight = perturbation_weight
        self.min_perturbation_norm = min_perturbation_norm
        self.base_channels = base_channels
        self.disc_base_channels = disc_base_channels
        self.n_residual_blocks = n_residual_blocks
        self.seed = seed
        self.checkpoint_every = checkpoint_every
        self.checkpoint_dir = checkpoint_dir
        self.log_path = log_path

    # -- config plumbing ----------------------------------------------------

    def _train_config(self) -> AdvGenTrainConfig:
        return AdvGenTrainConfig(
            mode=self.mode,
            steps=self.steps,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            identity_weight=self.identity_weight,
            perturbation_weight=self.perturbation_weight,
            min_perturbation_norm=self.min_perturbation_norm,
            base_channels=self.base_channels,
            disc_base_channels=self.disc_base_channels,
            n_residual_blocks=self.n_residual_blocks,
            seed=self.seed,
            checkpoint_every=self.checkpoint_every,
        )

    def _g_in_channels(self, image_channels: int) -> int:
        return 2 * image_channels if self.mode == "impersonation" else image_channels

    # -- training -----------------------------------------------------------

    def fit(self, X, y=None, resume_from=None):
        if self.matcher is None:
            raise ValueError("a trained matcher is required for fit")
        if self.mode == "impersonation" and y is None:
            raise ValueError("impersonation training needs identity labels")
        cfg = self._train_config()
        X = check_image_batch(np.asarray(X, dtype=np.float32))
        n, h, w, c = X.shape

        torch.manual_seed(derive_seed(cfg.seed, "advgen.init"))
        rng = np.random.default_rng(derive_seed(cfg.seed, "advgen.batches"))
        generator = GeneratorNet(self._g_in_channels(c), c, cfg.base_channels, cfg.n_residual_blocks)
        disc = DiscriminatorNet(c, cfg.disc_base_channels)
        opt_g = torch.optim.Adam(
            generator.parameters(), lr=cfg.learning_rate, betas=(cfg.adam_beta1, cfg.adam_beta2)
        )
        opt_d = torch.optim.Adam(
            disc.parameters(), lr=cfg.learning_rate, betas=(cfg.adam_beta1, cfg.adam_beta2)
        )
        start_step = 0
        if resume_from is not None:
            start_step = self._restore(resume_from, generator, disc, opt_g, opt_d, rng)

        images = to_nchw(X)
        labels = list(y) if y is not None else None
        if labels is not None and len(labels) != n:
            raise ValueError("labels must align with images")
        by_identity = {}
        if labels is not None:
            for i, ident in enumerate(labels):
                by_identity.setdefault(ident, []).append(i)
            if self.mode == "impersonation" and len(by_identity) < 2:
                raise ValueError("impersonation training needs at least two identities")

        log_rows = []
        last_checkpoint = None
        generator.train()
        disc.train()
        for step in range(start_step, cfg.steps):
            idx = rng.choice(n, size=min(cfg.batch_size, n), replace=False)
            x = images[idx]
            if self.mode == "impersonation":
                tgt_idx = self._sample_targets(rng, [labels[i] for i in idx], by_identity)
                y_batch = images[tgt_idx]
                mask = generator(torch.cat([x, y_batch], dim=1))
            else:
                y_batch = None
                mask = generator(x)
            x_adv = clamp_compose_t(x, mask)

            loss_prt = perturbation_loss_t(mask, cfg.min_perturbation_norm)
            if self.mode == "impersonation":
                loss_idt = identity_loss_impersonation_t(self.matcher, y_batch, x_adv)
            else:
                loss_idt = identity_loss_obfuscation_t(self.matcher, x, x_adv)
            loss_g_gan = generator_gan_loss_t(disc, x_adv)
            loss_g = loss_g_gan + cfg.identity_weight * loss_idt + cfg.perturbation_weight * loss_prt

            opt_g.zero_grad()
            opt_d.zero_grad()
            loss_g.backward()
            opt_g.step()

            gan_value = gan_value_t(disc, x, x_adv.detach())
            loss_d = -gan_value
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()

            row = {
                "step": step,
                "loss_g": float(loss_g.detach()),
                "loss_d": float(loss_d.detach()),
                "loss_identity": float(loss_idt.detach()),
                "loss_perturbation": float(loss_prt.detach()),
                "loss_g_gan": float(loss_g_gan.detach()),
            }
            log_rows.append(row)
            if not all(np.isfinite(v) for k, v in row.items() if k != "step"):
                raise TrainingDiverged(step, last_checkpoint)

            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0 and self.checkpoint_dir:
                last_checkpoint = Path(self.checkpoint_dir) / f"advgen_step{step + 1:06d}.ckpt"
                self._persist(last_checkpoint, generator, disc, opt_g, opt_d, rng, step + 1, (h, w, c))

        generator.eval()
        for p in generator.parameters():
            p.requires_grad_(False)
        self.generator_ = generator
        self.discriminator_ = disc.eval()
        self.image_shape_ = (h, w, c)
        self.loss_log_ = log_rows
        self.final_step_ = cfg.steps
        if self.log_path:
            write_training_log(self.log_path, log_rows)
        return self

    @staticmethod
    def _sample_targets(rng, batch_labels, by_identity) -> list:
        identities = sorted(by_identity)
        out = []
        for ident in batch_labels:
            others = [i for i in identities if i != ident]
            chosen = others[int(rng.integers(len(others)))]
            members = by_identity[chosen]
            out.append(members[int(rng.integers(len(members)))])
        return out

    # -- inference ----------------------------------------------------------

    def _require_fitted(self):
        if not hasattr(self, "generator_"):
            raise RuntimeError("generator is not trained; call fit or load first")

    def adversarial_mask(self, X, targets=None) -> np.ndarray:
        self._require_fitted()
        X = check_image_batch(np.asarray(X, dtype=np.float32))
        x = to_nchw(X)
        if self.mode == "impersonation":
            if targets is None:
                raise ValueError("impersonation synthesis needs target images")
            t = to_nchw(check_image_batch(np.asarray(targets, dtype=np.float32)))
            if t.shape != x.shape:
                raise ValueError("targets must align with probes")
            inp = torch.cat([x, t], dim=1)
        else:
            if targets is not None:
                raise ValueError("obfuscation models take no target images")
            inp = x
        with torch.no_grad():
            mask = self.generator_(inp)
        return to_nhwc(mask)

    def transform(self, X, targets=None) -> np.ndarray:
        X = check_image_batch(np.asarray(X, dtype=np.float32))
        masks = self.adversarial_mask(X, targets=targets)
        out = to_nhwc(clamp_compose_t(to_nchw(X), to_nchw(masks)))
        return out

    def synthesize(self, x: np.ndarray, target: np.ndarray = None):
        """One-image synthesis returning (x_adv, mask, seconds)."""
        start = time.perf_counter()
        targets = None if target is None else np.asarray(target)[None]
        mask = self.adversarial_mask(np.asarray(x)[None], targets=targets)[0]
        x_adv = self.transform(np.asarray(x)[None], targets=targets)[0]
        return x_adv, mask, time.perf_counter() - start

    # -- persistence ----------------------------------------------------------

    def _persist(self, path, generator, disc, opt_g, opt_d, rng, step, image_shape):
        header = {
            "kind": "advgen",
            "mode": self.mode,
            "step": step,
            "image_shape": list(image_shape),
            "generator": generator.config,
            "discriminator": disc.config,
            "train_config": {
                k: v for k, v in self._train_config().__dict__.items() if not k.startswith("_")
            },
        }
        rng_header, rng_arrays = ckpt.rng_state_arrays(rng)
        header.update(rng_header)
        arrays = {}
        arrays.update(ckpt.module_to_arrays(generator, "g"))
        arrays.update(ckpt.module_to_arrays(disc, "d"))
        arrays.update(ckpt.optimizer_to_arrays(opt_g, "optg"))
        arrays.update(ckpt.optimizer_to_arrays(opt_d, "optd"))
        arrays.update(rng_arrays)
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        ckpt.save_checkpoint(path, header, arrays)

    def _restore(self, path, generator, disc, opt_g, opt_d, rng) -> int:
        header, arrays = ckpt.load_checkpoint(path)
        if header.get("kind") != "advgen":
            raise ValueError(f"not an adversarial-generator checkpoint: {path}")
        ckpt.module_from_arrays(generator, arrays, "g")
        ckpt.module_from_arrays(disc, arrays, "d")
        ckpt.optimizer_from_arrays(opt_g, arrays, "optg")
        ckpt.optimizer_from_arrays(opt_d, arrays, "optd")
        ckpt.restore_rng_state(header, arrays, rng)
        return int(header["step"])

    def save(self, path) -> None:
        self._require_fitted()
        header = {
            "kind": "advgen",
            "mode": self.mode,
            "step": getattr(self, "final_step_", None),
            "image_shape": list(self.image_shape_),
            "generator": self.generator_.config,
            "discriminator": self.discriminator_.config,
            "train_config": {
                k: v for k, v in self._train_config().__dict__.items() if not k.startswith("_")
            },
        }
        arrays = {}
        arrays.update(ckpt.module_to_arrays(self.generator_, "g"))
        arrays.update(ckpt.module_to_arrays(self.discriminator_, "d"))
        ckpt.save_checkpoint(path, header, arrays)

    @classmethod
    def load(cls, path, matcher: Matcher = None) -> "AdvFaceGenerator":
        header, arrays = ckpt.load_checkpoint(path)
        if header.get("kind") != "advgen":
            raise ValueError(f"not an adversarial-generator checkpoint: {path}")
        cfg = dict(header["train_config"])
        est = cls(matcher=matcher, **cfg, checkpoint_dir=None, log_path=None)
        g_cfg = header["generator"]
        generator = GeneratorNet(
            g_cfg["in_channels"], g_cfg["out_channels"], g_cfg["base_channels"], g_cfg["n_residual"]
        )
        ckpt.module_from_arrays(generator, arrays, "g")
        generator.eval()
        for p in generator.parameters():
            p.requires_grad_(False)
        d_cfg = header["discriminator"]
        disc = DiscriminatorNet(d_cfg["in_channels"], d_cfg["base_channels"], d_cfg.get("n_blocks", 5))
        ckpt.module_from_arrays(disc, arrays, "d")
        est.generator_ = generator
        est.discriminator_ = disc.eval()
        est.image_shape_ = tuple(header["image_shape"])
        est.loss_log_ = []
        est.final_step_ = header.get("step")
        return est


def write_training_log(path, rows) -> None:
    if not rows:
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def read_training_log(path) -> list:
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]
