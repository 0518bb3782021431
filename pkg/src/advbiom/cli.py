"""Command-line entry point.

Subcommands: ``synth-data``, ``train-face``, ``train-fp``, ``attack``,
``evaluate``, ``report``. Runs are driven by a strict TOML config (unknown
keys are rejected) with one mandatory root seed; the checkpoint/dataset
cache directory comes from the config or the ``ADVBIOM_CACHE`` environment
variable.

Exit codes: 0 success, 1 runtime failure (e.g. every probe unreadable),
2 invalid config or missing inputs, 3 training divergence, 4 matcher
adapter failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

import tomlkit

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_ADAPTER = 4


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "run": {"modality", "mode", "attack", "seed", "image_size"},
    "paths": {
        "dataset",
        "cache_dir",
        "matcher_checkpoint",
        "generator_checkpoint",
        "extractor_checkpoint",
        "target_image",
    },
    "matcher": {"embedding_dim", "base_channels", "steps", "batch_size", "learning_rate"},
    "advgen": {
        "steps",
        "batch_size",
        "learning_rate",
        "adam_beta1",
        "adam_beta2",
        "identity_weight",
        "perturbation_weight",
        "min_perturbation_norm",
        "base_channels",
        "disc_base_channels",
        "n_residual_blocks",
        "checkpoint_every",
    },
    "fgsm": {"epsilon"},
    "pgd": {"epsilon", "step_size", "max_iters", "success_threshold"},
    "extractor": {
        "steps",
        "base_channels",
        "batch_size",
        "learning_rate",
        "n_train_prints",
        "n_minutiae",
    },
    "fp_attack": {
        "steps",
        "batch_size",
        "learning_rate",
        "adam_beta1",
        "adam_beta2",
        "map_similarity_weight",
        "map_separation_weight",
        "pixel_weight",
        "displacement_distance",
        "n_control_points",
        "distortion_extent",
        "detection_threshold",
        "base_channels",
        "checkpoint_every",
    },
    "evaluate": {"far_level", "n_genuine", "n_imposter", "adapter_command"},
}

_DEFAULTS = {
    "run": {"modality": "face", "mode": "obfuscation", "attack": "advgen", "image_size": 64},
    "matcher": {
        "embedding_dim": 64,
        "base_channels": 16,
        "steps": 1200,
        "batch_size": 32,
        "learning_rate": 1e-3,
    },
    "advgen": {"steps": 2000, "batch_size": 16, "base_channels": 16, "disc_base_channels": 16},
    "fgsm": {"epsilon": 0.06},
    "pgd": {"epsilon": 0.06, "step_size": 0.015, "max_iters": 20},
    "extractor": {"steps": 1500, "n_train_prints": 120, "n_minutiae": 12},
    "fp_attack": {"steps": 1200, "batch_size": 8},
    "evaluate": {"far_level": 0.01, "n_genuine": 200, "n_imposter": 400},
}


@dataclass
class RunConfig:
    """Validated run configuration; every section is a plain dict."""

    seed: int
    sections: dict = field(default_factory=dict)

    @property
    def run(self) -> dict:
        return self.sections["run"]

    def section(self, name: str) -> dict:
        return self.sections.get(name, {})

    def path(self, key: str):
        value = self.sections.get("paths", {}).get(key)
        return Path(value) if value else None

    def cache_dir(self) -> Path:
        configured = self.sections.get("paths", {}).get("cache_dir")
        if configured:
            return Path(configured)
        env = os.environ.get("ADVBIOM_CACHE")
        return Path(env) if env else Path("advbiom_cache")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        for section, keys in data.items():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(keys, dict):
                raise ConfigError(f"config section {section!r} must be a table")
            for key in keys:
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown key {section}.{key}")
        run = data.get("run", {})
        if "seed" not in run:
            raise ConfigError("run.seed is mandatory")
        merged = {}
        for section in _SCHEMA:
            merged[section] = dict(_DEFAULTS.get(section, {}))
            merged[section].update(data.get(section, {}))
        if merged["run"]["modality"] not in ("face", "fingerprint"):
            raise ConfigError("run.modality must be face or fingerprint")
        if merged["run"]["mode"] not in ("obfuscation", "impersonation"):
            raise ConfigError("run.mode must be obfuscation or impersonation")
        if merged["run"]["attack"] not in ("fgsm", "pgd", "advgen"):
            raise ConfigError("run.attack must be fgsm, pgd, or advgen")
        return cls(seed=int(run["seed"]), sections=merged)

    @classmethod
    def from_toml(cls, path) -> "RunConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def to_dict(self) -> dict:
        out = {}
        for section, values in self.sections.items():
            kept = {k: v for k, v in values.items() if v is not None}
            if kept:
                out[section] = kept
        return out

    def to_toml(self, path) -> None:
        doc = tomlkit.document()
        for section, values in self.to_dict().items():
            table = tomlkit.table()
            for key, value in sorted(values.items()):
                table[key] = value
            doc[section] = table
        with open(path, "w") as fh:
            fh.write(tomlkit.dumps(doc))


def _require_dataset(config: RunConfig) -> Path:
    dataset = config.path("dataset")
    if dataset is None or not dataset.is_dir():
        raise ConfigError(f"dataset path missing or not a directory: {dataset}")
    return dataset


def _load_or_train_matcher(config: RunConfig, train_manifest):
    from .datasets import load_all_images
    from .matcher import Matcher, ToyMatcherTrainer

    explicit = config.path("matcher_checkpoint")
    cache = config.cache_dir() / "matcher.ckpt"
    for candidate in (explicit, cache):
        if candidate is not None and candidate.exists():
            return Matcher.load(candidate)
    grayscale = config.run["modality"] == "fingerprint"
    X, y = load_all_images(train_manifest, grayscale=grayscale)
    params = dict(config.section("matcher"))
    trainer = ToyMatcherTrainer(seed=config.seed, **params).fit(X, y)
    target = explicit if explicit is not None else cache
    target.parent.mkdir(parents=True, exist_ok=True)
    trainer.matcher_.save(target)
    return trainer.matcher_


def _load_or_train_extractor(config: RunConfig):
    from .core import derive_seed
    from .fingerprint.minutiae import MinutiaeExtractor
    from .fingerprint.synth import blank_fingerprint, synth_fingerprint
    from .metrics import FINGERPRINT_TYPES

    explicit = config.path("extractor_checkpoint")
    cache = config.cache_dir() / "extractor.ckpt"
    for candidate in (explicit, cache):
        if candidate is not None and candidate.exists():
            return MinutiaeExtractor.load(candidate)
    section = dict(config.section("extractor"))
    n_prints = section.pop("n_train_prints")
    n_minutiae = section.pop("n_minutiae")
    size = int(config.run["image_size"])
    seed = derive_seed(config.seed, "cli.extractor_data")
    images, labels = [], []
    for s in range(n_prints):
        img, pts = synth_fingerprint(
            seed + s,
            size=size,
            finger_type=FINGERPRINT_TYPES[s % len(FINGERPRINT_TYPES)],
            n_minutiae=n_minutiae,
        )
        images.append(img)
        labels.append(pts)
    for s in range(max(4, n_prints // 10)):
        images.append(blank_fingerprint(seed + n_prints + s, size=size))
        labels.append([])
    extractor = MinutiaeExtractor(seed=config.seed, **section).fit(np.stack(images), labels)
    target = explicit if explicit is not None else cache
    target.parent.mkdir(parents=True, exist_ok=True)
    extractor.save(target)
    return extractor


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_data(args) -> int:
    from .datasets import synth_identity_faces
    from .fingerprint.synth import synth_fingerprint_dataset

    if args.modality == "face":
        manifest = synth_identity_faces(
            args.out, n_ids=args.n_ids, per_id=args.per_id, seed=args.seed, size=args.size
        )
    else:
        manifest = synth_fingerprint_dataset(
            args.out, n_ids=args.n_ids, per_id=args.per_id, seed=args.seed, size=args.size
        )
    print(f"wrote {len(manifest.entries)} images under {args.out}")
    return EXIT_OK


def cmd_train_face(args) -> int:
    from .advgen import AdvFaceGenerator
    from .datasets import load_all_images, scan_dataset, split_manifest

    config = RunConfig.from_toml(args.config)
    dataset = _require_dataset(config)
    manifest = scan_dataset(dataset)
    train_m, _ = split_manifest(manifest, test_fraction=1 / 3, seed=config.seed)
    matcher = _load_or_train_matcher(config, train_m)

    cache = config.cache_dir()
    cache.mkdir(parents=True, exist_ok=True)
    X, y = load_all_images(train_m)
    generator = AdvFaceGenerator(
        matcher=matcher,
        mode=config.run["mode"],
        seed=config.seed,
        checkpoint_dir=cache / "advgen_checkpoints",
        log_path=cache / "advgen_training_log.csv",
        **config.section("advgen"),
    )
    generator.fit(X, y, resume_from=args.resume)
    out = config.path("generator_checkpoint") or (cache / "advgen.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    generator.save(out)
    print(f"checkpoint: {out}")
    print(f"training log: {cache / 'advgen_training_log.csv'}")
    return EXIT_OK


def cmd_train_fp(args) -> int:
    from .datasets import load_all_images, scan_dataset
    from .fingerprint.attack import FingerprintAttack

    config = RunConfig.from_toml(args.config)
    dataset = _require_dataset(config)
    manifest = scan_dataset(dataset)
    extractor = _load_or_train_extractor(config)

    cache = config.cache_dir()
    cache.mkdir(parents=True, exist_ok=True)
    X, _ = load_all_images(manifest, grayscale=True)
    attack = FingerprintAttack(
        extractor=extractor,
        seed=config.seed,
        checkpoint_dir=cache / "fp_checkpoints",
        log_path=cache / "fp_training_log.csv",
        **config.section("fp_attack"),
    )
    attack.fit(X, resume_from=args.resume)
    out = config.path("generator_checkpoint") or (cache / "fp_attack.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    attack.save(out)
    print(f"checkpoint: {out}")
    print(f"training log: {cache / 'fp_training_log.csv'}")
    return EXIT_OK


def _iter_probe_files(input_dir: Path):
    for path in sorted(input_dir.rglob("*")):
        if path.suffix.lower() in (".png", ".jpg", ".jpeg") and path.is_file():
            rel = path.relative_to(input_dir)
            identity = rel.parts[0] if len(rel.parts) > 1 else ""
            yield identity, path


def _build_attacker(config: RunConfig, matcher, extractor):
    from .advgen import AdvFaceGenerator
    from .fingerprint.attack import FingerprintAttack
    from .grad_attacks import FgsmAttack, PgdAttack

    kind = config.run["attack"]
    if kind == "fgsm":
        return FgsmAttack(matcher=matcher, **config.section("fgsm"))
    if kind == "pgd":
        return PgdAttack(matcher=matcher, **config.section("pgd"))
    ckpt_path = config.path("generator_checkpoint")
    if config.run["modality"] == "fingerprint":
        default = config.cache_dir() / "fp_attack.ckpt"
        path = ckpt_path or default
        if not path.exists():
            raise ConfigError(f"fingerprint attack checkpoint not found: {path}")
        return FingerprintAttack.load(path, extractor=extractor)
    default = config.cache_dir() / "advgen.ckpt"
    path = ckpt_path or default
    if not path.exists():
        raise ConfigError(f"generator checkpoint not found: {path}")
    return AdvFaceGenerator.load(path, matcher=matcher)


def cmd_attack(args) -> int:
    from .core import denormalize_image, load_image, normalize_image, save_image_png
    from .fingerprint.minutiae import MinutiaeExtractor
    from .matcher import Matcher

    config = RunConfig.from_toml(args.config)
    input_dir = Path(args.input_dir)
    output_dir = Path(args.output_dir)
    if not input_dir.is_dir():
        raise ConfigError(f"input dir {input_dir} does not exist")
    output_dir.mkdir(parents=True, exist_ok=True)

    modality = config.run["modality"]
    grayscale = modality == "fingerprint"
    kind = config.run["attack"]
    if args.attack:
        kind = args.attack
        config.sections["run"]["attack"] = kind
    if args.eps is not None:
        config.sections["fgsm"]["epsilon"] = args.eps
        config.sections["pgd"]["epsilon"] = args.eps
    if args.step is not None:
        config.sections["pgd"]["step_size"] = args.step
    if args.iters is not None:
        config.sections["pgd"]["max_iters"] = args.iters

    matcher = None
    extractor = None
    if kind in ("fgsm", "pgd") or modality == "face":
        matcher_path = config.path("matcher_checkpoint") or (config.cache_dir() / "matcher.ckpt")
        if kind in ("fgsm", "pgd") and not matcher_path.exists():
            raise ConfigError(f"matcher checkpoint not found: {matcher_path}")
        if matcher_path.exists():
            matcher = Matcher.load(matcher_path)
    if modality == "fingerprint" and kind == "advgen":
        ex_path = config.path("extractor_checkpoint") or (config.cache_dir() / "extractor.ckpt")
        if not ex_path.exists():
            raise ConfigError(f"extractor checkpoint not found: {ex_path}")
        extractor = MinutiaeExtractor.load(ex_path)

    attacker = _build_attacker(config, matcher, extractor)

    target = None
    if config.run["mode"] == "impersonation":
        target_path = config.path("target_image")
        if target_path is None or not target_path.exists():
            raise ConfigError("impersonation attacks need paths.target_image")
        target = normalize_image(load_image(target_path, grayscale=grayscale))

    produced = failures = 0
    for identity, path in _iter_probe_files(input_dir):
        try:
            probe = normalize_image(load_image(path, grayscale=grayscale))
        except Exception as exc:  # unreadable image: skip with warning
            print(f"warning: skipping unreadable probe {path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        stem = f"{identity}__{path.stem}" if identity else path.stem
        start = time.perf_counter()
        meta = {
            "probe": str(path),
            "identity": identity,
            "attack": kind,
            "mode": config.run["mode"],
            "seed": config.seed,
        }
        if kind in ("fgsm", "pgd"):
            result = attacker.attack(probe, target=target)
            adv = result.x_adv
            meta.update(
                {
                    "score_before": result.score_before,
                    "score_after": result.score_after,
                    "iterations": result.iterations,
                    "zero_gradient": result.zero_gradient,
                    "linf": result.linf,
                    "l2": result.l2,
                }
            )
        else:
            targets = None if target is None else target[None]
            adv = attacker.transform(probe[None], **(
                {"targets": targets} if modality == "face" else {}
            ))[0]
            delta = adv - probe
            meta.update({"linf": float(np.abs(delta).max()), "l2": float(np.linalg.norm(delta))})
            if modality == "face":
                mask = attacker.adversarial_mask(probe[None], targets=targets)[0]
                mask_raw = np.floor((mask + 1.0) * 127.5 + 0.5).clip(0, 255).astype(np.uint8)
                save_image_png(output_dir / f"{stem}_mask.png", mask_raw)
            if matcher is not None:
                meta["score_before"] = float(matcher.score(probe, probe))
                meta["score_after"] = float(matcher.score(probe, adv))
        meta["seconds"] = time.perf_counter() - start
        save_image_png(output_dir / f"{stem}.png", denormalize_image(adv))
        with open(output_dir / f"{stem}.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        produced += 1
    print(f"attacked {produced} probes ({failures} skipped) -> {output_dir}")
    if produced == 0:
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .adapters import AdapterError, SubprocessMatcher
    from .core import load_image, normalize_image
    from .datasets import sample_pairs, scan_dataset
    from .matcher import Matcher
    from .metrics import (
        AttackReport,
        ScoreSet,
        distribution_summary,
        ssim,
        success_rate_obfuscation,
        success_rate_impersonation,
        threshold_at_far,
        write_scores_csv,
    )

    config = RunConfig.from_toml(args.config)
    attack_dir = Path(args.attack_dir)
    gallery_dir = Path(args.gallery_dir)
    if not attack_dir.is_dir() or not gallery_dir.is_dir():
        raise ConfigError("attack and gallery directories must exist")
    grayscale = config.run["modality"] == "fingerprint"
    eval_cfg = config.section("evaluate")

    adapter_command = eval_cfg.get("adapter_command")
    adapter = None
    matcher = None
    if adapter_command:
        adapter = SubprocessMatcher(adapter_command)

        def score_paths(a, b):
            return adapter.score_paths(a, b)

    else:
        matcher_path = config.path("matcher_checkpoint") or (config.cache_dir() / "matcher.ckpt")
        if not matcher_path.exists():
            raise ConfigError(f"matcher checkpoint not found: {matcher_path}")
        matcher = Matcher.load(matcher_path)

        def score_paths(a, b):
            ia = normalize_image(load_image(a, grayscale=grayscale))
            ib = normalize_image(load_image(b, grayscale=grayscale))
            return matcher.score(ia, ib)

    gallery = scan_dataset(gallery_dir)
    by_id = gallery.identities()

    clean_pairs = sample_pairs(
        gallery, n_genuine=eval_cfg["n_genuine"], n_imposter=eval_cfg["n_imposter"], seed=config.seed
    )
    clean_genuine, clean_imposter = [], []
    for p in clean_pairs:
        s = score_paths(gallery.image_path(p.image_a), gallery.image_path(p.image_b))
        (clean_genuine if p.label == "genuine" else clean_imposter).append(s)
    thr = threshold_at_far(clean_imposter, eval_cfg["far_level"])

    records = []
    adv_genuine = []
    for meta_path in sorted(attack_dir.glob("*.json")):
        with open(meta_path) as fh:
            meta = json.load(fh)
        adv_path = meta_path.with_suffix(".png")
        identity = meta.get("identity", "")
        if not adv_path.exists() or identity not in by_id:
            continue
        probe_rel = Path(meta["probe"]).name
        gallery_rels = [r for r in by_id[identity] if Path(r).name != probe_rel]
        if not gallery_rels:
            continue
        gallery_path = gallery.image_path(gallery_rels[0])
        score = score_paths(adv_path, gallery_path)
        adv_genuine.append(score)
        record = {
            "adv": str(adv_path),
            "gallery": str(gallery_path),
            "identity": identity,
            "score_after": score,
        }
        probe_path = Path(meta["probe"])
        if probe_path.exists():
            record["score_before"] = score_paths(probe_path, gallery_path)
            probe_img = normalize_image(load_image(probe_path, grayscale=grayscale))
            adv_img = normalize_image(load_image(adv_path, grayscale=grayscale))
            record["ssim"] = ssim(probe_img, adv_img)
        records.append(record)

    if adapter is not None:
        adapter.close()
    if not records:
        print("no evaluable adversarial images found", file=sys.stderr)
        return EXIT_RUNTIME

    mode = config.run["mode"]
    if mode == "impersonation":
        rate = success_rate_impersonation(adv_genuine, thr.tau)
    else:
        rate = success_rate_obfuscation(adv_genuine, thr.tau)
    ssims = [r["ssim"] for r in records if "ssim" in r]
    before = [r["score_before"] for r in records if "score_before" in r]
    distributions = None
    if before:
        before_set = ScoreSet(genuine=before, imposter=clean_imposter)
        after_set = ScoreSet(genuine=adv_genuine, imposter=clean_imposter)
        distributions = distribution_summary(before_set, after_set)

    report = AttackReport(
        attack=config.run["attack"],
        modality=config.run["modality"],
        mode=mode,
        matcher_name="adapter" if adapter_command else matcher.name,
        dataset_tag=str(gallery_dir),
        threshold={"tau": thr.tau, "far_level": thr.far_level, "achieved_far": thr.achieved_far},
        success_rate=rate,
        ssim_mean=float(np.mean(ssims)) if ssims else None,
        ssim_std=float(np.std(ssims)) if ssims else None,
        pairs=records,
        distributions=distributions,
        seed=config.seed,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    write_scores_csv(out.with_suffix(".scores.csv"), records)
    print(f"report: {out}  success_rate={rate:.4f}  tau={thr.tau:.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .advgen import saliency_mask_threshold
    from .core import load_image, normalize_image
    from .metrics import AttackReport

    out_dir = Path(args.out_dir)
    if not args.reports:
        print("no reports given; nothing to do")
        return EXIT_OK
    out_dir.mkdir(parents=True, exist_ok=True)
    for report_path in args.reports:
        report = AttackReport.load(report_path)
        stem = Path(report_path).stem

        before = [p["score_before"] for p in report.pairs if "score_before" in p]
        after = [p["score_after"] for p in report.pairs if "score_after" in p]
        fig, ax = plt.subplots(figsize=(6, 4))
        if before:
            ax.hist(before, bins=30, alpha=0.6, label=f"before (n={len(before)})")
        ax.hist(after, bins=30, alpha=0.6, label=f"after (n={len(after)})")
        ax.axvline(report.threshold["tau"], color="k", linestyle="--", label="tau")
        ax.set_title(f"{report.attack} {report.mode}: success {report.success_rate:.2%}")
        ax.set_xlabel("match score")
        ax.legend()
        fig.savefig(out_dir / f"{stem}_distributions.png", dpi=120)
        plt.close(fig)

        # saliency overlays from any saved adversarial masks
        for pair in report.pairs[:8]:
            adv_path = Path(pair["adv"])
            mask_path = adv_path.with_name(adv_path.stem + "_mask.png")
            if not mask_path.exists():
                continue
            mask = normalize_image(load_image(mask_path))
            binary = saliency_mask_threshold(mask, 0.40).any(axis=2)
            adv = load_image(adv_path)
            overlay = adv.copy()
            overlay[binary] = [255, 0, 0]
            fig, axes = plt.subplots(1, 2, figsize=(6, 3))
            axes[0].imshow(adv)
            axes[0].set_title("adversarial")
            axes[1].imshow(overlay)
            axes[1].set_title("|mask| > 0.40")
            for a in axes:
                a.axis("off")
            fig.savefig(out_dir / f"{stem}_{adv_path.stem}_saliency.png", dpi=120)
            plt.close(fig)
        print(f"plots for {report_path} -> {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advbiom", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic identity dataset")
    p.add_argument("--modality", choices=("face", "fingerprint"), default="face")
    p.add_argument("--out", required=True)
    p.add_argument("--n-ids", type=int, default=30)
    p.add_argument("--per-id", type=int, default=8)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train-face", help="train the adversarial face generator")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train_face)

    p = sub.add_parser("train-fp", help="train the fingerprint attack")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=cmd_train_fp)

    p = sub.add_parser("attack", help="synthesize adversarial images for a probe directory")
    p.add_argument("--config", required=True)
    p.add_argument("--input-dir", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--attack", choices=("fgsm", "pgd", "advgen"), default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", help="score adversarial images against a gallery")
    p.add_argument("--config", required=True)
    p.add_argument("--attack-dir", required=True)
    p.add_argument("--gallery-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render plots from attack reports")
    p.add_argument("--out-dir", required=True)
    p.add_argument("reports", nargs="*")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    from .adapters import AdapterError
    from .advgen import TrainingDiverged

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"training diverged: {exc} (last checkpoint: {exc.last_checkpoint})", file=sys.stderr)
        return EXIT_DIVERGED
    except AdapterError as exc:
        print(f"matcher adapter failure: {exc}", file=sys.stderr)
        return EXIT_ADAPTER


if __name__ == "__main__":
    sys.exit(main())
