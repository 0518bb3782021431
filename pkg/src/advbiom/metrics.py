"""Matcher evaluation metrics: FAR thresholds, attack success rates, SSIM,
TAR@FAR, k-fold impersonation protocol, score distributions, and the
serializable attack report.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.ndimage import correlate1d

REPORT_SCHEMA_VERSION = 1

FINGERPRINT_TYPES = ("left_loop", "right_loop", "whorl", "arch", "tented_arch")


@dataclass(frozen=True)
class Threshold:
    """Decision threshold calibrated at a false-accept level."""

    tau: float
    far_level: float
    achieved_far: float


@dataclass
class ScoreSet:
    """Genuine and imposter comparison scores for one matcher/dataset."""

    genuine: list
    imposter: list
    matcher_name: str = ""
    dataset_tag: str = ""

    def __post_init__(self):
        self.genuine = [float(s) for s in self.genuine]
        self.imposter = [float(s) for s in self.imposter]
        for s in self.genuine + self.imposter:
            if not np.isfinite(s):
                raise ValueError("scores must be finite")


def _tie_epsilon(max_score: float) -> float:
    return 1e-6 * max(1.0, abs(max_score))


def threshold_at_far(imposter_scores, far: float) -> Threshold:
    """Smallest threshold whose false-accept fraction does not exceed ``far``.

    Candidate thresholds are the observed imposter scores plus one sentinel
    just above the maximum (so a zero-FAR threshold always exists); an
    imposter comparison counts as a false accept when its score is >= tau.
    """
    scores = np.asarray(list(imposter_scores), dtype=np.float64)
    if scores.size == 0:
        raise ValueError("imposter score list is empty")
    if not 0.0 < far < 1.0:
        raise ValueError(f"far must be in (0, 1), got {far}")
    top = float(scores.max())
    candidates = np.unique(scores)
    candidates = np.append(candidates, top + _tie_epsilon(top))
    n = scores.size
    for tau in candidates:
        achieved = float(np.count_nonzero(scores >= tau)) / n
        if achieved <= far:
            return Threshold(tau=float(tau), far_level=far, achieved_far=achieved)
    raise AssertionError("sentinel threshold must always satisfy the FAR bound")


def success_rate_obfuscation(adv_genuine_scores, tau: float) -> float:
    """Fraction of adversarial-vs-enrolled comparisons scoring below tau."""
    scores = np.asarray(list(adv_genuine_scores), dtype=np.float64)
    if scores.size == 0:
        raise ValueError("score list is empty")
    return float(np.count_nonzero(scores < tau)) / scores.size


def success_rate_impersonation(adv_target_scores, tau: float) -> float:
    """Fraction of adversarial-vs-target comparisons scoring at or above tau."""
    scores = np.asarray(list(adv_target_scores), dtype=np.float64)
    if scores.size == 0:
        raise ValueError("score list is empty")
    return float(np.count_nonzero(scores >= tau)) / scores.size


def tar_at_far(score_set: ScoreSet, far: float) -> float:
    """True-accept rate of the genuine scores at the FAR-calibrated threshold."""
    if not score_set.genuine:
        raise ValueError("genuine score list is empty")
    thr = threshold_at_far(score_set.imposter, far)
    genuine = np.asarray(score_set.genuine, dtype=np.float64)
    return float(np.count_nonzero(genuine >= thr.tau)) / genuine.size


# ---------------------------------------------------------------------------
# structural similarity


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def ssim(
    x1: np.ndarray,
    x2: np.ndarray,
    window_size: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    dynamic_range: float = 2.0,
) -> float:
    """Windowed structural similarity with a Gaussian window.

    Windows are evaluated at fully-valid positions only (no padding) and the
    per-window map is averaged over positions and channels. The default
    dynamic range of 2 covers images normalized to [-1, 1].
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.ndim == 2:
        x1 = x1[:, :, None]
    if x2.ndim == 2:
        x2 = x2[:, :, None]
    if x1.shape != x2.shape:
        raise ValueError(f"images must share a shape, got {x1.shape} vs {x2.shape}")
    h, w = x1.shape[:2]
    if h < window_size or w < window_size:
        raise ValueError(f"images must be at least {window_size} pixels per side")

    win = _gaussian_window(window_size, sigma)
    half = window_size // 2
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2

    def smooth(img):
        out = correlate1d(img, win, axis=0)
        out = correlate1d(out, win, axis=1)
        return out[half : h - half, half : w - half]

    values = []
    for c in range(x1.shape[2]):
        a, b = x1[:, :, c], x2[:, :, c]
        mu_a = smooth(a)
        mu_b = smooth(b)
        var_a = smooth(a * a) - mu_a * mu_a
        var_b = smooth(b * b) - mu_b * mu_b
        cov = smooth(a * b) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
        den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        values.append(num / den)
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# impersonation protocol


@dataclass
class FoldStats:
    mean: float
    std: float
    per_fold: list
    target_indices: list


def kfold_impersonation(
    probes,
    targets,
    attack_fn,
    score_fn,
    tau: float,
    k: int = 10,
    seed: int = 0,
) -> FoldStats:
    """Impersonation success over ``k`` folds, one randomly chosen target each.

    ``targets`` is a sequence of (target_probe, target_gallery) image pairs;
    ``attack_fn(probes, target_probe)`` synthesizes adversarial probes and
    ``score_fn(adv, target_gallery)`` scores each against the target's
    enrolled image. Fold targets are sampled without replacement when enough
    targets exist. Returns mean and population std of per-fold success rates.
    """
    if len(targets) < 1:
        raise ValueError("need at least one candidate target")
    if len(targets) < k:
        raise ValueError(f"need at least k={k} candidate targets, got {len(targets)}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(targets), size=k, replace=False)
    rates = []
    for idx in chosen:
        target_probe, target_gallery = targets[int(idx)]
        adv = attack_fn(probes, target_probe)
        scores = score_fn(adv, target_gallery)
        rates.append(success_rate_impersonation(scores, tau))
    rates_arr = np.asarray(rates, dtype=np.float64)
    return FoldStats(
        mean=float(rates_arr.mean()),
        std=float(rates_arr.std()),
        per_fold=[float(r) for r in rates],
        target_indices=[int(i) for i in chosen],
    )


# ---------------------------------------------------------------------------
# distribution and per-type summaries


def distribution_summary(before: ScoreSet, after: ScoreSet) -> dict:
    """Mean/std of genuine and imposter populations before and after an attack."""

    def stats(scores):
        if not scores:
            raise ValueError("score population is empty")
        arr = np.asarray(scores, dtype=np.float64)
        return {"mean": float(arr.mean()), "std": float(arr.std()), "count": int(arr.size)}

    summary = {
        "genuine_before": stats(before.genuine),
        "genuine_after": stats(after.genuine),
        "imposter_before": stats(before.imposter),
        "imposter_after": stats(after.imposter),
    }
    summary["genuine_mean_delta"] = summary["genuine_after"]["mean"] - summary["genuine_before"]["mean"]
    summary["imposter_mean_delta"] = summary["imposter_after"]["mean"] - summary["imposter_before"]["mean"]
    return summary


@dataclass
class MatchDecision:
    """One accept/reject decision with its ground truth and fingerprint type."""

    accepted: bool
    genuine: bool
    finger_type: str


def type_confusion(decisions) -> dict:
    """Per-fingerprint-type TAR/FAR/FRR/TRR table from accept/reject decisions."""
    table = {}
    counts = {t: {"ga": 0, "gn": 0, "ia": 0, "in": 0} for t in FINGERPRINT_TYPES}
    for d in decisions:
        if d.finger_type not in counts:
            raise ValueError(f"unknown fingerprint type {d.finger_type!r}")
        c = counts[d.finger_type]
        if d.genuine:
            c["gn"] += 1
            c["ga"] += int(d.accepted)
        else:
            c["in"] += 1
            c["ia"] += int(d.accepted)
    for t, c in counts.items():
        row = {}
        if c["gn"]:
            row["tar"] = c["ga"] / c["gn"]
            row["frr"] = 1.0 - row["tar"]
        if c["in"]:
            row["far"] = c["ia"] / c["in"]
            row["trr"] = 1.0 - row["far"]
        row["genuine_count"] = c["gn"]
        row["imposter_count"] = c["in"]
        table[t] = row
    return table


# ---------------------------------------------------------------------------
# attack report


@dataclass
class AttackReport:
    """Serializable evaluation result for one attack run."""

    attack: str
    modality: str
    mode: str
    matcher_name: str
    dataset_tag: str
    threshold: dict
    success_rate: float
    ssim_mean: float | None = None
    ssim_std: float | None = None
    pairs: list = field(default_factory=list)
    fold_stats: dict | None = None
    distributions: dict | None = None
    seed: int | None = None
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "AttackReport":
        validate_report(data)
        return cls(**data)

    @classmethod
    def load(cls, path) -> "AttackReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


_REPORT_REQUIRED = {
    "attack": str,
    "modality": str,
    "mode": str,
    "matcher_name": str,
    "dataset_tag": str,
    "threshold": dict,
    "success_rate": float,
    "pairs": list,
    "schema_version": int,
}


def validate_report(data: dict) -> None:
    """Raise ValueError when a report dict violates the v1 schema."""
    for key, typ in _REPORT_REQUIRED.items():
        if key not in data:
            raise ValueError(f"report missing required field {key!r}")
        if typ is float:
            if not isinstance(data[key], (int, float)):
                raise ValueError(f"report field {key!r} must be numeric")
        elif not isinstance(data[key], typ):
            raise ValueError(f"report field {key!r} must be {typ.__name__}")
    if data["schema_version"] != REPORT_SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema version {data['schema_version']}")
    if not 0.0 <= data["success_rate"] <= 1.0:
        raise ValueError("success_rate must lie in [0, 1]")
    thr = data["threshold"]
    for key in ("tau", "far_level"):
        if key not in thr:
            raise ValueError(f"threshold missing field {key!r}")


def write_scores_csv(path, pairs) -> None:
    """Dump per-pair score records to CSV alongside a report."""
    if not pairs:
        return
    fields = sorted({k for p in pairs for k in p})
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(pairs)
