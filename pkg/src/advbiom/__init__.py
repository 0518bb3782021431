"""Adversarial biometric image synthesis and matcher evaluation toolkit."""

from .adapters import AdapterError, ExternalQualityScorer, SubprocessMatcher
from .advgen import (
    AdvFaceGenerator,
    AdvGenTrainConfig,
    DiscriminatorNet,
    GeneratorNet,
    TrainingDiverged,
    gan_losses,
    identity_loss_impersonation,
    identity_loss_obfuscation,
    perturbation_loss,
    saliency_mask_threshold,
)
from .core import (
    clamp_compose,
    cosine_similarity,
    denormalize_image,
    load_image,
    normalize_image,
    save_image_png,
)
from .datasets import (
    DatasetManifest,
    PairSample,
    sample_pairs,
    scan_dataset,
    split_manifest,
    synth_identity_faces,
)
from .fingerprint.attack import (
    FingerprintAttack,
    minutiae_map_separation_loss,
    minutiae_map_similarity_loss,
    pixel_consistency_loss,
)
from .fingerprint.minutiae import (
    MinutiaeExtractor,
    MinutiaPoint,
    build_target_map,
    detect_minutiae,
    displace_minutiae,
    extract_minutiae_map,
    render_minutiae_map,
)
from .fingerprint.synth import blank_fingerprint, synth_fingerprint, synth_fingerprint_dataset
from .fingerprint.tps import tps_displacement_field, tps_warp
from .grad_attacks import FgsmAttack, FgsmConfig, PgdAttack, PgdConfig, fgsm_attack, pgd_attack
from .matcher import (
    Matcher,
    ToyMatcherTrainer,
    feature_match_loss,
    loss_gradient,
    train_toy_matcher,
)
from .metrics import (
    AttackReport,
    FoldStats,
    MatchDecision,
    ScoreSet,
    Threshold,
    distribution_summary,
    kfold_impersonation,
    ssim,
    success_rate_impersonation,
    success_rate_obfuscation,
    tar_at_far,
    threshold_at_far,
    type_confusion,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
