"""White-box gradient attacks driven by the feature-matching loss: one-step
sign attacks and iterative projected ascent inside an L-infinity ball.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin

from .core import check_image_batch, to_nchw, to_nhwc
from .matcher import Matcher


@dataclass(frozen=True)
class FgsmConfig:
    epsilon: float = 0.06

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class PgdConfig:
    epsilon: float = 0.06
    step_size: float = 0.015
    max_iters: int = 20
    success_threshold: float | None = None
    random_start: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.step_size <= self.epsilon:
            raise ValueError("need 0 < step_size <= epsilon")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class AttackResult:
    x_adv: np.ndarray
    probe: np.ndarray
    score_before: float
    score_after: float
    loss: float
    iterations: int = 1
    zero_gradient: bool = False
    reached_threshold: bool | None = None
    loss_trace: list = field(default_factory=list)

    @property
    def delta(self) -> np.ndarray:
        return self.x_adv - self.probe

    @property
    def linf(self) -> float:
        return float(np.abs(self.delta).max())

    @property
    def l2(self) -> float:
        return float(np.linalg.norm(self.delta))


def _reference_embedding(matcher: Matcher, image: np.ndarray) -> torch.Tensor:
    with torch.no_grad():
        return matcher.embed_tensor(to_nchw(image[None], dtype=matcher.dtype))


def _loss_and_grad(matcher: Matcher, ref_emb: torch.Tensor, x_adv: np.ndarray):
    t = to_nchw(x_adv[None], dtype=matcher.dtype).requires_grad_(True)
    emb = matcher.embed_tensor(t)
    loss = 1.0 - (ref_emb * emb).sum()
    (grad,) = torch.autograd.grad(loss, t)
    if not (torch.isfinite(loss) and torch.isfinite(grad).all()):
        raise FloatingPointError("non-finite loss or gradient during attack")
    return float(loss.detach()), to_nhwc(grad)[0]


def fgsm_attack(
    matcher: Matcher, x: np.ndarray, cfg: FgsmConfig, target: np.ndarray | None = None
) -> AttackResult:
    """Single sign step of magnitude epsilon along the feature-match gradient.

    Without a target this pushes the image away from its own embedding
    (obfuscation); with a target image it descends toward the target's
    embedding instead (impersonation).
    """
    x = np.asarray(x, dtype=np.float32)
    ref = _reference_embedding(matcher, x if target is None else np.asarray(target, np.float32))
    loss_before, grad = _loss_and_grad(matcher, ref, x)
    direction = np.sign(grad) if target is None else -np.sign(grad)
    zero_grad = not np.any(direction)
    x_adv = x if zero_grad else np.clip(x + cfg.epsilon * direction, -1.0, 1.0).astype(np.float32)
    loss_after, _ = _loss_and_grad(matcher, ref, x_adv)
    return AttackResult(
        x_adv=x_adv,
        probe=x,
        score_before=1.0 - loss_before,
        score_after=1.0 - loss_after,
        loss=loss_after,
        iterations=1,
        zero_gradient=zero_grad,
        loss_trace=[loss_before, loss_after],
    )


def pgd_attack(
    matcher: Matcher,
    x: np.ndarray,
    cfg: PgdConfig,
    target: np.ndarray | None = None,
    callback=None,
) -> AttackResult:
    """Iterative sign ascent with projection back into the epsilon ball.

    Every iterate stays within epsilon of the probe in L-infinity and inside
    [-1, 1]; the best-loss iterate is returned. ``callback(step, iterate)``
    runs after each projection.
    """
    x = np.asarray(x, dtype=np.float32)
    impersonate = target is not None
    ref = _reference_embedding(matcher, np.asarray(target, np.float32) if impersonate else x)

    x_iter = x
    if cfg.random_start:
        rng = np.random.default_rng(cfg.seed)
        noise = rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape).astype(np.float32)
        x_iter = np.clip(x + noise, -1.0, 1.0).astype(np.float32)

    def gain(loss):
        # obfuscation maximizes the feature-match loss, impersonation minimizes it
        return -loss if impersonate else loss

    loss0, _ = _loss_and_grad(matcher, ref, x)
    trace = [loss0]
    best_x, best_gain, best_loss = x_iter, -np.inf, np.inf
    reached = None if cfg.success_threshold is None else False
    iterations = 0
    for step in range(cfg.max_iters):
        loss, grad = _loss_and_grad(matcher, ref, x_iter)
        direction = -np.sign(grad) if impersonate else np.sign(grad)
        x_iter = x_iter + cfg.step_size * direction
        delta = np.clip(x_iter - x, -cfg.epsilon, cfg.epsilon)
        x_iter = np.clip(x + delta, -1.0, 1.0).astype(np.float32)
        iterations = step + 1
        if callback is not None:
            callback(step, x_iter)
        loss_new, _ = _loss_and_grad(matcher, ref, x_iter)
        trace.append(loss_new)
        if gain(loss_new) > best_gain:
            best_gain, best_x, best_loss = gain(loss_new), x_iter, loss_new
        if cfg.success_threshold is not None:
            score = 1.0 - loss_new
            hit = score >= cfg.success_threshold if impersonate else score <= cfg.success_threshold
            if hit:
                reached = True
                break

    return AttackResult(
        x_adv=best_x,
        probe=x,
        score_before=1.0 - loss0,
        score_after=1.0 - best_loss,
        loss=best_loss,
        iterations=iterations,
        zero_gradient=False,
        reached_threshold=reached,
        loss_trace=trace,
    )


class FgsmAttack(TransformerMixin, BaseEstimator):
    """Estimator wrapper: stateless transform applying the one-step attack."""

    def __init__(self, matcher: Matcher = None, epsilon: float = 0.06):
        self.matcher = matcher
        self.epsilon = epsilon

    def fit(self, X=None, y=None):
        if self.matcher is None:
            raise ValueError("matcher is required")
        return self

    def attack(self, x: np.ndarray, target: np.ndarray | None = None) -> AttackResult:
        self.fit()
        return fgsm_attack(self.matcher, x, FgsmConfig(epsilon=self.epsilon), target=target)

    def transform(self, X, targets=None):
        X = check_image_batch(np.asarray(X))
        out = []
        for i in range(X.shape[0]):
            target = None if targets is None else targets[i]
            out.append(self.attack(X[i], target=target).x_adv)
        return np.stack(out)


class PgdAttack(TransformerMixin, BaseEstimator):
    """Estimator wrapper around the iterative projected attack."""

    def __init__(
        self,
        matcher: Matcher = None,
        epsilon: float = 0.06,
        step_size: float = 0.015,
        max_iters: int = 20,
        success_threshold: float | None = None,
        random_start: bool = False,
        seed: int = 0,
    ):
        self.matcher = matcher
        self.epsilon = epsilon
        self.step_size = step_size
        self.max_iters = max_iters
        self.success_threshold = success_threshold
        self.random_start = random_start
        self.seed = seed

    def _config(self) -> PgdConfig:
        return PgdConfig(
            epsilon=self.epsilon,
            step_size=self.step_size,
            max_iters=self.max_iters,
            success_threshold=self.success_threshold,
            random_start=self.random_start,
            seed=self.seed,
        )

    def fit(self, X=None, y=None):
        if self.matcher is None:
            raise ValueError("matcher is required")
        return self

    def attack(self, x, target=None, callback=None) -> AttackResult:
        self.fit()
        return pgd_attack(self.matcher, x, self._config(), target=target, callback=callback)

    def transform(self, X, targets=None):
        X = check_image_batch(np.asarray(X))
        out = []
        for i in range(X.shape[0]):
            target = None if targets is None else targets[i]
            out.append(self.attack(X[i], target=target).x_adv)
        return np.stack(out)
