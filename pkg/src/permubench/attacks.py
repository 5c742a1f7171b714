"""FGSM and PGD input-gradient attacks in raw pixel space.

Both maximize the same cross-entropy the trainer minimizes (the default
loss_fn IS that routine; tests pin the identity).  No random start, so
attacks are deterministic functions of (params, batch, spec).  Outputs stay
inside the L-inf epsilon ball around the clean input and inside [0,1].
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import autodiff as ad
from .data import ImageBatch
from .errors import NumericError, SpecError

EPSILONS = (1 / 255, 2 / 255, 4 / 255, 8 / 255)
PGD_STEPS = 10

DEFAULT_LOSS = ad.cross_entropy


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    epsilon: float
    steps: int
    step_size: float

    def __post_init__(self):
        if self.kind not in ("fgsm", "pgd"):
            raise SpecError(f"unknown attack kind {self.kind!r}")
        if self.epsilon <= 0:
            raise SpecError(f"epsilon must be positive, got {self.epsilon}")
        if self.kind == "fgsm" and self.steps != 1:
            raise SpecError(f"fgsm takes exactly one step, got {self.steps}")
        if self.kind == "pgd" and (self.steps != PGD_STEPS or self.step_size != self.epsilon / 4):
            raise SpecError("pgd uses 10 steps at epsilon/4")

    @staticmethod
    def fgsm(epsilon: float) -> "AttackSpec":
        return AttackSpec("fgsm", epsilon, 1, epsilon)

    @staticmethod
    def pgd(epsilon: float) -> "AttackSpec":
        return AttackSpec("pgd", epsilon, PGD_STEPS, epsilon / 4)

    @property
    def setting(self) -> str:
        frac = Fraction(self.epsilon).limit_denominator(100_000)
        if frac.denominator == 255:
            return f"{self.kind}:{frac.numerator}/255"
        return f"{self.kind}:{self.epsilon:g}"


def attack_grid(kind: str) -> list:
    """The canonical ascending epsilon grid for one attack kind."""
    make = AttackSpec.fgsm if kind == "fgsm" else AttackSpec.pgd
    if kind not in ("fgsm", "pgd"):
        raise SpecError(f"unknown attack kind {kind!r}")
    return [make(eps) for eps in EPSILONS]


def _input_gradient(model_forward, params, images: np.ndarray, labels, loss_fn) -> np.ndarray:
    x = ad.Tensor(images, requires_grad=True)
    loss = loss_fn(model_forward(params, x), labels)
    ad.backward(loss)
    grad = x.grad
    finite = np.isfinite(grad).reshape(grad.shape[0], -1).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise NumericError(f"non-finite input gradient at image index {bad}")
    return grad


def fgsm(model_forward, params, batch: ImageBatch, eps: float,
         loss_fn=DEFAULT_LOSS) -> ImageBatch:
    """x + eps * sign(grad), clamped to [0,1]; sign(0) == 0."""
    frozen = {k: t.detach() for k, t in params.items()}
    grad = _input_gradient(model_forward, frozen, batch.images, batch.labels, loss_fn)
    adv = np.clip(batch.images + np.float32(eps) * np.sign(grad), 0.0, 1.0)
    return ImageBatch(images=adv.astype(np.float32), labels=batch.labels, ids=batch.ids)


def pgd(model_forward, params, batch: ImageBatch, eps: float, steps: int = PGD_STEPS,
        alpha: float | None = None, loss_fn=DEFAULT_LOSS, on_step=None) -> ImageBatch:
    """Iterated ascent with per-step [0,1] clamp and L-inf ball projection.

    Starts from the clean input (no random start).  `on_step` is a test
    hook receiving each iterate.
    """
    if alpha is None:
        alpha = eps / 4
    frozen = {k: t.detach() for k, t in params.items()}
    x0 = batch.images
    x = x0.copy()
    eps32 = np.float32(eps)
    alpha32 = np.float32(alpha)
    for _ in range(steps):
        grad = _input_gradient(model_forward, frozen, x, batch.labels, loss_fn)
        stepped = np.clip(x + alpha32 * np.sign(grad), 0.0, 1.0)
        x = np.clip(x0 + np.clip(stepped - x0, -eps32, eps32), 0.0, 1.0).astype(np.float32)
        if on_step is not None:
            on_step(x)
    return ImageBatch(images=x, labels=batch.labels, ids=batch.ids)


def attack_batch(spec: AttackSpec, model_forward, params, batch: ImageBatch,
                 loss_fn=DEFAULT_LOSS) -> ImageBatch:
    if spec.kind == "fgsm":
        return fgsm(model_forward, params, batch, spec.epsilon, loss_fn=loss_fn)
    return pgd(model_forward, params, batch, spec.epsilon, steps=spec.steps,
               alpha=spec.step_size, loss_fn=loss_fn)
