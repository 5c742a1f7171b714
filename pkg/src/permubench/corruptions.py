"""Parametric image corruptions at three severities.

Five kinds: gaussian_noise, gaussian_blur, brightness_contrast, jpeg,
cutout.  Per-image randomness (noise field, cutout position) is keyed by
(spec.seed, kind, image id), so corrupting a batch equals corrupting each
image alone and repeated application is bit-identical.  Outputs are always
clamped to [0,1]; labels and ids pass through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import jpeg, kernels
from .data import ImageBatch
from .errors import SpecError
from .rng import PermStream, fnv1a64, mix64, tag

KINDS = ("gaussian_noise", "gaussian_blur", "brightness_contrast", "jpeg", "cutout")
SEVERITIES = (1, 2, 3)

# kind -> severity -> parameter; see validate_table for the monotonicity
# each column must satisfy
DEFAULT_TABLE = {
    "gaussian_noise": {1: 0.04, 2: 0.08, 3: 0.16},  # additive sigma
    "gaussian_blur": {1: 0.5, 2: 1.0, 3: 1.5},  # kernel sigma
    "brightness_contrast": {1: (0.8, 0.05), 2: (0.6, 0.10), 3: (0.4, 0.15)},  # (c, b)
    "jpeg": {1: 80, 2: 50, 3: 25},  # quality
    "cutout": {1: 6, 2: 10, 3: 14},  # square side
}


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown corruption kind {self.kind!r}; expected one of {KINDS}")
        if self.severity not in SEVERITIES:
            raise SpecError(f"severity must be in {SEVERITIES}, got {self.severity}")

    @property
    def setting(self) -> str:
        return f"{self.kind}:{self.severity}"


def validate_table(table: dict) -> None:
    """Severity must strictly increase each kind's effective strength."""

    def increasing(values, label):
        if not all(b > a for a, b in zip(values, values[1:])):
            raise SpecError(f"severity table not strictly increasing for {label}: {values}")

    for kind in KINDS:
        if kind not in table or set(table[kind]) != set(SEVERITIES):
            raise SpecError(f"severity table incomplete for {kind!r}")
    increasing([table["gaussian_noise"][s] for s in SEVERITIES], "gaussian_noise sigma")
    increasing([table["gaussian_blur"][s] for s in SEVERITIES], "gaussian_blur sigma")
    increasing(
        [abs(1.0 - table["brightness_contrast"][s][0]) for s in SEVERITIES],
        "brightness_contrast deviation",
    )
    increasing([100 - table["jpeg"][s] for s in SEVERITIES], "jpeg loss (100-quality)")
    increasing([table["cutout"][s] for s in SEVERITIES], "cutout side")


validate_table(DEFAULT_TABLE)


def corruption_grid(seed: int = 0) -> list:
    """The canonical 5x3 grid: kinds in declaration order, severities 1..3."""
    return [CorruptionSpec(kind, sev, seed) for kind in KINDS for sev in SEVERITIES]


def _image_key(spec: CorruptionSpec, image_id: int) -> int:
    return mix64(spec.seed, tag(spec.kind), int(image_id))


def brightness_contrast(img: np.ndarray, c: float, b: float) -> np.ndarray:
    # same map as clamp((x-0.5)*c + 0.5 + b): written so c=1,b=0 is bit-exact
    offset = np.float32(0.5 * (1.0 - c) + b)
    return np.clip(img * np.float32(c) + offset, 0.0, 1.0).astype(np.float32)


def noise_field(spec: CorruptionSpec, batch: ImageBatch, table: dict | None = None) -> np.ndarray:
    """The additive field gaussian_noise would apply, before clamping.

    Exposed so the noise amplitude can be measured directly: after the
    [0,1] clamp the observable variance on extreme images is necessarily
    smaller than sigma^2.
    """
    if spec.kind != "gaussian_noise":
        raise SpecError(f"noise_field needs a gaussian_noise spec, got {spec.kind!r}")
    sigma = (table or DEFAULT_TABLE)["gaussian_noise"][spec.severity]
    out = np.empty_like(batch.images)
    per = int(np.prod(batch.images.shape[1:]))
    for i, image_id in enumerate(batch.ids):
        z = kernels.normals(_image_key(spec, image_id), per)
        out[i] = z.reshape(batch.images.shape[1:]) * np.float32(sigma)
    return out


def _apply_one(spec: CorruptionSpec, img: np.ndarray, image_id: int, table: dict) -> np.ndarray:
    params = table[spec.kind][spec.severity]
    if spec.kind == "gaussian_noise":
        z = kernels.normals(_image_key(spec, image_id), img.size)
        noisy = img + z.reshape(img.shape) * np.float32(params)
        return np.clip(noisy, 0.0, 1.0).astype(np.float32)
    if spec.kind == "gaussian_blur":
        return np.clip(kernels.gaussian_blur(img, params), 0.0, 1.0).astype(np.float32)
    if spec.kind == "brightness_contrast":
        c, b = params
        return brightness_contrast(img, c, b)
    if spec.kind == "jpeg":
        return jpeg.roundtrip(img, params)
    # cutout: one axis-aligned square of 0.5-fill at a seeded position
    side = params
    h, w = img.shape[0], img.shape[1]
    stream = PermStream(_image_key(spec, image_id))
    top = stream.below(h - side + 1)
    left = stream.below(w - side + 1)
    out = img.copy()
    out[top : top + side, left : left + side, :] = np.float32(0.5)
    return out


def apply(spec: CorruptionSpec, batch: ImageBatch, table: dict | None = None) -> ImageBatch:
    """Corrupt every image in the batch; deterministic in (spec, image ids)."""
    table = table or DEFAULT_TABLE
    if spec.kind not in table or spec.severity not in table[spec.kind]:
        raise SpecError(f"no parameters for {spec.kind!r} severity {spec.severity}")
    out = np.empty_like(batch.images)
    for i, image_id in enumerate(batch.ids):
        out[i] = _apply_one(spec, batch.images[i], int(image_id), table)
    return ImageBatch(images=out, labels=batch.labels, ids=batch.ids)
