"""The four compact backbones, all under one million parameters.

Shapes are fixed by the benchmark protocol: 28x28x3 inputs cut into 4x4
patches (49 tokens of raw dimension 48).  Architectures:

* zachvit: staged transformer, widths grow per stage, residual branches get
  a bias-free linear projection exactly at width transitions; no positional
  embeddings, no class token; global average pooling readout.
* minimalvit: uniform-width transformer with learned positional embeddings
  and a class-token readout.
* abmil: per-patch MLP encoder with gated attention pooling over instances.
* transmil: uniform-width transformer over instances with a class token and
  no positional term.

Everything runs on the autodiff Tensor so attacks can differentiate
through to the input pixels.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .errors import DimensionError, FormatError, SpecError
from .rng import mix64, fnv1a64, tag

ARCHS = ("abmil", "minimalvit", "transmil", "zachvit")

MODEL_LABELS = {
    "abmil": "ABMIL",
    "minimalvit": "Minimal-ViT",
    "transmil": "TransMIL",
    "zachvit": "ZACH-ViT",
}

PARAM_BUDGET = 1_000_000
INIT_SIGMA = 0.02

_DEFAULTS = {
    "zachvit": dict(embed_dims=(48, 96, 144), depth=2, heads=4, mlp_ratio=2.0),
    "minimalvit": dict(embed_dims=(96,), depth=6, heads=4, mlp_ratio=2.0),
    "transmil": dict(embed_dims=(96,), depth=4, heads=4, mlp_ratio=2.0),
    "abmil": dict(embed_dims=(128, 128), depth=2, heads=1, mlp_ratio=2.0),
}


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    num_classes: int
    input: tuple = (28, 28, 3)
    patch_size: int = 4
    embed_dims: tuple = ()
    depth: int = 0
    heads: int = 4
    mlp_ratio: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise SpecError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        h, w, _ = self.input
        if h % self.patch_size or w % self.patch_size:
            raise SpecError(
                f"input {h}x{w} not divisible by patch_size {self.patch_size}"
            )
        if self.num_classes < 2:
            raise SpecError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.arch != "abmil":
            for d in self.embed_dims:
                if d % self.heads:
                    raise SpecError(f"width {d} not divisible by heads {self.heads}")

    @property
    def num_tokens(self) -> int:
        h, w, _ = self.input
        return (h // self.patch_size) * (w // self.patch_size)

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.input[2]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["input"] = list(self.input)
        d["embed_dims"] = list(self.embed_dims)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        d = dict(d)
        d["input"] = tuple(d["input"])
        d["embed_dims"] = tuple(d["embed_dims"])
        return ModelSpec(**d)


def default_spec(arch: str, num_classes: int, input=(28, 28, 3), seed: int = 0) -> ModelSpec:
    if arch not in _DEFAULTS:
        raise SpecError(f"unknown arch {arch!r}; expected one of {ARCHS}")
    return ModelSpec(arch=arch, num_classes=num_classes, input=tuple(input),
                     seed=seed, **_DEFAULTS[arch])


def _trunc_normal(key: int, n: int, sigma: float) -> np.ndarray:
    """n truncated-normal draws (cut at +-2 sigma, redraw outside)."""
    out = np.empty(n, dtype=np.float32)
    filled = 0
    round_ = 0
    while filled < n:
        z = kernels.normals(mix64(key, round_), 2 * (n - filled) + 16)
        z = z[np.abs(z) <= 2.0][: n - filled]
        out[filled : filled + z.size] = z
        filled += z.size
        round_ += 1
    return out * np.float32(sigma)


def _shape_table(spec: ModelSpec) -> dict:
    """Name -> (shape, init kind) for every parameter of the spec."""
    c = spec.num_classes
    table: dict = {}

    def linear(prefix, din, dout, bias=True):
        table[f"{prefix}.weight"] = ((din, dout), "trunc_normal")
        if bias:
            table[f"{prefix}.bias"] = ((dout,), "zeros")

    def ln(prefix, d):
        table[f"{prefix}.gamma"] = ((d,), "ones")
        table[f"{prefix}.beta"] = ((d,), "zeros")

    def block(prefix, din, dout, ratio):
        ln(f"{prefix}.ln1", din)
        for name in ("q", "k", "v", "o"):
            linear(f"{prefix}.attn.{name}", din, din)
        ln(f"{prefix}.ln2", din)
        hidden = int(din * ratio)
        linear(f"{prefix}.mlp.fc1", din, hidden)
        linear(f"{prefix}.mlp.fc2", hidden, dout)
        if din != dout:
            linear(f"{prefix}.res_proj", din, dout, bias=False)

    if spec.arch == "abmil":
        enc0, enc1 = spec.embed_dims
        attn_dim = spec.embed_dims[-1] // 2
        linear("enc.fc1", spec.patch_dim, enc0)
        linear("enc.fc2", enc0, enc1)
        linear("attn.V", enc1, attn_dim)
        linear("attn.U", enc1, attn_dim)
        linear("attn.w", attn_dim, 1)
        linear("head", enc1, c)
        return table

    dims = spec.embed_dims
    linear("embed", spec.patch_dim, dims[0])
    if spec.arch == "minimalvit":
        table["pos"] = ((spec.num_tokens, dims[0]), "trunc_normal")
    if spec.arch in ("minimalvit", "transmil"):
        table["cls"] = ((1, 1, dims[0]), "trunc_normal")
    if spec.arch == "zachvit":
        idx = 0
        for s, dim in enumerate(dims):
            for t in range(spec.depth):
                din = dims[s - 1] if (t == 0 and s > 0) else dim
                block(f"blocks.{idx}", din, dim, spec.mlp_ratio)
                idx += 1
    else:
        for idx in range(spec.depth):
            block(f"blocks.{idx}", dims[0], dims[0], spec.mlp_ratio)
    ln("final_ln", dims[-1])
    linear("head", dims[-1], c)
    return table


def build(spec: ModelSpec, init_seed: int | None = None) -> dict:
    """Deterministically initialized parameter map for the spec."""
    seed = spec.seed if init_seed is None else init_seed
    table = _shape_table(spec)
    params: dict = {}
    total = 0
    for name, (shape, kind) in table.items():
        n = int(np.prod(shape))
        total += n
        if kind == "zeros":
            data = np.zeros(shape, dtype=np.float32)
        elif kind == "ones":
            data = np.ones(shape, dtype=np.float32)
        else:
            key = mix64(seed, tag("init"), fnv1a64(name))
            data = _trunc_normal(key, n, INIT_SIGMA).reshape(shape)
        params[name] = ad.Tensor(data, requires_grad=True)
    if total >= PARAM_BUDGET:
        raise SpecError(
            f"{spec.arch} spec instantiates {total} parameters, over the {PARAM_BUDGET} budget"
        )
    return params


def count_params(params: dict) -> int:
    return sum(t.size for t in params.values())


def detach_params(params: dict) -> dict:
    """Read-only snapshot sharing buffers; gradients will not flow into it."""
    return {k: t.detach() for k, t in params.items()}


def _as_input(images) -> ad.Tensor:
    if isinstance(images, ad.Tensor):
        return images
    if hasattr(images, "images"):
        images = images.images
    return ad.Tensor(np.asarray(images, dtype=np.float32))


def _patchify(x: ad.Tensor, spec: ModelSpec) -> ad.Tensor:
    b, h, w, c = x.shape
    p = spec.patch_size
    if h % p or w % p:
        raise DimensionError(f"spatial size {h}x{w} not divisible by patch {p}")
    gh, gw = h // p, w // p
    x = x.reshape((b, gh, p, gw, p, c))
    x = x.transpose((0, 1, 3, 2, 4, 5))
    return x.reshape((b, gh * gw, p * p * c))


def _linear(x: ad.Tensor, params: dict, prefix: str) -> ad.Tensor:
    out = ad.matmul(x, params[f"{prefix}.weight"])
    bias = params.get(f"{prefix}.bias")
    return out if bias is None else out + bias


def _layernorm(x: ad.Tensor, params: dict, prefix: str) -> ad.Tensor:
    return ad.layernorm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"])


def _mhsa(x: ad.Tensor, params: dict, prefix: str, heads: int) -> ad.Tensor:
    b, n, d = x.shape
    dh = d // heads

    def split(name):
        t = _linear(x, params, f"{prefix}.{name}")
        return t.reshape((b, n, heads, dh)).transpose((0, 2, 1, 3))

    q, k, v = split("q"), split("k"), split("v")
    scores = ad.matmul(q, k.transpose((0, 1, 3, 2))).scale(1.0 / np.sqrt(dh))
    attn = ad.softmax(scores, axis=-1)
    out = ad.matmul(attn, v).transpose((0, 2, 1, 3)).reshape((b, n, d))
    return _linear(out, params, f"{prefix}.o")


def _block(x: ad.Tensor, params: dict, prefix: str, spec: ModelSpec) -> ad.Tensor:
    din = x.shape[-1]
    x1 = x + _mhsa(_layernorm(x, params, f"{prefix}.ln1"), params, f"{prefix}.attn", spec.heads)
    m = _linear(ad.gelu(_linear(_layernorm(x1, params, f"{prefix}.ln2"), params, f"{prefix}.mlp.fc1")),
                params, f"{prefix}.mlp.fc2")
    if f"{prefix}.res_proj.weight" in params:
        res = ad.matmul(x1, params[f"{prefix}.res_proj.weight"])
    else:
        if m.shape[-1] != din:
            raise DimensionError(f"block {prefix}: width change without res_proj")
        res = x1
    return res + m


def _prepend_cls(tokens: ad.Tensor, params: dict) -> ad.Tensor:
    b = tokens.shape[0]
    cls = ad.broadcast_to(params["cls"], (b, 1, tokens.shape[-1]))
    return ad.concat([cls, tokens], axis=1)


def forward_zachvit(spec: ModelSpec, params: dict, images) -> ad.Tensor:
    x = _linear(_patchify(_as_input(images), spec), params, "embed")
    idx = 0
    for _ in spec.embed_dims:
        for _ in range(spec.depth):
            x = _block(x, params, f"blocks.{idx}", spec)
            idx += 1
    x = _layernorm(x, params, "final_ln")
    return _linear(x.mean(axis=1), params, "head")


def forward_minimalvit(spec: ModelSpec, params: dict, images, readout: str = "cls") -> ad.Tensor:
    x = _linear(_patchify(_as_input(images), spec), params, "embed")
    x = x + params["pos"]
    x = _prepend_cls(x, params)
    for idx in range(spec.depth):
        x = _block(x, params, f"blocks.{idx}", spec)
    x = _layernorm(x, params, "final_ln")
    if readout == "cls":
        pooled = x[:, 0, :]
    elif readout == "mean":
        pooled = x[:, 1:, :].mean(axis=1)
    else:
        raise SpecError(f"unknown readout {readout!r}")
    return _linear(pooled, params, "head")


def forward_transmil(spec: ModelSpec, params: dict, images) -> ad.Tensor:
    x = _linear(_patchify(_as_input(images), spec), params, "embed")
    x = _prepend_cls(x, params)
    for idx in range(spec.depth):
        x = _block(x, params, f"blocks.{idx}", spec)
    x = _layernorm(x, params, "final_ln")
    return _linear(x[:, 0, :], params, "head")


def _abmil_pool(spec: ModelSpec, params: dict, images):
    h = ad.relu(_linear(_patchify(_as_input(images), spec), params, "enc.fc1"))
    h = ad.relu(_linear(h, params, "enc.fc2"))
    gate = ad.tanh(_linear(h, params, "attn.V")) * ad.sigmoid(_linear(h, params, "attn.U"))
    weights = ad.softmax(_linear(gate, params, "attn.w"), axis=1)
    bag = (weights * h).sum(axis=1)
    return bag, weights


def forward_abmil(spec: ModelSpec, params: dict, images) -> ad.Tensor:
    bag, _ = _abmil_pool(spec, params, images)
    return _linear(bag, params, "head")


def abmil_attention_weights(spec: ModelSpec, params: dict, images) -> np.ndarray:
    with ad.no_grad():
        _, weights = _abmil_pool(spec, params, images)
    return weights.data[..., 0]


_FORWARDS = {
    "zachvit": forward_zachvit,
    "minimalvit": forward_minimalvit,
    "transmil": forward_transmil,
    "abmil": forward_abmil,
}


def forward(spec: ModelSpec, params: dict, images) -> ad.Tensor:
    return _FORWARDS[spec.arch](spec, params, images)


class Model:
    """Spec + parameters with a bound forward."""

    def __init__(self, spec: ModelSpec, params: dict | None = None, init_seed: int | None = None):
        self.spec = spec
        self.params = params if params is not None else build(spec, init_seed)

    def forward(self, images) -> ad.Tensor:
        return forward(self.spec, self.params, images)

    def count_params(self) -> int:
        return count_params(self.params)


_MAGIC = b"PBPARAMS\x01"


def save_params(path, spec: ModelSpec, params: dict) -> None:
    """Flat binary container: spec manifest, then (name, shape, f32 LE) records."""
    manifest = json.dumps(spec.to_dict()).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        f.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            data = np.ascontiguousarray(params[name].data, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def load_params(path):
    """Inverse of save_params; validates names against the spec's shape table."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(_MAGIC)] != _MAGIC:
        raise FormatError(f"{path}: not a parameter container")
    off = len(_MAGIC)

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    (mlen,) = take("<I")
    spec = ModelSpec.from_dict(json.loads(blob[off : off + mlen].decode("utf-8")))
    off += mlen
    (count,) = take("<I")
    params = {}
    for _ in range(count):
        (nlen,) = take("<H")
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I")
        n = int(np.prod(shape))
        data = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        params[name] = ad.Tensor(data.copy(), requires_grad=True)
    expected = set(_shape_table(spec))
    got = set(params)
    if expected != got:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        raise FormatError(f"{path}: parameter names mismatch (missing {missing}, extra {extra})")
    return spec, params
