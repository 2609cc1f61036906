"""Siamese backbone + RPN heads + motion block, with parameter store,
reverse-mode gradients and the SGD/learning-rate machinery.

Everything is plain numpy under a small autodiff layer. Default precision
is float32 with a fixed summation order, so training runs are bit-exact
reproducible; float64 is available for gradient checking.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var

CHECKPOINT_MAGIC = b"IGT1"


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int
    stride: int


@dataclass(frozen=True)
class NetConfig:
    template_size: int = 127
    search_size: int = 255
    in_channels: int = 3
    convs: tuple[ConvSpec, ...] = (
        ConvSpec(8, 7, 2),
        ConvSpec(16, 9, 2),
        ConvSpec(24, 17, 2),
    )
    num_ratios: int = 5
    dtype: type = np.float32

    def feature_size(self, input_size: int) -> int:
        n = input_size
        for c in self.convs:
            n = (n - c.kernel) // c.stride + 1
            if n < 1:
                raise ValueError("conv stack consumes the whole input")
        return n

    @property
    def template_feature(self) -> int:
        return self.feature_size(self.template_size)

    @property
    def search_feature(self) -> int:
        return self.feature_size(self.search_size)

    @property
    def response_size(self) -> int:
        return self.search_feature - self.template_feature + 1

    @property
    def total_stride(self) -> int:
        s = 1
        for c in self.convs:
            s *= c.stride
        return s

    @property
    def feature_channels(self) -> int:
        return self.convs[-1].out_channels


# template 39 / search 55, two conv layers: cheap enough for exhaustive
# finite-difference checking of every parameter
REDUCED_CONFIG = NetConfig(
    template_size=39,
    search_size=55,
    convs=(ConvSpec(4, 7, 2), ConvSpec(6, 5, 2)),
    num_ratios=5,
    dtype=np.float64,
)


class ParamStore:
    """Ordered name -> ndarray map. Iteration order is insertion order and
    survives checkpoint round-trips."""

    def __init__(self, arrays: dict[str, np.ndarray] | None = None):
        self._arrays: dict[str, np.ndarray] = dict(arrays) if arrays else {}

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value: np.ndarray):
        self._arrays[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self._arrays.items()})

    def save(self, path):
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<I", len(self._arrays)))
            for name, arr in self._arrays.items():
                nb = name.encode("utf-8")
                f.write(struct.pack("<I", len(nb)))
                f.write(nb)
                f.write(struct.pack("<I", arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    @staticmethod
    def load(path) -> "ParamStore":
        with open(path, "rb") as f:
            if f.read(4) != CHECKPOINT_MAGIC:
                raise ValueError(f"{path}: not an IGT1 checkpoint")
            (count,) = struct.unpack("<I", f.read(4))
            arrays: dict[str, np.ndarray] = {}
            for _ in range(count):
                (nlen,) = struct.unpack("<I", f.read(4))
                name = f.read(nlen).decode("utf-8")
                (ndim,) = struct.unpack("<I", f.read(4))
                shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
                n = int(np.prod(shape)) if shape else 1
                arr = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape)
                arrays[name] = arr.copy()
        return ParamStore(arrays)


def init_params(config: NetConfig, seed: int) -> ParamStore:
    """Deterministic init: uniform fan-in scaling for convs and heads,
    zeros for the motion block (identity mapping at start)."""
    rng = np.random.default_rng(seed)
    dt = config.dtype
    store = ParamStore()

    def uniform(shape, fan_in):
        limit = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-limit, limit, size=shape).astype(dt)

    cin = config.in_channels
    for i, c in enumerate(config.convs):
        fan = cin * c.kernel * c.kernel
        store[f"conv{i}.w"] = uniform((c.out_channels, cin, c.kernel, c.kernel), fan)
        store[f"conv{i}.b"] = np.zeros(c.out_channels, dtype=dt)
        cin = c.out_channels

    k = config.num_ratios
    feat = config.feature_channels
    store["head_cls.w"] = uniform((2 * k, feat, 1, 1), feat)
    store["head_cls.b"] = np.zeros(2 * k, dtype=dt)
    store["head_reg.w"] = uniform((4 * k, feat, 1, 1), feat)
    store["head_reg.b"] = np.zeros(4 * k, dtype=dt)

    # affine residual on (cx, cy, w, h, vx, vy); zero weights = constant
    # velocity extrapolation
    store["motion.w"] = np.zeros((4, 6), dtype=dt)
    store["motion.b"] = np.zeros(4, dtype=dt)
    return store


@dataclass
class Tape:
    """Forward record: the parameter Vars plus the output heads, enough to
    replay exact gradients."""

    config: NetConfig
    params: dict[str, Var]
    cls: Var | None = None
    reg: Var | None = None
    aux: dict = field(default_factory=dict)

    def wrap(self, name: str) -> Var:
        return self.params[name]


def make_tape(config: NetConfig, params: ParamStore) -> Tape:
    return Tape(config=config, params={k: Var(v) for k, v in params.items()})


def embed(tape: Tape, image: np.ndarray | Var) -> Var:
    """Backbone feature extraction for one patch (C, H, W)."""
    x = image if isinstance(image, Var) else Var(np.asarray(image, dtype=tape.config.dtype))
    for i, c in enumerate(tape.config.convs):
        x = ad.conv2d(x, tape.params[f"conv{i}.w"], tape.params[f"conv{i}.b"], stride=c.stride)
        if i < len(tape.config.convs) - 1:
            x = ad.relu(x)
    return x


def heads(tape: Tape, template_feat: Var, search_feat: Var) -> tuple[Var, Var]:
    """Depthwise cross-correlation followed by the 1x1 head convolutions."""
    resp = ad.xcorr_depthwise(search_feat, template_feat)
    cls = ad.conv2d(resp, tape.params["head_cls.w"], tape.params["head_cls.b"], stride=1)
    reg = ad.conv2d(resp, tape.params["head_reg.w"], tape.params["head_reg.b"], stride=1)
    return cls, reg


def forward(
    params: ParamStore, template: np.ndarray, search: np.ndarray, config: NetConfig
) -> tuple[Var, Var, Tape]:
    """Full Siamese forward pass.

    template: (3, Tz, Tz) and search: (3, Tx, Tx), values in [0, 1].
    Returns (cls (2k, R, R), reg (4k, R, R), tape).
    """
    template = np.asarray(template, dtype=config.dtype)
    search = np.asarray(search, dtype=config.dtype)
    if template.shape != (config.in_channels, config.template_size, config.template_size):
        raise ValueError(f"template shape {template.shape} does not match config")
    if search.shape != (config.in_channels, config.search_size, config.search_size):
        raise ValueError(f"search shape {search.shape} does not match config")
    tape = make_tape(config, params)
    zf = embed(tape, template)
    xf = embed(tape, search)
    cls, reg = heads(tape, zf, xf)
    tape.cls, tape.reg = cls, reg
    return cls, reg, tape


def backward(tape: Tape, loss: Var) -> ParamStore:
    """Run the reverse sweep from a scalar loss and collect per-parameter
    gradients (zeros for parameters the loss does not touch)."""
    loss.backward()
    grads = ParamStore()
    for name, var in tape.params.items():
        g = var.grad if var.grad is not None else np.zeros_like(var.data)
        grads[name] = np.asarray(g, dtype=var.data.dtype)
    return grads


def motion_apply(tape: Tape, box_and_velocity: Var) -> Var:
    """Affine residual motion block on the 6-vector (cx, cy, w, h, vx, vy).

    Output = (cx+vx, cy+vy, w, h) + W @ v + b; at zero init this is exact
    constant-velocity extrapolation.
    """
    v = box_and_velocity
    base = ad.stack([v[0] + v[4], v[1] + v[5], v[2], v[3]])
    residual = ad.matmul(tape.params["motion.w"], v.reshape(6, 1)).reshape(4)
    return base + residual + tape.params["motion.b"]


def lr_schedule(
    epoch: int, total: int = 40, lr_start: float = 0.005, lr_end: float = 0.00005
) -> float:
    """Exponentially decaying learning rate hitting lr_start at epoch 0 and
    lr_end at the final epoch."""
    if not 0 <= epoch < total:
        raise ValueError(f"epoch {epoch} outside [0, {total})")
    if total == 1:
        return lr_start
    return lr_start * (lr_end / lr_start) ** (epoch / (total - 1))


def sgd_step(
    params: ParamStore,
    grads: ParamStore,
    lr: float,
    momentum: float = 0.0,
    velocity: dict[str, np.ndarray] | None = None,
) -> ParamStore:
    """Classical momentum update. `velocity` is mutated in place when given;
    momentum > 0 without a velocity dict is a single plain-SGD step."""
    if params.names() != grads.names():
        raise ValueError("parameter and gradient stores have different keys")
    out = ParamStore()
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"shape mismatch for {name}: {p.shape} vs {g.shape}")
        if velocity is not None:
            v = momentum * velocity.get(name, np.zeros_like(p)) + g
            velocity[name] = v
        else:
            v = g
        out[name] = (p - np.asarray(lr, dtype=p.dtype) * v).astype(p.dtype)
    return out
