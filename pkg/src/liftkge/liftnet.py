"""Dimension-lifting network built from transposed convolutions.

A narrow entity vector of length ``input_dim`` is reshaped row-major into a
single-channel square map, pushed through a stack of bias-free transposed
convolutions each followed by ``tanh`` (the last one too), and flattened
row-major into a vector of length ``output_dim``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "TCLayerSpec",
    "LiftNetConfig",
    "LiftNetParams",
    "FCVariantConfig",
    "PlanningError",
    "tc_output_size",
    "default_config",
    "lift_forward",
    "param_count_liftnet",
    "plan_liftnet",
    "init_liftnet_params",
    "fc_layer_dims",
    "init_fc_weights",
    "fc_variant_forward",
    "param_count_fc",
]

KERNELS = range(2, 8)
STRIDES = range(1, 4)
PADDINGS = range(0, 2)
CHANNELS = (1, 2, 4, 8, 16, 32)
MAX_LAYERS = 4


class PlanningError(ValueError):
    """No LiftNet layout satisfies the requested dimensions."""


def tc_output_size(size: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    """Spatial output size of a transposed convolution."""
    if size < 1 or kernel < 1 or stride < 1 or padding < 0:
        raise ValueError(f"invalid layer geometry I={size}, K={kernel}, s={stride}, p={padding}")
    out = (size - 1) * stride - 2 * padding + kernel
    if out <= 0:
        raise ValueError(
            f"non-positive output size {out} for I={size}, K={kernel}, stride={stride}, padding={padding}"
        )
    return out


@dataclass(frozen=True)
class TCLayerSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"channel counts must be positive: {self}")
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError(f"invalid layer geometry: {self}")

    @property
    def params(self) -> int:
        return self.in_channels * self.out_channels * self.kernel**2


def _isqrt_exact(n: int) -> Optional[int]:
    if n < 1:
        return None
    r = math.isqrt(n)
    return r if r * r == n else None


@dataclass(frozen=True)
class LiftNetConfig:
    input_dim: int
    output_dim: int
    layers: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "layers", tuple(l if isinstance(l, TCLayerSpec) else TCLayerSpec(**l) for l in self.layers)
        )
        if not self.layers:
            raise ValueError("LiftNetConfig needs at least one layer")
        side = _isqrt_exact(self.input_dim)
        if side is None:
            raise ValueError(f"input_dim {self.input_dim} is not a perfect square")
        if self.layers[0].in_channels != 1:
            raise ValueError("first layer must take a single input channel")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_channels != b.in_channels:
                raise ValueError(f"channel mismatch between layers: {a.out_channels} -> {b.in_channels}")
        sizes = self.spatial_sizes()
        produced = self.layers[-1].out_channels * sizes[-1] ** 2
        if produced != self.output_dim:
            raise ValueError(
                f"layers produce {self.layers[-1].out_channels}x{sizes[-1]}x{sizes[-1]} = {produced}, "
                f"expected output_dim {self.output_dim}"
            )

    @property
    def side(self) -> int:
        return math.isqrt(self.input_dim)

    def spatial_sizes(self) -> list:
        """Feature-map side length before the first layer and after each layer."""
        sizes = [math.isqrt(self.input_dim)]
        for layer in self.layers:
            sizes.append(tc_output_size(sizes[-1], layer.kernel, layer.stride, layer.padding))
        return sizes

    def shapes(self) -> list:
        """``(channels, side, side)`` at every stage."""
        sizes = self.spatial_sizes()
        chans = [1] + [l.out_channels for l in self.layers]
        return [(c, s, s) for c, s in zip(chans, sizes)]

    def kernel_shapes(self) -> list:
        return [(l.in_channels, l.out_channels, l.kernel, l.kernel) for l in self.layers]

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "output_dim": self.output_dim, "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "LiftNetConfig":
        return cls(int(d["input_dim"]), int(d["output_dim"]), tuple(TCLayerSpec(**l) for l in d["layers"]))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "LiftNetConfig":
        return cls.from_dict(json.loads(text))


def default_config() -> LiftNetConfig:
    """Two layers lifting 16 to 512: 1x4x4 -> 4x6x6 -> 8x8x8."""
    return LiftNetConfig(16, 512, (TCLayerSpec(1, 4, 3), TCLayerSpec(4, 8, 3)))


@dataclass
class LiftNetParams:
    kernels: list = field(default_factory=list)

    def check(self, cfg: LiftNetConfig) -> None:
        want = cfg.kernel_shapes()
        got = [tuple(np.shape(k.data if isinstance(k, Tensor) else k)) for k in self.kernels]
        if got != want:
            raise ad.ShapeError(f"kernel shapes {got} do not match config {want}")


def param_count_liftnet(cfg: LiftNetConfig) -> int:
    return sum(l.params for l in cfg.layers)


def init_liftnet_params(cfg: LiftNetConfig, rng: np.random.Generator) -> LiftNetParams:
    """Glorot-uniform kernels with fans counted over ``C * K^2``."""
    kernels = []
    for l in cfg.layers:
        bound = math.sqrt(6.0 / ((l.in_channels + l.out_channels) * l.kernel**2))
        kernels.append(rng.uniform(-bound, bound, size=(l.in_channels, l.out_channels, l.kernel, l.kernel)))
    return LiftNetParams(kernels)


def lift_forward(x: Tensor, cfg: LiftNetConfig, params: LiftNetParams) -> Tensor:
    """Lift a ``batch x input_dim`` tensor to ``batch x output_dim``."""
    if x.data.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ad.ShapeError(f"lift_forward: expected (batch, {cfg.input_dim}), got {x.shape}")
    params.check(cfg)
    b = x.shape[0]
    side = cfg.side
    h = ad.reshape(x, (b, 1, side, side))
    for layer, k in zip(cfg.layers, params.kernels):
        k = k if isinstance(k, Tensor) else Tensor(k)
        h = ad.tanh(ad.transposed_conv2d(h, k, layer.stride, layer.padding))
    return ad.reshape(h, (b, cfg.output_dim))


# ---------------------------------------------------------------- planning


def _channel_schedules(num_layers: int):
    """Default 1->4->8->16... schedule first, then other power-of-two ladders."""
    default = tuple([1] + [4 * 2**i for i in range(num_layers)])
    yield default
    for tail in itertools.product(CHANNELS, repeat=num_layers):
        sched = (1,) + tail
        if sched != default and all(a <= b for a, b in zip(sched, sched[1:])):
            yield sched


def _plan_spatial(side: int, target: int, chans: tuple):
    """Cheapest per-layer (K, s, p) sequence taking ``side`` to ``target``.

    The cost is an additive tuple compared lexicographically: layers with
    non-unit stride or nonzero padding, then the sum of squared kernel sizes
    (favours even kernels across layers), then parameters, then total kernel
    size.  Lexicographic order is compatible with addition, so a layer-wise
    dynamic programme finds the optimum.
    """
    options = [(k, s, p) for k in KERNELS for s in STRIDES for p in PADDINGS]
    limit = max(target, side) * 4 + 8
    frontier = {side: ((0, 0, 0, 0), ())}
    for i in range(len(chans) - 1):
        nxt: dict = {}
        for size, (cost, path) in sorted(frontier.items()):
            for k, s, p in options:
                out = (size - 1) * s - 2 * p + k
                if out <= 0 or out > limit:
                    continue
                step = (int(s != 1 or p != 0), k * k, chans[i] * chans[i + 1] * k * k, k)
                c = tuple(a + b for a, b in zip(cost, step))
                if out not in nxt or c < nxt[out][0]:
                    nxt[out] = (c, path + ((k, s, p),))
        frontier = nxt
    return frontier.get(target)


def plan_liftnet(input_dim: int, output_dim: int, num_layers: int) -> LiftNetConfig:
    """Deterministically pick a layer stack lifting ``input_dim`` to ``output_dim``.

    Kernels 2..7, strides 1..3 and paddings 0..1 are searched per layer.  The
    doubling channel schedule 1->4->8->... is used whenever it admits a plan;
    otherwise non-decreasing power-of-two schedules are tried, cheapest first.
    """
    side = _isqrt_exact(input_dim)
    if side is None:
        raise PlanningError(f"input_dim {input_dim} is not a perfect square")
    if not 1 <= num_layers <= MAX_LAYERS:
        raise PlanningError(f"num_layers must be in 1..{MAX_LAYERS}, got {num_layers}")
    best = None
    for rank, chans in enumerate(_channel_schedules(num_layers)):
        c = chans[-1]
        if output_dim % c:
            continue
        m = _isqrt_exact(output_dim // c)
        if m is None:
            continue
        found = _plan_spatial(side, m, chans)
        if found is None:
            continue
        cost, path = found
        key = (rank > 0, cost, chans)
        if best is None or key < best[0]:
            best = (key, chans, path)
        if rank == 0:
            break
    if best is None:
        raise PlanningError(
            f"no LiftNet with {num_layers} layer(s) lifts {input_dim} to {output_dim}; searched "
            f"kernels {list(KERNELS)}, strides {list(STRIDES)}, paddings {list(PADDINGS)}, "
            f"channels {CHANNELS} (non-decreasing, starting at 1)"
        )
    _, chans, path = best
    layers = tuple(TCLayerSpec(chans[i], chans[i + 1], k, s, p) for i, (k, s, p) in enumerate(path))
    return LiftNetConfig(input_dim, output_dim, layers)


# ---------------------------------------------------------------- FC variant


@dataclass(frozen=True)
class FCVariantConfig:
    layer_dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValueError(f"FC variant needs at least two positive dims, got {self.layer_dims}")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @classmethod
    def geometric(cls, input_dim: int, output_dim: int, num_layers: int) -> "FCVariantConfig":
        return cls(fc_layer_dims(input_dim, output_dim, num_layers))

    def to_dict(self) -> dict:
        return {"layer_dims": list(self.layer_dims)}

    @classmethod
    def from_dict(cls, d: dict) -> "FCVariantConfig":
        return cls(tuple(d["layer_dims"]))


def fc_layer_dims(input_dim: int, output_dim: int, num_layers: int) -> tuple:
    """Widths on a geometric progression, e.g. 16 -> 91 -> 512 for two layers."""
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    ratio = output_dim / input_dim
    inner = [int(round(input_dim * ratio ** (i / num_layers))) for i in range(1, num_layers)]
    return (input_dim, *inner, output_dim)


def param_count_fc(cfg: FCVariantConfig) -> int:
    d = cfg.layer_dims
    return sum(a * b + b for a, b in zip(d, d[1:]))


def init_fc_weights(cfg: FCVariantConfig, rng: np.random.Generator) -> list:
    """``[(W0, b0), (W1, b1), ...]`` with Glorot-uniform weights and zero biases."""
    out = []
    for a, b in zip(cfg.layer_dims, cfg.layer_dims[1:]):
        bound = math.sqrt(6.0 / (a + b))
        out.append((rng.uniform(-bound, bound, size=(a, b)), np.zeros(b)))
    return out


def fc_variant_forward(x: Tensor, cfg: FCVariantConfig, weights: Sequence) -> Tensor:
    """Dense affine layers, each followed by ``tanh``."""
    if x.data.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ad.ShapeError(f"fc_variant_forward: expected (batch, {cfg.input_dim}), got {x.shape}")
    if len(weights) != len(cfg.layer_dims) - 1:
        raise ad.ShapeError(f"expected {len(cfg.layer_dims) - 1} weight pairs, got {len(weights)}")
    h = x
    for (w, b), (a, o) in zip(weights, zip(cfg.layer_dims, cfg.layer_dims[1:])):
        w = w if isinstance(w, Tensor) else Tensor(w)
        b = b if isinstance(b, Tensor) else Tensor(b)
        if w.shape != (a, o) or b.shape != (o,):
            raise ad.ShapeError(f"FC layer {a}->{o}: got weight {w.shape}, bias {b.shape}")
        h = ad.tanh(ad.add_bias(ad.matmul(h, w), b))
    return h
