"""Per-time-step 1-D ConvNet over the components of each exogenous vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Parameter, ShapeError, Tensor


@dataclass(frozen=True)
class ConvGeometry:
    maps: tuple[int, ...] = (16, 32, 64)
    kernel_width: int = 3
    pool_widths: tuple[int, ...] = (3, 3, 3)

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(int(f) for f in self.maps))
        object.__setattr__(self, "pool_widths", tuple(int(s) for s in self.pool_widths))
        if not self.maps:
            raise ValueError("conv geometry needs at least one layer")
        if len(self.pool_widths) != len(self.maps):
            raise ValueError(f"{len(self.maps)} conv layers but {len(self.pool_widths)} pool widths")
        if self.kernel_width < 1 or min(self.maps) < 1 or min(self.pool_widths) < 1:
            raise ValueError("kernel width, map counts and pool widths must all be >= 1")


NASDAQ_GEOMETRY = ConvGeometry((16, 32, 64), 3, (3, 3, 3))


def stage_lengths(n: int, geometry: ConvGeometry) -> list[int]:
    """Length after every conv+pool stage, starting from the raw input length ``n``.

    Raises ``ValueError`` when some stage input is shorter than the kernel.
    """
    lengths = [n]
    length = n
    q = geometry.kernel_width
    for layer, s in enumerate(geometry.pool_widths, start=1):
        if length < q:
            raise ValueError(f"conv layer {layer}: input length {length} shorter than kernel width {q}")
        length = -(-(length - q + 1) // s)
        lengths.append(length)
    return lengths


def flat_size(n: int, geometry: ConvGeometry) -> int:
    return stage_lengths(n, geometry)[-1] * geometry.maps[-1]


@dataclass
class ConvLayer:
    kernels: Parameter  # [F_out, F_in, q]
    biases: Parameter  # [F_out]
    pool_width: int = 1

    def __post_init__(self):
        if self.kernels.ndim != 3 or self.biases.shape != (self.kernels.shape[0],):
            raise ShapeError(f"kernels {self.kernels.shape} and biases {self.biases.shape} disagree")
        if self.pool_width < 1:
            raise ValueError(f"pool width must be >= 1, got {self.pool_width}")

    @property
    def width(self) -> int:
        return self.kernels.shape[2]


@dataclass
class ConvFrontendParams:
    layers: list[ConvLayer]
    fc_weight: Parameter  # [m, flat]
    fc_bias: Parameter  # [m]

    def parameters(self) -> list[Parameter]:
        out = []
        for layer in self.layers:
            out += [layer.kernels, layer.biases]
        return out + [self.fc_weight, self.fc_bias]

    @property
    def geometry(self) -> ConvGeometry:
        return ConvGeometry(
            tuple(l.kernels.shape[0] for l in self.layers),
            self.layers[0].width,
            tuple(l.pool_width for l in self.layers),
        )


def init_frontend(rng: np.random.Generator, n: int, m: int, geometry: ConvGeometry, dtype=np.float32):
    flat = flat_size(n, geometry)
    layers = []
    f_in = 1
    q = geometry.kernel_width
    for i, (f_out, s) in enumerate(zip(geometry.maps, geometry.pool_widths), start=1):
        bound = 1.0 / np.sqrt(f_in * q)
        kernels = rng.uniform(-bound, bound, size=(f_out, f_in, q)).astype(dtype)
        layers.append(
            ConvLayer(
                Parameter(f"frontend.conv{i}.kernels", kernels),
                Parameter(f"frontend.conv{i}.biases", np.zeros(f_out, dtype=dtype)),
                s,
            )
        )
        f_in = f_out
    bound = 1.0 / np.sqrt(flat)
    fc_w = rng.uniform(-bound, bound, size=(m, flat)).astype(dtype)
    return ConvFrontendParams(
        layers,
        Parameter("frontend.fc.weight", fc_w),
        Parameter("frontend.fc.bias", np.zeros(m, dtype=dtype)),
    )


def conv1d_layer(input_maps: Tensor, layer: ConvLayer) -> Tensor:
    """ReLU(valid convolution + bias). Accepts ``[F, len]`` or batched ``[N, F, len]``."""
    single = input_maps.ndim == 2
    x = nx.reshape(input_maps, (1,) + input_maps.shape) if single else input_maps
    if x.shape[2] < layer.width:
        raise ShapeError(f"conv input length {x.shape[2]} shorter than kernel width {layer.width}")
    out = nx.relu(nx.conv1d(x, layer.kernels) + nx.reshape(layer.biases, (-1, 1)))
    return nx.reshape(out, out.shape[1:]) if single else out


def max_pool(input_maps: Tensor, s: int) -> Tensor:
    single = input_maps.ndim == 2
    x = nx.reshape(input_maps, (1,) + input_maps.shape) if single else input_maps
    out = nx.max_pool1d(x, s)
    return nx.reshape(out, out.shape[1:]) if single else out


def encode_window(exogenous: Tensor, params: ConvFrontendParams) -> Tensor:
    """Map ``[..., T-1, n]`` exogenous rows to ``[..., T-1, m]`` feature vectors.

    Each row goes through the ConvNet on its own, so there is no mixing
    across time steps.
    """
    lead = exogenous.shape[:-1]
    n = exogenous.shape[-1]
    x = nx.reshape(exogenous, (-1, 1, n))
    for layer in params.layers:
        x = max_pool(conv1d_layer(x, layer), layer.pool_width)
    flat = nx.reshape(x, (x.shape[0], -1))
    out = nx.linear(flat, params.fc_weight, params.fc_bias)
    return nx.reshape(out, lead + (params.fc_weight.shape[0],))
