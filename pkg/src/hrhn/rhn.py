"""Recurrent highway cell with recurrence depth K.

The three gate transforms (G, R, C) are kept in one stacked matrix per
depth, rows ordered G, R, C, so each highway layer costs one product.
The per-gate blocks are exposed as views for inspection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Parameter, ShapeError, Tensor


@dataclass
class RhnParams:
    input_weight: Parameter  # [3h, in], applied at depth 1 only
    recurrent_weights: list[Parameter]  # K x [3h, h]
    biases: list[Parameter]  # K x [3h]

    def __post_init__(self):
        h3 = self.input_weight.shape[0]
        if h3 % 3:
            raise ShapeError(f"stacked input weight needs 3h rows, got {h3}")
        if len(self.recurrent_weights) != len(self.biases) or not self.biases:
            raise ShapeError("need K >= 1 recurrent weights and K biases")
        h = h3 // 3
        for v, b in zip(self.recurrent_weights, self.biases):
            if v.shape != (h3, h) or b.shape != (h3,):
                raise ShapeError(f"depth weights {v.shape}/{b.shape} do not match hidden size {h}")

    @property
    def hidden(self) -> int:
        return self.input_weight.shape[0] // 3

    @property
    def depth(self) -> int:
        return len(self.recurrent_weights)

    @property
    def input_dim(self) -> int:
        return self.input_weight.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.input_weight, *self.recurrent_weights, *self.biases]

    def gate(self, name: str, k: int | None = None):
        """Return (W, V_k, b_k) views for gate ``name`` in {'G','R','C'}; ``k`` is 1-based."""
        h = self.hidden
        rows = slice("GRC".index(name) * h, ("GRC".index(name) + 1) * h)
        w = self.input_weight.data[rows]
        if k is None:
            return w
        return w, self.recurrent_weights[k - 1].data[rows], self.biases[k - 1].data[rows]


def init_rhn(rng: np.random.Generator, prefix: str, input_dim: int, hidden: int, depth: int, dtype=np.float32):
    b_in = 1.0 / np.sqrt(input_dim)
    b_h = 1.0 / np.sqrt(hidden)
    return RhnParams(
        Parameter(f"{prefix}.W", rng.uniform(-b_in, b_in, size=(3 * hidden, input_dim)).astype(dtype)),
        [
            Parameter(f"{prefix}.V{k}", rng.uniform(-b_h, b_h, size=(3 * hidden, hidden)).astype(dtype))
            for k in range(1, depth + 1)
        ],
        [Parameter(f"{prefix}.b{k}", np.zeros(3 * hidden, dtype=dtype)) for k in range(1, depth + 1)],
    )


def _step(x_proj: Tensor, prev_top: Tensor, params: RhnParams, gates: list | None = None) -> list[Tensor]:
    h = params.hidden
    state = prev_top
    out = []
    for k in range(params.depth):
        z = nx.linear(state, params.recurrent_weights[k], params.biases[k])
        if k == 0:
            z = z + x_proj
        g = nx.tanh(z[..., :h])
        r = nx.sigmoid(z[..., h : 2 * h])
        c = nx.sigmoid(z[..., 2 * h :])
        if gates is not None:
            gates.append((g.data, r.data, c.data))
        state = g * r + state * c
        out.append(state)
    return out


def rhn_step(input: Tensor, prev_top: Tensor, params: RhnParams, gates: list | None = None) -> list[Tensor]:
    """One time step; returns the K per-depth states h^[1..K].

    If ``gates`` is a list, the (g, r, c) arrays of every depth are appended to it.
    """
    if input.shape[-1] != params.input_dim:
        raise ShapeError(f"rhn input length {input.shape[-1]} != weight columns {params.input_dim}")
    if prev_top.shape[-1] != params.hidden:
        raise ShapeError(f"previous state length {prev_top.shape[-1]} != hidden size {params.hidden}")
    return _step(nx.linear(input, params.input_weight), prev_top, params, gates)


@dataclass
class HiddenStateGrid:
    """All states h_t^[k]; ``states[t][k-1]`` is a ``[..., hidden]`` tensor."""

    states: list[list[Tensor]]

    @property
    def length(self) -> int:
        return len(self.states)

    @property
    def depth(self) -> int:
        return len(self.states[0])

    def top(self, t: int = -1) -> Tensor:
        return self.states[t][-1]

    def layer(self, k: int) -> Tensor:
        """Depth-``k`` states (1-based) stacked over time: ``[..., T-1, hidden]``."""
        return nx.stack([row[k - 1] for row in self.states], axis=-2)

    def layers(self, depths) -> Tensor:
        """Stack of :meth:`layer` for each depth: ``[..., len(depths), T-1, hidden]``."""
        return nx.stack([self.layer(k) for k in depths], axis=-3)

    def to_array(self) -> np.ndarray:
        """``[..., T-1, K, hidden]`` numpy copy."""
        return np.stack([np.stack([s.data for s in row], axis=-2) for row in self.states], axis=-3)


def run_sequence(inputs: Tensor, params: RhnParams, initial_top: Tensor | None = None) -> HiddenStateGrid:
    """Run the cell over ``inputs`` of shape ``[..., T', in]`` (time on axis -2)."""
    if inputs.ndim < 2 or inputs.shape[-2] == 0:
        raise ShapeError("run_sequence needs a nonempty input sequence")
    if inputs.shape[-1] != params.input_dim:
        raise ShapeError(f"rhn input length {inputs.shape[-1]} != weight columns {params.input_dim}")
    if initial_top is None:
        initial_top = Tensor(np.zeros(inputs.shape[:-2] + (params.hidden,), dtype=inputs.dtype))
    proj = nx.linear(inputs, params.input_weight)
    top = initial_top
    states = []
    for t in range(inputs.shape[-2]):
        row = _step(proj[..., t, :], top, params)
        states.append(row)
        top = row[-1]
    return HiddenStateGrid(states)
