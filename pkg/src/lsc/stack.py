"""Deep recurrent stacks: forward trajectories, transition Jacobians, backprop.

Indexing is causal: ``h[t, l] = g(h[t-1, l], out(h[t-1, l-1]))`` with the data
frame ``x[t-1]`` playing the role of layer 0. Layers are 0-based in code.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cells import Cell, CellSpec, make_cell
from .errors import ConfigError, DimensionError, NumericalError
from .linalg_core import InitScheme, induced_norm, init_matrix, pad_square, spectral_radius

__all__ = [
    "StackConfig",
    "StackParams",
    "StackRun",
    "JacobianGrid",
    "TransitionJacobians",
    "build_stack",
    "init_stack_params",
    "stack_forward",
    "transition_jacobians",
    "backprop",
    "readout_vjp",
]


@dataclass(frozen=True)
class StackConfig:
    layers: tuple[CellSpec, ...]
    n_classes: int | None = None  # None means identity readout on the top output

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("a stack needs at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))
        for i in range(1, len(self.layers)):
            if self.layers[i].input_width != self.layers[i - 1].width:
                raise ConfigError(
                    f"layer {i + 1} expects input width {self.layers[i].input_width}, "
                    f"layer {i} has width {self.layers[i - 1].width}")
        if self.n_classes is not None and self.n_classes < 1:
            raise ConfigError("n_classes must be >= 1")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def channels(self) -> int:
        return self.layers[0].input_width

    @property
    def cells(self) -> list[Cell]:
        return [make_cell(s) for s in self.layers]


def build_stack(kind: str, depth: int, width: int, channels: int, n_classes: int | None = None,
                **cell_kw) -> StackConfig:
    """Uniform stack of ``depth`` identical cell kinds."""
    specs = [CellSpec(kind, width, channels if i == 0 else width, **cell_kw) for i in range(depth)]
    return StackConfig(tuple(specs), n_classes)


@dataclass
class StackParams:
    layers: list[dict[str, np.ndarray]]
    readout: dict[str, np.ndarray] | None = None

    def copy(self) -> "StackParams":
        return StackParams([{k: v.copy() for k, v in p.items()} for p in self.layers],
                           None if self.readout is None else {k: v.copy() for k, v in self.readout.items()})

    def flat_items(self):
        """``((owner, name), array)`` pairs in a fixed order; owner is a layer index or 'readout'."""
        for i, p in enumerate(self.layers):
            for k in sorted(p):
                yield (i, k), p[k]
        if self.readout is not None:
            for k in sorted(self.readout):
                yield ("readout", k), self.readout[k]

    def get(self, key):
        owner, name = key
        return self.readout[name] if owner == "readout" else self.layers[owner][name]


def init_stack_params(stack: StackConfig, rng: np.random.Generator) -> StackParams:
    layers = []
    for cell in stack.cells:
        layers.append(cell.init_params(rng))
    readout = None
    if stack.n_classes is not None:
        top = stack.layers[-1].width
        readout = {"W_R": init_matrix(InitScheme.glorot_uniform(), stack.n_classes, top, rng),
                   "b_R": np.zeros(stack.n_classes)}
    return StackParams(layers, readout)


@dataclass
class StackRun:
    """Recorded trajectory. ``states[l]`` is ``(T+1, B, n_state)``; ``inputs`` is
    ``(T, B, C)``; ``outputs`` is ``(T, B, K)`` for steps ``t = 1..T``."""

    stack: StackConfig
    states: list[np.ndarray]
    inputs: np.ndarray
    outputs: np.ndarray

    @property
    def T(self) -> int:
        return self.inputs.shape[0]

    @property
    def batch(self) -> int:
        return self.inputs.shape[1]

    def below(self, t: int, l: int, cells: list[Cell] | None = None) -> np.ndarray:
        """Vector entering layer ``l`` at step ``t`` (from step ``t-1``)."""
        if l == 0:
            return self.inputs[t - 1]
        cells = cells or self.stack.cells
        return cells[l - 1].output(self.states[l - 1][t - 1])


def _as_batched_inputs(inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 2:
        x = x[:, None, :]
    if x.ndim != 3:
        raise DimensionError(f"inputs must be (T, C) or (T, B, C), got {x.shape}")
    return x


def stack_forward(stack: StackConfig, params: StackParams, inputs) -> StackRun:
    x = _as_batched_inputs(inputs)
    T, B, C = x.shape
    if T < 1:
        raise DimensionError("need at least one time step")
    if C != stack.channels:
        raise ConfigError(f"inputs have {C} channels, the first layer expects {stack.channels}")
    if not np.all(np.isfinite(x)):
        raise NumericalError("inputs contain non-finite values")
    cells = stack.cells
    states = []
    for cell, p in zip(cells, params.layers):
        cell.check_params(p)
        s = np.empty((T + 1, B, cell.n_state))
        s[0] = cell.initial_state(p, B)
        states.append(s)
    for t in range(1, T + 1):
        for l, (cell, p) in enumerate(zip(cells, params.layers)):
            below = x[t - 1] if l == 0 else cells[l - 1].output(states[l - 1][t - 1])
            states[l][t] = cell.step(p, states[l][t - 1], below)
    top = np.stack([cells[-1].output(states[-1][t]) for t in range(1, T + 1)])
    if params.readout is None:
        outputs = top
    else:
        outputs = top @ params.readout["W_R"].T + params.readout["b_R"]
    return StackRun(stack, states, x, outputs)


# --------------------------------------------------------------- Jacobians

@dataclass
class TransitionJacobians:
    """The pair of transition derivatives entering ``(t, l)`` for one sample."""

    t: int
    l: int
    time_jac: np.ndarray
    depth_jac: np.ndarray
    rho_time: float
    rho_depth: float
    a_time: dict = field(default_factory=dict)
    a_depth: dict = field(default_factory=dict)


@dataclass
class JacobianGrid:
    """``time[l][t-1] = d h[t,l] / d h[t-1,l]`` and ``depth[l][t-1] = d h[t,l] / d h[t-1,l-1]``
    (for ``l = 0`` the latter is w.r.t. the input frame). Arrays carry a batch axis."""

    time: list[np.ndarray]
    depth: list[np.ndarray]

    @property
    def T(self) -> int:
        return self.time[0].shape[0]

    @property
    def L(self) -> int:
        return len(self.time)

    def at(self, t: int, l: int, b: int = 0, norms=(1, 2, np.inf)) -> TransitionJacobians:
        """Both Jacobians entering step ``t`` (1-based) of layer ``l`` (1-based)."""
        if not (1 <= t <= self.T and 1 <= l <= self.L):
            raise IndexError(f"(t={t}, l={l}) outside the grid")
        mt = self.time[l - 1][t - 1, b]
        md = self.depth[l - 1][t - 1, b]
        return TransitionJacobians(
            t, l, mt, md,
            spectral_radius(mt), spectral_radius(pad_square(md)),
            {p: induced_norm(mt, p) for p in norms},
            {p: induced_norm(md, p) for p in norms},
        )


def transition_jacobians(stack: StackConfig, params: StackParams, run: StackRun) -> JacobianGrid:
    cells = stack.cells
    time, depth = [], []
    for l, (cell, p) in enumerate(zip(cells, params.layers)):
        jt = np.empty((run.T, run.batch, cell.n_state, cell.n_state))
        n_below = stack.channels if l == 0 else cells[l - 1].n_state
        jd = np.empty((run.T, run.batch, cell.n_state, n_below))
        for t in range(1, run.T + 1):
            prev = run.states[l][t - 1]
            below = run.below(t, l, cells)
            jt[t - 1] = cell.jac_time(p, prev, below)
            ji = cell.jac_input(p, prev, below)
            if l > 0:
                ji = ji @ cells[l - 1].output_jac(run.states[l - 1][t - 1])
            jd[t - 1] = ji
        time.append(jt)
        depth.append(jd)
    return JacobianGrid(time, depth)


# ---------------------------------------------------------------- backprop

def readout_vjp(stack: StackConfig, params: StackParams, run: StackRun, g_outputs: np.ndarray,
                per_sample: bool = False):
    """Map output cotangents ``(T, B, K)`` onto top-layer state cotangents.

    Returns ``(state_cotangents (T+1, B, n_state), readout grads or None)``.
    """
    top = stack.cells[-1]
    T, B = run.T, run.batch
    cot = np.zeros((T + 1, B, top.n_state))
    grads = None
    if params.readout is None:
        g_top = g_outputs
    else:
        W = params.readout["W_R"]
        g_top = g_outputs @ W
        outs = np.stack([top.output(run.states[-1][t]) for t in range(1, T + 1)])
        if per_sample:
            grads = {"W_R": np.einsum("tbk,tbj->bkj", g_outputs, outs), "b_R": g_outputs.sum(axis=0)}
        else:
            grads = {"W_R": np.einsum("tbk,tbj->kj", g_outputs, outs), "b_R": g_outputs.sum(axis=(0, 1))}
    for t in range(1, T + 1):
        cot[t] = top.output_vjp(run.states[-1][t], g_top[t - 1])
    return cot, grads


def backprop(stack: StackConfig, params: StackParams, run: StackRun,
             state_cotangents: list[np.ndarray | None], per_sample: bool = False):
    """Reverse sweep through the grid.

    ``state_cotangents[l]`` holds direct loss sensitivities ``(T+1, B, n_state)``
    for layer ``l`` (or None). Returns per-layer parameter gradients (summed
    over the batch unless ``per_sample``) and the cotangent of the inputs.
    """
    cells = stack.cells
    T, B = run.T, run.batch
    L = len(cells)
    adj = []
    for l, cell in enumerate(cells):
        c = state_cotangents[l]
        adj.append(np.zeros((T + 1, B, cell.n_state)) if c is None else np.array(c, dtype=float))
    grads: list[dict[str, np.ndarray]] = [dict() for _ in range(L)]
    g_inputs = np.zeros_like(run.inputs)

    def acc(l, g):
        for k, v in g.items():
            if k in grads[l]:
                grads[l][k] += v
            else:
                grads[l][k] = v.copy()

    for t in range(T, 0, -1):
        for l in range(L - 1, -1, -1):
            g = adj[l][t]
            if not np.any(g):
                continue
            cell, p = cells[l], params.layers[l]
            below = run.below(t, l, cells)
            g_prev, g_below, g_p = cell.step_vjp(p, run.states[l][t - 1], below, g, per_sample)
            adj[l][t - 1] += g_prev
            acc(l, g_p)
            if l == 0:
                g_inputs[t - 1] += g_below
            else:
                adj[l - 1][t - 1] += cells[l - 1].output_vjp(run.states[l - 1][t - 1], g_below)
    for l, (cell, p) in enumerate(zip(cells, params.layers)):
        acc(l, cell.initial_state_vjp(p, adj[l][0], per_sample))
        for k, v in p.items():
            if k not in grads[l]:
                grads[l][k] = np.zeros((B,) + v.shape if per_sample else v.shape)
    return grads, g_inputs
