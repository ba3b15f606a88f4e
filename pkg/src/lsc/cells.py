"""Recurrent cells with analytic transition Jacobians.

All cell methods are batched: states are ``(B, n_state)``, inputs from below
are ``(B, n_in)``. Jacobians come back as ``(B, rows, cols)``.

State layouts: PascalRNN, SimpleRNN and GRU carry ``[h]``; LSTM carries
``[h; c]``; ALIF carries ``[y; theta]`` and emits spikes ``H(y - theta)``.
The vector a layer passes upward is ``Cell.output(state)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DimensionError
from .linalg_core import InitScheme, init_matrix, init_vector

__all__ = [
    "CellSpec",
    "Cell",
    "make_cell",
    "surrogate_heaviside",
    "relaxed_heaviside",
    "cell_forward",
    "jac_time",
    "jac_depth",
    "CELL_KINDS",
]

CELL_KINDS = ("pascal", "rnn", "gru", "lstm", "alif")
ACTIVATIONS = ("sigmoid", "relu", "swish")

# ALIF initial means for the rate parameters
ALIF_MEANS = {"tau_y": 0.1, "tau_theta": 100.0, "b_theta": 0.01, "beta": 1.8}


@dataclass(frozen=True)
class CellSpec:
    kind: str
    width: int
    input_width: int
    rho: float = 1.0
    activation: str = "sigmoid"
    variant: str = "plus"
    gamma: float = 0.5
    omega: float = 1.0
    relaxed: bool = False
    tau_floor: float = 0.1

    def __post_init__(self):
        if self.kind not in CELL_KINDS:
            raise ValueError(f"unknown cell kind {self.kind!r}")
        if self.width < 1 or self.input_width < 1:
            raise DimensionError("cell widths must be >= 1")
        if self.kind == "pascal":
            if self.rho < 0:
                raise ValueError("PascalRNN rho must be >= 0")
            if self.input_width != self.width:
                raise DimensionError("PascalRNN adds its input elementwise; widths must match")
        if self.kind == "rnn" and self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == "alif":
            if self.variant not in ("plus", "pm"):
                raise ValueError("ALIF variant must be 'plus' or 'pm'")
            if self.gamma <= 0 or self.omega <= 0:
                raise ValueError("surrogate gamma and omega must be > 0")

    @property
    def n_state(self) -> int:
        return 2 * self.width if self.kind in ("lstm", "alif") else self.width

    @property
    def label(self) -> str:
        if self.kind == "rnn":
            return f"rnn-{self.activation}"
        if self.kind == "alif":
            return f"alif-{self.variant}"
        return self.kind


# ------------------------------------------------------------- activations

def _act(name: str, z: np.ndarray):
    """Value, first and second derivative of an activation."""
    if name == "sigmoid":
        s = expit(z)
        d1 = s * (1.0 - s)
        return s, d1, d1 * (1.0 - 2.0 * s)
    if name == "relu":
        return np.maximum(z, 0.0), (z > 0).astype(float), np.zeros_like(z)
    if name == "swish":
        s = expit(z)
        ds = s * (1.0 - s)
        return z * s, s + z * ds, ds * (2.0 + z * (1.0 - 2.0 * s))
    if name == "tanh":
        t = np.tanh(z)
        d1 = 1.0 - t * t
        return t, d1, -2.0 * t * d1
    raise ValueError(name)


def surrogate_heaviside(v, gamma: float = 0.5, omega: float = 1.0):
    """Heaviside step (1 at v >= 0) and its fast-sigmoid pseudo-derivative."""
    if gamma <= 0 or omega <= 0:
        raise ValueError("gamma and omega must be > 0")
    v = np.asarray(v, dtype=float)
    value = (v >= 0).astype(float)
    deriv = gamma / (1.0 + omega * np.abs(v)) ** 2
    if value.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


def relaxed_heaviside(v, gamma: float = 0.5, omega: float = 1.0):
    """Smooth step whose exact derivative is the surrogate ``gamma/(1+omega|v|)^2``."""
    v = np.asarray(v, dtype=float)
    return 0.5 + gamma * v / (1.0 + omega * np.abs(v))


def _outer_sum(a: np.ndarray, b: np.ndarray, per_sample: bool) -> np.ndarray:
    if per_sample:
        return np.einsum("bi,bj->bij", a, b)
    return a.T @ b


def _vec_sum(a: np.ndarray, per_sample: bool) -> np.ndarray:
    return a if per_sample else a.sum(axis=0)


# -------------------------------------------------------------- base class

class Cell:
    """Shared machinery; subclasses fill in the cell equations."""

    input_side: tuple[str, ...] = ()
    recurrent_side: tuple[str, ...] = ()
    frozen: tuple[str, ...] = ()

    def __init__(self, spec: CellSpec):
        self.spec = spec
        self.n = spec.width
        self.m = spec.input_width
        self.n_state = spec.n_state

    # parameters -------------------------------------------------------
    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def trainable(self, params) -> list[str]:
        return [k for k in params if k not in self.frozen]

    def check_params(self, params) -> None:
        shapes = self.param_shapes()
        for name, shape in shapes.items():
            if name not in params:
                raise DimensionError(f"{self.spec.label}: missing parameter {name}")
            if params[name].shape != shape:
                raise DimensionError(
                    f"{self.spec.label}: {name} has shape {params[name].shape}, expected {shape}")

    def param_shapes(self) -> dict[str, tuple]:
        raise NotImplementedError

    # states -----------------------------------------------------------
    def initial_state(self, params, batch: int) -> np.ndarray:
        return np.zeros((batch, self.n_state))

    def initial_state_vjp(self, params, g0: np.ndarray, per_sample=False) -> dict:
        return {}

    def output(self, state: np.ndarray) -> np.ndarray:
        return state[:, : self.n]

    def output_jac(self, state: np.ndarray) -> np.ndarray:
        b = state.shape[0]
        j = np.zeros((b, self.n, self.n_state))
        j[:, :, : self.n] = np.eye(self.n)
        return j

    def output_vjp(self, state: np.ndarray, g_out: np.ndarray) -> np.ndarray:
        g = np.zeros_like(state)
        g[:, : self.n] = g_out
        return g

    # dynamics ---------------------------------------------------------
    def step(self, params, prev, below) -> np.ndarray:
        raise NotImplementedError

    def jac_time(self, params, prev, below) -> np.ndarray:
        raise NotImplementedError

    def jac_input(self, params, prev, below) -> np.ndarray:
        raise NotImplementedError

    def step_vjp(self, params, prev, below, g, per_sample=False):
        """Cotangents ``(g_prev, g_below, g_params)`` for state cotangent ``g``."""
        raise NotImplementedError

    def jac_bilinear_grad(self, params, prev, below, which, u, v, eps=1e-5):
        """Gradient of ``sum_b u_b^T J_b v_b`` where ``J`` is the time (``which="time"``)
        or input (``which="input"``) Jacobian.

        Returns ``(g_params, g_prev, g_below)`` with parameter gradients summed
        over the batch. The default differentiates the analytic VJP along ``v``
        with a central difference; subclasses may override with closed forms.
        """
        if which == "time":
            plus = self.step_vjp(params, prev + eps * v, below, u)
            minus = self.step_vjp(params, prev - eps * v, below, u)
        elif which == "input":
            plus = self.step_vjp(params, prev, below + eps * v, u)
            minus = self.step_vjp(params, prev, below - eps * v, u)
        else:
            raise ValueError(which)
        scale = 0.5 / eps
        g_prev = (plus[0] - minus[0]) * scale
        g_below = (plus[1] - minus[1]) * scale
        g_params = {k: (plus[2][k] - minus[2][k]) * scale for k in plus[2]}
        return g_params, g_prev, g_below

    def clamp(self, params) -> dict:
        return params

    def _check(self, prev, below):
        if prev.ndim != 2 or prev.shape[1] != self.n_state:
            raise DimensionError(
                f"{self.spec.label}: state has shape {prev.shape}, expected (B, {self.n_state})")
        if below.ndim != 2 or below.shape[1] != self.m or below.shape[0] != prev.shape[0]:
            raise DimensionError(
                f"{self.spec.label}: input has shape {below.shape}, expected (B, {self.m})")


# --------------------------------------------------------------- PascalRNN

class PascalCell(Cell):
    """``h = rho * h_prev + rho * below``; rho is stored as a one-element tensor."""

    input_side = ("rho",)
    recurrent_side = ("rho",)

    def param_shapes(self):
        return {"rho": (1,)}

    def init_params(self, rng):
        return {"rho": np.array([float(self.spec.rho)])}

    def step(self, params, prev, below):
        self._check(prev, below)
        r = params["rho"][0]
        return r * prev + r * below

    def jac_time(self, params, prev, below):
        return params["rho"][0] * np.broadcast_to(np.eye(self.n), (prev.shape[0], self.n, self.n)).copy()

    def jac_input(self, params, prev, below):
        return self.jac_time(params, prev, below)

    def step_vjp(self, params, prev, below, g, per_sample=False):
        r = params["rho"][0]
        gr = np.sum(g * (prev + below), axis=1, keepdims=True)
        return r * g, r * g, {"rho": gr if per_sample else gr.sum(axis=0)}

    def jac_bilinear_grad(self, params, prev, below, which, u, v, eps=None):
        z = np.zeros_like
        return {"rho": np.array([np.sum(u * v)])}, z(prev), z(below)


# --------------------------------------------------------------- SimpleRNN

class RNNCell(Cell):
    input_side = ("W_in",)
    recurrent_side = ("W_rec",)

    def param_shapes(self):
        return {"W_rec": (self.n, self.n), "W_in": (self.n, self.m), "b": (self.n,)}

    def init_params(self, rng):
        return {
            "W_rec": init_matrix(InitScheme.orthogonal(), self.n, self.n, rng),
            "W_in": init_matrix(InitScheme.glorot_uniform(), self.n, self.m, rng),
            "b": init_vector(InitScheme.glorot_uniform(), self.n, rng),
        }

    def _pre(self, params, prev, below):
        return prev @ params["W_rec"].T + below @ params["W_in"].T + params["b"]

    def step(self, params, prev, below):
        self._check(prev, below)
        return _act(self.spec.activation, self._pre(params, prev, below))[0]

    def jac_time(self, params, prev, below):
        d1 = _act(self.spec.activation, self._pre(params, prev, below))[1]
        return d1[:, :, None] * params["W_rec"][None]

    def jac_input(self, params, prev, below):
        d1 = _act(self.spec.activation, self._pre(params, prev, below))[1]
        return d1[:, :, None] * params["W_in"][None]

    def step_vjp(self, params, prev, below, g, per_sample=False):
        d1 = _act(self.spec.activation, self._pre(params, prev, below))[1]
        gz = g * d1
        grads = {
            "W_rec": _outer_sum(gz, prev, per_sample),
            "W_in": _outer_sum(gz, below, per_sample),
            "b": _vec_sum(gz, per_sample),
        }
        return gz @ params["W_rec"], gz @ params["W_in"], grads

    def jac_bilinear_grad(self, params, prev, below, which, u, v, eps=None):
        _, d1, d2 = _act(self.spec.activation, self._pre(params, prev, below))
        key = "W_rec" if which == "time" else "W_in"
        w = v @ params[key].T
        c = u * d2 * w
        grads = {
            "W_rec": c.T @ prev,
            "W_in": c.T @ below,
            "b": c.sum(axis=0),
        }
        grads[key] = grads[key] + (u * d1).T @ v
        return grads, c @ params["W_rec"], c @ params["W_in"]


# --------------------------------------------------------------------- GRU

class GRUCell(Cell):
    """``h = (1 - z) * h_prev + z * tanh(W_h x + U_h (r * h_prev) + b_h)``."""

    input_side = ("W_z", "W_r", "W_h")
    recurrent_side = ("U_z", "U_r", "U_h")

    def param_shapes(self):
        n, m = self.n, self.m
        out = {}
        for g in "zrh":
            out.update({f"W_{g}": (n, m), f"U_{g}": (n, n), f"b_{g}": (n,)})
        return out

    def init_params(self, rng):
        p = {}
        for g in "zrh":
            p[f"W_{g}"] = init_matrix(InitScheme.glorot_uniform(), self.n, self.m, rng)
            p[f"U_{g}"] = init_matrix(InitScheme.orthogonal(), self.n, self.n, rng)
            p[f"b_{g}"] = np.zeros(self.n)
        return p

    def _gates(self, p, h, x):
        z = expit(x @ p["W_z"].T + h @ p["U_z"].T + p["b_z"])
        r = expit(x @ p["W_r"].T + h @ p["U_r"].T + p["b_r"])
        hh = np.tanh(x @ p["W_h"].T + (r * h) @ p["U_h"].T + p["b_h"])
        return z, r, hh

    def step(self, params, prev, below):
        self._check(prev, below)
        z, r, hh = self._gates(params, prev, below)
        return (1.0 - z) * prev + z * hh

    def _jac(self, p, h, x, wrt):
        z, r, hh = self._gates(p, h, x)
        dz = z * (1 - z)
        dr = r * (1 - r)
        dh = 1 - hh * hh
        a = ((hh - h) * dz)[:, :, None]
        c = (z * dh)[:, :, None]
        if wrt == "time":
            inner = r[:, :, None] * np.eye(self.n) + (h * dr)[:, :, None] * p["U_r"][None]
            j = a * p["U_z"][None] + c * (p["U_h"][None] @ inner)
            j += (1 - z)[:, :, None] * np.eye(self.n)
            return j
        inner = p["W_h"][None] + p["U_h"][None] @ ((h * dr)[:, :, None] * p["W_r"][None])
        return a * p["W_z"][None] + c * inner

    def jac_time(self, params, prev, below):
        return self._jac(params, prev, below, "time")

    def jac_input(self, params, prev, below):
        return self._jac(params, prev, below, "input")

    def step_vjp(self, params, prev, below, g, per_sample=False):
        p, h, x = params, prev, below
        z, r, hh = self._gates(p, h, x)
        g_az = g * (hh - h) * z * (1 - z)
        g_ah = g * z * (1 - hh * hh)
        g_rh = g_ah @ p["U_h"]
        g_ar = g_rh * h * r * (1 - r)
        g_h = g * (1 - z) + g_az @ p["U_z"] + g_ar @ p["U_r"] + g_rh * r
        g_x = g_az @ p["W_z"] + g_ar @ p["W_r"] + g_ah @ p["W_h"]
        grads = {}
        for name, ga, hin in (("z", g_az, h), ("r", g_ar, h), ("h", g_ah, r * h)):
            grads[f"W_{name}"] = _outer_sum(ga, x, per_sample)
            grads[f"U_{name}"] = _outer_sum(ga, hin, per_sample)
            grads[f"b_{name}"] = _vec_sum(ga, per_sample)
        return g_h, g_x, grads


# -------------------------------------------------------------------- LSTM

class LSTMCell(Cell):
    """State ``[h; c]``; sigmoid gates i, f, o and tanh candidate/output."""

    input_side = ("W_i", "W_f", "W_o", "W_c")
    recurrent_side = ("U_i", "U_f", "U_o", "U_c")
    GATES = "ifoc"

    def param_shapes(self):
        n, m = self.n, self.m
        out = {}
        for g in self.GATES:
            out.update({f"W_{g}": (n, m), f"U_{g}": (n, n), f"b_{g}": (n,)})
        return out

    def init_params(self, rng):
        p = {}
        for g in self.GATES:
            p[f"W_{g}"] = init_matrix(InitScheme.glorot_uniform(), self.n, self.m, rng)
            p[f"U_{g}"] = init_matrix(InitScheme.orthogonal(), self.n, self.n, rng)
            p[f"b_{g}"] = np.zeros(self.n)
        return p

    def _fwd(self, p, prev, x):
        n = self.n
        h, c = prev[:, :n], prev[:, n:]
        pre = {g: x @ p[f"W_{g}"].T + h @ p[f"U_{g}"].T + p[f"b_{g}"] for g in self.GATES}
        i, f, o = expit(pre["i"]), expit(pre["f"]), expit(pre["o"])
        cc = np.tanh(pre["c"])
        c_new = f * c + i * cc
        tc = np.tanh(c_new)
        return h, c, i, f, o, cc, c_new, tc

    def step(self, params, prev, below):
        self._check(prev, below)
        _, _, _, _, o, _, c_new, tc = self._fwd(params, prev, below)
        return np.concatenate([o * tc, c_new], axis=1)

    def _gate_jacs(self, p, i, f, o, cc, mats):
        return (
            (i * (1 - i))[:, :, None] * mats["i"][None],
            (f * (1 - f))[:, :, None] * mats["f"][None],
            (o * (1 - o))[:, :, None] * mats["o"][None],
            (1 - cc * cc)[:, :, None] * mats["c"][None],
        )

    def jac_time(self, params, prev, below):
        n = self.n
        h, c, i, f, o, cc, c_new, tc = self._fwd(params, prev, below)
        ji, jf, jo, jc = self._gate_jacs(params, i, f, o, cc, {g: params[f"U_{g}"] for g in self.GATES})
        dc_dh = c[:, :, None] * jf + cc[:, :, None] * ji + i[:, :, None] * jc
        k = (o * (1 - tc * tc))[:, :, None]
        b = prev.shape[0]
        j = np.zeros((b, 2 * n, 2 * n))
        j[:, :n, :n] = tc[:, :, None] * jo + k * dc_dh
        j[:, :n, n:] = k * (f[:, :, None] * np.eye(n))
        j[:, n:, :n] = dc_dh
        j[:, n:, n:] = f[:, :, None] * np.eye(n)
        return j

    def jac_input(self, params, prev, below):
        n = self.n
        h, c, i, f, o, cc, c_new, tc = self._fwd(params, prev, below)
        ji, jf, jo, jc = self._gate_jacs(params, i, f, o, cc, {g: params[f"W_{g}"] for g in self.GATES})
        dc_dx = c[:, :, None] * jf + cc[:, :, None] * ji + i[:, :, None] * jc
        k = (o * (1 - tc * tc))[:, :, None]
        j = np.zeros((prev.shape[0], 2 * n, self.m))
        j[:, :n] = tc[:, :, None] * jo + k * dc_dx
        j[:, n:] = dc_dx
        return j

    def step_vjp(self, params, prev, below, g, per_sample=False):
        n = self.n
        p, x = params, below
        h, c, i, f, o, cc, c_new, tc = self._fwd(p, prev, x)
        g_hn, g_cn = g[:, :n], g[:, n:]
        g_ct = g_cn + g_hn * o * (1 - tc * tc)
        ga = {
            "o": g_hn * tc * o * (1 - o),
            "f": g_ct * c * f * (1 - f),
            "i": g_ct * cc * i * (1 - i),
            "c": g_ct * i * (1 - cc * cc),
        }
        g_h = sum(ga[k] @ p[f"U_{k}"] for k in self.GATES)
        g_x = sum(ga[k] @ p[f"W_{k}"] for k in self.GATES)
        grads = {}
        for k in self.GATES:
            grads[f"W_{k}"] = _outer_sum(ga[k], x, per_sample)
            grads[f"U_{k}"] = _outer_sum(ga[k], h, per_sample)
            grads[f"b_{k}"] = _vec_sum(ga[k], per_sample)
        return np.concatenate([g_h, g_ct * f], axis=1), g_x, grads


# -------------------------------------------------------------------- ALIF

class ALIFCell(Cell):
    """Adaptive LIF neuron with soft reset; state ``[y; theta]``, output spikes.

    Every derivative of the step function uses the surrogate
    ``gamma / (1 + omega |v|)^2``. With ``spec.relaxed`` the forward pass uses
    the smooth step whose derivative is exactly that surrogate.
    """

    input_side = ("W_in", "b_theta", "beta")
    recurrent_side = ("W_rec", "tau_y", "tau_theta")
    frozen = ("b_y",)

    def param_shapes(self):
        n, m = self.n, self.m
        return {"W_rec": (n, n), "W_in": (n, m), "tau_y": (n,), "tau_theta": (n,),
                "b_theta": (n,), "beta": (n,), "b_y": (n,)}

    def init_params(self, rng):
        n, m = self.n, self.m
        p = {
            "W_rec": init_matrix(InitScheme.glorot_uniform(), n, n, rng),
            "W_in": init_matrix(InitScheme.glorot_uniform(), n, m, rng),
        }
        for name in ("tau_y", "tau_theta", "b_theta"):
            p[name] = init_vector(InitScheme.truncated_gaussian(ALIF_MEANS[name]), n, rng)
        if self.spec.variant == "plus":
            p["beta"] = init_vector(InitScheme.truncated_gaussian(ALIF_MEANS["beta"]), n, rng)
        else:
            p["beta"] = init_vector(InitScheme.centered_gaussian(ALIF_MEANS["beta"] / m), n, rng)
        p["b_y"] = np.zeros(n)
        return p

    def clamp(self, params):
        out = dict(params)
        for name in ("tau_y", "tau_theta"):
            out[name] = np.maximum(params[name], self.spec.tau_floor)
        return out

    def spike(self, v):
        if self.spec.relaxed:
            return relaxed_heaviside(v, self.spec.gamma, self.spec.omega)
        return (v >= 0).astype(float)

    def pseudo(self, v):
        return self.spec.gamma / (1.0 + self.spec.omega * np.abs(v)) ** 2

    def initial_state(self, params, batch):
        # start at rest: zero voltage, threshold at its baseline, so no spike at t=0
        s = np.zeros((batch, 2 * self.n))
        s[:, self.n:] = params["b_theta"]
        return s

    def initial_state_vjp(self, params, g0, per_sample=False):
        return {"b_theta": _vec_sum(g0[:, self.n:], per_sample)}

    def output(self, state):
        n = self.n
        return self.spike(state[:, :n] - state[:, n:])

    def output_jac(self, state):
        n = self.n
        s = self.pseudo(state[:, :n] - state[:, n:])
        d = s[:, :, None] * np.eye(n)
        return np.concatenate([d, -d], axis=2)

    def output_vjp(self, state, g_out):
        n = self.n
        gv = g_out * self.pseudo(state[:, :n] - state[:, n:])
        return np.concatenate([gv, -gv], axis=1)

    def _unpack(self, p, prev):
        n = self.n
        y, th = prev[:, :n], prev[:, n:]
        v = y - th
        return y, th, self.spike(v), self.pseudo(v), np.exp(-1.0 / p["tau_y"]), np.exp(-1.0 / p["tau_theta"])

    def step(self, params, prev, below):
        self._check(prev, below)
        p = params
        y, th, x, _, ay, ath = self._unpack(p, prev)
        y_new = ay * y + x @ p["W_rec"].T + below @ p["W_in"].T + p["b_y"] - th * x
        th_new = ath * th + p["b_theta"] + p["beta"] * x
        return np.concatenate([y_new, th_new], axis=1)

    def jac_time(self, params, prev, below):
        n = self.n
        p = params
        y, th, x, s, ay, ath = self._unpack(p, prev)
        eye = np.eye(n)
        # columns scaled by the surrogate: d x_j / d y_j = s_j
        reset = (p["W_rec"][None] - th[:, :, None] * eye) * s[:, None, :]
        b = prev.shape[0]
        j = np.zeros((b, 2 * n, 2 * n))
        j[:, :n, :n] = ay * eye + reset
        j[:, :n, n:] = -reset - x[:, :, None] * eye
        bs = (p["beta"] * s)[:, :, None] * eye
        j[:, n:, :n] = bs
        j[:, n:, n:] = ath * eye - bs
        return j

    def jac_input(self, params, prev, below):
        n = self.n
        j = np.zeros((prev.shape[0], 2 * n, self.m))
        j[:, :n] = params["W_in"]
        return j

    def step_vjp(self, params, prev, below, g, per_sample=False):
        n = self.n
        p = params
        y, th, x, s, ay, ath = self._unpack(p, prev)
        gy_n, gth_n = g[:, :n], g[:, n:]
        g_x = gy_n @ p["W_rec"] - th * gy_n + p["beta"] * gth_n
        gv = g_x * s
        g_y = ay * gy_n + gv
        g_th = ath * gth_n - x * gy_n - gv
        grads = {
            "W_rec": _outer_sum(gy_n, x, per_sample),
            "W_in": _outer_sum(gy_n, below, per_sample),
            "tau_y": _vec_sum(gy_n * y * ay / p["tau_y"] ** 2, per_sample),
            "tau_theta": _vec_sum(gth_n * th * ath / p["tau_theta"] ** 2, per_sample),
            "b_theta": _vec_sum(gth_n, per_sample),
            "beta": _vec_sum(gth_n * x, per_sample),
            "b_y": _vec_sum(gy_n, per_sample),
        }
        return np.concatenate([g_y, g_th], axis=1), gy_n @ p["W_in"], grads


_CLASSES = {"pascal": PascalCell, "rnn": RNNCell, "gru": GRUCell, "lstm": LSTMCell, "alif": ALIFCell}


def make_cell(spec: CellSpec) -> Cell:
    return _CLASSES[spec.kind](spec)


# ------------------------------------------------- single-sample conveniences

def _batch(v, width):
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        a = np.full(width, float(a))
    return a[None, :] if a.ndim == 1 else a


def cell_forward(spec: CellSpec, params, prev, below) -> np.ndarray:
    """One step of a cell. Accepts single vectors or ``(B, n)`` batches."""
    cell = make_cell(spec)
    single = np.ndim(prev) <= 1
    out = cell.step(params, _batch(prev, cell.n_state), _batch(below, cell.m))
    return out[0] if single else out


def jac_time(spec: CellSpec, params, prev, below) -> np.ndarray:
    cell = make_cell(spec)
    single = np.ndim(prev) <= 1
    j = cell.jac_time(params, _batch(prev, cell.n_state), _batch(below, cell.m))
    return j[0] if single else j


def jac_depth(spec: CellSpec, params, prev, below_state, below_spec: CellSpec | None = None) -> np.ndarray:
    """Jacobian w.r.t. the full state of the layer below (or the raw input when
    ``below_spec`` is None). Only the below layer's output enters the cell, so
    the result is ``jac_input @ output_jac(below)``."""
    cell = make_cell(spec)
    single = np.ndim(prev) <= 1
    prev = _batch(prev, cell.n_state)
    if below_spec is None:
        j = cell.jac_input(params, prev, _batch(below_state, cell.m))
    else:
        bc = make_cell(below_spec)
        bs = _batch(below_state, bc.n_state)
        j = cell.jac_input(params, prev, bc.output(bs)) @ bc.output_jac(bs)
    return j[0] if single else j
