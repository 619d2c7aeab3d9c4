"""Two-layer LSTM with affine output heads, built on the scalar tape."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad

LAYERS = 2
# head name -> output width
HEAD_SIZES = {"update": 2, "theta": 1, "lr": 1, "beta": 1}


def softplus_inverse(y: float) -> float:
    if y <= 0:
        raise ValueError("softplus output must be positive")
    return y + math.log(-math.expm1(-y))


def _layout(input_dim: int, hidden_dim: int, heads: tuple) -> dict:
    H = hidden_dim
    shapes = {}
    d = input_dim
    for layer in range(LAYERS):
        shapes[f"W{layer}"] = (4 * H, d + H)
        shapes[f"b{layer}"] = (4 * H,)
        d = H
    for name in heads:
        k = HEAD_SIZES[name]
        shapes[f"head_{name}_W"] = (k, H)
        shapes[f"head_{name}_b"] = (k,)
    out, off = {}, 0
    for name, shape in shapes.items():
        n = int(np.prod(shape))
        out[name] = (off, shape)
        off += n
    return out


@dataclass
class LstmParams:
    """Flat parameter vector plus the layout that slices it."""

    input_dim: int
    hidden_dim: int
    heads: tuple
    flat: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.heads = tuple(self.heads)
        unknown = set(self.heads) - set(HEAD_SIZES)
        if unknown:
            raise ValueError(f"unknown heads {sorted(unknown)}")
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.size,):
            raise ValueError(f"expected {self.size} parameters, got {self.flat.shape}")
        if not np.all(np.isfinite(self.flat)):
            raise ValueError("parameters must be finite")

    @property
    def layout(self) -> dict:
        return _layout(self.input_dim, self.hidden_dim, self.heads)

    @property
    def size(self) -> int:
        off, shape = list(_layout(self.input_dim, self.hidden_dim, self.heads).values())[-1]
        return off + int(np.prod(shape))

    def view(self, name: str, arr=None) -> np.ndarray:
        off, shape = self.layout[name]
        src = self.flat if arr is None else arr
        return src[off : off + int(np.prod(shape))].reshape(shape)

    def copy(self) -> "LstmParams":
        return LstmParams(self.input_dim, self.hidden_dim, self.heads, self.flat.copy())

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, heads, rng: np.random.Generator, head_bias: dict | None = None) -> "LstmParams":
        """Uniform(+-1/sqrt(H)) gate weights; output heads start at zero.

        ``head_bias`` optionally sets a constant bias per head (used to
        calibrate the initial learning rate of an ``lr`` head).
        """
        heads = tuple(heads)
        unknown = set(heads) - set(HEAD_SIZES)
        if unknown:
            raise ValueError(f"unknown heads {sorted(unknown)}")
        p = cls(input_dim, hidden_dim, heads, np.zeros(_size(input_dim, hidden_dim, heads)))
        bound = 1.0 / math.sqrt(hidden_dim)
        for layer in range(LAYERS):
            for name in (f"W{layer}", f"b{layer}"):
                v = p.view(name)
                v[...] = rng.uniform(-bound, bound, size=v.shape)
        for name, value in (head_bias or {}).items():
            p.view(f"head_{name}_b")[...] = value
        return p


def _size(input_dim, hidden_dim, heads) -> int:
    off, shape = list(_layout(input_dim, hidden_dim, heads).values())[-1]
    return off + int(np.prod(shape))


@dataclass
class MetaState:
    """Per-layer hidden and cell vectors (numeric values)."""

    h: list
    c: list
    step: int = 0

    @classmethod
    def zeros(cls, hidden_dim: int) -> "MetaState":
        return cls([np.zeros(hidden_dim) for _ in range(LAYERS)], [np.zeros(hidden_dim) for _ in range(LAYERS)])


class TapedLstm:
    """An :class:`LstmParams` whose weights are leaves on a tape."""

    def __init__(self, params: LstmParams, tape: ad.Tape, leaf_ids: np.ndarray | None = None):
        self.params = params
        self.tape = tape
        self.ids = tape.vars(params.flat) if leaf_ids is None else leaf_ids
        self._w = {name: params.view(name, self.ids) for name in params.layout}

    def state_leaves(self, state: MetaState) -> tuple[list, list]:
        return [self.tape.vars(v) for v in state.h], [self.tape.vars(v) for v in state.c]

    def step(self, x_ids: np.ndarray, h: list, c: list) -> tuple[dict, list, list]:
        """One LSTM step. Returns raw head pre-activations and new (h, c) ids."""
        tape = self.tape
        H = self.params.hidden_dim
        inp = np.asarray(x_ids, dtype=np.int64)
        new_h, new_c = [], []
        for layer in range(LAYERS):
            z = np.concatenate([inp, h[layer]])
            pre = tape.matvec(self._w[f"W{layer}"], z, self._w[f"b{layer}"])
            i = tape.apply_array("sigmoid", pre[:H])
            f = tape.apply_array("sigmoid", pre[H : 2 * H])
            g = tape.apply_array("tanh", pre[2 * H : 3 * H])
            o = tape.apply_array("sigmoid", pre[3 * H :])
            cc = tape.apply_array("add", tape.apply_array("mul", f, c[layer]), tape.apply_array("mul", i, g))
            hh = tape.apply_array("mul", o, tape.apply_array("tanh", cc))
            new_h.append(hh)
            new_c.append(cc)
            inp = hh
        top = new_h[-1]
        heads = {name: tape.matvec(self._w[f"head_{name}_W"], top, self._w[f"head_{name}_b"]) for name in self.params.heads}
        return heads, new_h, new_c


def transform_heads(tape: ad.Tape, raw: dict, update_scale: float = 0.1) -> dict:
    """Squash raw head outputs into their ranges.

    update: ``update_scale * tanh``; theta: ``pi * tanh``; lr: softplus;
    beta: sigmoid.
    """
    out = {}
    for name, ids in raw.items():
        if name == "update":
            k = tape.vars(np.full(ids.shape, update_scale))
            out[name] = tape.apply_array("mul", k, tape.apply_array("tanh", ids))
        elif name == "theta":
            k = tape.vars(np.full(ids.shape, math.pi))
            out[name] = tape.apply_array("mul", k, tape.apply_array("tanh", ids))
        elif name == "lr":
            one = tape.vars(np.ones(ids.shape))
            out[name] = tape.apply_array("ln", tape.apply_array("add", one, tape.apply_array("exp", ids)))
        elif name == "beta":
            out[name] = tape.apply_array("sigmoid", ids)
    return out


def lstm_step(params: LstmParams, inputs, state: MetaState, update_scale: float = 0.1) -> tuple[dict, MetaState]:
    """Numeric single step: squashed head outputs and the next state."""
    tape = ad.Tape(4096)
    net = TapedLstm(params, tape)
    h, c = net.state_leaves(state)
    x = tape.vars(np.asarray(inputs, dtype=np.float64))
    if x.shape != (params.input_dim,):
        raise ValueError("input dimension mismatch")
    heads, nh, nc = net.step(x, h, c)
    heads = transform_heads(tape, heads, update_scale)
    out = {k: tape.values(v).copy() for k, v in heads.items()}
    return out, MetaState([tape.values(v).copy() for v in nh], [tape.values(v).copy() for v in nc], state.step + 1)
