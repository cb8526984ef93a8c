'''
Gated recurrent cells: the vanilla LSTM (with peep-holes), its four
single-component ablations (NIG, NOG, NFG, NPH), the GRU and the simplified
forget-gate-only LSTM (S-LSTM).

LSTM family (delta = sigmoid, g = tanh, h' / c' = previous state):
    i = delta(W^i x + R^i h' + p^i * c' + b^i)
    f = delta(W^f x + R^f h' + p^f * c' + b^f)
    c = f * c' + i * g(W^c x + R^c h' + b^c)
    o = delta(W^o x + R^o h' + p^o * c + b^o)
    h = o * g(c)
NPH drops every p; NIG pins i = 1, NFG pins f = 1, NOG pins o = 1.

GRU:
    r = delta(W^r x + R^r h' + b^r)
    z = delta(W^z x + R^z h' + b^z)
    h~ = g(W^h x + r * (R^h h') + b^h)
    h = z * h' + (1 - z) * h~

S-LSTM:
    f = delta(W^f x + R^f h' + b^f)
    c = f * c' + (1 - f) * g(W^c x + R^c h' + b^c)
    h = g(c)
'''
import enum
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import expit

from utils.utils import check_finite

FORMAT_VERSION = 1


class CellKind(enum.Enum):
    # Declaration order is the row order of the objective-results table.
    LSTM = "LSTM"
    NIG = "NIG"
    NOG = "NOG"
    NFG = "NFG"
    NPH = "NPH"
    GRU = "GRU"
    SLSTM = "S-LSTM"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "-")
        if key not in _ALIASES:
            raise ValueError("unknown cell kind {!r}; expected one of {}".format(
                name, ", ".join(k.value for k in cls)))
        return _ALIASES[key]

    @property
    def gates(self):
        return _GATES[self]

    @property
    def peepholes(self):
        return _PEEPHOLES.get(self, ())

    @property
    def has_cell(self):
        return self is not CellKind.GRU


_ALIASES = {
    "lstm": CellKind.LSTM,
    "vanilla": CellKind.LSTM,
    "vanillalstm": CellKind.LSTM,
    "vanilla-lstm": CellKind.LSTM,
    "nig": CellKind.NIG,
    "nog": CellKind.NOG,
    "nfg": CellKind.NFG,
    "nph": CellKind.NPH,
    "gru": CellKind.GRU,
    "s-lstm": CellKind.SLSTM,
    "slstm": CellKind.SLSTM,
}

# 'c' is the LSTM cell candidate, 'h' the GRU candidate activation.
_GATES = {
    CellKind.LSTM: ("i", "f", "c", "o"),
    CellKind.NIG: ("f", "c", "o"),
    CellKind.NOG: ("i", "f", "c"),
    CellKind.NFG: ("i", "c", "o"),
    CellKind.NPH: ("i", "f", "c", "o"),
    CellKind.GRU: ("r", "z", "h"),
    CellKind.SLSTM: ("f", "c"),
}

_PEEPHOLES = {
    CellKind.LSTM: ("i", "f", "o"),
    CellKind.NIG: ("f", "o"),
    CellKind.NOG: ("i", "f"),
    CellKind.NFG: ("i", "o"),
}


@dataclass(frozen=True)
class CellSpec:
    kind: CellKind
    input_dim: int
    hidden_dim: int

    def __post_init__(self):
        object.__setattr__(self, "kind", CellKind.parse(self.kind))
        if int(self.input_dim) < 1 or int(self.hidden_dim) < 1:
            raise ValueError("input_dim and hidden_dim must be >= 1, got {} and {}".format(
                self.input_dim, self.hidden_dim))
        object.__setattr__(self, "input_dim", int(self.input_dim))
        object.__setattr__(self, "hidden_dim", int(self.hidden_dim))


@dataclass(frozen=True, eq=False)
class GateParams:
    W: np.ndarray
    R: np.ndarray
    p: Optional[np.ndarray]
    b: np.ndarray


@dataclass(frozen=True, eq=False)
class CellParams:
    spec: CellSpec
    gates: Dict[str, GateParams]

    def __post_init__(self):
        nI, nH = self.spec.input_dim, self.spec.hidden_dim
        kind = self.spec.kind
        if tuple(self.gates) != kind.gates:
            raise ValueError("{} expects gates {}, got {}".format(
                kind.value, kind.gates, tuple(self.gates)))
        for name, gp in self.gates.items():
            if gp.W.shape != (nH, nI) or gp.R.shape != (nH, nH) or gp.b.shape != (nH,):
                raise ValueError("gate {!r} has shapes W{} R{} b{}; expected W{} R{} b{}".format(
                    name, gp.W.shape, gp.R.shape, gp.b.shape, (nH, nI), (nH, nH), (nH,)))
            if (gp.p is not None) != (name in kind.peepholes):
                raise ValueError("gate {!r} of {} {} a peep-hole".format(
                    name, kind.value, "needs" if name in kind.peepholes else "must not have"))
            if gp.p is not None and gp.p.shape != (nH,):
                raise ValueError("peep-hole {!r} has shape {}".format(name, gp.p.shape))

    def arrays(self):
        '''Named view of every parameter array: W_<gate>, R_<gate>, p_<gate>, b_<gate>.'''
        out = {}
        for name, gp in self.gates.items():
            out["W_" + name] = gp.W
            out["R_" + name] = gp.R
            if gp.p is not None:
                out["p_" + name] = gp.p
            out["b_" + name] = gp.b
        return out

    @classmethod
    def from_arrays(cls, spec, arrays):
        gates = {}
        for name in spec.kind.gates:
            try:
                gates[name] = GateParams(
                    W=np.asarray(arrays["W_" + name], dtype=np.float64),
                    R=np.asarray(arrays["R_" + name], dtype=np.float64),
                    p=(np.asarray(arrays["p_" + name], dtype=np.float64)
                       if name in spec.kind.peepholes else None),
                    b=np.asarray(arrays["b_" + name], dtype=np.float64))
            except KeyError as err:
                raise ValueError("missing parameter array {} for {}".format(err, spec.kind.value))
        return cls(spec=spec, gates=gates)

    @property
    def size(self):
        return int(sum(a.size for a in self.arrays().values()))


@dataclass(frozen=True, eq=False)
class CellState:
    h: np.ndarray
    c: Optional[np.ndarray] = None

    @classmethod
    def zeros(cls, spec):
        nH = spec.hidden_dim
        return cls(h=np.zeros(nH), c=np.zeros(nH) if spec.kind.has_cell else None)


@dataclass(frozen=True, eq=False)
class GateTrace:
    # sigmoid gate activations that exist for the kind: i/f/o or r/z
    gates: Dict[str, np.ndarray]
    # g(W^c x + ...) for the LSTM family, h~ for the GRU
    candidate: np.ndarray
    c: Optional[np.ndarray]
    h: np.ndarray
    h_prev: np.ndarray
    c_prev: Optional[np.ndarray] = field(default=None)


def param_count(spec):
    '''Closed-form number of scalar parameters of the recurrent layer.'''
    nI, nH = spec.input_dim, spec.hidden_dim
    unit = nI * nH + nH * nH + nH
    return len(spec.kind.gates) * unit + len(spec.kind.peepholes) * nH


def init_params(spec, seed, scale=0.1):
    '''
    W and R uniform in [-scale, scale]; biases zero except the forget gate
    (+1); peep-holes zero.
    '''
    if not scale > 0:
        raise ValueError("init scale must be positive, got {}".format(scale))
    rng = np.random.default_rng(seed)
    nI, nH = spec.input_dim, spec.hidden_dim
    gates = {}
    for name in spec.kind.gates:
        W = rng.uniform(-scale, scale, size=(nH, nI))
        R = rng.uniform(-scale, scale, size=(nH, nH))
        p = np.zeros(nH) if name in spec.kind.peepholes else None
        b = np.ones(nH) if name == "f" else np.zeros(nH)
        gates[name] = GateParams(W=W, R=R, p=p, b=b)
    return CellParams(spec=spec, gates=gates)


def _check_state(spec, state, what):
    nH = spec.hidden_dim
    h = check_finite(what + ".h", state.h)
    if h.shape != (nH,):
        raise ValueError("{}.h has shape {}, expected ({},)".format(what, h.shape, nH))
    if spec.kind.has_cell:
        if state.c is None:
            raise ValueError("{} needs a memory cell state for {}".format(what, spec.kind.value))
        c = check_finite(what + ".c", state.c)
        if c.shape != (nH,):
            raise ValueError("{}.c has shape {}, expected ({},)".format(what, c.shape, nH))
    else:
        if state.c is not None:
            raise ValueError("{} has no memory cell but {}.c was given".format(spec.kind.value, what))
        c = None
    return h, c


def _advance(kind, params, proj, h_prev, c_prev):
    '''One recurrence given the input projections proj[gate] = W x + b.'''
    G = params.gates

    def pre(name):
        return proj[name] + G[name].R @ h_prev

    if kind is CellKind.GRU:
        r = expit(pre("r"))
        z = expit(pre("z"))
        cand = np.tanh(proj["h"] + r * (G["h"].R @ h_prev))
        h = z * h_prev + (1.0 - z) * cand
        trace = GateTrace(gates={"r": r, "z": z}, candidate=cand, c=None, h=h, h_prev=h_prev)
        return CellState(h=h), trace

    acts = {}
    for name in ("i", "f"):
        if name in G:
            a = pre(name)
            if G[name].p is not None:
                a = a + G[name].p * c_prev
            acts[name] = expit(a)
    cand = np.tanh(pre("c"))

    if kind is CellKind.SLSTM:
        f = acts["f"]
        c = f * c_prev + (1.0 - f) * cand
    else:
        kept = acts["f"] * c_prev if "f" in acts else c_prev
        written = acts["i"] * cand if "i" in acts else cand
        c = kept + written

    tanh_c = np.tanh(c)
    if "o" in G:
        a = pre("o")
        if G["o"].p is not None:
            a = a + G["o"].p * c
        acts["o"] = expit(a)
        h = acts["o"] * tanh_c
    else:
        h = tanh_c

    trace = GateTrace(gates=acts, candidate=cand, c=c, h=h, h_prev=h_prev, c_prev=c_prev)
    return CellState(h=h, c=c), trace


def step(spec, params, x_t, prev):
    '''Single time step. Returns (new CellState, GateTrace).'''
    x_t = check_finite("x_t", x_t)
    if x_t.shape != (spec.input_dim,):
        raise ValueError("x_t has shape {}, expected ({},)".format(x_t.shape, spec.input_dim))
    h_prev, c_prev = _check_state(spec, prev, "prev")
    proj = {name: gp.W @ x_t + gp.b for name, gp in params.gates.items()}
    return _advance(spec.kind, params, proj, h_prev, c_prev)


def run_sequence(spec, params, xs, init=None):
    '''
    Run the cell over T frames (xs: T x nI). Returns the T states and the
    T gate traces; frame t starts from state t-1 (init for t = 0, zeros by default).
    '''
    xs = check_finite("xs", xs)
    if xs.ndim != 2 or len(xs) == 0:
        raise ValueError("run_sequence needs a non-empty T x {} input, got shape {}".format(
            spec.input_dim, xs.shape))
    if xs.shape[1] != spec.input_dim:
        raise ValueError("input frames have {} dims, expected {}".format(xs.shape[1], spec.input_dim))
    if init is None:
        init = CellState.zeros(spec)
    h, c = _check_state(spec, init, "init")

    states, traces = [], []
    for x_t in xs:
        proj = {name: gp.W @ x_t + gp.b for name, gp in params.gates.items()}
        state, trace = _advance(spec.kind, params, proj, h, c)
        states.append(state)
        traces.append(trace)
        h, c = state.h, state.c
    return states, traces


def params_state_dict(params):
    '''Checkpoint container for one recurrent layer (header + float64 tensors).'''
    import torch

    return {
        "format_version": FORMAT_VERSION,
        "kind": params.spec.kind.value,
        "input_dim": params.spec.input_dim,
        "hidden_dim": params.spec.hidden_dim,
        "arrays": {name: torch.from_numpy(np.array(arr, dtype=np.float64))
                   for name, arr in params.arrays().items()},
    }


def params_from_state_dict(state):
    version = state.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError("unsupported cell container version {!r} (expected {})".format(
            version, FORMAT_VERSION))
    spec = CellSpec(kind=CellKind.parse(state["kind"]),
                    input_dim=state["input_dim"], hidden_dim=state["hidden_dim"])
    arrays = {name: t.detach().cpu().numpy().copy() for name, t in state["arrays"].items()}
    return CellParams.from_arrays(spec, arrays)


def save_params(params, path):
    import torch

    torch.save(params_state_dict(params), path)
    logging.info("Saved {} cell parameters ({} scalars) to {}".format(
        params.spec.kind.value, params.size, path))


def load_params(path):
    import torch

    return params_from_state_dict(torch.load(path, weights_only=True))
