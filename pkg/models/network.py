'''
Acoustic model: a stack of tanh feed-forward feature layers, one gated
recurrent layer (any models.cells kind) and an affine output layer.
Forward and backward passes are plain numpy; checkpoints are torch containers.
'''
import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import torch

from dataset.features import NormStats, StreamLayout
from losses.loss import sequence_mse
from models.backprop import central_difference, compare_gradients, sequence_backward
from models.cells import (CellKind, CellParams, CellSpec, init_params, param_count,
                          params_from_state_dict, params_state_dict, run_sequence)
from utils.utils import check_finite

FORMAT_VERSION = 1

CELL_PREFIX = "cell."


@dataclass(frozen=True)
class NetworkConfig:
    linguistic_dim: int
    output_dim: int
    kind: CellKind = CellKind.LSTM
    ff_layer_sizes: Tuple[int, ...] = (512, 512, 512)
    hidden_dim: int = 256
    ff_activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "kind", CellKind.parse(self.kind))
        object.__setattr__(self, "ff_layer_sizes", tuple(int(n) for n in self.ff_layer_sizes))
        if self.linguistic_dim < 1 or self.output_dim < 1 or self.hidden_dim < 1:
            raise ValueError("linguistic_dim, output_dim and hidden_dim must be >= 1")
        if any(n < 1 for n in self.ff_layer_sizes):
            raise ValueError("ff layer sizes must be positive, got {}".format(self.ff_layer_sizes))
        if self.ff_activation != "tanh":
            raise ValueError("only tanh feature layers are supported, got {!r}".format(self.ff_activation))

    @property
    def recurrent_spec(self):
        n_in = self.ff_layer_sizes[-1] if self.ff_layer_sizes else self.linguistic_dim
        return CellSpec(kind=self.kind, input_dim=n_in, hidden_dim=self.hidden_dim)

    def with_kind(self, kind):
        return dataclasses.replace(self, kind=CellKind.parse(kind))

    @classmethod
    def desk(cls, linguistic_dim, output_dim, kind=CellKind.LSTM):
        return cls(linguistic_dim=linguistic_dim, output_dim=output_dim, kind=kind,
                   ff_layer_sizes=(64, 64, 64), hidden_dim=32)

    @classmethod
    def paper(cls, linguistic_dim, output_dim, kind=CellKind.LSTM):
        return cls(linguistic_dim=linguistic_dim, output_dim=output_dim, kind=kind,
                   ff_layer_sizes=(512, 512, 512), hidden_dim=256)


@dataclass(frozen=True, eq=False)
class ForwardCache:
    activations: list
    states: list
    traces: list
    hidden: np.ndarray


@dataclass(frozen=True, eq=False)
class Model:
    config: NetworkConfig
    ff: Tuple[Tuple[np.ndarray, np.ndarray], ...]
    cell: CellParams
    out_W: np.ndarray
    out_b: np.ndarray
    input_stats: Optional[NormStats] = None
    output_stats: Optional[NormStats] = None
    layout: Optional[StreamLayout] = None

    def arrays(self):
        '''Flat named view of every trainable array (ff<k>.W, cell.W_i, out.W, ...).'''
        out = {}
        for k, (W, b) in enumerate(self.ff):
            out["ff{}.W".format(k)] = W
            out["ff{}.b".format(k)] = b
        for name, arr in self.cell.arrays().items():
            out[CELL_PREFIX + name] = arr
        out["out.W"] = self.out_W
        out["out.b"] = self.out_b
        return out

    def with_arrays(self, arrays):
        ff = tuple((np.asarray(arrays["ff{}.W".format(k)], dtype=np.float64),
                    np.asarray(arrays["ff{}.b".format(k)], dtype=np.float64))
                   for k in range(len(self.ff)))
        cell = CellParams.from_arrays(self.config.recurrent_spec,
                                      {k[len(CELL_PREFIX):]: v for k, v in arrays.items()
                                       if k.startswith(CELL_PREFIX)})
        return dataclasses.replace(self, ff=ff, cell=cell,
                                   out_W=np.asarray(arrays["out.W"], dtype=np.float64),
                                   out_b=np.asarray(arrays["out.b"], dtype=np.float64))

    @property
    def recurrent_param_count(self):
        return param_count(self.config.recurrent_spec)

    @property
    def param_count(self):
        return int(sum(a.size for a in self.arrays().values()))

    def forward_with_cache(self, inputs):
        inputs = check_finite("inputs", inputs)
        if inputs.ndim != 2 or len(inputs) == 0 or inputs.shape[1] != self.config.linguistic_dim:
            raise ValueError("inputs have shape {}, expected T x {} with T >= 1".format(
                inputs.shape, self.config.linguistic_dim))
        acts = [inputs]
        for W, b in self.ff:
            acts.append(np.tanh(acts[-1] @ W.T + b))
        states, traces = run_sequence(self.config.recurrent_spec, self.cell, acts[-1])
        hidden = np.stack([s.h for s in states])
        predictions = hidden @ self.out_W.T + self.out_b
        return predictions, ForwardCache(activations=acts, states=states, traces=traces, hidden=hidden)

    def forward(self, inputs):
        '''T x linguistic_dim (normalised) -> T x output_dim; recurrent state starts at zero.'''
        return self.forward_with_cache(inputs)[0]

    def backward(self, cache, d_predictions):
        '''Gradients of every array in arrays() given d loss / d predictions.'''
        d_predictions = check_finite("d_predictions", d_predictions)
        grads = {"out.W": d_predictions.T @ cache.hidden,
                 "out.b": d_predictions.sum(axis=0)}
        d_hidden = d_predictions @ self.out_W
        cell_grads = sequence_backward(self.config.recurrent_spec, self.cell,
                                       cache.activations[-1], cache.traces, d_hidden)
        for name, arr in cell_grads.arrays().items():
            grads[CELL_PREFIX + name] = arr
        d = cell_grads.dxs
        for k in reversed(range(len(self.ff))):
            W, _ = self.ff[k]
            dz = d * (1.0 - cache.activations[k + 1] ** 2)
            grads["ff{}.W".format(k)] = dz.T @ cache.activations[k]
            grads["ff{}.b".format(k)] = dz.sum(axis=0)
            d = dz @ W
        return {name: grads[name] for name in self.arrays()}

    def recurrent_trace(self, inputs):
        '''Recurrent-layer (states, traces) for analysis.'''
        _, cache = self.forward_with_cache(inputs)
        return cache.states, cache.traces


def init_model(config, seed, cell_scale=0.1, input_stats=None, output_stats=None, layout=None):
    '''
    Feature and output layers uniform in +-1/sqrt(fan_in), biases zero;
    recurrent layer from models.cells.init_params. The feed-forward draws do
    not depend on the cell kind, so equal seeds give equal ff layers.
    '''
    rng = np.random.default_rng(seed)
    ff = []
    fan_in = config.linguistic_dim
    for size in config.ff_layer_sizes:
        bound = 1.0 / np.sqrt(fan_in)
        ff.append((rng.uniform(-bound, bound, size=(size, fan_in)), np.zeros(size)))
        fan_in = size
    cell_seed = int(rng.integers(2 ** 31 - 1))
    bound = 1.0 / np.sqrt(config.hidden_dim)
    out_W = rng.uniform(-bound, bound, size=(config.output_dim, config.hidden_dim))
    cell = init_params(config.recurrent_spec, cell_seed, cell_scale)
    return Model(config=config, ff=tuple(ff), cell=cell, out_W=out_W,
                 out_b=np.zeros(config.output_dim), input_stats=input_stats,
                 output_stats=output_stats, layout=layout)


def network_grad_check(config, seed, eps=1e-3, length=5, cell_scale=0.5, order=4):
    '''GradCheckResult of Model.backward against central differences of sequence_mse.'''
    rng = np.random.default_rng(seed)
    model = init_model(config, seed, cell_scale)
    arrays = {name: (rng.uniform(-cell_scale, cell_scale, arr.shape)
                     if name.split(".")[-1][0] in "pb" else arr)
              for name, arr in model.arrays().items()}
    model = model.with_arrays(arrays)
    inputs = rng.uniform(0.01, 0.99, size=(length, config.linguistic_dim))
    targets = rng.normal(size=(length, config.output_dim))

    def loss(a):
        # per-element terms of sequence_mse
        return (model.with_arrays(a).forward(inputs) - targets) ** 2 / length

    predictions, cache = model.forward_with_cache(inputs)
    grads = model.backward(cache, sequence_mse(predictions, targets)[1])
    numeric = {name: central_difference(loss, arrays, name, eps, order) for name in grads}
    return compare_gradients(grads, numeric)


def _tensor(arr):
    return torch.from_numpy(np.array(arr, dtype=np.float64))


def stats_state_dict(stats):
    return {"kind": stats.kind,
            "offset": _tensor(stats.offset),
            "scale": _tensor(stats.scale),
            "flagged": torch.from_numpy(np.array(stats.flagged, dtype=bool)),
            "feature_range": [float(v) for v in stats.feature_range]}


def stats_from_state_dict(state):
    return NormStats(kind=state["kind"],
                     offset=state["offset"].numpy().copy(),
                     scale=state["scale"].numpy().copy(),
                     flagged=state["flagged"].numpy().copy(),
                     feature_range=tuple(state["feature_range"]))


def save_model(model, path):
    cfg = model.config
    state = {
        "format_version": FORMAT_VERSION,
        "config": {"linguistic_dim": cfg.linguistic_dim, "output_dim": cfg.output_dim,
                   "kind": cfg.kind.value, "ff_layer_sizes": list(cfg.ff_layer_sizes),
                   "hidden_dim": cfg.hidden_dim, "ff_activation": cfg.ff_activation},
        "ff": [{"W": _tensor(W), "b": _tensor(b)} for W, b in model.ff],
        "cell": params_state_dict(model.cell),
        "out": {"W": _tensor(model.out_W), "b": _tensor(model.out_b)},
    }
    if model.input_stats is not None:
        state["input_stats"] = stats_state_dict(model.input_stats)
    if model.output_stats is not None:
        state["output_stats"] = stats_state_dict(model.output_stats)
    if model.layout is not None:
        state["layout"] = {"mcc_dim": model.layout.mcc_dim, "bap_dim": model.layout.bap_dim}
    torch.save(state, path)
    logging.info("Saved {} model ({} parameters) to {}".format(cfg.kind.value, model.param_count, path))


def load_model(path):
    state = torch.load(path, weights_only=True)
    version = state.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError("{}: unsupported checkpoint version {!r}".format(path, version))
    config = NetworkConfig(**state["config"])
    cell = params_from_state_dict(state["cell"])
    if cell.spec != config.recurrent_spec:
        raise ValueError("{}: recurrent layer {} disagrees with config {}".format(
            path, cell.spec, config.recurrent_spec))
    layout = StreamLayout(**state["layout"]) if "layout" in state else None
    return Model(config=config,
                 ff=tuple((layer["W"].numpy().copy(), layer["b"].numpy().copy()) for layer in state["ff"]),
                 cell=cell,
                 out_W=state["out"]["W"].numpy().copy(),
                 out_b=state["out"]["b"].numpy().copy(),
                 input_stats=stats_from_state_dict(state["input_stats"]) if "input_stats" in state else None,
                 output_stats=stats_from_state_dict(state["output_stats"]) if "output_stats" in state else None,
                 layout=layout)
