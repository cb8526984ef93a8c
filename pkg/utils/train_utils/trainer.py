import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
import torch
from sklearn.metrics import mean_squared_error
from torch import optim
from tqdm import tqdm

from losses.loss import element_mse, loss_function_dict
from models.network import init_model
from utils.utils import AverageMeter, NumericalError

LR_GRID = (1e-2, 3e-3, 1e-3, 3e-4)

HISTORY_COLUMNS = ["epoch", "train_mse", "dev_mse", "lr"]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-3
    momentum: float = 0.9
    max_epochs: int = 30
    patience: int = 5
    grad_clip_norm: Optional[float] = 5.0
    seed: int = 0
    init_scale: float = 0.1
    loss: str = "sequence_mse"

    def __post_init__(self):
        # a zero learning rate is accepted and leaves the weights unchanged
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0, got {}".format(self.learning_rate))
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1), got {}".format(self.momentum))
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")
        if self.grad_clip_norm is not None and not self.grad_clip_norm > 0:
            raise ValueError("grad_clip_norm must be positive or None, got {}".format(self.grad_clip_norm))
        if self.loss not in loss_function_dict:
            raise ValueError("unknown loss {}, expected one of {}".format(self.loss, sorted(loss_function_dict)))

    def with_learning_rate(self, lr):
        return dataclasses.replace(self, learning_rate=lr)


class MomentumSGD:
    '''
    torch SGD with momentum and global-norm clipping over a model's named
    float64 arrays. Gradients come from Model.backward; torch only applies them.
    '''

    def __init__(self, arrays, lr, momentum, max_norm=None):
        self.params = {name: torch.tensor(arr, dtype=torch.float64, requires_grad=True)
                       for name, arr in arrays.items()}
        self.optimizer = optim.SGD(list(self.params.values()), lr=lr, momentum=momentum)
        self.max_norm = max_norm

    def step(self, grads):
        '''Apply one update; returns the global gradient norm before clipping.'''
        for name, p in self.params.items():
            p.grad = torch.tensor(grads[name], dtype=torch.float64)
        params = list(self.params.values())
        if self.max_norm is None:
            norm = torch.linalg.vector_norm(torch.stack([torch.linalg.vector_norm(p.grad) for p in params]))
        else:
            norm = torch.nn.utils.clip_grad_norm_(params, self.max_norm)
        self.optimizer.step()
        return float(norm)

    def arrays(self):
        return {name: p.detach().numpy().copy() for name, p in self.params.items()}


def evaluate(model, sequences, layout=None):
    '''
    Frame-weighted MSE in normalised space: one value per acoustic stream
    (when a layout is given) and the total over all dims.
    '''
    if not sequences:
        raise ValueError("evaluate needs a non-empty set")
    targets = np.vstack([s.targets for s in sequences])
    predictions = np.vstack([model.forward(s.inputs) for s in sequences])
    if not np.all(np.isfinite(predictions)):
        raise NumericalError("model produced non-finite predictions")
    per_dim = mean_squared_error(targets, predictions, multioutput="raw_values")
    result = {}
    if layout is not None:
        for stream, sl in layout.slices.items():
            result[stream] = float(np.mean(per_dim[sl]))
    result["total"] = float(np.mean(per_dim))
    return result


def train(net_cfg, train_cfg, train_set, dev_set, input_stats=None, output_stats=None, layout=None):
    '''
    Per-utterance SGD with momentum on the configured loss, shuffled every epoch from
    the training seed. Returns the model with the best dev MSE and the
    per-epoch history (epoch, train_mse, dev_mse, lr).
    '''
    if not train_set or not dev_set:
        raise ValueError("train and dev sets must be non-empty")
    lr, mu = train_cfg.learning_rate, train_cfg.momentum
    loss_fn = loss_function_dict[train_cfg.loss]
    model = init_model(net_cfg, train_cfg.seed, train_cfg.init_scale,
                       input_stats=input_stats, output_stats=output_stats, layout=layout)
    optimizer = MomentumSGD(model.arrays(), lr, mu, train_cfg.grad_clip_norm)
    rng = np.random.default_rng(train_cfg.seed)

    best_model, best_dev, stale = model, np.inf, 0
    history = []
    for epoch in range(1, train_cfg.max_epochs + 1):
        train_meter = AverageMeter()
        for idx in rng.permutation(len(train_set)):
            seq = train_set[idx]
            predictions, cache = model.forward_with_cache(seq.inputs)
            loss, d_predictions = loss_fn(predictions, seq.targets)
            if not np.isfinite(loss):
                raise NumericalError("training diverged at epoch {} (learning rate {}): loss {}".format(
                    epoch, lr, loss))
            train_meter.update(element_mse(predictions, seq.targets)[0], n=len(predictions))
            optimizer.step(model.backward(cache, d_predictions))
            arrays = optimizer.arrays()
            bad = [name for name, arr in arrays.items() if not np.all(np.isfinite(arr))]
            if bad:
                raise NumericalError("training diverged at epoch {} (learning rate {}): non-finite {}".format(
                    epoch, lr, ", ".join(bad)))
            model = model.with_arrays(arrays)

        try:
            dev_mse = evaluate(model, dev_set)["total"]
        except NumericalError:
            dev_mse = np.nan
        if not np.isfinite(dev_mse):
            raise NumericalError("training diverged at epoch {} (learning rate {}): dev MSE {}".format(
                epoch, lr, dev_mse))
        history.append({"epoch": epoch, "train_mse": float(train_meter.avg),
                        "dev_mse": dev_mse, "lr": lr})
        logging.info("{} epoch {}: train MSE {:.5f}, dev MSE {:.5f}".format(
            net_cfg.kind.value, epoch, train_meter.avg, dev_mse))

        if dev_mse < best_dev:
            best_model, best_dev, stale = model, dev_mse, 0
        else:
            stale += 1
            if stale >= train_cfg.patience:
                logging.info("Early stopping after {} epochs without improvement".format(stale))
                break

    return best_model, pd.DataFrame(history, columns=HISTORY_COLUMNS)


def select_learning_rate(net_cfg, train_cfg, train_set, dev_set, grid=LR_GRID, **kwargs):
    '''
    Train once per learning rate in the grid and keep the run with the best
    dev MSE. Diverging rates are skipped. Returns (model, history, lr, summary).
    '''
    best = None
    summary = []
    for lr in tqdm(grid, desc="{} lr grid".format(net_cfg.kind.value), leave=False):
        try:
            model, history = train(net_cfg, train_cfg.with_learning_rate(lr), train_set, dev_set, **kwargs)
        except NumericalError as err:
            logging.info("Learning rate {} diverged: {}".format(lr, err))
            summary.append({"lr": lr, "best_dev_mse": np.nan, "epochs": 0})
            continue
        dev = float(history["dev_mse"].min())
        summary.append({"lr": lr, "best_dev_mse": dev, "epochs": len(history)})
        if best is None or dev < best[0]:
            best = (dev, model, history, lr)
    if best is None:
        raise NumericalError("training diverged for every learning rate in {}".format(list(grid)))
    logging.info("Selected learning rate {} (dev MSE {:.5f})".format(best[3], best[0]))
    return best[1], best[2], best[3], pd.DataFrame(summary)
