import logging

import numpy as np


class NumericalError(RuntimeError):
    '''
    Raised when a computation leaves the finite/positive-definite regime
    (training divergence, MLPG solver failure).
    '''
    pass


class AverageMeter(object):

    def __init__(self):
        self.reset()

    def reset(self):
        self.avg = 0
        self.sum = 0
        self.cnt = 0

    def update(self, val, n=1):
        self.sum += val * n
        self.cnt += n
        self.avg = self.sum / self.cnt


def check_finite(name, array):
    array = np.asarray(array, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        raise ValueError("{} contains non-finite values".format(name))
    return array


def gather_metrics(metrics):
    '''
    Aggregate per-seed metric dicts.

    metrics: list of (seed, {name: value}) tuples. Keys missing from any seed
    are dropped. Returns ({name: {"median", "mean", "std"}}, ordered metric dicts).
    '''
    _metrics = sorted(metrics, key=lambda x: x[0])
    metrics = [x[1] for x in _metrics]
    assert isinstance(metrics, list) and len(metrics) > 0
    res = {k: [] for k in metrics[0].keys()}

    for m in metrics:
        to_del = [k for k in res if k not in m]
        for k in to_del:
            del res[k]

    for m in metrics:
        for k in res.keys():
            res[k].append(m[k])

    res_stats = {}
    for k, v in res.items():
        res_stats[k] = {"median": float(np.median(v)),
                        "mean": float(np.mean(v)),
                        "std": float(np.std(v))}
    logging.info("Raw metrics: {}".format(res))
    return res_stats, metrics
