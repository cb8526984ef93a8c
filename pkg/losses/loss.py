'''
Implementation of the following loss functions:
1. Sequence MSE (training objective, squared error summed over dims, averaged over frames)
2. Element MSE (reporting, averaged over frames and dims)
Each returns (loss, d loss / d predictions).
'''

import numpy as np


def _check(predictions, targets):
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or predictions.ndim != 2 or len(predictions) == 0:
        raise ValueError("predictions {} and targets {} must be equal non-empty T x D arrays".format(
            predictions.shape, targets.shape))
    return predictions, targets


def sequence_mse(predictions, targets, **kwargs):
    predictions, targets = _check(predictions, targets)
    diff = predictions - targets
    T = len(diff)
    return float(np.sum(diff ** 2) / T), 2.0 * diff / T


def element_mse(predictions, targets, **kwargs):
    predictions, targets = _check(predictions, targets)
    diff = predictions - targets
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


loss_function_dict = {
    'sequence_mse': sequence_mse,
    'element_mse': element_mse,
}
