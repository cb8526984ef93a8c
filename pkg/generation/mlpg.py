'''
Maximum likelihood parameter generation: the static trajectory c that
minimises sum_t (W c - mu)^T P (W c - mu), with W stacking the static, delta
and delta-delta windows of dataset.features and P the diagonal precisions.
Each dimension is an independent symmetric banded system W^T P W c = W^T P mu.
'''
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, solveh_banded

from dataset.features import WINDOWS, window_matrix
from utils.utils import NumericalError, check_finite


@dataclass(frozen=True, eq=False)
class GenerationProblem:
    '''
    means / variances: T x (len(windows) D), blocks ordered [static, delta,
    delta-delta]. An infinite variance gives that row precision 0.
    '''
    means: np.ndarray
    variances: np.ndarray
    windows: tuple = field(default=WINDOWS)

    def __post_init__(self):
        means = check_finite("means", self.means)
        variances = np.asarray(self.variances, dtype=np.float64)
        if means.ndim != 2 or len(means) == 0:
            raise ValueError("means must be a non-empty T x 3D array, got {}".format(means.shape))
        if variances.shape != means.shape:
            raise ValueError("variances {} do not match means {}".format(variances.shape, means.shape))
        if means.shape[1] == 0 or means.shape[1] % len(self.windows):
            raise ValueError("width {} is not a positive multiple of {} windows".format(
                means.shape[1], len(self.windows)))
        if np.any(np.isnan(variances)) or not np.all(variances > 0):
            raise ValueError("variances must be strictly positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def n_frames(self):
        return self.means.shape[0]

    @property
    def static_dim(self):
        return self.means.shape[1] // len(self.windows)

    @property
    def precisions(self):
        return np.where(np.isinf(self.variances), 0.0, 1.0 / self.variances)


@dataclass(frozen=True, eq=False)
class Trajectory:
    c: np.ndarray


def _blocks(problem, values):
    # T x (W D) -> W x T x D
    T, D = problem.n_frames, problem.static_dim
    return values.reshape(T, len(problem.windows), D).transpose(1, 0, 2)


def _upper_band(A, bandwidth):
    '''Dense upper band storage of a symmetric sparse matrix, as solveh_banded expects.'''
    n = A.shape[0]
    ab = np.zeros((bandwidth + 1, n))
    for k in range(bandwidth + 1):
        ab[bandwidth - k, k:] = A.diagonal(k)
    return ab


def mlpg_solve(problem):
    mu = _blocks(problem, problem.means)
    prec = _blocks(problem, problem.precisions)
    T, D = problem.n_frames, problem.static_dim
    if not prec[1:].any():
        return Trajectory(c=mu[0].copy())

    mats = [window_matrix(T, w) for w in problem.windows]
    reach = max(max(left, right) for left, right, _ in problem.windows)
    bandwidth = min(2 * reach, T - 1)
    c = np.empty((T, D))
    for d in range(D):
        A = sp.csr_matrix((T, T))
        rhs = np.zeros(T)
        for k, W in enumerate(mats):
            A = A + W.T @ sp.diags(prec[k, :, d]) @ W
            rhs = rhs + W.T @ (prec[k, :, d] * mu[k, :, d])
        try:
            c[:, d] = solveh_banded(_upper_band(sp.csr_matrix(A), bandwidth), rhs)
        except LinAlgError as err:
            raise NumericalError("MLPG system for dimension {} is not positive definite: {}".format(d, err))
    if not np.all(np.isfinite(c)):
        raise NumericalError("MLPG produced a non-finite trajectory")
    return Trajectory(c=c)


def mlpg_objective(problem, c):
    '''sum over windows, frames and dims of precision * (W c - mu)^2.'''
    c = check_finite("c", c)
    if c.shape != (problem.n_frames, problem.static_dim):
        raise ValueError("trajectory shape {} does not match problem ({}, {})".format(
            c.shape, problem.n_frames, problem.static_dim))
    mu = _blocks(problem, problem.means)
    prec = _blocks(problem, problem.precisions)
    total = 0.0
    for k, w in enumerate(problem.windows):
        resid = window_matrix(problem.n_frames, w) @ c - mu[k]
        total += float(np.sum(prec[k] * resid ** 2))
    return total
