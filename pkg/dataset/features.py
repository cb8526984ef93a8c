'''
Feature conditioning for the acoustic model: input min-max normalisation,
acoustic mean-variance normalisation, delta windows, F0 interpolation and
the binary feature-file format.
'''
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from utils.utils import check_finite

# (left, right, coefficients): static, delta, delta-delta
WINDOWS = (
    (0, 0, np.array([1.0])),
    (1, 1, np.array([-0.5, 0.0, 0.5])),
    (1, 1, np.array([1.0, -2.0, 1.0])),
)

FEATURE_RANGE = (0.01, 0.99)

_HEADER = np.dtype("<i8")
_PAYLOAD = np.dtype("<f8")


class FeatureFileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NormStats:
    '''
    Per-dimension statistics. kind "minmax": offset = min, scale = max - min
    (0 on constant dims). kind "meanvar": offset = mean, scale = std (1 on
    zero-variance dims). `flagged` marks the degenerate dims.
    '''
    kind: str
    offset: np.ndarray
    scale: np.ndarray
    flagged: np.ndarray
    feature_range: tuple = FEATURE_RANGE

    def __post_init__(self):
        if self.kind not in ("minmax", "meanvar"):
            raise ValueError("unknown normalisation kind {!r}".format(self.kind))

    @property
    def dim(self):
        return len(self.offset)

    @property
    def minimum(self):
        return self.offset

    @property
    def maximum(self):
        return self.offset + self.scale

    @property
    def mean(self):
        return self.offset

    @property
    def std(self):
        return self.scale

    def check_frames(self, frames, what="frames"):
        frames = check_finite(what, frames)
        if frames.ndim != 2 or frames.shape[1] != self.dim:
            raise ValueError("{} have shape {}, statistics cover {} dims".format(
                what, frames.shape, self.dim))
        return frames


def _fit_frames(frames):
    frames = check_finite("frames", frames)
    if frames.ndim != 2 or len(frames) == 0:
        raise ValueError("normalisation needs at least one T x D frame block, got {}".format(
            frames.shape))
    return frames


def minmax_fit(frames, lo=FEATURE_RANGE[0], hi=FEATURE_RANGE[1]):
    frames = _fit_frames(frames)
    fmin = frames.min(axis=0)
    spread = frames.max(axis=0) - fmin
    return NormStats(kind="minmax", offset=fmin, scale=spread, flagged=spread == 0,
                     feature_range=(float(lo), float(hi)))


def minmax_apply(frames, stats):
    '''x' = lo + (hi - lo) (x - min) / (max - min); constant dims go to the midpoint. No clamping.'''
    frames = stats.check_frames(frames)
    lo, hi = stats.feature_range
    safe = np.where(stats.flagged, 1.0, stats.scale)
    out = lo + (hi - lo) * (frames - stats.offset) / safe
    out[:, stats.flagged] = 0.5 * (lo + hi)
    return out


def minmax_invert(frames, stats):
    frames = stats.check_frames(frames)
    lo, hi = stats.feature_range
    out = stats.offset + (frames - lo) * stats.scale / (hi - lo)
    out[:, stats.flagged] = stats.offset[stats.flagged]
    return out


def minmax_fit_apply(frames, lo=FEATURE_RANGE[0], hi=FEATURE_RANGE[1]):
    stats = minmax_fit(frames, lo, hi)
    return minmax_apply(frames, stats), stats


def meanvar_fit(frames):
    frames = _fit_frames(frames)
    mean = frames.mean(axis=0)
    std = frames.std(axis=0)
    flagged = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    if flagged.any():
        logging.info("Zero-variance dims passed through unscaled: {}".format(
            np.flatnonzero(flagged).tolist()))
    return NormStats(kind="meanvar", offset=mean, scale=np.where(flagged, 1.0, std),
                     flagged=flagged)


def meanvar_apply(frames, stats):
    frames = stats.check_frames(frames)
    return (frames - stats.offset) / stats.scale


def meanvar_restore(frames, stats):
    frames = stats.check_frames(frames)
    return frames * stats.scale + stats.offset


def window_matrix(n_frames, window):
    '''
    Sparse T x T operator of one delta window; references outside [0, T-1]
    are folded onto the edge frame (edge replication).
    '''
    left, right, coeffs = window
    if len(coeffs) != left + right + 1:
        raise ValueError("window of width {} does not span [-{}, +{}]".format(len(coeffs), left, right))
    rows = np.repeat(np.arange(n_frames), len(coeffs))
    cols = np.clip(rows + np.tile(np.arange(-left, right + 1), n_frames), 0, n_frames - 1)
    vals = np.tile(np.asarray(coeffs, dtype=np.float64), n_frames)
    # duplicates at the edges are summed on conversion
    return sp.coo_matrix((vals, (rows, cols)), shape=(n_frames, n_frames)).tocsr()


def compute_dynamics(static, windows=WINDOWS):
    '''T x D statics -> T x (len(windows) D) as [static, delta, delta-delta].'''
    static = check_finite("static", static)
    if static.ndim == 1:
        static = static[:, None]
    if static.ndim != 2 or len(static) == 0:
        raise ValueError("compute_dynamics needs T >= 1 frames, got shape {}".format(static.shape))
    T = len(static)
    return np.hstack([window_matrix(T, w) @ static for w in windows])


def interpolate_f0(f0):
    '''
    f0 in Hz with 0 marking unvoiced frames -> (log_f0, vuv). Unvoiced gaps
    are linearly interpolated in the log domain; leading/trailing gaps take
    the nearest voiced value.
    '''
    f0 = check_finite("f0", f0)
    if f0.ndim != 1 or len(f0) == 0:
        raise ValueError("f0 must be a non-empty 1-D track, got shape {}".format(f0.shape))
    if np.any(f0 < 0):
        raise ValueError("f0 contains negative values")
    voiced = f0 > 0
    if not voiced.any():
        raise ValueError("utterance has no voiced frame; cannot interpolate F0")
    frames = np.arange(len(f0))
    log_f0 = np.interp(frames, frames[voiced], np.log(f0[voiced]))
    log_f0[voiced] = np.log(f0[voiced])
    return log_f0, voiced.astype(np.float64)


@dataclass(frozen=True, eq=False)
class AcousticFrames:
    '''Static acoustic streams of one utterance.'''
    mcc: np.ndarray
    bap: np.ndarray
    log_f0: np.ndarray
    vuv: np.ndarray

    def __post_init__(self):
        T = len(self.log_f0)
        if self.mcc.shape[0] != T or self.bap.shape[0] != T or self.vuv.shape != (T,):
            raise ValueError("acoustic streams disagree on frame count: mcc {}, bap {}, lf0 {}, vuv {}".format(
                self.mcc.shape, self.bap.shape, self.log_f0.shape, self.vuv.shape))
        if not np.all((self.vuv == 0) | (self.vuv == 1)):
            raise ValueError("vuv must be binary")

    @property
    def n_frames(self):
        return len(self.log_f0)

    def f0_hz(self):
        return np.where(self.vuv > 0.5, np.exp(self.log_f0), 0.0)


STREAMS = ("mcc", "bap", "lf0", "vuv")


@dataclass(frozen=True)
class StreamLayout:
    '''
    Target vector order: [mcc, d mcc, dd mcc, bap, d bap, dd bap,
    lf0, d lf0, dd lf0, vuv].
    '''
    mcc_dim: int = 12
    bap_dim: int = 4

    def __post_init__(self):
        if self.mcc_dim < 1 or self.bap_dim < 1:
            raise ValueError("stream dims must be >= 1, got mcc {} bap {}".format(
                self.mcc_dim, self.bap_dim))

    def static_dim(self, stream):
        return {"mcc": self.mcc_dim, "bap": self.bap_dim, "lf0": 1, "vuv": 1}[stream]

    @property
    def slices(self):
        out, start = {}, 0
        for stream in STREAMS:
            width = self.static_dim(stream) * (1 if stream == "vuv" else len(WINDOWS))
            out[stream] = slice(start, start + width)
            start += width
        return out

    @property
    def output_dim(self):
        return self.slices["vuv"].stop

    def pack_targets(self, frames):
        if frames.mcc.shape[1] != self.mcc_dim or frames.bap.shape[1] != self.bap_dim:
            raise ValueError("frames have mcc {} / bap {} dims, layout expects {} / {}".format(
                frames.mcc.shape[1], frames.bap.shape[1], self.mcc_dim, self.bap_dim))
        return np.hstack([compute_dynamics(frames.mcc),
                          compute_dynamics(frames.bap),
                          compute_dynamics(frames.log_f0),
                          frames.vuv[:, None].astype(np.float64)])


def write_feature_file(path, array):
    '''Little-endian int64 frame count and dims, then row-major float64.'''
    array = np.asarray(array, dtype=np.float64)
    if array.ndim == 1:
        array = array[:, None]
    if array.ndim != 2:
        raise ValueError("feature files hold T x D arrays, got shape {}".format(array.shape))
    with open(path, "wb") as f:
        f.write(np.array(array.shape, dtype=_HEADER).tobytes())
        f.write(np.ascontiguousarray(array, dtype=_PAYLOAD).tobytes())


def read_feature_file(path):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 2 * _HEADER.itemsize:
        raise FeatureFileError("{}: truncated header ({} bytes)".format(path, len(data)))
    n_frames, dim = (int(v) for v in np.frombuffer(data[:16], dtype=_HEADER))
    if n_frames < 0 or dim < 0:
        raise FeatureFileError("{}: corrupt header ({} x {})".format(path, n_frames, dim))
    expected = 16 + n_frames * dim * _PAYLOAD.itemsize
    if len(data) != expected:
        raise FeatureFileError("{}: expected {} bytes for {} x {} frames, found {}".format(
            path, expected, n_frames, dim, len(data)))
    return np.frombuffer(data[16:], dtype=_PAYLOAD).reshape(n_frames, dim).copy()
