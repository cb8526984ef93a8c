'''
Gate and memory-cell analyses of a trained recurrent layer:
1. Mean gate activation over units, frame by frame
2. Alignment of that series with segment boundaries
3. Pearson correlation of every cell-state trajectory with one target dimension
'''
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy.signal import find_peaks

from models.cells import CellKind
from utils.utils import check_finite

GATE_KEYS = {"forget": "f", "input": "i", "output": "o", "reset": "r", "update": "z"}


@dataclass(frozen=True, eq=False)
class GateSeries:
    gate: str
    values: np.ndarray
    boundaries: Tuple[int, ...] = ()
    utt_id: str = ""
    # the gate is not a free unit of this kind (pinned to 1, or 1 - f for the S-LSTM input)
    flagged: bool = False
    note: str = ""

    def __len__(self):
        return len(self.values)

    def sliced(self, start, stop):
        return GateSeries(gate=self.gate, values=self.values[start:stop],
                          boundaries=tuple(b - start for b in self.boundaries if start <= b < stop),
                          utt_id=self.utt_id, flagged=self.flagged, note=self.note)


@dataclass(frozen=True, eq=False)
class AlignmentStats:
    boundary_mean: float
    interior_mean: float
    difference: float
    peaks: np.ndarray
    peak_distances: np.ndarray


@dataclass(frozen=True, eq=False)
class CorrelationTable:
    correlations: np.ndarray
    flagged: np.ndarray
    argmax: int
    value: float

    def to_frame(self):
        return pd.DataFrame({"unit": np.arange(len(self.correlations)),
                             "correlation": self.correlations,
                             "constant": self.flagged})


@dataclass(frozen=True, eq=False)
class CellTrajectory:
    '''Target dimension and its best-correlated cell-state trajectory.'''
    target: np.ndarray
    cell: np.ndarray
    unit: int
    correlation: float
    boundaries: Tuple[int, ...] = ()
    utt_id: str = ""


def mean_gate_activation(traces, gate, kind, boundaries=(), utt_id=""):
    '''
    Arithmetic mean over hidden units per frame. Gates a kind pins to 1 (the
    NIG input, NOG output, NFG forget gate and the S-LSTM output) come back as
    a constant 1 series, and the S-LSTM input as 1 - f, all flagged.
    '''
    kind = CellKind.parse(kind)
    if gate not in GATE_KEYS:
        raise ValueError("unknown gate {!r}; expected one of {}".format(gate, ", ".join(GATE_KEYS)))
    if not traces:
        raise ValueError("mean_gate_activation needs at least one trace")
    key = GATE_KEYS[gate]
    if (kind is CellKind.GRU) != (key in ("r", "z")):
        raise ValueError("{} has no {} gate".format(kind.value, gate))

    if key in traces[0].gates:
        values = np.array([np.mean(tr.gates[key]) for tr in traces])
        return GateSeries(gate=gate, values=values, boundaries=tuple(boundaries), utt_id=utt_id)
    if kind is CellKind.SLSTM and key == "i":
        values = np.array([np.mean(1.0 - tr.gates["f"]) for tr in traces])
        note = "S-LSTM input weighting is 1 - f"
    else:
        values = np.ones(len(traces))
        note = "{} pins the {} gate to 1".format(kind.value, gate)
    logging.info("{} ({})".format(note, utt_id or "series"))
    return GateSeries(gate=gate, values=values, boundaries=tuple(boundaries), utt_id=utt_id,
                      flagged=True, note=note)


def boundary_alignment(series, window=1):
    '''
    Boundary-adjacent frames lie within +-window of an internal boundary (a
    segment start after frame 0); every other frame is interior. Peaks are
    strict local maxima; each gets its distance to the nearest boundary.
    '''
    values = check_finite("series", series.values)
    T = len(values)
    internal = np.array([b for b in series.boundaries if 0 < b < T], dtype=int)
    if len(internal) == 0:
        raise ValueError("boundary alignment needs at least two segments")
    frames = np.arange(T)
    distance = np.min(np.abs(frames[:, None] - internal[None, :]), axis=1)
    near = distance <= window
    boundary_mean = float(np.mean(values[near]))
    interior_mean = float(np.mean(values[~near])) if (~near).any() else float("nan")
    peaks, _ = find_peaks(values, plateau_size=(1, 1))
    return AlignmentStats(boundary_mean=boundary_mean, interior_mean=interior_mean,
                          difference=boundary_mean - interior_mean,
                          peaks=peaks, peak_distances=distance[peaks])


def cell_target_correlation(cell_states, target):
    '''Pearson r of each cell-state column with the target; constant units get 0 and are flagged.'''
    cells = check_finite("cell_states", cell_states)
    target = check_finite("target", target)
    if cells.ndim != 2 or target.shape != (len(cells),):
        raise ValueError("cell states {} and target {} are not aligned".format(cells.shape, target.shape))
    if len(target) < 3:
        raise ValueError("correlation needs at least 3 frames, got {}".format(len(target)))
    if np.ptp(target) == 0:
        raise ValueError("target trajectory is constant; correlation undefined")
    a = cells - cells.mean(axis=0)
    b = target - target.mean()
    flagged = np.ptp(cells, axis=0) == 0
    norm = np.sqrt(np.sum(a ** 2, axis=0) * np.sum(b ** 2))
    r = np.divide(a.T @ b, norm, out=np.zeros(cells.shape[1]), where=~flagged)
    r = np.clip(r, -1.0, 1.0)
    best = int(np.argmax(np.abs(r)))
    return CorrelationTable(correlations=r, flagged=flagged, argmax=best, value=float(r[best]))


def pooled_cell_target_correlation(pairs):
    '''Correlation over the frames of a whole set: pairs of (cell_states, target).'''
    pairs = list(pairs)
    if not pairs:
        raise ValueError("pooled correlation needs at least one utterance")
    return cell_target_correlation(np.vstack([c for c, _ in pairs]),
                                   np.concatenate([t for _, t in pairs]))


def best_cell_trajectory(cell_states, target, boundaries=(), utt_id=""):
    table = cell_target_correlation(cell_states, target)
    return table, CellTrajectory(target=np.asarray(target, dtype=np.float64),
                                 cell=np.asarray(cell_states, dtype=np.float64)[:, table.argmax],
                                 unit=table.argmax, correlation=table.value,
                                 boundaries=tuple(boundaries), utt_id=utt_id)


def write_correlation_table(table, path):
    table.to_frame().to_csv(path, index=False)
