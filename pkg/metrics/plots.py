'''
This file contains methods for emitting the analysis plots, each as a CSV of
the raw data plus a self-contained SVG:
1. Mean gate activation over time with dashed boundary markers
2. Target trajectory and its best-correlated cell state, vertically offset
'''

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from analysis.gates import CellTrajectory, GateSeries

plt.rcParams.update({'font.size': 12, 'svg.hashsalt': 'gated-rnn-lab'})

TRAJECTORY_OFFSET = 4.0


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def gate_series_plot(series, csv_path, svg_path):
    frames = np.arange(len(series))
    pd.DataFrame({"frame": frames, series.gate: series.values}).to_csv(csv_path, index=False)
    fig, ax = plt.subplots(figsize=(10, 3))
    ax.plot(frames, series.values, color='black', linewidth=1.0)
    for i, b in enumerate(series.boundaries):
        ax.axvline(b, color='grey', linestyle='--', linewidth=0.8, gid="boundary_{}".format(i))
    ax.set_xlabel('Frame')
    ax.set_ylabel('Mean {} gate'.format(series.gate))
    if series.utt_id:
        ax.set_title(series.utt_id)
    fig.tight_layout()
    _save(fig, svg_path)


def _standardise(x):
    std = np.std(x)
    return (x - np.mean(x)) / (std if std > 0 else 1.0)


def cell_trajectory_plot(trajectory, csv_path, svg_path):
    frames = np.arange(len(trajectory.target))
    cell_col = "cell_{}".format(trajectory.unit)
    pd.DataFrame({"frame": frames, "target": trajectory.target,
                  cell_col: trajectory.cell}).to_csv(csv_path, index=False)
    fig, ax = plt.subplots(figsize=(10, 4))
    ax.plot(frames, _standardise(trajectory.target) + TRAJECTORY_OFFSET, color='blue', label='target')
    ax.plot(frames, _standardise(trajectory.cell), color='red',
            label='cell {} (r = {:.2f})'.format(trajectory.unit, trajectory.correlation))
    for i, b in enumerate(trajectory.boundaries):
        ax.axvline(b, color='grey', linestyle='--', linewidth=0.8, gid="boundary_{}".format(i))
    ax.set_yticks([])
    ax.set_xlabel('Frame')
    ax.legend(loc='upper right')
    fig.tight_layout()
    _save(fig, svg_path)


def emit_plot(data, path):
    '''
    Write <path>.csv and <path>.svg for a GateSeries or a CellTrajectory.
    Returns the two file paths.
    '''
    csv_path, svg_path = str(path) + ".csv", str(path) + ".svg"
    if isinstance(data, GateSeries):
        gate_series_plot(data, csv_path, svg_path)
    elif isinstance(data, CellTrajectory):
        cell_trajectory_plot(data, csv_path, svg_path)
    else:
        raise ValueError("cannot plot a {}".format(type(data).__name__))
    return csv_path, svg_path
