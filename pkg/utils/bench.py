import logging
import time

import numpy as np
import pandas as pd

from models.cells import CellKind

BENCH_COLUMNS = ["system", "median_seconds", "ratio_to_lstm", "repeats"]


def _same_topology(models):
    configs = [m.config.with_kind(CellKind.LSTM) for m in models.values()]
    return all(c == configs[0] for c in configs[1:])


def time_forward(model, sequences):
    start = time.perf_counter()
    for seq in sequences:
        model.forward(seq.inputs)
    return time.perf_counter() - start


def bench_generation(models, sequences, repeats=3):
    '''
    models: {system name: Model} sharing one topology. Times the forward pass
    over the whole set `repeats` times per model (sequentially, interleaved
    across models) and reports the median plus the ratio to the LSTM model
    (the first model when no LSTM is present).
    '''
    if len(models) < 2:
        raise ValueError("bench_generation needs at least two models, got {}".format(len(models)))
    if repeats < 3:
        raise ValueError("bench_generation needs at least 3 repeats, got {}".format(repeats))
    if not sequences:
        raise ValueError("bench_generation needs a non-empty set")
    if not _same_topology(models):
        raise ValueError("benchmarked models must share every setting except the cell kind")

    timings = {name: [] for name in models}
    for _ in range(repeats):
        for name, model in models.items():
            timings[name].append(time_forward(model, sequences))

    reference = next((name for name, m in models.items() if m.config.kind is CellKind.LSTM),
                     next(iter(models)))
    ref_median = float(np.median(timings[reference]))
    rows = []
    for name in models:
        median = float(np.median(timings[name]))
        rows.append({"system": name, "median_seconds": median,
                     "ratio_to_lstm": median / ref_median, "repeats": repeats})
        logging.info("{}: {:.4f}s median forward time ({:.3f} x {})".format(
            name, median, median / ref_median, reference))
    return pd.DataFrame(rows, columns=BENCH_COLUMNS)
