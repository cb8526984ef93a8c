'''
Generation: network forward pass, de-normalisation, MLPG smoothing per
stream and the voicing decision.
'''
import numpy as np

from dataset.features import AcousticFrames, WINDOWS, meanvar_restore
from generation.mlpg import GenerationProblem, mlpg_solve

VUV_THRESHOLD = 0.5
SMOOTHED_STREAMS = ("mcc", "bap", "lf0")


def global_variances(output_stats):
    '''Per-dimension variances of the training targets in the restored domain.'''
    return output_stats.scale ** 2


def pipeline_generate(model, inputs, layout=None, output_stats=None, variances=None,
                      vuv_threshold=VUV_THRESHOLD):
    '''
    inputs: T x linguistic_dim, already min-max normalised. Returns the
    generated AcousticFrames. Dims whose training variance was zero skip MLPG
    and keep the predicted static means.
    '''
    layout = layout or model.layout
    output_stats = output_stats or model.output_stats
    if layout is None or output_stats is None:
        raise ValueError("generation needs the stream layout and output statistics of the model")
    if variances is None:
        variances = global_variances(output_stats)
    variances = np.asarray(variances, dtype=np.float64)
    if variances.shape != (layout.output_dim,):
        raise ValueError("expected {} global variances, got shape {}".format(layout.output_dim, variances.shape))

    restored = meanvar_restore(model.forward(inputs), output_stats)
    T = len(restored)
    slices = layout.slices
    statics = {}
    for stream in SMOOTHED_STREAMS:
        sl = slices[stream]
        D = layout.static_dim(stream)
        means = restored[:, sl]
        flagged = output_stats.flagged[sl].reshape(len(WINDOWS), D).any(axis=0)
        var = np.where(output_stats.flagged[sl], 1.0, variances[sl])
        traj = mlpg_solve(GenerationProblem(means=means, variances=np.broadcast_to(var, (T, sl.stop - sl.start)))).c
        traj[:, flagged] = means[:, :D][:, flagged]
        statics[stream] = traj

    vuv = (restored[:, slices["vuv"]][:, 0] > vuv_threshold).astype(np.float64)
    return AcousticFrames(mcc=statics["mcc"], bap=statics["bap"], log_f0=statics["lf0"][:, 0], vuv=vuv)
