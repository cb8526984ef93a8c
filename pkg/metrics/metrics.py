'''
Objective measures for generated acoustic features:
1. Mel-cepstral distortion (dB)
2. Band-aperiodicity distortion (dB, same formula)
3. F0 RMSE in Hz over jointly voiced frames
4. Voiced/unvoiced decision error (%)
'''

import math
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from utils.utils import check_finite

# Some keys used for the frame-count dictionary
MCD = 'mcd'
BAP = 'bap'
F0 = 'f0'
VUV = 'vuv'

LOG_SPEC_DB = 10.0 / math.log(10.0) * math.sqrt(2.0)


def _pair(ref, hyp, what):
    ref = check_finite(what + " reference", ref)
    hyp = check_finite(what + " hypothesis", hyp)
    if ref.shape != hyp.shape:
        raise ValueError("{}: reference {} and hypothesis {} differ in shape".format(
            what, ref.shape, hyp.shape))
    return ref, hyp


def frame_distortion(ref, hyp):
    '''Per-frame (10 / ln 10) sqrt(2 sum_d (ref_d - hyp_d)^2).'''
    ref, hyp = _pair(ref, hyp, "distortion")
    if ref.ndim != 2:
        raise ValueError("distortion needs T x D frames, got shape {}".format(ref.shape))
    return LOG_SPEC_DB * np.sqrt(np.sum((ref - hyp) ** 2, axis=1))


def mcd(ref, hyp):
    '''Mean over frames; the caller drops coefficient 0.'''
    dist = frame_distortion(ref, hyp)
    if len(dist) == 0:
        raise ValueError("mcd needs at least one frame")
    return float(np.mean(dist))


def bap_distortion(ref, hyp):
    return mcd(ref, hyp)


def joint_voiced(ref_vuv, hyp_vuv):
    ref_vuv, hyp_vuv = _pair(ref_vuv, hyp_vuv, "vuv")
    return (ref_vuv > 0.5) & (hyp_vuv > 0.5)


def f0_rmse(ref_f0_hz, hyp_f0_hz, ref_vuv, hyp_vuv):
    ref_f0_hz, hyp_f0_hz = _pair(ref_f0_hz, hyp_f0_hz, "f0")
    joint = joint_voiced(ref_vuv, hyp_vuv)
    if joint.shape != ref_f0_hz.shape:
        raise ValueError("voicing flags {} not aligned with F0 {}".format(joint.shape, ref_f0_hz.shape))
    if not joint.any():
        raise ValueError("no jointly voiced frames; F0 RMSE undefined")
    return float(np.sqrt(np.mean((ref_f0_hz[joint] - hyp_f0_hz[joint]) ** 2)))


def vuv_error(ref_vuv, hyp_vuv):
    ref_vuv, hyp_vuv = _pair(ref_vuv, hyp_vuv, "vuv")
    if ref_vuv.size == 0:
        raise ValueError("vuv_error needs at least one frame")
    return float(100.0 * np.mean((ref_vuv > 0.5) != (hyp_vuv > 0.5)))


@dataclass
class MetricReport:
    mcd_db: float
    bap_db: float
    f0_rmse_hz: float
    vuv_error_pct: float
    frames_evaluated: Dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_utterances(cls, pairs):
        '''
        pairs: iterable of (reference, generated) dataset.features.AcousticFrames.
        Frames are pooled over the set before averaging; MCD skips c0.
        '''
        mcd_frames, bap_frames, f0_err, vuv_err = [], [], [], []
        for ref, hyp in pairs:
            if ref.n_frames != hyp.n_frames:
                raise ValueError("reference has {} frames, generated {}".format(ref.n_frames, hyp.n_frames))
            mcd_frames.append(frame_distortion(ref.mcc[:, 1:], hyp.mcc[:, 1:]))
            bap_frames.append(frame_distortion(ref.bap, hyp.bap))
            joint = joint_voiced(ref.vuv, hyp.vuv)
            f0_err.append(ref.f0_hz()[joint] - hyp.f0_hz()[joint])
            vuv_err.append((ref.vuv > 0.5) != (hyp.vuv > 0.5))
        if not mcd_frames:
            raise ValueError("MetricReport needs at least one utterance")
        mcd_frames = np.concatenate(mcd_frames)
        bap_frames = np.concatenate(bap_frames)
        f0_err = np.concatenate(f0_err)
        vuv_err = np.concatenate(vuv_err)
        if len(f0_err) == 0:
            raise ValueError("no jointly voiced frames in the set; F0 RMSE undefined")
        return cls(mcd_db=float(np.mean(mcd_frames)),
                   bap_db=float(np.mean(bap_frames)),
                   f0_rmse_hz=float(np.sqrt(np.mean(f0_err ** 2))),
                   vuv_error_pct=float(100.0 * np.mean(vuv_err)),
                   frames_evaluated={MCD: len(mcd_frames), BAP: len(bap_frames),
                                     F0: len(f0_err), VUV: len(vuv_err)})

    def as_row(self, model):
        return {"model": model,
                "mcd_db": self.mcd_db,
                "bap_db": self.bap_db,
                "f0_rmse_hz": self.f0_rmse_hz,
                "vuv_pct": self.vuv_error_pct,
                "frames": self.frames_evaluated.get(VUV, 0)}
