'''
Backpropagation through time for every cell kind in models.cells.

The backward loop only collects the gradients with respect to each gate's
pre-activation (one T x nH matrix per gate); weight, recurrent and input
gradients are then contracted in one matrix product each.
'''
from dataclasses import dataclass
from typing import Optional

import numpy as np

from models.cells import CellKind, CellParams, CellState, init_params, run_sequence
from utils.utils import check_finite

RELATIVE_ERROR_FLOOR = 1e-12

# order -> ({k: weight of L(x + k e) - L(x - k e)}, divisor of e)
STENCILS = {
    2: ({1: 1.0}, 2.0),
    4: ({1: 8.0, 2: -1.0}, 12.0),
}


@dataclass(frozen=True, eq=False)
class CellGradients:
    # same layout as the parameters they differentiate
    params: CellParams
    dxs: np.ndarray
    dh0: np.ndarray
    dc0: Optional[np.ndarray] = None

    def arrays(self):
        return self.params.arrays()


def sequence_backward(spec, params, xs, traces, upstream):
    '''
    Gradients of a scalar loss whose per-step h-gradients are `upstream`
    (T x nH), accumulated over all T steps of one run_sequence call.
    '''
    xs = check_finite("xs", xs)
    upstream = check_finite("upstream", upstream)
    T, nH = len(traces), spec.hidden_dim
    if T == 0:
        raise ValueError("sequence_backward needs at least one trace")
    if len(xs) != T or upstream.shape != (T, nH):
        raise ValueError("length mismatch: {} traces, {} input frames, upstream of shape {}".format(
            T, len(xs), upstream.shape))

    kind = spec.kind
    G = params.gates
    H_prev = np.stack([tr.h_prev for tr in traces])
    dA = {name: np.zeros((T, nH)) for name in G}
    if kind is CellKind.GRU:
        # gradient w.r.t. R^h h_{t-1}, before the reset gate
        dU = np.zeros((T, nH))

    dh_next = np.zeros(nH)
    dc_next = np.zeros(nH)
    for t in reversed(range(T)):
        tr = traces[t]
        dh = upstream[t] + dh_next

        if kind is CellKind.GRU:
            r, z, cand = tr.gates["r"], tr.gates["z"], tr.candidate
            da_h = dh * (1.0 - z) * (1.0 - cand ** 2)
            dA["h"][t] = da_h
            dU[t] = da_h * r
            dr = da_h * (G["h"].R @ tr.h_prev)
            dA["r"][t] = dr * r * (1.0 - r)
            dz = dh * (tr.h_prev - cand)
            dA["z"][t] = dz * z * (1.0 - z)
            dh_next = (dh * z + G["h"].R.T @ dU[t]
                       + G["r"].R.T @ dA["r"][t] + G["z"].R.T @ dA["z"][t])
            continue

        tanh_c = np.tanh(tr.c)
        if "o" in G:
            o = tr.gates["o"]
            dA["o"][t] = dh * tanh_c * o * (1.0 - o)
            dc = dc_next + dh * o * (1.0 - tanh_c ** 2)
            if G["o"].p is not None:
                dc = dc + dA["o"][t] * G["o"].p
        else:
            dc = dc_next + dh * (1.0 - tanh_c ** 2)

        cand = tr.candidate
        if kind is CellKind.SLSTM:
            f = tr.gates["f"]
            dA["f"][t] = dc * (tr.c_prev - cand) * f * (1.0 - f)
            dA["c"][t] = dc * (1.0 - f) * (1.0 - cand ** 2)
            dc_prev = dc * f
        else:
            i = tr.gates.get("i")
            f = tr.gates.get("f")
            dA["c"][t] = dc * (1.0 - cand ** 2) * (i if i is not None else 1.0)
            if i is not None:
                dA["i"][t] = dc * cand * i * (1.0 - i)
            if f is not None:
                dA["f"][t] = dc * tr.c_prev * f * (1.0 - f)
                dc_prev = dc * f
            else:
                dc_prev = dc
            for name in ("i", "f"):
                if name in G and G[name].p is not None:
                    dc_prev = dc_prev + dA[name][t] * G[name].p

        dh_next = sum(G[name].R.T @ dA[name][t] for name in G)
        dc_next = dc_prev

    if kind.has_cell:
        C = np.stack([tr.c for tr in traces])
        C_prev = np.stack([tr.c_prev for tr in traces])

    grads = {}
    for name, gp in G.items():
        dW = dA[name].T @ xs
        if kind is CellKind.GRU and name == "h":
            dR = dU.T @ H_prev
        else:
            dR = dA[name].T @ H_prev
        db = dA[name].sum(axis=0)
        dp = None
        if gp.p is not None:
            # output gate peeks at c_t, input/forget gates at c_{t-1}
            dp = (dA[name] * (C if name == "o" else C_prev)).sum(axis=0)
        grads["W_" + name] = dW
        grads["R_" + name] = dR
        if dp is not None:
            grads["p_" + name] = dp
        grads["b_" + name] = db

    dxs = sum(dA[name] @ gp.W for name, gp in G.items())
    return CellGradients(params=CellParams.from_arrays(spec, grads), dxs=dxs, dh0=dh_next,
                         dc0=dc_next if kind.has_cell else None)


@dataclass(frozen=True)
class GradCheckResult:
    # max over scalars of |a - n| / max(|a|, |n|, floor)
    max_error: float
    # worst gradient array under ||a - n|| / max(||a||, ||n||, floor)
    norm_error: float

    def worst(self, other):
        return GradCheckResult(max_error=max(self.max_error, other.max_error),
                               norm_error=max(self.norm_error, other.norm_error))

    def passed(self, threshold):
        return self.max_error < threshold


def relative_error(analytic, numeric):
    '''max |a - n| / max(|a|, |n|, floor) over every scalar.'''
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), RELATIVE_ERROR_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def norm_relative_error(analytic, numeric):
    '''||a - n|| / max(||a||, ||n||, floor) over a whole gradient array.'''
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), RELATIVE_ERROR_FLOOR)
    return float(np.linalg.norm(analytic - numeric) / denom)


def compare_gradients(analytic, numeric):
    '''GradCheckResult over matching dicts of analytic and numerical gradients.'''
    result = GradCheckResult(0.0, 0.0)
    for name, ga in analytic.items():
        gn = numeric[name]
        result = result.worst(GradCheckResult(relative_error(ga, gn), norm_relative_error(ga, gn)))
    return result


def central_difference(loss_fn, arrays, name, eps, order=4):
    '''
    Numerical gradient of sum(loss_fn(arrays)) w.r.t. every scalar of arrays[name].

    order 2 is the two-point (L(x+e) - L(x-e)) / 2e; order 4 extrapolates it
    from steps e and 2e. loss_fn may return per-term losses, which are
    differenced term by term before summing.
    '''
    if order not in STENCILS:
        raise ValueError("order must be one of {}, got {}".format(sorted(STENCILS), order))
    weights, divisor = STENCILS[order]
    base = arrays[name]
    grad = np.zeros_like(base)

    def shifted_loss(idx, step):
        shifted = base.copy()
        shifted[idx] += step
        return np.asarray(loss_fn({**arrays, name: shifted}), dtype=np.float64)

    for idx in np.ndindex(base.shape):
        total = sum(w * (shifted_loss(idx, k * eps) - shifted_loss(idx, -k * eps)) for k, w in weights.items())
        grad[idx] = np.sum(total) / (divisor * eps)
    return grad


def grad_check(spec, seed, eps=1e-3, length=6, scale=0.5, order=4):
    '''
    Compare sequence_backward with central finite differences under the loss
    0.5 * sum_t ||h_t - y_t||^2, over every parameter scalar, every input
    scalar and the initial state. Returns a GradCheckResult.
    '''
    if not eps > 0:
        raise ValueError("eps must be positive, got {}".format(eps))
    rng = np.random.default_rng(seed)
    base = init_params(spec, seed, scale)
    arrays = {name: (rng.uniform(-scale, scale, arr.shape) if name[0] in "pb" else arr)
              for name, arr in base.arrays().items()}
    params = CellParams.from_arrays(spec, arrays)
    nH = spec.hidden_dim

    arrays["xs"] = rng.normal(size=(length, spec.input_dim))
    arrays["h0"] = rng.uniform(-0.5, 0.5, nH)
    if spec.kind.has_cell:
        arrays["c0"] = rng.uniform(-0.5, 0.5, nH)
    targets = rng.normal(size=(length, nH))

    def unpack(a):
        init = CellState(h=a["h0"], c=a.get("c0"))
        p = CellParams.from_arrays(spec, {k: v for k, v in a.items() if k not in ("xs", "h0", "c0")})
        return p, a["xs"], init

    def loss(a):
        p, xs, init = unpack(a)
        states, _ = run_sequence(spec, p, xs, init)
        H = np.stack([s.h for s in states])
        return 0.5 * (H - targets) ** 2

    _, xs, init = unpack(arrays)
    states, traces = run_sequence(spec, params, xs, init)
    H = np.stack([s.h for s in states])
    grads = sequence_backward(spec, params, xs, traces, H - targets)

    analytic = dict(grads.arrays())
    analytic["xs"] = grads.dxs
    analytic["h0"] = grads.dh0
    if spec.kind.has_cell:
        analytic["c0"] = grads.dc0

    numeric = {name: central_difference(loss, arrays, name, eps, order) for name in analytic}
    return compare_gradients(analytic, numeric)
