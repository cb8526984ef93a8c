import numpy as np
import pytest
import torch

from models.cells import (CellKind, CellParams, CellSpec, CellState, GateParams, init_params,
                          load_params, param_count, run_sequence, save_params, step)

TABLE_COUNTS = {
    CellKind.LSTM: 788224,
    CellKind.NIG: 591104,
    CellKind.NOG: 591104,
    CellKind.NFG: 591104,
    CellKind.NPH: 787456,
    CellKind.GRU: 590592,
    CellKind.SLSTM: 393728,
}


def zero_params(spec):
    arrays = {k: np.zeros_like(v) for k, v in init_params(spec, 0).arrays().items()}
    return CellParams.from_arrays(spec, arrays)


def random_params(spec, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    arrays = {k: rng.uniform(-scale, scale, v.shape) for k, v in init_params(spec, seed).arrays().items()}
    return CellParams.from_arrays(spec, arrays)


def scalar_state(kind, h, c):
    return CellState(h=np.array([h]), c=np.array([c]) if kind.has_cell else None)


@pytest.mark.parametrize("kind", list(CellKind))
def test_param_count_matches_table(kind):
    assert param_count(CellSpec(kind, 512, 256)) == TABLE_COUNTS[kind]


def test_param_count_smallest_nig():
    assert param_count(CellSpec(CellKind.NIG, 1, 1)) == 11


@pytest.mark.parametrize("nI,nH", [(1, 1), (3, 5), (7, 2), (16, 9)])
def test_param_count_relations(nI, nH):
    U = nI * nH + nH * nH + nH
    count = lambda kind: param_count(CellSpec(kind, nI, nH))
    assert count(CellKind.NPH) == count(CellKind.LSTM) - 3 * nH
    assert count(CellKind.SLSTM) == count(CellKind.GRU) - U


@pytest.mark.parametrize("kind", list(CellKind))
def test_param_count_equals_stored_scalars(kind):
    spec = CellSpec(kind, 5, 3)
    assert init_params(spec, 0).size == param_count(spec)


def test_kind_order_and_parse():
    assert [k.value for k in CellKind] == ["LSTM", "NIG", "NOG", "NFG", "NPH", "GRU", "S-LSTM"]
    assert CellKind.parse("VanillaLSTM") is CellKind.LSTM
    assert CellKind.parse("slstm") is CellKind.SLSTM
    assert CellKind.parse("S-LSTM") is CellKind.SLSTM
    with pytest.raises(ValueError):
        CellKind.parse("peephole-gru")


def test_spec_rejects_non_positive_dims():
    with pytest.raises(ValueError):
        CellSpec(CellKind.LSTM, 0, 3)
    with pytest.raises(ValueError):
        CellSpec(CellKind.GRU, 3, 0)


def test_init_is_deterministic():
    spec = CellSpec(CellKind.LSTM, 4, 3)
    a, b = init_params(spec, 7).arrays(), init_params(spec, 7).arrays()
    assert a.keys() == b.keys()
    for k in a:
        assert np.array_equal(a[k], b[k])


@pytest.mark.parametrize("kind", [k for k in CellKind if "f" in k.gates])
def test_init_forget_bias_is_one(kind):
    params = init_params(CellSpec(kind, 4, 3), 0, 0.1)
    assert np.array_equal(params.gates["f"].b, np.ones(3))


def test_init_ranges_and_peepholes():
    params = init_params(CellSpec(CellKind.LSTM, 6, 5), 3, 0.1)
    for name, gp in params.gates.items():
        assert np.all(np.abs(gp.W) <= 0.1) and np.all(np.abs(gp.R) <= 0.1)
        if name in ("i", "f", "o"):
            assert np.array_equal(gp.p, np.zeros(5))
        else:
            assert gp.p is None


def test_gru_has_no_peepholes():
    params = init_params(CellSpec(CellKind.GRU, 4, 3), 0, 0.1)
    assert all(gp.p is None for gp in params.gates.values())
    assert not any(k.startswith("p_") for k in params.arrays())


def test_init_rejects_non_positive_scale():
    with pytest.raises(ValueError):
        init_params(CellSpec(CellKind.LSTM, 2, 2), 0, 0.0)


def test_params_reject_misplaced_peephole():
    spec = CellSpec(CellKind.NPH, 1, 1)
    gp = GateParams(W=np.zeros((1, 1)), R=np.zeros((1, 1)), p=np.zeros(1), b=np.zeros(1))
    with pytest.raises(ValueError):
        CellParams(spec=spec, gates={name: gp for name in spec.kind.gates})


def test_vanilla_zero_params_zero_state():
    spec = CellSpec(CellKind.LSTM, 3, 2)
    state, trace = step(spec, zero_params(spec), np.array([0.3, -1.0, 2.0]), CellState.zeros(spec))
    for gate in ("i", "f", "o"):
        assert np.allclose(trace.gates[gate], 0.5)
    assert np.array_equal(state.c, np.zeros(2))
    assert np.array_equal(state.h, np.zeros(2))


def test_vanilla_scalar_hand_evaluation():
    spec = CellSpec(CellKind.LSTM, 1, 1)
    state, trace = step(spec, zero_params(spec), np.zeros(1), scalar_state(spec.kind, 0.0, 1.0))
    assert trace.gates["f"][0] == pytest.approx(0.5)
    assert trace.gates["i"][0] == pytest.approx(0.5)
    assert state.c[0] == pytest.approx(0.5)
    assert state.h[0] == pytest.approx(0.231059, abs=1e-6)


def test_slstm_scalar_hand_evaluation():
    spec = CellSpec(CellKind.SLSTM, 1, 1)
    state, trace = step(spec, zero_params(spec), np.zeros(1), scalar_state(spec.kind, 0.0, 1.0))
    assert trace.gates["f"][0] == pytest.approx(0.5)
    assert state.c[0] == pytest.approx(0.5)
    assert state.h[0] == pytest.approx(0.462117, abs=1e-6)


def test_gru_scalar_hand_evaluation():
    spec = CellSpec(CellKind.GRU, 1, 1)
    state, trace = step(spec, zero_params(spec), np.zeros(1), scalar_state(spec.kind, 1.0, 0.0))
    assert trace.gates["r"][0] == pytest.approx(0.5)
    assert trace.gates["z"][0] == pytest.approx(0.5)
    assert trace.candidate[0] == 0.0
    assert state.h[0] == pytest.approx(0.5)
    assert state.c is None


@pytest.mark.parametrize("kind", [CellKind.NIG, CellKind.NOG, CellKind.NFG])
def test_removed_gate_absent_from_trace(kind):
    removed = {CellKind.NIG: "i", CellKind.NOG: "o", CellKind.NFG: "f"}[kind]
    spec = CellSpec(kind, 2, 3)
    _, trace = step(spec, random_params(spec), np.ones(2), CellState.zeros(spec))
    assert removed not in trace.gates


def test_nog_output_is_tanh_of_cell():
    spec = CellSpec(CellKind.NOG, 3, 4)
    state, _ = step(spec, random_params(spec), np.ones(3), CellState.zeros(spec))
    assert np.allclose(state.h, np.tanh(state.c), rtol=0, atol=1e-15)


@pytest.mark.parametrize("kind", list(CellKind))
def test_run_sequence_single_frame_equals_step(kind):
    spec = CellSpec(kind, 3, 2)
    params = random_params(spec)
    x = np.array([0.1, -0.2, 0.4])
    init = CellState(h=np.array([0.3, -0.1]), c=np.array([0.5, 0.2]) if kind.has_cell else None)
    states, _ = run_sequence(spec, params, x[None, :], init)
    state, _ = step(spec, params, x, init)
    assert len(states) == 1
    assert np.array_equal(states[0].h, state.h)
    if kind.has_cell:
        assert np.array_equal(states[0].c, state.c)


def test_nfg_zero_candidate_keeps_cell():
    spec = CellSpec(CellKind.NFG, 1, 1)
    states, _ = run_sequence(spec, zero_params(spec), np.zeros((3, 1)), CellState.zeros(spec))
    assert [s.c[0] for s in states] == [0.0, 0.0, 0.0]


def test_nfg_cell_accumulates_without_decay():
    spec = CellSpec(CellKind.NFG, 2, 3)
    params = random_params(spec, seed=4)
    states, traces = run_sequence(spec, params, np.random.default_rng(0).normal(size=(6, 2)))
    c_prev = np.zeros(3)
    for s, tr in zip(states, traces):
        assert np.allclose(s.c, c_prev + tr.gates["i"] * tr.candidate, rtol=0, atol=1e-15)
        c_prev = s.c


@pytest.mark.parametrize("kind", list(CellKind))
def test_run_sequence_equals_manual_steps(kind):
    spec = CellSpec(kind, 4, 3)
    params = random_params(spec, seed=2)
    xs = np.random.default_rng(1).normal(size=(5, 4))
    states, traces = run_sequence(spec, params, xs)
    prev = CellState.zeros(spec)
    for t in range(5):
        prev, trace = step(spec, params, xs[t], prev)
        assert np.array_equal(states[t].h, prev.h)
        if kind.has_cell:
            assert np.array_equal(states[t].c, prev.c)
        for name, act in trace.gates.items():
            assert np.array_equal(traces[t].gates[name], act)


@pytest.mark.parametrize("kind", list(CellKind))
def test_gates_strictly_inside_unit_interval(kind):
    spec = CellSpec(kind, 3, 4)
    params = random_params(spec, seed=5, scale=2.0)
    _, traces = run_sequence(spec, params, np.random.default_rng(3).normal(size=(10, 3)) * 3)
    for tr in traces:
        for values in tr.gates.values():
            assert np.all(values > 0) and np.all(values < 1)


@pytest.mark.parametrize("kind", [CellKind.LSTM, CellKind.NIG, CellKind.NFG, CellKind.NPH, CellKind.SLSTM])
def test_tanh_output_bounds_h(kind):
    spec = CellSpec(kind, 3, 4)
    states, _ = run_sequence(spec, random_params(spec, scale=3.0), np.random.default_rng(0).normal(size=(8, 3)) * 5)
    assert all(np.all(np.abs(s.h) <= 1.0) for s in states)


def test_slstm_cell_is_convex_combination():
    spec = CellSpec(CellKind.SLSTM, 3, 5)
    _, traces = run_sequence(spec, random_params(spec, seed=9), np.random.default_rng(9).normal(size=(7, 3)))
    for tr in traces:
        lo = np.minimum(tr.c_prev, tr.candidate)
        hi = np.maximum(tr.c_prev, tr.candidate)
        assert np.all(tr.c >= lo - 1e-15) and np.all(tr.c <= hi + 1e-15)


def test_gru_state_is_convex_combination():
    spec = CellSpec(CellKind.GRU, 3, 5)
    _, traces = run_sequence(spec, random_params(spec, seed=8), np.random.default_rng(8).normal(size=(7, 3)))
    for tr in traces:
        lo = np.minimum(tr.h_prev, tr.candidate)
        hi = np.maximum(tr.h_prev, tr.candidate)
        assert np.all(tr.h >= lo - 1e-15) and np.all(tr.h <= hi + 1e-15)


def test_step_is_pure():
    spec = CellSpec(CellKind.LSTM, 2, 3)
    params = random_params(spec)
    prev = CellState(h=np.full(3, 0.1), c=np.full(3, -0.2))
    a, _ = step(spec, params, np.array([0.5, 0.25]), prev)
    b, _ = step(spec, params, np.array([0.5, 0.25]), prev)
    assert np.array_equal(a.h, b.h) and np.array_equal(a.c, b.c)
    assert np.array_equal(prev.h, np.full(3, 0.1))


def test_step_errors():
    spec = CellSpec(CellKind.LSTM, 2, 3)
    params = random_params(spec)
    with pytest.raises(ValueError):
        step(spec, params, np.zeros(3), CellState.zeros(spec))
    with pytest.raises(ValueError):
        step(spec, params, np.array([np.nan, 0.0]), CellState.zeros(spec))
    with pytest.raises(ValueError):
        step(spec, params, np.zeros(2), CellState(h=np.zeros(3)))
    gru = CellSpec(CellKind.GRU, 2, 3)
    with pytest.raises(ValueError):
        step(gru, random_params(gru), np.zeros(2), CellState(h=np.zeros(3), c=np.zeros(3)))


def test_run_sequence_rejects_empty():
    spec = CellSpec(CellKind.GRU, 2, 3)
    with pytest.raises(ValueError):
        run_sequence(spec, random_params(spec), np.zeros((0, 2)))


def test_gru_matches_torch_gru_cell():
    spec = CellSpec(CellKind.GRU, 4, 3)
    params = random_params(spec, seed=11)
    G = params.gates
    cell = torch.nn.GRUCell(4, 3).double()
    with torch.no_grad():
        cell.weight_ih.copy_(torch.from_numpy(np.vstack([G["r"].W, G["z"].W, G["h"].W])))
        cell.weight_hh.copy_(torch.from_numpy(np.vstack([G["r"].R, G["z"].R, G["h"].R])))
        cell.bias_ih.copy_(torch.from_numpy(np.concatenate([G["r"].b, G["z"].b, G["h"].b])))
        cell.bias_hh.zero_()
    xs = np.random.default_rng(0).normal(size=(6, 4))
    states, _ = run_sequence(spec, params, xs)
    h = torch.zeros(1, 3, dtype=torch.float64)
    with torch.no_grad():
        for t in range(6):
            h = cell(torch.from_numpy(xs[t:t + 1]), h)
            assert np.allclose(states[t].h, h.numpy()[0], rtol=0, atol=1e-12)


def test_nph_matches_torch_lstm_cell():
    spec = CellSpec(CellKind.NPH, 4, 3)
    params = random_params(spec, seed=12)
    G = params.gates
    cell = torch.nn.LSTMCell(4, 3).double()
    with torch.no_grad():
        cell.weight_ih.copy_(torch.from_numpy(np.vstack([G[g].W for g in "ifco"])))
        cell.weight_hh.copy_(torch.from_numpy(np.vstack([G[g].R for g in "ifco"])))
        cell.bias_ih.copy_(torch.from_numpy(np.concatenate([G[g].b for g in "ifco"])))
        cell.bias_hh.zero_()
    xs = np.random.default_rng(1).normal(size=(6, 4))
    states, _ = run_sequence(spec, params, xs)
    h = torch.zeros(1, 3, dtype=torch.float64)
    c = torch.zeros(1, 3, dtype=torch.float64)
    with torch.no_grad():
        for t in range(6):
            h, c = cell(torch.from_numpy(xs[t:t + 1]), (h, c))
            assert np.allclose(states[t].h, h.numpy()[0], rtol=0, atol=1e-12)
            assert np.allclose(states[t].c, c.numpy()[0], rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", list(CellKind))
def test_params_container_round_trip_is_bit_exact(kind, tmp_path):
    spec = CellSpec(kind, 5, 4)
    params = random_params(spec, seed=3)
    path = str(tmp_path / "cell.pt")
    save_params(params, path)
    loaded = load_params(path)
    assert loaded.spec == spec
    original = params.arrays()
    for name, arr in loaded.arrays().items():
        assert arr.dtype == np.float64
        assert arr.tobytes() == original[name].tobytes()


def test_params_container_rejects_unknown_version(tmp_path):
    spec = CellSpec(CellKind.SLSTM, 2, 2)
    path = str(tmp_path / "cell.pt")
    save_params(init_params(spec, 0), path)
    state = torch.load(path, weights_only=True)
    state["format_version"] = 99
    torch.save(state, path)
    with pytest.raises(ValueError):
        load_params(path)
