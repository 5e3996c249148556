import math

import numpy as np
import pytest

from conftest import complete_graph, cycle_graph, path_graph
from fiedler.graphs import Graph, GraphGenConfig, generate_connected_graph, permute
from fiedler.model import (
    ModelParams,
    backward,
    backward_stack,
    build_stack,
    flatten_params,
    forward,
    forward_stack,
    grad_check,
    gru_update,
    init_params,
    initial_state,
    load_params,
    message_step,
    param_count,
    readout_global,
    readout_local,
    save_params,
    unflatten_params,
    zeros_like_params,
)


def rand_graph(seed, n_lo=5, n_hi=9):
    cfg = GraphGenConfig(n_range=(n_lo, n_hi), p_range=(0.3, 0.8), seed=seed)
    return generate_connected_graph(cfg, 0)


# -- parameters ---------------------------------------------------------------


def test_init_deterministic_and_shaped():
    a = init_params(4, seed=3)
    b = init_params(4, seed=3)
    assert np.array_equal(flatten_params(a), flatten_params(b))
    assert a.w_msg.shape == (4, 4)
    assert a.gru.u_c.shape == (4, 4)
    assert a.readout_local.w2.shape == (4,)
    assert a.readout_local.b2 == 0.0
    c = init_params(4, seed=4)
    assert not np.array_equal(flatten_params(a), flatten_params(c))


def test_init_respects_uniform_bounds():
    h = 16
    p = init_params(h, seed=0)
    lim = math.sqrt(6.0 / (2 * h))
    for mat in (p.w_msg, p.gru.w_z, p.gru.u_r, p.readout_local.w1):
        assert np.max(np.abs(mat)) <= lim
    assert np.max(np.abs(p.readout_global.w2)) <= math.sqrt(6.0 / (h + 1))
    assert np.array_equal(p.gru.b_z, np.zeros(h))


def test_flatten_unflatten_round_trip():
    p = init_params(6, seed=1)
    vec = flatten_params(p)
    assert vec.shape == (param_count(6),)
    q = unflatten_params(vec, 6)
    assert np.array_equal(flatten_params(q), vec)
    with pytest.raises(ValueError):
        unflatten_params(vec[:-1], 6)


def test_initial_state_rows_are_e1():
    s = initial_state(2, 3)
    assert np.array_equal(s, [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    assert np.array_equal(s.sum(axis=1), [1.0, 1.0])


# -- message step -------------------------------------------------------------


def test_message_step_identity_transform_sums_neighbors():
    p = init_params(3, seed=0)
    p.w_msg = np.eye(3)
    g = path_graph(3)
    states = np.arange(9, dtype=float).reshape(3, 3)
    out = message_step(p, g, states)
    assert np.array_equal(out[1], states[0] + states[2])
    assert np.array_equal(out[0], states[1])


def test_message_step_isolated_node_gets_zero_row():
    p = init_params(3, seed=0)
    g = Graph(3, [(1, 2)])  # node 0 isolated
    states = np.ones((3, 3))
    out = message_step(p, g, states)
    assert np.array_equal(out[0], np.zeros(3))


def test_message_step_equal_states_scale_with_degree():
    p = init_params(4, seed=0)
    p.w_msg = np.eye(4)
    g = Graph(4, [(0, 1), (0, 2), (0, 3)])
    h = np.array([0.5, -1.0, 2.0, 0.25])
    states = np.tile(h, (4, 1))
    out = message_step(p, g, states)
    for v in range(4):
        assert np.allclose(out[v], g.degree(v) * h, atol=0, rtol=0)


def test_message_step_locality_is_bitwise():
    p = init_params(8, seed=5)
    g = path_graph(6)  # node 0's only neighbor is 1
    rng = np.random.default_rng(0)
    states = rng.normal(size=(6, 8))
    base = message_step(p, g, states)
    perturbed = states.copy()
    perturbed[5] += 10.0  # node 5 is not adjacent to node 0
    out = message_step(p, g, perturbed)
    assert np.array_equal(out[0], base[0])


def test_message_step_shape_check():
    p = init_params(4, seed=0)
    with pytest.raises(ValueError):
        message_step(p, path_graph(3), np.zeros((3, 5)))


# -- GRU update ---------------------------------------------------------------


def test_gru_gate_closed_keeps_state():
    p = init_params(6, seed=2)
    p.gru.b_z = np.full(6, -50.0)
    rng = np.random.default_rng(1)
    states = rng.normal(size=(4, 6))
    messages = rng.normal(size=(4, 6))
    out = gru_update(p, states, messages)
    assert np.max(np.abs(out - states)) < 1e-12


def test_gru_gate_open_moves_to_candidate():
    p = init_params(6, seed=2)
    p.gru.b_z = np.full(6, 50.0)
    rng = np.random.default_rng(1)
    states = rng.normal(size=(4, 6))
    messages = rng.normal(size=(4, 6))
    out = gru_update(p, states, messages)
    r = 1.0 / (1.0 + np.exp(-(messages @ p.gru.w_r.T + states @ p.gru.u_r.T + p.gru.b_r)))
    candidate = np.tanh(
        messages @ p.gru.w_c.T + (r * states) @ p.gru.u_c.T + p.gru.b_c
    )
    assert np.max(np.abs(out - candidate)) < 1e-12


def test_gru_all_zero_inputs_and_biases_give_zero():
    p = init_params(5, seed=0)
    out = gru_update(p, np.zeros((3, 5)), np.zeros((3, 5)))
    assert np.array_equal(out, np.zeros((3, 5)))


# -- readouts -----------------------------------------------------------------


def test_readout_local_zero_weights_returns_bias():
    p = init_params(4, seed=0)
    p.readout_local.w1[:] = 0.0
    p.readout_local.w2[:] = 0.0
    p.readout_local.b2 = 2.5
    assert readout_local(p, np.ones(4)) == 2.5


def test_readout_local_relu_kills_negative_preactivations():
    p = init_params(4, seed=0)
    p.readout_local.w1 = -np.eye(4)
    p.readout_local.b1 = np.zeros(4)
    p.readout_local.b2 = -1.25
    assert readout_local(p, np.ones(4)) == -1.25


def test_readout_global_permutation_and_pooling():
    p = init_params(5, seed=3)
    rng = np.random.default_rng(7)
    states = rng.normal(size=(6, 5))
    base = readout_global(p, states)
    shuffled = states[rng.permutation(6)]
    assert readout_global(p, shuffled) == pytest.approx(base, abs=1e-12)
    # single row pools to itself; equal rows pool to the shared row
    row = states[2]
    single = readout_global(p, row[None, :])
    tiled = readout_global(p, np.tile(row, (4, 1)))
    assert tiled == pytest.approx(single, abs=1e-12)


# -- forward ------------------------------------------------------------------


def test_forward_global_invariant_under_isomorphism():
    p = init_params(12, seed=4)
    rng = np.random.default_rng(3)
    for trial in range(5):
        g = rand_graph(60 + trial)
        perm = rng.permutation(g.n)
        a, _ = forward(p, g, 4, "global")
        b, _ = forward(p, permute(g, perm), 4, "global")
        assert b == pytest.approx(a, abs=1e-9)


def test_forward_local_equivariant_under_isomorphism():
    p = init_params(10, seed=4)
    rng = np.random.default_rng(5)
    for trial in range(5):
        g = rand_graph(80 + trial)
        perm = rng.permutation(g.n)
        est, _ = forward(p, g, 3, "local")
        est_p, _ = forward(p, permute(g, perm), 3, "local")
        assert np.max(np.abs(est_p[perm] - est)) < 1e-9


def test_forward_vertex_transitive_graph_gives_equal_estimates():
    p = init_params(16, seed=1)
    est, _ = forward(p, cycle_graph(5), 4, "local")
    assert np.max(np.abs(est - est[0])) < 1e-9


def test_forward_depth_changes_output():
    p = init_params(8, seed=2)
    g = rand_graph(99)
    one, _ = forward(p, g, 1, "local")
    two, _ = forward(p, g, 2, "local")
    assert np.max(np.abs(one - two)) > 1e-8


def test_forward_is_deterministic_bitwise():
    p = init_params(16, seed=9)
    g = rand_graph(123)
    a, _ = forward(p, g, 8, "local")
    b, _ = forward(p, g, 8, "local")
    assert np.array_equal(a, b)


def test_forward_cache_records_all_steps():
    p = init_params(6, seed=0)
    g = path_graph(4)
    est, cache = forward(p, g, 3, "local")
    assert len(cache.states) == 4
    assert len(cache.messages) == 3
    assert len(cache.update_gates) == 3
    assert cache.states[0].shape == (4, 6)
    assert np.array_equal(cache.estimates, est)
    with pytest.raises(ValueError):
        forward(p, g, 0, "local")
    with pytest.raises(ValueError):
        forward(p, g, 2, "sideways")


# -- backward -----------------------------------------------------------------


def test_backward_zero_error_gives_zero_gradients():
    p = init_params(8, seed=6)
    g = rand_graph(7)
    est, cache = forward(p, g, 2, "global")
    loss, grads = backward(p, g, cache, est, "global")
    assert loss == 0.0
    assert np.array_equal(flatten_params(grads), np.zeros(param_count(8)))


def test_backward_b2_gradient_is_mean_residual():
    p = init_params(8, seed=6)
    g = rand_graph(8)
    target = 1.25
    est, cache = forward(p, g, 3, "local")
    loss, grads = backward(p, g, cache, target, "local")
    assert loss == pytest.approx(np.sum((est - target) ** 2) / (2 * g.n), rel=1e-12)
    assert grads.readout_local.b2 == pytest.approx(
        np.mean(est - target), rel=1e-12
    )
    # the inactive readout receives no gradient
    assert np.array_equal(grads.readout_global.w1, np.zeros((8, 8)))


def test_backward_rejects_mismatched_cache():
    p = init_params(8, seed=6)
    g = rand_graph(9)
    other = rand_graph(10)
    _, cache = forward(p, g, 2, "local")
    with pytest.raises(ValueError):
        backward(p, other, cache, 1.0, "local")
    with pytest.raises(ValueError):
        backward(p, g, cache, 1.0, "global")


def test_backward_deterministic_bitwise():
    p = init_params(12, seed=11)
    g = rand_graph(12)
    _, cache = forward(p, g, 4, "local")
    _, g1 = backward(p, g, cache, 0.7, "local")
    _, g2 = backward(p, g, cache, 0.7, "local")
    assert np.array_equal(flatten_params(g1), flatten_params(g2))


def test_stacked_batch_matches_mean_of_single_graphs():
    p = init_params(8, seed=13)
    graphs = [rand_graph(20 + i) for i in range(3)]
    targets = np.array([0.5, 1.5, 2.5])
    for mode in ("local", "global"):
        stack = build_stack(graphs)
        _, cache = forward_stack(p, stack, 3, mode)
        batch_loss, batch_grads = backward_stack(p, cache, targets)
        single_losses = []
        single_grads = np.zeros(param_count(8))
        for g, t in zip(graphs, targets):
            _, c = forward(p, g, 3, mode)
            loss, grads = backward(p, g, c, t, mode)
            single_losses.append(loss)
            single_grads += flatten_params(grads)
        assert batch_loss == pytest.approx(np.mean(single_losses), rel=1e-12)
        assert flatten_params(batch_grads) == pytest.approx(
            single_grads / 3.0, rel=1e-10, abs=1e-12
        )


# -- gradient check -----------------------------------------------------------


def test_grad_check_passes_on_seeded_instances():
    for mode, gseed, pseed, rounds in (
        ("local", 342, 942, 2),
        ("local", 2353, 2953, 3),
        ("global", 352, 952, 2),
    ):
        cfg = GraphGenConfig(n_range=(5, 5), p_range=(0.5, 0.9), seed=gseed)
        g = generate_connected_graph(cfg, 0)
        p = init_params(8, seed=pseed)
        assert grad_check(p, g, rounds, mode) <= 1e-5


def test_grad_check_detects_corruption():
    cfg = GraphGenConfig(n_range=(5, 5), p_range=(0.5, 0.9), seed=352)
    g = generate_connected_graph(cfg, 0)
    p = init_params(8, seed=952)
    assert grad_check(p, g, 2, "local", corrupt=True) >= 0.1


def test_grad_check_zero_error_instance_uses_floor():
    p = init_params(6, seed=1)
    g = rand_graph(44)
    est, cache = forward(p, g, 2, "global")
    _, grads = backward(p, g, cache, est, "global")
    assert np.array_equal(flatten_params(grads), np.zeros(param_count(6)))
    # both sides are ~0; the 1e-8 denominator floor keeps the ratio tame
    # (the numeric side carries O(eps^2) curvature noise, so it is not exact)
    assert grad_check(p, g, 2, "global", target=est) <= 1e-2


def test_grad_check_epsilon_validation():
    p = init_params(4, seed=0)
    with pytest.raises(ValueError):
        grad_check(p, path_graph(3), 2, "local", epsilon=0.0)


# -- checkpoints --------------------------------------------------------------


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    p = init_params(10, seed=21)
    p.readout_local.b2 = 0.1 + 0.2  # not exactly representable as 0.3
    path = tmp_path / "ckpt.txt"
    save_params(p, path, mode="local", rounds=8)
    loaded, meta = load_params(path)
    assert np.array_equal(flatten_params(loaded), flatten_params(p))
    assert meta["mode"] == "local"
    assert meta["T"] == "8"
    assert meta["H"] == "10"
    # a second save of the loaded params is byte-identical
    path2 = tmp_path / "ckpt2.txt"
    save_params(loaded, path2, mode="local", rounds=8)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_malformed_files(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("something-else v1 H=4\n")
    with pytest.raises(ValueError):
        load_params(path)
    p = init_params(4, seed=0)
    good = tmp_path / "good.txt"
    save_params(p, good)
    text = good.read_text().splitlines()
    clipped = tmp_path / "clipped.txt"
    clipped.write_text("\n".join(text[: len(text) // 2]) + "\n")
    with pytest.raises(ValueError):
        load_params(clipped)
