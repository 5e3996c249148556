import numpy as np
import pytest

from conftest import complete_graph, path_graph
from fiedler.graphs import (
    Graph,
    GraphGenConfig,
    generate_connected_graph,
    is_connected,
    laplacian,
    permute,
)
from fiedler.spectral import algebraic_connectivity


def test_graph_normalizes_and_dedupes_edges():
    g = Graph(4, [(2, 0), (0, 2), (1, 3)])
    assert g.edges == frozenset({(0, 2), (1, 3)})
    assert g.edge_list() == [(0, 2), (1, 3)]


def test_graph_rejects_bad_inputs():
    with pytest.raises(ValueError):
        Graph(2, [(0, 1)])  # below the minimum node count
    with pytest.raises(ValueError):
        Graph(65, [])
    with pytest.raises(ValueError):
        Graph(4, [(1, 1)])
    with pytest.raises(ValueError):
        Graph(4, [(0, 4)])


def test_neighbor_lists_ascending():
    g = Graph(4, [(0, 3), (0, 1), (2, 3)])
    assert g.neighbor_lists() == [[1, 3], [0], [3], [0, 2]]
    assert g.degree(3) == 2


def test_gen_config_validation():
    with pytest.raises(ValueError):
        GraphGenConfig(n_range=(2, 5))
    with pytest.raises(ValueError):
        GraphGenConfig(n_range=(5, 4))
    with pytest.raises(ValueError):
        GraphGenConfig(p_range=(0.0, 0.5))
    with pytest.raises(ValueError):
        GraphGenConfig(p_range=(0.5, 1.1))


def test_p_one_forces_complete_graph():
    cfg = GraphGenConfig(n_range=(3, 3), p_range=(1.0, 1.0), seed=5)
    for idx in range(5):
        g = generate_connected_graph(cfg, idx)
        assert g.edges == complete_graph(3).edges


def test_generated_graphs_connected_and_in_range():
    cfg = GraphGenConfig(n_range=(9, 11), p_range=(0.2, 0.6), seed=42)
    for idx in range(30):
        g = generate_connected_graph(cfg, idx)
        assert 9 <= g.n <= 11
        assert is_connected(g)


def test_generation_deterministic_per_draw_index():
    cfg = GraphGenConfig(n_range=(9, 11), p_range=(0.2, 0.6), seed=7)
    for idx in (0, 3, 11):
        a = generate_connected_graph(cfg, idx)
        b = generate_connected_graph(cfg, idx)
        assert a == b
    assert generate_connected_graph(cfg, 0) != generate_connected_graph(cfg, 1)


def test_generation_fails_on_degenerate_p_range():
    cfg = GraphGenConfig(n_range=(10, 10), p_range=(1e-9, 1e-9), seed=1)
    with pytest.raises(RuntimeError, match="p_range"):
        generate_connected_graph(cfg, 0)


def test_is_connected_cases():
    assert is_connected(complete_graph(4))
    assert not is_connected(Graph(4, [(0, 1), (2, 3)]))
    assert is_connected(path_graph(5))


def test_laplacian_triangle():
    lap = laplacian(complete_graph(3))
    assert np.array_equal(np.diag(lap), [2, 2, 2])
    off = lap[~np.eye(3, dtype=bool)]
    assert np.array_equal(off, -np.ones(6))


def test_laplacian_path3():
    lap = laplacian(path_graph(3))
    expected = np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]], dtype=float)
    assert np.array_equal(lap, expected)


def test_laplacian_rows_sum_to_zero():
    cfg = GraphGenConfig(n_range=(5, 12), p_range=(0.2, 0.8), seed=3)
    for idx in range(20):
        lap = laplacian(generate_connected_graph(cfg, idx))
        assert np.max(np.abs(lap.sum(axis=1))) == 0.0
        assert np.array_equal(lap, lap.T)


def test_permute_identity():
    g = path_graph(4)
    assert permute(g, [0, 1, 2, 3]) == g


def test_permute_swap_example():
    g = path_graph(3)  # edges 0-1, 1-2
    swapped = permute(g, [1, 0, 2])
    assert swapped.edges == frozenset({(0, 1), (0, 2)})


def test_permute_preserves_connectivity_value():
    cfg = GraphGenConfig(n_range=(6, 10), p_range=(0.3, 0.7), seed=9)
    rng = np.random.default_rng(0)
    for idx in range(10):
        g = generate_connected_graph(cfg, idx)
        perm = rng.permutation(g.n)
        assert algebraic_connectivity(permute(g, perm)) == pytest.approx(
            algebraic_connectivity(g), abs=1e-9
        )


def test_permute_rejects_non_bijections():
    g = path_graph(3)
    with pytest.raises(ValueError):
        permute(g, [0, 1])
    with pytest.raises(ValueError):
        permute(g, [0, 0, 2])
    with pytest.raises(ValueError):
        permute(g, [0, 1, 3])
