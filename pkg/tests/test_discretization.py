import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import segments_cross, union_pairs

from xosbpd.discretization import (
    CrackSegment, NodeSet, apply_precracks, bonds_crossing, build_families,
    generate_block_with_hole, generate_plate_with_hole, generate_uniform_grid, load_nodes,
    write_nodes,
)
from xosbpd.errors import DegenerateBond, EmptyDomain, InvalidMeasure, IsolatedNode, ParseError


def two_nodes(delta_i, delta_j, dist):
    pos = np.array([[0.0, 0.0], [dist, 0.0]])
    return NodeSet(pos, np.ones(2), np.ones(2), np.array([delta_i, delta_j]))


def test_union_rule_bond_in_both_families():
    g = build_families(two_nodes(3.0, 5.0, 4.0))
    assert g.n_bonds == 2
    assert list(g.family(0)) == [1] and list(g.family(1)) == [0]


def test_union_rule_no_bond_beyond_both_horizons():
    with pytest.warns(IsolatedNode) as rec:
        g = build_families(two_nodes(3.0, 5.0, 6.0))
    assert g.n_bonds == 0
    assert rec[0].message.node_ids == [0, 1]


def test_interior_node_has_28_neighbors():
    nodes = generate_uniform_grid([[0, 1], [0, 1]], 0.1)
    g = build_families(nodes)
    centre = np.argmin(np.linalg.norm(nodes.positions - 0.55, axis=1))
    assert g.family_sizes()[centre] == 28


def test_coincident_nodes_rejected():
    nodes = NodeSet.from_measures(np.zeros((2, 2)), np.ones(2))
    with pytest.raises(DegenerateBond):
        build_families(nodes)


@given(st.integers(2, 60), st.integers(0, 2**32 - 1), st.sampled_from([2, 3]))
def test_union_rule_matches_brute_force(n, seed, dim):
    rng = np.random.default_rng(seed)
    pos = rng.random((n, dim))
    delta = rng.uniform(0.05, 0.4, n)
    nodes = NodeSet(pos, np.ones(n), delta / 3, delta)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IsolatedNode)
        g = build_families(nodes)
    own = g.owner
    got = {(int(i), int(j)) for i, j in zip(own, g.neighbors) if i < j}
    assert got == union_pairs(pos, delta)
    adj = g.adjacency()
    assert (adj != adj.T).nnz == 0
    assert np.array_equal(g.neighbors[g.reverse], own)
    np.testing.assert_array_equal(g.bond_xi[g.reverse], -g.bond_xi)


def test_grid_char_length_reconstructs_spacing():
    for box, h in (([[0, 1], [0, 0.5]], 0.05), ([[0, 0.3], [0, 0.2], [0, 0.1]], 0.025)):
        nodes = generate_uniform_grid(box, h)
        np.testing.assert_allclose(nodes.cell_measure ** (1 / nodes.dimension), h, rtol=1e-15)
        np.testing.assert_array_equal(nodes.char_length, h)
        np.testing.assert_allclose(nodes.horizon_radius, 3.01 * h, rtol=1e-15)


def test_grid_empty_box():
    with pytest.raises(EmptyDomain):
        generate_uniform_grid([[0, 0.01], [0, 1]], 0.1)


def test_plate_generator_counts_and_measure():
    for (nt, nr), n in (((96, 32), 3072), ((128, 60), 7680)):
        nodes = generate_plate_with_hole(1.0, 0.1, nt, nr)
        assert nodes.n_nodes == n
        # cells tile the plate minus the hole
        assert nodes.cell_measure.sum() == pytest.approx(1.0 - np.pi * 0.01, rel=2e-3)
        r = np.hypot(*nodes.positions.T)
        assert r.min() > 0.1 and np.abs(nodes.positions).max() < 0.5
    # graded: several distinct horizon sizes
    assert nodes.horizon_radius.max() > 2 * nodes.horizon_radius.min()


def test_block_generator():
    nodes = generate_block_with_hole(1.0, 0.1, 0.3, 16, 6, 5)
    assert nodes.n_nodes == 16 * 6 * 5
    assert nodes.cell_measure.sum() == pytest.approx(0.3 * (1.0 - np.pi * 0.01), rel=2e-2)
    assert 0 < nodes.positions[:, 2].min() and nodes.positions[:, 2].max() < 0.3


def test_node_file_roundtrip(tmp_path):
    nodes = generate_plate_with_hole(1.0, 0.1, 128, 60)
    path = tmp_path / "plate.csv"
    write_nodes(path, nodes)
    back = load_nodes(path)
    assert back.n_nodes == 7680
    np.testing.assert_array_equal(back.positions, nodes.positions)
    np.testing.assert_array_equal(back.cell_measure, nodes.cell_measure)


def test_node_file_parsing(tmp_path):
    p = tmp_path / "n.csv"
    p.write_text("# header\n0, 0.0, 0.0, 1.0\n\n1,1.0,0.0,1.0  # trailing comment\n")
    nodes = load_nodes(p)
    assert nodes.n_nodes == 2 and nodes.dimension == 2
    p.write_text("0,0,0,0,1\n1,1,0,0,1\n")
    assert load_nodes(p).dimension == 3


@pytest.mark.parametrize("text,exc,line", [
    ("0,0,0,1\n1,1,0,-1\n", InvalidMeasure, None),
    ("0,0,0,1\n1,a,0,1\n", ParseError, 2),
    ("0,0,0,1\n1,0,0,0,1\n", ParseError, 2),
    ("0,0,1\n", ParseError, 1),
    ("0,nan,0,1\n", ParseError, 1),
    ("# nothing\n", EmptyDomain, None),
])
def test_node_file_errors(tmp_path, text, exc, line):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(exc) as info:
        load_nodes(p)
    if line is not None:
        assert info.value.line == line


def _bond_graph(p, q):
    nodes = NodeSet(np.array([p, q], float), np.ones(2), np.ones(2), np.full(2, 10.0))
    return nodes, build_families(nodes)


def test_precrack_transversal_bond_broken():
    nodes, g = _bond_graph([-1, 0.5], [1, 0.5])
    g2 = apply_precracks(g, nodes.positions, [CrackSegment([[0, 0], [0, 1]])])
    assert g2.broken.all()
    assert not g.broken.any()


def test_precrack_parallel_bond_intact():
    nodes, g = _bond_graph([0.5, 0.0], [0.5, 1.0])
    g2 = apply_precracks(g, nodes.positions, [CrackSegment([[0, 0], [0, 1]])])
    assert not g2.broken.any()


def test_precrack_grazing_tip_intact():
    nodes, g = _bond_graph([-1, 1.0], [1, 1.0])
    g2 = apply_precracks(g, nodes.positions, [CrackSegment([[0, 0], [0, 1]])])
    assert not g2.broken.any()


def test_precrack_3d_polygon():
    nodes = NodeSet(np.array([[0.5, 0.5, -1], [0.5, 0.5, 1], [2, 2, -1]], float), np.ones(3),
                    np.ones(3), np.full(3, 5.0))
    g = build_families(nodes)
    crack = CrackSegment([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
    mask = bonds_crossing(g, nodes.positions, crack)
    own = g.owner
    hit = {(int(own[b]), int(g.neighbors[b])) for b in np.flatnonzero(mask)}
    assert hit == {(0, 1), (1, 0)}


def test_kalthoff_precrack_count_matches_sweep():
    nodes = generate_uniform_grid([[0, 0.1], [0, 0.2]], 2.5e-3)
    g = build_families(nodes)
    cracks = [[[0, 0.075], [0.05, 0.075]], [[0, 0.125], [0.05, 0.125]]]
    g2 = apply_precracks(g, nodes.positions, [CrackSegment(c) for c in cracks])
    pos = nodes.positions
    own = g.owner
    expect = 0
    for b in np.flatnonzero(own < g.neighbors):
        p, q = pos[own[b]], pos[g.neighbors[b]]
        expect += any(segments_cross(p, q, np.array(a), np.array(c)) for a, c in cracks)
    assert expect > 0
    assert np.count_nonzero(g2.broken) == 2 * expect
    np.testing.assert_array_equal(g2.broken, g2.broken[g2.reverse])


def test_crack_segment_validation():
    with pytest.raises(ValueError):
        CrackSegment([[0, 0], [0, 0]])
    with pytest.raises(ValueError):
        CrackSegment([[0, 0, 0], [1, 0, 0], [2, 0, 0]])
