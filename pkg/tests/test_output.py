import math
import warnings

import numpy as np
import pytest

from xosbpd.config import ProbeSection
from xosbpd.discretization import NodeSet, generate_uniform_grid
from xosbpd.output import (
    read_probe, read_snapshot, sample_probe, snapshot_fields, snapshot_title, write_probe,
    write_snapshot,
)
from xosbpd.presets import preset
from xosbpd.runner import run


def test_single_node_snapshot_format(tmp_path):
    nodes = NodeSet.from_measures(np.zeros((1, 3)), np.ones(1))
    path = write_snapshot(tmp_path, nodes, {"u": np.array([[1.0, 2.0, 0.0]])}, 7)
    assert path.name == "snapshot_00000007.vtk"
    lines = path.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[2:4] == ["ASCII", "DATASET UNSTRUCTURED_GRID"]
    assert lines[4:6] == ["POINTS 1 double", "0 0 0"]
    assert lines[6:10] == ["CELLS 1 2", "1 0", "CELL_TYPES 1", "1"]
    assert lines[10:13] == ["POINT_DATA 1", "VECTORS displacement double", "1 2 0"]


def test_snapshot_roundtrip(tmp_path, rng):
    nodes = generate_uniform_grid([[0, 1], [0, 0.5]], 0.1)
    n = nodes.n_nodes
    fields = {"u": rng.normal(size=(n, 2)), "v": rng.normal(size=(n, 2)),
              "theta": rng.normal(size=n), "sed": rng.random(n), "phi": rng.random(n)}
    path = write_snapshot(tmp_path, nodes, fields, 3, title="abc t=1.5e-06")
    points, arrays = read_snapshot(path)
    assert points.shape == (n, 3) and snapshot_title(path) == "abc t=1.5e-06"
    back = snapshot_fields(arrays, 2)
    assert set(back) == set(fields)
    for q, v in fields.items():
        # 9 significant digits
        np.testing.assert_allclose(back[q], v, rtol=1e-8, atol=0)
        assert back[q].shape == np.shape(v)
    # bit-exact against the printed precision
    printed = np.array([float(f"{x:.9g}") for x in fields["sed"]])
    np.testing.assert_array_equal(back["sed"], printed)


def test_snapshot_missing_quantity(tmp_path):
    nodes = generate_uniform_grid([[0, 1], [0, 1]], 0.5)
    with pytest.raises(ValueError, match="missing quantity 'phi'"):
        write_snapshot(tmp_path, nodes, {"u": np.zeros((4, 2))}, 0, ["u", "phi"])
    with pytest.raises(ValueError, match="values for"):
        write_snapshot(tmp_path, nodes, {"phi": np.zeros(3)}, 0)


def test_snapshot_io_error_has_path(tmp_path):
    nodes = generate_uniform_grid([[0, 1], [0, 1]], 0.5)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="snapshot_00000000.vtk"):
        write_snapshot(blocker / "sub", nodes, {"phi": np.zeros(4)}, 0)


def test_probe_warning_row_for_missing_node(tmp_path):
    nodes = generate_uniform_grid([[0, 1], [0, 1]], 0.1)
    # only the part of this line beyond the box has no node nearby
    probe = ProbeSection(name="edge", kind="line", start=[0.55, 0.55], end=[1.45, 0.55],
                         samples=4, quantities=["u", "phi"])
    with pytest.warns(UserWarning, match="2 sample"):
        samples = sample_probe(probe, nodes)
    fields = {"u": np.ones((nodes.n_nodes, 2)), "phi": np.zeros(nodes.n_nodes)}
    path = write_probe(tmp_path / "p.csv", probe, samples, nodes, fields,
                       {"run_id": "r", "model": "xosbpd", "step": 0, "time": 0})
    meta, header, rows = read_probe(path)
    assert meta == {"run_id": "r", "model": "xosbpd", "step": "0", "time": "0"}
    assert header == ["s", "node", "x", "y", "u_x", "u_y", "phi"]
    assert np.all(np.isfinite(rows[:2])) and np.all(np.isnan(rows[2:, 1:]))
    np.testing.assert_allclose(rows[:, 0], np.linspace(0, 0.9, 4))


def test_arc_probe_maps_to_nearest_nodes():
    nodes = generate_uniform_grid([[-1, 1], [-1, 1]], 0.1)
    probe = ProbeSection(name="ring", kind="arc", center=[0, 0], radius=0.5, samples=8)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        samples = sample_probe(probe, nodes)
    assert [s.label for s in samples] == [0, 45, 90, 135, 180, 225, 270, 315]
    for s in samples:
        d = np.linalg.norm(nodes.positions - s.point, axis=1)
        assert d[s.node] == d.min()


def test_plate_probe_symmetry(plate_run):
    result, out = plate_run
    assert result.report["converged"]
    meta, header, rows = read_probe(out / "probe_hole_edge.csv")
    assert meta["model"] == "xosbpd" and int(meta["step"]) == result.report["iterations"]
    col = {h: k for k, h in enumerate(header)}
    beta = rows[:, col["beta_deg"]]
    ux, uy = rows[:, col["u_x"]], rows[:, col["u_y"]]
    scale = np.nanmax(np.abs(rows[:, [col["u_x"], col["u_y"]]]))

    def at(b):
        return int(np.flatnonzero(beta == b)[0])

    assert ux[at(0)] > 0
    assert abs(ux[at(0)] + ux[at(180)]) <= 1e-6 * scale
    assert abs(uy[at(90)] + uy[at(270)]) <= 1e-6 * scale
    # the sample at 90 degrees sits on the nearest node, slightly off the vertical
    # axis: u_x is antisymmetric about that axis and small on it
    node = int(rows[at(90), col["node"]])
    pos = result.scenario.nodes.positions
    mirror = int(np.argmin(np.linalg.norm(pos - pos[node] * [-1, 1], axis=1)))
    assert np.linalg.norm(pos[mirror] - pos[node] * [-1, 1]) < 1e-9
    u = result.state.displacement
    assert abs(u[node, 0] + u[mirror, 0]) <= 1e-6 * scale
    assert abs(ux[at(90)]) <= 0.05 * scale


def test_plate_snapshot_complete(plate_run):
    result, out = plate_run
    snaps = sorted(out.glob("snapshot_*.vtk"))
    assert snaps
    points, arrays = read_snapshot(snaps[-1])
    n = result.scenario.nodes.n_nodes
    assert points.shape[0] == n
    assert {"displacement", "dilatation", "sed"} <= set(arrays)
    assert all(a.shape[0] == n for a in arrays.values())


def test_kalthoff_damage_near_cracks_at_24us(tmp_path):
    cfg = preset("kalthoff")
    cfg.dynamic.t_end = 24e-6
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = run(cfg, out_dir=tmp_path)
    snaps = sorted(tmp_path.glob("snapshot_*.vtk"))
    title = snapshot_title(snaps[-1])
    assert math.isclose(float(title.split("t=")[1]), 24e-6, rel_tol=1e-6)
    _, arrays = read_snapshot(snaps[-1])
    phi = arrays["damage"]
    pos = result.scenario.nodes.positions
    assert (phi > 0).any()
    reach = 2 * result.scenario.nodes.horizon_radius.max()
    for y in (0.075, 0.125):
        near = (pos[:, 0] <= 0.05 + reach) & (np.abs(pos[:, 1] - y) <= reach)
        assert (phi[near] > 0).any()
    far = np.ones(len(pos), bool)
    for y in (0.075, 0.125):
        far &= ~((pos[:, 0] <= 0.05 + reach) & (np.abs(pos[:, 1] - y) <= reach))
    assert np.all(phi[far] == 0)
