import warnings

import pytest
from hypothesis import given
from hypothesis import strategies as st

from xosbpd.config import from_dict, load_config, loads, serialize
from xosbpd.errors import UnknownPreset, ValidationError
from xosbpd.presets import PRESETS, preset, preset_dict

MINIMAL_GRID = {
    "geometry": {"grid": {"box": [[0, 1], [0, 1]], "spacing": 0.1}},
    "material": {"youngs_modulus": 1e9, "poisson_ratio": 0.25},
}


def errors_of(data):
    with pytest.raises(ValidationError) as info:
        from_dict(data)
    return info.value.errors


def test_minimal_preset_config():
    cfg = loads('[scenario]\npreset = "plate2d"\n')
    assert cfg.material.youngs_modulus == 70e9
    assert cfg.material.poisson_ratio == 0.33
    assert cfg.loading.u0 == 5e-4
    assert cfg.material.regime == "plane_stress"
    assert cfg.geometry.params["length"] == 1.0 and cfg.geometry.params["radius"] == 0.1


def test_preset_override_key_by_key():
    cfg = loads('[scenario]\npreset = "plate2d"\n[material]\npoisson_ratio = 0.3\n'
                '[model]\nname = "osbpd"\n')
    assert cfg.material.poisson_ratio == 0.3 and cfg.material.youngs_modulus == 70e9
    assert cfg.model.name == "osbpd" and cfg.model.m_factor == 3.01


def test_defaults():
    cfg = from_dict(MINIMAL_GRID)
    assert cfg.model.m_factor == 3.01
    assert cfg.model.name == "xosbpd"
    assert cfg.adr.tol == 1e-5 and cfg.adr.safety_factor == 1.05 and cfg.adr.dt == 1.0
    assert cfg.dimension == 2


def test_grid_and_file_together_rejected():
    data = dict(MINIMAL_GRID, geometry={"grid": {"box": [[0, 1], [0, 1]], "spacing": 0.1},
                                        "file": {"path": "nodes.csv"}})
    assert any("exactly one source" in e for e in errors_of(data))


def test_every_violation_listed():
    errs = errors_of({
        "geometry": {"grid": {"box": [[0, 1], [0, 1]], "spacing": -0.1}},
        "material": {"youngs_modulus": -1.0, "poisson_ratio": 0.7},
        "model": {"name": "nosb", "colour": 1},
    })
    joined = "\n".join(errs)
    for needle in ("spacing", "youngs_modulus", "poisson_ratio", "model.name", "'colour'"):
        assert needle in joined
    assert len(errs) >= 5


@pytest.mark.parametrize("data,needle", [
    ({"scenario": {"preset": "nope"}}, "unknown preset"),
    (dict(MINIMAL_GRID, extra={}), "unknown section"),
    ({"material": {"youngs_modulus": 1.0, "poisson_ratio": 0.2}}, "[geometry]"),
    ({"geometry": MINIMAL_GRID["geometry"]}, "[material]"),
    (dict(MINIMAL_GRID, material={"youngs_modulus": "1e9", "poisson_ratio": 0.2}),
     "expected float"),
    (dict(MINIMAL_GRID, material={"youngs_modulus": 1e9, "poisson_ratio": 0.2,
                                  "regime": "3d"}), "does not match"),
    (dict(MINIMAL_GRID, solver={"kind": "dynamic"}, dynamic={"dt": 1e-6}), "t_end"),
])
def test_invalid_configs(data, needle):
    assert any(needle in e for e in errors_of(data))


def test_unknown_preset_api():
    with pytest.raises(UnknownPreset):
        preset("kalthof")
    with pytest.raises(ValueError):
        preset_dict("plate2d", "huge")


def test_toml_syntax_and_missing_file(tmp_path):
    with pytest.raises(ValidationError, match="TOML syntax"):
        loads("[material\n")
    with pytest.raises(ValidationError):
        load_config(tmp_path / "missing.toml")


def test_kalthoff_preset_values():
    cfg = preset("kalthoff", "paper")
    m = cfg.material
    assert (m.youngs_modulus, m.poisson_ratio, m.mass_density) == (190e9, 0.25, 8000.0)
    assert m.fracture_energy == 222170.0 and m.regime == "plane_strain"
    assert cfg.loading.velocity == [16.5, 0.0]
    assert cfg.dynamic.dt == 80e-9
    assert cfg.geometry.params["spacing"] == 1.25e-3
    assert cfg.geometry.params["box"] == [[0.0, 0.1], [0.0, 0.2]]
    assert [c.points for c in cfg.cracks] == [[[0.0, 0.075], [0.05, 0.075]],
                                             [[0.0, 0.125], [0.05, 0.125]]]
    assert cfg.output.cadence * cfg.dynamic.dt == pytest.approx(24e-6)
    assert cfg.failure.enabled


def test_hole_presets_geometry():
    plate = preset("plate2d", "paper")
    assert plate.geometry.params["n_theta"] * plate.geometry.params["n_radial"] == 7680
    block = preset("block3d", "paper")
    assert block.geometry.params["depth"] == 0.3 and block.material.regime == "3d"
    assert {p.z for p in block.output.probes} == {0.15, 0.3}


@pytest.mark.parametrize("name", PRESETS)
@pytest.mark.parametrize("scale", ["desk", "paper"])
def test_preset_roundtrip(name, scale):
    cfg = preset(name, scale)
    text = serialize(cfg)
    again = loads(text)
    cfg.scenario.preset = None
    assert again == cfg
    assert serialize(again) == text


@given(
    st.floats(1e6, 1e12), st.floats(-0.9, 0.49), st.sampled_from(["xosbpd", "osbpd", "lbbpd"]),
    st.floats(2.0, 4.0), st.sampled_from(["constant", "inverse"]),
    st.floats(1e-9, 1e-2), st.integers(1, 50000), st.booleans(),
)
def test_roundtrip_idempotent(E, nu, model, m, weight, tol, max_iter, snaps):
    data = {
        "scenario": {"name": "rt"},
        "geometry": {"grid": {"box": [[0, 1], [0, 0.5]], "spacing": 0.05}},
        "material": {"youngs_modulus": E, "poisson_ratio": nu},
        "model": {"name": model, "m_factor": m, "weight": weight},
        "adr": {"tol": tol, "max_iter": max_iter},
        "output": {"snapshots": snaps, "probes": [
            {"name": "p", "kind": "point", "position": [0.5, 0.25]}]},
    }
    cfg = from_dict(data)
    text = serialize(cfg)
    assert loads(text) == cfg
    assert serialize(loads(text)) == text


def test_failure_under_adr_warns():
    data = dict(MINIMAL_GRID, failure={"enabled": True, "critical_stretch": 0.01})
    with pytest.warns(UserWarning, match="ignored"):
        from_dict(data)


def test_plane_stress_failure_needs_explicit_stretch():
    data = {
        "geometry": MINIMAL_GRID["geometry"],
        "material": {"youngs_modulus": 1e9, "poisson_ratio": 0.25, "regime": "plane_stress",
                     "fracture_energy": 100.0},
        "solver": {"kind": "dynamic"}, "dynamic": {"dt": 1e-7, "n_steps": 10},
        "failure": {"enabled": True},
    }
    assert any("critical stretch" in e for e in errors_of(data))
    data["failure"]["critical_stretch"] = 0.01
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert from_dict(data).failure.critical_stretch == 0.01


def test_probe_outside_domain_rejected():
    data = dict(MINIMAL_GRID, output={"probes": [
        {"name": "far", "kind": "line", "start": [0.5, 0.5], "end": [1.5, 0.5], "samples": 11}]})
    errs = errors_of(data)
    assert any("5 of 11 sample(s) lie outside the domain" in e for e in errs)


def test_probe_validation():
    errs = errors_of(dict(MINIMAL_GRID, output={"probes": [
        {"name": "a", "kind": "arc", "center": [0.5, 0.5]},
        {"name": "a", "kind": "spiral"},
        {"name": "b", "kind": "point", "position": [0.5], "quantities": ["stress"]}]}))
    joined = "\n".join(errs)
    for needle in ("center and radius", "duplicate probe name", "kind must be", "2 numbers",
                   "'stress'"):
        assert needle in joined
