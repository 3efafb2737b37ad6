"""Built-in scenarios: plate with hole, block with hole, Kalthoff-Winkler.

``desk`` scale keeps the physics and coarsens the discretization so each run
finishes in minutes; ``paper`` scale uses the published resolutions.
"""

from __future__ import annotations

from .errors import UnknownPreset

PRESETS = ("plate2d", "block3d", "kalthoff")

HOLE_MATERIAL = {"youngs_modulus": 70e9, "poisson_ratio": 0.33}
HOLE_U0 = 5e-4

KW_MATERIAL = {
    "youngs_modulus": 190e9, "poisson_ratio": 0.25, "mass_density": 8000.0,
    "fracture_energy": 222170.0, "regime": "plane_strain",
}
KW_V0 = 16.5


def _hole_probe(z=None, name="hole_edge"):
    probe = {"name": name, "kind": "arc", "center": [0.0, 0.0], "radius": 0.1,
             "samples": 360, "quantities": ["u", "theta", "sed"]}
    if z is not None:
        probe["z"] = z
    return probe


def _plate(scale):
    n_theta, n_radial = (96, 32) if scale == "desk" else (128, 60)
    return {
        "scenario": {"name": "plate2d", "scale": scale},
        "geometry": {"plate_with_hole": {"length": 1.0, "radius": 0.1, "n_theta": n_theta,
                                         "n_radial": n_radial, "thickness": 1.0}},
        "material": dict(HOLE_MATERIAL, regime="plane_stress"),
        "model": {"name": "xosbpd", "m_factor": 3.01, "weight": "constant"},
        "solver": {"kind": "adr"},
        "adr": {"tol": 1e-5, "max_iter": 20000, "dt": 1.0, "safety_factor": 1.05},
        "loading": {"kind": "edge_displacement", "u0": HOLE_U0, "axis": 0, "profile": "linear"},
        "output": {"directory": "out/plate2d", "quantities": ["u", "theta", "sed"],
                   "probes": [_hole_probe()]},
    }


def _block(scale):
    # desk: ~10k nodes, odd layer count so one node layer sits on the mid-plane;
    # layers thin against the outer cells leave corner families too flat to correct
    n_theta, n_radial, n_depth = (48, 16, 13) if scale == "desk" else (128, 60, 23)
    return {
        "scenario": {"name": "block3d", "scale": scale},
        "geometry": {"block_with_hole": {"length": 1.0, "radius": 0.1, "depth": 0.3,
                                         "n_theta": n_theta, "n_radial": n_radial,
                                         "n_depth": n_depth}},
        "material": dict(HOLE_MATERIAL, regime="3d"),
        "model": {"name": "xosbpd", "m_factor": 3.01, "weight": "constant"},
        "solver": {"kind": "adr"},
        "adr": {"tol": 1e-5, "max_iter": 20000, "dt": 1.0, "safety_factor": 1.05},
        "loading": {"kind": "edge_displacement", "u0": HOLE_U0, "axis": 0, "profile": "linear"},
        "output": {"directory": "out/block3d", "quantities": ["u", "theta", "sed"],
                   "probes": [_hole_probe(z=0.15, name="hole_edge_mid"),
                              _hole_probe(z=0.3, name="hole_edge_top")]},
    }


def _kalthoff(scale):
    spacing, dt = (2.5e-3, 160e-9) if scale == "desk" else (1.25e-3, 80e-9)
    snap = int(round(24e-6 / dt))
    return {
        "scenario": {"name": "kalthoff", "scale": scale},
        "geometry": {"grid": {"box": [[0.0, 0.1], [0.0, 0.2]], "spacing": spacing,
                              "thickness": 1.0}},
        "material": dict(KW_MATERIAL),
        "model": {"name": "xosbpd", "m_factor": 3.01, "weight": "constant"},
        "solver": {"kind": "dynamic"},
        "dynamic": {"dt": dt, "t_end": 120e-6},
        "loading": {"kind": "impact", "segment": [[0.0, 0.075], [0.0, 0.125]],
                    "velocity": [KW_V0, 0.0]},
        "cracks": [{"points": [[0.0, 0.075], [0.05, 0.075]]},
                   {"points": [[0.0, 0.125], [0.05, 0.125]]}],
        "failure": {"enabled": True},
        "output": {"directory": "out/kalthoff", "cadence": snap,
                   "quantities": ["u", "v", "theta", "sed", "phi"],
                   "probes": [{"name": "impact_line", "kind": "line", "start": [0.0, 0.1],
                               "end": [0.1, 0.1], "samples": 41, "quantities": ["u", "phi"]}]},
    }


_BUILDERS = {"plate2d": _plate, "block3d": _block, "kalthoff": _kalthoff}


def preset_dict(name, scale="desk") -> dict:
    if name not in _BUILDERS:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    if scale not in ("desk", "paper"):
        raise ValueError(f"scale must be 'desk' or 'paper', got {scale!r}")
    data = _BUILDERS[name](scale)
    data["scenario"]["preset"] = name
    return data


def preset(name, scale="desk"):
    """Complete, validated RunConfig for a built-in scenario."""
    from .config import from_dict

    return from_dict(preset_dict(name, scale))
