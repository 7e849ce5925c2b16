"""Scene configuration, builtin desk-scale scenes, trajectory files.

Configs are versioned JSON documents validated against a strict schema
(unknown fields are errors, never silently dropped).  A scenario bundles
the physical scene, the initial state (optionally pre-settled under zero
activation), per-frame loss specifications and solver settings.

Trajectory output is plain CSV (positions, activations, convergence
records) plus an OBJ sequence of the deformed surface; activations are
written with full precision so a solve can be replayed bit-exactly
through the forward-only command.
"""

import json
from dataclasses import dataclass, field

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from . import contact as C
from . import elastic as E
from . import mesh as M
from . import muscle as MU
from . import objectives as OBJ
from . import optimize as OPT
from . import sim as S
from .errors import ConfigError

SCHEMA_VERSION = 1

_VEC3 = {"type": "array", "items": {"type": "number"},
         "minItems": 3, "maxItems": 3}
_SELECTION = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "type": {"enum": ["all", "ids", "box", "surface"]},
        "ids": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "min": _VEC3,
        "max": _VEC3,
    },
    "required": ["type"],
}
_KEYFRAMES = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "keyframes": {
            "type": "array", "minItems": 1,
            "items": {"type": "array", "minItems": 2, "maxItems": 2},
        },
    },
    "required": ["keyframes"],
}
_VALUE = {"oneOf": [{"type": "number"}, _VEC3, _KEYFRAMES]}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "mesh", "material", "step"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "frames": {"type": "integer", "minimum": 0},
        "settle_frames": {"type": "integer", "minimum": 0},
        "mesh": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "generator": {"enum": ["single_tet", "bar", "i_beam"]},
                "edge": {"type": "number", "exclusiveMinimum": 0},
                "cells": {"type": "array", "items": {"type": "integer", "minimum": 1},
                          "minItems": 3, "maxItems": 3},
                "cell_size": {"type": "number", "exclusiveMinimum": 0},
                "base_height": {"type": "number"},
            },
        },
        "material": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mu": {"type": "number", "exclusiveMinimum": 0},
                "lam": {"type": "number", "minimum": 0},
                "alpha": {"type": "number", "minimum": 0},
                "beta": {"type": "number", "minimum": 0},
                "rho": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "barrier": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kappa": {"type": "number", "exclusiveMinimum": 0},
                "dhat": {"type": "number", "exclusiveMinimum": 0},
                "eps_v": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "gravity": _VEC3,
        "colliders": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["kind"],
                "properties": {
                    "kind": {"enum": ["halfspace", "sphere"]},
                    "normal": _VEC3,
                    "offset": {"type": "number"},
                    "center": _VEC3,
                    "radius": {"type": "number", "exclusiveMinimum": 0},
                    "friction": {"type": "number", "minimum": 0},
                },
            },
        },
        "muscles": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "width": {"type": "number", "exclusiveMinimum": 0},
                "cutoff": {"type": "number", "minimum": 0},
                "activation_scale": {"type": "number", "exclusiveMinimum": 0},
                "bounds": {"type": "array", "items": {"type": "number"},
                           "minItems": 2, "maxItems": 2},
                "fibers": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["points"],
                        "properties": {
                            "name": {"type": "string"},
                            "points": {"type": "array", "minItems": 2,
                                       "items": _VEC3},
                        },
                    },
                },
            },
        },
        "step": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "newton_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_newton": {"type": "integer", "minimum": 1},
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gd_iters": {"type": "integer", "minimum": 0},
                "newton_max": {"type": "integer", "minimum": 0},
                "gtol": {"type": "number", "exclusiveMinimum": 0},
                "ls_factor": {"type": "number", "exclusiveMinimum": 0,
                              "exclusiveMaximum": 1},
                "armijo": {"type": "number", "exclusiveMinimum": 0},
                "h": {"type": "number", "exclusiveMinimum": 0},
                "workers": {"type": "integer", "minimum": 1},
            },
        },
        "loss": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "frames": {
                        "oneOf": [
                            {"const": "all"},
                            {"type": "array", "items": {"type": "integer", "minimum": 0},
                             "minItems": 2, "maxItems": 2},
                        ],
                    },
                    "targets": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["kind", "weight"],
                            "properties": {
                                "kind": {"enum": list(OBJ.TARGET_KINDS)},
                                "weight": {"type": "number", "minimum": 0},
                                "selection": _SELECTION,
                                "elements": _SELECTION,
                                "value": _VALUE,
                                "axis": _VEC3,
                                "plane": {
                                    "type": "object",
                                    "additionalProperties": False,
                                    "required": ["normal"],
                                    "properties": {"point": _VEC3,
                                                   "normal": _VEC3},
                                },
                            },
                        },
                    },
                    "regularizers": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "energy_k": {"type": "number", "minimum": 0},
                            "energy_weight": {"type": "number", "minimum": 0},
                            "adot_max": {"type": "number", "exclusiveMinimum": 0},
                            "change_weight": {"type": "number", "minimum": 0},
                        },
                    },
                },
                "required": ["frames"],
            },
        },
    },
}


def validate_config(config):
    if jsonschema is None:
        raise ConfigError("jsonschema is required to validate configs")
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as err:
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config field {path}: {err.message}") from err


def _build_mesh(spec):
    if "path" in spec:
        return M.load_mesh(spec["path"])
    gen = spec.get("generator")
    if gen == "single_tet":
        return M.single_tet(edge=spec.get("edge", 0.2),
                            base_height=spec.get("base_height", 0.0))
    if gen == "bar":
        return M.bar(cells=tuple(spec.get("cells", (2, 2, 3))),
                     cell_size=spec.get("cell_size", 0.05),
                     base_height=spec.get("base_height", 0.0))
    if gen == "i_beam":
        return _i_beam(cell_size=spec.get("cell_size", 0.05),
                       base_height=spec.get("base_height", 0.0))
    raise ConfigError("mesh needs either a path or a generator")


def _i_beam(cell_size=0.05, base_height=0.0):
    """I-shaped pusher: wide foot and head slabs joined by a column."""
    mask = np.zeros((3, 1, 4), dtype=bool)
    mask[:, 0, 0] = True    # foot slab
    mask[1, 0, 1:3] = True  # column
    mask[:, 0, 3] = True    # head slab
    return _masked_cells(mask, cell_size, base_height)


def _masked_cells(mask, cell_size, base_height):
    nx, ny, nz = mask.shape
    ids = {}
    pos = []

    def vid(i, j, k):
        key = (i, j, k)
        if key not in ids:
            ids[key] = len(pos)
            pos.append([i * cell_size, j * cell_size, k * cell_size + base_height])
        return ids[key]

    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not mask[i, j, k]:
                    continue
                local = [vid(i + (c & 1), j + ((c >> 1) & 1), k + (c >> 2))
                         for c in range(8)]
                for t in M._KUHN:
                    tets.append([local[t[0]], local[t[1]], local[t[2]], local[t[3]]])
    pos = np.asarray(pos)
    pos[:, 0] -= (nx * cell_size) / 2.0
    pos[:, 1] -= (ny * cell_size) / 2.0
    return M.TetMesh(pos, np.asarray(tets))


def _resolve_selection(sel, mesh, kind="vertices"):
    if sel is None:
        raise ConfigError("target is missing its selection")
    stype = sel["type"]
    if kind == "vertices":
        if stype == "all":
            return np.arange(mesh.num_vertices)
        if stype == "surface":
            return mesh.surface_vertices.copy()
        if stype == "ids":
            ids = np.asarray(sel.get("ids", []), dtype=int)
            if ids.size == 0 or ids.min() < 0 or ids.max() >= mesh.num_vertices:
                raise ConfigError(f"vertex selection out of range: {sel}")
            return ids
        if stype == "box":
            lo, hi = np.asarray(sel["min"]), np.asarray(sel["max"])
            p = mesh.ref_positions
            ids = np.nonzero(np.all((p >= lo) & (p <= hi), axis=1))[0]
            if ids.size == 0:
                raise ConfigError(f"vertex box selection is empty: {sel}")
            return ids
    else:
        if stype == "all":
            return np.arange(mesh.num_tets)
        if stype == "ids":
            ids = np.asarray(sel.get("ids", []), dtype=int)
            if ids.size == 0 or ids.min() < 0 or ids.max() >= mesh.num_tets:
                raise ConfigError(f"element selection out of range: {sel}")
            return ids
        if stype == "box":
            lo, hi = np.asarray(sel["min"]), np.asarray(sel["max"])
            bc = mesh.barycenters()
            ids = np.nonzero(np.all((bc >= lo) & (bc <= hi), axis=1))[0]
            if ids.size == 0:
                raise ConfigError(f"element box selection is empty: {sel}")
            return ids
    raise ConfigError(f"selection type {stype!r} not valid for {kind}")


def _value_at(value, frame):
    """Constant or piecewise-linear keyframed target value."""
    if isinstance(value, dict):
        kf = sorted(value["keyframes"], key=lambda p: p[0])
        frames = np.array([p[0] for p in kf], dtype=float)
        vals = [np.asarray(p[1], dtype=float) for p in kf]
        if frame <= frames[0]:
            return vals[0]
        if frame >= frames[-1]:
            return vals[-1]
        i = int(np.searchsorted(frames, frame, side="right")) - 1
        w = (frame - frames[i]) / (frames[i + 1] - frames[i])
        return (1.0 - w) * vals[i] + w * vals[i + 1]
    return np.asarray(value, dtype=float) if not np.isscalar(value) else value


@dataclass
class Scenario:
    """A validated, fully resolved scene plus its solve settings."""

    name: str
    config: dict
    scene: S.SceneModel
    initial_state: E.SimState
    step_cfg: S.StepConfig
    opt_cfg: OPT.OptimizerConfig
    frames: int
    seed: int = 0
    activation_scale: float = 1.0
    loss_blocks: list = field(default_factory=list)

    def loss_spec(self, frame):
        """LossSpec for one frame from the schedule (later blocks win)."""
        chosen = None
        for block in self.loss_blocks:
            fr = block.get("frames", "all")
            if fr == "all" or (fr[0] <= frame <= fr[1]):
                chosen = block
        if chosen is None:
            raise ConfigError(f"no loss block covers frame {frame}")
        targets = []
        for tg in chosen.get("targets", []):
            kind = tg["kind"]
            ids = _resolve_selection(
                tg.get("elements") if kind == "elastic" else tg.get("selection"),
                self.scene.mesh,
                "elements" if kind == "elastic" else "vertices")
            targets.append(OBJ.Target(
                kind=kind, weight=tg["weight"], ids=ids,
                value=_value_at(tg.get("value", 0.0), frame),
                axis=None if tg.get("axis") is None else np.asarray(tg["axis"]),
                plane=tg.get("plane")))
        regs = chosen.get("regularizers", {})
        return OBJ.LossSpec(
            targets=targets,
            energy_k=regs.get("energy_k", 0.0),
            energy_weight=regs.get("energy_weight", 0.0),
            adot_max=regs.get("adot_max", np.inf),
            change_weight=regs.get("change_weight", 0.0))

    def frame_specs(self, frames=None):
        n = self.frames if frames is None else frames
        return [self.loss_spec(f) for f in range(n)]


def load_scenario(config, name=""):
    """Validate a config dict and build the scenario it describes."""
    validate_config(config)
    mesh = _build_mesh(config["mesh"])
    mat = E.MaterialParams(**config.get("material", {}))
    barrier = C.BarrierParams(**config.get("barrier", {}))
    colliders = []
    for c in config.get("colliders", []):
        if c["kind"] == "halfspace":
            colliders.append(C.HalfSpace(normal=tuple(c["normal"]),
                                         offset=c.get("offset", 0.0),
                                         friction=c.get("friction", 0.0)))
        else:
            colliders.append(C.Sphere(center=tuple(c["center"]),
                                      radius=c["radius"],
                                      friction=c.get("friction", 0.0)))
    muscles = None
    mcfg = config.get("muscles")
    bounds = None
    activation_scale = 1.0
    if mcfg and mcfg.get("fibers"):
        fibers = [MU.MuscleFiber(points=np.asarray(f["points"]),
                                 name=f.get("name", f"fiber{i}"))
                  for i, f in enumerate(mcfg["fibers"])]
        muscles = MU.precompute_weights(mesh, fibers,
                                        width=mcfg.get("width", 0.1),
                                        cutoff=mcfg.get("cutoff", 1e-4))
        if mcfg.get("bounds") is not None:
            bounds = tuple(mcfg["bounds"])
        activation_scale = mcfg.get("activation_scale", mat.mu / 100.0)
    scene = S.SceneModel(mesh=mesh, material=mat, barrier=barrier,
                         colliders=colliders,
                         gravity=np.asarray(config.get("gravity", (0, 0, 0)),
                                            dtype=float),
                         muscles=muscles)
    step_cfg = S.StepConfig(**config.get("step", {}))
    opt_kwargs = dict(config.get("optimizer", {}))
    opt_cfg = OPT.OptimizerConfig(bounds=bounds, **opt_kwargs)
    state = E.SimState(mesh.ref_positions.copy(),
                       np.zeros_like(mesh.ref_positions), 0)
    for _ in range(config.get("settle_frames", 0)):
        zero = np.zeros(scene.num_activations) if scene.muscles is not None else None
        result = S.step(scene, state, zero, step_cfg)
        state = E.SimState(result.x, result.v, 0)
    return Scenario(
        name=name or config.get("name", ""),
        config=config,
        scene=scene,
        initial_state=state,
        step_cfg=step_cfg,
        opt_cfg=opt_cfg,
        frames=config.get("frames", 1),
        seed=config.get("seed", 0),
        activation_scale=activation_scale,
        loss_blocks=config.get("loss", []))


# -- builtin scenes ------------------------------------------------------------

def _single_tet_config(segments=2):
    edge = 0.2
    cen = [0.0, 0.0, 0.0008 + edge * np.sqrt(2.0 / 3.0) / 4.0]
    span = 0.04
    axes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    fibers = []
    for f in range(max(1, segments // 2)):
        ax = np.asarray(axes[f % 3])
        pts = [list(cen - span * ax), list(cen), list(cen + span * ax)]
        fibers.append({"name": f"fiber_{'xyz'[f % 3]}", "points": pts})
    if segments % 2 == 1:
        ax = np.asarray(axes[(len(fibers)) % 3])
        fibers.append({"name": "fiber_odd",
                       "points": [list(cen - span * ax), list(cen)]})
    return {
        "schema": 1,
        "name": "single-tet-on-plane",
        "frames": 8,
        "settle_frames": 80,
        "mesh": {"generator": "single_tet", "edge": edge, "base_height": 0.0008},
        "material": {"mu": 1e4, "lam": 2e4, "alpha": 1.0, "beta": 1e-3,
                     "rho": 1000.0},
        "barrier": {"kappa": 1e4, "dhat": 1e-3, "eps_v": 1e-3},
        "gravity": [0.0, 0.0, -9.8],
        "colliders": [{"kind": "halfspace", "normal": [0.0, 0.0, 1.0],
                       "offset": 0.0, "friction": 0.4}],
        "muscles": {"width": 0.1, "activation_scale": 100.0, "fibers": fibers},
        "step": {"dt": 0.025, "newton_tol": 1e-10, "max_newton": 60},
        "optimizer": {"gd_iters": 10, "newton_max": 20, "gtol": 1e-14,
                      "workers": 1},
        "loss": [{
            "frames": "all",
            "targets": [{"kind": "velocity", "weight": 1.0,
                         "selection": {"type": "all"},
                         "value": [0.02, 0.0, 0.05]}],
            "regularizers": {"energy_k": 1e-10, "energy_weight": 1.0},
        }],
    }


def _bar_hop_config():
    cells = (2, 2, 3)
    size = 0.05
    base = 0.0008
    half = cells[2] * size / 2.0
    xs = [-0.03, 0.03]
    fibers = []
    for fx in xs:
        for fy in xs:
            fibers.append({
                "name": f"long_{fx:+.2f}_{fy:+.2f}",
                "points": [[fx, fy, base + 0.015], [fx, fy, base + 0.135]],
            })
    return {
        "schema": 1,
        "name": "bar-hop",
        "frames": 40,
        "settle_frames": 60,
        "mesh": {"generator": "bar", "cells": list(cells), "cell_size": size,
                 "base_height": base},
        "material": {"mu": 5e4, "lam": 1e5, "alpha": 1.0, "beta": 2e-3,
                     "rho": 1000.0},
        "barrier": {"kappa": 1e4, "dhat": 1e-3, "eps_v": 1e-3},
        "gravity": [0.0, 0.0, -9.8],
        "colliders": [{"kind": "halfspace", "normal": [0.0, 0.0, 1.0],
                       "offset": 0.0, "friction": 0.5}],
        "muscles": {"width": 0.06, "activation_scale": 500.0, "fibers": fibers},
        "step": {"dt": 0.025, "newton_tol": 1e-10, "max_newton": 60},
        "optimizer": {"gd_iters": 10, "newton_max": 20, "gtol": 1e-14,
                      "workers": 1},
        "loss": [
            {"frames": "all",
             "targets": [{"kind": "velocity", "weight": 1.0,
                          "selection": {"type": "all"},
                          "value": [0.0, 0.0, 0.0]}],
             "regularizers": {"energy_k": 1e-18, "energy_weight": 1.0}},
            {"frames": [0, 19],
             "targets": [{"kind": "velocity", "weight": 1.0,
                          "selection": {"type": "all"},
                          "value": {"keyframes": [[0, [0.0, 0.0, 0.05]],
                                                   [12, [0.0, 0.0, 0.25]],
                                                   [19, [0.0, 0.0, 0.1]]]}}],
             "regularizers": {"energy_k": 1e-18, "energy_weight": 1.0}},
        ],
    }


def _caterpillar_config():
    cells = (6, 1, 1)
    size = 0.04
    base = 0.0008
    lx = cells[0] * size
    x0, x1 = -lx / 2.0 + 0.02, lx / 2.0 - 0.02
    fibers = []
    for (y, z) in [(-0.008, 0.012), (0.008, 0.012), (-0.008, 0.028), (0.008, 0.028)]:
        fibers.append({"name": f"long_{y:+.3f}_{z:.3f}",
                       "points": [[x0, y, base + z], [x1, y, base + z]]})
    for i in range(7):
        x = x0 + (x1 - x0) * i / 6.0
        fibers.append({"name": f"ring_{i}",
                       "points": [[x, -0.012, base + 0.02], [x, 0.012, base + 0.02]]})
    return {
        "schema": 1,
        "name": "caterpillar-lite",
        "frames": 30,
        "settle_frames": 60,
        "mesh": {"generator": "bar", "cells": list(cells), "cell_size": size,
                 "base_height": base},
        "material": {"mu": 3e4, "lam": 6e4, "alpha": 1.5, "beta": 2e-3,
                     "rho": 1000.0},
        "barrier": {"kappa": 1e4, "dhat": 1e-3, "eps_v": 1e-3},
        "gravity": [0.0, 0.0, -9.8],
        "colliders": [{"kind": "halfspace", "normal": [0.0, 0.0, 1.0],
                       "offset": 0.0, "friction": 0.6}],
        "muscles": {"width": 0.05, "activation_scale": 300.0, "fibers": fibers},
        "step": {"dt": 0.025, "newton_tol": 1e-10, "max_newton": 60},
        "optimizer": {"gd_iters": 10, "newton_max": 15, "gtol": 1e-14,
                      "workers": 1},
        "loss": [{
            "frames": "all",
            "targets": [{"kind": "velocity", "weight": 1.0,
                         "selection": {"type": "all"},
                         "value": [0.02, 0.0, 0.0]}],
            "regularizers": {"energy_k": 1e-12, "energy_weight": 1.0},
        }],
    }


def _basket_push_config():
    return {
        "schema": 1,
        "name": "basket-push",
        "frames": 30,
        "settle_frames": 60,
        "mesh": {"generator": "i_beam", "cell_size": 0.05, "base_height": 0.0008},
        "material": {"mu": 4e4, "lam": 8e4, "alpha": 1.2, "beta": 2e-3,
                     "rho": 1000.0},
        "barrier": {"kappa": 1e4, "dhat": 1e-3, "eps_v": 1e-3},
        "gravity": [0.0, 0.0, -9.8],
        "colliders": [{"kind": "halfspace", "normal": [0.0, 0.0, 1.0],
                       "offset": 0.0, "friction": 0.5}],
        "muscles": {"width": 0.07, "activation_scale": 400.0, "fibers": [
            {"name": "col_front", "points": [[0.01, 0.0, 0.06], [0.01, 0.0, 0.15]]},
            {"name": "col_back", "points": [[-0.01, 0.0, 0.06], [-0.01, 0.0, 0.15]]},
            {"name": "head", "points": [[-0.05, 0.0, 0.178], [0.05, 0.0, 0.178]]},
            {"name": "foot", "points": [[-0.05, 0.0, 0.022], [0.05, 0.0, 0.022]]},
        ]},
        "step": {"dt": 0.025, "newton_tol": 1e-10, "max_newton": 60},
        "optimizer": {"gd_iters": 10, "newton_max": 15, "gtol": 1e-14,
                      "workers": 1},
        "loss": [{
            "frames": "all",
            "targets": [{"kind": "position", "weight": 50.0,
                         "selection": {"type": "all"},
                         "value": {"keyframes": [
                             [0, [0.0, 0.0, 0.10]],
                             [15, [0.02, 0.0, 0.10]],
                             [29, [-0.01, 0.0, 0.10]]]}}],
            "regularizers": {"energy_k": 1e-12, "energy_weight": 1.0},
        }],
    }


_BUILTINS = {
    "single-tet-on-plane": _single_tet_config,
    "bar-hop": _bar_hop_config,
    "caterpillar-lite": _caterpillar_config,
    "basket-push": _basket_push_config,
}


def builtin_names():
    return sorted(_BUILTINS)


def builtin_config(name, **kwargs):
    try:
        maker = _BUILTINS[name]
    except KeyError:
        raise ConfigError(
            f"unknown scene {name!r}; available: {', '.join(builtin_names())}")
    return maker(**kwargs)


def builtin_scenario(name, **kwargs):
    return load_scenario(builtin_config(name, **kwargs), name=name)


def load_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} line {err.lineno}: {err.msg}")


# -- trajectory files ----------------------------------------------------------

def write_positions(path, positions):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame,vertex,x,y,z\n")
        for f, x in enumerate(positions):
            for v, p in enumerate(x):
                fh.write(f"{f},{v},{p[0]:.17g},{p[1]:.17g},{p[2]:.17g}\n")


def read_positions(path):
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    data = np.atleast_2d(data)
    frames = int(data[:, 0].max()) + 1
    verts = int(data[:, 1].max()) + 1
    out = np.zeros((frames, verts, 3))
    out[data[:, 0].astype(int), data[:, 1].astype(int)] = data[:, 2:5]
    return out


def write_activations(path, activations):
    m = len(activations[0]) if len(activations) else 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame," + ",".join(f"a{k}" for k in range(m)) + "\n")
        for f, a in enumerate(activations):
            fh.write(str(f) + "," + ",".join(f"{v:.17g}" for v in a) + "\n")


def read_activations(path):
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    data = np.atleast_2d(data)
    return data[:, 1:]


def write_convergence(path, reports):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame,phase,iteration,loss,step,grad_norm\n")
        for f, rep in enumerate(reports):
            for (phase, it, loss, step, gnorm) in rep.history:
                fh.write(f"{f},{phase},{it},{loss:.17g},{step:.17g},{gnorm:.17g}\n")


def write_report_summary(path, reports, min_distance):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame,newton_iterations,hessian_seconds,final_grad_norm,"
                 "min_distance\n")
        for f, rep in enumerate(reports):
            fh.write(f"{f},{rep.newton_iterations},{rep.hessian_seconds:.6g},"
                     f"{rep.final_grad_norm:.6g},{rep.min_distance:.6g}\n")
        fh.write(f"# overall_min_distance,{min_distance:.6g}\n")


def export_obj_sequence(out_dir, mesh, positions, prefix="frame"):
    """One OBJ per frame, surface only, deterministic ordering."""
    import os
    paths = []
    for f, x in enumerate(positions):
        path = os.path.join(out_dir, f"{prefix}_{f:05d}.obj")
        with open(path, "w", encoding="utf-8") as fh:
            for p in x:
                fh.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
            for tri in mesh.surface_tris:
                fh.write(f"f {tri[0] + 1} {tri[1] + 1} {tri[2] + 1}\n")
        paths.append(path)
    return paths
