"""Reference models, mirroring, and the model definition file format.

Model files are JSON documents (schema in docs/model-format.md). JSON floats
round-trip decimally, so a saved model reloads to bitwise-identical
parameters.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from dynsyn.muscle import MuscleParams
from dynsyn.plant import Link, MuscleSpec, PlantModel, ViaPoint, muscle_lengths

__all__ = ["builtin_models", "make_model", "mirror_model", "load_model",
           "save_model", "model_to_dict", "model_from_dict", "neutral_pose"]

# Neutral poses used to define reference (slack-free) muscle lengths.
_NEUTRAL = {}


def neutral_pose(model: PlantModel) -> np.ndarray:
    """Mid-range configuration where every builtin muscle sits at l_norm = 1."""
    if model.name in _NEUTRAL:
        return np.array(_NEUTRAL[model.name])
    return 0.5 * (model.limit_lo + model.limit_hi)


def _with_reference_lengths(name, links, raw_muscles, gravity, q_ref):
    """Finish a model by measuring reference lengths at the neutral pose."""
    probe = PlantModel(name, links, [
        MuscleSpec(n, vps, MuscleParams(f_max=fm, l_opt=1.0, v_max=vm), l_ref=1.0)
        for n, vps, fm, vm in raw_muscles
    ], gravity)
    l_ref = muscle_lengths(probe, q_ref)
    muscles = [
        MuscleSpec(n, vps, MuscleParams(f_max=fm, l_opt=float(lr), v_max=vm),
                   l_ref=float(lr))
        for (n, vps, fm, vm), lr in zip(raw_muscles, l_ref)
    ]
    _NEUTRAL[name] = tuple(float(v) for v in q_ref)
    return PlantModel(name, links, muscles, gravity)


def _arm2x6_parts(side: float = 1.0, base=(0.0, 0.0), link_offset: int = 0,
                  tag: str = ""):
    """Links and muscle routings of the two-link, six-muscle desk arm.

    side=-1 mirrors the geometry across the x axis. The biarticular pair is
    routed with a clearly larger shoulder than elbow moment arm so its length
    signal is dominated by the shoulder joint.
    """
    s = side
    o = link_offset
    el_lo, el_hi = (0.1, 2.4) if s > 0 else (-2.4, -0.1)
    links = [
        Link(mass=0.40, length=0.16, com_offset=0.08, inertia=8.5e-4,
             damping=0.045, limit_lo=-1.2, limit_hi=1.2, parent=-1, base=base),
        Link(mass=0.30, length=0.15, com_offset=0.075, inertia=5.6e-4,
             damping=0.036, limit_lo=el_lo, limit_hi=el_hi, parent=o),
    ]
    w = lambda x, y: ViaPoint(-1, base[0] + x, base[1] + s * y)
    l1 = lambda x, y: ViaPoint(o, x, s * y)
    l2 = lambda x, y: ViaPoint(o + 1, x, s * y)
    # Shoulder pair: anchors straight above/below the pivot keep the moment
    # arm sign fixed over the whole +-1.2 rad range. Elbow extensor inserts
    # behind the pivot (olecranon style) so its arm stays negative up to full
    # flexion. Biarticular muscles run through a link-1 via-point, splitting
    # their length into a shoulder part (larger arm) and an elbow part.
    muscles = [
        (f"sh_flex{tag}", (w(0.0, 0.030), l1(0.070, 0.0)), 24.0, 10.0),
        (f"sh_ext{tag}", (w(0.0, -0.030), l1(0.070, 0.0)), 24.0, 10.0),
        (f"el_flex{tag}", (l1(0.1270, 0.0110), l2(0.048, 0.0)), 18.0, 10.0),
        (f"el_ext{tag}", (l1(0.1347, 0.0085), l2(-0.029, 0.0)), 18.0, 10.0),
        (f"bi_flex{tag}", (w(0.0, 0.035), l1(0.070, 0.0), l2(0.021, 0.0)), 16.0, 10.0),
        (f"bi_ext{tag}", (w(0.0, -0.035), l1(0.070, 0.0), l2(-0.021, 0.0)), 16.0, 10.0),
    ]
    q_ref = [0.0, s * 1.25]
    return links, muscles, q_ref


def _make_arm2x6() -> PlantModel:
    links, muscles, q_ref = _arm2x6_parts()
    return _with_reference_lengths("arm2x6", links, muscles, (0.0, 0.0), q_ref)


def _make_arm2x6_mirrored() -> PlantModel:
    """Two dynamically independent arm copies, the second mirrored in y."""
    links_a, mus_a, qref_a = _arm2x6_parts(side=1.0, base=(0.0, 0.0), link_offset=0,
                                           tag="_a")
    links_b, mus_b, qref_b = _arm2x6_parts(side=-1.0, base=(0.9, 0.0), link_offset=2,
                                           tag="_b")
    links = links_a + links_b
    muscles = mus_a + mus_b
    return _with_reference_lengths("arm2x6-mirrored", links, muscles, (0.0, 0.0),
                                   qref_a + qref_b)


def _make_pendulum1() -> PlantModel:
    """Single muscle-free gravity pendulum, for integrator validation."""
    links = [Link(mass=1.0, length=0.5, com_offset=0.25, inertia=1.0 / 48.0,
                  damping=0.0, limit_lo=-np.pi, limit_hi=np.pi)]
    model = PlantModel("pendulum1", links, [], gravity=(0.0, -9.81))
    _NEUTRAL["pendulum1"] = (0.0,)
    return model


_BUILDERS = {
    "arm2x6": _make_arm2x6,
    "arm2x6-mirrored": _make_arm2x6_mirrored,
    "pendulum1": _make_pendulum1,
}


def builtin_models() -> tuple[str, ...]:
    """Names of the bundled reference models."""
    return tuple(_BUILDERS)


def make_model(name: str) -> PlantModel:
    """Build a bundled model by name."""
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; available: {sorted(_BUILDERS)}") from None


def mirror_model(model: PlantModel, name: str | None = None) -> PlantModel:
    """Reflect a model across the x axis (negates y coordinates and limits)."""
    links = [
        Link(mass=l.mass, length=l.length, com_offset=l.com_offset,
             inertia=l.inertia, damping=l.damping,
             limit_lo=-l.limit_hi, limit_hi=-l.limit_lo,
             parent=l.parent, base=(l.base[0], -l.base[1]))
        for l in model.links
    ]
    muscles = [
        MuscleSpec(m.name, tuple(ViaPoint(vp.link, vp.x, -vp.y) for vp in m.via_points),
                   m.params, m.l_ref)
        for m in model.muscles
    ]
    gravity = (model.gravity[0], -model.gravity[1])
    return PlantModel(name or model.name + "-mirror", links, muscles, gravity)


# -- model file format -------------------------------------------------------

_FORMAT_VERSION = 1


def model_to_dict(model: PlantModel) -> dict:
    doc = {
        "format": "dynsyn-model",
        "version": _FORMAT_VERSION,
        "name": model.name,
        "gravity": list(map(float, model.gravity)),
        "links": [
            {"mass": l.mass, "length": l.length, "com_offset": l.com_offset,
             "inertia": l.inertia, "damping": l.damping,
             "limit_lo": l.limit_lo, "limit_hi": l.limit_hi,
             "parent": l.parent, "base": list(l.base)}
            for l in model.links
        ],
        "muscles": [
            {"name": m.name,
             "f_max": m.params.f_max, "l_opt": m.params.l_opt,
             "v_max": m.params.v_max, "tau_act": m.params.tau_act,
             "tau_deact": m.params.tau_deact, "l_ref": m.l_ref,
             "via_points": [{"link": vp.link, "x": vp.x, "y": vp.y}
                            for vp in m.via_points]}
            for m in model.muscles
        ],
    }
    if model.name in _NEUTRAL:
        doc["neutral_pose"] = list(_NEUTRAL[model.name])
    return doc


def model_from_dict(doc: dict) -> PlantModel:
    if doc.get("format") != "dynsyn-model":
        raise ValueError("not a dynsyn model document")
    if doc.get("version") != _FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')}")
    links = [
        Link(mass=d["mass"], length=d["length"], com_offset=d["com_offset"],
             inertia=d["inertia"], damping=d.get("damping", 0.0),
             limit_lo=d["limit_lo"], limit_hi=d["limit_hi"],
             parent=d.get("parent", -1), base=tuple(d.get("base", (0.0, 0.0))))
        for d in doc["links"]
    ]
    muscles = [
        MuscleSpec(
            d["name"],
            tuple(ViaPoint(v["link"], v["x"], v["y"]) for v in d["via_points"]),
            MuscleParams(f_max=d["f_max"], l_opt=d["l_opt"], v_max=d["v_max"],
                         tau_act=d.get("tau_act", 0.010),
                         tau_deact=d.get("tau_deact", 0.040)),
            l_ref=d["l_ref"],
        )
        for d in doc["muscles"]
    ]
    model = PlantModel(doc["name"], links, muscles, tuple(doc["gravity"]))
    if "neutral_pose" in doc:
        _NEUTRAL[model.name] = tuple(doc["neutral_pose"])
    return model


def save_model(model: PlantModel, path) -> None:
    """Write a model definition file (JSON, schema docs/model-format.md)."""
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def load_model(path) -> PlantModel:
    """Load a model definition file; raises ValueError on schema problems."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"model file {path}: invalid JSON ({exc})") from exc
    try:
        return model_from_dict(doc)
    except ValueError as exc:
        raise ValueError(f"model file {path}: {exc}") from exc
