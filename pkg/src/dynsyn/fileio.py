"""On-disk formats: trajectories, groupings, matrices, checkpoints, curves.

Formats are documented in docs/formats.md and docs/model-format.md. Binary
files carry magic strings and integrity checksums; JSON documents round-trip
floats decimally.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from dynsyn.synergy import GroupingResult, SelectionResult, TrajectoryBuffer

__all__ = [
    "save_trajectory",
    "load_trajectory",
    "save_grouping",
    "load_grouping",
    "grouping_digest",
    "save_matrix_csv",
    "load_matrix_csv",
    "save_checkpoint",
    "load_checkpoint",
    "write_curve_csv",
    "read_curve_csv",
    "sha256_file",
]

TRAJ_MAGIC = b"DYNSYNTRAJ1\x00"  # 12 bytes
_TRAJ_HEADER = struct.Struct("<12s4xQQd24x")  # 64 bytes total
CKPT_MAGIC = b"DYNSYNCKPT1\x00"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- trajectory buffers -------------------------------------------------------

def save_trajectory(buffer: TrajectoryBuffer, path) -> None:
    """64-byte header (magic, n_steps, n_muscles, dt) + column-major float64.

    A sidecar `<path>.meta.json` records the model name and seed.
    """
    path = Path(path)
    header = _TRAJ_HEADER.pack(TRAJ_MAGIC, buffer.n_steps, buffer.n_muscles,
                               buffer.dt)
    assert len(header) == 64
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asfortranarray(buffer.lengths).tobytes(order="F"))
    meta = {"model": buffer.model_name, "seed": buffer.seed,
            "n_steps": buffer.n_steps, "n_muscles": buffer.n_muscles,
            "dt": buffer.dt}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_trajectory(path) -> TrajectoryBuffer:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 64:
        raise ValueError(f"{path}: truncated trajectory file")
    magic, n_steps, n_muscles, dt = _TRAJ_HEADER.unpack(raw[:64])
    if magic != TRAJ_MAGIC:
        raise ValueError(f"{path}: not a trajectory file (bad magic)")
    expect = 64 + 8 * n_steps * n_muscles
    if len(raw) != expect:
        raise ValueError(f"{path}: size {len(raw)} != expected {expect}")
    data = np.frombuffer(raw, dtype="<f8", offset=64).reshape(
        (n_steps, n_muscles), order="F").copy()
    meta_path = Path(str(path) + ".meta.json")
    model_name, seed = "<unknown>", 0
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        model_name = meta.get("model", model_name)
        seed = meta.get("seed", 0)
    return TrajectoryBuffer(data, dt=dt, model_name=model_name, seed=seed)


# -- groupings ----------------------------------------------------------------

def grouping_digest(result: GroupingResult) -> str:
    """Stable hash of the partition, used to pin checkpoints to groupings."""
    doc = {"groups": [list(g) for g in result.groups],
           "medoids": list(result.medoids), "n_muscles": result.n_muscles}
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def save_grouping(result: GroupingResult, path, model: str = "",
                  selection: SelectionResult | None = None) -> None:
    doc = {
        "format": "dynsyn-grouping",
        "version": 1,
        "model": model,
        "seed": result.seed,
        "n_groups": result.n_groups,
        "groups": [list(g) for g in result.groups],
        "medoids": list(result.medoids),
        "n_muscles": result.n_muscles,
        "cost": result.cost,
        "digest": grouping_digest(result),
    }
    if selection is not None:
        doc["selection_table"] = selection.table
        doc["selection"] = {"n_groups": selection.n_groups,
                            "degenerate": selection.degenerate,
                            "threshold": selection.threshold}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_grouping(path) -> GroupingResult:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "dynsyn-grouping":
        raise ValueError(f"{path}: not a grouping document")
    result = GroupingResult(
        groups=tuple(tuple(g) for g in doc["groups"]),
        medoids=tuple(doc["medoids"]),
        seed=doc.get("seed", 0),
        n_muscles=doc["n_muscles"],
        cost=doc.get("cost", float("nan")),
    )
    digest = doc.get("digest")
    if digest and digest != grouping_digest(result):
        raise ValueError(f"{path}: grouping digest mismatch (file corrupted?)")
    return result


# -- matrices -----------------------------------------------------------------

def save_matrix_csv(matrix: np.ndarray, path, names=None) -> None:
    """Row-major CSV with a header row of column names."""
    matrix = np.asarray(matrix)
    n = matrix.shape[1]
    names = list(names) if names is not None else [f"m{i}" for i in range(n)]
    if len(names) != n:
        raise ValueError("name count does not match matrix width")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])


def load_matrix_csv(path) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0]
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    return data, names


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path, arrays: dict, meta: dict) -> None:
    """Versioned binary blob: JSON meta + named float64 arrays + sha256."""
    order = sorted(arrays)
    header = {
        "meta": meta,
        "arrays": [{"name": k, "shape": list(np.asarray(arrays[k]).shape)}
                   for k in order],
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    body = io.BytesIO()
    body.write(CKPT_MAGIC)
    body.write(struct.pack("<I", len(hbytes)))
    body.write(hbytes)
    for k in order:
        body.write(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())
    payload = body.getvalue()
    digest = hashlib.sha256(payload).digest()
    Path(path).write_bytes(payload + digest)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Returns (arrays, meta); raises ValueError on corruption."""
    raw = Path(path).read_bytes()
    if len(raw) < len(CKPT_MAGIC) + 4 + 32:
        raise ValueError(f"{path}: truncated checkpoint")
    payload, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise ValueError(f"{path}: checkpoint checksum mismatch")
    if not payload.startswith(CKPT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    off = len(CKPT_MAGIC)
    (hlen,) = struct.unpack_from("<I", payload, off)
    off += 4
    header = json.loads(payload[off:off + hlen].decode())
    off += hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=off)
        arrays[entry["name"]] = arr.reshape(shape).copy()
        off += 8 * count
    return arrays, header["meta"]


# -- learning curves ----------------------------------------------------------

CURVE_FIELDS = ("step", "mean_return", "std_return", "alpha", "clip_c")


def write_curve_csv(points, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_FIELDS)
        for p in points:
            writer.writerow([p.step, repr(p.mean_return), repr(p.std_return),
                             repr(p.alpha), repr(p.clip_c)])


def read_curve_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{"step": int(r["step"]), "mean_return": float(r["mean_return"]),
             "std_return": float(r["std_return"]), "alpha": float(r["alpha"]),
             "clip_c": float(r["clip_c"])} for r in rows]
