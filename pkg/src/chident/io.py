"""Serialization: binary field containers, CSV plot data, JSON reports.

Containers are self-describing little-endian binary files (magic,
version, dimensions, 64-bit floats) accompanied by a text manifest.
CSV floats use the shortest decimal representation that round-trips, so
identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .meshbasis import build_mesh, cubic_spline_basis, quadratic_fe
from .forward import Trajectory
from .data import ObservationData

__all__ = [
    "IOError_",
    "MAGIC",
    "CONTAINER_VERSION",
    "save_trajectory",
    "load_trajectory",
    "save_observation",
    "load_observation",
    "fmt_float",
    "write_csv",
    "diagnostics_csv",
    "solution_csv",
    "lcurve_csv",
    "parameter_csv",
    "write_json_report",
]


class IOError_(RuntimeError):
    """Container or manifest is malformed or inconsistent."""


MAGIC = b"CHID"
CONTAINER_VERSION = 1
_KIND_TRAJECTORY = 1
_KIND_OBSERVATION = 2
_BASIS_CODES = {"quadratic-fe": 1, "periodic-cubic-spline": 2}
_BASIS_NAMES = {v: k for k, v in _BASIS_CODES.items()}


def _pack_header(kind, n_cells, basis_code, n_states, dof, scalars):
    head = struct.pack(
        "<4sIIIIII", MAGIC, CONTAINER_VERSION, kind, n_cells, basis_code,
        n_states, dof,
    )
    head += struct.pack("<I", len(scalars))
    head += struct.pack(f"<{len(scalars)}d", *scalars)
    return head


def _read_header(buf):
    base = struct.calcsize("<4sIIIIII")
    magic, version, kind, n_cells, basis_code, n_states, dof = struct.unpack(
        "<4sIIIIII", buf[:base]
    )
    if magic != MAGIC:
        raise IOError_(f"bad magic {magic!r}; not a field container")
    if version != CONTAINER_VERSION:
        raise IOError_(f"unsupported container version {version}")
    (n_scalars,) = struct.unpack("<I", buf[base:base + 4])
    off = base + 4
    scalars = struct.unpack(f"<{n_scalars}d", buf[off:off + 8 * n_scalars])
    off += 8 * n_scalars
    return kind, n_cells, basis_code, n_states, dof, scalars, off


def _payload(arrays):
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


def _write_manifest(path: Path, fields: dict):
    lines = [f"{k} = {v}" for k, v in fields.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_trajectory(traj: Trajectory, path) -> Path:
    """Write a trajectory container plus its text manifest."""
    path = Path(path)
    n_cells = traj.basis.mesh.n_cells
    code = _BASIS_CODES[traj.basis.kind]
    body = _payload([traj.times, traj.phi, traj.mu])
    head = _pack_header(
        _KIND_TRAJECTORY, n_cells, code, traj.n_states, traj.basis.dof_count,
        [traj.tau],
    )
    path.write_bytes(head + body)
    _write_manifest(path.with_suffix(path.suffix + ".manifest"), {
        "container": "trajectory",
        "version": CONTAINER_VERSION,
        "n_cells": n_cells,
        "basis": traj.basis.kind,
        "n_states": traj.n_states,
        "dof": traj.basis.dof_count,
        "tau": fmt_float(traj.tau),
        "t_end": fmt_float(float(traj.times[-1])),
        "payload_sha256": hashlib.sha256(body).hexdigest(),
    })
    return path


def load_trajectory(path) -> Trajectory:
    buf = Path(path).read_bytes()
    kind, n_cells, basis_code, n_states, dof, scalars, off = _read_header(buf)
    if kind != _KIND_TRAJECTORY:
        raise IOError_(f"container at {path} is not a trajectory (kind {kind})")
    if _BASIS_NAMES.get(basis_code) != "quadratic-fe":
        raise IOError_(f"trajectory container has basis code {basis_code}")
    basis = quadratic_fe(build_mesh(int(n_cells)))
    if basis.dof_count != dof:
        raise IOError_(f"dof mismatch: header {dof}, basis {basis.dof_count}")
    need = n_states * (1 + 2 * dof) * 8
    if len(buf) - off != need:
        raise IOError_(f"payload length {len(buf) - off}, expected {need}")
    data = np.frombuffer(buf, dtype="<f8", offset=off)
    times = data[:n_states].copy()
    phi = data[n_states:n_states * (1 + dof)].reshape(n_states, dof).copy()
    mu = data[n_states * (1 + dof):].reshape(n_states, dof).copy()
    return Trajectory(basis=basis, tau=float(scalars[0]), times=times,
                      phi=phi, mu=mu)


def save_observation(data: ObservationData, path) -> Path:
    path = Path(path)
    n_cells = data.basis.mesh.n_cells
    code = _BASIS_CODES[data.basis.kind]
    body = _payload([data.times, data.coef])
    head = _pack_header(
        _KIND_OBSERVATION, n_cells, code, data.n_times, data.basis.dof_count,
        [data.tau_data, data.delta, data.interp_sup, data.interp_l2],
    )
    path.write_bytes(head + body)
    _write_manifest(path.with_suffix(path.suffix + ".manifest"), {
        "container": "observation",
        "version": CONTAINER_VERSION,
        "n_cells": n_cells,
        "basis": data.basis.kind,
        "n_states": data.n_times,
        "dof": data.basis.dof_count,
        "tau_data": fmt_float(data.tau_data),
        "t_end": fmt_float(float(data.times[-1])),
        "delta": fmt_float(data.delta),
        "provenance": data.provenance,
        "interp_sup": fmt_float(data.interp_sup),
        "interp_l2": fmt_float(data.interp_l2),
        "payload_sha256": hashlib.sha256(body).hexdigest(),
    })
    return path


def load_observation(path) -> ObservationData:
    path = Path(path)
    buf = path.read_bytes()
    kind, n_cells, basis_code, n_states, dof, scalars, off = _read_header(buf)
    if kind != _KIND_OBSERVATION:
        raise IOError_(f"container at {path} is not an observation (kind {kind})")
    if _BASIS_NAMES.get(basis_code) != "periodic-cubic-spline":
        raise IOError_(f"observation container has basis code {basis_code}")
    basis = cubic_spline_basis(build_mesh(int(n_cells)))
    need = n_states * (1 + dof) * 8
    if len(buf) - off != need:
        raise IOError_(f"payload length {len(buf) - off}, expected {need}")
    raw = np.frombuffer(buf, dtype="<f8", offset=off)
    times = raw[:n_states].copy()
    coef = raw[n_states:].reshape(n_states, dof).copy()
    provenance = "interpolation-only"
    manifest = path.with_suffix(path.suffix + ".manifest")
    if manifest.exists():
        for line in manifest.read_text(encoding="utf-8").splitlines():
            if line.startswith("provenance = "):
                provenance = line.partition(" = ")[2].strip()
    return ObservationData(
        basis=basis, times=times, coef=coef, tau_data=float(scalars[0]),
        delta=float(scalars[1]), provenance=provenance,
        interp_sup=float(scalars[2]), interp_l2=float(scalars[3]),
    )


# ---------------------------------------------------------------------------
# CSV emission

def fmt_float(v) -> str:
    """Shortest decimal string that round-trips to the same float."""
    v = float(v)
    if np.isnan(v):
        return "nan"
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return fmt_float(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def diagnostics_csv(report, path) -> Path:
    """Level-set diagnostics table: one row per sampled (t, s)."""
    rows = [
        (r.t, r.s, r.A_b, r.A_c, r.A, r.cond, r.in_attained, r.in_observable)
        for r in report.rows
    ]
    return write_csv(path, ("t", "s", "A_b", "A_c", "A", "cond", "in_R", "in_Rtilde"),
                     rows)


def solution_csv(path, s_grid, truth, reconstruction, mask) -> Path:
    """Reconstruction plot data on a level grid, with range mask."""
    rows = zip(s_grid, truth, reconstruction, mask)
    return write_csv(path, ("s", "truth", "reconstruction", "mask"), rows)


def lcurve_csv(curve, path) -> Path:
    rows = [
        (a, r, s, c, f, i == curve.corner_index)
        for i, (a, r, s, c, f) in enumerate(zip(
            curve.alphas, curve.residual_norms, curve.solution_norms,
            curve.curvature, curve.flagged,
        ))
    ]
    return write_csv(
        path,
        ("alpha", "residual_norm", "solution_norm", "curvature", "flagged", "corner"),
        rows,
    )


def parameter_csv(path, knots, values) -> Path:
    return write_csv(path, ("knot", "value"), zip(knots, values))


def _jsonable(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v).__name__} in a report")


def write_json_report(path, payload: dict) -> Path:
    path = Path(path)
    text = json.dumps(payload, sort_keys=True, indent=2, allow_nan=True,
                      default=_jsonable)
    path.write_text(text + "\n", encoding="utf-8")
    return path
