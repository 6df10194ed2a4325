"""Field snapshot binary format and trajectory persistence.

A snapshot file holds one field: magic bytes "CGW1", little-endian u32 nx,
u32 ny, then nx*ny little-endian 64-bit floats, row-major over cell centers.

A persisted trajectory is a directory of snapshots (phi/w/v at a configurable
node stride, the final node always included) plus a plain-text index file
recording node count, stride and tau.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

MAGIC = b"CGW1"
INDEX_NAME = "index.txt"
_HEADER = struct.Struct("<4sII")


def write_field(path: str, values: np.ndarray) -> None:
    values = np.asarray(values, dtype="<f8")
    if values.ndim != 2:
        raise FormatError(f"snapshot fields are 2-D, got shape {values.shape}")
    ny, nx = values.shape
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, nx, ny))
        fh.write(np.ascontiguousarray(values).tobytes())
    os.replace(tmp, path)


def read_field(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, nx, ny = _HEADER.unpack(header)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        payload = fh.read(8 * nx * ny + 1)
    if len(payload) != 8 * nx * ny:
        raise FormatError(f"{path}: payload holds {len(payload)} bytes, "
                          f"expected {8 * nx * ny}")
    values = np.frombuffer(payload, dtype="<f8").reshape(ny, nx).astype(float)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite entries")
    return values


def _stored_nodes(nt: int, stride: int) -> list[int]:
    nodes = list(range(0, nt + 1, stride))
    if nodes[-1] != nt:
        nodes.append(nt)
    return nodes


@dataclass
class LoadedTrajectory:
    """Exactly the stored nodes of a persisted trajectory."""

    nodes: list[int]
    tau: float
    phi: np.ndarray
    w: np.ndarray
    v: np.ndarray


def persist_trajectory(traj, directory: str, stride: int = 1) -> list[int]:
    """Write phi/w/v snapshots at the given node stride plus an index file."""
    if stride < 1:
        raise FormatError(f"stride must be >= 1, got {stride}")
    os.makedirs(directory, exist_ok=True)
    nt = traj.phi.shape[0] - 1
    nodes = _stored_nodes(nt, stride)
    for n in nodes:
        write_field(os.path.join(directory, f"phi_{n:06d}.cgw"), traj.phi[n])
        write_field(os.path.join(directory, f"w_{n:06d}.cgw"), traj.w[n])
        write_field(os.path.join(directory, f"v_{n:06d}.cgw"), traj.v[n])
    tmp = os.path.join(directory, INDEX_NAME + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(f"nodes {nt + 1}\n")
        fh.write(f"stride {stride}\n")
        fh.write(f"tau {traj.tau!r}\n")
    os.replace(tmp, os.path.join(directory, INDEX_NAME))
    return nodes


def load_trajectory(directory: str) -> LoadedTrajectory:
    index_path = os.path.join(directory, INDEX_NAME)
    entries = {}
    with open(index_path) as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != 2:
                raise FormatError(f"{index_path}: malformed line {line!r}")
            entries[parts[0]] = parts[1]
    try:
        node_count = int(entries["nodes"])
        stride = int(entries["stride"])
        tau = float(entries["tau"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{index_path}: {exc}") from exc
    nodes = _stored_nodes(node_count - 1, stride)
    phi = np.stack([read_field(os.path.join(directory, f"phi_{n:06d}.cgw")) for n in nodes])
    w = np.stack([read_field(os.path.join(directory, f"w_{n:06d}.cgw")) for n in nodes])
    v = np.stack([read_field(os.path.join(directory, f"v_{n:06d}.cgw")) for n in nodes])
    return LoadedTrajectory(nodes=nodes, tau=tau, phi=phi, w=w, v=v)
