"""64^3 binary occupancy grids: conservative surface voxelization, interior
filling, cell-center point extraction and the VOX64GRD file format.

Arrays are indexed ``occupancy[x, y, z]``. The linear cell index is
``x + 64 * y + 4096 * z`` (x fastest), which is what ``ravel(order="F")``
produces; every module relies on that ordering.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import FormatError

RESOLUTION = 64
N_CELLS = RESOLUTION ** 3
PAYLOAD_BYTES = N_CELLS // 8

GRID_MAGIC = b"VOX64GRD"
GRID_VERSION = 1
_GRID_HEADER = struct.Struct("<8sB3x")

# closed-box tolerance in cell units; touching a cell face counts as overlap
BOX_EPS = 1e-7
_PAIR_CHUNK = 1 << 20


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Immutable 64^3 occupancy grid (bool array indexed [x, y, z])."""

    occupancy: np.ndarray

    def __post_init__(self):
        occ = np.array(self.occupancy, dtype=bool, copy=True)
        if occ.shape != (RESOLUTION,) * 3:
            raise ValueError(f"occupancy must have shape {(RESOLUTION,) * 3}, got {occ.shape}")
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)

    @classmethod
    def empty(cls):
        return cls(np.zeros((RESOLUTION,) * 3, dtype=bool))

    @classmethod
    def from_linear(cls, bits):
        """Build from a length-262144 vector in x-fastest order."""
        return cls(np.asarray(bits, dtype=bool).reshape((RESOLUTION,) * 3, order="F"))

    def linear(self):
        return self.occupancy.ravel(order="F")

    @property
    def count(self):
        return int(self.occupancy.sum())

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return np.array_equal(self.occupancy, other.occupancy)

    def __hash__(self):
        return hash(self.to_bytes())

    def to_bytes(self):
        payload = np.packbits(self.linear(), bitorder="little").tobytes()
        return _GRID_HEADER.pack(GRID_MAGIC, GRID_VERSION) + payload

    @classmethod
    def from_bytes(cls, data):
        if len(data) != _GRID_HEADER.size + PAYLOAD_BYTES:
            raise FormatError(f"grid file must be {_GRID_HEADER.size + PAYLOAD_BYTES} bytes, got {len(data)}")
        magic, version = _GRID_HEADER.unpack_from(data)
        if magic != GRID_MAGIC:
            raise FormatError(f"bad grid magic {magic!r}")
        if version != GRID_VERSION:
            raise FormatError(f"unsupported grid version {version}")
        bits = np.unpackbits(np.frombuffer(data, np.uint8, offset=_GRID_HEADER.size), bitorder="little")
        return cls.from_linear(bits)


def save_grid(grid, path):
    _atomic_write(path, grid.to_bytes())


def load_grid(path):
    with open(path, "rb") as fh:
        return VoxelGrid.from_bytes(fh.read())


def _atomic_write(path, data):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _cross_axis(axis, e):
    """Components of unit_axis x e for edge vectors ``e`` of shape (n, 3)."""
    out = np.zeros_like(e)
    if axis == 0:
        out[:, 1], out[:, 2] = -e[:, 2], e[:, 1]
    elif axis == 1:
        out[:, 0], out[:, 2] = e[:, 2], -e[:, 0]
    else:
        out[:, 0], out[:, 1] = -e[:, 1], e[:, 0]
    return out


def triangle_box_overlap(tri, centers, half):
    """Separating-axis test between triangles and axis-aligned cubes.

    Parameters
    ----------
    tri : ndarray, shape (n, 3, 3)
        Triangle corners, one triangle per test.
    centers : ndarray, shape (n, 3)
        Box centers.
    half : float
        Box half-size; boxes are closed.

    Returns
    -------
    ndarray of bool, shape (n,)
    """
    v = tri - centers[:, None, :]
    v0, v1, v2 = v[:, 0], v[:, 1], v[:, 2]
    hit = np.ones(len(v), dtype=bool)

    # box face normals: AABB of the triangle against the box
    hit &= (v.min(axis=1) <= half).all(axis=1) & (v.max(axis=1) >= -half).all(axis=1)

    # triangle plane
    n = np.cross(v1 - v0, v2 - v0)
    r = half * np.abs(n).sum(axis=1)
    hit &= np.abs(np.einsum("ij,ij->i", n, v0)) <= r

    # edge x box-axis cross products
    for e in (v1 - v0, v2 - v1, v0 - v2):
        for axis in range(3):
            a = _cross_axis(axis, e)
            p0 = np.einsum("ij,ij->i", a, v0)
            p1 = np.einsum("ij,ij->i", a, v1)
            p2 = np.einsum("ij,ij->i", a, v2)
            r = half * np.abs(a).sum(axis=1)
            hit &= (np.minimum(np.minimum(p0, p1), p2) <= r) & (np.maximum(np.maximum(p0, p1), p2) >= -r)
    return hit


def voxelize_surface(mesh):
    """Conservative surface voxelization of a mesh normalized to [0, 1]^3.

    A cell is occupied iff some triangle meets its closed box. Only cells in
    each triangle's bounding range are tested.
    """
    tri = mesh.corners * RESOLUTION  # cell units: cell i spans [i, i + 1]
    lo = np.clip(np.floor(tri.min(axis=1) - BOX_EPS), 0, RESOLUTION - 1).astype(np.int64)
    hi = np.clip(np.floor(tri.max(axis=1) + BOX_EPS), 0, RESOLUTION - 1).astype(np.int64)
    span = hi - lo + 1
    n_pairs = span.prod(axis=1)
    normal = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    offset = np.einsum("ij,ij->i", normal, tri[:, 0])
    reach = (0.5 + BOX_EPS) * np.abs(normal).sum(axis=1)

    occ = np.zeros(N_CELLS, dtype=bool)
    # batch triangles so each batch holds roughly _PAIR_CHUNK candidate pairs
    cum = np.cumsum(n_pairs)
    cuts = np.searchsorted(cum, np.arange(_PAIR_CHUNK, cum[-1], _PAIR_CHUNK), side="right")
    splits = np.unique(np.concatenate([[0], cuts, [len(tri)]]))
    for start, stop in zip(splits[:-1], splits[1:]):
        counts = n_pairs[start:stop]
        t_idx = np.repeat(np.arange(start, stop), counts)
        # offset of each pair within its triangle's cell range
        local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        sx, sy = span[t_idx, 0], span[t_idx, 1]
        cells = lo[t_idx] + np.stack([local % sx, (local // sx) % sy, local // (sx * sy)], axis=1)
        # cheap plane-distance cull before the full test
        near = np.abs(np.einsum("ij,ij->i", normal[t_idx], cells + 0.5) - offset[t_idx]) <= 2 * reach[t_idx]
        t_idx, cells = t_idx[near], cells[near]
        hit = triangle_box_overlap(tri[t_idx], cells + 0.5, 0.5 + BOX_EPS)
        c = cells[hit]
        occ[c[:, 0] + RESOLUTION * c[:, 1] + RESOLUTION * RESOLUTION * c[:, 2]] = True
    return VoxelGrid.from_linear(occ)


def solid_fill(grid):
    """Mark every cell not reachable from the grid boundary through empty
    cells (6-connectivity). The result contains the input."""
    return VoxelGrid(ndimage.binary_fill_holes(grid.occupancy))


def grid_to_points(grid):
    """Cell centers of occupied cells, in linear (x-fastest) order.

    Returns
    -------
    ndarray, shape (k, 3)
    """
    idx = np.flatnonzero(grid.linear())
    ijk = np.stack([idx % RESOLUTION, (idx // RESOLUTION) % RESOLUTION, idx // (RESOLUTION * RESOLUTION)], axis=1)
    return (ijk + 0.5) / RESOLUTION
