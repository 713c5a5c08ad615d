"""Wavefront OBJ reading and unit-cube normalization of triangle meshes."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateExtent, EmptyMesh, IndexOutOfRange, MalformedRecord

log = logging.getLogger(__name__)

DEFAULT_MARGIN = 0.01


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle mesh.

    Attributes
    ----------
    vertices : ndarray, shape (n_vertices, 3), float64
    triangles : ndarray, shape (n_triangles, 3), int64
        Zero-based vertex indices.
    """

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) == 0:
            raise EmptyMesh("mesh has no triangles")
        if t.min() < 0 or t.max() >= len(v):
            raise IndexOutOfRange(
                f"triangle index outside [0, {len(v)})")
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise MalformedRecord(0, "triangle with repeated vertex index")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def corners(self):
        """Triangle corner coordinates, shape (n_triangles, 3, 3)."""
        return self.vertices[self.triangles]

    def areas(self):
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def translated(self, offset):
        return type(self)(self.vertices + np.asarray(offset, dtype=np.float64), self.triangles)


@dataclass(frozen=True)
class NormalizedMesh(TriangleMesh):
    """A TriangleMesh whose coordinates lie in the unit cube."""


def parse_obj(data):
    """Parse the ``v``/``f`` subset of a Wavefront OBJ file.

    Polygonal faces are fan-triangulated around their first vertex and
    negative (relative) indices are resolved against the vertices read so
    far. Texture and normal references inside face records are dropped;
    every other record type is skipped and counted.

    Parameters
    ----------
    data : bytes or str
        File contents.

    Returns
    -------
    TriangleMesh
    """
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8", errors="replace")

    vertices = []
    triangles = []
    skipped = 0
    for line_no, raw in enumerate(data.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if head == "v":
            if len(rest) < 3:
                raise MalformedRecord(line_no, "vertex needs 3 coordinates")
            try:
                xyz = [float(c) for c in rest[:3]]
            except ValueError:
                raise MalformedRecord(line_no, f"bad vertex coordinate in {raw!r}") from None
            if not all(np.isfinite(xyz)):
                raise MalformedRecord(line_no, "non-finite vertex coordinate")
            vertices.append(xyz)
        elif head == "f":
            if len(rest) < 3:
                raise MalformedRecord(line_no, f"face needs at least 3 vertices, got {len(rest)}")
            idx = []
            for ref in rest:
                try:
                    i = int(ref.split("/", 1)[0])
                except ValueError:
                    raise MalformedRecord(line_no, f"bad face index {ref!r}") from None
                if i > 0:
                    i -= 1
                elif i < 0:
                    i += len(vertices)
                else:
                    raise MalformedRecord(line_no, "face index 0 is invalid")
                if not 0 <= i < len(vertices):
                    raise IndexOutOfRange(f"line {line_no}: face index {ref} out of range")
                idx.append(i)
            if len(set(idx)) != len(idx):
                raise MalformedRecord(line_no, "face repeats a vertex")
            for k in range(1, len(idx) - 1):
                triangles.append((idx[0], idx[k], idx[k + 1]))
        else:
            skipped += 1
    if skipped:
        log.warning("skipped %d unsupported OBJ records", skipped)
    if not triangles:
        raise EmptyMesh("no faces found")
    return TriangleMesh(np.array(vertices, dtype=np.float64), np.array(triangles, dtype=np.int64))


def load_obj(path):
    with open(path, "rb") as fh:
        return parse_obj(fh.read())


def format_obj(mesh):
    """Serialize to OBJ text; floats use ``repr`` so re-parsing is exact."""
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    return "\n".join(lines) + "\n"


def save_obj(mesh, path):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(format_obj(mesh))
    os.replace(tmp, path)


def normalize_to_unit_cube(mesh, margin=DEFAULT_MARGIN):
    """Uniformly scale and translate ``mesh`` into ``[margin, 1 - margin]^3``.

    The bounding-box center maps to (0.5, 0.5, 0.5) and the longest
    bounding-box side becomes ``1 - 2 * margin``.
    """
    if not 0 <= margin < 0.5:
        raise ValueError("margin must be in [0, 0.5)")
    v = mesh.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    extent = float((hi - lo).max())
    if not extent > 0:
        raise DegenerateExtent("bounding box has zero size on every axis")
    scale = (1.0 - 2.0 * margin) / extent
    out = (v - 0.5 * (lo + hi)) * scale + 0.5
    return NormalizedMesh(out, mesh.triangles)


def sample_surface_points(mesh, n, seed=0):
    """Draw ``n`` points uniformly (by area) on the mesh surface.

    Returns
    -------
    ndarray, shape (n, 3)
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.areas()
    total = areas.sum()
    p = areas / total if total > 0 else None
    tri = rng.choice(len(areas), size=n, p=p)
    u = rng.random(n)
    w = rng.random(n)
    # fold the unit square onto the triangle
    flip = u + w > 1.0
    u[flip] = 1.0 - u[flip]
    w[flip] = 1.0 - w[flip]
    c = mesh.corners[tri]
    return c[:, 0] + u[:, None] * (c[:, 1] - c[:, 0]) + w[:, None] * (c[:, 2] - c[:, 0])
