"""Procedural triangle meshes used as a small, reproducible training and
evaluation set ("desk set")."""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .mesh_io import TriangleMesh, normalize_to_unit_cube
from .voxelizer import solid_fill, voxelize_surface


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)):
    s = np.asarray(size, dtype=float) / 2
    corners = np.array([[x, y, z] for z in (-1, 1) for y in (-1, 1) for x in (-1, 1)], dtype=float)
    quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    tris = [(a, b, c) for a, b, c, d in quads] + [(a, c, d) for a, b, c, d in quads]
    return TriangleMesh(corners * s + np.asarray(center, dtype=float), np.array(tris))


def _revolve(profile, segments, closed_top=True, closed_bottom=True):
    """Surface of revolution around z from (radius, z) profile points."""
    theta = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    r, z = np.asarray(profile, dtype=float).T
    verts = np.stack([
        (r[:, None] * np.cos(theta)).ravel(),
        (r[:, None] * np.sin(theta)).ravel(),
        np.repeat(z, segments),
    ], axis=1)
    tris = []
    rows = len(r)
    for i in range(rows - 1):
        for j in range(segments):
            a = i * segments + j
            b = i * segments + (j + 1) % segments
            c = (i + 1) * segments + (j + 1) % segments
            d = (i + 1) * segments + j
            tris += [(a, b, c), (a, c, d)]
    extra = []
    if closed_bottom and r[0] > 0:
        extra.append((0, z[0], False))
    if closed_top and r[-1] > 0:
        extra.append((rows - 1, z[-1], True))
    for row, zc, top in extra:
        center = len(verts)
        verts = np.vstack([verts, [0.0, 0.0, zc]])
        for j in range(segments):
            a = row * segments + j
            b = row * segments + (j + 1) % segments
            tris.append((center, a, b) if top else (center, b, a))
    # drop triangles collapsed by zero-radius rings
    tris = np.array(tris)
    keep = np.array([len({tuple(verts[k]) for k in t}) == 3 for t in tris])
    return TriangleMesh(verts, tris[keep])


def sphere(radius=1.0, rings=16, segments=24):
    phi = np.linspace(0, np.pi, rings + 1)
    return _revolve(np.stack([radius * np.sin(phi), -radius * np.cos(phi)], 1), segments)


def cylinder(radius=1.0, height=2.0, segments=24):
    return _revolve([(radius, -height / 2), (radius, height / 2)], segments)


def cone(radius=1.0, height=2.0, segments=24):
    return _revolve([(radius, -height / 2), (0.0, height / 2)], segments)


def torus(major=1.0, minor=0.3, rings=24, segments=12):
    u = np.linspace(0, 2 * np.pi, rings, endpoint=False)
    v = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    r = major + minor * np.cos(vv)
    verts = np.stack([r * np.cos(uu), r * np.sin(uu), minor * np.sin(vv)], -1).reshape(-1, 3)
    tris = []
    for i in range(rings):
        for j in range(segments):
            a = i * segments + j
            b = ((i + 1) % rings) * segments + j
            c = ((i + 1) % rings) * segments + (j + 1) % segments
            d = i * segments + (j + 1) % segments
            tris += [(a, b, c), (a, c, d)]
    return TriangleMesh(verts, np.array(tris))


def merge(*meshes):
    verts, tris, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += len(m.vertices)
    return TriangleMesh(np.vstack(verts), np.vstack(tris))


def transformed(mesh, rotation=None, translation=(0.0, 0.0, 0.0)):
    v = mesh.vertices
    if rotation is not None:
        v = v @ np.asarray(rotation).T
    return TriangleMesh(v + np.asarray(translation, dtype=float), mesh.triangles)


def table(rng):
    w, d, h = rng.uniform(1.0, 2.0), rng.uniform(0.6, 1.4), rng.uniform(0.6, 1.2)
    t, leg = rng.uniform(0.05, 0.15), rng.uniform(0.06, 0.15)
    parts = [box((w, d, t), (0, 0, h))]
    for sx in (-1, 1):
        for sy in (-1, 1):
            parts.append(box((leg, leg, h), (sx * (w - leg) / 2, sy * (d - leg) / 2, h / 2)))
    return merge(*parts)


def chair(rng):
    s, h = rng.uniform(0.8, 1.2), rng.uniform(0.6, 1.0)
    back = rng.uniform(0.6, 1.2)
    leg = rng.uniform(0.06, 0.12)
    parts = [box((s, s, 0.1), (0, 0, h)), box((s, 0.1, back), (0, (s - 0.1) / 2, h + back / 2))]
    for sx in (-1, 1):
        for sy in (-1, 1):
            parts.append(box((leg, leg, h), (sx * (s - leg) / 2, sy * (s - leg) / 2, h / 2)))
    return merge(*parts)


def lamp(rng):
    base = cylinder(rng.uniform(0.3, 0.6), 0.1)
    pole_h = rng.uniform(1.0, 2.0)
    pole = cylinder(0.05, pole_h, segments=8)
    shade = cone(rng.uniform(0.3, 0.6), rng.uniform(0.3, 0.6))
    return merge(base, transformed(pole, translation=(0, 0, pole_h / 2)),
                 transformed(shade, translation=(0, 0, pole_h)))


def snowman(rng):
    r1, r2, r3 = sorted(rng.uniform(0.3, 1.0, 3))[::-1]
    return merge(sphere(r1), transformed(sphere(r2), translation=(0, 0, r1 + 0.8 * r2)),
                 transformed(sphere(r3), translation=(0, 0, r1 + 1.6 * r2 + 0.8 * r3)))


def l_shape(rng):
    a, b, t = rng.uniform(1.0, 2.0), rng.uniform(1.0, 2.0), rng.uniform(0.2, 0.5)
    return merge(box((a, t, t), (a / 2, 0, 0)), box((t, b, t), (0, b / 2, 0)))


def _primitive(rng, kind):
    if kind == "box":
        return box(rng.uniform(0.3, 1.0, 3))
    if kind == "sphere":
        return sphere(1.0)
    if kind == "ellipsoid":
        m = sphere(1.0)
        return TriangleMesh(m.vertices * rng.uniform(0.4, 1.0, 3), m.triangles)
    if kind == "cylinder":
        return cylinder(rng.uniform(0.3, 1.0), rng.uniform(0.5, 2.0))
    if kind == "cone":
        return cone(rng.uniform(0.3, 1.0), rng.uniform(0.5, 2.0))
    if kind == "torus":
        return torus(1.0, rng.uniform(0.15, 0.45))
    if kind == "table":
        return table(rng)
    if kind == "chair":
        return chair(rng)
    if kind == "lamp":
        return lamp(rng)
    if kind == "snowman":
        return snowman(rng)
    if kind == "l_shape":
        return l_shape(rng)
    raise ValueError(kind)


KINDS = ("box", "sphere", "ellipsoid", "cylinder", "cone", "torus",
         "table", "chair", "lamp", "snowman", "l_shape")


def random_shape(rng, kind=None, rotate=True):
    """One procedural mesh; with ``rotate`` a uniformly random orientation
    is applied to half of the draws and the rest stay axis-aligned."""
    kind = kind or KINDS[rng.integers(len(KINDS))]
    mesh = _primitive(rng, kind)
    if rotate and rng.random() < 0.5:
        mesh = transformed(mesh, Rotation.random(random_state=rng).as_matrix())
    return kind, mesh


def desk_meshes(n, seed=0, rotate=True):
    """``n`` normalized procedural meshes cycling through every kind."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        kind, mesh = random_shape(rng, KINDS[i % len(KINDS)], rotate=rotate)
        out.append((kind, normalize_to_unit_cube(mesh)))
    return out


def desk_grids(n, seed=0, rotate=True, fill="solid"):
    """Voxelized desk set; ``fill="solid"`` also fills enclosed interiors."""
    if fill not in ("solid", "surface"):
        raise ValueError(f"unknown fill mode {fill!r}")
    grids = [voxelize_surface(m) for _, m in desk_meshes(n, seed, rotate)]
    return [solid_fill(g) for g in grids] if fill == "solid" else grids
