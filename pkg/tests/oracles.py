"""Slow, independent reference implementations used only by the tests.

None of these import the code under test beyond plain data containers.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter

import numpy as np

RES = 64
EPS = 1e-7  # closed-box enlargement, in cell units


# --------------------------------------------------------------------------
# voxelization: every cell against every triangle, 13 separating axes,
# intervals from projecting all 8 box corners

_CORNERS = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))


def _separated(proj_tri, proj_box):
    return (proj_tri.max(axis=-1) < proj_box.min(axis=-1)) | (proj_tri.min(axis=-1) > proj_box.max(axis=-1))


def brute_voxelize(corners):
    """Occupancy (64, 64, 64) indexed [x, y, z] for triangles given in
    unit-cube coordinates, shape (n, 3, 3)."""
    half = 0.5 + EPS
    idx = np.arange(RES)
    centers = np.stack(np.meshgrid(idx, idx, idx, indexing="ij"), axis=-1).reshape(-1, 3) + 0.5
    box_pts = centers[:, None, :] + half * _CORNERS[None, :, :]          # (cells, 8, 3)
    occ = np.zeros(len(centers), dtype=bool)
    for tri in np.asarray(corners, dtype=np.float64) * RES:
        e = [tri[1] - tri[0], tri[2] - tri[1], tri[0] - tri[2]]
        axes = [np.eye(3)[i] for i in range(3)]
        # box face normals first, on every cell
        alive = np.ones(len(centers), dtype=bool)
        for a in axes:
            alive &= ~_separated((tri @ a)[None, :], box_pts @ a)
        cand = np.flatnonzero(alive)
        if not len(cand):
            continue
        pts = box_pts[cand]
        ok = np.ones(len(cand), dtype=bool)
        others = [np.cross(e[0], -e[2])] + [np.cross(u, v) for u in axes for v in e]
        for a in others:
            if not np.any(a):
                continue
            ok &= ~_separated((tri @ a)[None, :], pts @ a)
        occ[cand[ok]] = True
    return occ.reshape(RES, RES, RES)


# --------------------------------------------------------------------------
# point-set distances, all pairs

def _pairwise_min(a, b):
    return [min(math.dist(p, q) for q in b) for p in a]


def brute_chamfer(a, b):
    a, b = np.asarray(a).tolist(), np.asarray(b).tolist()
    return 0.5 * (math.fsum(_pairwise_min(a, b)) / len(a) + math.fsum(_pairwise_min(b, a)) / len(b))


def brute_hausdorff(a, b):
    a, b = np.asarray(a).tolist(), np.asarray(b).tolist()
    return max(max(_pairwise_min(a, b)), max(_pairwise_min(b, a)))


# --------------------------------------------------------------------------
# stream scanning: restart the search at every start sentinel

def naive_scan(ids, start, end, offset, n_shape, block=1024):
    """List of ``(span, tokens-or-None)`` for every start..end pair, where
    a block is valid iff it has exactly ``block`` shape ids inside and no
    other sentinel in between."""
    ids = list(ids)
    out = []
    i = 0
    while i < len(ids):
        if ids[i] == start:
            j = i + 1
            while j < len(ids) and ids[j] not in (start, end):
                j += 1
            if j == len(ids):
                out.append(((i, len(ids)), None))
                break
            if ids[j] == start:
                out.append(((i, j), None))
                i = j
                continue
            inner = ids[i + 1:j]
            good = len(inner) == block and all(offset <= t < offset + n_shape for t in inner)
            out.append(((i, j + 1), [t - offset for t in inner] if good else None))
            i = j + 1
        elif ids[i] == end:
            out.append(((i, i + 1), None))
            i += 1
        else:
            i += 1
    return out


# --------------------------------------------------------------------------
# n-gram counting

def count_ngrams(sequences, n, bos):
    """Counter of forward-order n-gram tuples over begin-padded sequences."""
    c = Counter()
    for s in sequences:
        padded = [bos] * (n - 1) + list(s)
        for i in range(len(s)):
            c[tuple(padded[i:i + n])] += 1
    return c


def nucleus_size(p, top_p):
    """Smallest number of largest entries whose running sum reaches top_p."""
    order = sorted(range(len(p)), key=lambda i: (-p[i], i))
    total = 0.0
    for m, i in enumerate(order, 1):
        total += p[i]
        if total >= top_p:
            return m
    return len(p)


# --------------------------------------------------------------------------
# misc

def fan(face):
    """Fan triangulation of a polygon given as a vertex list."""
    return [(face[0], face[k], face[k + 1]) for k in range(1, len(face) - 1)]


def pca_svd(patches, weights, k):
    """Top-k principal directions by SVD of the weighted, centered data."""
    w = np.asarray(weights, dtype=np.float64)
    mean = (patches * w[:, None]).sum(axis=0) / w.sum()
    centered = (patches - mean) * np.sqrt(w)[:, None]
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    return mean, vt[:k], s[:k] ** 2 / w.sum()
