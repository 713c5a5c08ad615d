"""Reconstruction metrics: Chamfer and Hausdorff distance on point sets,
voxel IoU, and a codebook round-trip report."""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import latent_coder
from .errors import EmptySet, VoxtokError
from .voxelizer import grid_to_points

DEFAULT_N_POINTS = 8192

CONVENTIONS = {
    "chamfer": "0.5 * (mean_a min_b |a-b| + mean_b min_a |a-b|), Euclidean, not squared",
    "hausdorff": "max(max_a min_b |a-b|, max_b min_a |a-b|)",
    "points": "occupied voxel centers (i + 0.5) / 64, uniformly subsampled without replacement, cell ranks shared by both sides",
}


def _points(p, name):
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise EmptySet(f"point set {name} is empty")
    return p


def nn_distances(a, b):
    """Distance from each point of ``a`` to its nearest point of ``b``."""
    d, _ = cKDTree(b).query(a, k=1)
    return d


def chamfer(a, b):
    a, b = _points(a, "a"), _points(b, "b")
    return 0.5 * (float(nn_distances(a, b).mean()) + float(nn_distances(b, a).mean()))


def hausdorff(a, b):
    a, b = _points(a, "a"), _points(b, "b")
    return max(float(nn_distances(a, b).max()), float(nn_distances(b, a).max()))


def voxel_iou(g1, g2):
    """Intersection over union of occupied cells; 1.0 when both are empty."""
    a, b = g1.occupancy, g2.occupancy
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def subsample(points, n, keys):
    """The ``n`` points with the smallest ``keys`` (original order kept).

    Drawing one key per grid cell and sharing it between two grids makes
    identical grids select identical points.
    """
    if len(points) <= n:
        return points
    return points[np.sort(np.argsort(keys, kind="stable")[:n])]


@dataclass
class RoundtripReport:
    chamfer: list
    hausdorff: list
    iou: list
    codebook_size: int
    seed: int
    n_points: int
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))

    @property
    def shape_count(self):
        return len(self.iou)

    def aggregates(self):
        out = {}
        for name in ("chamfer", "hausdorff", "iou"):
            vals = getattr(self, name)
            out[name] = {"mean": statistics.fmean(vals), "median": statistics.median(vals)}
        return out

    def to_jsonl(self):
        """Per-shape records followed by one summary record."""
        lines = [
            json.dumps({"shape": i, "chamfer": c, "hausdorff": h, "iou": u}, sort_keys=True)
            for i, (c, h, u) in enumerate(zip(self.chamfer, self.hausdorff, self.iou))
        ]
        summary = {
            "summary": self.aggregates(),
            "codebook_size": self.codebook_size,
            "shape_count": self.shape_count,
            "seed": self.seed,
            "n_points": self.n_points,
            "conventions": self.conventions,
        }
        lines.append(json.dumps(summary, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text):
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        summary = rows[-1]
        per = rows[:-1]
        return cls([r["chamfer"] for r in per], [r["hausdorff"] for r in per], [r["iou"] for r in per],
                   summary["codebook_size"], summary["seed"], summary["n_points"], summary["conventions"])


class RoundtripError(VoxtokError):
    def __init__(self, index, cause):
        super().__init__(f"shape {index}: {cause}")
        self.index = index


def roundtrip_report(grids, model, n_points=DEFAULT_N_POINTS, seed=0):
    """Encode and decode every grid and compare against the original.

    Points for both sides are voxel centers, each subsampled to at most
    ``n_points`` by per-cell random keys seeded by ``(seed, shape index)``;
    the same keys rank cells on both sides.
    """
    ch, hd, iou = [], [], []
    for i, grid in enumerate(grids):
        try:
            recon = latent_coder.roundtrip(grid, model)
            keys = np.random.default_rng([seed, i]).random(grid.occupancy.size)
            a = subsample(grid_to_points(grid), n_points, keys[grid.linear()])
            b = subsample(grid_to_points(recon), n_points, keys[recon.linear()])
            ch.append(chamfer(a, b))
            hd.append(hausdorff(a, b))
        except VoxtokError as exc:
            raise RoundtripError(i, exc) from exc
        iou.append(voxel_iou(grid, recon))
    if not iou:
        raise EmptySet("no grids to evaluate")
    return RoundtripReport(ch, hd, iou, model.codebook.size, seed, n_points)


def format_table(reports):
    """Plain-text table with one row per codebook size."""
    header = f"{'Vocabulary Size':>15} | {'Chamfer Distance':>16} | {'Hausdorff Distance':>18}"
    rows = [header, "-" * len(header)]
    for r in sorted(reports, key=lambda r: r.codebook_size):
        agg = r.aggregates()
        rows.append(f"{r.codebook_size:>15d} | {agg['chamfer']['mean']:>16.4f} | {agg['hausdorff']['mean']:>18.4f}")
    return "\n".join(rows) + "\n"

