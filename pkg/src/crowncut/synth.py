"""Labelled synthetic forest scenes and segmentation scoring.

Trees are a vertical stem plus a crown solid (half-ellipsoid dome or
cone) sampled uniformly; crown diameters default to the median allometric
relationship for the tree's height.  Every generated point carries a
ground-truth label (-1 for ground) so segmentations can be scored exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allometry import AllometrySet
from .cloud import GROUND_CLASS, PointCloud
from .errors import ParameterError

STEM_SPACING = 0.25   # m between stem points; stem top hits tree height exactly
GROUND_LABEL = -1
VEG_CLASS = 1


@dataclass
class SynthTree:
    stem_xy: tuple[float, float]
    height: float
    crown_diameter: float | None = None       # default: median allometry
    crown_shape: str = "ellipsoid"            # "ellipsoid" (dome) or "cone"
    crown_depth_fraction: float = 0.4
    point_density: float = 8.0                # points per m^3 of crown solid
    label: int | None = None

    def __post_init__(self):
        if self.height <= 0:
            raise ParameterError("tree height must be > 0")
        if not (0 < self.crown_depth_fraction <= 1):
            raise ParameterError("crown_depth_fraction must be in (0, 1]")
        if self.crown_diameter is not None and self.crown_diameter <= 0:
            raise ParameterError("crown_diameter must be > 0")
        if self.crown_shape not in ("ellipsoid", "cone"):
            raise ParameterError(f"unknown crown shape {self.crown_shape!r}")


def _crown_points(tree: SynthTree, cd: float, rng) -> np.ndarray:
    """Uniform samples (dx, dy, agh) inside the crown solid."""
    r = cd / 2.0
    depth = tree.crown_depth_fraction * tree.height
    base = tree.height - depth
    if tree.crown_shape == "ellipsoid":
        volume = (2.0 / 3.0) * np.pi * r * r * depth
        n = max(1, int(round(tree.point_density * volume)))
        # Uniform in the upper half of the unit ball, then scale axes.
        pts = rng.normal(size=(n, 3))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        pts *= rng.uniform(size=(n, 1)) ** (1.0 / 3.0)
        pts[:, 2] = np.abs(pts[:, 2])
        return np.column_stack([pts[:, 0] * r, pts[:, 1] * r, base + pts[:, 2] * depth])
    # Cone, apex up: depth below apex s ~ U^(1/3), disc radius grows with s.
    volume = (1.0 / 3.0) * np.pi * r * r * depth
    n = max(1, int(round(tree.point_density * volume)))
    s = depth * rng.uniform(size=n) ** (1.0 / 3.0)
    rho = (r * s / depth) * np.sqrt(rng.uniform(size=n))
    phi = rng.uniform(0, 2 * np.pi, size=n)
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), tree.height - s])


def generate_scene(
    trees,
    ground: str = "flat",
    noise_sd: float = 0.0,
    density_per_m2: float = 5.0,
    rng_seed: int = 0,
    slope: float = 0.1,
    ground_z: float = 0.0,
    extent=None,
    margin: float = 6.0,
    allom: AllometrySet | None = None,
):
    """Generate a labelled point cloud for a list of trees.

    Parameters
    ----------
    trees : list of SynthTree
    ground : {"flat", "tilted"}
        Ground surface; "tilted" uses ``ground_z + slope * x``.
    noise_sd : float
        Gaussian positional jitter applied to every coordinate.
    density_per_m2 : float
        Ground return density over the scene rectangle.
    extent : (xmin, xmax, ymin, ymax), optional
        Scene rectangle; defaults to the stems' bounding box +- margin.

    Returns
    -------
    (PointCloud, numpy.ndarray)
        The cloud (ground class 2, vegetation class 1, raw elevations) and
        per-point truth labels (-1 ground, otherwise the tree's label).
    """
    if ground not in ("flat", "tilted"):
        raise ParameterError(f"unknown ground type {ground!r}")
    if density_per_m2 <= 0:
        raise ParameterError("density_per_m2 must be > 0")
    allom = allom or AllometrySet()
    rng = np.random.default_rng(rng_seed)

    if extent is None:
        if trees:
            sx = [t.stem_xy[0] for t in trees]
            sy = [t.stem_xy[1] for t in trees]
            extent = (min(sx) - margin, max(sx) + margin, min(sy) - margin, max(sy) + margin)
        else:
            extent = (-margin, margin, -margin, margin)
    xmin, xmax, ymin, ymax = extent

    def ground_at(x):
        return ground_z + (slope * x if ground == "tilted" else 0.0)

    chunks_xyz, chunks_label, chunks_class = [], [], []

    area = (xmax - xmin) * (ymax - ymin)
    n_ground = max(3, int(round(density_per_m2 * area)))
    gx = rng.uniform(xmin, xmax, size=n_ground)
    gy = rng.uniform(ymin, ymax, size=n_ground)
    chunks_xyz.append(np.column_stack([gx, gy, ground_at(gx)]))
    chunks_label.append(np.full(n_ground, GROUND_LABEL, dtype=np.int64))
    chunks_class.append(np.full(n_ground, GROUND_CLASS, dtype=np.int64))

    for i, tree in enumerate(trees):
        label = i if tree.label is None else tree.label
        x0, y0 = tree.stem_xy
        z0 = ground_at(x0)
        cd = tree.crown_diameter or allom.cd50.evaluate(tree.height)

        n_stem = int(np.ceil(tree.height / STEM_SPACING)) + 1
        stem_agh = np.linspace(0.0, tree.height, n_stem)
        stem = np.column_stack([np.full(n_stem, x0), np.full(n_stem, y0), z0 + stem_agh])
        crown = _crown_points(tree, cd, rng)
        crown = np.column_stack([x0 + crown[:, 0], y0 + crown[:, 1], z0 + crown[:, 2]])

        pts = np.vstack([stem, crown])
        chunks_xyz.append(pts)
        chunks_label.append(np.full(len(pts), label, dtype=np.int64))
        chunks_class.append(np.full(len(pts), VEG_CLASS, dtype=np.int64))

    xyz = np.vstack(chunks_xyz)
    labels = np.concatenate(chunks_label)
    classes = np.concatenate(chunks_class)
    if noise_sd > 0:
        xyz = xyz + rng.normal(scale=noise_sd, size=xyz.shape)
    return PointCloud(xyz, classes), labels


@dataclass(frozen=True)
class ScoreResult:
    n_matched: int
    precision: float
    recall: float
    point_accuracy: float


def score_against_truth(seg, truth, cloud: PointCloud, height_floor: float = 2.0) -> ScoreResult:
    """Score a segmentation against generator truth labels.

    Crowns are matched one-to-one to truth trees greedily by point overlap.
    ``point_accuracy`` is computed over non-ground points with
    ``agh >= height_floor``: a point counts as correct when its crown is
    matched to its own tree.
    """
    truth = np.asarray(truth)
    agh = cloud.require_agh()
    tree_ids = np.unique(truth[truth >= 0])
    crowns = list(seg.crowns)

    overlaps = []
    for ci, crown in enumerate(crowns):
        t_members = truth[crown.point_indices]
        for t in tree_ids:
            ov = int(np.sum(t_members == t))
            if ov > 0:
                overlaps.append((ov, ci, int(t)))
    overlaps.sort(key=lambda rec: (-rec[0], rec[1], rec[2]))

    crown_to_tree = {}
    used_trees = set()
    for ov, ci, t in overlaps:
        if ci in crown_to_tree or t in used_trees:
            continue
        crown_to_tree[ci] = t
        used_trees.add(t)

    n_matched = len(crown_to_tree)
    precision = n_matched / len(crowns) if crowns else 0.0
    recall = n_matched / len(tree_ids) if len(tree_ids) else 0.0

    eligible = (truth >= 0) & (agh >= height_floor)
    pred = np.full(len(cloud), -2, dtype=np.int64)   # -2: unassigned
    for ci, crown in enumerate(crowns):
        pred[crown.point_indices] = crown_to_tree.get(ci, -3)   # -3: unmatched crown
    n_eligible = int(np.sum(eligible))
    if n_eligible == 0:
        accuracy = 1.0
    else:
        accuracy = float(np.sum(pred[eligible] == truth[eligible]) / n_eligible)
    return ScoreResult(n_matched, precision, recall, accuracy)
