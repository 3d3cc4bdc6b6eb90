"""Pairwise similarity weights from 3D proximity and local density centroids.

The base weight between two points is a separable Gaussian in horizontal
and vertical distance (raw elevations, not ground-corrected).  Two
corrections then cut links that straddle crown boundaries:

* horizontal: when the local density-centroid vectors of the two points
  point more than a right angle apart, the weight shrinks by
  ``exp(-W_H * (K_H / d_H) * |dH_i - dH_j|)``;
* vertical: when the vertical centroid components diverge (taller point's
  pulls up, lower point's pulls down), the weight shrinks by
  ``exp(-W_Z * (K_Z / d_Z) * |dZ_i - dZ_j|)``.

``K_H`` is the allometric crown radius of the tallest point and ``K_Z``
half its above-ground height, so both corrections are scale-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .allometry import AllometrySet
from .cloud import PointCloud
from .errors import ParameterError, ResourceError

DIST_EPS = 0.01          # m; floor on d_H, d_Z in the correction divisors
DEFAULT_BUDGET_BYTES = 4 << 30


@dataclass(frozen=True)
class WeightParams:
    """Tuning constants: Gaussian scales and correction strengths."""

    sigma_xy: float = 4.0
    sigma_z: float = 2.0
    w_h: float = 0.2
    w_z: float = 0.2

    def __post_init__(self):
        for name in ("sigma_xy", "sigma_z", "w_h", "w_z"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be > 0")


@dataclass(frozen=True)
class CentroidVector:
    dh: np.ndarray           # (2,) horizontal offset to neighbourhood centroid
    dz: float                # signed vertical offset
    neighbor_count: int


@dataclass(frozen=True)
class PairGeometry:
    d_h: float               # horizontal distance
    d_z: float               # absolute vertical distance
    theta_h: float           # angle between horizontal centroid components


@dataclass(frozen=True)
class GraphContext:
    """Everything pairwise weights need besides the two point indices."""

    cloud: PointCloud = field(repr=False)
    centroid_dh: np.ndarray = field(repr=False)     # (n, 2)
    centroid_dz: np.ndarray = field(repr=False)     # (n,)
    neighbor_count: np.ndarray = field(repr=False)  # (n,)
    k_h: float
    k_z: float
    params: WeightParams


def compute_centroids(cloud: PointCloud, allom: AllometrySet | None = None):
    """Local density-centroid vector for every point.

    The neighbourhood is a 3D sphere (raw coordinates) of radius one
    quarter of the 95th-percentile crown diameter for the point's own
    above-ground height, i.e. half the allometric crown radius.  The
    centroid includes the point itself, so isolated points get a zero
    vector.

    Returns
    -------
    (dh, dz, counts) : ((n, 2), (n,), (n,)) arrays
        Horizontal and vertical components of the centroid offsets and the
        number of neighbours found (excluding the point itself).
    """
    allom = allom or AllometrySet()
    agh = cloud.require_agh()
    n = len(cloud)
    dh = np.zeros((n, 2))
    dz = np.zeros(n)
    counts = np.zeros(n, dtype=np.int64)
    if n == 0:
        return dh, dz, counts

    radii = np.zeros(n)
    pos = agh > 0
    radii[pos] = allom.cd95.evaluate(agh[pos]) / 4.0
    tree = cKDTree(cloud.xyz)
    neighborhoods = tree.query_ball_point(cloud.xyz, radii)
    for i, idx in enumerate(neighborhoods):
        if len(idx) <= 1:
            continue
        centroid = cloud.xyz[idx].mean(axis=0)
        delta = centroid - cloud.xyz[i]
        dh[i] = delta[:2]
        dz[i] = delta[2]
        counts[i] = len(idx) - 1
    return dh, dz, counts


def build_graph_context(
    cloud: PointCloud, allom: AllometrySet | None = None, params: WeightParams | None = None
) -> GraphContext:
    """Compute centroids and the data-derived normalisers K_H, K_Z."""
    allom = allom or AllometrySet()
    params = params or WeightParams()
    agh = cloud.require_agh()
    if len(cloud) == 0 or agh.max() <= 0:
        raise ParameterError("graph context needs at least one point with agh > 0")
    dh, dz, counts = compute_centroids(cloud, allom)
    top = float(agh.max())
    return GraphContext(
        cloud=cloud,
        centroid_dh=dh,
        centroid_dz=dz,
        neighbor_count=counts,
        k_h=allom.cd95.evaluate(top) / 2.0,
        k_z=top / 2.0,
        params=params,
    )


def base_weight(p_i, p_j, params: WeightParams | None = None) -> float:
    """Separable Gaussian similarity of two raw-coordinate points."""
    params = params or WeightParams()
    p_i = np.asarray(p_i, dtype=np.float64)
    p_j = np.asarray(p_j, dtype=np.float64)
    dh2 = np.sum((p_i[:2] - p_j[:2]) ** 2)
    dz2 = (p_i[2] - p_j[2]) ** 2
    return float(np.exp(-dh2 / params.sigma_xy**2) * np.exp(-dz2 / params.sigma_z**2))


def pair_geometry(i: int, j: int, ctx: GraphContext) -> PairGeometry:
    """Distances and centroid angle for a pair, from raw coordinates."""
    a, b = ctx.cloud.xyz[i], ctx.cloud.xyz[j]
    d_h = float(np.hypot(a[0] - b[0], a[1] - b[1]))
    d_z = float(abs(a[2] - b[2]))
    u, v = ctx.centroid_dh[i], ctx.centroid_dh[j]
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        theta = 0.0    # angle undefined for a zero vector: no penalty
    else:
        c = float(np.dot(u, v) / (nu * nv))
        theta = float(np.arccos(np.clip(c, -1.0, 1.0)))
    return PairGeometry(d_h, d_z, theta)


def adjusted_weight(i: int, j: int, ctx: GraphContext, geom: PairGeometry | None = None) -> float:
    """Base weight with the horizontal and vertical centroid corrections."""
    if i == j:
        return 0.0
    if geom is None:
        geom = pair_geometry(i, j, ctx)
    p = ctx.params
    w = base_weight(ctx.cloud.xyz[i], ctx.cloud.xyz[j], p)

    if geom.theta_h > np.pi / 2.0:
        diff_h = float(np.linalg.norm(ctx.centroid_dh[i] - ctx.centroid_dh[j]))
        w *= float(np.exp(-p.w_h * (ctx.k_h / max(geom.d_h, DIST_EPS)) * diff_h))

    agh = ctx.cloud.require_agh()
    if agh[i] > agh[j]:
        taller, lower = i, j
    elif agh[j] > agh[i]:
        taller, lower = j, i
    else:
        taller = lower = None    # exact height tie: divergence undefined
    if taller is not None:
        dz_t, dz_l = ctx.centroid_dz[taller], ctx.centroid_dz[lower]
        if np.sign(dz_t) != np.sign(dz_l) and dz_t >= 0:
            diff_z = abs(ctx.centroid_dz[i] - ctx.centroid_dz[j])
            w *= float(np.exp(-p.w_z * (ctx.k_z / max(geom.d_z, DIST_EPS)) * diff_z))
    return w


def weight_rows(ctx: GraphContext, sample, budget_bytes: int = DEFAULT_BUDGET_BYTES) -> np.ndarray:
    """Adjusted weights between ``sample`` points and every point.

    Returns the dense (len(sample), n) block; entries where the row and
    column index coincide are 0.  Symmetric wherever both indices are
    sampled.  Raises ResourceError when the block would not fit in the
    memory budget.
    """
    sample = np.asarray(sample, dtype=np.int64)
    if sample.size == 0:
        raise ParameterError("sample must be non-empty")
    n = len(ctx.cloud)
    if sample.size * n * 8 > budget_bytes:
        raise ResourceError(
            f"weight block of {sample.size} x {n} doubles exceeds the "
            f"{budget_bytes / 2**30:.1f} GiB budget; use a smaller sample"
        )
    p = ctx.params
    xyz = ctx.cloud.xyz
    agh = ctx.cloud.require_agh()
    dh_vec = ctx.centroid_dh
    dz_vec = ctx.centroid_dz

    sx = xyz[sample]
    d_h2 = (sx[:, 0:1] - xyz[None, :, 0]) ** 2 + (sx[:, 1:2] - xyz[None, :, 1]) ** 2
    d_z = np.abs(sx[:, 2:3] - xyz[None, :, 2])
    w = np.exp(-d_h2 / p.sigma_xy**2) * np.exp(-(d_z**2) / p.sigma_z**2)

    # Horizontal correction where centroid vectors point > 90 degrees apart.
    dots = dh_vec[sample] @ dh_vec.T
    norms = np.linalg.norm(dh_vec, axis=1)
    apart = (dots < 0) & (norms[sample, None] > 0) & (norms[None, :] > 0)
    if apart.any():
        ri, ci = np.nonzero(apart)
        diff_h = np.linalg.norm(dh_vec[sample[ri]] - dh_vec[ci], axis=1)
        d_h = np.sqrt(d_h2[ri, ci])
        w[ri, ci] *= np.exp(-p.w_h * (ctx.k_h / np.maximum(d_h, DIST_EPS)) * diff_h)

    # Vertical correction where centroid verticals diverge.
    sign = np.sign(dz_vec)
    agh_s = agh[sample]
    i_taller = agh_s[:, None] > agh[None, :]
    j_taller = agh_s[:, None] < agh[None, :]
    taller_dz = np.where(i_taller, dz_vec[sample, None], dz_vec[None, :])
    signs_differ = sign[sample, None] != sign[None, :]
    diverge = (i_taller | j_taller) & signs_differ & (taller_dz >= 0)
    if diverge.any():
        ri, ci = np.nonzero(diverge)
        diff_z = np.abs(dz_vec[sample[ri]] - dz_vec[ci])
        w[ri, ci] *= np.exp(-p.w_z * (ctx.k_z / np.maximum(d_z[ri, ci], DIST_EPS)) * diff_z)

    w[np.arange(sample.size), sample] = 0.0
    return w


def weight_matrix(
    cloud: PointCloud,
    ctx: GraphContext,
    sample,
    budget_bytes: int = DEFAULT_BUDGET_BYTES,
) -> np.ndarray:
    """Spec-facing wrapper: dense weight block for ``sample`` x all points."""
    if ctx.cloud is not cloud and len(ctx.cloud) != len(cloud):
        raise ParameterError("context was built for a different cloud")
    return weight_rows(ctx, sample, budget_bytes)
