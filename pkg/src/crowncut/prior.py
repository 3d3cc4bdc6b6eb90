"""Tree-top prior: variable-window local maxima on the canopy height model.

Each CHM cell competes within a circular window whose radius is half the
median allometric crown diameter for the cell's own height, so tall trees
suppress maxima over a wider area.  The count of surviving maxima sets the
lower bound on the number of crowns to segment; the upper bound is twice
that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.sparse import csgraph, csr_matrix
from scipy.spatial import cKDTree

from .allometry import AllometrySet
from .cloud import Raster
from .errors import InputError


@dataclass(frozen=True)
class PriorResult:
    maxima: list            # (x, y, height) at cell centers, lexicographic cell order
    k_min: int
    k_max: int


def _footprint_for_sq(radius_sq_cells: int) -> np.ndarray:
    """Boolean window of integer offsets with dr^2 + dc^2 <= radius_sq_cells."""
    rc = math.isqrt(radius_sq_cells)
    rr, cc = np.ogrid[-rc:rc + 1, -rc:rc + 1]
    return (rr * rr + cc * cc) <= radius_sq_cells


def find_local_maxima(
    chm: Raster, allom: AllometrySet | None = None, min_tree_height: float = 2.0
) -> PriorResult:
    """Find tree-top cells and the [k_min, k_max] cluster-count range.

    A cell is a maximum iff its value is >= every cell value within the
    horizontal radius ``cd50(value) / 2`` and >= ``min_tree_height``.
    Equal-valued cells lying within each other's windows form a chain; only
    the lexicographically smallest (row, col) of each chain is kept.  Empty
    cells count as height 0.
    """
    allom = allom or AllometrySet()
    values = chm.filled(0.0)
    if values.size == 0:
        raise InputError("empty CHM")
    cell = chm.cell_size

    candidate_mask = values >= min_tree_height
    if not candidate_mask.any():
        return PriorResult([], 0, 0)

    # Squared window radius in cell units, floored to the integer lattice so
    # cells at exactly the boundary distance are included.
    radius_m = np.zeros_like(values)
    radius_m[candidate_mask] = allom.cd50.evaluate(values[candidate_mask]) / 2.0
    radius_sq = np.floor((radius_m / cell) ** 2 + 1e-9).astype(np.int64)

    is_max = np.zeros_like(candidate_mask)
    for rsq in np.unique(radius_sq[candidate_mask]):
        group = candidate_mask & (radius_sq == rsq)
        if rsq == 0:
            is_max |= group    # window covers only the cell itself
            continue
        footprint = _footprint_for_sq(int(rsq))
        local_max = ndimage.maximum_filter(values, footprint=footprint, mode="constant", cval=0.0)
        is_max |= group & (values >= local_max)

    rows, cols = np.nonzero(is_max)
    if rows.size == 0:
        return PriorResult([], 0, 0)

    # Tie-breaking: equal-valued maxima within each other's windows chain
    # together; keep the lexicographically smallest cell per chain.
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    heights = values[rows, cols]
    cand_rsq = radius_sq[rows, cols]

    keep = np.ones(rows.size, dtype=bool)
    if rows.size > 1 and cand_rsq.max() > 0:
        grid_pts = np.column_stack([rows, cols]).astype(np.float64)
        tree = cKDTree(grid_pts)
        pairs = tree.query_pairs(math.sqrt(float(cand_rsq.max())) + 1e-9, output_type="ndarray")
        if pairs.size:
            i, j = pairs[:, 0], pairs[:, 1]
            d2 = (rows[i] - rows[j]) ** 2 + (cols[i] - cols[j]) ** 2
            linked = (heights[i] == heights[j]) & ((d2 <= cand_rsq[i]) | (d2 <= cand_rsq[j]))
            i, j = i[linked], j[linked]
            if i.size:
                n = rows.size
                adj = csr_matrix((np.ones(i.size), (i, j)), shape=(n, n))
                n_comp, comp = csgraph.connected_components(adj, directed=False)
                for c in range(n_comp):
                    members = np.nonzero(comp == c)[0]
                    if members.size > 1:
                        keep[members[1:]] = False   # members sorted lexicographically

    maxima = []
    for idx in np.nonzero(keep)[0]:
        x, y = chm.cell_center(int(rows[idx]), int(cols[idx]))
        maxima.append((x, y, float(heights[idx])))
    k_min = len(maxima)
    return PriorResult(maxima, k_min, 2 * k_min)
