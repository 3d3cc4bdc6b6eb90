"""Point cloud ingestion, height normalisation and canopy rasterisation.

Clouds are plain columnar text (``x y z [class]``, whitespace or comma
separated, ``#`` comments ignored).  Class codes follow the usual airborne
laser convention: 2 is ground, 7 is noise, anything else is treated as
vegetation or unclassified.  Noise points are dropped on load.

Heights above ground (``agh``) are derived by subtracting a gridded ground
model: the per-cell minimum elevation of ground-classified points, with
empty cells filled from their nearest non-empty neighbour.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InputError

GROUND_CLASS = 2
NOISE_CLASS = 7


@dataclass
class PointCloud:
    """Georeferenced points with optional above-ground heights.

    Point indices (row positions in ``xyz``) are stable identifiers for
    the lifetime of a run; every stage refers back to them.
    """

    xyz: np.ndarray                  # (n, 3) float64, columns x, y, z
    class_code: np.ndarray           # (n,) int
    agh: np.ndarray | None = None    # (n,) float64, >= 0 once normalised
    crs_note: str = ""

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.class_code = np.asarray(self.class_code, dtype=np.int64).reshape(-1)
        if self.class_code.shape[0] != self.xyz.shape[0]:
            raise InputError("class_code length does not match point count")
        if self.agh is not None:
            self.agh = np.asarray(self.agh, dtype=np.float64).reshape(-1)
            if self.agh.shape[0] != self.xyz.shape[0]:
                raise InputError("agh length does not match point count")
        if not np.all(np.isfinite(self.xyz)):
            raise InputError("point coordinates must be finite")

    def __len__(self) -> int:
        return self.xyz.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.xyz[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.xyz[:, 1]

    @property
    def z(self) -> np.ndarray:
        return self.xyz[:, 2]

    def require_agh(self) -> np.ndarray:
        if self.agh is None:
            raise InputError("cloud is not height-normalised (agh missing)")
        return self.agh

    def subset(self, indices: np.ndarray) -> "PointCloud":
        """New cloud restricted to ``indices`` (order preserved)."""
        indices = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            self.xyz[indices],
            self.class_code[indices],
            None if self.agh is None else self.agh[indices],
            self.crs_note,
        )


@dataclass(frozen=True)
class Raster:
    """Regular grid of canopy heights; NaN marks empty cells.

    Row 0 sits at ``origin_y`` (southern edge) and rows increase northward;
    column 0 sits at ``origin_x``.
    """

    origin_x: float
    origin_y: float
    cell_size: float
    values: np.ndarray = field(repr=False)   # (height, width) float64

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (
            self.origin_x + (col + 0.5) * self.cell_size,
            self.origin_y + (row + 0.5) * self.cell_size,
        )

    def filled(self, empty_value: float = 0.0) -> np.ndarray:
        """Values with empty cells replaced by ``empty_value``."""
        out = self.values.copy()
        out[np.isnan(out)] = empty_value
        return out


def _parse_rows(lines, n_columns_allowed):
    rows = []
    for lineno, raw in lines:
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.replace(",", " ").split()
        if len(parts) not in n_columns_allowed:
            raise InputError(
                f"line {lineno}: expected {sorted(n_columns_allowed)} columns, got {len(parts)}"
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise InputError(f"line {lineno}: {exc}") from None
    return rows


def load_cloud(path, fmt: str = "auto") -> PointCloud:
    """Load a cloud from columnar text, dropping noise-classified points.

    Parameters
    ----------
    path : str or file-like
        Input file.  Rows hold 3 (``xyz_text``) or 4 (``xyzc_text``)
        numeric fields; 3-column rows default to class 0.
    fmt : {"xyz_text", "xyzc_text", "auto"}
        Expected column layout; ``auto`` accepts either.
    """
    widths = {"xyz_text": {3}, "xyzc_text": {4}, "auto": {3, 4}}
    if fmt not in widths:
        raise InputError(f"unknown cloud format {fmt!r}")
    if hasattr(path, "read"):
        lines = list(enumerate(path.read().splitlines(), start=1))
    else:
        with open(path, "r", encoding="utf-8") as fh:
            lines = list(enumerate(fh, start=1))
    rows = _parse_rows(lines, widths[fmt])
    if not rows:
        raise InputError("empty input: no point rows found")
    data = np.asarray(rows, dtype=np.float64)
    if data.shape[1] == 3:
        classes = np.zeros(data.shape[0], dtype=np.int64)
    else:
        classes = data[:, 3].astype(np.int64)
    keep = classes != NOISE_CLASS
    return PointCloud(data[keep, :3], classes[keep])


def load_normalized_cloud(path) -> PointCloud:
    """Load a 5-column cloud written by :func:`save_cloud` (x y z class agh)."""
    if hasattr(path, "read"):
        lines = list(enumerate(path.read().splitlines(), start=1))
    else:
        with open(path, "r", encoding="utf-8") as fh:
            lines = list(enumerate(fh, start=1))
    rows = _parse_rows(lines, {5})
    if not rows:
        raise InputError("empty input: no point rows found")
    data = np.asarray(rows, dtype=np.float64)
    classes = data[:, 3].astype(np.int64)
    keep = classes != NOISE_CLASS
    return PointCloud(data[keep, :3], classes[keep], data[keep, 4])


def load_cloud_any(path) -> PointCloud:
    """Load a cloud whatever its column count (3, 4, or 5 with agh)."""
    if hasattr(path, "read"):
        text = path.read()
        lines = list(enumerate(text.splitlines(), start=1))
    else:
        with open(path, "r", encoding="utf-8") as fh:
            lines = list(enumerate(fh, start=1))
    ncols = None
    for _, raw in lines:
        t = raw.strip()
        if t and not t.startswith("#"):
            ncols = len(t.replace(",", " ").split())
            break
    if ncols is None:
        raise InputError("empty input: no point rows found")
    if ncols == 5:
        return _from_lines_normalized(lines)
    rows = _parse_rows(lines, {3, 4})
    data = np.asarray(rows, dtype=np.float64)
    if data.shape[1] == 3:
        classes = np.zeros(data.shape[0], dtype=np.int64)
    else:
        classes = data[:, 3].astype(np.int64)
    keep = classes != NOISE_CLASS
    return PointCloud(data[keep, :3], classes[keep])


def _from_lines_normalized(lines) -> PointCloud:
    rows = _parse_rows(lines, {5})
    data = np.asarray(rows, dtype=np.float64)
    classes = data[:, 3].astype(np.int64)
    keep = classes != NOISE_CLASS
    return PointCloud(data[keep, :3], classes[keep], data[keep, 4])


def save_cloud(cloud: PointCloud, path) -> None:
    """Write ``x y z class [agh]`` rows; agh column appended when present."""
    own = not hasattr(path, "write")
    fh = open(path, "w", encoding="utf-8") if own else path
    try:
        agh = cloud.agh
        for i in range(len(cloud)):
            x, y, z = cloud.xyz[i]
            row = f"{x:.6f} {y:.6f} {z:.6f} {cloud.class_code[i]}"
            if agh is not None:
                row += f" {agh[i]:.6f}"
            fh.write(row + "\n")
    finally:
        if own:
            fh.close()


def _ground_grid(cloud: PointCloud, cell: float):
    """Gridded minimum of ground points, holes filled from nearest cell."""
    x, y = cloud.x, cloud.y
    ox, oy = float(x.min()), float(y.min())
    width = max(1, int(np.ceil((x.max() - ox) / cell)) or 1)
    height = max(1, int(np.ceil((y.max() - oy) / cell)) or 1)
    cols = np.minimum(((x - ox) / cell).astype(np.int64), width - 1)
    rows = np.minimum(((y - oy) / cell).astype(np.int64), height - 1)

    ground = cloud.class_code == GROUND_CLASS
    grid = np.full((height, width), np.inf)
    np.minimum.at(grid, (rows[ground], cols[ground]), cloud.z[ground])
    empty = ~np.isfinite(grid)
    if empty.all():
        raise InputError("no ground-classified points for the ground model")
    if empty.any():
        # Nearest-cell hole fill; EDT index ties resolve by scan order.
        _, (fr, fc) = ndimage.distance_transform_edt(empty, return_indices=True)
        grid = grid[fr, fc]
    return grid, rows, cols


def normalize_heights(
    cloud: PointCloud, ground_cell: float = 1.0, flat_fallback: bool = False
) -> PointCloud:
    """Attach above-ground heights from a gridded-minimum ground model.

    Each point's ``agh`` is its elevation minus the ground model value of
    the cell it falls in, clamped at zero.  When fewer than 3 ground points
    exist, ``flat_fallback`` substitutes a constant ground at the cloud's
    minimum elevation; otherwise this is an error.
    """
    if len(cloud) == 0:
        raise InputError("empty input: cannot normalise an empty cloud")
    n_ground = int(np.sum(cloud.class_code == GROUND_CLASS))
    if n_ground < 3:
        if not flat_fallback:
            raise InputError(
                f"ground model needs >= 3 ground points (found {n_ground}); "
                "pass flat_fallback=True to assume level ground"
            )
        ground_z = float(cloud.z.min())
        agh = cloud.z - ground_z
    else:
        grid, rows, cols = _ground_grid(cloud, ground_cell)
        agh = cloud.z - grid[rows, cols]
    agh = np.maximum(agh, 0.0)
    return PointCloud(cloud.xyz.copy(), cloud.class_code.copy(), agh, cloud.crs_note)


def rasterize_chm(cloud: PointCloud, cell_size: float = 0.5) -> Raster:
    """Canopy height model: per-cell maximum agh on a tight bounding grid."""
    if len(cloud) == 0:
        raise InputError("empty input: cannot rasterise an empty cloud")
    agh = cloud.require_agh()
    x, y = cloud.x, cloud.y
    ox, oy = float(x.min()), float(y.min())
    width = max(1, int(np.ceil((x.max() - ox) / cell_size)) or 1)
    height = max(1, int(np.ceil((y.max() - oy) / cell_size)) or 1)
    cols = np.minimum(((x - ox) / cell_size).astype(np.int64), width - 1)
    rows = np.minimum(((y - oy) / cell_size).astype(np.int64), height - 1)
    values = np.full((height, width), -np.inf)
    np.maximum.at(values, (rows, cols), agh)
    values[~np.isfinite(values)] = np.nan
    return Raster(ox, oy, cell_size, values)
