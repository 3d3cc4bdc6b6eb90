"""Tree allometry: crown-diameter, DBH and height power laws.

All relationships are simple power laws ``y = alpha * x**beta`` with
region-fitted coefficients.  The defaults are a regional Indo-Malaya fit;
every coefficient can be overridden from a ``key = value`` config file so
other biomes can plug in their own numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, ParameterError


@dataclass(frozen=True)
class PowerLaw:
    """Strictly increasing power law ``alpha * x**beta`` for x > 0."""

    alpha: float
    beta: float
    x_units: str = ""
    y_units: str = ""

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ParameterError(f"power law needs alpha, beta > 0 (got {self.alpha}, {self.beta})")

    def evaluate(self, x):
        x = np.asarray(x, dtype=np.float64)
        if np.any(x <= 0):
            raise ParameterError("power law argument must be > 0")
        out = self.alpha * np.power(x, self.beta)
        return float(out) if out.ndim == 0 else out

    __call__ = evaluate


SOIL_TYPES = ("Alluvial", "Kerangas", "Sandstone")


def _default_h_from_d():
    return {
        "Alluvial": PowerLaw(2.105, 0.679, "cm", "m"),
        "Kerangas": PowerLaw(4.57, 0.461, "cm", "m"),
        "Sandstone": PowerLaw(4.001, 0.527, "cm", "m"),
    }


@dataclass(frozen=True)
class AllometrySet:
    """Bundle of the crown/stem scaling laws used across the pipeline.

    ``cd50``/``cd95`` map tree height to the median and upper-boundary
    crown diameter, ``dbh_from_h`` maps height to stem diameter, and
    ``h_from_d`` maps stem diameter to height per soil type.  ``h_min`` /
    ``h_max`` bound the height range the fits are valid over.
    """

    cd50: PowerLaw = PowerLaw(0.251, 0.830, "m", "m")
    cd95: PowerLaw = PowerLaw(0.446, 0.854, "m", "m")
    dbh_from_h: PowerLaw = PowerLaw(0.252, 1.465, "m", "cm")
    h_from_d: dict = field(default_factory=_default_h_from_d)
    h_min: float = 1.4
    h_max: float = 70.7

    def crown_diameter(self, h, percentile: str = "p95"):
        """Crown diameter (m) at height ``h`` for percentile p50 or p95."""
        if percentile == "p50":
            return self.cd50.evaluate(h)
        if percentile == "p95":
            return self.cd95.evaluate(h)
        raise ParameterError(f"unknown percentile {percentile!r} (use 'p50' or 'p95')")

    def dbh_from_height(self, h):
        """Stem diameter at breast height (cm) from tree height (m)."""
        return self.dbh_from_h.evaluate(h)

    def height_from_dbh(self, d, soil: str):
        """Tree height (m) from stem diameter (cm) for a soil type."""
        try:
            law = self.h_from_d[soil]
        except KeyError:
            raise InputError(f"unknown soil type {soil!r}; expected one of {sorted(self.h_from_d)}") from None
        return law.evaluate(d)

    def radius_table(self, step: float = 0.1) -> "RadiusTable":
        return RadiusTable.build(self, step=step)


@dataclass(frozen=True)
class RadiusTable:
    """Height -> maximum feasible crown radius lookup in 0.1 m steps.

    Radii follow the 95th-percentile diameter law; heights beyond
    ``cap_height`` reuse the cap's radius so oversized trees never get a
    radius outside the fitted range.
    """

    radii: np.ndarray = field(repr=False)    # index i => height i*step
    step: float
    cap_height: float

    @classmethod
    def build(cls, allom: AllometrySet, step: float = 0.1) -> "RadiusTable":
        cap = allom.h_max
        n = int(round(cap / step)) + 1
        heights = np.arange(1, n) * step
        radii = np.concatenate([[0.0], allom.cd95.evaluate(heights) / 2.0])
        # Entry 0 (height 0) never queried through max_radius; keep it 0.
        return cls(radii, step, cap)

    def max_radius(self, h: float) -> float:
        """Max crown radius (m) for a tree of height ``h`` (nearest step)."""
        if h <= 0:
            raise ParameterError("height must be > 0")
        idx = int(np.rint(min(h, self.cap_height) / self.step))
        idx = min(max(idx, 1), len(self.radii) - 1)
        return float(self.radii[idx])


def crown_diameter(h, percentile: str, allom: AllometrySet | None = None):
    allom = allom or AllometrySet()
    return allom.crown_diameter(h, percentile)


def max_radius(h: float, table: RadiusTable) -> float:
    return table.max_radius(h)


def dbh_from_height(h, allom: AllometrySet | None = None):
    allom = allom or AllometrySet()
    return allom.dbh_from_height(h)


def height_from_dbh(d, soil: str, allom: AllometrySet | None = None):
    allom = allom or AllometrySet()
    return allom.height_from_dbh(d, soil)


# Config keys -> (attribute path); soil laws handled separately.
_CONFIG_KEYS = {
    "cd50_alpha": ("cd50", "alpha"),
    "cd50_beta": ("cd50", "beta"),
    "cd95_alpha": ("cd95", "alpha"),
    "cd95_beta": ("cd95", "beta"),
    "dbh_alpha": ("dbh_from_h", "alpha"),
    "dbh_beta": ("dbh_from_h", "beta"),
    "h_min": ("h_min", None),
    "h_max": ("h_max", None),
}


def load_allometry_config(path, base: AllometrySet | None = None) -> AllometrySet:
    """Read ``key = value`` overrides and return an updated AllometrySet.

    Recognised keys: ``cd50_alpha``, ``cd50_beta``, ``cd95_alpha``,
    ``cd95_beta``, ``dbh_alpha``, ``dbh_beta``, ``h_min``, ``h_max`` and
    ``h_<soil>_alpha`` / ``h_<soil>_beta`` for each soil type.
    """
    base = base or AllometrySet()
    own = not hasattr(path, "read")
    fh = open(path, "r", encoding="utf-8") if own else path
    try:
        overrides = {}
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise InputError(f"allometry config line {lineno}: expected 'key = value'")
            key, _, val = text.partition("=")
            key = key.strip().lower()
            try:
                overrides[key] = float(val.strip())
            except ValueError:
                raise InputError(f"allometry config line {lineno}: non-numeric value {val.strip()!r}") from None
    finally:
        if own:
            fh.close()

    laws = {"cd50": dict(alpha=base.cd50.alpha, beta=base.cd50.beta),
            "cd95": dict(alpha=base.cd95.alpha, beta=base.cd95.beta),
            "dbh_from_h": dict(alpha=base.dbh_from_h.alpha, beta=base.dbh_from_h.beta)}
    soils = {s: dict(alpha=base.h_from_d[s].alpha, beta=base.h_from_d[s].beta) for s in base.h_from_d}
    scalars = {"h_min": base.h_min, "h_max": base.h_max}

    for key, value in overrides.items():
        if key in _CONFIG_KEYS:
            attr, part = _CONFIG_KEYS[key]
            if part is None:
                scalars[attr] = value
            else:
                laws[attr][part] = value
            continue
        matched = False
        for soil in soils:
            if key == f"h_{soil.lower()}_alpha":
                soils[soil]["alpha"] = value
                matched = True
            elif key == f"h_{soil.lower()}_beta":
                soils[soil]["beta"] = value
                matched = True
        if not matched:
            raise InputError(f"unknown allometry config key {key!r}")

    return replace(
        base,
        cd50=PowerLaw(laws["cd50"]["alpha"], laws["cd50"]["beta"], "m", "m"),
        cd95=PowerLaw(laws["cd95"]["alpha"], laws["cd95"]["beta"], "m", "m"),
        dbh_from_h=PowerLaw(laws["dbh_from_h"]["alpha"], laws["dbh_from_h"]["beta"], "m", "cm"),
        h_from_d={s: PowerLaw(v["alpha"], v["beta"], "cm", "m") for s, v in soils.items()},
        h_min=scalars["h_min"],
        h_max=scalars["h_max"],
    )
