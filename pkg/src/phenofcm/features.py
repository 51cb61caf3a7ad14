"""Predictor variables: vegetation indices, weather aggregates, element space.

The candidate pool combines four categories: the acquisition-time encoding
(sin/cos of DoY), single-date vegetation indices from Sentinel-2 band
reflectances, their cumulative integrals from the season start, and running
accumulations of daily weather/soil variables. Accumulations anchor at the
season start DoY (default 100, around the earliest sowing in the study area)
so that every feature carries the relative temporal progression of the crop.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .data_model import FieldSeries
from .errors import FeatureMismatchError, ValidationError

log = logging.getLogger(__name__)

#: Season start for accumulated/integrated variables.
DEFAULT_START_DOY = 100

#: Cotton base temperature (deg C) below which no development occurs.
GDD_BASE_TEMPERATURE = 15.6

#: Features forced into every feature set; they fix the time frame.
FORCED_FEATURES = ("sin_doy", "cos_doy")

SATELLITE_BANDS = ("B02", "B03", "B04", "B06", "B08", "B11", "B12")

WEATHER_COLUMNS = ("tmax2m", "tmin2m", "surf_tmax", "surf_tmin", "soil_tmax",
                   "soil_tmin", "soil_moist_min", "soil_moist_max", "precip",
                   "rad_max")

_EPS = 1e-12


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """Elementwise num/den with near-zero denominators mapped to NaN."""
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.full(np.broadcast(num, den).shape, np.nan)
    ok = np.abs(den) > _EPS
    np.divide(num, den, out=out, where=ok)
    return out


def _ndvi(b):
    return _safe_div(b["B08"] - b["B04"], b["B08"] + b["B04"])


def _ndwi(b):
    return _safe_div(b["B03"] - b["B08"], b["B08"] + b["B03"])


def _ndmi(b):
    return _safe_div(b["B08"] - b["B11"], b["B08"] + b["B11"])


def _psri(b):
    return _safe_div(b["B04"] - b["B02"], b["B06"])


def _savi(b):
    return _safe_div(b["B08"] - b["B04"], b["B08"] + b["B04"] + 0.428) * (1.0 + 0.428)


def _evi(b):
    return _safe_div(2.5 * (b["B08"] - b["B04"]),
                     b["B08"] + 6.0 * b["B04"] - 7.5 * b["B02"] + 1.0)


def _vari_green(b):
    return _safe_div(b["B03"] - b["B04"], b["B03"] + b["B04"] - b["B02"])


def _gari(b):
    return _safe_div(b["B08"] - (b["B03"] - (b["B02"] - b["B04"])),
                     b["B08"] - (b["B03"] + (b["B02"] - b["B04"])))


def _sipi(b):
    return _safe_div(b["B08"] - b["B02"], b["B08"] - b["B04"])


def _wdrvi(b):
    return _safe_div(0.2 * b["B08"] - b["B04"], 0.2 * b["B08"] + b["B04"])


def _gvmi(b):
    return _safe_div((b["B08"] + 0.1) - (b["B12"] + 0.02),
                     (b["B08"] + 0.1) + (b["B12"] + 0.02))


#: VI name -> (band dependencies, array-valued formula).
VI_FORMULAS = {
    "NDVI": (("B08", "B04"), _ndvi),
    "NDWI": (("B03", "B08"), _ndwi),
    "NDMI": (("B08", "B11"), _ndmi),
    "PSRI": (("B04", "B02", "B06"), _psri),
    "SAVI": (("B08", "B04"), _savi),
    "EVI": (("B08", "B04", "B02"), _evi),
    "VARIgreen": (("B03", "B04", "B02"), _vari_green),
    "GARI": (("B08", "B03", "B02", "B04"), _gari),
    "SIPI": (("B08", "B02", "B04"), _sipi),
    "WDRVI": (("B08", "B04"), _wdrvi),
    "GVMI": (("B08", "B12"), _gvmi),
}

#: Accumulated weather feature -> daily source column ("gdd" is derived).
WEATHER_SOURCES = {
    "acc_gdd": "gdd",
    "acc_precip": "precip",
    "acc_rad_max": "rad_max",
    "acc_soil_tmax": "soil_tmax",
    "acc_soil_tmin": "soil_tmin",
    "acc_surf_tmax": "surf_tmax",
    "acc_surf_tmin": "surf_tmin",
    "acc_soil_moist_min": "soil_moist_min",
    "acc_soil_moist_max": "soil_moist_max",
}


@dataclass(frozen=True)
class Feature:
    name: str
    category: str  # time | vi | vi_integral | accumulated_weather


def _build_catalog() -> dict[str, Feature]:
    catalog = {name: Feature(name, "time") for name in FORCED_FEATURES}
    for vi in VI_FORMULAS:
        catalog[vi] = Feature(vi, "vi")
        catalog[f"int_{vi}"] = Feature(f"int_{vi}", "vi_integral")
    for name in WEATHER_SOURCES:
        catalog[name] = Feature(name, "accumulated_weather")
    return catalog


#: Every computable feature, tagged with its category.
FEATURES = _build_catalog()


def candidate_pool() -> tuple[str, ...]:
    """The 32-feature search pool: 2 time + 11 VI + 11 VI integrals + 8
    accumulated weather aggregates.

    The accumulated soil-moisture minimum stays out of the default pool (it
    is still computable on request) so the pool matches the documented
    32-feature budget; the remaining weather aggregates favour the maxima,
    which dominate the well-performing feature sets.
    """
    pool = [name for name, feat in FEATURES.items()
            if feat.name != "acc_soil_moist_min"]
    assert len(pool) == 32
    return tuple(pool)


def compute_vi(bands: Mapping[str, float]) -> dict[str, Optional[float]]:
    """All vegetation indices for one acquisition's band reflectances.

    A zero denominator yields None (missing, to be gap-filled downstream)
    rather than an exception.
    """
    for band in SATELLITE_BANDS:
        if band not in bands:
            raise ValidationError(f"missing band {band}")
        if not math.isfinite(bands[band]):
            raise ValidationError(f"non-finite reflectance for band {band}")
    arrays = {band: np.asarray([float(bands[band])]) for band in SATELLITE_BANDS}
    out: dict[str, Optional[float]] = {}
    for name, (_, formula) in VI_FORMULAS.items():
        value = float(formula(arrays)[0])
        out[name] = None if math.isnan(value) else value
    return out


def gdd(tmax: float, tmin: float, tbase: float = GDD_BASE_TEMPERATURE,
        convention: str = "mean") -> float:
    """Daily growing degree days, clamped at zero.

    ``convention="mean"`` (default) uses (Tmax+Tmin)/2 - Tbase, the standard
    agronomic definition. ``convention="half-range"`` uses
    (Tmax-Tmin)/2 - Tbase instead; see the README for why both exist.
    """
    if tmax < tmin:
        raise ValidationError(f"tmax {tmax} below tmin {tmin}")
    if convention == "mean":
        raw = (tmax + tmin) / 2.0 - tbase
    elif convention == "half-range":
        raw = (tmax - tmin) / 2.0 - tbase
    else:
        raise ValidationError(f"unknown GDD convention {convention!r}")
    return max(0.0, raw)


def gdd_series(tmax: np.ndarray, tmin: np.ndarray,
               tbase: float = GDD_BASE_TEMPERATURE,
               convention: str = "mean") -> np.ndarray:
    """Vectorized :func:`gdd` over daily arrays; NaN days stay NaN."""
    tmax = np.asarray(tmax, dtype=np.float64)
    tmin = np.asarray(tmin, dtype=np.float64)
    both = np.isfinite(tmax) & np.isfinite(tmin)
    if np.any(tmax[both] < tmin[both]):
        raise ValidationError("tmax below tmin in daily temperature series")
    if convention == "mean":
        raw = (tmax + tmin) / 2.0 - tbase
    elif convention == "half-range":
        raw = (tmax - tmin) / 2.0 - tbase
    else:
        raise ValidationError(f"unknown GDD convention {convention!r}")
    return np.where(np.isnan(raw), np.nan, np.maximum(raw, 0.0))


def gap_fill(doys: Sequence[int], values: Sequence[float]) -> np.ndarray:
    """Fill missing (NaN) entries of a series sampled at the given DoYs.

    Interior gaps are linearly interpolated on DoY; leading/trailing gaps
    take the nearest valid value. An all-missing series is an error.
    """
    doys = np.asarray(doys, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    valid = np.isfinite(values)
    if not valid.any():
        raise ValidationError("cannot gap-fill an all-missing series")
    if valid.all():
        return values.copy()
    # np.interp clamps outside the valid range, which is exactly the
    # nearest-value edge extension we want.
    return np.interp(doys, doys[valid], values[valid])


def cumulative_integral(doys: Sequence[int], values: Sequence[float],
                        start_doy: int = DEFAULT_START_DOY) -> np.ndarray:
    """Running trapezoidal integral of a gap-filled series over DoY.

    Everything before ``start_doy`` contributes zero; a segment straddling
    the start is clipped at it, interpolating the value there.
    """
    doys = np.asarray(doys, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(doys) > 1 and not np.all(np.diff(doys) > 0):
        raise ValidationError("DoYs must be strictly increasing")
    if not np.all(np.isfinite(values)):
        raise ValidationError("cumulative_integral requires a gap-filled series")
    out = np.zeros_like(values)
    total = 0.0
    for i in range(1, len(doys)):
        d0, d1 = doys[i - 1], doys[i]
        v0, v1 = values[i - 1], values[i]
        if d1 > start_doy:
            left = max(d0, start_doy)
            if left > d0:
                v0 = v0 + (v1 - v0) * (left - d0) / (d1 - d0)
            total += 0.5 * (v0 + v1) * (d1 - left)
        out[i] = total
    return out


def accumulate_weather(doys: Sequence[int], values: Sequence[float],
                       start_doy: int = DEFAULT_START_DOY) -> np.ndarray:
    """Running sum of a daily series from ``start_doy`` inclusive.

    Missing days simply contribute nothing; NaN values are treated as zero
    contribution with a logged warning.
    """
    doys = np.asarray(doys, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if np.isnan(values).any():
        log.warning("%d NaN values in daily series treated as zero contribution",
                    int(np.isnan(values).sum()))
        values = np.nan_to_num(values, nan=0.0)
    contrib = np.where(doys >= start_doy, values, 0.0)
    return np.cumsum(contrib)


def doy_encode(doy: int) -> tuple[float, float]:
    """(sin, cos) of the DoY angle 2*pi*doy/365.25."""
    if not 1 <= doy <= 366:
        raise ValidationError(f"DoY {doy} outside 1..366")
    angle = 2.0 * math.pi * doy / 365.25
    return math.sin(angle), math.cos(angle)


def _accumulated_at(weather_doys: np.ndarray, accumulated: np.ndarray,
                    targets: np.ndarray) -> np.ndarray:
    """Sample a running-sum series at target DoYs (0 before any data)."""
    idx = np.searchsorted(weather_doys, targets, side="right") - 1
    out = np.zeros(len(targets))
    have = idx >= 0
    out[have] = accumulated[idx[have]]
    return out


@dataclass(frozen=True)
class FeatureTable:
    """Raw (unstandardized) feature values, one row per (field, DoY)."""

    keys: tuple[tuple[str, int], ...]
    feature_names: tuple[str, ...]
    matrix: np.ndarray

    def column(self, name: str) -> np.ndarray:
        return self.matrix[:, self.feature_names.index(name)]

    def select(self, names: Sequence[str]) -> np.ndarray:
        missing = [n for n in names if n not in self.feature_names]
        if missing:
            raise FeatureMismatchError(
                f"features not present in table: {', '.join(missing)}")
        idx = [self.feature_names.index(n) for n in names]
        return self.matrix[:, idx]


@dataclass(frozen=True)
class ElementSpace:
    """Standardized K x E element matrix with the statistics that scaled it."""

    keys: tuple[tuple[str, int], ...]
    feature_names: tuple[str, ...]
    matrix: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    @property
    def n_elements(self) -> int:
        return self.matrix.shape[0]


def _field_feature_rows(sat: FieldSeries, weather: Optional[FieldSeries],
                        names: Sequence[str], start_doy: int,
                        gdd_convention: str) -> np.ndarray:
    """Feature rows for one field's full series (after-season view)."""
    j = len(sat)
    rows = np.empty((j, len(names)))
    vi_cache: dict[str, np.ndarray] = {}
    weather_cache: dict[str, np.ndarray] = {}

    def vi_values(vi_name: str) -> np.ndarray:
        if vi_name not in vi_cache:
            deps, formula = VI_FORMULAS[vi_name]
            missing = [b for b in deps if b not in sat.values]
            if missing:
                raise FeatureMismatchError(
                    f"field {sat.field_id}: feature {vi_name} needs band(s) "
                    f"{', '.join(missing)} absent from the satellite data")
            raw = formula(sat.values)
            vi_cache[vi_name] = gap_fill(sat.doys, raw)
        return vi_cache[vi_name]

    def weather_accumulated(feat_name: str) -> np.ndarray:
        if feat_name not in weather_cache:
            if weather is None:
                raise FeatureMismatchError(
                    f"field {sat.field_id}: feature {feat_name} needs daily "
                    f"weather data, none supplied")
            source = WEATHER_SOURCES[feat_name]
            if source == "gdd":
                for col in ("tmax2m", "tmin2m"):
                    if col not in weather.values:
                        raise FeatureMismatchError(
                            f"field {sat.field_id}: feature {feat_name} needs "
                            f"weather column {col}")
                daily = gdd_series(weather.values["tmax2m"],
                                   weather.values["tmin2m"],
                                   convention=gdd_convention)
            else:
                if source not in weather.values:
                    raise FeatureMismatchError(
                        f"field {sat.field_id}: feature {feat_name} needs "
                        f"weather column {source}")
                daily = weather.values[source]
            acc = accumulate_weather(weather.doys, daily, start_doy)
            weather_cache[feat_name] = _accumulated_at(weather.doys, acc,
                                                       sat.doys)
        return weather_cache[feat_name]

    for e, name in enumerate(names):
        if name == "sin_doy":
            rows[:, e] = [doy_encode(int(d))[0] for d in sat.doys]
        elif name == "cos_doy":
            rows[:, e] = [doy_encode(int(d))[1] for d in sat.doys]
        elif name in VI_FORMULAS:
            rows[:, e] = vi_values(name)
        elif name.startswith("int_") and name[4:] in VI_FORMULAS:
            rows[:, e] = cumulative_integral(sat.doys, vi_values(name[4:]),
                                             start_doy)
        elif name in WEATHER_SOURCES:
            rows[:, e] = weather_accumulated(name)
        elif name in sat.values:
            # Passthrough for raw columns carried by the series itself.
            rows[:, e] = gap_fill(sat.doys, sat.values[name])
        else:
            raise FeatureMismatchError(
                f"feature {name!r} is not computable: not in the catalog and "
                f"not a raw column of field {sat.field_id}")
    return rows


def compute_feature_table(sat_fields: Sequence[FieldSeries],
                          names: Sequence[str],
                          weather_fields: Optional[Mapping[str, FieldSeries]] = None,
                          start_doy: int = DEFAULT_START_DOY,
                          causal: bool = False,
                          gdd_convention: str = "mean") -> FeatureTable:
    """Compute raw feature values for every (field, acquisition DoY).

    With ``causal=True`` each row is computed from that field's series
    truncated at the row's own DoY, so no value consumes later acquisitions
    (the within-season view). Accumulations are causal either way; only
    gap-filling and the integrals can differ.
    """
    if not sat_fields:
        raise ValidationError("no field series supplied")
    names = tuple(names)
    keys: list[tuple[str, int]] = []
    blocks = []
    for sat in sorted(sat_fields, key=lambda f: f.field_id):
        if len(sat) == 0:
            continue
        weather = weather_fields.get(sat.field_id) if weather_fields else None
        if causal:
            rows = np.empty((len(sat), len(names)))
            for j, doy in enumerate(sat.doys):
                prefix = sat.truncated(int(doy))
                rows[j] = _field_feature_rows(prefix, weather, names,
                                              start_doy, gdd_convention)[-1]
        else:
            rows = _field_feature_rows(sat, weather, names, start_doy,
                                       gdd_convention)
        keys.extend((sat.field_id, int(d)) for d in sat.doys)
        blocks.append(rows)
    if not blocks:
        raise ValidationError("all field series are empty")
    return FeatureTable(tuple(keys), names, np.vstack(blocks))


def element_space_from_table(table: FeatureTable, selected: Sequence[str],
                             stats: Optional[tuple[np.ndarray, np.ndarray]] = None,
                             ) -> ElementSpace:
    """Select columns and z-score them.

    Without ``stats`` the per-column mean/std are fitted from the table
    (training); with ``stats`` the given statistics are applied unchanged
    (inference). Near-constant columns keep scale 1 to avoid blow-ups.
    """
    selected = tuple(selected)
    matrix = table.select(selected).astype(np.float64)
    if not np.all(np.isfinite(matrix)):
        raise ValidationError("element space contains non-finite values")
    if stats is None:
        mean = matrix.mean(axis=0)
        std = matrix.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)
    else:
        mean, std = (np.asarray(s, dtype=np.float64) for s in stats)
        if mean.shape != (len(selected),) or std.shape != (len(selected),):
            raise FeatureMismatchError(
                f"standardization statistics have wrong shape for "
                f"{len(selected)} features")
    return ElementSpace(table.keys, selected, (matrix - mean) / std, mean, std)


def assemble_element_space(sat_fields: Sequence[FieldSeries],
                           selected: Sequence[str],
                           weather_fields: Optional[Mapping[str, FieldSeries]] = None,
                           start_doy: int = DEFAULT_START_DOY,
                           stats: Optional[tuple[np.ndarray, np.ndarray]] = None,
                           causal: bool = False,
                           gdd_convention: str = "mean") -> ElementSpace:
    """One-shot feature computation + standardization for a feature set.

    The time-frame features sin_doy/cos_doy are always included.
    """
    selected = tuple(selected)
    for forced in FORCED_FEATURES:
        if forced not in selected:
            raise ValidationError(
                f"feature set must include the time features "
                f"{' and '.join(FORCED_FEATURES)}")
    table = compute_feature_table(sat_fields, selected, weather_fields,
                                  start_doy, causal, gdd_convention)
    return element_space_from_table(table, selected, stats)


def load_satellite_csv(path) -> list[FieldSeries]:
    """Read the per-field satellite CSV (band reflectances at acquisitions)."""
    return _load_series_csv(path, SATELLITE_BANDS)


def load_weather_csv(path) -> dict[str, FieldSeries]:
    """Read the per-field daily weather CSV, keyed by field id."""
    return {fs.field_id: fs for fs in _load_series_csv(path, WEATHER_COLUMNS)}


def _load_series_csv(path, columns: tuple[str, ...]) -> list[FieldSeries]:
    import csv

    from .errors import ParseError

    per_field: dict[str, list[tuple[int, list[float]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ("field_id", "doy") + columns
        if header is None or tuple(h.strip() for h in header) != expected:
            raise ParseError(f"{path}: missing or wrong header, expected "
                             f"{','.join(expected)}")
        for row_num, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(expected):
                raise ParseError(f"row {row_num}: expected {len(expected)} "
                                 f"columns, got {len(row)}")
            field_id = row[0].strip()
            try:
                doy = int(row[1])
                vals = [float(cell) if cell.strip() else math.nan
                        for cell in row[2:]]
            except ValueError:
                raise ParseError(f"row {row_num}: malformed numeric value") from None
            per_field.setdefault(field_id, []).append((doy, vals))
    out = []
    for field_id, records in sorted(per_field.items()):
        records.sort(key=lambda r: r[0])
        doys = np.asarray([r[0] for r in records])
        data = np.asarray([r[1] for r in records])
        out.append(FieldSeries(field_id, doys,
                               {col: data[:, i] for i, col in enumerate(columns)}))
    return out
