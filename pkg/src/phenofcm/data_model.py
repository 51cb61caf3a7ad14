"""Core domain types: growth stages, metaclasses, ground observations.

Cotton growth is described by six ordered principal stages. A field in
transition carries two adjacent stage labels (primary + secondary), which
collapse into one of 16 ordered "metaclasses". The metaclass index is the
single ordinal scale used by every evaluation metric downstream.
"""

from __future__ import annotations

import csv
import datetime as dt
from collections import Counter
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ParseError, ValidationError


class StageLabel(IntEnum):
    """The six principal phenological stages, ordered by growth."""

    RE = 1  # root establishment
    LD = 2  # leaf development
    S = 3   # squaring
    F = 4   # flowering
    BD = 5  # boll development
    BO = 6  # boll opening

    def __str__(self) -> str:
        return self.name


STAGES = tuple(StageLabel)


def parse_stage(token: str) -> StageLabel:
    try:
        return StageLabel[token]
    except KeyError:
        raise ValidationError(f"unknown stage token {token!r}; expected one of "
                              f"{', '.join(s.name for s in STAGES)}") from None


@dataclass(frozen=True)
class Metaclass:
    """A single- or two-label growth descriptor on the 16-element ordinal scale.

    The secondary stage, when present, is ordinally adjacent to the primary.
    Index layout along the scale: each stage p owns the unit set at 3p-2,
    the ascending pair (p, p+1) at 3p-1 and the descending pair (p, p-1)
    at 3(p-1), which yields
    1=(RE,-), 2=(RE,LD), 3=(LD,RE), 4=(LD,-), ..., 15=(BO,BD), 16=(BO,-).
    """

    primary: StageLabel
    secondary: Optional[StageLabel] = None

    def __post_init__(self) -> None:
        if self.secondary is not None and abs(self.primary - self.secondary) != 1:
            raise ValidationError(
                f"secondary stage {self.secondary} is not adjacent to primary "
                f"{self.primary}; valid pairs differ by exactly one position")

    @property
    def index(self) -> int:
        p = int(self.primary)
        if self.secondary is None:
            return 3 * p - 2
        if self.secondary > self.primary:
            return 3 * p - 1
        return 3 * (p - 1)

    def __str__(self) -> str:
        if self.secondary is None:
            return f"({self.primary}, -)"
        return f"({self.primary}, {self.secondary})"


def metaclass_from_labels(primary: StageLabel,
                          secondary: Optional[StageLabel] = None) -> Metaclass:
    """Build the metaclass for a (primary, optional secondary) pair."""
    return Metaclass(StageLabel(primary),
                     None if secondary is None else StageLabel(secondary))


def _build_scale() -> tuple[Metaclass, ...]:
    scale = []
    for p in STAGES:
        if p > StageLabel.RE:
            scale.append(Metaclass(p, StageLabel(p - 1)))
        scale.append(Metaclass(p))
        if p < StageLabel.BO:
            scale.append(Metaclass(p, StageLabel(p + 1)))
    return tuple(sorted(scale, key=lambda mc: mc.index))


#: All 16 valid metaclasses in ordinal order; METACLASS_SCALE[i - 1] has index i.
METACLASS_SCALE = _build_scale()


def metaclass_from_index(index: int) -> Metaclass:
    if not 1 <= index <= 16:
        raise ValidationError(f"metaclass index {index} outside 1..16")
    return METACLASS_SCALE[index - 1]


@dataclass(frozen=True)
class GroundObservation:
    """One field visit: stage labels with prevalence, plus season dates."""

    field_id: str
    visit_date: dt.date
    primary: StageLabel
    primary_pct: int
    secondary: Optional[StageLabel]
    secondary_pct: Optional[int]
    sowing_date: dt.date
    harvest_date: dt.date

    def __post_init__(self) -> None:
        if (self.secondary is None) != (self.secondary_pct is None):
            raise ValidationError(
                f"field {self.field_id}: secondary stage and prevalence must "
                f"be given together")
        if self.secondary_pct is not None and self.primary_pct < self.secondary_pct:
            raise ValidationError(
                f"field {self.field_id}: primary prevalence {self.primary_pct} "
                f"below secondary prevalence {self.secondary_pct}")
        if not self.sowing_date <= self.visit_date <= self.harvest_date:
            raise ValidationError(
                f"field {self.field_id}: visit {self.visit_date} outside "
                f"[{self.sowing_date}, {self.harvest_date}]")

    @property
    def visit_doy(self) -> int:
        return self.visit_date.timetuple().tm_yday

    def metaclass(self) -> Metaclass:
        return Metaclass(self.primary, self.secondary)


GROUND_OBS_HEADER = ("field_id", "visit_date", "primary_stage", "primary_pct",
                     "secondary_stage", "secondary_pct", "sowing_date",
                     "harvest_date")


def _parse_date(token: str, row_num: int, column: str) -> dt.date:
    try:
        return dt.date.fromisoformat(token)
    except ValueError:
        raise ParseError(f"row {row_num}: bad {column} {token!r}, "
                         f"expected ISO-8601 date") from None


def parse_ground_observations(path) -> list[GroundObservation]:
    """Read a ground-observation CSV (header required).

    Rows with empty secondary columns yield observations without a secondary
    stage. Malformed rows raise :class:`ParseError` naming the row number;
    unknown stage tokens raise :class:`ValidationError`.
    """
    observations = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != GROUND_OBS_HEADER:
            raise ParseError(f"{path}: missing or wrong header, expected "
                             f"{','.join(GROUND_OBS_HEADER)}")
        for row_num, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(GROUND_OBS_HEADER):
                raise ParseError(f"row {row_num}: expected "
                                 f"{len(GROUND_OBS_HEADER)} columns, got {len(row)}")
            (field_id, visit, prim, prim_pct, sec, sec_pct, sowing,
             harvest) = (cell.strip() for cell in row)
            if not field_id:
                raise ParseError(f"row {row_num}: empty field_id")
            try:
                prim_pct_val = int(prim_pct)
                sec_pct_val = int(sec_pct) if sec_pct else None
            except ValueError:
                raise ParseError(f"row {row_num}: percentages must be "
                                 f"integers") from None
            try:
                obs = GroundObservation(
                    field_id=field_id,
                    visit_date=_parse_date(visit, row_num, "visit_date"),
                    primary=parse_stage(prim),
                    primary_pct=prim_pct_val,
                    secondary=parse_stage(sec) if sec else None,
                    secondary_pct=sec_pct_val,
                    sowing_date=_parse_date(sowing, row_num, "sowing_date"),
                    harvest_date=_parse_date(harvest, row_num, "harvest_date"),
                )
            except ValidationError as exc:
                raise ValidationError(f"row {row_num}: {exc}") from None
            observations.append(obs)
    return observations


def write_ground_observations(path, observations: Iterable[GroundObservation]) -> None:
    """Serialize observations; inverse of :func:`parse_ground_observations`."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GROUND_OBS_HEADER)
        for obs in observations:
            writer.writerow([
                obs.field_id,
                obs.visit_date.isoformat(),
                obs.primary.name,
                obs.primary_pct,
                obs.secondary.name if obs.secondary is not None else "",
                obs.secondary_pct if obs.secondary_pct is not None else "",
                obs.sowing_date.isoformat(),
                obs.harvest_date.isoformat(),
            ])


def match_observation_to_acquisition(obs: GroundObservation,
                                     acquisition_doys: Sequence[int]) -> tuple[int, int]:
    """Nearest acquisition DoY for a visit; ties resolve to the earlier DoY.

    Returns (matched DoY, absolute difference in days).
    """
    if len(acquisition_doys) == 0:
        raise ValidationError("empty acquisition sequence")
    target = obs.visit_doy
    best = min(sorted(acquisition_doys), key=lambda d: (abs(d - target), d))
    return int(best), abs(int(best) - target)


def difference_distribution(differences: Sequence[int]) -> list[tuple[int, int, float]]:
    """Tabulate ground/satellite day differences as (diff, count, cum. %)."""
    counts = Counter(int(d) for d in differences)
    total = sum(counts.values())
    rows, running = [], 0
    for diff in sorted(counts):
        running += counts[diff]
        rows.append((diff, counts[diff], 100.0 * running / total))
    return rows


@dataclass(frozen=True)
class FieldSeries:
    """Per-field time series of raw variables at acquisition DoYs.

    Columnar: ``values[name]`` is one float array aligned with ``doys``;
    missing entries are NaN. DoYs are strictly increasing.
    """

    field_id: str
    doys: np.ndarray
    values: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        doys = np.asarray(self.doys, dtype=np.int64)
        object.__setattr__(self, "doys", doys)
        if doys.ndim != 1 or (len(doys) > 1 and not np.all(np.diff(doys) > 0)):
            raise ValidationError(
                f"field {self.field_id}: acquisition DoYs must be strictly increasing")
        clean = {}
        for name, arr in self.values.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != doys.shape:
                raise ValidationError(
                    f"field {self.field_id}: variable {name!r} has "
                    f"{arr.shape[0]} entries for {len(doys)} DoYs")
            clean[name] = arr
        object.__setattr__(self, "values", clean)

    def __len__(self) -> int:
        return len(self.doys)

    @property
    def variable_names(self) -> tuple[str, ...]:
        return tuple(self.values)

    def truncated(self, max_doy: int) -> "FieldSeries":
        """The sub-series with acquisitions at DoY <= max_doy."""
        keep = self.doys <= max_doy
        return FieldSeries(self.field_id, self.doys[keep],
                           {k: v[keep] for k, v in self.values.items()})
