"""From cluster memberships to ranked growth-stage predictions.

Clusters are anonymous after fitting; stage identity comes from time order
(the most common first-appearance order of clusters across training fields).
The secondary-stage threshold comes from the training partition: weights
ranked third or lower cannot be valid labels, so the threshold is the 98th
percentile of the third-ranked weights, which discounts outliers.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data_model import Metaclass, StageLabel, STAGES
from .errors import ValidationError
from .fcm import FcmModel, fcm_predict_memberships
from .features import ElementSpace

log = logging.getLogger(__name__)

#: Percentile of third-ranked weights used for the secondary-label threshold.
THRESHOLD_PERCENTILE = 98.0


def order_clusters(keys: Sequence[tuple[str, int]],
                   partition: np.ndarray) -> dict[int, StageLabel]:
    """Map cluster ids to stages by exploiting the time order.

    Rows must be grouped by field and time-ordered within each field (the
    element-space layout). Each field with a complete first-appearance
    sequence of all clusters votes for one permutation; the modal
    permutation maps first position -> RE, ..., last -> BO. If no field has
    a complete sequence, clusters are ranked by membership-weighted mean
    DoY instead.
    """
    partition = np.asarray(partition)
    n_clusters = partition.shape[1]
    if len(keys) != partition.shape[0]:
        raise ValidationError("keys and partition rows disagree")
    if n_clusters != len(STAGES):
        raise ValidationError(
            f"stage assignment expects {len(STAGES)} clusters, got {n_clusters}")
    hard = np.argmax(partition, axis=1)
    if len(np.unique(hard)) < n_clusters:
        raise ValidationError(
            "fewer than six distinct clusters appear in the hard assignments; "
            "the season window is likely wrong")

    sequences: dict[str, list[int]] = {}
    for (field_id, _doy), cluster in zip(keys, hard):
        seq = sequences.setdefault(field_id, [])
        if cluster not in seq:  # first-appearance order: record each once
            seq.append(int(cluster))

    votes = Counter(tuple(seq) for seq in sequences.values()
                    if len(seq) == n_clusters)
    if votes:
        top = max(votes.values())
        # deterministic tie-break: lexicographically smallest permutation
        order = min(perm for perm, count in votes.items() if count == top)
    else:
        log.warning("no field shows a complete cluster sequence; falling "
                    "back to membership-weighted mean DoY ordering")
        doys = np.asarray([doy for _field, doy in keys], dtype=np.float64)
        weight_sums = partition.sum(axis=0)
        mean_doy = (partition * doys[:, None]).sum(axis=0) / weight_sums
        order = tuple(int(i) for i in np.argsort(mean_doy, kind="stable"))
    return {cluster: STAGES[pos] for pos, cluster in enumerate(order)}


def calibrate_threshold(partition: np.ndarray,
                        percentile: float = THRESHOLD_PERCENTILE) -> float:
    """Secondary-label weight threshold from the training partition."""
    partition = np.asarray(partition)
    if partition.shape[1] < 3:
        raise ValidationError("threshold calibration needs at least 3 clusters")
    third_ranked = np.sort(partition, axis=1)[:, -3]
    return float(np.percentile(third_ranked, percentile, method="linear"))


@dataclass(frozen=True)
class RankedPrediction:
    """All six stages ranked by membership weight, plus the emitted metaclass."""

    field_id: str
    doy: int
    stages: tuple[StageLabel, ...]   # ranked, best first
    weights: tuple[float, ...]       # non-increasing, aligned with stages
    metaclass: Metaclass

    @property
    def primary(self) -> StageLabel:
        return self.metaclass.primary

    @property
    def secondary(self) -> Optional[StageLabel]:
        return self.metaclass.secondary


def predict_metaclass(stage_map: dict[int, StageLabel], threshold: float,
                      weights: np.ndarray, field_id: str = "",
                      doy: int = 0) -> RankedPrediction:
    """Threshold rule for one element's membership weights.

    The top-weight cluster's stage is the primary; the runner-up becomes the
    secondary only if its weight exceeds the threshold AND it is ordinally
    adjacent to the primary (non-adjacent runner-ups are suppressed to keep
    the output on the 16-metaclass scale). Ties break toward the lower
    cluster id.
    """
    weights = np.asarray(weights, dtype=np.float64)
    order = np.argsort(-weights, kind="stable")
    ranked_stages = tuple(stage_map[int(c)] for c in order)
    ranked_weights = tuple(float(weights[c]) for c in order)
    primary = ranked_stages[0]
    secondary = None
    if ranked_weights[1] > threshold:
        runner_up = ranked_stages[1]
        if abs(int(runner_up) - int(primary)) == 1:
            secondary = runner_up
        else:
            log.debug("suppressed non-adjacent runner-up %s after %s "
                      "(field %s, DoY %d)", runner_up, primary, field_id, doy)
    return RankedPrediction(field_id, doy, ranked_stages, ranked_weights,
                            Metaclass(primary, secondary))


def predict_batch(model: FcmModel, space: ElementSpace) -> list[RankedPrediction]:
    """Ranked predictions for every element, ordered by (field id, DoY)."""
    if model.stage_map is None or model.threshold is None:
        raise ValidationError("model has no stage map / threshold; run "
                              "order_clusters and calibrate_threshold first")
    partition = fcm_predict_memberships(model, space)
    predictions = [
        predict_metaclass(model.stage_map, model.threshold, partition[i],
                          field_id=key[0], doy=key[1])
        for i, key in enumerate(space.keys)
    ]
    predictions.sort(key=lambda p: (p.field_id, p.doy))
    return predictions


PREDICTION_HEADER = ("field_id", "doy", "primary", "secondary",
                     "metaclass_index", "w1", "w2", "w3", "w4", "w5", "w6",
                     "ranked_stages")


def write_predictions(path, predictions: Sequence[RankedPrediction]) -> None:
    """Prediction CSV: one row per element, stage ranking in a companion column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTION_HEADER)
        for p in predictions:
            writer.writerow([
                p.field_id, p.doy, p.primary.name,
                p.secondary.name if p.secondary is not None else "",
                p.metaclass.index,
                *[repr(w) for w in p.weights],
                ">".join(s.name for s in p.stages),
            ])


def read_predictions(path) -> list[RankedPrediction]:
    """Inverse of :func:`write_predictions`."""
    from .errors import ParseError

    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != PREDICTION_HEADER:
            raise ParseError(f"{path}: missing or wrong prediction header")
        for row_num, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(PREDICTION_HEADER):
                raise ParseError(f"row {row_num}: expected "
                                 f"{len(PREDICTION_HEADER)} columns")
            field_id, doy, prim, sec, mc_index = row[:5]
            weights = tuple(float(w) for w in row[5:11])
            stages = tuple(StageLabel[s] for s in row[11].split(">"))
            metaclass = Metaclass(StageLabel[prim],
                                  StageLabel[sec] if sec else None)
            if metaclass.index != int(mc_index):
                raise ParseError(f"row {row_num}: metaclass index "
                                 f"{mc_index} disagrees with labels")
            out.append(RankedPrediction(field_id, int(doy), stages, weights,
                                        metaclass))
    return out
