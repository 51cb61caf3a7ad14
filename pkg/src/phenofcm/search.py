"""Feature-subset search, model selection, baseline, and majority voting.

Phase 1 samples random feature sets per length, fits one clustering model
per set on the training year and ranks sets by Cohen's kappa on a held-out
validation split of the evaluation year. Phase 2 exhaustively enumerates
combinations of the most frequent features from the phase-1 top fraction
and keeps sets passing the kappa and maxdiff-1 thresholds; those survivors
form a majority-voting ensemble. A two-feature DoY-only baseline isolates
the agreement that time alone explains.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .data_model import Metaclass, StageLabel
from .errors import BudgetExceededError, ValidationError
from .fcm import FcmModel, fcm_fit, fcm_predict_memberships, model_from_dict, model_to_dict
from .features import FORCED_FEATURES, FeatureTable, candidate_pool, element_space_from_table
from .metrics import (METACLASS_CATEGORIES, cohen_kappa, maxdiff_accuracy,
                      ndcg_at_2, weighted_kappa)
from .phenology import RankedPrediction, calibrate_threshold, order_clusters, predict_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchConfig:
    """Knobs for the two-phase feature search."""

    pool: tuple[str, ...] = field(default_factory=candidate_pool)
    lengths_phase1: tuple[int, ...] = tuple(range(3, 11))
    samples_per_length: int = 10_000
    split_ratio: float = 0.7          # test share; the rest is validation
    top_fraction: float = 0.01
    top_features_count: int = 15
    lengths_phase2: tuple[int, ...] = tuple(range(6, 16))
    kappa_threshold: float = 0.46
    maxdiff1_threshold: float = 0.86
    exhaustive_budget: int = 50_000
    clusters: int = 6
    fuzzifier: float = 2.0
    tolerance: float = 1e-5
    max_iter: int = 300
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        for forced in FORCED_FEATURES:
            if forced not in self.pool:
                raise ValidationError(f"search pool must contain {forced}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValidationError("split ratio must be in (0, 1)")


@dataclass(frozen=True)
class ModelResult:
    """Validation-split scores for one feature set."""

    features: tuple[str, ...]
    kappa: float
    maxdiff0: float
    maxdiff1: float
    wkappa_linear: float
    wkappa_quadratic: float
    ndcg: float

    @property
    def key(self) -> str:
        return "|".join(self.features)


@dataclass(frozen=True)
class SearchOutcome:
    results: tuple[ModelResult, ...]
    test_fields: tuple[str, ...]
    validation_fields: tuple[str, ...]
    n_sampled: int
    n_failed: int


def canonical_features(features: Sequence[str]) -> tuple[str, ...]:
    """Forced time features first, the rest sorted: one name per set."""
    rest = sorted(set(features) - set(FORCED_FEATURES))
    return FORCED_FEATURES + tuple(rest)


def _fit_seed(features: Sequence[str], seed: int) -> int:
    # Stable per-feature-set seed so results do not depend on evaluation order.
    return zlib.crc32("|".join(features).encode()) ^ (seed & 0xFFFFFFFF)


def fit_pipeline_model(features: Sequence[str], train_table: FeatureTable,
                       config: SearchConfig,
                       seed: Optional[int] = None) -> FcmModel:
    """Fit + order clusters + calibrate threshold for one feature set."""
    features = canonical_features(features)
    space = element_space_from_table(train_table, features)
    model, partition = fcm_fit(
        space, c=config.clusters, m=config.fuzzifier,
        tolerance=config.tolerance, max_iter=config.max_iter,
        seed=_fit_seed(features, config.seed) if seed is None else seed)
    stage_map = order_clusters(space.keys, partition)
    threshold = calibrate_threshold(partition)
    return model.with_phenology(threshold, stage_map)


def split_fields(truth_keys: Sequence[tuple[str, int]],
                 config: SearchConfig) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Deterministic per-field test/validation split of the evaluation year."""
    fields = sorted({fid for fid, _ in truth_keys})
    if len(fields) < 2:
        raise ValidationError("need at least 2 labeled fields to split")
    rng = np.random.default_rng([config.seed, 1])
    order = list(fields)
    rng.shuffle(order)
    n_test = int(round(config.split_ratio * len(order)))
    n_test = min(max(n_test, 1), len(order) - 1)
    return tuple(sorted(order[:n_test])), tuple(sorted(order[n_test:]))


def evaluate_feature_set(features: Sequence[str], train_table: FeatureTable,
                         eval_table: FeatureTable,
                         truth_pairs: Sequence[tuple[tuple[str, int], Metaclass]],
                         config: SearchConfig) -> ModelResult:
    """Fit on the training table, score on the given evaluation pairs."""
    features = canonical_features(features)
    model = fit_pipeline_model(features, train_table, config)
    space = element_space_from_table(eval_table, features,
                                     stats=(model.mean, model.std))
    predictions = {(p.field_id, p.doy): p for p in predict_batch(model, space)}
    preds, truths, rankings = [], [], []
    for key, truth in truth_pairs:
        pred = predictions.get(key)
        if pred is None:
            continue
        preds.append(pred.metaclass)
        truths.append(truth)
        rankings.append(pred.stages)
    if not preds:
        raise ValidationError("no evaluation pairs matched the predictions")
    pred_idx = [p.index for p in preds]
    truth_idx = [t.index for t in truths]
    return ModelResult(
        features=features,
        kappa=cohen_kappa(pred_idx, truth_idx, METACLASS_CATEGORIES),
        maxdiff0=maxdiff_accuracy(preds, truths, 0),
        maxdiff1=maxdiff_accuracy(preds, truths, 1),
        wkappa_linear=weighted_kappa(pred_idx, truth_idx, "linear",
                                     METACLASS_CATEGORIES),
        wkappa_quadratic=weighted_kappa(pred_idx, truth_idx, "quadratic",
                                        METACLASS_CATEGORIES),
        ndcg=float(np.mean([ndcg_at_2(r, t) for r, t in zip(rankings, truths)])),
    )


def sample_feature_sets(config: SearchConfig,
                        lengths: Sequence[int]) -> list[tuple[str, ...]]:
    """Random feature sets per length; duplicates are dropped, not resampled.

    When a length admits no more combinations than the sample budget, the
    sets are enumerated exhaustively instead.
    """
    rest = sorted(set(config.pool) - set(FORCED_FEATURES))
    rng = np.random.default_rng([config.seed, 0])
    sets: list[tuple[str, ...]] = []
    seen: set[tuple[str, ...]] = set()
    for length in lengths:
        n_pick = length - len(FORCED_FEATURES)
        if n_pick < 0 or n_pick > len(rest):
            continue
        if math.comb(len(rest), n_pick) <= config.samples_per_length:
            candidates = [canonical_features(FORCED_FEATURES + combo)
                          for combo in itertools.combinations(rest, n_pick)]
        else:
            candidates = []
            for _ in range(config.samples_per_length):
                chosen = rng.choice(len(rest), size=n_pick, replace=False)
                candidates.append(canonical_features(
                    FORCED_FEATURES + tuple(rest[i] for i in sorted(chosen))))
        for cand in candidates:
            if cand not in seen:
                seen.add(cand)
                sets.append(cand)
    return sets


def _evaluate_one_star(args):
    features, train_table, eval_table, truth_pairs, config = args
    try:
        return evaluate_feature_set(features, train_table, eval_table,
                                    truth_pairs, config)
    except ValidationError as exc:
        log.warning("feature set %s failed: %s", "|".join(features), exc)
        return None


def _evaluate_many(feature_sets: Sequence[tuple[str, ...]],
                   train_table: FeatureTable, eval_table: FeatureTable,
                   truth_pairs, config: SearchConfig,
                   ) -> tuple[list[ModelResult], int]:
    jobs = [(fs, train_table, eval_table, truth_pairs, config)
            for fs in feature_sets]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_evaluate_one_star, jobs, chunksize=8))
    else:
        outcomes = [_evaluate_one_star(job) for job in jobs]
    results = [r for r in outcomes if r is not None]
    # order-independent, deterministic ranking
    results.sort(key=lambda r: (-r.kappa, r.key))
    return results, len(outcomes) - len(results)


def random_subset_search(config: SearchConfig, train_table: FeatureTable,
                         eval_table: FeatureTable,
                         truth: Sequence[tuple[tuple[str, int], Metaclass]],
                         ) -> SearchOutcome:
    """Phase 1: random feature combinations per length, ranked by kappa."""
    if not truth:
        raise ValidationError("no labeled evaluation data")
    test_fields, val_fields = split_fields([k for k, _ in truth], config)
    val_pairs = [(key, mc) for key, mc in truth if key[0] in val_fields]
    if not val_pairs:
        raise ValidationError("validation split is empty")
    feature_sets = sample_feature_sets(config, config.lengths_phase1)
    results, failed = _evaluate_many(feature_sets, train_table, eval_table,
                                     val_pairs, config)
    return SearchOutcome(tuple(results), test_fields, val_fields,
                         len(feature_sets), failed)


def feature_frequency(results: Sequence[ModelResult]) -> list[tuple[str, int]]:
    """Appearance counts over a result slice, descending, ties by name."""
    if not results:
        raise ValidationError("feature frequency over empty results")
    counts: dict[str, int] = {}
    for result in results:
        for name in result.features:
            counts[name] = counts.get(name, 0) + 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def top_slice(results: Sequence[ModelResult], fraction: float) -> list[ModelResult]:
    """The best ``fraction`` of ranked results (at least one)."""
    count = max(1, int(round(fraction * len(results))))
    return list(results[:count])


def exhaustive_count(n_optional: int, lengths: Sequence[int]) -> int:
    forced = len(FORCED_FEATURES)
    return sum(math.comb(n_optional, length - forced)
               for length in lengths
               if 0 <= length - forced <= n_optional)


def exhaustive_refinement(top_features: Sequence[str], config: SearchConfig,
                          train_table: FeatureTable, eval_table: FeatureTable,
                          truth: Sequence[tuple[tuple[str, int], Metaclass]],
                          ) -> tuple[list[ModelResult], int]:
    """Phase 2: every combination of the top features, filtered by thresholds.

    Returns (survivors, number of sets enumerated). Refuses with the count
    estimate when the enumeration would exceed the configured budget.
    """
    rest = sorted(set(top_features) - set(FORCED_FEATURES))
    total = exhaustive_count(len(rest), config.lengths_phase2)
    if total > config.exhaustive_budget:
        raise BudgetExceededError(
            f"exhaustive refinement needs {total} fits, over the budget of "
            f"{config.exhaustive_budget}")
    _test_fields, val_fields = split_fields([k for k, _ in truth], config)
    val_pairs = [(key, mc) for key, mc in truth if key[0] in val_fields]
    sets = []
    for length in config.lengths_phase2:
        n_pick = length - len(FORCED_FEATURES)
        if n_pick < 0 or n_pick > len(rest):
            continue
        sets.extend(canonical_features(FORCED_FEATURES + combo)
                    for combo in itertools.combinations(rest, n_pick))
    results, _failed = _evaluate_many(sets, train_table, eval_table,
                                      val_pairs, config)
    survivors = [r for r in results
                 if r.kappa > config.kappa_threshold
                 and r.maxdiff1 > config.maxdiff1_threshold]
    return survivors, total


@dataclass(frozen=True)
class ModelEnsemble:
    """Fitted models voting on the final metaclass prediction."""

    members: tuple[FcmModel, ...]
    vote_rule: str = "plurality; ties by summed top weight, then lower index"

    def __post_init__(self) -> None:
        if not self.members:
            raise ValidationError("ensemble must not be empty")
        c = {m.n_clusters for m in self.members}
        fuzz = {m.m for m in self.members}
        if len(c) != 1 or len(fuzz) != 1:
            raise ValidationError("ensemble members must share c and m")
        for member in self.members:
            if member.stage_map is None or member.threshold is None:
                raise ValidationError("ensemble members need stage map and "
                                      "threshold")


def ensemble_vote(member_predictions: Sequence[RankedPrediction]) -> Metaclass:
    """Plurality vote over member metaclasses.

    Ties break by the highest summed top-rank weight across the tied
    metaclasses, then by the lower metaclass index.
    """
    if not member_predictions:
        raise ValidationError("vote over empty member predictions")
    votes: dict[int, int] = {}
    top_weight: dict[int, float] = {}
    for pred in member_predictions:
        idx = pred.metaclass.index
        votes[idx] = votes.get(idx, 0) + 1
        top_weight[idx] = top_weight.get(idx, 0.0) + pred.weights[0]
    best = max(votes.values())
    tied = [idx for idx, n in votes.items() if n == best]
    winner = min(tied, key=lambda idx: (-top_weight[idx], idx))
    for pred in member_predictions:
        if pred.metaclass.index == winner:
            return pred.metaclass
    raise AssertionError("unreachable")


def ensemble_predict(ensemble: ModelEnsemble, eval_table: FeatureTable,
                     ) -> list[RankedPrediction]:
    """Voted prediction per element.

    The reported ranking/weights are the stage-aligned mean memberships over
    members (rows stay stochastic); the metaclass is the plurality vote.
    """
    per_member: list[dict[tuple[str, int], RankedPrediction]] = []
    for member in ensemble.members:
        space = element_space_from_table(eval_table, member.feature_names,
                                         stats=(member.mean, member.std))
        per_member.append({(p.field_id, p.doy): p
                           for p in predict_batch(member, space)})
    out = []
    for key in sorted(set(eval_table.keys)):
        members_here = [preds[key] for preds in per_member if key in preds]
        if not members_here:
            continue
        voted = ensemble_vote(members_here)
        stage_weights = {stage: 0.0 for stage in StageLabel}
        for pred in members_here:
            for stage, weight in zip(pred.stages, pred.weights):
                stage_weights[stage] += weight / len(members_here)
        ranked = sorted(StageLabel, key=lambda s: (-stage_weights[s], int(s)))
        out.append(RankedPrediction(
            field_id=key[0], doy=key[1],
            stages=tuple(ranked),
            weights=tuple(stage_weights[s] for s in ranked),
            metaclass=voted))
    return out


def baseline_model(train_table: FeatureTable,
                   config: SearchConfig) -> FcmModel:
    """The DoY-only model quantifying chance agreement due to time alone."""
    return fit_pipeline_model(FORCED_FEATURES, train_table, config)


RESULTS_HEADER = ("features", "kappa", "maxdiff0", "maxdiff1",
                  "wkappa_linear", "wkappa_quadratic", "ndcg")


def write_results_csv(path, results: Sequence[ModelResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for r in results:
            writer.writerow([r.key, repr(r.kappa), repr(r.maxdiff0),
                             repr(r.maxdiff1), repr(r.wkappa_linear),
                             repr(r.wkappa_quadratic), repr(r.ndcg)])


def read_results_csv(path) -> list[ModelResult]:
    from .errors import ParseError

    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RESULTS_HEADER:
            raise ParseError(f"{path}: missing or wrong results header")
        for row in reader:
            if not row:
                continue
            out.append(ModelResult(tuple(row[0].split("|")),
                                   *(float(v) for v in row[1:])))
    return out


def save_ensemble(ensemble: ModelEnsemble, path) -> None:
    payload = {
        "format": "phenofcm-ensemble",
        "version": 1,
        "vote_rule": ensemble.vote_rule,
        "members": [model_to_dict(m) for m in ensemble.members],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_ensemble(path) -> ModelEnsemble:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "phenofcm-ensemble":
        raise ValidationError("not an ensemble file")
    return ModelEnsemble(tuple(model_from_dict(m) for m in payload["members"]),
                         vote_rule=payload.get("vote_rule", ""))
