"""Fuzzy c-means fitting and membership inference.

The alternating optimization of the Bezdek objective
J = sum_k sum_l w_{k,l}^m ||x_k - c_l||^2: centers are the w^m-weighted
means, memberships follow w_{k,l} = 1 / sum_j (d_kl/d_kj)^(2/(m-1)), and
iteration stops when the max-norm change of the partition matrix drops
below the tolerance.

The inner kernels live in a compiled extension (built from
``_fcm_core.pyx``) with a pure numpy fallback; selection happens at import
and can be forced with the PHENOFCM_BACKEND environment variable.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _fcm_numpy
from .data_model import StageLabel
from .errors import FeatureMismatchError, ValidationError
from .features import ElementSpace

try:
    from . import _fcm_core
except ImportError:
    _fcm_core = None

_FORCED = os.environ.get("PHENOFCM_BACKEND", "").strip().lower()
if _FORCED == "numpy":
    _kernels = _fcm_numpy
elif _FORCED == "cython":
    if _fcm_core is None:
        raise ImportError("PHENOFCM_BACKEND=cython but the compiled "
                          "extension is not available")
    _kernels = _fcm_core
else:
    _kernels = _fcm_core if _fcm_core is not None else _fcm_numpy


def active_backend() -> str:
    """Name of the kernel backend in use ('cython' or 'numpy')."""
    return _kernels.BACKEND_NAME


@dataclass(frozen=True)
class FcmModel:
    """A fitted clustering model plus everything needed to reuse it.

    ``threshold`` and ``stage_map`` start unset and are attached by the
    phenology layer (see :func:`with_phenology`).
    """

    centers: np.ndarray
    m: float
    feature_names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    metadata: dict = field(default_factory=dict)
    threshold: Optional[float] = None
    stage_map: Optional[dict[int, StageLabel]] = None

    def __post_init__(self) -> None:
        centers = np.ascontiguousarray(self.centers, dtype=np.float64)
        if not np.all(np.isfinite(centers)):
            raise ValidationError("cluster centers must be finite")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))

    @property
    def n_clusters(self) -> int:
        return self.centers.shape[0]

    def with_phenology(self, threshold: float,
                       stage_map: dict[int, StageLabel]) -> "FcmModel":
        return replace(self, threshold=float(threshold), stage_map=dict(stage_map))


@dataclass(frozen=True)
class FcmFitResult:
    centers: np.ndarray
    partition: np.ndarray
    iterations: int
    converged: bool
    objective_trace: tuple[float, ...]


def run_fcm(x: np.ndarray, c: int, m: float = 2.0, tolerance: float = 1e-5,
            max_iter: int = 300, seed: int = 0) -> FcmFitResult:
    """Alternating optimization on a bare element matrix.

    Initialization is a random row-stochastic partition matrix drawn from
    the seed, so identical inputs and seed give bit-identical results.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError("element matrix must be 2-D")
    n = x.shape[0]
    if c < 1:
        raise ValidationError(f"cluster count {c} must be positive")
    if n < c:
        raise ValidationError(f"{n} elements cannot support {c} clusters")
    if m <= 1.0:
        raise ValidationError(f"fuzzifier m={m} must exceed 1")
    if tolerance <= 0:
        raise ValidationError("tolerance must be positive")
    if not np.all(np.isfinite(x)):
        raise ValidationError("element matrix contains non-finite values")

    rng = np.random.default_rng(seed)
    w = rng.random((n, c))
    w /= w.sum(axis=1, keepdims=True)
    w = np.ascontiguousarray(w)

    trace: list[float] = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        centers = _kernels.weighted_centers(x, w, m)
        d2 = _kernels.pairwise_sq_dist(x, centers)
        w_new = _kernels.memberships(d2, m)
        trace.append(_kernels.objective(d2, w_new, m))
        delta = float(np.max(np.abs(w_new - w)))
        w = w_new
        if delta < tolerance:
            converged = True
            break
    return FcmFitResult(centers, w, iterations, converged, tuple(trace))


def fcm_fit(space: ElementSpace, c: int = 6, m: float = 2.0,
            tolerance: float = 1e-5, max_iter: int = 300,
            seed: int = 0) -> tuple[FcmModel, np.ndarray]:
    """Fit on a standardized element space; returns (model, partition matrix)."""
    result = run_fcm(space.matrix, c, m, tolerance, max_iter, seed)
    model = FcmModel(
        centers=result.centers,
        m=float(m),
        feature_names=space.feature_names,
        mean=space.mean,
        std=space.std,
        metadata={
            "iterations": result.iterations,
            "converged": result.converged,
            "final_objective": result.objective_trace[-1],
            "tolerance": float(tolerance),
            "max_iter": int(max_iter),
            "seed": int(seed),
            "backend": active_backend(),
        },
    )
    return model, result.partition


def _check_space(model: FcmModel, space: ElementSpace) -> None:
    if tuple(space.feature_names) != tuple(model.feature_names):
        raise FeatureMismatchError(
            f"space features {space.feature_names} do not match model "
            f"features {model.feature_names}")
    if not (np.array_equal(space.mean, model.mean)
            and np.array_equal(space.std, model.std)):
        raise FeatureMismatchError(
            "space was not standardized with the model's stored statistics")


def fcm_predict_memberships(model: FcmModel, space: ElementSpace) -> np.ndarray:
    """Memberships for new elements from the fixed centers (no refitting)."""
    _check_space(model, space)
    x = np.ascontiguousarray(space.matrix, dtype=np.float64)
    d2 = _kernels.pairwise_sq_dist(x, model.centers)
    return _kernels.memberships(d2, model.m)


def objective(space: ElementSpace, model: FcmModel,
              partition: np.ndarray) -> float:
    """Evaluate the clustering objective for a given partition."""
    partition = np.ascontiguousarray(partition, dtype=np.float64)
    if partition.shape != (space.n_elements, model.n_clusters):
        raise ValidationError(
            f"partition shape {partition.shape} does not match "
            f"{(space.n_elements, model.n_clusters)}")
    x = np.ascontiguousarray(space.matrix, dtype=np.float64)
    d2 = _kernels.pairwise_sq_dist(x, model.centers)
    return _kernels.objective(d2, partition, model.m)


def validate_partition(w: np.ndarray, atol: float = 1e-9) -> None:
    """Assert the row-stochastic partition invariant."""
    w = np.asarray(w)
    if np.any(w < -atol) or np.any(w > 1 + atol):
        raise ValidationError("partition weights outside [0, 1]")
    if not np.allclose(w.sum(axis=1), 1.0, atol=atol):
        raise ValidationError("partition rows do not sum to 1")


# ---------------------------------------------------------------------------
# Serialization: a self-describing JSON file with hex-encoded floats so that
# save -> load round-trips to full precision and reruns are byte-identical.

_FORMAT = "phenofcm-model"
_VERSION = 1


def _enc(value: float) -> str:
    return float(value).hex()


def _dec(text: str) -> float:
    return float.fromhex(text)


def _enc_array(arr: np.ndarray) -> list:
    if arr.ndim == 1:
        return [_enc(v) for v in arr]
    return [[_enc(v) for v in row] for row in arr]


def _dec_array(data: list) -> np.ndarray:
    if data and isinstance(data[0], list):
        return np.asarray([[_dec(v) for v in row] for row in data])
    return np.asarray([_dec(v) for v in data])


def model_to_dict(model: FcmModel) -> dict:
    meta = dict(model.metadata)
    for key in ("final_objective", "tolerance"):
        if key in meta:
            meta[key] = _enc(meta[key])
    return {
        "format": _FORMAT,
        "version": _VERSION,
        "m": _enc(model.m),
        "features": list(model.feature_names),
        "centers": _enc_array(model.centers),
        "standardization": {"mean": _enc_array(model.mean),
                            "std": _enc_array(model.std)},
        "threshold": None if model.threshold is None else _enc(model.threshold),
        "stage_map": (None if model.stage_map is None else
                      {str(k): v.name for k, v in sorted(model.stage_map.items())}),
        "metadata": meta,
    }


def model_from_dict(data: dict) -> FcmModel:
    if data.get("format") != _FORMAT:
        raise ValidationError(f"not a {_FORMAT} file")
    if data.get("version") != _VERSION:
        raise ValidationError(f"unsupported model file version {data.get('version')}")
    meta = dict(data.get("metadata", {}))
    for key in ("final_objective", "tolerance"):
        if key in meta:
            meta[key] = _dec(meta[key])
    stage_map = data.get("stage_map")
    return FcmModel(
        centers=_dec_array(data["centers"]),
        m=_dec(data["m"]),
        feature_names=tuple(data["features"]),
        mean=_dec_array(data["standardization"]["mean"]),
        std=_dec_array(data["standardization"]["std"]),
        metadata=meta,
        threshold=None if data.get("threshold") is None else _dec(data["threshold"]),
        stage_map=(None if stage_map is None else
                   {int(k): StageLabel[v] for k, v in stage_map.items()}),
    )


def save_model(model: FcmModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> FcmModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
