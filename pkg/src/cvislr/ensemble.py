"""Two-stage weighted ensemble fusion of classifier predictions.

Stage one soft-votes across model sizes within one modality; stage two fuses
the RGB and depth votes.  All fusion happens in probability space: logits are
softmax-converted first, so the default weight ratios (0.4:0.4:0.2 across
large/base/small, 0.65:0.35 across RGB/depth) act scale-free regardless of
each model's logit magnitudes.  Weights are renormalized to sum to one, so
callers may pass ratios.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import AlignmentError, ContractError, FormatError, NumericError

LOGITS = "logits"
PROBABILITIES = "probabilities"

#: Default size weights, paired as (large, base, small).
DEFAULT_SIZE_WEIGHTS = (0.4, 0.4, 0.2)
#: Default modality weights, paired as (rgb, depth).
DEFAULT_MODALITY_WEIGHTS = (0.65, 0.35)


@dataclass(frozen=True)
class PredictionSet:
    """Per-sample class scores from one model (or one fusion thereof)."""

    sample_ids: tuple[str, ...]
    scores: np.ndarray  # (num_samples, num_classes)
    score_kind: str = LOGITS
    labels: np.ndarray | None = None  # (num_samples,) int, -1 = unknown
    provenance: str = ""

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2:
            raise ContractError(f"scores must be 2-D, got shape {scores.shape}")
        if len(self.sample_ids) != scores.shape[0]:
            raise ContractError(
                f"{len(self.sample_ids)} sample ids for {scores.shape[0]} score rows")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ContractError("sample_ids contain duplicates")
        if self.score_kind not in (LOGITS, PROBABILITIES):
            raise ContractError(f"score_kind must be {LOGITS!r} or {PROBABILITIES!r}, "
                                f"got {self.score_kind!r}")
        if not np.isfinite(scores).all():
            raise NumericError("scores contain non-finite values")
        if self.score_kind == PROBABILITIES:
            # Fusion outputs computed in f64 sum to 1 within 1e-9; the looser
            # constructor bound also admits rows quantized to f32 on disk.
            sums = scores.sum(axis=1)
            if scores.shape[0] and (scores.min() < -1e-9
                                    or np.abs(sums - 1.0).max() > 1e-6):
                raise ContractError("probability rows must be nonnegative and "
                                    "sum to 1 (within f32 tolerance)")
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "scores", scores)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (scores.shape[0],):
                raise ContractError(f"labels shape {labels.shape} does not match "
                                    f"{scores.shape[0]} samples")
            object.__setattr__(self, "labels", labels)

    @property
    def num_samples(self) -> int:
        return self.scores.shape[0]

    @property
    def num_classes(self) -> int:
        return self.scores.shape[1]

    def as_probabilities(self) -> "PredictionSet":
        """Softmax-convert logits; a probability set passes through unchanged."""
        if self.score_kind == PROBABILITIES:
            return self
        z = self.scores - self.scores.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
        return replace(self, scores=probs, score_kind=PROBABILITIES)


@dataclass(frozen=True)
class EnsembleWeights:
    """Nonnegative fusion weights; each group normalized to sum to 1."""

    size_weights: tuple[float, float, float] = DEFAULT_SIZE_WEIGHTS
    modality_weights: tuple[float, float] = DEFAULT_MODALITY_WEIGHTS

    def __post_init__(self):
        object.__setattr__(self, "size_weights",
                           normalize_weights(self.size_weights))
        object.__setattr__(self, "modality_weights",
                           normalize_weights(self.modality_weights))


def normalize_weights(weights: Sequence[float]) -> tuple[float, ...]:
    """Scale nonnegative weights to sum to 1."""
    w = tuple(float(x) for x in weights)
    if any(x < 0 for x in w):
        raise ContractError(f"weights must be nonnegative, got {w}")
    total = sum(w)
    if total <= 0:
        raise ContractError(f"weights must not all be zero, got {w}")
    return tuple(x / total for x in w)


def _check_aligned(sets: Sequence[PredictionSet]) -> None:
    first = sets[0]
    for other in sets[1:]:
        if other.sample_ids != first.sample_ids:
            a = set(first.sample_ids) - set(other.sample_ids)
            b = set(other.sample_ids) - set(first.sample_ids)
            if a or b:
                raise AlignmentError(
                    f"prediction sets cover different samples (e.g. "
                    f"{sorted(a | b)[:3]})")
            raise AlignmentError("prediction sets order their samples differently")
        if other.num_classes != first.num_classes:
            raise AlignmentError(f"class counts disagree: {first.num_classes} "
                                 f"vs {other.num_classes}")
        if (first.labels is not None and other.labels is not None
                and not np.array_equal(first.labels, other.labels)):
            raise AlignmentError("prediction sets carry conflicting labels")


def _merged_labels(sets: Sequence[PredictionSet]) -> np.ndarray | None:
    for s in sets:
        if s.labels is not None:
            return s.labels
    return None


def single_modal_ensemble(sets: Sequence[PredictionSet],
                          weights: Sequence[float] = DEFAULT_SIZE_WEIGHTS,
                          ) -> PredictionSet:
    """Convex soft vote across same-modality models.

    Logit sets are softmax-converted first; the result is the weighted sum of
    probability rows with weights normalized to 1.
    """
    sets = list(sets)
    if not sets:
        raise ContractError("ensemble needs at least one prediction set")
    w = normalize_weights(weights)
    if len(w) != len(sets):
        raise ContractError(f"{len(w)} weights for {len(sets)} prediction sets")
    _check_aligned(sets)
    probs = [s.as_probabilities() for s in sets]
    fused = np.zeros_like(probs[0].scores)
    for wi, p in zip(w, probs):
        fused += wi * p.scores
    provenance = " + ".join(f"{wi:g}*{p.provenance or 'unnamed'}"
                            for wi, p in zip(w, probs))
    return PredictionSet(sample_ids=sets[0].sample_ids, scores=fused,
                         score_kind=PROBABILITIES, labels=_merged_labels(sets),
                         provenance=provenance)


def multimodal_ensemble(rgb: PredictionSet, depth: PredictionSet,
                        weights: Sequence[float] = DEFAULT_MODALITY_WEIGHTS,
                        ) -> PredictionSet:
    """Fuse RGB and depth predictions: λ_r·P_rgb + λ_d·P_depth."""
    w = normalize_weights(weights)
    if len(w) != 2:
        raise ContractError(f"modality fusion takes exactly 2 weights, got {len(w)}")
    _check_aligned([rgb, depth])
    pr, pd = rgb.as_probabilities(), depth.as_probabilities()
    fused = w[0] * pr.scores + w[1] * pd.scores
    provenance = (f"{w[0]:g}*rgb({pr.provenance or 'unnamed'}) + "
                  f"{w[1]:g}*depth({pd.provenance or 'unnamed'})")
    return PredictionSet(sample_ids=rgb.sample_ids, scores=fused,
                         score_kind=PROBABILITIES,
                         labels=_merged_labels([rgb, depth]),
                         provenance=provenance)


def argmax_predict(pset: PredictionSet) -> np.ndarray:
    """Per-row index of the maximum score; ties go to the lowest class index."""
    if pset.num_classes < 1 or pset.num_samples < 1:
        raise ContractError("argmax needs at least one sample and one class")
    # np.argmax already returns the first (lowest) index among ties
    return np.argmax(pset.scores, axis=1)


# ---------------------------------------------------------------------------
# PRED file: magic, u32 num_samples, u32 num_classes, u8 score_kind, then per
# sample: u32 id length, id bytes, i32 label (-1 if absent), f32 scores.

_PRED_MAGIC = b"PRED"
_KIND_CODES = {LOGITS: 0, PROBABILITIES: 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


def write_predictions(f: str | BinaryIO, pset: PredictionSet) -> None:
    """Write a prediction set in the PRED binary format (f32 scores)."""
    if isinstance(f, str):
        with open(f, "wb") as fh:
            write_predictions(fh, pset)
        return
    f.write(_PRED_MAGIC)
    f.write(struct.pack("<IIB", pset.num_samples, pset.num_classes,
                        _KIND_CODES[pset.score_kind]))
    labels = pset.labels
    scores32 = pset.scores.astype("<f4")
    for i, sid in enumerate(pset.sample_ids):
        raw = sid.encode("utf-8")
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        f.write(struct.pack("<i", int(labels[i]) if labels is not None else -1))
        f.write(scores32[i].tobytes())


def read_predictions(f: str | BinaryIO) -> PredictionSet:
    """Read a PRED file; scores come back widened to f64."""
    if isinstance(f, str):
        with open(f, "rb") as fh:
            return read_predictions(fh)
    magic = f.read(4)
    if magic != _PRED_MAGIC:
        raise FormatError(f"bad predictions magic {magic!r}, expected {_PRED_MAGIC!r}")
    raw = f.read(9)
    if len(raw) != 9:
        raise FormatError("truncated predictions header")
    n, k, kind_code = struct.unpack("<IIB", raw)
    if kind_code not in _KIND_NAMES:
        raise FormatError(f"unknown score kind code {kind_code}")
    if n < 1 or k < 1:
        raise FormatError(f"predictions must cover >= 1 sample and class, got {n}x{k}")
    ids: list[str] = []
    labels = np.empty(n, dtype=np.int64)
    scores = np.empty((n, k), dtype=np.float64)
    for i in range(n):
        raw = f.read(4)
        if len(raw) != 4:
            raise FormatError(f"truncated sample record {i} (id length)")
        (slen,) = struct.unpack("<I", raw)
        raw = f.read(slen)
        if len(raw) != slen:
            raise FormatError(f"truncated sample record {i} (id)")
        ids.append(raw.decode("utf-8"))
        raw = f.read(4)
        if len(raw) != 4:
            raise FormatError(f"truncated sample record {i} (label)")
        (label,) = struct.unpack("<i", raw)
        labels[i] = label
        raw = f.read(4 * k)
        if len(raw) != 4 * k:
            raise FormatError(f"truncated sample record {i} (scores)")
        scores[i] = np.frombuffer(raw, dtype="<f4")
    has_labels = (labels >= 0).any()
    try:
        return PredictionSet(sample_ids=tuple(ids), scores=scores,
                             score_kind=_KIND_NAMES[kind_code],
                             labels=labels if has_labels else None)
    except (ContractError, NumericError) as e:
        raise FormatError(f"predictions file violates score invariants: {e}") from e
