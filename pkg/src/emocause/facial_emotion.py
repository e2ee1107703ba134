"""Stage 2 of the face pipeline: crop features, dual-direction attention,
sigmoid-gated fusion, emotion classification, and per-video aggregation.

The feature extractor is pluggable (a grid-mean stub ships built in); the
attention step runs a depthwise 1-D sliding dot product along each image
axis, the two directional maps are combined as ``max(fx, fy) * sigmoid(fx
* fy)``, and a single fully connected layer produces the 7-way emotion
logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, floor
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy import ndimage

from .errors import BackendError, ContractViolation, InputError
from .face_detection import Box
from .tensor_kit import Tensor, elementwise_max, elementwise_mul, sigmoid

EMOTION_LABELS = ("anger", "disgust", "fear", "joy", "sadness", "surprise", "neutral")

__all__ = [
    "EMOTION_LABELS",
    "FaceCrop",
    "AttentionMaps",
    "EmotionPrediction",
    "VideoEmotionSummary",
    "MfnExtractor",
    "GridMeanExtractor",
    "register_extractor",
    "make_extractor",
    "extractor_names",
    "crop_face",
    "extract_mfn_features",
    "dda_attention",
    "fuse_attention",
    "attention_maps",
    "classify_emotion",
    "init_classifier",
    "summarize_video_emotions",
]


@dataclass(frozen=True)
class FaceCrop:
    """Pixels cut from a frame by a final detection box."""

    pixels: np.ndarray
    source_frame: int
    source_box: Box

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.size == 0:
            raise ContractViolation(
                f"face crop must be a non-empty HxWxC array, got shape "
                f"{self.pixels.shape}"
            )


def crop_face(frame: np.ndarray, box: Box, frame_index: int) -> FaceCrop:
    """Cut the pixels under ``box`` (outer pixel bounds, clamped)."""
    h, w = frame.shape[0], frame.shape[1]
    x1 = max(0, floor(box.x1))
    y1 = max(0, floor(box.y1))
    x2 = min(w, ceil(box.x2))
    y2 = min(h, ceil(box.y2))
    if x2 <= x1 or y2 <= y1:
        raise InputError(f"box {box} covers no pixels of a {h}x{w} frame")
    return FaceCrop(np.asarray(frame)[y1:y2, x1:x2], frame_index, box)


class MfnExtractor(Protocol):
    """Maps a face crop to a feature map of fixed shape ``[Hf, Wf, Cf]``."""

    name: str
    feature_shape: tuple[int, int, int]

    def extract(self, crop: FaceCrop) -> Tensor: ...


class GridMeanExtractor:
    """Reference extractor: grayscale (channel mean), scale to [0, 1],
    grid-mean pool to ``Hf x Wf``, replicate to ``Cf`` channels.

    Output cell (r, c) averages the pixel block between the evenly spaced
    integer boundaries ``floor(r*H'/Hf)`` and ``floor((r+1)*H'/Hf)``; when a
    block would be empty (crop smaller than the grid) the nearest single
    pixel row/column is used instead.
    """

    name = "grid-mean"

    def __init__(self, feature_shape: tuple[int, int, int] = (7, 7, 4)):
        hf, wf, cf = feature_shape
        if hf < 1 or wf < 1 or cf < 1:
            raise ContractViolation(f"bad feature shape {feature_shape}")
        self.feature_shape = (hf, wf, cf)

    @staticmethod
    def _bounds(size: int, cells: int, i: int) -> tuple[int, int]:
        lo = (i * size) // cells
        hi = ((i + 1) * size) // cells
        if hi <= lo:
            lo = min(lo, size - 1)
            hi = lo + 1
        return lo, hi

    def extract(self, crop: FaceCrop) -> Tensor:
        hf, wf, cf = self.feature_shape
        gray = np.asarray(crop.pixels, dtype=np.float64).mean(axis=2) / 255.0
        h, w = gray.shape
        pooled = np.empty((hf, wf))
        for r in range(hf):
            r0, r1 = self._bounds(h, hf, r)
            for c in range(wf):
                c0, c1 = self._bounds(w, wf, c)
                pooled[r, c] = gray[r0:r1, c0:c1].mean()
        return Tensor.from_array(np.repeat(pooled[:, :, None], cf, axis=2))


_EXTRACTORS: dict[str, Callable[[tuple[int, int, int]], MfnExtractor]] = {
    "grid-mean": GridMeanExtractor,
}


def register_extractor(name: str, factory) -> None:
    _EXTRACTORS[name] = factory


def make_extractor(name: str, feature_shape: tuple[int, int, int]) -> MfnExtractor:
    if name not in _EXTRACTORS:
        raise InputError(
            f"unknown face feature extractor {name!r}; registered: {sorted(_EXTRACTORS)}"
        )
    return _EXTRACTORS[name](feature_shape)


def extractor_names() -> list[str]:
    return sorted(_EXTRACTORS)


def extract_mfn_features(crop: FaceCrop, extractor: MfnExtractor) -> Tensor:
    """Run the pluggable extractor; failures surface as ``BackendError``."""
    try:
        features = extractor.extract(crop)
    except Exception as exc:
        raise BackendError(f"face extractor {extractor.name!r} failed: {exc}") from exc
    if features.shape != tuple(extractor.feature_shape):
        raise BackendError(
            f"extractor {extractor.name!r} returned shape {features.shape}, "
            f"declared {extractor.feature_shape}"
        )
    return features


_AXIS_FOR_DIRECTION = {"x": 1, "y": 0}


def dda_attention(f: Tensor, direction: str, weights: Sequence[float]) -> Tensor:
    """Depthwise 1-D sliding dot product along one image axis.

    ``direction`` is "x" (along the width axis) or "y" (along the height
    axis); the odd-length kernel is shared across channels and applied
    with zero padding, so the output shape equals the input shape. The
    kernel is centered: ``out[i] = sum_k w[k] * f[i + k - len(w)//2]``.
    """
    key = direction.lower()
    if key not in _AXIS_FOR_DIRECTION:
        raise ContractViolation(f"direction must be 'x' or 'y', got {direction!r}")
    kernel = np.asarray(list(weights), dtype=np.float64)
    if kernel.ndim != 1 or kernel.size % 2 == 0 or kernel.size == 0:
        raise ContractViolation(f"kernel must be 1-D with odd length, got {kernel.shape}")
    if f.rank not in (2, 3):
        raise ContractViolation(f"feature map must be rank 2 or 3, got {f.rank}")
    axis = _AXIS_FOR_DIRECTION[key]
    out = ndimage.correlate1d(
        f.array, kernel, axis=axis, mode="constant", cval=0.0
    )
    return Tensor.from_array(out)


def fuse_attention(fx: Tensor, fy: Tensor) -> Tensor:
    """Combine the two directional maps: ``max(fx, fy) * sigmoid(fx * fy)``.

    Symmetric in its arguments, and bounded elementwise by
    ``max(|fx|, |fy|)`` since the gate stays below one.
    """
    if fx.shape != fy.shape:
        raise ContractViolation(f"attention shape mismatch: {fx.shape} vs {fy.shape}")
    return elementwise_mul(elementwise_max(fx, fy), sigmoid(elementwise_mul(fx, fy)))


@dataclass(frozen=True)
class AttentionMaps:
    fx: Tensor
    fy: Tensor
    fused: Tensor


def attention_maps(f: Tensor, weights: Sequence[float]) -> AttentionMaps:
    """Both directional passes plus their fusion, with one shared kernel."""
    fx = dda_attention(f, "x", weights)
    fy = dda_attention(f, "y", weights)
    return AttentionMaps(fx, fy, fuse_attention(fx, fy))


@dataclass(frozen=True)
class EmotionPrediction:
    label: str
    logits: tuple[float, ...]
    confidence: float

    def __post_init__(self):
        if self.label not in EMOTION_LABELS:
            raise ContractViolation(f"unknown emotion label {self.label!r}")
        if len(self.logits) != len(EMOTION_LABELS):
            raise ContractViolation("logits must have one entry per label")
        if not 0.0 < self.confidence <= 1.0:
            raise ContractViolation(f"confidence {self.confidence} outside (0, 1]")


def classify_emotion(f_att: Tensor, head: Tensor, bias: Tensor) -> EmotionPrediction:
    """Fully connected classifier over the flattened attention map.

    ``logits = flatten(f_att) @ head + bias``; the label is the argmax in
    the fixed label order (ties fall to the earlier label) and the
    confidence is that label's softmax probability.
    """
    n_labels = len(EMOTION_LABELS)
    flat = f_att.data
    if head.rank != 2 or head.shape != (flat.size, n_labels):
        raise ContractViolation(
            f"head shape {head.shape} incompatible with {flat.size} features "
            f"and {n_labels} labels"
        )
    if bias.shape != (n_labels,):
        raise ContractViolation(f"bias shape {bias.shape}, expected ({n_labels},)")
    logits = flat @ head.array + bias.array
    idx = int(np.argmax(logits))
    shifted = np.exp(logits - logits.max())
    confidence = float(shifted[idx] / shifted.sum())
    return EmotionPrediction(EMOTION_LABELS[idx], tuple(float(v) for v in logits), confidence)


def init_classifier(flat_size: int, seed: int) -> tuple[Tensor, Tensor]:
    """Seeded uniform(-0.1, 0.1) weights and bias for the emotion head."""
    rng = np.random.default_rng([seed, 0xFACE])
    head = rng.uniform(-0.1, 0.1, size=(flat_size, len(EMOTION_LABELS)))
    bias = rng.uniform(-0.1, 0.1, size=len(EMOTION_LABELS))
    return Tensor.from_array(head), Tensor.from_array(bias)


@dataclass(frozen=True)
class VideoEmotionSummary:
    """Per-face predictions rolled up into one prompt-ready signal.

    ``dominant`` is the non-neutral label with the largest summed
    confidence ("none" when every face is neutral or there are no faces);
    ties fall to the earlier label in the fixed order.
    """

    per_face: tuple[tuple[int, EmotionPrediction], ...]
    dominant: str
    histogram: dict[str, int]


def summarize_video_emotions(
    preds: Sequence[EmotionPrediction],
    frames: Sequence[int] | None = None,
) -> VideoEmotionSummary:
    if frames is None:
        frames = range(len(preds))
    frames = list(frames)
    if len(frames) != len(preds):
        raise ContractViolation(
            f"{len(preds)} predictions but {len(frames)} frame indices"
        )
    histogram = {label: 0 for label in EMOTION_LABELS}
    weighted = {label: 0.0 for label in EMOTION_LABELS if label != "neutral"}
    for pred in preds:
        histogram[pred.label] += 1
        if pred.label != "neutral":
            weighted[pred.label] += pred.confidence
    dominant = "none"
    best = 0.0
    for label in EMOTION_LABELS:
        if label != "neutral" and weighted[label] > best:
            best = weighted[label]
            dominant = label
    return VideoEmotionSummary(
        tuple(zip(frames, preds)), dominant, histogram
    )
