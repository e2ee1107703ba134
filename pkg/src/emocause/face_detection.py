"""Stage 1 of the face pipeline: anchors, box scoring/decoding, and NMS.

A feature extractor (pluggable, grid-pool stub built in) turns a frame
into a feature map; multi-scale anchors tile that map; a detection head
(pluggable) scores each anchor and emits regression deltas; the decoded
boxes are reduced with greedy IoU-threshold non-maximum suppression.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import exp, isfinite
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import BackendError, ContractViolation, InputError
from .tensor_kit import Tensor
from .vision_language import FrameSpec

__all__ = [
    "Box",
    "Anchor",
    "Detection",
    "DetectorConfig",
    "DecodeOutcome",
    "DetectionHead",
    "ConstantHead",
    "CenterMeanHead",
    "FeatureExtractor",
    "GridPoolExtractor",
    "register_head",
    "make_head",
    "head_names",
    "generate_anchors",
    "score_anchors",
    "decode_boxes",
    "iou",
    "nms",
]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in corner form, ``x1 < x2`` and ``y1 < y2``."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(isfinite(v) for v in vals):
            raise ContractViolation(f"box coordinates must be finite: {vals}")
        if self.x1 >= self.x2 or self.y1 >= self.y2:
            raise ContractViolation(f"degenerate box: {vals}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True)
class Anchor:
    """Candidate box of a fixed scale centered on a feature-map cell."""

    cx: float
    cy: float
    width: float
    height: float
    scale_index: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ContractViolation("anchor width/height must be positive")

    def as_box(self) -> Box:
        hw, hh = self.width / 2.0, self.height / 2.0
        return Box(self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)


@dataclass(frozen=True)
class Detection:
    """A scored box plus the raw regression offsets that produced it."""

    box: Box
    face_score: float
    deltas: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if not 0.0 <= self.face_score <= 1.0:
            raise ContractViolation(f"face_score {self.face_score} outside [0, 1]")


@dataclass(frozen=True)
class DetectorConfig:
    anchor_scales: tuple[float, ...] = (16.0, 32.0)
    anchor_stride: float = 8.0
    score_threshold: float = 0.5
    iou_threshold: float = 0.5

    def __post_init__(self):
        if not self.anchor_scales or any(s <= 0 for s in self.anchor_scales):
            raise ContractViolation("anchor scales must be positive and non-empty")
        if self.anchor_stride <= 0:
            raise ContractViolation("anchor stride must be positive")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ContractViolation("score threshold must lie in [0, 1]")
        if not 0.0 < self.iou_threshold < 1.0:
            raise ContractViolation("IoU threshold must lie strictly in (0, 1)")


def generate_anchors(
    feature_h: int, feature_w: int, cfg: DetectorConfig
) -> list[Anchor]:
    """One anchor per (cell, scale), centered at ``(col+0.5, row+0.5)*stride``.

    Ordering is row-major over cells, scales innermost.
    """
    if feature_h < 1 or feature_w < 1:
        raise ContractViolation("feature map dimensions must be positive")
    stride = cfg.anchor_stride
    anchors = []
    for row in range(feature_h):
        for col in range(feature_w):
            cx = (col + 0.5) * stride
            cy = (row + 0.5) * stride
            for si, scale in enumerate(cfg.anchor_scales):
                anchors.append(Anchor(cx, cy, scale, scale, si))
    return anchors


class DetectionHead(Protocol):
    """Scores one anchor against a feature map.

    Returns ``(face_score, (dx, dy, dw, dh))``.
    """

    name: str

    def score(
        self, feature_map: Tensor, anchor: Anchor
    ) -> tuple[float, tuple[float, float, float, float]]: ...


class ConstantHead:
    """Fixed score and deltas for every anchor; handy for plumbing tests."""

    name = "constant"

    def __init__(self, face_score: float = 0.9, deltas=(0.0, 0.0, 0.0, 0.0)):
        self.face_score = face_score
        self.deltas = tuple(deltas)

    def score(self, feature_map, anchor):
        return self.face_score, self.deltas


class CenterMeanHead:
    """Reference head: score = logistic of the mean feature value in the
    cell containing the anchor center; deltas are zero.

    ``stride`` maps pixel centers to feature cells; centers past the map
    edge clamp to the border cell.
    """

    name = "center-mean"

    def __init__(self, stride: float):
        if stride <= 0:
            raise ContractViolation("stride must be positive")
        self.stride = stride

    def score(self, feature_map: Tensor, anchor: Anchor):
        fh, fw = feature_map.shape[0], feature_map.shape[1]
        row = min(int(anchor.cy // self.stride), fh - 1)
        col = min(int(anchor.cx // self.stride), fw - 1)
        cell = np.asarray(feature_map.array[row, col], dtype=np.float64)
        mean = float(cell.mean()) if cell.size else 0.0
        return float(1.0 / (1.0 + np.exp(-mean))), (0.0, 0.0, 0.0, 0.0)


_HEADS: dict[str, Callable[..., DetectionHead]] = {
    "constant": lambda stride: ConstantHead(),
    "center-mean": lambda stride: CenterMeanHead(stride),
}


def register_head(name: str, factory: Callable[..., DetectionHead]) -> None:
    _HEADS[name] = factory


def make_head(name: str, stride: float) -> DetectionHead:
    if name not in _HEADS:
        raise InputError(f"unknown detection head {name!r}; registered: {sorted(_HEADS)}")
    return _HEADS[name](stride)


def head_names() -> list[str]:
    return sorted(_HEADS)


class FeatureExtractor(Protocol):
    """Turns a raw frame into the feature map the detector runs on."""

    name: str

    def extract(self, frame: np.ndarray, spec: FrameSpec) -> Tensor: ...


class GridPoolExtractor:
    """Reference extractor: grayscale (channel mean), scale to [0, 1],
    average-pool ``stride x stride`` blocks. Frame sides must divide by
    the stride."""

    name = "grid-pool"

    def __init__(self, stride: int):
        if stride <= 0:
            raise ContractViolation("stride must be positive")
        self.stride = stride

    def extract(self, frame: np.ndarray, spec: FrameSpec) -> Tensor:
        s = self.stride
        if spec.height % s or spec.width % s:
            raise ContractViolation(
                f"frame {spec.height}x{spec.width} not divisible by stride {s}"
            )
        gray = np.asarray(frame, dtype=np.float64).mean(axis=2) / 255.0
        fh, fw = spec.height // s, spec.width // s
        pooled = gray.reshape(fh, s, fw, s).mean(axis=(1, 3))
        return Tensor.from_array(pooled)


def score_anchors(
    feature_map: Tensor,
    anchors: Sequence[Anchor],
    head: DetectionHead,
) -> list[Detection]:
    """Run the head on every anchor. Head exceptions surface as
    ``BackendError``; deltas are applied later by :func:`decode_boxes`."""
    detections = []
    for anchor in anchors:
        try:
            score, deltas = head.score(feature_map, anchor)
        except Exception as exc:
            raise BackendError(f"detection head {head.name!r} failed: {exc}") from exc
        detections.append(Detection(anchor.as_box(), float(score), tuple(deltas)))
    return detections


@dataclass(frozen=True)
class DecodeOutcome:
    detections: list[Detection]
    dropped: int


def decode_boxes(detections: Sequence[Detection], frame: FrameSpec) -> DecodeOutcome:
    """Apply the parametric regression decode and clamp to the frame.

    ``cx' = cx + dx*w``, ``cy' = cy + dy*h``, ``w' = w*exp(dw)``,
    ``h' = h*exp(dh)``. Boxes with zero area after clamping are dropped
    and counted in ``dropped``.
    """
    kept = []
    dropped = 0
    for det in detections:
        dx, dy, dw, dh = det.deltas
        if not all(isfinite(v) for v in det.deltas):
            raise ContractViolation(f"non-finite deltas: {det.deltas}")
        b = det.box
        w = b.x2 - b.x1
        h = b.y2 - b.y1
        cx = b.x1 + w / 2.0 + dx * w
        cy = b.y1 + h / 2.0 + dy * h
        nw = w * exp(dw)
        nh = h * exp(dh)
        x1 = max(0.0, min(float(frame.width), cx - nw / 2.0))
        x2 = max(0.0, min(float(frame.width), cx + nw / 2.0))
        y1 = max(0.0, min(float(frame.height), cy - nh / 2.0))
        y2 = max(0.0, min(float(frame.height), cy + nh / 2.0))
        if x2 - x1 <= 0.0 or y2 - y1 <= 0.0:
            dropped += 1
            continue
        kept.append(Detection(Box(x1, y1, x2, y2), det.face_score, det.deltas))
    return DecodeOutcome(kept, dropped)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def nms(detections: Sequence[Detection], cfg: DetectorConfig) -> list[Detection]:
    """Greedy non-maximum suppression.

    Detections below the score threshold are discarded; the rest are
    visited in descending score order (ties: smaller area first, then
    input order) and kept iff their IoU with every already-kept detection
    does not exceed the IoU threshold.
    """
    candidates = [
        (det, i)
        for i, det in enumerate(detections)
        if det.face_score >= cfg.score_threshold
    ]
    candidates.sort(key=lambda pair: (-pair[0].face_score, pair[0].box.area, pair[1]))
    kept: list[Detection] = []
    for det, _ in candidates:
        if all(iou(det.box, k.box) <= cfg.iou_threshold for k in kept):
            kept.append(det)
    return kept
