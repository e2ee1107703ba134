"""Vision-language chain: frames -> patch embeddings -> pooled video tokens.

The stages:

1. ``encode_frames`` turns each raw frame into an ``N x D`` block of patch
   embeddings through a pluggable encoder (a deterministic patch-statistics
   stub ships built in; pretrained image encoders plug into the same seam).
2. ``temporal_pool`` averages the N patch positions of each frame, giving
   one row per frame (``T x D``).
3. ``spatial_pool`` averages across the T frames, giving one row per patch
   position (``N x D``).
4. ``fuse`` stacks the two pooled blocks into a ``(T+N) x D`` matrix.
5. ``project_tokens`` maps the fused matrix into the text-embedding width
   with a single linear layer, yielding ``(T+N) x K`` video tokens.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import BackendError, ContractViolation, InputError
from .tensor_kit import Tensor, concat_axis0, matmul, mean_axis

__all__ = [
    "FrameSpec",
    "VideoEmbedding",
    "FusedRepresentation",
    "VideoTokens",
    "FrameEncoder",
    "PatchStatsEncoder",
    "register_encoder",
    "make_encoder",
    "encoder_names",
    "encode_frames",
    "temporal_pool",
    "spatial_pool",
    "fuse",
    "split_fused",
    "project_tokens",
    "init_projection",
]


@dataclass(frozen=True)
class FrameSpec:
    """Pixel geometry of the incoming frames.

    ``height`` and ``width`` must be multiples of ``patch``; ``channels``
    is 1 (grayscale) or 3 (RGB). Channels play no role after encoding.
    """

    height: int
    width: int
    channels: int
    patch: int

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0 or self.patch <= 0:
            raise ContractViolation("frame dimensions must be positive")
        if self.height % self.patch or self.width % self.patch:
            raise ContractViolation(
                f"frame {self.height}x{self.width} not divisible by patch {self.patch}"
            )
        if self.channels not in (1, 3):
            raise ContractViolation(f"channels must be 1 or 3, got {self.channels}")

    @property
    def grid(self) -> tuple[int, int]:
        return (self.height // self.patch, self.width // self.patch)

    @property
    def patches(self) -> int:
        h, w = self.grid
        return h * w


@dataclass(frozen=True)
class VideoEmbedding:
    """Per-frame patch embeddings, shape ``[frames, patches, dim]``."""

    values: Tensor

    def __post_init__(self):
        if self.values.rank != 3:
            raise ContractViolation(
                f"video embedding must be rank 3, got shape {self.values.shape}"
            )
        if min(self.values.shape) < 1:
            raise ContractViolation(
                f"video embedding dimensions must all be >= 1: {self.values.shape}"
            )

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def patches(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class FusedRepresentation:
    """Stacked pooled features: first ``t_rows`` rows are the per-frame
    block, the remaining ``s_rows`` rows are the per-patch block."""

    values: Tensor
    t_rows: int
    s_rows: int

    def __post_init__(self):
        if self.t_rows < 1 or self.s_rows < 1:
            raise ContractViolation("fused representation needs t_rows, s_rows >= 1")
        if self.values.rank != 2 or self.values.shape[0] != self.t_rows + self.s_rows:
            raise ContractViolation(
                f"fused shape {self.values.shape} inconsistent with "
                f"t_rows={self.t_rows}, s_rows={self.s_rows}"
            )


@dataclass(frozen=True)
class VideoTokens:
    """Video features projected into the text-embedding width ``k``."""

    values: Tensor
    k: int

    def __post_init__(self):
        if self.values.rank != 2 or self.values.shape[1] != self.k:
            raise ContractViolation(
                f"token shape {self.values.shape} inconsistent with k={self.k}"
            )

    @property
    def rows(self) -> int:
        return self.values.shape[0]


class FrameEncoder(Protocol):
    """Maps one raw frame to an ``N x D`` block of patch embeddings.

    ``parallel_safe`` declares whether concurrent per-frame calls are safe;
    encoders that keep mutable state should set it to False and will be
    invoked serially.
    """

    name: str
    dim: int
    parallel_safe: bool

    def encode(self, frame: np.ndarray, spec: FrameSpec) -> np.ndarray: ...


class PatchStatsEncoder:
    """Reference encoder with a published, hand-checkable formula.

    Pixel intensities are scaled to [0, 1] (divide by 255). For every
    ``patch x patch`` block the encoder computes four statistics over all
    pixels and channels of the block -- mean, population variance, min,
    max -- and cycles them to fill the embedding width: column ``d`` holds
    statistic ``d mod 4``. Patches are ordered row-major over the grid.
    """

    name = "patch-stats"
    parallel_safe = True

    def __init__(self, dim: int = 8):
        if dim < 1:
            raise ContractViolation("embedding dim must be >= 1")
        self.dim = dim

    def encode(self, frame: np.ndarray, spec: FrameSpec) -> np.ndarray:
        gh, gw = spec.grid
        p = spec.patch
        scaled = np.asarray(frame, dtype=np.float64) / 255.0
        out = np.empty((spec.patches, self.dim))
        idx = 0
        for r in range(gh):
            for c in range(gw):
                block = scaled[r * p : (r + 1) * p, c * p : (c + 1) * p]
                stats = (block.mean(), block.var(), block.min(), block.max())
                out[idx] = [stats[d % 4] for d in range(self.dim)]
                idx += 1
        return out


_ENCODERS: dict[str, Callable[[int], FrameEncoder]] = {}


def register_encoder(name: str, factory: Callable[[int], FrameEncoder]) -> None:
    _ENCODERS[name] = factory


def make_encoder(name: str, dim: int) -> FrameEncoder:
    if name not in _ENCODERS:
        raise InputError(
            f"unknown encoder {name!r}; registered: {sorted(_ENCODERS)}"
        )
    return _ENCODERS[name](dim)


def encoder_names() -> list[str]:
    return sorted(_ENCODERS)


register_encoder("patch-stats", PatchStatsEncoder)


def encode_frames(
    frames: Sequence[np.ndarray],
    spec: FrameSpec,
    encoder: FrameEncoder,
) -> VideoEmbedding:
    """Encode each frame independently into patch embeddings.

    Every frame must match ``spec`` exactly. Encoder exceptions (and
    wrong-shaped encoder output) surface as ``BackendError``.
    """
    if not frames:
        raise InputError("no frames to encode")
    arrays = [np.asarray(f) for f in frames]
    want = (spec.height, spec.width, spec.channels)
    for i, arr in enumerate(arrays):
        if arr.shape != want:
            raise InputError(f"frame {i} has shape {arr.shape}, expected {want}")

    def one(arr: np.ndarray) -> np.ndarray:
        try:
            emb = np.asarray(encoder.encode(arr, spec), dtype=np.float64)
        except Exception as exc:
            raise BackendError(f"frame encoder {encoder.name!r} failed: {exc}") from exc
        if emb.shape != (spec.patches, encoder.dim):
            raise BackendError(
                f"encoder {encoder.name!r} returned shape {emb.shape}, "
                f"expected {(spec.patches, encoder.dim)}"
            )
        return emb

    if getattr(encoder, "parallel_safe", False) and len(arrays) > 1:
        with ThreadPoolExecutor(max_workers=min(4, len(arrays))) as pool:
            blocks = list(pool.map(one, arrays))
    else:
        blocks = [one(arr) for arr in arrays]
    return VideoEmbedding(Tensor.from_array(np.stack(blocks)))


def temporal_pool(x: VideoEmbedding) -> Tensor:
    """Average the patch positions of each frame: ``[T, N, D] -> [T, D]``."""
    return mean_axis(x.values, 1)


def spatial_pool(x: VideoEmbedding) -> Tensor:
    """Average each patch position across frames: ``[T, N, D] -> [N, D]``."""
    return mean_axis(x.values, 0)


def fuse(rt: Tensor, rs: Tensor) -> FusedRepresentation:
    """Stack per-frame rows above per-patch rows into one matrix."""
    if rt.rank != 2 or rs.rank != 2:
        raise ContractViolation("fuse expects two rank-2 tensors")
    if rt.shape[0] < 1 or rs.shape[0] < 1:
        raise ContractViolation("fuse requires at least one row on each side")
    if rt.shape[1] != rs.shape[1]:
        raise ContractViolation(
            f"fuse width mismatch: {rt.shape[1]} vs {rs.shape[1]}"
        )
    return FusedRepresentation(concat_axis0(rt, rs), rt.shape[0], rs.shape[0])


def split_fused(r: FusedRepresentation) -> tuple[Tensor, Tensor]:
    """Recover the per-frame and per-patch blocks of a fused matrix."""
    arr = r.values.array
    return (
        Tensor.from_array(arr[: r.t_rows]),
        Tensor.from_array(arr[r.t_rows :]),
    )


def project_tokens(r: FusedRepresentation, g: Tensor) -> VideoTokens:
    """Apply the linear projection into the text-embedding space."""
    if g.rank != 2 or g.shape[0] != r.values.shape[1]:
        raise ContractViolation(
            f"projection shape {g.shape} incompatible with fused width "
            f"{r.values.shape[1]}"
        )
    return VideoTokens(matmul(r.values, g), g.shape[1])


def init_projection(dim: int, token_dim: int, seed: int) -> Tensor:
    """Seeded uniform(-0.1, 0.1) projection weights, used when no weight
    file is configured. Reproducible across platforms."""
    rng = np.random.default_rng([seed, 0x7600])
    return Tensor.from_array(rng.uniform(-0.1, 0.1, size=(dim, token_dim)))
