"""Run configuration: one flat key-value file, environment overrides.

Format: ``key = value`` lines, ``#`` comments, blank lines ignored.
Every key has a default, so an empty (or absent) file is a valid run
configuration. Environment variables named ``EMOCAUSE_<KEY>`` override
file values; the ``--seed`` command-line flag overrides both.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputError
from .face_detection import DetectorConfig, head_names
from .facial_emotion import extractor_names
from .prompt_llm import backend_names
from .vision_language import encoder_names

DEFAULTS: dict[str, str] = {
    "encoder": "patch-stats",
    "patch_size": "16",
    "embed_dim": "8",
    "token_dim": "8",
    "projection_weights": "",
    "feature_stride": "8",
    "head": "center-mean",
    "anchor_scales": "16,32",
    "anchor_stride": "8",
    "score_threshold": "0.5",
    "iou_threshold": "0.5",
    "dda_kernel": "0.25,0.5,0.25",
    "mfn_extractor": "grid-mean",
    "mfn_shape": "7,7,4",
    "classifier_weights": "",
    "backend": "echo",
    "endpoint": "127.0.0.1:9199",
    "timeout_ms": "2000",
    "instruction": (
        "Watch the conversation and explain in one or two sentences why "
        "the final utterance carries its emotion."
    ),
    "dedup_threshold": "1.0",
    "semantic_width": "4096",
    "seed": "0",
}

ENV_PREFIX = "EMOCAUSE_"

__all__ = ["DEFAULTS", "ENV_PREFIX", "RunConfig", "load_config"]


def _parse_file(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise InputError(f"{path}:{line_no}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise InputError(
                f"{path}:{line_no}: unknown config key {key!r}"
            )
        values[key] = value.strip()
    return values


def _floats(raw: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise InputError(f"config {key}: expected comma-separated numbers, got {raw!r}") from exc


def _ints(raw: str, key: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise InputError(f"config {key}: expected comma-separated integers, got {raw!r}") from exc


@dataclass(frozen=True)
class RunConfig:
    encoder: str
    patch_size: int
    embed_dim: int
    token_dim: int
    projection_weights: str
    feature_stride: int
    head: str
    anchor_scales: tuple[float, ...]
    anchor_stride: float
    score_threshold: float
    iou_threshold: float
    dda_kernel: tuple[float, ...]
    mfn_extractor: str
    mfn_shape: tuple[int, int, int]
    classifier_weights: str
    backend: str
    endpoint: str
    timeout_ms: float
    instruction: str
    dedup_threshold: float
    semantic_width: int
    seed: int

    def detector(self) -> DetectorConfig:
        return DetectorConfig(
            anchor_scales=self.anchor_scales,
            anchor_stride=self.anchor_stride,
            score_threshold=self.score_threshold,
            iou_threshold=self.iou_threshold,
        )

    def validate(self) -> None:
        if self.encoder not in encoder_names():
            raise InputError(
                f"config encoder {self.encoder!r} not registered ({encoder_names()})"
            )
        if self.head not in head_names():
            raise InputError(
                f"config head {self.head!r} not registered ({head_names()})"
            )
        if self.mfn_extractor not in extractor_names():
            raise InputError(
                f"config mfn_extractor {self.mfn_extractor!r} not registered "
                f"({extractor_names()})"
            )
        if self.backend not in backend_names():
            raise InputError(
                f"config backend {self.backend!r} not registered ({backend_names()})"
            )
        for key, value in (
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("token_dim", self.token_dim),
            ("feature_stride", self.feature_stride),
            ("semantic_width", self.semantic_width),
        ):
            if value < 1:
                raise InputError(f"config {key} must be >= 1, got {value}")
        if len(self.mfn_shape) != 3 or min(self.mfn_shape) < 1:
            raise InputError(f"config mfn_shape must be three positive sizes")
        if len(self.dda_kernel) % 2 == 0 or not self.dda_kernel:
            raise InputError("config dda_kernel must have odd length")
        if self.dedup_threshold < 0:
            raise InputError("config dedup_threshold must be >= 0")
        if self.timeout_ms <= 0:
            raise InputError("config timeout_ms must be positive")
        self.detector()  # range-checks thresholds, scales, stride


def load_config(
    path: str | Path | None = None,
    seed_override: int | None = None,
    environ: dict[str, str] | None = None,
) -> RunConfig:
    """Merge defaults, the optional config file, environment overrides,
    and the command-line seed, then validate."""
    values = dict(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise InputError(f"config file not found: {p}")
        values.update(_parse_file(p))
    env = os.environ if environ is None else environ
    for key in DEFAULTS:
        override = env.get(ENV_PREFIX + key.upper())
        if override is not None:
            values[key] = override

    def to_int(key: str) -> int:
        try:
            return int(values[key])
        except ValueError as exc:
            raise InputError(f"config {key}: expected integer, got {values[key]!r}") from exc

    def to_float(key: str) -> float:
        try:
            return float(values[key])
        except ValueError as exc:
            raise InputError(f"config {key}: expected number, got {values[key]!r}") from exc

    mfn_shape = _ints(values["mfn_shape"], "mfn_shape")
    if len(mfn_shape) != 3:
        raise InputError(f"config mfn_shape must have three sizes, got {values['mfn_shape']!r}")
    cfg = RunConfig(
        encoder=values["encoder"],
        patch_size=to_int("patch_size"),
        embed_dim=to_int("embed_dim"),
        token_dim=to_int("token_dim"),
        projection_weights=values["projection_weights"],
        feature_stride=to_int("feature_stride"),
        head=values["head"],
        anchor_scales=_floats(values["anchor_scales"], "anchor_scales"),
        anchor_stride=to_float("anchor_stride"),
        score_threshold=to_float("score_threshold"),
        iou_threshold=to_float("iou_threshold"),
        dda_kernel=_floats(values["dda_kernel"], "dda_kernel"),
        mfn_extractor=values["mfn_extractor"],
        mfn_shape=(mfn_shape[0], mfn_shape[1], mfn_shape[2]),
        classifier_weights=values["classifier_weights"],
        backend=values["backend"],
        endpoint=values["endpoint"],
        timeout_ms=to_float("timeout_ms"),
        instruction=values["instruction"],
        dedup_threshold=to_float("dedup_threshold"),
        semantic_width=to_int("semantic_width"),
        seed=to_int("seed") if seed_override is None else seed_override,
    )
    try:
        cfg.validate()
    except InputError:
        raise
    except Exception as exc:  # DetectorConfig raises ContractViolation
        raise InputError(f"invalid configuration: {exc}") from exc
    return cfg
