"""Prompt assembly and the seam to a pluggable text-generation backend.

The rendered prompt is byte-deterministic:

    USER: <instruction> <user query><video:RxC><emotion:LABEL>
    Assistant:

with a trailing space after "Assistant:". The video token block itself
never enters the text channel; it travels out-of-band as a structured
segment (``<video:RxC>`` is only a marker recording its shape). Literal
``<`` in user-controlled text is doubled to ``<<`` so user text can never
forge the marker or the emotion slot.

Reference backends: ``echo`` (returns the user query), ``canned`` (fixed
sentence), and ``wire`` (line-delimited JSON over a TCP byte stream, one
object per line, tokens as base64 little-endian float32).
"""

from __future__ import annotations

import base64
import json
import socket
import socketserver
import threading
import time
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .errors import BackendError, ContractViolation, InputError
from .facial_emotion import EMOTION_LABELS
from .tensor_kit import Tensor
from .vision_language import VideoTokens

EMOTION_TAGS = EMOTION_LABELS + ("none",)

__all__ = [
    "EMOTION_TAGS",
    "PromptBundle",
    "RenderedPrompt",
    "GenerationResult",
    "GenerationBackend",
    "EchoBackend",
    "CannedBackend",
    "WireBackend",
    "register_backend",
    "make_backend",
    "backend_names",
    "escape_text",
    "unescape_text",
    "assemble_prompt",
    "generate_explanation",
    "encode_request",
    "decode_request",
    "encode_response",
    "decode_response",
    "serve_wire",
]


def escape_text(text: str) -> str:
    """Double every literal ``<`` so user text cannot open a control tag."""
    return text.replace("<", "<<")


def unescape_text(text: str) -> str:
    return text.replace("<<", "<")


@dataclass(frozen=True)
class PromptBundle:
    """Everything the generation step needs for one explanation request."""

    instruction: str
    user_query: str
    video_tokens: VideoTokens
    emotion_tag: str

    def __post_init__(self):
        if not self.instruction:
            raise InputError("instruction must be non-empty")
        if not self.user_query:
            raise InputError("user query must be non-empty")
        if self.emotion_tag not in EMOTION_TAGS:
            raise InputError(
                f"emotion tag {self.emotion_tag!r} not in {EMOTION_TAGS}"
            )


@dataclass(frozen=True)
class RenderedPrompt:
    """A rendered request: the template text plus the out-of-band segments.

    ``text`` is the flat prompt with the token marker in place;
    ``instruction``/``user_query``/``emotion_tag`` keep the raw field
    values so wire codecs and backends never re-parse the text channel.
    """

    instruction: str
    user_query: str
    emotion_tag: str
    tokens: VideoTokens
    text: str

    @property
    def token_rows(self) -> int:
        return self.tokens.rows

    @property
    def token_width(self) -> int:
        return self.tokens.k


def assemble_prompt(bundle: PromptBundle) -> RenderedPrompt:
    """Render the byte-exact prompt for one bundle."""
    rows, width = bundle.video_tokens.rows, bundle.video_tokens.k
    text = (
        "USER: "
        + escape_text(bundle.instruction)
        + " "
        + escape_text(bundle.user_query)
        + f"<video:{rows}x{width}>"
        + f"<emotion:{bundle.emotion_tag}>"
        + "\nAssistant: "
    )
    return RenderedPrompt(
        bundle.instruction,
        bundle.user_query,
        bundle.emotion_tag,
        bundle.video_tokens,
        text,
    )


@dataclass(frozen=True)
class GenerationResult:
    explanation: str
    backend_id: str
    latency_ms: float


class GenerationBackend(Protocol):
    name: str

    def generate(self, request: RenderedPrompt) -> str: ...


class EchoBackend:
    """Returns the user query unchanged; the simplest closed loop."""

    name = "echo"

    def generate(self, request: RenderedPrompt) -> str:
        return request.user_query


class CannedBackend:
    """Returns one fixed sentence regardless of input."""

    name = "canned"

    def __init__(self, text: str = "Because the speaker is reacting to what they just saw and heard."):
        self.text = text

    def generate(self, request: RenderedPrompt) -> str:
        return self.text


# ---------------------------------------------------------------------------
# Wire protocol: UTF-8, one JSON object per line.
# Request:  {"instruction", "query", "emotion", "tokens_shape", "tokens_b64"}
# Response: {"explanation"}
# Token payload: base64 of little-endian float32, row-major.
# ---------------------------------------------------------------------------


def encode_request(request: RenderedPrompt) -> bytes:
    payload = np.ascontiguousarray(request.tokens.values.array, dtype="<f4")
    obj = {
        "instruction": request.instruction,
        "query": request.user_query,
        "emotion": request.emotion_tag,
        "tokens_shape": [request.token_rows, request.token_width],
        "tokens_b64": base64.b64encode(payload.tobytes()).decode("ascii"),
    }
    return json.dumps(obj, sort_keys=True, ensure_ascii=False).encode("utf-8") + b"\n"


def decode_request(line: bytes) -> tuple[str, str, str, VideoTokens]:
    try:
        obj = json.loads(line.decode("utf-8"))
        rows, width = (int(v) for v in obj["tokens_shape"])
        raw = base64.b64decode(obj["tokens_b64"], validate=True)
        values = np.frombuffer(raw, dtype="<f4")
        if values.size != rows * width:
            raise ValueError(
                f"token payload holds {values.size} floats, expected {rows * width}"
            )
        tokens = VideoTokens(
            Tensor.from_array(values.astype(np.float64).reshape(rows, width)), width
        )
        return obj["instruction"], obj["query"], obj["emotion"], tokens
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(f"malformed wire request: {exc}", payload=line) from exc


def encode_response(explanation: str) -> bytes:
    return (
        json.dumps({"explanation": explanation}, sort_keys=True, ensure_ascii=False).encode("utf-8")
        + b"\n"
    )


def decode_response(line: bytes) -> str:
    try:
        obj = json.loads(line.decode("utf-8"))
        return str(obj["explanation"])
    except Exception as exc:
        raise BackendError(f"malformed wire response: {exc}", payload=line) from exc


class WireBackend:
    """Line-delimited JSON client. Each call opens its own connection and
    applies the configured timeout to connect and reply."""

    name = "wire"

    def __init__(self, endpoint: str, timeout_s: float = 2.0):
        host, sep, port = endpoint.rpartition(":")
        if not sep or not host:
            raise InputError(f"endpoint must be host:port, got {endpoint!r}")
        self.host = host
        self.port = int(port)
        self.timeout_s = timeout_s

    def generate(self, request: RenderedPrompt) -> str:
        try:
            with socket.create_connection(
                (self.host, self.port), timeout=self.timeout_s
            ) as conn:
                conn.sendall(encode_request(request))
                with conn.makefile("rb") as reader:
                    line = reader.readline()
        except OSError as exc:
            raise BackendError(f"wire backend unreachable: {exc}") from exc
        if not line:
            raise BackendError("wire backend closed without replying", payload=b"")
        return decode_response(line)


def serve_wire(
    handler: Callable[[str, str, str, VideoTokens], str],
    host: str = "127.0.0.1",
    port: int = 0,
) -> tuple[socketserver.ThreadingTCPServer, int]:
    """Reference wire server for tests and demos.

    ``handler`` receives (instruction, query, emotion, tokens) and returns
    the explanation text. Returns the running server (call
    ``shutdown()``/``server_close()`` when done) and its bound port.
    """

    class _Handler(socketserver.StreamRequestHandler):
        def handle(self):
            line = self.rfile.readline()
            if not line:
                return
            instruction, query, emotion, tokens = decode_request(line)
            self.wfile.write(encode_response(handler(instruction, query, emotion, tokens)))

    server = socketserver.ThreadingTCPServer((host, port), _Handler)
    server.daemon_threads = True
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, server.server_address[1]


_BACKENDS: dict[str, Callable[..., GenerationBackend]] = {
    "echo": lambda endpoint, timeout_s: EchoBackend(),
    "canned": lambda endpoint, timeout_s: CannedBackend(),
    "wire": lambda endpoint, timeout_s: WireBackend(endpoint, timeout_s),
}


def register_backend(name: str, factory: Callable[..., GenerationBackend]) -> None:
    _BACKENDS[name] = factory


def make_backend(name: str, endpoint: str, timeout_s: float) -> GenerationBackend:
    if name not in _BACKENDS:
        raise InputError(f"unknown backend {name!r}; registered: {sorted(_BACKENDS)}")
    return _BACKENDS[name](endpoint, timeout_s)


def backend_names() -> list[str]:
    return sorted(_BACKENDS)


def generate_explanation(
    bundle: PromptBundle, backend: GenerationBackend
) -> GenerationResult:
    """Render the bundle, call the backend, and package the reply.

    The reply is returned verbatim apart from trailing whitespace; an
    empty reply is a backend error (raw payload attached).
    """
    request = assemble_prompt(bundle)
    start = time.perf_counter()
    try:
        raw = backend.generate(request)
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(f"backend {backend.name!r} failed: {exc}") from exc
    latency_ms = (time.perf_counter() - start) * 1000.0
    if not isinstance(raw, str):
        raise BackendError(
            f"backend {backend.name!r} returned {type(raw).__name__}, expected str",
            payload=raw,
        )
    text = raw.rstrip()
    if not text:
        raise BackendError(
            f"backend {backend.name!r} returned empty text", payload=raw
        )
    return GenerationResult(text, backend.name, latency_ms)
