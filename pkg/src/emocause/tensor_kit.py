"""Dense float64 tensor container and the numeric primitives used downstream.

Values are immutable after construction and laid out row-major, so the
binary container format (see :mod:`emocause.container`) is bit-defined.
No broadcasting, no views: every operation allocates a fresh tensor.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractViolation

__all__ = [
    "Tensor",
    "mean_axis",
    "concat_axis0",
    "matmul",
    "sigmoid",
    "elementwise_mul",
    "elementwise_max",
]

# Open-interval bounds for sigmoid: float64 expit saturates to exactly 0.0/1.0
# for |x| > ~37, which would break the strict (0, 1) output guarantee.
_SIGMOID_LO = np.nextafter(0.0, 1.0)
_SIGMOID_HI = np.nextafter(1.0, 0.0)


class Tensor:
    """A dense row-major array of 64-bit floats with an explicit shape.

    Zero-size dimensions are permitted (an empty ``0 x D`` tensor is the
    identity for :func:`concat_axis0`); negative dimensions are not.
    """

    __slots__ = ("_array",)

    def __init__(self, shape: Sequence[int], data: Iterable[float]):
        shape = tuple(int(d) for d in shape)
        if any(d < 0 for d in shape):
            raise ContractViolation(f"negative dimension in shape {shape}")
        arr = np.asarray(list(data), dtype=np.float64)
        expected = int(np.prod(shape, dtype=object)) if shape else 1
        if arr.size != expected:
            raise ContractViolation(
                f"data length {arr.size} does not match shape {shape} "
                f"(expected {expected})"
            )
        self._array = np.ascontiguousarray(arr.reshape(shape))
        self._array.flags.writeable = False

    @classmethod
    def from_array(cls, array: np.ndarray) -> "Tensor":
        """Wrap a numpy array (copied, cast to float64, made read-only)."""
        t = cls.__new__(cls)
        arr = np.ascontiguousarray(np.asarray(array, dtype=np.float64))
        t._array = arr.copy()
        t._array.flags.writeable = False
        return t

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "Tensor":
        return cls.from_array(np.zeros(tuple(shape)))

    @classmethod
    def full(cls, shape: Sequence[int], value: float) -> "Tensor":
        return cls.from_array(np.full(tuple(shape), float(value)))

    @classmethod
    def identity(cls, n: int) -> "Tensor":
        return cls.from_array(np.eye(n))

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def rank(self) -> int:
        return self._array.ndim

    @property
    def size(self) -> int:
        return self._array.size

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the values (read-only)."""
        return self._array.reshape(-1)

    @property
    def array(self) -> np.ndarray:
        """Shaped read-only view of the values."""
        return self._array

    def tolist(self):
        return self._array.tolist()

    def item(self) -> float:
        return float(self._array.reshape(-1)[0])

    def __getitem__(self, idx):
        return self._array[idx]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(
            self._array, other._array
        )

    def __hash__(self):
        return hash((self.shape, self._array.tobytes()))

    def allclose(self, other: "Tensor", tol: float = 1e-9) -> bool:
        return self.shape == other.shape and np.allclose(
            self._array, other._array, rtol=0.0, atol=tol
        )

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, data={self.data.tolist()!r})"


def mean_axis(t: Tensor, axis: int) -> Tensor:
    """Arithmetic mean along ``axis``; the axis is removed from the shape."""
    if not 0 <= axis < t.rank:
        raise ContractViolation(f"axis {axis} out of range for rank {t.rank}")
    return Tensor.from_array(t.array.mean(axis=axis))


def concat_axis0(a: Tensor, b: Tensor) -> Tensor:
    """Stack the rows of ``a`` above the rows of ``b``.

    Trailing shapes (everything past axis 0) must agree exactly.
    """
    if a.rank == 0 or b.rank == 0:
        raise ContractViolation("cannot concatenate rank-0 tensors")
    if a.shape[1:] != b.shape[1:]:
        raise ContractViolation(
            f"trailing shapes differ: {a.shape[1:]} vs {b.shape[1:]}"
        )
    return Tensor.from_array(np.concatenate([a.array, b.array], axis=0))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard matrix product of a [m x k] and a [k x n] tensor."""
    if a.rank != 2 or b.rank != 2:
        raise ContractViolation(
            f"matmul needs rank-2 operands, got ranks {a.rank} and {b.rank}"
        )
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(
            f"inner dimensions disagree: {a.shape} x {b.shape}"
        )
    return Tensor.from_array(a.array @ b.array)


def sigmoid(t: Tensor) -> Tensor:
    """Elementwise logistic function 1/(1+e^-x), strictly inside (0, 1).

    Outputs are clamped to the nearest representable values inside the open
    interval, so the range guarantee survives float64 saturation (the clamp
    moves a value by at most one ulp).
    """
    return Tensor.from_array(np.clip(expit(t.array), _SIGMOID_LO, _SIGMOID_HI))


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ContractViolation(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "elementwise_mul")
    return Tensor.from_array(a.array * b.array)


def elementwise_max(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "elementwise_max")
    return Tensor.from_array(np.maximum(a.array, b.array))
