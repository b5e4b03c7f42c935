"""Toeplitz hashing over GF(2) for privacy amplification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, signal

from .keys import KeyBuffer, Stage

# below this many input*output bits the dense product is cheaper than an FFT
_DENSE_LIMIT = 1 << 22


@dataclass(frozen=True)
class ToeplitzSeed:
    bits: np.ndarray
    n_in: int
    n_out: int

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8).ravel()
        if self.n_in < 1 or self.n_out < 1:
            raise ValueError("Toeplitz dimensions must be positive")
        if bits.size != self.n_in + self.n_out - 1:
            raise ValueError(f"seed needs {self.n_in + self.n_out - 1} bits, got {bits.size}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def random(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "ToeplitzSeed":
        return cls(rng.integers(0, 2, size=n_in + n_out - 1, dtype=np.uint8), n_in, n_out)

    def matrix(self) -> np.ndarray:
        """Dense ``n_out x n_in`` matrix with ``M[i, j] = bits[i - j + n_in - 1]``."""
        col = self.bits[self.n_in - 1 :]
        row = self.bits[: self.n_in][::-1]
        return linalg.toeplitz(col, row).astype(np.uint8)


def toeplitz_hash(key: KeyBuffer | np.ndarray, seed: ToeplitzSeed, n_out: int | None = None):
    """Compress ``key`` to ``n_out`` bits with the Toeplitz matrix defined by ``seed``.

    Returns a :class:`KeyBuffer` at the FINAL stage when given one, else a
    bit array.
    """
    bits = key.bits if isinstance(key, KeyBuffer) else np.asarray(key, dtype=np.uint8)
    n_out = seed.n_out if n_out is None else n_out
    if n_out != seed.n_out:
        raise ValueError(f"seed was drawn for {seed.n_out} output bits, asked for {n_out}")
    if bits.size != seed.n_in:
        raise ValueError(f"seed was drawn for {seed.n_in} input bits, key has {bits.size}")
    if n_out > bits.size:
        raise ValueError("cannot hash to more bits than the key holds")

    if bits.size * n_out <= _DENSE_LIMIT:
        out = (seed.matrix().astype(np.int64) @ bits.astype(np.int64)) & 1
    else:
        # y_i = sum_j s[i - j + n_in - 1] x_j is a slice of the full convolution
        conv = signal.fftconvolve(seed.bits.astype(np.float64), bits.astype(np.float64))
        out = np.rint(conv[seed.n_in - 1 : seed.n_in - 1 + n_out]).astype(np.int64) & 1
    out = out.astype(np.uint8)
    if isinstance(key, KeyBuffer):
        return key.advance(out, Stage.FINAL)
    return out
