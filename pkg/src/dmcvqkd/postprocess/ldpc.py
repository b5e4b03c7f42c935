"""Regular LDPC codes and syndrome belief-propagation decoding.

Parity-check matrices are stored as a plain text file::

    # ldpc n=<n> m=<m> wc=<column weight> wr=<row weight>
    <sorted column indices of row 0, space separated>
    <sorted column indices of row 1>
    ...
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .keys import KeyBuffer, Stage

_LLR_CLIP = 30.0
_TANH_EPS = 1e-12


@dataclass(frozen=True)
class ParityCheckMatrix:
    """Sparse binary ``m x n`` matrix given by its edge list.

    ``check_idx``/``var_idx`` list the nonzero positions sorted by check,
    then by variable.
    """

    n: int
    m: int
    check_idx: np.ndarray
    var_idx: np.ndarray
    column_weight: int | None = None
    row_weight: int | None = None

    def __post_init__(self):
        if not 0 < self.m < self.n:
            raise ValueError(f"need 0 < m < n, got m={self.m}, n={self.n}")
        order = np.lexsort((self.var_idx, self.check_idx))
        c = np.asarray(self.check_idx, dtype=np.int64)[order]
        v = np.asarray(self.var_idx, dtype=np.int64)[order]
        if c.size and (c.min() < 0 or c.max() >= self.m or v.min() < 0 or v.max() >= self.n):
            raise ValueError("edge index out of range")
        dup = (np.diff(c) == 0) & (np.diff(v) == 0)
        if dup.any():
            raise ValueError("duplicate edge in parity-check matrix")
        object.__setattr__(self, "check_idx", c)
        object.__setattr__(self, "var_idx", v)
        if self.column_weight is not None:
            if not np.all(np.bincount(v, minlength=self.n) == self.column_weight):
                raise ValueError("column weights do not match the declared value")
        if self.row_weight is not None:
            if not np.all(np.bincount(c, minlength=self.m) == self.row_weight):
                raise ValueError("row weights do not match the declared value")

    @property
    def rate(self) -> float:
        return 1.0 - self.m / self.n

    def to_sparse(self) -> sparse.csr_matrix:
        data = np.ones(self.check_idx.size, dtype=np.uint8)
        return sparse.csr_matrix((data, (self.check_idx, self.var_idx)), shape=(self.m, self.n))

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def syndrome(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.size != self.n:
            raise ValueError(f"word length {bits.size} does not match code length {self.n}")
        return (np.bincount(self.check_idx, weights=bits[self.var_idx], minlength=self.m).astype(np.int64) & 1).astype(
            np.uint8
        )

    def rows(self) -> list[np.ndarray]:
        bounds = np.searchsorted(self.check_idx, np.arange(self.m + 1))
        return [self.var_idx[bounds[i] : bounds[i + 1]] for i in range(self.m)]

    def has_four_cycles(self) -> bool:
        H = self.to_sparse().astype(np.int32)
        overlap = (H.T @ H).tocoo()
        off = overlap.row != overlap.col
        return bool(np.any(overlap.data[off] > 1))

    def save(self, path) -> None:
        lines = [f"# ldpc n={self.n} m={self.m} wc={self.column_weight or 0} wr={self.row_weight or 0}"]
        lines += [" ".join(map(str, row)) for row in self.rows()]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "ParityCheckMatrix":
        text = Path(path).read_text().splitlines()
        header = dict(tok.split("=") for tok in text[0].lstrip("#").split()[1:])
        n, m = int(header["n"]), int(header["m"])
        wc, wr = int(header.get("wc", 0)) or None, int(header.get("wr", 0)) or None
        rows = text[1 : 1 + m]
        if len(rows) != m:
            raise ValueError(f"expected {m} rows, found {len(rows)}")
        checks, vars_ = [], []
        for i, line in enumerate(rows):
            cols = [int(t) for t in line.split()]
            if cols != sorted(cols):
                raise ValueError(f"row {i} column indices are not sorted")
            checks += [i] * len(cols)
            vars_ += cols
        return cls(n, m, np.array(checks), np.array(vars_), wc, wr)


def gallager_code(
    n: int,
    column_weight: int = 3,
    row_weight: int = 6,
    rng: np.random.Generator | int = 0,
    max_rounds: int = 500,
) -> ParityCheckMatrix:
    """Random ``(column_weight, row_weight)``-regular code without 4-cycles.

    Variable sockets are matched to a random permutation of check sockets.
    Edges that repeat a (check, variable) pair or close a 4-cycle have their
    check end swapped with a random edge until the graph is clean; swaps
    keep every degree fixed.
    """
    if (n * column_weight) % row_weight:
        raise ValueError(f"n * column_weight = {n * column_weight} is not divisible by row_weight {row_weight}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    m = n * column_weight // row_weight
    vars_ = np.repeat(np.arange(n), column_weight)
    checks = rng.permutation(np.repeat(np.arange(m), row_weight))
    n_edges = vars_.size

    for _ in range(max_rounds):
        H = sparse.csr_matrix((np.ones(n_edges, dtype=np.int32), (checks, vars_)), shape=(m, n))
        dup = H.multiply(H > 1).tocoo()
        bad_cols = set(dup.col.tolist())
        Hb = (H > 0).astype(np.int32)
        overlap = (Hb.T @ Hb).tocoo()
        cyc = (overlap.row < overlap.col) & (overlap.data > 1)
        bad_cols.update(overlap.row[cyc].tolist())
        if not bad_cols:
            return ParityCheckMatrix(n, m, checks, vars_, column_weight, row_weight)
        for col in sorted(bad_cols):
            e = col * column_weight + int(rng.integers(column_weight))
            f = int(rng.integers(n_edges))
            checks[e], checks[f] = checks[f], checks[e]
    raise RuntimeError("could not remove all 4-cycles; try another seed or a longer code")


@dataclass(frozen=True)
class DecodeResult:
    success: bool
    iterations: int
    buffer: KeyBuffer | None
    bits: np.ndarray
    leaked_bits: int


def decode_syndrome(
    H: ParityCheckMatrix,
    noisy_bits,
    target_syndrome,
    crossover: float,
    max_iters: int = 50,
):
    """Sum-product decoding of ``noisy_bits`` towards ``target_syndrome``.

    Returns ``(bits, success, iterations)``.
    """
    y = np.asarray(noisy_bits, dtype=np.uint8)
    s = np.asarray(target_syndrome, dtype=np.uint8)
    if y.size != H.n:
        raise ValueError(f"word length {y.size} does not match code length {H.n}")
    if s.size != H.m:
        raise ValueError(f"syndrome length {s.size} does not match {H.m} checks")
    p = min(max(crossover, 1e-6), 0.5 - 1e-6)
    prior = np.log((1 - p) / p) * (1.0 - 2.0 * y)

    c_idx, v_idx = H.check_idx, H.var_idx
    check_sign = 1.0 - 2.0 * s[c_idx]
    hard = y.copy()
    if np.array_equal(H.syndrome(hard), s):
        return hard, True, 0

    v2c = prior[v_idx].copy()
    for it in range(1, max_iters + 1):
        t = np.tanh(np.clip(v2c, -_LLR_CLIP, _LLR_CLIP) / 2)
        mag = np.log(np.maximum(np.abs(t), _TANH_EPS))
        neg = (t < 0).astype(np.int64)
        mag_sum = np.bincount(c_idx, weights=mag, minlength=H.m)
        neg_sum = np.bincount(c_idx, weights=neg, minlength=H.m).astype(np.int64)
        ext_mag = np.exp(mag_sum[c_idx] - mag)
        ext_sign = np.where((neg_sum[c_idx] - neg) & 1, -1.0, 1.0) * check_sign
        c2v = 2 * np.arctanh(np.minimum(ext_mag, 1 - _TANH_EPS)) * ext_sign
        total = prior + np.bincount(v_idx, weights=c2v, minlength=H.n)
        hard = (total < 0).astype(np.uint8)
        if np.array_equal(H.syndrome(hard), s):
            return hard, True, it
        v2c = total[v_idx] - c2v
    return hard, False, max_iters


def reconcile(
    noisy: KeyBuffer,
    reference_syndrome,
    H: ParityCheckMatrix,
    crossover: float,
    max_iters: int = 50,
) -> DecodeResult:
    """Correct ``noisy`` so its syndrome matches the reference party's.

    On failure the block is meant to be discarded; ``buffer`` is then None.
    """
    if len(noisy) != H.n:
        raise ValueError(f"buffer length {len(noisy)} does not match code length {H.n}")
    bits, ok, iters = decode_syndrome(H, noisy.bits, reference_syndrome, crossover, max_iters)
    buf = noisy.advance(bits, Stage.RECONCILED) if ok else None
    return DecodeResult(ok, iters, buf, bits, H.m)
