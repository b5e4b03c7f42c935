"""Key buffers, parameter estimation, final key length and leakage ledger."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ..security import binary_entropy

DEFAULT_EPSILON_MARGIN = 100


class Stage(enum.IntEnum):
    RAW = 0
    RECONCILED = 1
    FINAL = 2


@dataclass(frozen=True)
class KeyBuffer:
    bits: np.ndarray
    origin: str = "alice"
    stage: Stage = Stage.RAW

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8).ravel()
        if bits.size and bits.max() > 1:
            raise ValueError("key bits must be 0 or 1")
        object.__setattr__(self, "bits", bits)
        if self.origin not in ("alice", "bob"):
            raise ValueError(f"origin must be 'alice' or 'bob', got {self.origin!r}")
        object.__setattr__(self, "stage", Stage(self.stage))

    def __len__(self) -> int:
        return self.bits.size

    def advance(self, bits, stage: Stage) -> "KeyBuffer":
        stage = Stage(stage)
        if stage < self.stage:
            raise ValueError(f"cannot move a key from {self.stage.name} back to {stage.name}")
        return KeyBuffer(bits, self.origin, stage)

    def to_hex(self) -> str:
        return bits_to_hex(self.bits)


def bits_to_hex(bits) -> str:
    """Big-endian hex, zero-padded to whole bytes; length is carried separately."""
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes().hex()


def hex_to_bits(text: str, n_bits: int) -> np.ndarray:
    raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
    return np.unpackbits(raw)[:n_bits]


@dataclass
class LeakageLedger:
    """Running tally of bits revealed on the classical channel."""

    disclosed: int = 0
    syndrome: int = 0
    hash_seed: int = 0
    failed_blocks: int = 0
    discarded_bits: int = 0
    events: list = field(default_factory=list)

    def record(self, kind: str, n: int) -> None:
        if kind not in ("disclosed", "syndrome", "hash_seed", "failed_blocks", "discarded_bits"):
            raise KeyError(kind)
        setattr(self, kind, getattr(self, kind) + int(n))
        self.events.append((kind, int(n)))

    def merge(self, other: "LeakageLedger") -> "LeakageLedger":
        return LeakageLedger(
            self.disclosed + other.disclosed,
            self.syndrome + other.syndrome,
            self.hash_seed + other.hash_seed,
            self.failed_blocks + other.failed_blocks,
            self.discarded_bits + other.discarded_bits,
            self.events + other.events,
        )

    @property
    def total_public(self) -> int:
        """Bits that correlate with the key: disclosed bits plus syndromes."""
        return self.disclosed + self.syndrome

    def as_dict(self) -> dict:
        return {
            "disclosed_bits": self.disclosed,
            "syndrome_bits": self.syndrome,
            "hash_seed_bits": self.hash_seed,
            "failed_blocks": self.failed_blocks,
            "discarded_bits": self.discarded_bits,
        }


def parameter_estimation(alice: KeyBuffer, bob: KeyBuffer, fraction: float, rng: np.random.Generator):
    """Publicly compare a random subset of positions and drop them.

    Returns ``(qber_estimate, alice_rest, bob_rest, n_disclosed)``.
    """
    if len(alice) != len(bob):
        raise ValueError(f"buffer lengths differ: {len(alice)} != {len(bob)}")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(alice)
    k = max(1, int(round(fraction * n)))
    if k >= n:
        raise ValueError("disclosure would consume the whole buffer")
    picked = np.zeros(n, dtype=bool)
    picked[rng.choice(n, size=k, replace=False)] = True
    estimate = float(np.mean(alice.bits[picked] != bob.bits[picked]))
    keep = ~picked
    return (
        estimate,
        KeyBuffer(alice.bits[keep], alice.origin, alice.stage),
        KeyBuffer(bob.bits[keep], bob.origin, bob.stage),
        k,
    )


def final_key_length(
    n_conclusive: int,
    qber: float,
    i_be: float,
    beta: float,
    epsilon_margin: float = DEFAULT_EPSILON_MARGIN,
) -> int:
    """``floor(n (beta (1 - h2(qber)) - i_be) - margin)``, clamped at zero."""
    if n_conclusive < 0:
        raise ValueError("n_conclusive must be >= 0")
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    raw = n_conclusive * (beta * (1.0 - binary_entropy(qber)) - i_be) - epsilon_margin
    return max(0, int(math.floor(raw)))
