"""Monte Carlo execution of the four-state protocol and its closed forms.

Per-pulse data is kept column-wise in :class:`TrialRecords` (one numpy
array per field); :class:`TrialRecord` is the row view.
"""

from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .channel import ChannelParams, DetectorParams
from .gaussian_core import VACUUM_VARIANCE, CoherentAmplitude, SymbolPhase, erfc

BLOCK_SIZE = 1 << 16

# Substream identifiers; each logical role draws from its own generator.
ROLE_ALICE = 0
ROLE_BOB = 1
ROLE_CHANNEL = 2
ROLE_DISCLOSURE = 3
ROLE_PRIVACY = 4
ROLE_CALIBRATION = 5
ROLE_EVE = 6


def substream(seed: int, role: int, block: int = 0) -> np.random.Generator:
    """Independent PCG64 generator keyed by ``(seed, role, block)``."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(role, block))
    return np.random.Generator(np.random.PCG64(ss))


class Verdict(enum.IntEnum):
    BIT0 = 0
    BIT1 = 1
    INCONCLUSIVE = 2
    UNSIFTED = 3


BASIS_NAMES = ("q", "p")


@dataclass(frozen=True)
class ProtocolParams:
    alpha: CoherentAmplitude = field(default_factory=lambda: CoherentAmplitude(1.0))
    channel: ChannelParams = field(default_factory=ChannelParams)
    detector: DetectorParams = field(default_factory=DetectorParams)
    x0: float = 0.0
    n_pulses: int = 100_000
    seed: int = 0
    disclosure_fraction: float = 0.05

    def __post_init__(self):
        if not self.x0 >= 0:
            raise ValueError(f"x0 must be >= 0, got {self.x0}")
        if self.n_pulses < 1:
            raise ValueError(f"n_pulses must be >= 1, got {self.n_pulses}")
        if not 0.0 <= self.disclosure_fraction < 1.0:
            raise ValueError(f"disclosure_fraction must lie in [0, 1), got {self.disclosure_fraction}")

    @classmethod
    def make(
        cls,
        mean_photon: float = 1.0,
        T: float = 1.0,
        eta: float = 1.0,
        xi_ch: float = 0.0,
        xi_ele: float = 0.0,
        **kw,
    ) -> "ProtocolParams":
        return cls(
            alpha=CoherentAmplitude.from_mean_photon(mean_photon),
            channel=ChannelParams(T, xi_ch),
            detector=DetectorParams(eta, xi_ele),
            **kw,
        )

    @property
    def signal_mean(self) -> float:
        """Mean of a matched-basis sample for bit 1: ``sqrt(T eta) |alpha|``."""
        return math.sqrt(self.channel.T * self.detector.eta) * abs(self.alpha.alpha)

    @property
    def noise_variance(self) -> float:
        return VACUUM_VARIANCE + self.channel.xi_ch + self.detector.xi_ele


@dataclass(frozen=True)
class TrialRecord:
    alice_phase: SymbolPhase
    alice_bit: int
    alice_basis: str
    bob_basis: str
    sample: float
    verdict: Verdict


@dataclass
class TrialRecords:
    """Column store of per-pulse data.

    ``alice_phase`` holds the phase index k (phase = k pi/2); bases are 0 for
    q and 1 for p.
    """

    alice_phase: np.ndarray
    alice_bit: np.ndarray
    alice_basis: np.ndarray
    bob_basis: np.ndarray
    sample: np.ndarray
    verdict: np.ndarray

    FIELDS = ("alice_phase", "alice_bit", "alice_basis", "bob_basis", "sample", "verdict")

    def __len__(self) -> int:
        return len(self.sample)

    def __getitem__(self, i: int) -> TrialRecord:
        return TrialRecord(
            SymbolPhase(int(self.alice_phase[i])),
            int(self.alice_bit[i]),
            BASIS_NAMES[self.alice_basis[i]],
            BASIS_NAMES[self.bob_basis[i]],
            float(self.sample[i]),
            Verdict(int(self.verdict[i])),
        )

    def __iter__(self) -> Iterator[TrialRecord]:
        for i in range(len(self)):
            yield self[i]

    def select(self, mask) -> "TrialRecords":
        return TrialRecords(*(getattr(self, f)[mask] for f in self.FIELDS))

    @classmethod
    def concatenate(cls, parts) -> "TrialRecords":
        parts = list(parts)
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in cls.FIELDS))

    @property
    def relative_phase(self) -> np.ndarray:
        """``phi_A - phi_B`` as an index k in {0, 1, 2, 3} (units of pi/2)."""
        return (self.alice_phase - self.bob_basis) % 4

    def equals(self, other: "TrialRecords") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in self.FIELDS)


@dataclass(frozen=True)
class RunSummary:
    sifted_count: int
    conclusive_count: int
    error_count: int

    @property
    def pse(self) -> float:
        return self.conclusive_count / self.sifted_count

    @property
    def qber(self) -> float:
        return self.error_count / self.conclusive_count


# -- protocol steps ---------------------------------------------------------


def alice_prepare(n: int, rng: np.random.Generator):
    """Draw ``n`` symbols; returns ``(phase_index, bit, basis)`` arrays."""
    if n < 1:
        raise ValueError("n must be >= 1")
    phase = rng.integers(0, 4, size=n, dtype=np.int8)
    bit = (phase < 2).astype(np.int8)
    basis = (phase % 2).astype(np.int8)
    return phase, bit, basis


def bob_choose_basis(n: int, rng: np.random.Generator) -> np.ndarray:
    """0 selects the q quadrature (LO phase 0), 1 selects p (LO phase pi/2)."""
    return rng.integers(0, 2, size=n, dtype=np.int8)


def homodyne_means(alice_phase, bob_basis, params: ProtocolParams) -> np.ndarray:
    alice_phase = np.asarray(alice_phase)
    rel = (alice_phase - np.asarray(bob_basis)) * (np.pi / 2)
    amp = math.sqrt(params.channel.T * params.detector.eta) * params.alpha.alpha
    mean = np.real(amp * np.exp(1j * rel))
    # snap the exact zeros of cos at pi/2 multiples
    return np.where(np.abs(mean) < 1e-14 * max(1.0, abs(amp)), 0.0, mean)


def simulate_homodyne(alice_phase, bob_basis, params: ProtocolParams, rng: np.random.Generator) -> np.ndarray:
    """Bob's quadrature samples given Alice's phases and his LO choices."""
    mean = homodyne_means(alice_phase, bob_basis, params)
    return mean + math.sqrt(params.noise_variance) * rng.standard_normal(mean.shape)


def sift(records: TrialRecords) -> TrialRecords:
    return records.select(records.alice_basis == records.bob_basis)


def postselect_and_assign(samples, x0: float) -> np.ndarray:
    """Bit 1 above ``x0``, bit 0 below ``-x0``, inconclusive in between.

    ``|x| == x0`` counts as inconclusive.
    """
    if not x0 >= 0:
        raise ValueError(f"x0 must be >= 0, got {x0}")
    samples = np.asarray(samples)
    verdict = np.full(samples.shape, Verdict.INCONCLUSIVE, dtype=np.int8)
    verdict[samples > x0] = Verdict.BIT1
    verdict[samples < -x0] = Verdict.BIT0
    return verdict


def empirical_summary(records: TrialRecords) -> RunSummary:
    sifted = records.verdict != Verdict.UNSIFTED
    conclusive = sifted & (records.verdict != Verdict.INCONCLUSIVE)
    n_conc = int(conclusive.sum())
    if n_conc == 0:
        raise ValueError("no conclusive records: PSE/QBER undefined")
    errors = int((records.verdict[conclusive] != records.alice_bit[conclusive]).sum())
    return RunSummary(int(sifted.sum()), n_conc, errors)


def _simulate_block(params: ProtocolParams, block: int, n: int) -> TrialRecords:
    phase, bit, basis = alice_prepare(n, substream(params.seed, ROLE_ALICE, block))
    bob = bob_choose_basis(n, substream(params.seed, ROLE_BOB, block))
    samples = simulate_homodyne(phase, bob, params, substream(params.seed, ROLE_CHANNEL, block))
    verdict = postselect_and_assign(samples, params.x0)
    verdict[basis != bob] = Verdict.UNSIFTED
    return TrialRecords(phase, bit, basis, bob, samples, verdict)


def run_protocol(params: ProtocolParams, workers: int = 1) -> TrialRecords:
    """Simulate ``params.n_pulses`` pulses.

    Pulses are generated in fixed blocks of ``BLOCK_SIZE`` with per-block
    substreams, so the output does not depend on ``workers``.
    """
    sizes = [min(BLOCK_SIZE, params.n_pulses - s) for s in range(0, params.n_pulses, BLOCK_SIZE)]
    jobs = list(enumerate(sizes))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda j: _simulate_block(params, *j), jobs))
    else:
        parts = [_simulate_block(params, b, n) for b, n in jobs]
    return TrialRecords.concatenate(parts)


def simulate_sifted(params: ProtocolParams, n_sifted: int) -> TrialRecords:
    """Run enough pulses to collect at least ``n_sifted`` sifted records and keep the first ``n_sifted``."""
    n = max(2 * n_sifted + 8 * int(math.sqrt(n_sifted)) + 64, 1)
    while True:
        sifted = sift(run_protocol(replace(params, n_pulses=n)))
        if len(sifted) >= n_sifted:
            return sifted.select(slice(0, n_sifted))
        n *= 2


# -- closed forms -----------------------------------------------------------


def error_function_terms(mu: float, noise_var: float, x0: float) -> tuple[float, float]:
    """``(q1, q2)``: twice the probability of landing beyond +x0 / -x0 on the correct / wrong side."""
    s = math.sqrt(2 * noise_var)
    return erfc((x0 - mu) / s), erfc((x0 + mu) / s)


def pse_theory(params: ProtocolParams) -> float:
    q1, q2 = error_function_terms(params.signal_mean, params.noise_variance, params.x0)
    return (q1 + q2) / 2


def qber_theory(params: ProtocolParams) -> float:
    q1, q2 = error_function_terms(params.signal_mean, params.noise_variance, params.x0)
    if q1 + q2 == 0:
        return 0.5
    return q2 / (q1 + q2)


# -- CSV interchange ---------------------------------------------------------

CSV_HEADER = ("alice_phase_k", "alice_bit", "alice_basis", "bob_basis", "sample_snu", "verdict")


def write_records_csv(records: TrialRecords, path) -> None:
    """Columnar CSV: phase index k (phase = k*pi/2), bits, bases as q/p,
    sample in shot-noise units, verdict name."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(
                (r.alice_phase.value, r.alice_bit, r.alice_basis, r.bob_basis, repr(r.sample), r.verdict.name.lower())
            )


def read_records_csv(path) -> TrialRecords:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    basis = {"q": 0, "p": 1}
    verdicts = {v.name.lower(): v.value for v in Verdict}
    return TrialRecords(
        np.array([int(r["alice_phase_k"]) for r in rows], dtype=np.int8),
        np.array([int(r["alice_bit"]) for r in rows], dtype=np.int8),
        np.array([basis[r["alice_basis"]] for r in rows], dtype=np.int8),
        np.array([basis[r["bob_basis"]] for r in rows], dtype=np.int8),
        np.array([float(r["sample_snu"]) for r in rows]),
        np.array([verdicts[r["verdict"]] for r in rows], dtype=np.int8),
    )



def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 63-bit child seed for a keyed sub-experiment."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
