"""Mutual information and secret key rate under a beam-splitter attack.

Eve replaces the lossy channel by a beam splitter of the same transmittance,
keeps the reflected ``sqrt(1 - T) alpha`` mode, waits for the basis
announcement and guesses Alice's bit from the sign of her homodyne outcome.

Information quantities are in bits. ``mutual_info_ab`` is per sifted pulse
(it carries the post-selection factor); ``mutual_info_be`` and
``mutual_info_ae`` are per conclusive pulse.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .channel import DEFAULT_LOSS_DB_PER_KM, ChannelParams, transmittance_to_distance
from .gaussian_core import VACUUM_VARIANCE, CoherentAmplitude, erfc
from .protocol import ProtocolParams, error_function_terms, pse_theory, qber_theory

SIFT_FRACTION = 0.5


@dataclass(frozen=True)
class ReconciliationParams:
    beta: float = 0.95
    direction: str = "reverse"

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.direction not in ("direct", "reverse"):
            raise ValueError(f"direction must be 'direct' or 'reverse', got {self.direction!r}")


@dataclass(frozen=True)
class AttackModel:
    kind: str = "beam_splitter"
    eve_noise: float = 0.0

    def __post_init__(self):
        if self.kind != "beam_splitter":
            raise ValueError(f"unsupported attack {self.kind!r}")
        if not self.eve_noise >= 0.0:
            raise ValueError(f"eve_noise must be >= 0, got {self.eve_noise}")


@dataclass(frozen=True)
class KeyRateReport:
    i_ab: float
    i_be: float
    i_ae: float
    pse: float
    qber: float
    sift_fraction: float
    direction: str
    beta: float
    k_per_sifted_raw: float

    @property
    def k_per_sifted(self) -> float:
        return max(0.0, self.k_per_sifted_raw)

    @property
    def k_per_pulse_raw(self) -> float:
        return self.sift_fraction * self.k_per_sifted_raw

    @property
    def k_per_pulse(self) -> float:
        return max(0.0, self.k_per_pulse_raw)


def binary_entropy(p):
    """``h2(p)`` in bits with ``0 log 0 = 0``; vectorised."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(p > 0, p * np.log2(p), 0.0) + np.where(p < 1, (1 - p) * np.log2(1 - p), 0.0))
    return float(h) if h.ndim == 0 else h


def discrete_mutual_info(joint) -> float:
    """Mutual information (bits) of a 2-D joint probability table."""
    joint = np.asarray(joint, dtype=float)
    total = joint.sum()
    if total <= 0:
        return 0.0
    joint = joint / total
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    outer = px * py
    mask = joint > 0
    mi = float(np.sum(joint[mask] * np.log2(joint[mask] / outer[mask])))
    return max(mi, 0.0)


def _amplitude(alpha) -> float:
    if isinstance(alpha, CoherentAmplitude):
        return abs(alpha.alpha)
    return abs(complex(alpha))


def mutual_info_ab(alpha, T: float, eta: float, xi: float, x0: float) -> float:
    """Alice-Bob information per sifted pulse from the erfc terms ``q1, q2``."""
    mu = math.sqrt(T * eta) * _amplitude(alpha)
    q1, q2 = error_function_terms(mu, VACUUM_VARIANCE + xi, x0)
    s = q1 + q2
    if s == 0:
        return 0.0
    out = s / 2
    for q in (q1, q2):
        if q > 0:
            out += q / 2 * math.log2(q / s)
    return min(max(out, 0.0), 1.0)


def eve_bs_state(alpha, T: float) -> CoherentAmplitude:
    """Amplitude of the mode Eve keeps: ``sqrt(1 - T) alpha``."""
    if not 0.0 <= T <= 1.0:
        raise ValueError(f"T must lie in [0, 1], got {T}")
    a = alpha.alpha if isinstance(alpha, CoherentAmplitude) else complex(alpha)
    return CoherentAmplitude(math.sqrt(1.0 - T) * a)


def eve_guess_error(alpha, T: float, eve_noise: float = 0.0) -> float:
    """Probability that Eve's sign guess on her tapped mode is wrong."""
    amp = abs(eve_bs_state(alpha, T).alpha)
    return 0.5 * erfc(amp / math.sqrt(2 * (VACUUM_VARIANCE + eve_noise)))


def bob_eve_joint(alpha, T: float, eta: float, xi: float, x0: float, eve_noise: float = 0.0) -> np.ndarray:
    """Joint law of (Alice bit, Bob bit, Eve bit) given Bob is conclusive.

    Indexed ``[a, b, e]``. Given Alice's symbol, Bob's and Eve's samples are
    independent Gaussians, so each entry factorises into erfc terms.
    """
    mu = math.sqrt(T * eta) * _amplitude(alpha)
    q1, q2 = error_function_terms(mu, VACUUM_VARIANCE + xi, x0)
    p_e = eve_guess_error(alpha, T, eve_noise)
    # unnormalised P(Bob says b | Alice sent a): q1/2 when b == a, q2/2 otherwise
    bob = np.array([[q1, q2], [q2, q1]]) / 2  # bob[a, b]
    eve = np.array([[1 - p_e, p_e], [p_e, 1 - p_e]])  # eve[a, e]
    joint = 0.5 * bob[:, :, None] * eve[:, None, :]
    total = joint.sum()
    return joint / total if total > 0 else joint


def mutual_info_be(alpha, T: float, eta: float, xi: float, x0: float, eve_noise: float = 0.0) -> float:
    """Bob-Eve information per conclusive pulse."""
    joint = bob_eve_joint(alpha, T, eta, xi, x0, eve_noise)
    return min(discrete_mutual_info(joint.sum(axis=0)), 1.0)


def mutual_info_ae(alpha, T: float, eve_noise: float = 0.0) -> float:
    return float(max(0.0, 1.0 - binary_entropy(eve_guess_error(alpha, T, eve_noise))))


def secret_key_rate(
    params: ProtocolParams,
    recon: ReconciliationParams | None = None,
    attack: AttackModel | None = None,
) -> KeyRateReport:
    """Asymptotic key rate for the individual beam-splitter attack.

    ``k = beta I(A:B) - PSE * I(X:E)`` per sifted pulse, with X = B for
    reverse and X = A for direct reconciliation; Eve's information is
    weighted by the PSE because she only learns about kept pulses.
    """
    recon = recon or ReconciliationParams()
    attack = attack or AttackModel()
    T, eta = params.channel.T, params.detector.eta
    xi = params.channel.xi_ch + params.detector.xi_ele
    i_ab = mutual_info_ab(params.alpha, T, eta, xi, params.x0)
    i_be = mutual_info_be(params.alpha, T, eta, xi, params.x0, attack.eve_noise)
    i_ae = mutual_info_ae(params.alpha, T, attack.eve_noise)
    pse = pse_theory(params)
    leak = i_be if recon.direction == "reverse" else i_ae
    return KeyRateReport(
        i_ab=i_ab,
        i_be=i_be,
        i_ae=i_ae,
        pse=pse,
        qber=qber_theory(params),
        sift_fraction=SIFT_FRACTION,
        direction=recon.direction,
        beta=recon.beta,
        k_per_sifted_raw=recon.beta * i_ab - pse * leak,
    )


KEY_RATE_COLUMNS = ("T", "distance_km", "xi", "I_AB", "I_BE", "k_per_sifted", "k_per_pulse")
THRESHOLD_COLUMNS = ("x0", "mean_photon", "PSE", "QBER")


def sweep_key_rate(
    ts,
    xis,
    params: ProtocolParams,
    recon: ReconciliationParams | None = None,
    attack: AttackModel | None = None,
    loss_db_per_km: float = DEFAULT_LOSS_DB_PER_KM,
    workers: int = 1,
) -> list[dict]:
    """Key rate over a (T, xi) grid; ``xi`` is loaded as channel noise with the detector's electronic noise zeroed.

    Rows are ordered xi-major, T-minor; ``k_*`` columns are the unclamped
    rates so the noise cutoff stays visible.
    """
    ts, xis = list(ts), list(xis)
    if not ts or not xis:
        raise ValueError("transmittance and noise grids must be non-empty")
    grid = [(xi, T) for xi in xis for T in ts]

    def point(job):
        xi, T = job
        p = replace(params, channel=ChannelParams(T, xi), detector=replace(params.detector, xi_ele=0.0))
        rep = secret_key_rate(p, recon, attack)
        return {
            "T": T,
            "distance_km": transmittance_to_distance(T, loss_db_per_km) if T > 0 else math.inf,
            "xi": xi,
            "I_AB": rep.i_ab,
            "I_BE": rep.i_be,
            "k_per_sifted": rep.k_per_sifted_raw,
            "k_per_pulse": rep.k_per_pulse_raw,
        }

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(point, grid))
    return [point(g) for g in grid]


def sweep_threshold(x0s, photon_numbers, params: ProtocolParams) -> list[dict]:
    x0s, photon_numbers = list(x0s), list(photon_numbers)
    if not x0s or not photon_numbers:
        raise ValueError("threshold and photon-number grids must be non-empty")
    rows = []
    for n in photon_numbers:
        for x0 in x0s:
            p = replace(params, alpha=CoherentAmplitude.from_mean_photon(n), x0=x0)
            rows.append({"x0": x0, "mean_photon": n, "PSE": pse_theory(p), "QBER": qber_theory(p)})
    return rows
