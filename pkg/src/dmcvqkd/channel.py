"""Lossy, noisy channel and imperfect homodyne detector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian_core import (
    VACUUM_VARIANCE,
    CoherentAmplitude,
    CovMatrix2,
)

DEFAULT_LOSS_DB_PER_KM = 0.2


@dataclass(frozen=True)
class ChannelParams:
    """Transmittance ``T`` and excess noise ``xi_ch`` referred to Bob's input."""

    T: float = 1.0
    xi_ch: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.T <= 1.0:
            raise ValueError(f"T must lie in [0, 1], got {self.T}")
        if not self.xi_ch >= 0.0:
            raise ValueError(f"xi_ch must be >= 0, got {self.xi_ch}")


@dataclass(frozen=True)
class DetectorParams:
    """Detection efficiency ``eta`` and electronic noise ``xi_ele`` (SNU)."""

    eta: float = 1.0
    xi_ele: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not self.xi_ele >= 0.0:
            raise ValueError(f"xi_ele must be >= 0, got {self.xi_ele}")


def propagate_covariance(V: CovMatrix2, ch: ChannelParams) -> CovMatrix2:
    """Send a single-mode covariance through the channel.

    The modulated part (anything above vacuum) is attenuated by ``T``; the
    vacuum floor is restored and ``xi_ch`` is added on top.
    """
    if not V.is_physical():
        raise ValueError(f"input covariance is not physical: {V}")
    T = ch.T
    return CovMatrix2(
        qq=T * (V.qq - VACUUM_VARIANCE) + VACUUM_VARIANCE + ch.xi_ch,
        pp=T * (V.pp - VACUUM_VARIANCE) + VACUUM_VARIANCE + ch.xi_ch,
        qp=T * V.qp,
    )


def bob_variance(alpha: CoherentAmplitude | complex | float, ch: ChannelParams, det: DetectorParams) -> float:
    """Diagonal entry of Bob's block: ``T eta |alpha|^2/2 + 1/4 + xi_ch + xi_ele``."""
    if not isinstance(alpha, CoherentAmplitude):
        alpha = CoherentAmplitude(alpha)
    v_mod = alpha.mean_photon_number / 2
    return ch.T * det.eta * v_mod + VACUUM_VARIANCE + ch.xi_ch + det.xi_ele


def joint_covariance_ab(alpha, ch: ChannelParams, det: DetectorParams) -> np.ndarray:
    """4x4 covariance of Alice's modulation and Bob's measured quadratures.

    Alice's block and the cross term are both ``(|alpha|^2/2) I2``, as in the
    reference model this library reproduces.
    """
    if not isinstance(alpha, CoherentAmplitude):
        alpha = CoherentAmplitude(alpha)
    v_mod = alpha.mean_photon_number / 2
    eye = np.eye(2)
    vb = bob_variance(alpha, ch, det)
    return np.block([[v_mod * eye, v_mod * eye], [v_mod * eye, vb * eye]])


def total_excess_noise(ch: ChannelParams, det: DetectorParams) -> float:
    return ch.xi_ch + det.xi_ele


def distance_to_transmittance(d_km: float, loss_db_per_km: float = DEFAULT_LOSS_DB_PER_KM) -> float:
    if d_km < 0:
        raise ValueError(f"distance must be >= 0, got {d_km}")
    if loss_db_per_km <= 0:
        raise ValueError(f"loss coefficient must be > 0, got {loss_db_per_km}")
    return 10.0 ** (-loss_db_per_km * d_km / 10.0)


def transmittance_to_distance(T: float, loss_db_per_km: float = DEFAULT_LOSS_DB_PER_KM) -> float:
    if not 0.0 < T <= 1.0:
        raise ValueError(f"T must lie in (0, 1], got {T}")
    return -10.0 * np.log10(T) / loss_db_per_km


def ensemble_at_bob(alpha, ch: ChannelParams, det: DetectorParams | None = None) -> CovMatrix2:
    """Bob's single-mode covariance for the four-state ensemble.

    Detector efficiency scales only the modulated part; channel and
    electronic noise stay additive at Bob.
    """
    vb = bob_variance(alpha, ch, det or DetectorParams())
    return CovMatrix2(vb, vb, 0.0)
