"""Shot-noise conventions, coherent states and small covariance algebra.

All variances are in shot-noise units with the vacuum quadrature variance
fixed to 1/4, i.e. ``q = (a + a^dagger) / 2``.
"""

from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

VACUUM_VARIANCE = 0.25


class SymbolPhase(enum.Enum):
    """The four phases Alice imprints on her coherent state."""

    ZERO = 0
    HALF_PI = 1
    PI = 2
    THREE_HALF_PI = 3

    @property
    def radians(self) -> float:
        return self.value * math.pi / 2

    @property
    def basis(self) -> str:
        return "q" if self.value % 2 == 0 else "p"

    @property
    def bit(self) -> int:
        # 0 and pi/2 encode 1; pi and 3pi/2 encode 0
        return 1 if self.value < 2 else 0


@dataclass(frozen=True)
class CoherentAmplitude:
    alpha: complex

    def __post_init__(self):
        if not cmath.isfinite(complex(self.alpha)):
            raise ValueError(f"alpha must be finite, got {self.alpha!r}")
        object.__setattr__(self, "alpha", complex(self.alpha))

    @classmethod
    def from_mean_photon(cls, mean_photon: float, phase: float = 0.0) -> "CoherentAmplitude":
        if mean_photon < 0:
            raise ValueError("mean photon number must be >= 0")
        return cls(cmath.rect(math.sqrt(mean_photon), phase))

    @property
    def mean_photon_number(self) -> float:
        return abs(self.alpha) ** 2

    def symbol(self, phase: SymbolPhase) -> "CoherentAmplitude":
        """Amplitude of the state ``alpha * exp(i phi_A)``."""
        return CoherentAmplitude(self.alpha * cmath.exp(1j * phase.radians))


@dataclass(frozen=True)
class CovMatrix2:
    """Single-mode quadrature covariance ``[[qq, qp], [qp, pp]]``."""

    qq: float
    pp: float
    qp: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([[self.qq, self.qp], [self.qp, self.pp]])

    @classmethod
    def from_array(cls, m) -> "CovMatrix2":
        m = np.asarray(m, dtype=float)
        if m.shape != (2, 2):
            raise ValueError(f"expected a 2x2 matrix, got shape {m.shape}")
        if not np.isclose(m[0, 1], m[1, 0], rtol=1e-9, atol=1e-12):
            raise ValueError("covariance matrix must be symmetric")
        return cls(float(m[0, 0]), float(m[1, 1]), 0.5 * float(m[0, 1] + m[1, 0]))

    @property
    def det(self) -> float:
        return self.qq * self.pp - self.qp**2

    def is_psd(self, tol: float = 0.0) -> bool:
        return self.qq >= -tol and self.pp >= -tol and self.det >= -tol

    def is_physical(self, tol: float = 1e-12) -> bool:
        """Uncertainty relation in these units: det >= 1/16."""
        return self.is_psd(tol) and self.det >= VACUUM_VARIANCE**2 - tol


def vacuum_covariance() -> CovMatrix2:
    return CovMatrix2(VACUUM_VARIANCE, VACUUM_VARIANCE, 0.0)


def ensemble_covariance(alpha: CoherentAmplitude | complex | float) -> CovMatrix2:
    """Covariance of the equal mixture of the four phase-shifted states.

    Each quadrature carries the modulation variance ``|alpha|^2 / 2`` on top
    of the vacuum contribution.
    """
    if not isinstance(alpha, CoherentAmplitude):
        alpha = CoherentAmplitude(alpha)
    v = alpha.mean_photon_number / 2 + VACUUM_VARIANCE
    return CovMatrix2(v, v, 0.0)


def beam_splitter_matrix(T: float) -> np.ndarray:
    """4x4 symplectic action of a beam splitter on (q_s, p_s, q_e, p_e)."""
    _check_transmittance(T)
    t, r = math.sqrt(T), math.sqrt(1.0 - T)
    eye = np.eye(2)
    return np.block([[t * eye, r * eye], [-r * eye, t * eye]])


def bs_joint_transform(signal_var: float, env_var: float, T: float) -> np.ndarray:
    """Joint signal/environment covariance after the beam splitter.

    Returns ``BS @ diag(signal_var I2, env_var I2) @ BS.T``; the upper-left
    2x2 block is the signal mode reaching the receiver.
    """
    _check_transmittance(T)
    for name, v in (("signal_var", signal_var), ("env_var", env_var)):
        if not v >= VACUUM_VARIANCE - 1e-15:
            raise ValueError(f"{name} must be >= 1/4 (shot-noise units), got {v}")
    bs = beam_splitter_matrix(T)
    inp = np.diag([signal_var, signal_var, env_var, env_var])
    out = bs @ inp @ bs.T
    return 0.5 * (out + out.T)


def environment_variance(T: float, xi_ch: float) -> float:
    """Environment-mode variance that yields excess noise ``xi_ch`` at Bob."""
    if T >= 1.0:
        if xi_ch != 0:
            raise ValueError("a lossless channel cannot add excess noise through the environment mode")
        return VACUUM_VARIANCE
    return VACUUM_VARIANCE + xi_ch / (1.0 - T)


def erfc(x):
    """Complementary error function, vectorised.

    Backed by ``scipy.special.erfc``; the test-suite holds it to 1e-12
    relative error against an arbitrary-precision series/continued-fraction
    evaluation on [-8, 8].
    """
    out = special.erfc(x)
    return float(out) if np.ndim(out) == 0 else out


def _check_transmittance(T: float) -> None:
    if not 0.0 <= T <= 1.0:
        raise ValueError(f"transmittance must lie in [0, 1], got {T}")
