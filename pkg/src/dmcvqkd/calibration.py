"""Synthetic balanced-homodyne traces and shot-noise calibration.

A trace is a uniformly sampled voltage record holding one pulse per
repetition period. Inside each pulse window the level is
``gain * quadrature`` (times the pulse profile); everywhere else the trace
is electronic noise only. Integrating a window and dividing by
``pulse_width * gain`` returns the quadrature.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .gaussian_core import VACUUM_VARIANCE


@dataclass(frozen=True)
class PulseTrainSpec:
    rep_rate: float = 1e6
    pulse_width: float = 30e-9
    sample_rate: float = 200e6
    pulse_shape: str = "rectangular"
    gain: float = 1.0
    pulse_offset: float = 10e-9  # pulse start inside each period

    def __post_init__(self):
        if self.rep_rate <= 0 or self.pulse_width <= 0 or self.sample_rate <= 0:
            raise ValueError("rates and pulse width must be positive")
        if not self.pulse_width < 1.0 / self.rep_rate:
            raise ValueError("pulse width must be shorter than the repetition period")
        if self.sample_rate < 10 * self.rep_rate:
            raise ValueError("sample rate must be at least 10x the repetition rate")
        if self.pulse_shape not in ("rectangular", "gaussian"):
            raise ValueError(f"unknown pulse shape {self.pulse_shape!r}")
        if self.gain <= 0:
            raise ValueError("gain must be positive")
        if self.window_samples < 1:
            raise ValueError("pulse window shorter than one sample")
        if self.window_start + self.window_samples >= self.period_samples:
            raise ValueError("pulse window leaves no inter-pulse gap")

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def period_samples(self) -> int:
        return int(round(self.sample_rate / self.rep_rate))

    @property
    def window_samples(self) -> int:
        return int(round(self.pulse_width * self.sample_rate))

    @property
    def window_start(self) -> int:
        return int(round(self.pulse_offset * self.sample_rate))

    @property
    def integration_time(self) -> float:
        """Window length actually integrated (a whole number of samples)."""
        return self.window_samples * self.dt

    def profile(self) -> np.ndarray:
        """Pulse envelope over the window, normalised to unit mean."""
        w = self.window_samples
        if self.pulse_shape == "rectangular":
            return np.ones(w)
        x = (np.arange(w) - (w - 1) / 2) / max(w / 4, 1e-12)
        env = np.exp(-0.5 * x**2)
        return env / env.mean()

    def sidecar(self) -> dict:
        return asdict(self)


def synthesize_trace(quadratures, spec: PulseTrainSpec, electronic_sigma: float, rng: np.random.Generator) -> np.ndarray:
    """One acquisition: a pulse per quadrature value plus white electronic noise."""
    q = np.asarray(quadratures, dtype=float).ravel()
    if electronic_sigma < 0:
        raise ValueError("electronic_sigma must be >= 0")
    P, s0, w = spec.period_samples, spec.window_start, spec.window_samples
    trace = np.zeros((q.size, P))
    trace[:, s0 : s0 + w] = spec.gain * q[:, None] * spec.profile()[None, :]
    if electronic_sigma > 0:
        trace += electronic_sigma * rng.standard_normal(trace.shape)
    return trace.ravel()


def integrate_pulses(trace, spec: PulseTrainSpec, normalize: bool = True) -> np.ndarray:
    """Integrate each pulse window after removing the acquisition baseline.

    The baseline is the mean of all inter-pulse gap samples in this trace.
    With ``normalize=False`` the raw integral (volt-seconds) is returned, so
    a constant pulse of level ``gain * a`` gives ``pulse_width * gain * a``.
    """
    trace = np.asarray(trace, dtype=float)
    P, s0, w = spec.period_samples, spec.window_start, spec.window_samples
    if trace.size % P:
        raise ValueError(f"trace of {trace.size} samples is not a whole number of {P}-sample periods")
    frames = trace.reshape(-1, P)
    gap = np.ones(P, dtype=bool)
    gap[s0 : s0 + w] = False
    baseline = frames[:, gap].mean()
    raw = (frames[:, s0 : s0 + w].sum(axis=1) - w * baseline) * spec.dt
    if not normalize:
        return raw
    return raw / (spec.integration_time * spec.gain)


@dataclass(frozen=True)
class ShotNoiseFit:
    """Linear fit of vacuum integral variance against LO power (mW)."""

    slope: float
    intercept: float
    r_squared: float
    operating_power: float
    slope_stderr: float = 0.0
    intercept_stderr: float = 0.0

    @property
    def shot_variance(self) -> float:
        """Shot-noise part of the vacuum variance at the operating power."""
        return self.slope * self.operating_power

    @property
    def snu(self) -> float:
        """Raw variance corresponding to one shot-noise unit of variance (so vacuum maps to 1/4)."""
        return self.shot_variance / VACUUM_VARIANCE

    @property
    def clearance(self) -> float:
        return self.intercept / (self.slope * self.operating_power)

    @property
    def xi_ele(self) -> float:
        """Electronic noise expressed in shot-noise units."""
        return VACUUM_VARIANCE * self.clearance


@dataclass(frozen=True)
class HomodyneDetector:
    """Balanced detector seen through the integrator.

    ``responsivity`` sets the trace gain ``sqrt(responsivity * P_LO)``, so the
    shot-noise variance grows linearly with LO power; ``electronic_sigma``
    is the per-sample white noise of the electronics.
    """

    responsivity: float = 1.0
    electronic_sigma: float = 0.0
    spec: PulseTrainSpec = PulseTrainSpec()

    def gain_at(self, lo_power: float) -> float:
        return math.sqrt(self.responsivity * lo_power)

    def spec_at(self, lo_power: float) -> PulseTrainSpec:
        return replace(self.spec, gain=self.gain_at(lo_power))

    @property
    def electronic_integral_variance(self) -> float:
        """Variance the electronics add to one raw pulse integral."""
        w = self.spec.window_samples
        # baseline subtraction over many gap samples adds a negligible term
        return self.electronic_sigma**2 * w * self.spec.dt**2

    def shot_slope(self) -> float:
        """Raw integral vacuum variance per mW of LO."""
        return VACUUM_VARIANCE * self.spec.integration_time**2 * self.responsivity

    @classmethod
    def for_clearance(
        cls, clearance: float, lo_power: float, responsivity: float = 1.0, spec: PulseTrainSpec | None = None
    ) -> "HomodyneDetector":
        """Detector whose electronic-to-shot variance ratio at ``lo_power`` is ``clearance``."""
        spec = spec or PulseTrainSpec()
        shot = VACUUM_VARIANCE * spec.integration_time**2 * responsivity * lo_power
        sigma = math.sqrt(clearance * shot / (spec.window_samples * spec.dt**2))
        return cls(responsivity, sigma, spec)


def acquire(quadratures, detector: HomodyneDetector, lo_power: float, rng: np.random.Generator, chunk: int = 8192):
    """Synthesize and integrate in chunks; returns raw integrals."""
    q = np.asarray(quadratures, dtype=float)
    spec = detector.spec_at(lo_power)
    out = [
        integrate_pulses(synthesize_trace(q[i : i + chunk], spec, detector.electronic_sigma, rng), spec, normalize=False)
        for i in range(0, q.size, chunk)
    ]
    return np.concatenate(out) if out else np.empty(0)


def fit_variance_line(powers, variances, n_samples: int, operating_power: float) -> ShotNoiseFit:
    """Weighted least-squares line through (power, variance) points.

    Each sample variance of ``n`` Gaussian values has standard error
    ``var * sqrt(2 / (n - 1))``; weights are taken from a first unweighted
    pass so they do not feed the point's own noise back into the fit.
    """
    x = np.asarray(powers, dtype=float)
    y = np.asarray(variances, dtype=float)
    A = np.column_stack([x, np.ones_like(x)])
    coef = np.linalg.lstsq(A, y, rcond=None)[0]
    sigma = np.maximum(A @ coef, 1e-300) * math.sqrt(2.0 / (n_samples - 1))
    Aw, yw = A / sigma[:, None], y / sigma
    coef, *_ = np.linalg.lstsq(Aw, yw, rcond=None)
    cov = np.linalg.inv(Aw.T @ Aw)
    resid = yw - Aw @ coef
    ybar = np.average(y, weights=1 / sigma**2)
    ss_tot = np.sum(((y - ybar) / sigma) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return ShotNoiseFit(
        slope=float(coef[0]),
        intercept=float(coef[1]),
        r_squared=float(r2),
        operating_power=operating_power,
        slope_stderr=float(math.sqrt(cov[0, 0])),
        intercept_stderr=float(math.sqrt(cov[1, 1])),
    )


def shot_noise_scan(
    lo_powers,
    n_pulses_each: int,
    detector: HomodyneDetector,
    rng: np.random.Generator,
    operating_power: float = 0.25,
) -> ShotNoiseFit:
    """Blocked-signal variance against LO power (mW), fitted by a line.

    The slope is the shot-noise coefficient and the intercept the electronic
    variance of one pulse integral.
    """
    powers = np.asarray(lo_powers, dtype=float)
    if np.unique(powers).size < 3:
        raise ValueError("need at least three distinct LO powers")
    if np.any(powers <= 0):
        raise ValueError("LO powers must be positive")
    if n_pulses_each < 2:
        raise ValueError("need at least two pulses per power")
    variances = []
    for p in powers:
        vac = math.sqrt(VACUUM_VARIANCE) * rng.standard_normal(n_pulses_each)
        variances.append(np.var(acquire(vac, detector, p, rng), ddof=1))
    return fit_variance_line(powers, variances, n_pulses_each, operating_power)


def snu_normalize(raw_values, fit: ShotNoiseFit) -> np.ndarray:
    """Scale raw integrals so the shot-noise variance becomes 1/4."""
    if not fit.snu > 0:
        raise ValueError(f"shot-noise unit must be positive, got {fit.snu}")
    return np.asarray(raw_values, dtype=float) / math.sqrt(fit.snu)


def write_trace(path, trace, spec: PulseTrainSpec) -> None:
    """Little-endian float32 samples plus a ``.json`` sidecar."""
    path = Path(path)
    np.asarray(trace, dtype="<f4").tofile(path)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(spec.sidecar(), indent=2, sort_keys=True) + "\n")


def read_trace(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    return np.fromfile(path, dtype="<f4").astype(float), PulseTrainSpec(**meta)
