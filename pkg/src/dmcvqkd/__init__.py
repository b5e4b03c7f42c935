"""Simulation and analysis of four-phase discrete-modulated CV-QKD."""

from .channel import ChannelParams, DetectorParams
from .gaussian_core import CoherentAmplitude, CovMatrix2, SymbolPhase
from .protocol import ProtocolParams, RunSummary, TrialRecords
from .security import AttackModel, KeyRateReport, ReconciliationParams, secret_key_rate

__version__ = "0.1.0"

__all__ = [
    "AttackModel",
    "ChannelParams",
    "CoherentAmplitude",
    "CovMatrix2",
    "DetectorParams",
    "KeyRateReport",
    "ProtocolParams",
    "ReconciliationParams",
    "RunSummary",
    "SymbolPhase",
    "TrialRecords",
    "secret_key_rate",
]
