"""Experiment configuration: one JSON document, defaults for every field.

Every leaf in :data:`DEFAULTS` fixes the type of that field; unknown keys
and wrongly typed values are rejected with their dotted path.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .calibration import HomodyneDetector, PulseTrainSpec
from .channel import ChannelParams, DetectorParams, distance_to_transmittance
from .gaussian_core import CoherentAmplitude
from .protocol import ProtocolParams
from .security import AttackModel, ReconciliationParams

DEFAULTS: dict[str, Any] = {
    "seed": 20230607,
    "workers": 1,
    "output": {"dir": "out", "format": "csv"},
    # lab simulation operating point (Figs. 3 and 4)
    "protocol": {
        "mean_photon": 1.0,
        "T": 0.9,
        "eta": 1.0,
        "xi_ch": 0.02,
        "xi_ele": 0.0,
        "x0": 0.0,
        "n_pulses": 200000,
        "disclosure_fraction": 0.05,
    },
    # experimental operating point (Table I and the end-to-end run);
    # xi_ele is the 3.7 % clearance expressed in shot-noise units
    "experiment": {
        "mean_photon": 1.0,
        "T": 0.95,
        "eta": 0.76,
        "xi_ch": 0.01,
        "xi_ele": 0.00925,
        "x0": 0.0,
        "n_pulses": 81000,
        "disclosure_fraction": 0.05,
    },
    "recon": {"beta": 0.95, "direction": "reverse"},
    "attack": {"kind": "beam_splitter", "eve_noise": 0.0},
    "postprocess": {
        "block_length": 4096,
        "column_weight": 3,
        "row_weight": 6,
        "max_iters": 50,
        "epsilon_margin": 100.0,
        "min_tail_block": 1024,
    },
    "fig2": {
        "mean_photon": 1.0,
        "eta": 1.0,
        "x0": 0.0,
        "beta": 0.85,
        "t_min": 0.01,
        "t_max": 1.0,
        "t_points": 100,
        "extra_distances_km": [35.0],
        "xis": [0.005, 0.01, 0.02, 0.05, 0.1, 0.5],
        "loss_db_per_km": 0.2,
    },
    "fig3": {"n_sifted": 100000, "bins": 80, "hist_min": -2.5, "hist_max": 2.5},
    "fig4": {
        "x0s": [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0],
        "mean_photons": [0.5, 1.0, 2.0],
        "n_sifted": 100000,
    },
    "calibration": {
        "lo_powers_mw": [0.005, 0.01, 0.02, 0.05, 0.1, 0.25, 0.5],
        "n_pulses_each": 50000,
        "operating_power_mw": 0.25,
        "clearance": 0.037,
        "responsivity": 1.0,
        "rep_rate": 1e6,
        "pulse_width": 30e-9,
        "sample_rate": 200e6,
        "pulse_shape": "rectangular",
    },
}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _check(node: Any, template: Any, path: str) -> Any:
    if isinstance(template, dict):
        if not isinstance(node, dict):
            raise ConfigError(path, f"expected an object, got {type(node).__name__}")
        for key in node:
            if key not in template:
                raise ConfigError(f"{path}.{key}" if path else key, "unknown field")
        return {k: _check(node.get(k, v), v, f"{path}.{k}" if path else k) for k, v in template.items()}
    if isinstance(template, list):
        if not isinstance(node, list) or not node:
            raise ConfigError(path, "expected a non-empty list")
        elem = template[0]
        return [_check(x, elem, f"{path}[{i}]") for i, x in enumerate(node)]
    if isinstance(template, bool):
        if not isinstance(node, bool):
            raise ConfigError(path, "expected a boolean")
        return node
    if isinstance(template, int):
        if isinstance(node, bool) or not isinstance(node, int):
            raise ConfigError(path, f"expected an integer, got {node!r}")
        return node
    if isinstance(template, float):
        if isinstance(node, bool) or not isinstance(node, (int, float)):
            raise ConfigError(path, f"expected a number, got {node!r}")
        return float(node)
    if isinstance(template, str):
        if not isinstance(node, str):
            raise ConfigError(path, f"expected a string, got {node!r}")
        return node
    raise ConfigError(path, "unsupported template type")


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_override(text: str) -> tuple[str, Any]:
    """``a.b.c=value``; the value is parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(text, "override must look like dotted.path=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_override(doc: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = doc
    tmpl = DEFAULTS
    for i, part in enumerate(parts[:-1]):
        if not isinstance(tmpl, dict) or part not in tmpl:
            raise ConfigError(".".join(parts[: i + 1]), "unknown field")
        tmpl = tmpl[part]
        node = node.setdefault(part, {})
    if not isinstance(tmpl, dict) or parts[-1] not in tmpl:
        raise ConfigError(key, "unknown field")
    node[parts[-1]] = value


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    @classmethod
    def from_dict(cls, doc: dict | None = None, overrides=()) -> "ExperimentConfig":
        doc = _merge({}, doc or {})
        for key, value in overrides:
            apply_override(doc, key, value)
        resolved = _check(_merge(DEFAULTS, doc), DEFAULTS, "")
        cfg = cls(resolved)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, overrides=()) -> "ExperimentConfig":
        doc = {}
        if path is not None:
            try:
                doc = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError("", f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc, overrides)

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    def canonical_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    @property
    def sha256(self) -> str:
        """Hash of every field that can change results; the output directory is left out."""
        doc = copy.deepcopy(self.raw)
        del doc["output"]["dir"]
        text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    # -- typed views --------------------------------------------------------

    def protocol_params(self, section: str = "protocol") -> ProtocolParams:
        s = self.raw[section]
        with _field_errors(section):
            return ProtocolParams(
                alpha=CoherentAmplitude.from_mean_photon(s["mean_photon"]),
                channel=ChannelParams(s["T"], s["xi_ch"]),
                detector=DetectorParams(s["eta"], s["xi_ele"]),
                x0=s["x0"],
                n_pulses=s["n_pulses"],
                seed=self.seed,
                disclosure_fraction=s["disclosure_fraction"],
            )

    def recon(self) -> ReconciliationParams:
        with _field_errors("recon"):
            return ReconciliationParams(**self.raw["recon"])

    def attack(self) -> AttackModel:
        with _field_errors("attack"):
            return AttackModel(**self.raw["attack"])

    def detector(self) -> HomodyneDetector:
        c = self.raw["calibration"]
        with _field_errors("calibration"):
            spec = PulseTrainSpec(c["rep_rate"], c["pulse_width"], c["sample_rate"], c["pulse_shape"])
            return HomodyneDetector.for_clearance(c["clearance"], c["operating_power_mw"], c["responsivity"], spec)

    def transmittance_grid(self) -> list[float]:
        f = self.raw["fig2"]
        ts = set(np.linspace(f["t_min"], f["t_max"], f["t_points"]).tolist())
        ts.update(distance_to_transmittance(d, f["loss_db_per_km"]) for d in f["extra_distances_km"])
        return sorted(ts)

    def validate(self) -> None:
        self.protocol_params("protocol")
        self.protocol_params("experiment")
        self.recon()
        self.attack()
        self.detector()
        if self.raw["output"]["format"] not in ("csv", "json"):
            raise ConfigError("output.format", "must be 'csv' or 'json'")
        if self.raw["workers"] < 1:
            raise ConfigError("workers", "must be >= 1")
        f2 = self.raw["fig2"]
        if not 0 < f2["t_min"] <= f2["t_max"] <= 1:
            raise ConfigError("fig2.t_min", "need 0 < t_min <= t_max <= 1")
        if f2["t_points"] < 1:
            raise ConfigError("fig2.t_points", "must be >= 1")
        if not 0 < f2["beta"] <= 1:
            raise ConfigError("fig2.beta", "must lie in (0, 1]")
        if any(x < 0 for x in f2["xis"]):
            raise ConfigError("fig2.xis", "noise values must be >= 0")
        if any(x < 0 for x in self.raw["fig4"]["x0s"]):
            raise ConfigError("fig4.x0s", "thresholds must be >= 0")
        if not self.raw["experiment"]["disclosure_fraction"] > 0:
            raise ConfigError("experiment.disclosure_fraction", "must be > 0 to estimate the QBER")
        pp = self.raw["postprocess"]
        if (pp["block_length"] * pp["column_weight"]) % pp["row_weight"]:
            raise ConfigError("postprocess.block_length", "block_length * column_weight must divide by row_weight")
        c = self.raw["calibration"]
        if len(set(c["lo_powers_mw"])) < 3:
            raise ConfigError("calibration.lo_powers_mw", "need at least three distinct powers")


class _field_errors:
    """Re-raise ValueError from a nested constructor as a ConfigError under ``section``."""

    def __init__(self, section: str):
        self.section = section

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and issubclass(exc_type, ValueError) and not issubclass(exc_type, ConfigError):
            raise ConfigError(self.section, str(exc)) from exc
        return False
