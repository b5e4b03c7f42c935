"""Figure/table data generation and the end-to-end key pipeline.

Each ``run_*`` function takes an :class:`ExperimentConfig`, returns the
computed data and, when an output directory is given, writes self-describing
files stamped with the config hash.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .calibration import acquire, shot_noise_scan, snu_normalize
from .config import ExperimentConfig
from .gaussian_core import CoherentAmplitude
from .postprocess import (
    KeyBuffer,
    LeakageLedger,
    Stage,
    ToeplitzSeed,
    final_key_length,
    gallager_code,
    parameter_estimation,
    reconcile,
    toeplitz_hash,
)
from .protocol import (
    ROLE_CALIBRATION,
    ROLE_DISCLOSURE,
    ROLE_PRIVACY,
    ProtocolParams,
    Verdict,
    derive_seed,
    empirical_summary,
    postselect_and_assign,
    pse_theory,
    qber_theory,
    run_protocol,
    sift,
    simulate_sifted,
    substream,
)
from .security import AttackModel, ReconciliationParams, binary_entropy, secret_key_rate, sweep_key_rate

log = logging.getLogger(__name__)

ROLE_CODE = 7

UNITS = {
    "T": "1",
    "distance_km": "km",
    "xi": "SNU",
    "I_AB": "bit/sifted pulse",
    "I_BE": "bit/conclusive pulse",
    "k_per_sifted": "bit/sifted pulse",
    "k_per_pulse": "bit/pulse",
    "x0": "SNU^(1/2)",
    "mean_photon": "photons",
    "PSE": "1",
    "QBER": "1",
}


# -- output helpers ----------------------------------------------------------


def _json_safe(v):
    """Non-finite floats become null so the output stays strict JSON."""
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _dump_json(doc) -> str:
    return json.dumps(_json_safe(doc), indent=1, sort_keys=True, allow_nan=False) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_table(path: Path, command: str, cfg: ExperimentConfig, columns, rows, units=None) -> Path:
    """CSV with a ``#`` header block, or a JSON document, per ``output.format``."""
    units = units or {c: UNITS.get(c, "") for c in columns}
    fmt = cfg["output"]["format"]
    path = path.with_suffix("." + fmt)
    if fmt == "json":
        doc = {
            "command": command,
            "config_sha256": cfg.sha256,
            "columns": list(columns),
            "units": units,
            "rows": [[r[c] for c in columns] for r in rows],
        }
        path.write_text(_dump_json(doc))
        return path
    buf = io.StringIO()
    buf.write(f"# dmcvqkd {command} config_sha256={cfg.sha256}\n")
    buf.write("# units: " + ", ".join(f"{c}[{units.get(c, '')}]" for c in columns) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    path.write_text(buf.getvalue())
    return path


def write_report(path: Path, command: str, cfg: ExperimentConfig, report: dict) -> Path:
    fmt = cfg["output"]["format"]
    path = path.with_suffix("." + fmt)
    if fmt == "json":
        doc = {"command": command, "config_sha256": cfg.sha256, **report}
        path.write_text(_dump_json(doc))
        return path
    buf = io.StringIO()
    buf.write(f"# dmcvqkd {command} config_sha256={cfg.sha256}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    for k, v in _flatten(report):
        w.writerow([k, _fmt(v)])
    path.write_text(buf.getvalue())
    return path


def _flatten(d, prefix=""):
    for k in sorted(d):
        v = d[k]
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        else:
            yield key, v


def _outdir(out) -> Path | None:
    if out is None:
        return None
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- Fig. 2 ------------------------------------------------------------------


def run_fig2(cfg: ExperimentConfig, out=None) -> list[dict]:
    """Mutual information and key rate against transmittance for each noise level."""
    f = cfg["fig2"]
    base = cfg.protocol_params("protocol")
    params = replace(
        base,
        alpha=CoherentAmplitude.from_mean_photon(f["mean_photon"]),
        detector=replace(base.detector, eta=f["eta"], xi_ele=0.0),
        x0=f["x0"],
    )
    recon = ReconciliationParams(f["beta"], cfg["recon"]["direction"])
    rows = sweep_key_rate(
        cfg.transmittance_grid(), f["xis"], params, recon, cfg.attack(), f["loss_db_per_km"], cfg["workers"]
    )
    if (d := _outdir(out)) is not None:
        write_table(d / "fig2_key_rate", "fig2", cfg, ("T", "distance_km", "xi", "I_AB", "I_BE", "k_per_sifted", "k_per_pulse"), rows)
    return rows


# -- Fig. 3 ------------------------------------------------------------------

PHASE_LABELS = {0: 0, 1: 90, 2: 180, 3: 270}


@dataclass(frozen=True)
class Fig3Result:
    fits: list[dict]
    histograms: list[dict]
    ks_statistic: float
    ks_pvalue: float
    n_pulses: int
    n_sifted: int


def run_fig3(cfg: ExperimentConfig, out=None) -> Fig3Result:
    """Bob's sample distributions by relative phase, with Gaussian fits."""
    f = cfg["fig3"]
    n_sifted = f["n_sifted"]
    params = replace(cfg.protocol_params("protocol"), n_pulses=2 * n_sifted + 8 * math.isqrt(n_sifted) + 64)
    rec = run_protocol(params, cfg["workers"])
    # keep the pulse prefix holding exactly n_sifted matched-basis records
    matched = np.flatnonzero(rec.alice_basis == rec.bob_basis)
    if matched.size < n_sifted:
        raise RuntimeError("too few sifted pulses; increase the pulse margin")
    rec = rec.select(slice(0, int(matched[n_sifted - 1]) + 1))
    rel = rec.relative_phase
    edges = np.linspace(f["hist_min"], f["hist_max"], f["bins"] + 1)
    fits, hists = [], []
    for k in range(4):
        x = rec.sample[rel == k]
        expected_mean = float(np.real(math.sqrt(params.channel.T * params.detector.eta) * params.alpha.alpha * 1j**k))
        mu, sd = stats.norm.fit(x)
        fits.append(
            {
                "phase_deg": PHASE_LABELS[k],
                "n": int(x.size),
                "mean": float(mu),
                "variance": float(sd**2),
                "mean_stderr": float(sd / math.sqrt(x.size)),
                "expected_mean": expected_mean if abs(expected_mean) > 1e-12 else 0.0,
                "expected_variance": params.noise_variance,
            }
        )
        dens, _ = np.histogram(x, bins=edges, density=False)
        width = edges[1] - edges[0]
        for i, c in enumerate(dens):
            hists.append(
                {
                    "phase_deg": PHASE_LABELS[k],
                    "bin_left": float(edges[i]),
                    "bin_right": float(edges[i + 1]),
                    "count": int(c),
                    "density": float(c / (x.size * width)) if x.size else 0.0,
                }
            )
    ks = stats.ks_2samp(rec.sample[rel == 1], rec.sample[rel == 3])
    result = Fig3Result(fits, hists, float(ks.statistic), float(ks.pvalue), len(rec), int((rec.alice_basis == rec.bob_basis).sum()))
    if (d := _outdir(out)) is not None:
        fit_cols = ("phase_deg", "n", "mean", "variance", "mean_stderr", "expected_mean", "expected_variance")
        units = {c: "SNU" if "var" in c else ("SNU^(1/2)" if "mean" in c else ("deg" if c == "phase_deg" else "1")) for c in fit_cols}
        write_table(d / "fig3_fits", "fig3", cfg, fit_cols, fits, units)
        hist_cols = ("phase_deg", "bin_left", "bin_right", "count", "density")
        write_table(
            d / "fig3_histograms",
            "fig3",
            cfg,
            hist_cols,
            hists,
            {"phase_deg": "deg", "bin_left": "SNU^(1/2)", "bin_right": "SNU^(1/2)", "count": "1", "density": "1/SNU^(1/2)"},
        )
        write_report(
            d / "fig3_summary",
            "fig3",
            cfg,
            {
                "n_pulses": result.n_pulses,
                "n_sifted": result.n_sifted,
                "ks_90_vs_270_statistic": result.ks_statistic,
                "ks_90_vs_270_pvalue": result.ks_pvalue,
            },
        )
    return result


# -- Fig. 4 ------------------------------------------------------------------

FIG4_COLUMNS = (
    "x0",
    "mean_photon",
    "PSE_theory",
    "QBER_theory",
    "PSE_mc",
    "QBER_mc",
    "PSE_sigma",
    "QBER_sigma",
    "n_sifted",
    "n_conclusive",
)


def threshold_scan_mc(params: ProtocolParams, x0s, n_sifted: int) -> list[dict]:
    """Closed-form and Monte Carlo PSE/QBER at each threshold from one sifted sample set."""
    rec = simulate_sifted(params, n_sifted)
    rows = []
    for x0 in x0s:
        p = replace(params, x0=x0)
        verdict = postselect_and_assign(rec.sample, x0)
        conc = verdict != Verdict.INCONCLUSIVE
        n_conc = int(conc.sum())
        errors = int((verdict[conc] != rec.alice_bit[conc]).sum())
        pse_t, qber_t = pse_theory(p), qber_theory(p)
        rows.append(
            {
                "x0": float(x0),
                "mean_photon": params.alpha.mean_photon_number,
                "PSE_theory": pse_t,
                "QBER_theory": qber_t,
                "PSE_mc": n_conc / len(rec),
                "QBER_mc": errors / n_conc if n_conc else math.nan,
                "PSE_sigma": math.sqrt(pse_t * (1 - pse_t) / len(rec)),
                "QBER_sigma": math.sqrt(qber_t * (1 - qber_t) / n_conc) if n_conc else math.nan,
                "n_sifted": len(rec),
                "n_conclusive": n_conc,
            }
        )
    return rows


def run_fig4(cfg: ExperimentConfig, out=None) -> list[dict]:
    f = cfg["fig4"]
    base = cfg.protocol_params("protocol")
    rows = []
    for i, n in enumerate(f["mean_photons"]):
        p = replace(base, alpha=CoherentAmplitude.from_mean_photon(n), seed=derive_seed(cfg.seed, 4, i))
        # label rows with the configured value, not |alpha|^2 recomputed from the amplitude
        rows += [{**r, "mean_photon": n} for r in threshold_scan_mc(p, f["x0s"], f["n_sifted"])]
    if (d := _outdir(out)) is not None:
        units = {c: UNITS.get(c.split("_")[0], "1") for c in FIG4_COLUMNS}
        units.update({"x0": "SNU^(1/2)", "mean_photon": "photons", "n_sifted": "count", "n_conclusive": "count"})
        write_table(d / "fig4_threshold", "fig4", cfg, FIG4_COLUMNS, rows, units)
    return rows


# -- key pipeline (Table I and e2e) -------------------------------------------


@dataclass
class PipelineResult:
    report: dict
    alice_key: KeyBuffer | None
    bob_key: KeyBuffer | None
    ledger: LeakageLedger
    keys_match: bool
    reconciliation_failed: bool


def run_pipeline(
    params: ProtocolParams,
    recon: ReconciliationParams,
    attack: AttackModel,
    post: dict,
    workers: int = 1,
) -> PipelineResult:
    """prepare -> measure -> sift -> post-select -> estimate -> reconcile -> amplify."""
    ledger = LeakageLedger()
    records = run_protocol(params, workers)
    summary_true = empirical_summary(records)
    sifted = sift(records)
    conclusive = sifted.select(sifted.verdict != Verdict.INCONCLUSIVE)
    alice = KeyBuffer(conclusive.alice_bit, "alice")
    bob = KeyBuffer(conclusive.verdict, "bob")

    qber_est, alice, bob, n_disc = parameter_estimation(
        alice, bob, params.disclosure_fraction, substream(params.seed, ROLE_DISCLOSURE)
    )
    ledger.record("disclosed", n_disc)

    rate = secret_key_rate(params, recon, attack)
    eve_info = rate.i_be if recon.direction == "reverse" else rate.i_ae
    beta, margin = recon.beta, post["epsilon_margin"]

    report = {
        "pulses_processed": params.n_pulses,
        "sifted_bits": len(sifted),
        "conclusive_bits": len(conclusive),
        "pse": summary_true.pse,
        "qber_true": summary_true.qber,
        "qber_estimate": qber_est,
        "disclosed_bits": n_disc,
        "eve_information_per_bit": eve_info,
        "direction": recon.direction,
        "beta": beta,
        "theory": {
            "pse": rate.pse,
            "qber": rate.qber,
            "i_ab": rate.i_ab,
            "i_be": rate.i_be,
            "i_ae": rate.i_ae,
            "k_per_sifted": rate.k_per_sifted_raw,
            "k_per_pulse": rate.k_per_pulse_raw,
        },
    }

    n_avail = len(alice)
    code_rate = 1.0 - post["column_weight"] / post["row_weight"]
    abort = None
    if final_key_length(n_avail, qber_est, eve_info, beta, margin) == 0:
        abort = "no positive key length at estimated QBER"
    elif binary_entropy(min(qber_est, 0.5)) >= 1.0 - code_rate:
        # syndrome of m = (1 - R) n bits cannot pin down n h2(q) bits of error
        abort = "estimated QBER beyond the correction limit of the code"
    if abort is not None:
        log.info("estimated QBER %.4f: %s; skipping reconciliation", qber_est, abort)
        report.update(blocks=0, blocks_ok=0, block_success_rate=math.nan, reconciled_bits=0, final_key_bits=0, key_per_pulse=0.0)
        report["aborted"] = abort
        report["leakage"] = ledger.as_dict()
        return PipelineResult(report, None, None, ledger, True, False)

    n = post["block_length"]
    code_rng = substream(params.seed, ROLE_CODE)
    H = gallager_code(n, post["column_weight"], post["row_weight"], code_rng)
    ref, other = (bob, alice) if recon.direction == "reverse" else (alice, bob)
    blocks = [(b * n, H) for b in range(n_avail // n)]
    tail = n_avail - len(blocks) * n
    unit = post["row_weight"] // math.gcd(post["row_weight"], post["column_weight"])
    tail_n = tail - tail % unit
    if tail_n >= post["min_tail_block"]:
        blocks.append((len(blocks) * n, gallager_code(tail_n, post["column_weight"], post["row_weight"], code_rng)))
    covered = sum(code.n for _, code in blocks)
    ledger.record("discarded_bits", n_avail - covered)

    kept_ref, kept_other, iterations = [], [], []
    corrected = 0
    for start, code in blocks:
        sl = slice(start, start + code.n)
        syn = code.syndrome(ref.bits[sl])
        ledger.record("syndrome", code.m)
        res = reconcile(KeyBuffer(other.bits[sl], other.origin), syn, code, max(qber_est, 1e-3), post["max_iters"])
        iterations.append(res.iterations)
        if res.success:
            kept_ref.append(ref.bits[sl])
            kept_other.append(res.bits)
            corrected += int(np.count_nonzero(res.bits != other.bits[sl]))
        else:
            ledger.record("failed_blocks", 1)
            ledger.record("discarded_bits", code.n)
    n_blocks, blocks_ok = len(blocks), len(kept_ref)
    ref_rec = np.concatenate(kept_ref) if kept_ref else np.empty(0, np.uint8)
    other_rec = np.concatenate(kept_other) if kept_other else np.empty(0, np.uint8)
    # a syndrome match does not guarantee equality; undetected errors surface here
    reconciled_equal = bool(np.array_equal(ref_rec, other_rec))

    n_rec = ref_rec.size
    # the correcting party knows exactly how many bits it flipped
    qber_final = corrected / n_rec if n_rec else qber_est
    length = final_key_length(n_rec, qber_final, eve_info, beta, margin)
    report.update(
        blocks=n_blocks,
        blocks_ok=blocks_ok,
        block_success_rate=blocks_ok / n_blocks if n_blocks else math.nan,
        mean_bp_iterations=float(np.mean(iterations)) if iterations else 0.0,
        reconciled_bits=n_rec,
        corrected_bits=corrected,
        qber_reconciled=qber_final,
        code_rate=H.rate,
        syndrome_efficiency=(
            H.rate / (1 - binary_entropy(qber_final)) if 0 < qber_final < 0.5 else math.nan
        ),
    )
    alice_final = bob_final = None
    keys_match = reconciled_equal
    if length > 0:
        seed = ToeplitzSeed.random(n_rec, length, substream(params.seed, ROLE_PRIVACY))
        ledger.record("hash_seed", seed.bits.size)
        ref_final = toeplitz_hash(KeyBuffer(ref_rec, ref.origin, Stage.RECONCILED), seed)
        other_final = toeplitz_hash(KeyBuffer(other_rec, other.origin, Stage.RECONCILED), seed)
        alice_final, bob_final = (other_final, ref_final) if recon.direction == "reverse" else (ref_final, other_final)
        keys_match = bool(np.array_equal(alice_final.bits, bob_final.bits))
    report.update(
        final_key_bits=length,
        key_per_pulse=length / params.n_pulses,
        keys_match=keys_match,
        leakage=ledger.as_dict(),
    )
    failed = n_blocks > 0 and blocks_ok == 0
    return PipelineResult(report, alice_final, bob_final, ledger, keys_match, failed or not keys_match)


TABLE1_NOTE = (
    "PSE is 1 by construction at x0 = 0 (every sifted sample is conclusive); "
    "the experimental PSE of 0.8 (3.2e4 of 4e4 bits) is not reproducible from this model and is excluded."
)


def run_table1(cfg: ExperimentConfig, out=None) -> dict:
    params = cfg.protocol_params("experiment")
    res = run_pipeline(params, cfg.recon(), cfg.attack(), cfg["postprocess"], cfg["workers"])
    r = res.report
    report = {
        "signal_processed_pulses": r["pulses_processed"],
        "sifted_bits": r["sifted_bits"],
        "conclusive_bits": r["conclusive_bits"],
        "pse": r["pse"],
        # errors found while reconciling all kept bits; the disclosed-sample
        # estimate (about 2000 bits) is reported alongside
        "qber": r.get("qber_reconciled", r["qber_estimate"]),
        "qber_estimate": r["qber_estimate"],
        "qber_true": r["qber_true"],
        "final_key_bits": r["final_key_bits"],
        "key_per_pulse": r["key_per_pulse"],
        "block_success_rate": r["block_success_rate"],
        "theory_k_per_pulse": r["theory"]["k_per_pulse"],
        "noise": {
            "xi_ch": params.channel.xi_ch,
            "xi_ele": params.detector.xi_ele,
            "xi_total": params.channel.xi_ch + params.detector.xi_ele,
        },
        "note_pse": TABLE1_NOTE,
    }
    if (d := _outdir(out)) is not None:
        write_report(d / "table1", "table1", cfg, report)
    return report


def run_e2e(cfg: ExperimentConfig, out=None) -> PipelineResult:
    params = cfg.protocol_params("experiment")
    res = run_pipeline(params, cfg.recon(), cfg.attack(), cfg["postprocess"], cfg["workers"])
    if (d := _outdir(out)) is not None:
        doc = dict(res.report)
        doc["alice_key_hex"] = res.alice_key.to_hex() if res.alice_key is not None else ""
        doc["bob_key_hex"] = res.bob_key.to_hex() if res.bob_key is not None else ""
        path = d / "e2e.json"
        path.write_text(_dump_json({"command": "e2e", "config_sha256": cfg.sha256, **doc}))
    return res


# -- calibration -------------------------------------------------------------


def run_calibrate(cfg: ExperimentConfig, out=None) -> dict:
    """Shot-noise scan, then a normalised vacuum acquisition at the operating power as a check."""
    c = cfg["calibration"]
    det = cfg.detector()
    rng = substream(cfg.seed, ROLE_CALIBRATION)
    fit = shot_noise_scan(c["lo_powers_mw"], c["n_pulses_each"], det, rng, c["operating_power_mw"])
    vac = 0.5 * rng.standard_normal(c["n_pulses_each"])
    check = snu_normalize(acquire(vac, det, c["operating_power_mw"], rng), fit)
    report = {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "slope_stderr": fit.slope_stderr,
        "intercept_stderr": fit.intercept_stderr,
        "r_squared": fit.r_squared,
        "operating_power_mw": fit.operating_power,
        "snu": fit.snu,
        "clearance": fit.clearance,
        "xi_ele_snu": fit.xi_ele,
        "configured_clearance": c["clearance"],
        "normalized_vacuum_variance": float(np.var(check, ddof=1)),
    }
    if (d := _outdir(out)) is not None:
        write_report(d / "calibration", "calibrate", cfg, report)
    return report
