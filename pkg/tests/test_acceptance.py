"""End-to-end acceptance checks, one test per criterion.

Run with ``pytest tests/test_acceptance.py`` (or directly as a script); a
PASS/FAIL line per criterion is printed in the terminal summary.
"""

import filecmp
import itertools
import math
import sys
import time

import numpy as np
import pytest
from test_security import mc_mutual_info_be

from dmcvqkd import experiments
from dmcvqkd.calibration import acquire, shot_noise_scan, snu_normalize
from dmcvqkd.channel import ChannelParams, distance_to_transmittance, propagate_covariance
from dmcvqkd.cli import COMMANDS, main
from dmcvqkd.config import ExperimentConfig
from dmcvqkd.gaussian_core import CovMatrix2, bs_joint_transform, environment_variance
from dmcvqkd.postprocess import KeyBuffer, ToeplitzSeed, gallager_code, reconcile, toeplitz_hash
from dmcvqkd.protocol import (
    ProtocolParams,
    Verdict,
    empirical_summary,
    postselect_and_assign,
    pse_theory,
    qber_theory,
    run_protocol,
    substream,
)
from dmcvqkd.security import (
    ReconciliationParams,
    binary_entropy,
    mutual_info_ab,
    mutual_info_ae,
    mutual_info_be,
    secret_key_rate,
)


@pytest.fixture(scope="module")
def cfg():
    return ExperimentConfig.from_dict()


def test_fig3_reproduction(cfg, criterion, tmp_path):
    with criterion(1, "Fig. 3 homodyne distributions") as note:
        t0 = time.perf_counter()
        res = experiments.run_fig3(cfg, tmp_path)
        elapsed = time.perf_counter() - t0
        fits = {f["phase_deg"]: f for f in res.fits}
        assert res.n_sifted == 10**5
        assert abs(fits[0]["mean"] - 0.949) <= 0.01, fits[0]["mean"]
        assert abs(fits[180]["mean"] + 0.949) <= 0.01, fits[180]["mean"]
        for f in fits.values():
            assert abs(f["variance"] - 0.270) <= 0.005, (f["phase_deg"], f["variance"])
        assert res.ks_pvalue > 0.01
        assert elapsed < 10
        note.append(
            f"means {fits[0]['mean']:+.4f}/{fits[180]['mean']:+.4f}, "
            f"variances {min(f['variance'] for f in fits.values()):.4f}-{max(f['variance'] for f in fits.values()):.4f}, "
            f"KS p={res.ks_pvalue:.3f}, {elapsed:.2f} s"
        )


def test_fig4_reproduction(cfg, criterion, tmp_path):
    with criterion(2, "Fig. 4 PSE/QBER vs threshold") as note:
        t0 = time.perf_counter()
        rows = experiments.run_fig4(cfg, tmp_path)
        elapsed = time.perf_counter() - t0
        assert {r["mean_photon"] for r in rows} == {0.5, 1.0, 2.0}
        assert min(r["x0"] for r in rows) == 0.0 and max(r["x0"] for r in rows) == 2.0
        worst = 0.0
        for n in (0.5, 1.0, 2.0):
            rs = sorted((r for r in rows if math.isclose(r["mean_photon"], n)), key=lambda r: r["x0"])
            assert np.all(np.diff([r["PSE_theory"] for r in rs]) <= 0)
            assert np.all(np.diff([r["QBER_theory"] for r in rs]) <= 0)
            assert rs[0]["PSE_theory"] == 1.0
            for r in rs:
                assert r["n_sifted"] >= 10**5
                p, q = r["PSE_theory"], r["QBER_theory"]
                sp = math.sqrt(p * (1 - p) / r["n_sifted"])
                sq = math.sqrt(q * (1 - q) / r["n_conclusive"])
                dp = abs(r["PSE_mc"] - p) / sp if sp > 0 else (0.0 if r["PSE_mc"] == p else math.inf)
                dq = abs(r["QBER_mc"] - q) / sq
                worst = max(worst, dp, dq)
        assert worst <= 3.0
        assert elapsed < 120
        note.append(f"{len(rows)} points, worst deviation {worst:.2f} sigma, {elapsed:.1f} s")


def test_fig2_35km_and_cutoff(cfg, criterion, tmp_path):
    with criterion(3, "Fig. 2 key rate at 35 km and noise cutoff") as note:
        rows = experiments.run_fig2(cfg, tmp_path)
        T35 = distance_to_transmittance(35.0, cfg["fig2"]["loss_db_per_km"])
        assert round(T35, 4) == 0.1995
        at35 = sorted((r for r in rows if math.isclose(r["T"], T35)), key=lambda r: r["xi"])
        xi_min = min(cfg["fig2"]["xis"])
        assert at35[0]["xi"] == xi_min and at35[0]["k_per_pulse"] > 0
        cut = [r["xi"] for r in at35 if r["k_per_pulse"] <= 0]
        assert cut, "no noise level drives the 35 km key rate to zero"
        base = cfg.protocol_params("protocol")
        checks = [(T35, xi_min, 0.0), (0.5, 0.05, 0.0), (0.9, 0.02, 0.0)]
        devs = []
        for i, (T, xi, x0) in enumerate(checks):
            est, se = mc_mutual_info_be(abs(base.alpha.alpha), T, 1.0, xi, x0, n=10**6, seed=900 + i)
            devs.append(abs(mutual_info_be(base.alpha, T, 1.0, xi, x0) - est) / se)
        assert max(devs) < 3
        note.append(
            f"k(35 km, xi={xi_min})={at35[0]['k_per_pulse']:.5f} bit/pulse at beta={cfg['fig2']['beta']}, "
            f"k<=0 from xi={min(cut)}; I(B:E) Monte Carlo within {max(devs):.2f} sigma"
        )


def test_table1_bracket(cfg, criterion, tmp_path):
    with criterion(4, "Table I bracket") as note:
        rep = experiments.run_table1(cfg, tmp_path)
        n = rep["signal_processed_pulses"]
        assert n == 81000
        assert abs(rep["sifted_bits"] - n / 2) <= 3 * math.sqrt(n / 4)
        assert 0.04 <= rep["qber"] <= 0.06 and 0.04 <= rep["qber_true"] <= 0.06
        assert abs(rep["qber_estimate"] - rep["qber_true"]) <= 3 * math.sqrt(0.05 * 0.95 / (0.05 * rep["conclusive_bits"]))
        assert 0.25 <= rep["key_per_pulse"] <= 0.45
        assert rep["pse"] == 1.0 and "0.8" in rep["note_pse"]
        assert rep["noise"]["xi_total"] == pytest.approx(0.01925)
        note.append(
            f"sifted {rep['sifted_bits']}, QBER {rep['qber']:.4f} (disclosed sample {rep['qber_estimate']:.4f}; xi_ch {rep['noise']['xi_ch']} + "
            f"xi_ele {rep['noise']['xi_ele']}), key {rep['key_per_pulse']:.4f} bit/pulse; PSE=0.8 excluded"
        )


def test_covariance_algebra(criterion):
    with criterion(5, "covariance pipeline and composition law") as note:
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(100):
            n, T, xi = rng.uniform(0, 4), rng.uniform(0.0, 0.999), rng.uniform(0, 0.2)
            J = bs_joint_transform(n / 2 + 0.25, environment_variance(T, xi), T)
            closed = (T * n / 2 + 0.25 + xi) * np.eye(2)
            worst = max(worst, np.abs(J[:2, :2] - closed).max())
        assert worst < 1e-12
        worst_c = 0.0
        for _ in range(100):
            V = CovMatrix2(rng.uniform(0.3, 3), rng.uniform(0.3, 3), rng.uniform(-0.05, 0.05))
            T1, T2, x1, x2 = *rng.uniform(0, 1, 2), *rng.uniform(0, 0.2, 2)
            two = propagate_covariance(propagate_covariance(V, ChannelParams(T1, x1)), ChannelParams(T2, x2))
            one = propagate_covariance(V, ChannelParams(T1 * T2, T2 * x1 + x2))
            worst_c = max(worst_c, np.abs(two.as_array() - one.as_array()).max())
        assert worst_c < 1e-12
        note.append(f"max deviation {worst:.1e} (pipeline), {worst_c:.1e} (composition)")


def test_information_identities(criterion):
    with criterion(6, "information identities and limits") as note:
        worst = 0.0
        for n, T, eta, xi, x0 in itertools.product(
            [0.1, 0.5, 1, 2, 5], [0.05, 0.3, 0.7, 1.0], [0.5, 1.0], [0, 0.02, 0.2, 1.0], [0, 0.3, 1, 2]
        ):
            p = ProtocolParams.make(n, T, eta, xi, x0=x0)
            lhs = mutual_info_ab(p.alpha, T, eta, xi, x0)
            rhs = pse_theory(p) * (1 - binary_entropy(qber_theory(p)))
            worst = max(worst, abs(lhs - rhs))
            for v in (lhs, mutual_info_be(p.alpha, T, eta, xi, x0), mutual_info_ae(p.alpha, T)):
                assert 0.0 <= v <= 1.0
        assert worst < 1e-10
        assert mutual_info_ab(8.0, 1, 1, 0, 0) == pytest.approx(1.0, abs=1e-12)
        for beta in (0.8, 0.95, 1.0):
            rep = secret_key_rate(ProtocolParams.make(1.0, 1.0, 1.0, 0.0), ReconciliationParams(beta))
            assert rep.k_per_sifted_raw == pytest.approx(beta * rep.i_ab, abs=1e-15)
        note.append(f"identity residual {worst:.1e}; I_AB->1 and k->beta I_AB at T=1")


def test_postprocessing(criterion):
    with criterion(7, "reconciliation and privacy amplification") as note:
        rng = np.random.default_rng(7)
        H = gallager_code(4096, 3, 6, rng)
        ok = 0
        for _ in range(200):
            a = rng.integers(0, 2, 4096).astype(np.uint8)
            b = a ^ (rng.random(4096) < 0.05).astype(np.uint8)
            res = reconcile(KeyBuffer(b, "bob"), H.syndrome(a), H, 0.05)
            if res.success:
                assert np.array_equal(res.bits, a)
                ok += 1
        assert ok / 200 >= 0.95
        seed = ToeplitzSeed.random(256, 64, rng)
        for _ in range(100):
            x, y = rng.integers(0, 2, (2, 256)).astype(np.uint8)
            assert np.array_equal(toeplitz_hash(x ^ y, seed), toeplitz_hash(x, seed) ^ toeplitz_hash(y, seed))
        a, b = rng.integers(0, 2, (2, 32)).astype(np.uint8)
        assert (a != b).any()
        hits = 0
        for _ in range(10**4):
            s = ToeplitzSeed.random(32, 8, rng)
            hits += np.array_equal(toeplitz_hash(a, s), toeplitz_hash(b, s))
        p = 2.0**-8
        sigma = math.sqrt(p * (1 - p) / 10**4)
        assert abs(hits / 10**4 - p) <= 3 * sigma
        note.append(f"{ok}/200 blocks at 5% crossover; collision rate {hits / 10**4:.5f} vs {p:.5f} +- {3 * sigma:.5f}")


def test_calibration(cfg, criterion, tmp_path):
    with criterion(8, "shot-noise calibration and unit consistency") as note:
        rep = experiments.run_calibrate(cfg, tmp_path)
        assert abs(rep["clearance"] - 0.037) <= 0.005
        det = cfg.detector()
        fit = shot_noise_scan(
            cfg["calibration"]["lo_powers_mw"], 50000, det, substream(8, 5), cfg["calibration"]["operating_power_mw"]
        )
        base = ProtocolParams.make(1.0, 0.9, 1.0, 0.01, 0.0, x0=0.3, n_pulses=200000, seed=81)
        rec = run_protocol(base)
        x = snu_normalize(acquire(rec.sample, det, fit.operating_power, substream(81, 5)), fit)
        verdict = postselect_and_assign(x, base.x0)
        verdict[rec.verdict == Verdict.UNSIFTED] = Verdict.UNSIFTED
        rec.verdict = verdict
        chain = empirical_summary(rec)
        direct = empirical_summary(
            run_protocol(ProtocolParams.make(1.0, 0.9, 1.0, 0.01, fit.xi_ele, x0=0.3, n_pulses=200000, seed=82))
        )
        zp = abs(chain.pse - direct.pse) / math.sqrt(2 * direct.pse * (1 - direct.pse) / direct.sifted_count)
        zq = abs(chain.qber - direct.qber) / math.sqrt(2 * direct.qber * (1 - direct.qber) / direct.conclusive_count)
        assert zp < 3 and zq < 3
        note.append(
            f"clearance {100 * rep['clearance']:.2f}%; trace chain vs direct sampling: "
            f"PSE {zp:.2f} sigma, QBER {zq:.2f} sigma"
        )


def test_determinism(criterion, tmp_path):
    with criterion(9, "byte-identical reruns of every command") as note:
        compared = 0
        for cmd in COMMANDS:
            outs = []
            for run in ("a", "b"):
                d = tmp_path / cmd / run
                assert main([cmd, "--out", str(d)]) == 0
                outs.append(d)
            names = sorted(p.name for p in outs[0].iterdir())
            assert names and names == sorted(p.name for p in outs[1].iterdir())
            match, mismatch, errors = filecmp.cmpfiles(outs[0], outs[1], names, shallow=False)
            assert not mismatch and not errors, (cmd, mismatch, errors)
            compared += len(match)
        note.append(f"{len(COMMANDS)} commands, {compared} file pairs identical")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
