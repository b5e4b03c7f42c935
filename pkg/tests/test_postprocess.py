import math

import numpy as np
import pytest

from dmcvqkd.postprocess import (
    KeyBuffer,
    LeakageLedger,
    ParityCheckMatrix,
    Stage,
    ToeplitzSeed,
    bits_to_hex,
    decode_syndrome,
    final_key_length,
    gallager_code,
    hex_to_bits,
    parameter_estimation,
    reconcile,
    toeplitz_hash,
)
from dmcvqkd.protocol import ProtocolParams
from dmcvqkd.security import ReconciliationParams, binary_entropy, secret_key_rate


@pytest.fixture(scope="module")
def code4096():
    return gallager_code(4096, 3, 6, np.random.default_rng(2024))


@pytest.fixture(scope="module")
def code1024():
    return gallager_code(1024, 3, 6, np.random.default_rng(7))


class TestKeyBuffer:
    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            KeyBuffer([0, 2])

    def test_stage_only_moves_forward(self):
        k = KeyBuffer([1, 0, 1], "bob", Stage.RECONCILED)
        assert k.advance([1], Stage.FINAL).stage == Stage.FINAL
        with pytest.raises(ValueError):
            k.advance([1, 0, 1], Stage.RAW)

    def test_hex_roundtrip(self):
        bits = np.random.default_rng(0).integers(0, 2, 37).astype(np.uint8)
        assert np.array_equal(hex_to_bits(bits_to_hex(bits), 37), bits)
        assert bits_to_hex([1, 0, 0, 0, 0, 0, 0, 1]) == "81"


class TestLedger:
    def test_record_and_merge(self):
        a, b = LeakageLedger(), LeakageLedger()
        a.record("disclosed", 10)
        a.record("syndrome", 5)
        b.record("hash_seed", 7)
        m = a.merge(b)
        assert m.total_public == 15
        assert m.as_dict()["hash_seed_bits"] == 7

    def test_unknown_kind(self):
        with pytest.raises(KeyError):
            LeakageLedger().record("gossip", 1)


class TestParameterEstimation:
    def test_identical(self):
        bits = np.random.default_rng(1).integers(0, 2, 1000)
        est, a, b, k = parameter_estimation(KeyBuffer(bits), KeyBuffer(bits, "bob"), 0.1, np.random.default_rng(2))
        assert est == 0.0 and len(a) == len(b) == 900 and k == 100

    def test_complementary(self):
        bits = np.random.default_rng(1).integers(0, 2, 1000)
        est, *_ = parameter_estimation(KeyBuffer(bits), KeyBuffer(1 - bits, "bob"), 0.1, np.random.default_rng(2))
        assert est == 1.0

    def test_five_percent(self):
        rng = np.random.default_rng(3)
        n = 40000
        a = rng.integers(0, 2, n)
        b = a ^ (rng.random(n) < 0.05)
        est, _, _, k = parameter_estimation(KeyBuffer(a), KeyBuffer(b, "bob"), 0.2, rng)
        assert abs(est - 0.05) < 3 * math.sqrt(0.05 * 0.95 / k)

    def test_disclosed_positions_removed(self):
        a = np.arange(100) % 2
        est, ar, br, k = parameter_estimation(KeyBuffer(a), KeyBuffer(a, "bob"), 0.3, np.random.default_rng(4))
        assert len(ar) == 100 - k

    def test_invalid(self):
        with pytest.raises(ValueError):
            parameter_estimation(KeyBuffer([0, 1]), KeyBuffer([0], "bob"), 0.5, np.random.default_rng(0))
        with pytest.raises(ValueError):
            parameter_estimation(KeyBuffer([0, 1]), KeyBuffer([0, 1], "bob"), 0.0, np.random.default_rng(0))


class TestCode:
    def test_regular_and_cycle_free(self, code4096):
        H = code4096.to_dense()
        assert H.shape == (2048, 4096)
        assert np.all(H.sum(0) == 3) and np.all(H.sum(1) == 6)
        assert code4096.rate == 0.5
        assert not code4096.has_four_cycles()

    def test_deterministic(self):
        a = gallager_code(600, 3, 6, np.random.default_rng(9))
        b = gallager_code(600, 3, 6, np.random.default_rng(9))
        assert np.array_equal(a.var_idx, b.var_idx) and np.array_equal(a.check_idx, b.check_idx)

    def test_syndrome_matches_dense(self, code1024):
        x = np.random.default_rng(5).integers(0, 2, 1024).astype(np.uint8)
        assert np.array_equal(code1024.syndrome(x), (code1024.to_dense().astype(int) @ x) % 2)

    def test_save_load(self, code1024, tmp_path):
        path = tmp_path / "h.txt"
        code1024.save(path)
        assert path.read_text().startswith("# ldpc n=1024 m=512 wc=3 wr=6\n")
        back = ParityCheckMatrix.load(path)
        assert np.array_equal(back.to_dense(), code1024.to_dense())

    def test_bad_dimensions(self):
        with pytest.raises(ValueError):
            gallager_code(1001, 3, 6, 0)
        with pytest.raises(ValueError):
            ParityCheckMatrix(4, 2, np.array([0, 0]), np.array([1, 1]))


class TestReconcile:
    def test_no_errors(self, code1024):
        x = np.random.default_rng(6).integers(0, 2, 1024)
        res = reconcile(KeyBuffer(x, "bob"), code1024.syndrome(x), code1024, 0.05)
        assert res.success and res.iterations <= 1
        assert np.array_equal(res.buffer.bits, x)
        assert res.buffer.stage == Stage.RECONCILED

    def test_every_single_flip(self, code1024):
        x = np.random.default_rng(7).integers(0, 2, 1024).astype(np.uint8)
        syn = code1024.syndrome(x)
        for i in range(1024):
            y = x.copy()
            y[i] ^= 1
            bits, ok, _ = decode_syndrome(code1024, y, syn, 0.01)
            assert ok and np.array_equal(bits, x), i

    def test_five_percent_block_success(self, code4096):
        rng = np.random.default_rng(8)
        ok = 0
        for _ in range(200):
            a = rng.integers(0, 2, 4096).astype(np.uint8)
            b = a ^ (rng.random(4096) < 0.05).astype(np.uint8)
            res = reconcile(KeyBuffer(b, "bob"), code4096.syndrome(a), code4096, 0.05)
            if res.success:
                ok += 1
                assert np.array_equal(res.bits, a)
        assert ok >= 190

    def test_hopeless_block_fails(self, code1024):
        rng = np.random.default_rng(9)
        a = rng.integers(0, 2, 1024)
        b = rng.integers(0, 2, 1024)
        res = reconcile(KeyBuffer(b, "bob"), code1024.syndrome(a), code1024, 0.05, max_iters=20)
        assert not res.success and res.buffer is None

    def test_length_mismatch(self, code1024):
        with pytest.raises(ValueError):
            reconcile(KeyBuffer(np.zeros(10)), np.zeros(512), code1024, 0.05)


def explicit_toeplitz(seed_bits, n_in, n_out):
    return np.array([[seed_bits[i - j + n_in - 1] for j in range(n_in)] for i in range(n_out)], dtype=np.uint8)


class TestToeplitz:
    def test_zero_key(self):
        seed = ToeplitzSeed.random(64, 16, np.random.default_rng(0))
        assert not toeplitz_hash(np.zeros(64, np.uint8), seed).any()

    def test_linearity(self):
        rng = np.random.default_rng(1)
        seed = ToeplitzSeed.random(500, 120, rng)
        for _ in range(50):
            a, b = rng.integers(0, 2, (2, 500)).astype(np.uint8)
            assert np.array_equal(toeplitz_hash(a ^ b, seed), toeplitz_hash(a, seed) ^ toeplitz_hash(b, seed))

    def test_matrix_exhaustive_8x8(self):
        xs = ((np.arange(256)[:, None] >> np.arange(7, -1, -1)) & 1).astype(np.uint8)
        rng = np.random.default_rng(2)
        for _ in range(32):
            seed = ToeplitzSeed.random(8, 8, rng)
            M = explicit_toeplitz(seed.bits, 8, 8)
            assert np.array_equal(seed.matrix(), M)
            for x in xs:
                assert np.array_equal(toeplitz_hash(x, seed), (M.astype(int) @ x) % 2)

    def test_exact_universality_small_family(self):
        # every 8x8 Toeplitz seed: each nonzero difference maps to 0 for exactly 2^-8 of seeds
        seeds = ((np.arange(1 << 15)[:, None] >> np.arange(15)) & 1).astype(np.int64)
        idx = np.arange(8)[:, None] - np.arange(8)[None, :] + 7
        mats = seeds[:, idx]
        for d in (1, 0x80, 0x5A, 0xFF):
            diff = (d >> np.arange(7, -1, -1)) & 1
            zero = ~((mats @ diff) % 2).any(axis=1)
            assert zero.sum() == (1 << 15) >> 8

    def test_collision_rate(self):
        rng = np.random.default_rng(3)
        a, b = rng.integers(0, 2, (2, 32)).astype(np.uint8)
        assert (a != b).any()
        trials = 10**4
        hits = sum(
            np.array_equal(toeplitz_hash(a, s), toeplitz_hash(b, s))
            for s in (ToeplitzSeed.random(32, 8, rng) for _ in range(trials))
        )
        p = 2.0**-8
        assert abs(hits / trials - p) <= 3 * math.sqrt(p * (1 - p) / trials)

    def test_fft_path_matches_dense(self):
        rng = np.random.default_rng(4)
        n_in, n_out = 4096, 1100
        seed = ToeplitzSeed.random(n_in, n_out, rng)
        x = rng.integers(0, 2, n_in).astype(np.uint8)
        dense = (seed.matrix().astype(np.int64) @ x) % 2
        assert np.array_equal(toeplitz_hash(x, seed), dense)

    def test_keybuffer_stage(self):
        seed = ToeplitzSeed.random(16, 4, np.random.default_rng(5))
        out = toeplitz_hash(KeyBuffer(np.ones(16), "bob", Stage.RECONCILED), seed)
        assert out.stage == Stage.FINAL and len(out) == 4

    def test_invalid(self):
        seed = ToeplitzSeed.random(16, 4, np.random.default_rng(5))
        with pytest.raises(ValueError):
            toeplitz_hash(np.ones(15, np.uint8), seed)
        with pytest.raises(ValueError):
            toeplitz_hash(np.ones(16, np.uint8), seed, n_out=5)
        with pytest.raises(ValueError):
            ToeplitzSeed(np.ones(3), 2, 3)


class TestFinalKeyLength:
    def test_ideal(self):
        assert final_key_length(1000, 0.0, 0.0, 1.0, 0) == 1000

    def test_clamp(self):
        assert final_key_length(1000, 0.2, 0.5, 0.9) == 0

    def test_table1_bracket(self):
        rep = secret_key_rate(ProtocolParams.make(1.0, 0.95, 0.76, 0.01, 0.00925), ReconciliationParams(0.95))
        length = final_key_length(32000, 0.05, rep.i_be, 0.95)
        target = 0.35 * 81000
        assert target / 2 <= length <= 2 * target

    def test_never_exceeds_shannon_bound(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            n, q, ibe, beta = int(rng.integers(0, 10**5)), rng.uniform(0, 0.5), rng.uniform(0, 1), rng.uniform(0.01, 1)
            assert final_key_length(n, q, ibe, beta) <= max(0.0, n * (1 - binary_entropy(q) - ibe))
