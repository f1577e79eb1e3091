import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oamqrng import toeplitz as tz
from oamqrng.entropy import EntropyReport
from oracles import gf2_matvec, gf2_matvec_batch, toeplitz_matrix

# -- sizing ------------------------------------------------------------------


def test_output_length_examples():
    assert tz.output_length(10**6, 1.0, 1e-200) == 998_671
    assert 2 * 200 * math.log2(10) == pytest.approx(1328.77, abs=0.01)
    assert tz.output_length(10**6, 0.0, 1e-200) == 0
    assert tz.output_length(12345, 0.7, 1.0) == math.floor(12345 * 0.7)


def test_output_length_monotone():
    ns = [0, 10, 1000, 5000, 10**6]
    hs = [0, 0.1, 0.5, 0.9, 1.0]
    eps = [1e-1, 1e-10, 1e-100, 1e-200]
    for e in eps:
        for h in hs:
            vals = [tz.output_length(n, h, e) for n in ns]
            assert vals == sorted(vals)
        for n in ns:
            vals = [tz.output_length(n, h, e) for h in hs]
            assert vals == sorted(vals)
    for n in ns:
        vals = [tz.output_length(n, 0.9, e) for e in eps]
        assert vals == sorted(vals, reverse=True)


def test_output_length_rejects_bad_parameters():
    for h, e in ((1.1, 0.5), (-0.1, 0.5), (0.5, 0.0), (0.5, 1.5)):
        with pytest.raises(ValueError):
            tz.output_length(100, h, e)


def test_extraction_params_invariants():
    tz.ExtractionParams(1000, 10, 1e-3).check_entropy(0.5)
    with pytest.raises(ValueError):
        tz.ExtractionParams(10, 11, 0.1)
    with pytest.raises(ValueError):
        tz.ExtractionParams(10, 5, 1.0)
    with pytest.raises(ValueError):
        tz.ExtractionParams(1000, 990, 1e-3).check_entropy(0.5)


# -- extract -----------------------------------------------------------------


def test_zero_input_gives_zero_output():
    rng = np.random.default_rng(0)
    for n, m, method in ((16, 8, "direct"), (5000, 2000, "fft")):
        s = rng.integers(0, 2, n + m - 1, dtype=np.uint8)
        assert not tz.extract(np.zeros(n, dtype=np.uint8), s, m, method=method).any()


def test_one_by_one():
    assert tz.extract([1], [1], 1).tolist() == [1]
    assert tz.extract([1], [1], 1, method="fft").tolist() == [1]


def test_oracle_matrix_definition():
    # n=3, m=2: T = [[s2, s1, s0], [s3, s2, s1]]
    T = toeplitz_matrix([0, 1, 2, 3], 3, 2)
    assert T.tolist() == [[2, 1, 0], [3, 2, 1]]


def test_small_against_naive_oracle():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        s = rng.integers(0, 2, 10, dtype=np.uint8)
        x = rng.integers(0, 2, 8, dtype=np.uint8)
        want = gf2_matvec(toeplitz_matrix(s, 8, 3), x)
        np.testing.assert_array_equal(tz.extract(x, s, 3), want)


def test_fft_path_against_oracle_all_small_shapes():
    rng = np.random.default_rng(2)
    for n in range(1, 65):
        for m in range(1, n + 1, 3):
            s = rng.integers(0, 2, n + m - 1, dtype=np.uint8)
            X = rng.integers(0, 2, (2, n), dtype=np.uint8)
            want = gf2_matvec_batch(toeplitz_matrix(s, n, m), X)
            for x, w in zip(X, want):
                np.testing.assert_array_equal(tz.extract(x, s, m, method="fft"), w)


@pytest.mark.parametrize("n,m", [(4096, 4000), (6000, 1), (3001, 1500)])
def test_fft_matches_direct_at_larger_sizes(n, m):
    rng = np.random.default_rng(n + m)
    s = rng.integers(0, 2, n + m - 1, dtype=np.uint8)
    x = rng.integers(0, 2, n, dtype=np.uint8)
    np.testing.assert_array_equal(tz.extract(x, s, m, method="fft"), tz.extract(x, s, m, method="direct"))


def test_fft_rows_at_block_scale():
    n, m = 70_000, 65_000
    rng = np.random.default_rng(8)
    s = rng.integers(0, 2, n + m - 1, dtype=np.uint8)
    x = rng.integers(0, 2, n, dtype=np.uint8)
    got = tz.extract(x, s, m)
    for i in rng.choice(m, 200, replace=False):
        idx = i - np.arange(n) + n - 1
        assert got[i] == int(s[idx].astype(np.int64) @ x) & 1


def test_full_block_exact_at_worst_case_magnitude():
    # all-ones input and seed maximize the convolution values the FFT must resolve
    n = 1 << 20
    m = tz.output_length(n, 1.0, 1e-200)
    s = np.ones(n + m - 1, dtype=np.uint8)
    out = tz.ToeplitzHasher(s, n, m)(np.ones(n, dtype=np.uint8))
    assert np.all(out == n % 2)
    s = tz.seed_bits(n + m - 1, 3)
    x = np.random.default_rng(3).integers(0, 2, n, dtype=np.uint8)
    rows = [0, 1, m // 2, m - 1]
    got = tz.ToeplitzHasher(s, n, m)(x)
    for i in rows:
        idx = i - np.arange(n) + n - 1
        assert got[i] == int(s[idx].astype(np.int64) @ x) & 1


def test_extract_argument_errors():
    with pytest.raises(tz.ExtractionError):
        tz.extract(np.zeros(4, np.uint8), np.zeros(7, np.uint8), 3)
    with pytest.raises(tz.ExtractionError):
        tz.extract(np.zeros(4, np.uint8), np.zeros(8, np.uint8), 5)
    with pytest.raises(ValueError):
        tz.extract(np.zeros(4, np.uint8), np.zeros(6, np.uint8), 3, method="magic")


@settings(max_examples=200, deadline=None)
@given(data=st.data())
def test_linearity_property(data):
    n = data.draw(st.integers(1, 48))
    m = data.draw(st.integers(1, n))
    bits = st.lists(st.integers(0, 1), min_size=n, max_size=n)
    x = np.array(data.draw(bits), dtype=np.uint8)
    y = np.array(data.draw(bits), dtype=np.uint8)
    s = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n + m - 1, max_size=n + m - 1)), dtype=np.uint8)
    for method in ("direct", "fft"):
        lhs = tz.extract(x ^ y, s, m, method=method)
        rhs = tz.extract(x, s, m, method=method) ^ tz.extract(y, s, m, method=method)
        np.testing.assert_array_equal(lhs, rhs)


def test_hasher_rejects_wrong_block():
    h = tz.ToeplitzHasher(np.zeros(15, np.uint8), 10, 6)
    with pytest.raises(tz.ExtractionError):
        h(np.zeros(9, np.uint8))


# -- serialization and streaming ---------------------------------------------


def test_symbols_to_bits():
    assert tz.symbols_to_bits(np.array([1, 2, 3, 4]), 4).tolist() == [0, 0, 0, 1, 1, 0, 1, 1]
    assert tz.symbols_to_bits(np.array([1, 5, 3]), 5).tolist() == [0, 0, 0, 1, 0, 0, 0, 1, 0]
    assert tz.symbols_to_bits(np.array([1, 2, 2]), 2).tolist() == [0, 1, 1]


def test_seed_is_deterministic():
    np.testing.assert_array_equal(tz.seed_bits(100, 5), tz.seed_bits(100, 5))
    assert tz.seed_bits(100, 5).tolist() != tz.seed_bits(100, 6).tolist()
    assert tz.seed_identifier(5) == "numpy.PCG64:5"


def report(h=2.0, d=4):
    return EntropyReport(h, h, 1e-10, 1000, d)


def test_stream_under_one_block_warns(caplog):
    caplog.set_level(logging.WARNING, logger="oamqrng.toeplitz")
    res = tz.extract_stream(np.ones(100, np.uint8), report(), eps_sec=1e-3, block_bits=1024)
    assert res.bits.size == 0 and res.metadata["blocks"] == 0
    assert "less than one" in caplog.text


def test_stream_ratio_and_metadata():
    rng = np.random.default_rng(4)
    codes = rng.integers(1, 5, 600_000).astype(np.uint8)
    codes[::7] = 0xFF
    rep = report(1.999)
    res = tz.extract_stream(codes, rep, seed_value=9, eps_sec=1e-200, block_bits=1 << 16)
    meta = res.metadata
    assert meta["m"] == tz.output_length(1 << 16, rep.rate_per_bit, 1e-200)
    assert res.bits.size == meta["output_bits"] == meta["blocks"] * meta["m"]
    assert res.bits.size / meta["input_bits"] == pytest.approx(meta["m"] / meta["n"], abs=1e-3)
    n_valid = int(np.count_nonzero(codes <= 4))
    assert meta["input_bits"] + meta["dropped_bits"] == 2 * n_valid
    assert meta["seed_id"] == "numpy.PCG64:9" and meta["eps_sec"] == 1e-200
    # block b hashes raw bits [b*n, (b+1)*n) with the shared seed
    raw = tz.symbols_to_bits(codes[codes <= 4], 4)
    s = tz.seed_bits(meta["n"] + meta["m"] - 1, 9)
    np.testing.assert_array_equal(res.bits[meta["m"]:2 * meta["m"]], tz.extract(raw[meta["n"]:2 * meta["n"]], s, meta["m"]))


def test_stream_deterministic():
    codes = np.random.default_rng(5).integers(1, 5, 100_000).astype(np.uint8)
    a = tz.extract_stream(codes, report(), 3, block_bits=1 << 14).bits
    b = tz.extract_stream(codes, report(), 3, block_bits=1 << 14).bits
    assert a.tobytes() == b.tobytes()


def test_stream_rejects_zero_entropy():
    with pytest.raises(tz.ExtractionError):
        tz.extract_stream(np.ones(10, np.uint8), EntropyReport(0.0, 0.0, 1e-10, 10, 4))
    with pytest.raises(tz.ExtractionError):
        tz.extract_stream(np.ones(10, np.uint8), report(0.01), block_bits=1024)


def test_bits_file_round_trip(tmp_path):
    bits = np.random.default_rng(6).integers(0, 2, 1001, dtype=np.uint8)
    tz.write_bits(tmp_path / "b.bin", bits)
    assert (tmp_path / "b.bin").read_bytes()[0] == int("".join(map(str, bits[:8])), 2)
    np.testing.assert_array_equal(tz.read_bits(tmp_path / "b.bin", 1001), bits)
