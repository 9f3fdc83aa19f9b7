import numpy as np
import pytest
from scipy.stats import chisquare

from nobacktrack.data import (
    CharStream,
    entropy_rate_anbn,
    entropy_rate_anbp,
    gen_anbn,
    load_text,
    parse_anbn_blocks,
)
from nobacktrack.errors import ConfigError, DatasetError


def test_entropy_rates():
    assert entropy_rate_anbn(1, 32) == pytest.approx(5 / 35)
    assert entropy_rate_anbp(1, 32) == pytest.approx(10 / 35)
    assert entropy_rate_anbn(1, 1) == 0.0


def test_degenerate_range_repeats_single_block():
    stream = gen_anbn(1, 1, 8, seed=123)
    assert stream.data == b"a\nb\na\nb\n"
    assert stream.alphabet == b"\nab"


def test_generator_is_deterministic_and_well_formed():
    a = gen_anbn(2, 9, 5000, seed=11)
    b = gen_anbn(2, 9, 5000, seed=11)
    assert a.data == b.data
    assert len(a) >= 5000
    counts = parse_anbn_blocks(a.data)
    assert min(counts) >= 2 and max(counts) <= 9
    assert gen_anbn(2, 9, 5000, seed=12).data != a.data


@pytest.mark.slow
def test_block_counts_are_uniform():
    k, l = 1, 32
    counts = np.array(parse_anbn_blocks(gen_anbn(k, l, 100_000 * (k + l + 2), seed=5).data))
    assert len(counts) > 90_000
    observed = np.bincount(counts, minlength=l + 1)[k:]
    assert chisquare(observed).pvalue > 0.001
    assert np.mean(2 * counts + 2) == pytest.approx(l + k + 2, rel=0.01)


@pytest.mark.parametrize("k, l", [(0, 3), (4, 3)])
def test_invalid_range_raises(k, l):
    with pytest.raises(ConfigError):
        gen_anbn(k, l, 10, seed=0)
    with pytest.raises(ConfigError):
        entropy_rate_anbn(k, l)


def test_parser_rejects_malformed_blocks():
    assert parse_anbn_blocks(b"aa\nbb\na\nb\n") == [2, 1]
    for bad in (b"aa\nb\n", b"a\nb", b"ab\nab\n", b"a\n"):
        with pytest.raises(DatasetError):
            parse_anbn_blocks(bad)


def test_load_text_alphabet_and_cycling(tmp_path):
    path = tmp_path / "tiny.txt"
    path.write_bytes(b"ab\n")
    stream = load_text(path, cycle=True)
    assert stream.alphabet == b"\nab"
    assert len(stream) == 3
    assert stream.symbol_at(7) == stream.symbol_at(1)
    assert load_text(path).alphabet == stream.alphabet
    np.testing.assert_array_equal(stream.take(5), [1, 2, 0, 1, 2])


def test_finite_stream_ends(tmp_path):
    path = tmp_path / "tiny.txt"
    path.write_bytes(b"abc")
    stream = load_text(path)
    assert list(stream) == [0, 1, 2]
    with pytest.raises(IndexError):
        stream.symbol_at(3)


def test_missing_or_empty_files_raise(tmp_path):
    with pytest.raises(DatasetError):
        load_text(tmp_path / "absent.txt")
    empty = tmp_path / "empty.txt"
    empty.write_bytes(b"")
    with pytest.raises(DatasetError):
        load_text(empty)


def test_encoding_round_trip_and_start_input():
    stream = CharStream(b"hello world")
    for i, byte in enumerate(stream.alphabet):
        assert stream.decode(stream.encode(i)) == byte
        assert stream.index(byte) == i
    start = stream.start_input()
    assert start.shape == (stream.n_symbols + 1,)
    assert start[-1] == 1.0 and start[:-1].sum() == 0.0
    assert stream.input_vector(0)[-1] == 0.0
    with pytest.raises(ConfigError):
        stream.encode(stream.n_symbols)


def test_write_round_trips_bytes(tmp_path):
    stream = gen_anbn(1, 4, 200, seed=2)
    stream.write(tmp_path / "anbn.txt")
    assert (tmp_path / "anbn.txt").read_bytes() == stream.data
