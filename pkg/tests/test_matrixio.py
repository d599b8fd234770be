"""Matrix file formats and config files."""

import os
import struct

import numpy as np
import pytest

from conehull.exceptions import MatrixFormatError
from conehull.matrixio import (
    MAGIC,
    atomic_write,
    format_config,
    parse_config,
    read_matrix,
    write_matrix,
)


@pytest.fixture
def M():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((7, 5)) * 10.0 ** rng.integers(-12, 12, (7, 5))
    A[0, 0] = 0.1
    A[1, 1] = -0.0
    return A


class TestRoundTrip:
    def test_binary_bitwise(self, tmp_path, M):
        path = tmp_path / "m.bin"
        write_matrix(path, M, "binary")
        got = read_matrix(path)
        assert got.tobytes() == M.tobytes()

    def test_binary_layout(self, tmp_path):
        path = tmp_path / "m.bin"
        write_matrix(path, np.array([[1.0, 2.0, 3.0]]), "binary")
        raw = path.read_bytes()
        assert raw[:8] == MAGIC
        assert struct.unpack("<QQ", raw[8:24]) == (1, 3)
        assert struct.unpack("<3d", raw[24:]) == (1.0, 2.0, 3.0)

    def test_text(self, tmp_path, M):
        path = tmp_path / "m.txt"
        write_matrix(path, M)
        got = read_matrix(path)
        np.testing.assert_allclose(got, M, rtol=1e-15, atol=0)

    def test_text_header(self, tmp_path):
        path = tmp_path / "m.txt"
        write_matrix(path, np.eye(2))
        assert path.read_text().splitlines()[0] == "2 2"

    def test_empty(self, tmp_path):
        for fmt in ("text", "binary"):
            path = tmp_path / f"e.{fmt}"
            write_matrix(path, np.zeros((0, 3)), fmt)
            assert read_matrix(path).shape == (0, 3)

    def test_no_temp_left(self, tmp_path):
        atomic_write(tmp_path / "a.txt", "hello\n")
        assert os.listdir(tmp_path) == ["a.txt"]


class TestErrors:
    @pytest.mark.parametrize("text,line", [
        ("", 1),
        ("2 x\n", 1),
        ("2 2\n1 2\n", 3),
        ("2 2\n1 2\n3\n", 3),
        ("1 2\n1 abc\n", 2),
        ("1 2\n1 nan\n", 2),
        ("1 1\n1\n5\n", 3),
    ])
    def test_text_line_numbers(self, tmp_path, text, line):
        path = tmp_path / "bad.txt"
        path.write_text(text)
        with pytest.raises(MatrixFormatError, match=f"line {line}:"):
            read_matrix(path)

    def test_truncated_binary(self, tmp_path):
        path = tmp_path / "bad.bin"
        write_matrix(path, np.eye(3), "binary")
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(MatrixFormatError, match="bytes"):
            read_matrix(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTAMAT1" + bytes(16))
        with pytest.raises(MatrixFormatError):
            read_matrix(path, "binary")


class TestConfig:
    def test_round_trip(self):
        cfg = {"seed": 3, "s": 70, "delta": 0.05, "ensemble": "gaussian",
               "y": None, "methods": ["dca", "greedy"]}
        text = format_config(cfg)
        assert text.splitlines()[0].startswith("delta=")
        back = parse_config(text)
        assert back == {"delta": "0.05", "ensemble": "gaussian", "methods": "dca,greedy",
                        "s": "70", "seed": "3", "y": ""}

    def test_bad_line(self):
        with pytest.raises(MatrixFormatError, match="line 2:"):
            parse_config("a=1\nnonsense\n")
