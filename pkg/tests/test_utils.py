import logging

import numpy as np
import pytest

from curricula.utils import atomic_write_file
from curricula.utils import colored
from curricula.utils import configure_logging
from curricula.utils import derive_seed
from curricula.utils import dumps_json
from curricula.utils import log_level_from_env
from curricula.utils import rng_for


def test_atomic_write_file(tmp_path):
    target = tmp_path / "nested" / "dir" / "out.txt"
    atomic_write_file(target, "one\n")
    assert target.read_text() == "one\n"
    atomic_write_file(target, "two\n")
    assert target.read_text() == "two\n"
    assert [p.name for p in target.parent.iterdir()] == ["out.txt"]


def test_atomic_write_bytes(tmp_path):
    target = tmp_path / "blob.bin"
    atomic_write_file(target, b"\x00\xff")
    assert target.read_bytes() == b"\x00\xff"


def test_derive_seed():
    assert derive_seed(7, 1) == derive_seed(7, 1)
    seeds = {derive_seed(7, r) for r in range(10)}
    assert len(seeds) == 10
    assert derive_seed(7, 1) != derive_seed(8, 1)
    assert derive_seed(7, 0, 1) != derive_seed(7, 1, 0)
    assert all(0 <= s < 2**64 for s in seeds)


def test_derive_seed_masks_master():
    assert derive_seed(2**64 + 5, 3) == derive_seed(5, 3)


def test_rng_for():
    a = rng_for(3, 1).standard_normal(4)
    b = rng_for(3, 1).standard_normal(4)
    c = rng_for(3, 2).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize(
    "value, expected",
    [
        (None, logging.WARNING),
        ("", logging.WARNING),
        ("debug", logging.DEBUG),
        (" INFO ", logging.INFO),
        ("error", logging.ERROR),
    ],
)
def test_log_level_from_env(monkeypatch, value, expected):
    if value is not None:
        monkeypatch.setenv("CURRICULA_LOG", value)
    assert log_level_from_env() == expected


def test_log_level_from_env_unknown(monkeypatch, caplog):
    monkeypatch.setenv("CURRICULA_LOG", "chatty")
    assert log_level_from_env(default=logging.INFO) == logging.INFO
    assert "ignoring unknown CURRICULA_LOG='CHATTY'" in caplog.text


@pytest.mark.parametrize("verbose, expected", [(1, logging.INFO), (2, logging.DEBUG), (3, logging.DEBUG)])
def test_configure_logging(verbose, expected):
    assert configure_logging(verbose) == expected


def test_configure_logging_from_env(monkeypatch):
    monkeypatch.setenv("CURRICULA_LOG", "info")
    assert configure_logging() == logging.INFO


def test_colored():
    assert colored("txt", None) == "txt"
    assert colored("txt", "red") == "\x1b[31mtxt\x1b[0m"
    assert colored("txt", "green") == "\x1b[32mtxt\x1b[0m"


def test_dumps_json():
    assert dumps_json({"b": 1, "a": [1.5, None]}) == '{\n  "a": [\n    1.5,\n    null\n  ],\n  "b": 1\n}\n'
    with pytest.raises(ValueError):
        dumps_json({"x": float("nan")})
