from __future__ import annotations

import json
import logging
import os
import platform
import shutil
import typing as t
from pathlib import Path
from tempfile import NamedTemporaryFile

import numpy as np

log: logging.Logger = logging.getLogger(__name__)

LOG_ENV_VAR = "CURRICULA_LOG"
SEED_MASK = (1 << 64) - 1


def _ensure_intermediate_dirs(path: Path) -> None:
    path.expanduser().parent.mkdir(parents=True, exist_ok=True)


def atomic_write_file(path: Path, contents: str | bytes) -> None:
    """
    Atomically write a string (or bytes) to a file by writing it to a temporary file,
    and then renaming it to the final destination name. A half-written checkpoint or
    pool file is never visible under its final name.
    """
    path = Path(path)
    _ensure_intermediate_dirs(path)
    if isinstance(contents, bytes):
        tmp = NamedTemporaryFile("wb", dir=path.parent, delete=False)
    else:
        tmp = NamedTemporaryFile(
            "w", dir=path.parent, encoding="utf-8", newline="\n", delete=False
        )
    with tmp as f:
        log.debug("writing to tempfile @ %s", f.name)
        f.write(contents)
    log.debug("moving %s -> %s", f.name, path)
    shutil.move(f.name, path)


def dumps_json(obj: t.Any) -> str:
    # canonical form: identical objects always serialize to identical bytes
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def derive_seed(master_seed: int, *counters: int) -> int:
    """
    Counter-based seed split. The derived seed depends only on the master seed and
    the counters (e.g. a round index), never on how many seeds were drawn before.
    """
    seq = np.random.SeedSequence(master_seed & SEED_MASK, spawn_key=counters)
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def rng_for(seed: int, *counters: int) -> np.random.Generator:
    seq = np.random.SeedSequence(seed & SEED_MASK, spawn_key=counters)
    return np.random.Generator(np.random.PCG64(seq))


def log_level_from_env(default: int = logging.WARNING) -> int:
    name = os.environ.get(LOG_ENV_VAR, "").strip().upper()
    if not name:
        return default
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        log.warning("ignoring unknown %s=%r", LOG_ENV_VAR, name)
        return default
    return level


def configure_logging(verbose: int | None = None) -> int:
    """
    -v is INFO, -vv is DEBUG. Without -v the CURRICULA_LOG environment variable
    decides, and the default level is logging.WARNING.
    """
    if verbose is None:
        log_level = log_level_from_env()
    elif verbose == 1:
        log_level = logging.INFO
    else:
        log_level = logging.DEBUG
    logging.basicConfig(level=log_level)
    return log_level


_ANSIColor = t.Literal[
    "black", "red", "green", "yellow", "blue", "magenta", "cyan", "white"
]
_ansi_colors = t.get_args(_ANSIColor)
if platform.system() == "Windows":
    os.system("color")  # hack - makes ANSI colors work in the windows cmd window


def colored(txt: str, color: _ANSIColor | None) -> str:
    if color is None:
        return txt
    code = _ansi_colors.index(color.casefold())
    reset = "\x1b[0m"
    return f"\x1b[{code + 30}m{txt}{reset}"
