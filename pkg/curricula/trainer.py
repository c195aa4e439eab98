"""
Built-in reference classifier: linear softmax, or one tanh hidden layer, trained
with AdamW on float64 numpy arrays. Everything is a deterministic function of
(seed, inputs); the checkpoint format is bit-exact.

Only the TrainerHandle surface (init / train_epochs / train_steps / predict_proba /
accuracy / save / load) is used by the curriculum code, so a heavier trainer can be
plugged in without touching schedule logic.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
import typing as t
import zlib
from dataclasses import dataclass
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dataset import NUM_CLASSES
from .exceptions import DimensionError
from .exceptions import FormatError
from .exceptions import IntegrityError
from .exceptions import NonFiniteError
from .sampling import SamplePool
from .utils import atomic_write_file
from .utils import rng_for


log: logging.Logger = logging.getLogger(__name__)

MAGIC = b"CURRCKPT"
FORMAT_VERSION = 1
_F64 = np.dtype("<f8")

Gradient = dict[str, np.ndarray]


@dataclass(frozen=True)
class Architecture:
    """`linear` (d -> 12 logits) or `hidden` (d -> width tanh units -> 12 logits)."""

    kind: t.Literal["linear", "hidden"] = "linear"
    width: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("linear", "hidden"):
            raise ValueError(f"unknown architecture {self.kind!r}")
        if self.kind == "hidden" and self.width < 1:
            raise ValueError("hidden architecture needs width >= 1")
        if self.kind == "linear" and self.width:
            raise ValueError("linear architecture has no hidden width")

    @classmethod
    def parse(cls, text: str) -> Architecture:
        """'linear' or 'hidden:<width>'"""
        kind, _, width = text.partition(":")
        return cls(kind, int(width) if width else 0)  # type: ignore[arg-type]

    def __str__(self) -> str:
        return self.kind if self.kind == "linear" else f"hidden:{self.width}"

    def shapes(self, d: int, n_classes: int = NUM_CLASSES) -> dict[str, tuple[int, ...]]:
        if self.kind == "linear":
            return {"W": (d, n_classes), "b": (n_classes,)}
        h = self.width
        return {"W1": (d, h), "b1": (h,), "W2": (h, n_classes), "b2": (n_classes,)}


LINEAR = Architecture()


@dataclass
class ModelParams:
    architecture: Architecture
    tensors: dict[str, np.ndarray]

    @property
    def input_dim(self) -> int:
        first = "W" if self.architecture.kind == "linear" else "W1"
        return int(self.tensors[first].shape[0])

    @property
    def n_classes(self) -> int:
        last = "b" if self.architecture.kind == "linear" else "b2"
        return int(self.tensors[last].shape[0])

    def parameter_count(self) -> int:
        return sum(int(a.size) for a in self.tensors.values())

    def copy(self) -> ModelParams:
        return ModelParams(self.architecture, {k: v.copy() for k, v in self.tensors.items()})


@dataclass
class OptimizerState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def hyperparameters(self) -> dict[str, float]:
        return {
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
        }

    def copy(self) -> OptimizerState:
        return replace(
            self,
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
        )

    def reset(self) -> OptimizerState:
        """Zeroed moments and step count, hyperparameters kept."""
        return replace(
            self,
            step=0,
            m={k: np.zeros_like(a) for k, a in self.m.items()},
            v={k: np.zeros_like(a) for k, a in self.v.items()},
        )


@dataclass
class ModelCheckpoint:
    params: ModelParams
    opt: OptimizerState
    rng_state: dict[str, t.Any]
    lineage: tuple[tuple[str, int], ...] = ()
    format_version: int = FORMAT_VERSION

    def copy(self) -> ModelCheckpoint:
        return ModelCheckpoint(
            params=self.params.copy(),
            opt=self.opt.copy(),
            rng_state=json.loads(json.dumps(self.rng_state)),
            lineage=self.lineage,
            format_version=self.format_version,
        )

    def with_stage(self, strategy: str, round_index: int) -> ModelCheckpoint:
        ckpt = self.copy()
        ckpt.lineage = self.lineage + ((strategy, round_index),)
        return ckpt

    @property
    def checkpoint_id(self) -> str:
        return hashlib.sha256(dumps_checkpoint(self)).hexdigest()[:16]


def _fresh_rng_state(seed: int) -> dict[str, t.Any]:
    # generator state as of the start of the current epoch, plus how many batches of
    # that epoch are already done. the epoch's permutation is redrawn from it on resume
    return {"bit_generator": rng_for(seed).bit_generator.state, "cursor": 0}


def init_model(
    architecture: Architecture,
    d: int,
    seed: int,
    n_classes: int = NUM_CLASSES,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> ModelCheckpoint:
    """
    Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from a seeded generator, biases
    zero, optimizer state zeroed, empty lineage.
    """
    if d < 1:
        raise DimensionError(f"input dimension must be >= 1, got {d}")
    rng = rng_for(seed, 0)
    tensors = {}
    for name, shape in architecture.shapes(d, n_classes).items():
        if len(shape) == 2:
            bound = 1.0 / math.sqrt(shape[0])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        else:
            tensors[name] = np.zeros(shape, dtype=np.float64)
    params = ModelParams(architecture, tensors)
    opt = OptimizerState(
        step=0,
        m={k: np.zeros_like(a) for k, a in tensors.items()},
        v={k: np.zeros_like(a) for k, a in tensors.items()},
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        weight_decay=weight_decay,
    )
    log.debug("init %s d=%d seed=%d (%d params)", architecture, d, seed, params.parameter_count())
    return ModelCheckpoint(params, opt, _fresh_rng_state(int(rng_for(seed, 1).integers(2**63))))


def _check_input(params: ModelParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise DimensionError(
            f"expected features of dimension {params.input_dim}, got shape {X.shape}"
        )
    return X


def _logits(params: ModelParams, X: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    p = params.tensors
    if params.architecture.kind == "linear":
        return np.einsum("nd,dk->nk", X, p["W"]) + p["b"], None
    H = np.tanh(np.einsum("nd,dh->nh", X, p["W1"]) + p["b1"])
    return np.einsum("nh,hk->nk", H, p["W2"]) + p["b2"], H


def softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def forward(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """
    Class probabilities. A single d-vector gives a 12-vector, an (n, d) matrix gives
    (n, 12).
    """
    single = np.ndim(features) == 1
    X = _check_input(params, features)
    P = softmax(_logits(params, X)[0])
    return P[0] if single else P


def loss_and_grad(
    params: ModelParams, X: np.ndarray, y: np.ndarray
) -> tuple[float, Gradient]:
    """Mean cross-entropy over the batch and its gradient for every tensor."""
    X = _check_input(params, X)
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if y.shape != (n,):
        raise DimensionError(f"{n} feature rows but labels of shape {y.shape}")
    Z, H = _logits(params, X)
    Zs = Z - Z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(Zs).sum(axis=1))
    rows = np.arange(n)
    loss = float((lse - Zs[rows, y]).sum() / n)
    G = np.exp(Zs - lse[:, None])
    G[rows, y] -= 1.0
    G /= n
    p = params.tensors
    if params.architecture.kind == "linear":
        return loss, {"W": np.einsum("nd,nk->dk", X, G), "b": G.sum(axis=0)}
    dH = np.einsum("nk,hk->nh", G, p["W2"])
    dA = dH * (1.0 - H * H)
    grad = {
        "W1": np.einsum("nd,nh->dh", X, dA),
        "b1": dA.sum(axis=0),
        "W2": np.einsum("nh,nk->hk", H, G),
        "b2": G.sum(axis=0),
    }
    return loss, grad


def adamw_step(ckpt: ModelCheckpoint, gradient: Gradient, lr: float) -> ModelCheckpoint:
    """
    One AdamW update with decoupled weight decay:

        m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
        theta <- theta (1 - lr wd) - lr mhat / (sqrt(vhat) + eps)

    Returns a new checkpoint; the input is not modified.
    """
    opt = ckpt.opt
    b1, b2 = opt.beta1, opt.beta2
    step = opt.step + 1
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    tensors, m, v = {}, {}, {}
    for name, theta in ckpt.params.tensors.items():
        g = np.asarray(gradient[name], dtype=np.float64)
        if g.shape != theta.shape:
            raise DimensionError(f"gradient {name} has shape {g.shape}, expected {theta.shape}")
        m[name] = b1 * opt.m[name] + (1.0 - b1) * g
        v[name] = b2 * opt.v[name] + (1.0 - b2) * (g * g)
        mhat = m[name] / c1
        vhat = v[name] / c2
        tensors[name] = theta * (1.0 - lr * opt.weight_decay) - lr * (mhat / (np.sqrt(vhat) + opt.eps))
        if not (np.all(np.isfinite(tensors[name])) and np.all(np.isfinite(v[name]))):
            raise NonFiniteError(f"non-finite value in {name} at step {step}")
    return ModelCheckpoint(
        params=ModelParams(ckpt.params.architecture, tensors),
        opt=replace(opt, step=step, m=m, v=v),
        rng_state=ckpt.rng_state,
        lineage=ckpt.lineage,
        format_version=ckpt.format_version,
    )


def iterations_for(n_samples: int, batch_size: int, epochs: int) -> int:
    """Gradient steps for `epochs` passes with a kept short last batch."""
    if n_samples < 0 or batch_size < 1 or epochs < 0:
        raise ValueError("n_samples, epochs must be >= 0 and batch_size >= 1")
    return epochs * -(-n_samples // batch_size)


class TrainResult(t.NamedTuple):
    checkpoint: ModelCheckpoint
    iterations: int
    losses: list[float]


def train_steps(
    ckpt: ModelCheckpoint,
    pool: SamplePool,
    batch_size: int,
    lr: float,
    steps: int,
    on_step: t.Callable[[int, float], None] | None = None,
) -> TrainResult:
    """
    Continue training for `steps` minibatches. Each epoch draws a fresh permutation
    from the checkpoint's generator; the last minibatch of an epoch may be short.
    The epoch cursor lives in the checkpoint, so a checkpoint saved mid-epoch resumes
    exactly where it stopped.
    """
    if not len(pool):
        raise ValueError("cannot train on an empty pool")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    X, y = pool.arrays()
    n = X.shape[0]
    per_epoch = -(-n // batch_size)
    state = ckpt.rng_state
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = state["bit_generator"]
    epoch_start = gen.bit_generator.state
    order = gen.permutation(n)
    cursor = int(state["cursor"])
    losses = []
    for _ in range(steps):
        if cursor >= per_epoch:
            epoch_start = gen.bit_generator.state
            order = gen.permutation(n)
            cursor = 0
        idx = order[cursor * batch_size : (cursor + 1) * batch_size]
        loss, grad = loss_and_grad(ckpt.params, X[idx], y[idx])
        ckpt = adamw_step(ckpt, grad, lr)
        cursor += 1
        losses.append(loss)
        if on_step is not None:
            on_step(ckpt.opt.step, loss)
    if cursor == per_epoch:
        # epoch boundary: next epoch starts from the current generator state
        epoch_start, cursor = gen.bit_generator.state, 0
    ckpt = replace(ckpt, rng_state={"bit_generator": epoch_start, "cursor": cursor})
    return TrainResult(ckpt, steps, losses)


def train_epochs(
    ckpt: ModelCheckpoint,
    pool: SamplePool,
    batch_size: int,
    lr: float,
    epochs: int,
    seed: int | None = None,
    on_step: t.Callable[[int, float], None] | None = None,
) -> TrainResult:
    """
    `epochs` full passes: epochs * ceil(n / batch_size) iterations. With a seed the
    shuffling generator is reset first, otherwise the checkpoint's own is continued.
    """
    if seed is not None:
        ckpt = replace(ckpt, rng_state=_fresh_rng_state(seed))
    steps = iterations_for(len(pool), batch_size, epochs)
    if steps == 0:
        return TrainResult(ckpt, 0, [])
    return train_steps(ckpt, pool, batch_size, lr, steps, on_step=on_step)


def predict_proba(ckpt: ModelCheckpoint, X: np.ndarray) -> np.ndarray:
    """(n, 12) probabilities, also for a single feature vector."""
    X = np.asarray(X, dtype=np.float64)
    return forward(ckpt.params, X[None, :] if X.ndim == 1 else X)


def predict(ckpt: ModelCheckpoint, X: np.ndarray) -> np.ndarray:
    # argmax returns the first maximum, i.e. ties go to the smaller class id
    return predict_proba(ckpt, X).argmax(axis=1)


def accuracy(ckpt: ModelCheckpoint, pool: SamplePool) -> float:
    if not len(pool):
        return 0.0
    X, y = pool.arrays()
    return float((predict(ckpt, X) == y).sum() / len(y))


def _header(ckpt: ModelCheckpoint) -> dict[str, t.Any]:
    return {
        "architecture": str(ckpt.params.architecture),
        "shapes": [[k, list(a.shape)] for k, a in ckpt.params.tensors.items()],
        "optimizer": {"step": ckpt.opt.step, **ckpt.opt.hyperparameters()},
        "lineage": [list(stage) for stage in ckpt.lineage],
        "rng_state": ckpt.rng_state,
    }


def dumps_checkpoint(ckpt: ModelCheckpoint) -> bytes:
    """
    Layout (all little-endian):
        magic "CURRCKPT" | u16 version | u32 header length | JSON header
        | u64 payload length | float64 payload (params, then m, then v) | u32 crc32
    """
    header = json.dumps(_header(ckpt), sort_keys=True, separators=(",", ":")).encode()
    chunks = []
    for group in (ckpt.params.tensors, ckpt.opt.m, ckpt.opt.v):
        for name in ckpt.params.tensors:
            chunks.append(np.ascontiguousarray(group[name], dtype=_F64).tobytes())
    payload = b"".join(chunks)
    return b"".join(
        [
            MAGIC,
            struct.pack("<HI", ckpt.format_version, len(header)),
            header,
            struct.pack("<Q", len(payload)),
            payload,
            struct.pack("<I", zlib.crc32(payload)),
        ]
    )


def loads_checkpoint(data: bytes) -> ModelCheckpoint:
    if data[:8] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    try:
        version, hlen = struct.unpack_from("<HI", data, 8)
    except struct.error:
        raise FormatError("truncated checkpoint header") from None
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 14
    try:
        header = json.loads(data[pos : pos + hlen])
        pos += hlen
        (plen,) = struct.unpack_from("<Q", data, pos)
    except (ValueError, struct.error):
        raise IntegrityError("corrupt checkpoint header") from None
    pos += 8
    payload = data[pos : pos + plen]
    tail = data[pos + plen :]
    if len(payload) != plen or len(tail) != 4:
        raise IntegrityError(f"payload length mismatch (declared {plen}, file has {len(data) - pos - 4})")
    (crc,) = struct.unpack("<I", tail)
    if zlib.crc32(payload) != crc:
        raise IntegrityError("payload checksum mismatch")
    shapes = [(name, tuple(shape)) for name, shape in header["shapes"]]
    expected = 3 * sum(math.prod(s) for _, s in shapes) * _F64.itemsize
    if expected != plen:
        raise IntegrityError(f"payload holds {plen} bytes, shapes need {expected}")
    flat = np.frombuffer(payload, dtype=_F64)
    groups: list[dict[str, np.ndarray]] = [{}, {}, {}]
    offset = 0
    for group in groups:
        for name, shape in shapes:
            size = math.prod(shape)
            group[name] = flat[offset : offset + size].reshape(shape).astype(np.float64)
            offset += size
    tensors, m, v = groups
    opt_meta = header["optimizer"]
    return ModelCheckpoint(
        params=ModelParams(Architecture.parse(header["architecture"]), tensors),
        opt=OptimizerState(
            step=opt_meta["step"],
            m=m,
            v=v,
            beta1=opt_meta["beta1"],
            beta2=opt_meta["beta2"],
            eps=opt_meta["eps"],
            weight_decay=opt_meta["weight_decay"],
        ),
        rng_state=header["rng_state"],
        lineage=tuple((str(s), int(r)) for s, r in header["lineage"]),
        format_version=version,
    )


def save_checkpoint(ckpt: ModelCheckpoint, path: Path) -> None:
    atomic_write_file(Path(path), dumps_checkpoint(ckpt))


def load_checkpoint(path: Path) -> ModelCheckpoint:
    return loads_checkpoint(Path(path).read_bytes())


class TrainerHandle(t.Protocol):
    def init(self, d: int, seed: int) -> ModelCheckpoint: ...

    def train_epochs(
        self,
        ckpt: ModelCheckpoint,
        pool: SamplePool,
        batch_size: int,
        lr: float,
        epochs: int,
        seed: int | None = None,
        on_step: t.Callable[[int, float], None] | None = None,
    ) -> TrainResult: ...

    def train_steps(
        self,
        ckpt: ModelCheckpoint,
        pool: SamplePool,
        batch_size: int,
        lr: float,
        steps: int,
        on_step: t.Callable[[int, float], None] | None = None,
    ) -> TrainResult: ...

    def predict_proba(self, ckpt: ModelCheckpoint, X: np.ndarray) -> np.ndarray: ...

    def accuracy(self, ckpt: ModelCheckpoint, pool: SamplePool) -> float: ...

    def save(self, ckpt: ModelCheckpoint, path: Path) -> None: ...

    def load(self, path: Path) -> ModelCheckpoint: ...


@dataclass(frozen=True)
class ReferenceTrainer:
    """The built-in TrainerHandle."""

    architecture: Architecture = LINEAR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def init(self, d: int, seed: int) -> ModelCheckpoint:
        return init_model(
            self.architecture,
            d,
            seed,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
        )

    train_epochs = staticmethod(train_epochs)
    train_steps = staticmethod(train_steps)
    predict_proba = staticmethod(predict_proba)
    accuracy = staticmethod(accuracy)
    save = staticmethod(save_checkpoint)
    load = staticmethod(load_checkpoint)
