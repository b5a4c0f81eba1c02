"""Feature extractor + classifier head, parameter init, and checkpoints.

The network is deliberately small and fixed in shape: a two-layer extractor
x -> leaky_relu(x W1 + b1) W2 + b2 followed by a softmax classifier head.
Hidden and feature widths are configurable; defaults are 1024 and 512.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Value
from .errors import ConfigError, ParseError

CHECKPOINT_MAGIC = b"BJDA"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("w1", "b1", "w2", "b2", "wc", "bc")
DEFAULT_HIDDEN = 1024
DEFAULT_FEAT = 512


@dataclass(frozen=True)
class ModelDims:
    input_dim: int
    hidden: int = DEFAULT_HIDDEN
    feat: int = DEFAULT_FEAT
    classes: int = 2

    def __post_init__(self):
        for name in ("input_dim", "hidden", "feat", "classes"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"model dims: {name} must be a positive int, got {v!r}")

    def param_shapes(self) -> dict[str, tuple[int, int]]:
        return {
            "w1": (self.input_dim, self.hidden), "b1": (1, self.hidden),
            "w2": (self.hidden, self.feat), "b2": (1, self.feat),
            "wc": (self.feat, self.classes), "bc": (1, self.classes),
        }


@dataclass
class ModelParams:
    """Parameter tensors plus per-parameter momentum buffers."""
    dims: ModelDims
    tensors: dict[str, np.ndarray]
    velocities: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.dims.param_shapes()
        for name in PARAM_NAMES:
            if self.tensors[name].shape != shapes[name]:
                raise ConfigError(f"param {name}: expected shape {shapes[name]}, "
                                  f"got {self.tensors[name].shape}")
        if not self.velocities:
            self.velocities = {n: np.zeros(shapes[n]) for n in PARAM_NAMES}

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims,
                           {n: self.tensors[n].copy() for n in PARAM_NAMES},
                           {n: self.velocities[n].copy() for n in PARAM_NAMES})


def init_xavier(dims: ModelDims, seed: int) -> ModelParams:
    """Xavier-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.

    Weight matrices are drawn in the fixed order w1, w2, wc from a generator
    seeded with `seed`, so the same seed always gives the same parameters.
    """
    rng = np.random.default_rng(seed)
    shapes = dims.param_shapes()

    def draw(shape):
        bound = np.sqrt(6.0 / (shape[0] + shape[1]))
        return rng.uniform(-bound, bound, size=shape)

    tensors = {}
    for w, b in (("w1", "b1"), ("w2", "b2"), ("wc", "bc")):
        tensors[w] = draw(shapes[w])
        tensors[b] = np.zeros(shapes[b])
    return ModelParams(dims, tensors)


def make_leaves(tape: Tape, params: ModelParams) -> dict[str, Value]:
    """Record every parameter tensor on the tape; grads land in leaf.grad."""
    return {name: tape.leaf(params.tensors[name], name) for name in PARAM_NAMES}


def forward_g(leaves: dict[str, Value], x: Value, slope: float = 0.01) -> Value:
    """Feature extractor: leaky_relu(x W1 + b1) W2 + b2 (linear output)."""
    h = ad.leaky_relu(ad.add_rowvec(x @ leaves["w1"], leaves["b1"]), slope)
    return ad.add_rowvec(h @ leaves["w2"], leaves["b2"])


def forward_f(leaves: dict[str, Value], g: Value) -> Value:
    """Classifier head: softmax over g Wc + bc; rows sum to 1."""
    return ad.softmax_rows(ad.add_rowvec(g @ leaves["wc"], leaves["bc"]))


def predict_probs(params: ModelParams, x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    """Inference-only forward pass on a throwaway tape."""
    tape = Tape()
    leaves = make_leaves(tape, params)
    probs = forward_f(leaves, forward_g(leaves, tape.leaf(x, "x"), slope))
    return probs.value


def hard_pseudo_labels(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise argmax labels (ties -> lowest index) and their probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.argmax(probs, axis=1)
    conf = probs[np.arange(probs.shape[0]), labels]
    return labels.astype(np.int64), conf


# ---------------------------------------------------------------------------
# checkpoint file: magic, u32 version, u32 dims (input, hidden, feat, classes),
# then w1, b1, w2, b2, wc, bc as row-major little-endian float64


def save_checkpoint(params: ModelParams, path) -> None:
    d = params.dims
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<5I", CHECKPOINT_VERSION,
                             d.input_dim, d.hidden, d.feat, d.classes))
        for name in PARAM_NAMES:
            fh.write(np.ascontiguousarray(params.tensors[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    """Read a checkpoint; momentum buffers come back zeroed."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 24 or raw[:4] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: not a model checkpoint (bad magic)")
    version, input_dim, hidden, feat, classes = struct.unpack_from("<5I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    try:
        dims = ModelDims(input_dim, hidden, feat, classes)
    except ConfigError as err:
        raise ParseError(f"{path}: invalid dimensions in header: {err}") from err
    shapes = dims.param_shapes()
    expected = 24 + sum(r * c for r, c in shapes.values()) * 8
    if len(raw) != expected:
        raise ParseError(f"{path}: expected {expected} bytes for dims "
                         f"{(input_dim, hidden, feat, classes)}, got {len(raw)}")
    offset = 24
    tensors = {}
    for name in PARAM_NAMES:
        r, c = shapes[name]
        n = r * c * 8
        tensors[name] = np.frombuffer(raw[offset:offset + n], dtype="<f8").reshape(r, c).copy()
        offset += n
    return ModelParams(dims, tensors)
