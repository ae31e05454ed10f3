"""Quantized toy CNN: layer semantics, the prior/later split and plaintext
inference that records every intermediate for the provers."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np

MODEL_VERSION = 1
DATA_VERSION = 1
KINDS = ("conv", "square_act", "relu", "avgpool", "fc", "argmax")


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class QuantParams:
    bits: int = 8
    zero_point: int = 0
    scale: Fraction = Fraction(1, 255)  # documentation only

    def clip(self, x):
        return np.clip(np.asarray(x, dtype=np.int64), 0, (1 << self.bits) - 1)


@dataclass
class LayerSpec:
    kind: str
    params: dict = field(default_factory=dict)
    weights: Any = None  # int64 ndarray for conv (M,m,m) and fc (out,in)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError("unknown layer kind %r" % self.kind)
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.int64)


@dataclass
class SplitModel:
    prior: list
    later: list
    input_dim: int
    quant: QuantParams = field(default_factory=QuantParams)

    @property
    def split_index(self) -> int:
        return len(self.prior)

    @property
    def layers(self) -> list:
        return self.prior + self.later


@dataclass
class LayerRecord:
    kind: str
    input: np.ndarray  # (B, ...)
    output: np.ndarray
    rem: np.ndarray | None = None


@dataclass
class InferenceTrace:
    records: list
    labels: np.ndarray  # l_test, shape (B,)


# -- layer semantics ---------------------------------------------------------


def conv2d(x, w) -> np.ndarray:
    """Valid, stride-1 cross-correlation of one n x n input with one m x m filter."""
    x = np.asarray(x, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    n, m = x.shape[0], w.shape[0]
    if m > n:
        raise ShapeError("filter larger than input")
    o = n - m + 1
    y = np.zeros((o, o), dtype=np.int64)
    for lr in range(m):
        for lc in range(m):
            y += w[lr, lc] * x[lr:lr + o, lc:lc + o]
    return y


def square_act(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    return x * x + x


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.int64), 0)


def avgpool_rem(x, w: int):
    """Floor mean over w x w windows of the last two axes, with remainders:
    y * w^2 + rem == window sum, 0 <= rem < w^2."""
    x = np.asarray(x, dtype=np.int64)
    r, c = x.shape[-2:]
    if r % w or c % w:
        raise ShapeError("pool window does not divide the input")
    s = x.reshape(x.shape[:-2] + (r // w, w, c // w, w)).sum(axis=(-3, -1))
    y = np.floor_divide(s, w * w)
    return y, s - y * w * w


def avgpool(x, w: int) -> np.ndarray:
    return avgpool_rem(x, w)[0]


def fc(x, weights) -> np.ndarray:
    return np.asarray(weights, dtype=np.int64) @ np.asarray(x, dtype=np.int64)


def argmax_label(v) -> int:
    # np.argmax returns the first maximum: ties go to the lowest index
    return int(np.argmax(np.asarray(v)))


# -- forward pass ------------------------------------------------------------


def apply_layer(spec: LayerSpec, x: np.ndarray):
    """Apply one layer to a batch; returns (output, rem-or-None)."""
    k = spec.kind
    if k == "conv":
        return np.stack([np.stack([conv2d(xi, f) for f in spec.weights]) for xi in x]), None
    if k == "square_act":
        return square_act(x), None
    if k == "relu":
        return relu(x), None
    if k == "avgpool":
        shape = spec.params.get("shape")
        xin = x.reshape((x.shape[0],) + tuple(shape)) if shape else x
        y, rem = avgpool_rem(xin, spec.params["w"])
        return y, rem
    if k == "fc":
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != spec.weights.shape[1]:
            raise ShapeError("fc input width %d != %d" % (flat.shape[1], spec.weights.shape[1]))
        return flat @ spec.weights.T, None
    if k == "argmax":
        return np.array([argmax_label(v) for v in x.reshape(x.shape[0], -1)], dtype=np.int64), None
    raise ValueError(k)


def run_layers(layers, x: np.ndarray) -> list:
    recs = []
    for spec in layers:
        y, rem = apply_layer(spec, x)
        recs.append(LayerRecord(spec.kind, x, y, rem))
        x = y
    return recs


def run_split(model: SplitModel, batch, labels):
    """Plaintext inference through prior then later; returns the trace and
    how many predicted labels match the given truth labels."""
    x = np.asarray(batch, dtype=np.int64)
    if x.ndim != 3 or x.shape[0] == 0:
        raise ShapeError("batch must be a non-empty stack of square inputs")
    if x.shape[1:] != (model.input_dim, model.input_dim):
        raise ShapeError("input shape %s does not match model" % (x.shape[1:],))
    truth = np.asarray(labels, dtype=np.int64)
    if truth.shape != (x.shape[0],):
        raise ShapeError("one label per input required")
    recs = run_layers(model.prior, x)
    mid = recs[-1].output.reshape(x.shape[0], -1)
    recs += run_layers(model.later, mid)
    l_test = recs[-1].output
    return InferenceTrace(recs, l_test), int(np.sum(l_test == truth))


def check_trace(model: SplitModel, trace: InferenceTrace) -> bool:
    for spec, rec in zip(model.layers, trace.records):
        inp = rec.input
        if spec.kind == "fc":
            inp = inp.reshape(inp.shape[0], -1)
        y, rem = apply_layer(spec, inp)
        if not np.array_equal(y, rec.output):
            return False
        if rem is not None and not np.array_equal(rem, rec.rem):
            return False
    return True


# -- shipped toy model -------------------------------------------------------


def toy_model(seed: int = 7, n: int = 8, filters: int = 2, m: int = 3) -> SplitModel:
    """conv(M=2, m=3) -> square_act -> avgpool 2x2 | fc -> relu -> avgpool ->
    fc -> fc -> argmax on 8x8 inputs.  Weights are small signed integers so
    every intermediate fits comfortably in int64."""
    rng = np.random.default_rng(seed)
    o = n - m + 1
    s = o // 2
    feat = filters * s * s
    prior = [
        LayerSpec("conv", {"M": filters, "m": m}, rng.integers(-2, 3, size=(filters, m, m))),
        LayerSpec("square_act"),
        LayerSpec("avgpool", {"w": 2}),
    ]
    later = [
        LayerSpec("fc", {}, rng.integers(-2, 3, size=(16, feat))),
        LayerSpec("relu"),
        LayerSpec("avgpool", {"w": 2, "shape": [4, 4]}),
        LayerSpec("fc", {}, rng.integers(-2, 3, size=(4, 4))),
        LayerSpec("fc", {}, rng.integers(-2, 3, size=(3, 4))),
        LayerSpec("argmax"),
    ]
    return SplitModel(prior, later, n)


def toy_batch(seed: int, count: int, n: int = 8, quant: QuantParams = QuantParams()):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 1 << quant.bits, size=(count, n, n))
    y = rng.integers(0, 3, size=count)
    return quant.clip(x), y


def max_abs_intermediate(trace: InferenceTrace) -> int:
    return max(int(np.max(np.abs(r.output))) for r in trace.records)


# -- files -------------------------------------------------------------------


def model_to_json(model: SplitModel) -> str:
    def enc(spec):
        d = {"kind": spec.kind, "params": spec.params}
        if spec.weights is not None:
            d["weights"] = spec.weights.tolist()
        return d

    return json.dumps({
        "version": MODEL_VERSION,
        "input_dim": model.input_dim,
        "quant_bits": model.quant.bits,
        "prior": [enc(s) for s in model.prior],
        "later": [enc(s) for s in model.later],
    }, indent=1)


def model_from_json(text: str) -> SplitModel:
    d = json.loads(text)
    if d.get("version") != MODEL_VERSION:
        raise ValueError("unsupported or missing model version")
    dec = lambda s: LayerSpec(s["kind"], s.get("params", {}), s.get("weights"))
    model = SplitModel([dec(s) for s in d["prior"]], [dec(s) for s in d["later"]],
                       int(d["input_dim"]), QuantParams(bits=int(d.get("quant_bits", 8))))
    validate(model)
    return model


def validate(model: SplitModel) -> None:
    kinds = [s.kind for s in model.prior]
    if "relu" in kinds:
        raise ShapeError("prior part may only use square_act activations")
    if any(s.kind == "argmax" for s in model.layers[:-1]) or model.layers[-1].kind != "argmax":
        raise ShapeError("argmax must be the last layer")
    x = np.zeros((1, model.input_dim, model.input_dim), dtype=np.int64)
    run_split(model, x, [0])


def data_to_json(batch, labels) -> str:
    return json.dumps({"version": DATA_VERSION,
                       "inputs": np.asarray(batch).tolist(),
                       "labels": np.asarray(labels).tolist()})


def data_from_json(text: str):
    d = json.loads(text)
    if d.get("version") != DATA_VERSION:
        raise ValueError("unsupported or missing data version")
    return np.asarray(d["inputs"], dtype=np.int64), np.asarray(d["labels"], dtype=np.int64)
