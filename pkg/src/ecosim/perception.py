"""Neural forward kernels and the calibrated stochastic signal oracle.

The LSTM and attention kernels are forward-pass only; no training happens
anywhere in the package.  The oracle produces a directional probability
with a configurable hit rate against the realized next-bar move and is the
stand-in for a trained model inside the simulator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from ecosim._rng import RngStream
from ecosim.market import FeatureWindow


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class LstmWeights:
    """Per-gate weights over the concatenated [h_prev, x] vector.

    Each gate matrix has shape (hidden, hidden + n_features); biases have
    length hidden.  Gate order: forget, input, output, candidate.
    """

    w_forget: np.ndarray
    w_input: np.ndarray
    w_output: np.ndarray
    w_candidate: np.ndarray
    b_forget: np.ndarray
    b_input: np.ndarray
    b_output: np.ndarray
    b_candidate: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.w_forget.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_forget.shape[1] - self.w_forget.shape[0]

    def validate(self) -> None:
        h = self.hidden_size
        cols = self.w_forget.shape[1]
        for name in ("forget", "input", "output", "candidate"):
            w = getattr(self, f"w_{name}")
            b = getattr(self, f"b_{name}")
            if w.shape != (h, cols):
                raise ValueError(f"gate {name}: weight shape {w.shape} != ({h}, {cols})")
            if b.shape != (h,):
                raise ValueError(f"gate {name}: bias shape {b.shape} != ({h},)")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"gate {name}: non-finite entries")

    @classmethod
    def zeros(cls, hidden: int, n_features: int) -> "LstmWeights":
        w = lambda: np.zeros((hidden, hidden + n_features))
        b = lambda: np.zeros(hidden)
        return cls(w(), w(), w(), w(), b(), b(), b(), b())

    @classmethod
    def random(cls, hidden: int, n_features: int, rng: np.random.Generator) -> "LstmWeights":
        scale = 1.0 / math.sqrt(hidden + n_features)
        w = lambda: rng.normal(0.0, scale, size=(hidden, hidden + n_features))
        b = lambda: np.zeros(hidden)
        return cls(w(), w(), w(), w(), b(), b(), b(), b())


@dataclass
class CellState:
    """LSTM hidden/cell vectors; h is tanh-bounded to (-1, 1) after a step."""

    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden: int) -> "CellState":
        return cls(np.zeros(hidden), np.zeros(hidden))


@dataclass(frozen=True)
class Signal:
    """Directional probability emitted by a perception backend."""

    p_up: float
    source: str

    def __post_init__(self):
        if not 0.0 <= self.p_up <= 1.0:
            raise ValueError(f"p_up must be in [0, 1], got {self.p_up}")


def lstm_cell_step(weights: LstmWeights, state: CellState, x: np.ndarray) -> CellState:
    """One LSTM cell update.

    Gates use the logistic function over W @ [h_prev, x] + b; the new cell
    is f*c + i*g with tanh candidate g, and h is o * tanh(c_new).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (weights.input_size,):
        raise ValueError(f"input dimension {x.shape} != ({weights.input_size},)")
    if state.h.shape != (weights.hidden_size,):
        raise ValueError(f"hidden dimension {state.h.shape} != ({weights.hidden_size},)")
    hx = np.concatenate([state.h, x])
    f = sigmoid(weights.w_forget @ hx + weights.b_forget)
    i = sigmoid(weights.w_input @ hx + weights.b_input)
    o = sigmoid(weights.w_output @ hx + weights.b_output)
    g = np.tanh(weights.w_candidate @ hx + weights.b_candidate)
    c_new = f * state.c + i * g
    h_new = o * np.tanh(c_new)
    return CellState(h=h_new, c=c_new)


def attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Scaled dot-product attention: softmax(Q K^T / sqrt(d_k)) V.

    Softmax is row-wise, so every output row is a convex combination of
    the rows of V.
    """
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise ValueError("Q, K, V must be 2-D matrices")
    if Q.shape[1] != K.shape[1]:
        raise ValueError(f"query dim {Q.shape[1]} != key dim {K.shape[1]}")
    if K.shape[0] != V.shape[0]:
        raise ValueError(f"key count {K.shape[0]} != value count {V.shape[0]}")
    d_k = Q.shape[1]
    logits = (Q @ K.T) / math.sqrt(d_k)
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights @ V


def oracle_signal(realized_up: bool, accuracy: float, strength: float,
                  rng_stream: RngStream) -> Signal:
    """Directional probability calibrated against the realized next move.

    With probability `accuracy` the signal sits `strength` above/below 0.5
    on the realized side, otherwise on the wrong side.  This peeks one bar
    ahead by construction and is only meaningful inside the simulator,
    where the harness knows the realized direction.
    """
    if not 0.0 <= accuracy <= 1.0:
        raise ValueError(f"accuracy must be in [0, 1], got {accuracy}")
    if not 0.0 <= strength <= 0.5:
        raise ValueError(f"strength must be in [0, 0.5], got {strength}")
    correct = rng_stream.uniform() < accuracy
    up = realized_up if correct else not realized_up
    return Signal(p_up=0.5 + strength if up else 0.5 - strength, source="oracle")


@dataclass
class ForwardWeights:
    """Untrained perception weights: backbone stack plus scalar readout."""

    backbone: str          # "lstm" or "attention"
    lstm_layers: list[LstmWeights] | None
    attn_wq: np.ndarray | None
    attn_wk: np.ndarray | None
    attn_wv: np.ndarray | None
    readout_w: np.ndarray
    readout_b: float
    n_heads: int = 1

    @classmethod
    def random(cls, backbone: str, n_features: int, hidden: int,
               rng: np.random.Generator, n_layers: int = 2,
               n_heads: int = 1) -> "ForwardWeights":
        if backbone == "lstm":
            layers = [LstmWeights.random(hidden, n_features, rng)]
            for _ in range(n_layers - 1):
                layers.append(LstmWeights.random(hidden, hidden, rng))
            return cls("lstm", layers, None, None, None,
                       rng.normal(0.0, 1.0 / math.sqrt(hidden), size=hidden), 0.0)
        if backbone == "attention":
            if hidden % n_heads != 0:
                raise ValueError(f"hidden size {hidden} not divisible by {n_heads} heads")
            scale = 1.0 / math.sqrt(n_features)
            proj = lambda: rng.normal(0.0, scale, size=(n_features, hidden))
            return cls("attention", None, proj(), proj(), proj(),
                       rng.normal(0.0, 1.0 / math.sqrt(hidden), size=hidden), 0.0,
                       n_heads=n_heads)
        raise ValueError(f"unknown backbone {backbone!r}")

    @classmethod
    def zeros(cls, backbone: str, n_features: int, hidden: int, n_layers: int = 2,
              n_heads: int = 1) -> "ForwardWeights":
        if backbone == "lstm":
            layers = [LstmWeights.zeros(hidden, n_features)]
            layers += [LstmWeights.zeros(hidden, hidden) for _ in range(n_layers - 1)]
            return cls("lstm", layers, None, None, None, np.zeros(hidden), 0.0)
        if backbone == "attention":
            z = np.zeros((n_features, hidden))
            return cls("attention", None, z.copy(), z.copy(), z.copy(),
                       np.zeros(hidden), 0.0, n_heads=n_heads)
        raise ValueError(f"unknown backbone {backbone!r}")


def untrained_forward(weights: ForwardWeights, window: FeatureWindow) -> Signal:
    """Push a feature window through the backbone to a directional probability.

    LSTM: layers applied as a stack, layer k+1 consuming layer k's hidden
    sequence; the final hidden state feeds the readout.  Attention: one
    self-attention block over projected window rows (block-split across
    n_heads when configured above the default single head); the last
    output row feeds the readout.  All-zero weights give p_up = 0.5
    exactly.
    """
    x_seq = window.values
    if weights.backbone == "lstm":
        seq = x_seq
        h = None
        for layer in weights.lstm_layers:
            layer.validate()
            state = CellState.zeros(layer.hidden_size)
            outputs = []
            for row in seq:
                state = lstm_cell_step(layer, state, row)
                outputs.append(state.h)
            seq = np.asarray(outputs)
            h = state.h
        score = float(weights.readout_w @ h + weights.readout_b)
    elif weights.backbone == "attention":
        q = x_seq @ weights.attn_wq
        k = x_seq @ weights.attn_wk
        v = x_seq @ weights.attn_wv
        heads = max(1, weights.n_heads)
        if q.shape[1] % heads != 0:
            raise ValueError(f"projection width {q.shape[1]} not divisible by {heads} heads")
        width = q.shape[1] // heads
        out = np.concatenate([
            attention(q[:, i * width:(i + 1) * width],
                      k[:, i * width:(i + 1) * width],
                      v[:, i * width:(i + 1) * width])
            for i in range(heads)
        ], axis=1)
        score = float(weights.readout_w @ out[-1] + weights.readout_b)
    else:
        raise ValueError(f"unknown backbone {weights.backbone!r}")
    return Signal(p_up=float(sigmoid(score)), source=weights.backbone)


def save_weights(weights: ForwardWeights, path: str) -> None:
    """Serialize forward weights to JSON (nested arrays per gate)."""
    doc: dict = {
        "backbone": weights.backbone,
        "n_heads": weights.n_heads,
        "readout": {"w": weights.readout_w.tolist(), "b": weights.readout_b},
    }
    if weights.backbone == "lstm":
        doc["layers"] = [
            {
                "w_forget": l.w_forget.tolist(), "b_forget": l.b_forget.tolist(),
                "w_input": l.w_input.tolist(), "b_input": l.b_input.tolist(),
                "w_output": l.w_output.tolist(), "b_output": l.b_output.tolist(),
                "w_candidate": l.w_candidate.tolist(), "b_candidate": l.b_candidate.tolist(),
            }
            for l in weights.lstm_layers
        ]
    else:
        doc["attention"] = {
            "wq": weights.attn_wq.tolist(),
            "wk": weights.attn_wk.tolist(),
            "wv": weights.attn_wv.tolist(),
        }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_weights(path: str) -> ForwardWeights:
    with open(path) as fh:
        doc = json.load(fh)
    readout_w = np.asarray(doc["readout"]["w"], dtype=np.float64)
    readout_b = float(doc["readout"]["b"])
    if doc["backbone"] == "lstm":
        layers = [
            LstmWeights(
                w_forget=np.asarray(l["w_forget"]), b_forget=np.asarray(l["b_forget"]),
                w_input=np.asarray(l["w_input"]), b_input=np.asarray(l["b_input"]),
                w_output=np.asarray(l["w_output"]), b_output=np.asarray(l["b_output"]),
                w_candidate=np.asarray(l["w_candidate"]), b_candidate=np.asarray(l["b_candidate"]),
            )
            for l in doc["layers"]
        ]
        return ForwardWeights("lstm", layers, None, None, None, readout_w, readout_b)
    att = doc["attention"]
    return ForwardWeights(
        "attention", None,
        np.asarray(att["wq"]), np.asarray(att["wk"]), np.asarray(att["wv"]),
        readout_w, readout_b, n_heads=int(doc.get("n_heads", 1)),
    )
