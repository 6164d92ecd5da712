"""Layer graphs: declarative specs, shape inference, and the executable network."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .layers import ShapeError

KINDS = (
    "dense", "conv2d", "maxpool", "batchnorm", "lstm", "relu", "softmax",
    "flatten", "add", "concat", "dropout", "sequence",
)
INPUT = -1


@dataclass(frozen=True)
class LayerSpec:
    """One node. ``inputs`` lists earlier node indices (``-1`` is the network input);
    ``None`` means the previous node."""

    kind: str
    params: dict = field(default_factory=dict)
    inputs: tuple[int, ...] | None = None

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "params": dict(self.params)}
        if self.inputs is not None:
            d["inputs"] = list(self.inputs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        params = {k: tuple(v) if isinstance(v, list) else v for k, v in d.get("params", {}).items()}
        inputs = tuple(d["inputs"]) if "inputs" in d else None
        return cls(d["kind"], params, inputs)


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    name: str = ""

    def sources(self, i: int) -> tuple[int, ...]:
        spec = self.layers[i]
        return (i - 1,) if spec.inputs is None else spec.inputs

    def shapes(self) -> list[tuple[int, ...]]:
        return infer_shapes(self)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes()[-1]

    def to_dict(self) -> dict:
        return {"name": self.name, "input_shape": list(self.input_shape), "layers": [s.to_dict() for s in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(tuple(d["input_shape"]), tuple(LayerSpec.from_dict(x) for x in d["layers"]), d.get("name", ""))


def _layer_shape(i: int, spec: LayerSpec, ins: list[tuple[int, ...]]) -> tuple[int, ...]:
    k, p = spec.kind, spec.params
    x = ins[0]
    if k == "dense":
        if len(x) != 1:
            raise ShapeError(f"layer {i} (dense) needs a flat input, got {x}")
        return (p["units"],)
    if k == "conv2d":
        kh, kw = p["kernel"]
        if len(x) != 3 or x[1] < kh or kw < 1:
            raise ShapeError(f"layer {i} (conv2d {kh}x{kw}) cannot take input {x}")
        return (p["filters"], x[1] - kh + 1, x[2])
    if k == "maxpool":
        if len(x) != 3 or x[2] // p["pool"] == 0:
            raise ShapeError(f"layer {i} (maxpool {p['pool']}) cannot take input {x}")
        return (x[0], x[1], x[2] // p["pool"])
    if k == "lstm":
        if len(x) != 2:
            raise ShapeError(f"layer {i} (lstm) needs a (T, F) sequence, got {x}")
        return (x[0], p["units"]) if p.get("return_sequences", False) else (p["units"],)
    if k == "sequence":
        if len(x) != 3:
            raise ShapeError(f"layer {i} (sequence) needs (C, H, W), got {x}")
        return (x[2], x[0] * x[1])
    if k == "flatten":
        return (int(np.prod(x)),)
    if k == "add":
        if len(ins) < 2 or any(s != x for s in ins):
            raise ShapeError(f"layer {i} (add) inputs disagree: {ins}")
        return x
    if k == "concat":
        if len(ins) < 2 or any(len(s) != 3 or s[1:] != x[1:] for s in ins):
            raise ShapeError(f"layer {i} (concat) inputs disagree: {ins}")
        return (sum(s[0] for s in ins),) + x[1:]
    if k in ("relu", "softmax", "dropout", "batchnorm"):
        return x
    raise ShapeError(f"layer {i}: unknown kind {k!r}")


def infer_shapes(spec: NetworkSpec) -> list[tuple[int, ...]]:
    """Per-node output shapes (batch axis excluded); raises ShapeError naming the layer."""
    shapes: list[tuple[int, ...]] = []
    for i, layer in enumerate(spec.layers):
        if layer.kind not in KINDS:
            raise ShapeError(f"layer {i}: unknown kind {layer.kind!r}")
        srcs = spec.sources(i)
        if any(not (INPUT <= s < i) for s in srcs):
            raise ShapeError(f"layer {i} ({layer.kind}) references a later or invalid layer: {srcs}")
        ins = [tuple(spec.input_shape) if s == INPUT else shapes[s] for s in srcs]
        shapes.append(_layer_shape(i, layer, ins))
    return shapes


def _build_layer(spec: LayerSpec, in_shape, rng, dtype):
    k, p = spec.kind, spec.params
    if k == "dense":
        return L.Dense(in_shape[0], p["units"], rng, dtype)
    if k == "conv2d":
        return L.Conv2D(in_shape[0], p["filters"], tuple(p["kernel"]), rng, dtype, p.get("bias", True))
    if k == "maxpool":
        return L.MaxPool(p["pool"])
    if k == "batchnorm":
        return L.BatchNorm(in_shape[0], p.get("momentum", 0.99), p.get("eps", 1e-5), dtype)
    if k == "lstm":
        return L.LSTM(in_shape[-1], p["units"], p.get("return_sequences", False), rng, dtype)
    if k == "dropout":
        return L.Dropout(p.get("rate", 0.5))
    return {
        "relu": L.ReLU, "softmax": L.Softmax, "flatten": L.Flatten,
        "add": L.Add, "concat": L.Concat, "sequence": L.Sequence,
    }[k]()


def cross_entropy(probs, labels) -> float:
    n = probs.shape[0]
    return float(-np.mean(np.log(probs[np.arange(n), labels] + 1e-30)))


class Network:
    """Executable layer graph. With ``check_finite`` set, every forward activation is
    checked and the first non-finite one raises FloatingPointError naming its layer."""

    def __init__(self, spec: NetworkSpec, seed: int = 0, dtype=np.float32, check_finite: bool = False):
        self.spec = spec
        self.check_finite = check_finite
        self.dtype = np.dtype(dtype)
        shapes = infer_shapes(spec)
        rng = np.random.default_rng(seed)
        self.layers = []
        for i, ls in enumerate(spec.layers):
            src = spec.sources(i)[0]
            in_shape = tuple(spec.input_shape) if src == INPUT else shapes[src]
            self.layers.append(_build_layer(ls, in_shape, rng, self.dtype))
        self.shapes = shapes

    # ------------------------------------------------------------ parameters

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{i}.{layer.kind}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {f"{i}.{layer.kind}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.grads.items()}

    def named_state(self) -> dict[str, np.ndarray]:
        return {f"{i}.{layer.kind}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.state.items()}

    def set_param(self, name: str, value: np.ndarray) -> None:
        i, _, key = name.split(".", 2)
        self.layers[int(i)].params[key] = value

    def load_arrays(self, params: dict[str, np.ndarray], state: dict[str, np.ndarray] | None = None) -> None:
        for name, value in params.items():
            i, _, key = name.split(".", 2)
            cur = self.layers[int(i)].params[key]
            if cur.shape != value.shape:
                raise ShapeError(f"parameter {name}: expected {cur.shape}, got {value.shape}")
            self.layers[int(i)].params[key] = np.array(value, dtype=cur.dtype)
        for name, value in (state or {}).items():
            i, _, key = name.split(".", 2)
            self.layers[int(i)].state[key] = np.array(value)

    def snapshot(self) -> tuple[dict, dict]:
        return (
            {k: v.copy() for k, v in self.named_params().items()},
            {k: v.copy() for k, v in self.named_state().items()},
        )

    def n_params(self) -> int:
        return sum(v.size for v in self.named_params().values())

    def astype(self, dtype) -> "Network":
        self.dtype = np.dtype(dtype)
        for layer in self.layers:
            layer.astype(self.dtype)
        return self

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    # ------------------------------------------------------------ execution

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != tuple(self.spec.input_shape):
            raise ShapeError(f"network input: expected (N, {', '.join(map(str, self.spec.input_shape))}), got {x.shape}")
        acts: list[np.ndarray] = []
        for i, layer in enumerate(self.layers):
            ins = [x if s == INPUT else acts[s] for s in self.spec.sources(i)]
            try:
                acts.append(layer.forward(*ins, training=training, rng=rng))
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from exc
            if self.check_finite and not np.all(np.isfinite(acts[-1])):
                raise FloatingPointError(f"layer {i} ({layer.kind}) produced non-finite values")
        self.activations = acts
        return acts[-1]

    def backward(self, dout, start: int | None = None) -> np.ndarray:
        """Backpropagate ``dout`` from node ``start`` (default: last); returns d(input)."""
        n = len(self.layers)
        start = n - 1 if start is None else start
        pending: list[np.ndarray | None] = [None] * n
        pending[start] = dout
        dx = None
        for i in range(start, -1, -1):
            if pending[i] is None:
                continue
            grads_in = self.layers[i].backward(pending[i])
            for s, g in zip(self.spec.sources(i), grads_in):
                if s == INPUT:
                    dx = g if dx is None else dx + g
                else:
                    pending[s] = g if pending[s] is None else pending[s] + g
        return dx

    def loss_and_grad(self, x, labels, training: bool = True, rng=None, reduction: str = "mean") -> float:
        """Categorical cross-entropy; gradients accumulate into each layer's ``grads``.

        With a final softmax the gradient enters at the logits as ``probs - onehot``.
        """
        labels = np.asarray(labels, dtype=np.int64)
        probs = self.forward(x, training=training, rng=rng)
        n = probs.shape[0]
        scale = 1.0 / n if reduction == "mean" else 1.0
        if self.layers[-1].kind == "softmax":
            logits = self.activations[-2] if len(self.layers) > 1 else np.asarray(x, self.dtype)
            z = logits - logits.max(axis=-1, keepdims=True)
            logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
            loss = -logp[np.arange(n), labels].sum() * scale
            d = probs.copy()
            d[np.arange(n), labels] -= 1.0
            d *= self.dtype.type(scale)
            if len(self.layers) > 1:
                self.backward(d, start=len(self.layers) - 2)
        else:
            loss = cross_entropy(probs, labels) * (1.0 if reduction == "mean" else n)
            d = np.zeros_like(probs)
            d[np.arange(n), labels] = -1.0 / (probs[np.arange(n), labels] + 1e-30)
            self.backward(d * self.dtype.type(scale))
        return float(loss)

    def predict_proba(self, x, batch_size: int = 1024) -> np.ndarray:
        x = np.asarray(x)
        out = [self.forward(x[s : s + batch_size], training=False) for s in range(0, len(x), batch_size)]
        if not out:
            return np.zeros((0,) + self.shapes[-1], self.dtype)
        return np.concatenate(out, axis=0)

    def predict(self, x, batch_size: int = 1024) -> np.ndarray:
        return self.predict_proba(x, batch_size).argmax(axis=-1)
