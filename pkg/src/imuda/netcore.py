"""A small dense feedforward stack with hand-written reverse-mode gradients.

The model is split into an encoder (inputs -> embedding space) and a
classifier (embedding space -> class probabilities).  The classifier's last
layer always produces logits that go through a softmax; the embedding is
exactly the classifier's input.

Weights are stored ``(fan_in, fan_out)`` so a layer computes ``x @ W + b`` on
row-major batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, StateError
from .ndcore import FLOAT, as_matrix

ACTIVATIONS = ("tanh", "relu", "linear", "softmax")

# -log(p) is evaluated on max(p, PROB_FLOOR) so a vanishing true-class
# probability gives a large finite loss rather than inf/NaN.
PROB_FLOOR = 1e-300


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]


@dataclass
class NetworkParams:
    encoder: list[Layer]
    classifier: list[Layer]

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.encoder or not self.classifier:
            raise DimensionError("network needs at least one encoder and one classifier layer")
        layers = self.encoder + self.classifier
        for i, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.fan_out,):
                raise DimensionError(f"layer {i}: weight {layer.weight.shape} / bias {layer.bias.shape} mismatch")
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise ValueError(f"layer {i}: non-finite parameters")
        for i in range(len(layers) - 1):
            if layers[i].fan_out != layers[i + 1].fan_in:
                raise DimensionError(
                    f"layer {i} outputs {layers[i].fan_out} but layer {i + 1} expects {layers[i + 1].fan_in}"
                )
        for i, layer in enumerate(self.encoder):
            if layer.activation == "softmax":
                raise ValueError(f"encoder layer {i}: softmax is reserved for the classifier output")
        if self.classifier[-1].activation != "softmax":
            raise ValueError("final classifier layer must be softmax")
        for layer in self.classifier[:-1]:
            if layer.activation == "softmax":
                raise ValueError("softmax is only allowed on the final classifier layer")

    @property
    def input_dim(self) -> int:
        return self.encoder[0].fan_in

    @property
    def embed_dim(self) -> int:
        return self.encoder[-1].fan_out

    @property
    def n_classes(self) -> int:
        return self.classifier[-1].fan_out

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        """Named parameter arrays in a fixed order."""
        out = []
        for part, layers in (("encoder", self.encoder), ("classifier", self.classifier)):
            for i, layer in enumerate(layers):
                out.append((f"{part}[{i}].weight", layer.weight))
                out.append((f"{part}[{i}].bias", layer.bias))
        return out

    def with_arrays(self, arrays: list[np.ndarray]) -> "NetworkParams":
        """A copy with parameter arrays replaced, in ``arrays()`` order."""
        it = iter(arrays)
        enc = [Layer(next(it).copy(), next(it).copy(), l.activation) for l in self.encoder]
        cls = [Layer(next(it).copy(), next(it).copy(), l.activation) for l in self.classifier]
        return NetworkParams(enc, cls)

    def copy(self) -> "NetworkParams":
        return self.with_arrays([a for _, a in self.arrays()])


def init_network(
    rng: np.random.Generator,
    input_dim: int,
    encoder_sizes: list[int],
    n_classes: int,
    encoder_activations: list[str] | str = "tanh",
    classifier_hidden: list[int] = (),
    classifier_activation: str = "tanh",
) -> NetworkParams:
    """Gaussian init with std 1/sqrt(fan_in) and zero biases.

    ``encoder_sizes`` lists every encoder layer width; the last entry is the
    embedding dimension.
    """
    if isinstance(encoder_activations, str):
        encoder_activations = [encoder_activations] * len(encoder_sizes)
    if len(encoder_activations) != len(encoder_sizes):
        raise ValueError("one activation per encoder layer is required")

    def layer(fan_in, fan_out, act):
        w = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        return Layer(w, np.zeros(fan_out, dtype=FLOAT), act)

    enc, width = [], input_dim
    for size, act in zip(encoder_sizes, encoder_activations):
        enc.append(layer(width, size, act))
        width = size
    cls = []
    for size in classifier_hidden:
        cls.append(layer(width, size, classifier_activation))
        width = size
    cls.append(layer(width, n_classes, "softmax"))
    return NetworkParams(enc, cls)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


def _activate(x: np.ndarray, act: str) -> np.ndarray:
    if act == "tanh":
        return np.tanh(x)
    if act == "relu":
        return np.maximum(x, 0.0)
    if act == "linear":
        return x
    raise ValueError(act)


def _activation_grad(pre: np.ndarray, post: np.ndarray, upstream: np.ndarray, act: str) -> np.ndarray:
    if act == "tanh":
        return upstream * (1.0 - post * post)
    if act == "relu":
        return upstream * (pre > 0.0)
    if act == "linear":
        return upstream
    raise ValueError(act)


@dataclass
class Trace:
    """Activations cached by a forward pass, consumed by ``backward``.

    ``inputs[i]`` is the input to layer ``i`` and ``pre[i]`` / ``post[i]`` its
    pre- and post-activation.  For the classifier, the last ``post`` entry
    holds the softmax probabilities.
    """

    part: str
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)


def _run_layers(layers: list[Layer], x: np.ndarray, trace: Trace | None) -> np.ndarray:
    h = x
    for layer in layers:
        z = h @ layer.weight + layer.bias
        out = softmax(z) if layer.activation == "softmax" else _activate(z, layer.activation)
        if trace is not None:
            trace.inputs.append(h)
            trace.pre.append(z)
            trace.post.append(out)
        h = out
    return h


def forward_encoder(params: NetworkParams, batch, keep: bool = False):
    """Embed a batch ``(n, d) -> (n, F)``.

    With ``keep=True`` returns ``(embeddings, trace)``.
    """
    x = as_matrix(batch, "encoder input")
    if x.shape[1] != params.input_dim:
        raise DimensionError(f"encoder expects {params.input_dim} input features, got {x.shape[1]}")
    trace = Trace("encoder") if keep else None
    z = _run_layers(params.encoder, x, trace)
    return (z, trace) if keep else z


def forward_classifier(params: NetworkParams, embeddings, keep: bool = False):
    """Softmax class probabilities ``(n, F) -> (n, k)``; ``keep`` as in forward_encoder."""
    z = as_matrix(embeddings, "classifier input")
    if z.shape[1] != params.embed_dim:
        raise DimensionError(f"classifier expects {params.embed_dim} embedding features, got {z.shape[1]}")
    trace = Trace("classifier") if keep else None
    p = _run_layers(params.classifier, z, trace)
    return (p, trace) if keep else p


def predict_proba(params: NetworkParams, batch) -> np.ndarray:
    return forward_classifier(params, forward_encoder(params, batch))


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean of ``-log p_true`` over the batch, with ``p_true`` floored at PROB_FLOOR."""
    probs = np.asarray(probs, dtype=FLOAT)
    labels = np.asarray(labels, dtype=FLOAT)
    if probs.shape != labels.shape:
        raise DimensionError(f"probs {probs.shape} vs labels {labels.shape}")
    p_true = probs[np.arange(probs.shape[0]), np.argmax(labels, axis=1)]
    return float(np.mean(-np.log(np.maximum(p_true, PROB_FLOOR))))


def cross_entropy_logit_grad(probs: np.ndarray, labels: np.ndarray, weight: float = 1.0) -> np.ndarray:
    """Gradient of ``weight * cross_entropy`` with respect to the logits.

    Exact for the unclamped loss; the floor only matters for p_true < 1e-300.
    """
    return weight * (probs - labels) / probs.shape[0]


@dataclass
class GradientSet:
    """Per-layer ``(dW, db)`` pairs mirroring a NetworkParams."""

    encoder: list[tuple[np.ndarray, np.ndarray]]
    classifier: list[tuple[np.ndarray, np.ndarray]]

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "GradientSet":
        z = lambda layers: [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in layers]
        return cls(z(params.encoder), z(params.classifier))

    def arrays(self) -> list[np.ndarray]:
        out = []
        for dw, db in self.encoder + self.classifier:
            out.extend((dw, db))
        return out

    def __add__(self, other: "GradientSet") -> "GradientSet":
        add = lambda a, b: [(x[0] + y[0], x[1] + y[1]) for x, y in zip(a, b)]
        return GradientSet(add(self.encoder, other.encoder), add(self.classifier, other.classifier))


def _backprop_layers(layers: list[Layer], trace: Trace, upstream: np.ndarray, output_is_logits: bool):
    grads = [None] * len(layers)
    g = upstream
    for i in reversed(range(len(layers))):
        layer = layers[i]
        if not (output_is_logits and i == len(layers) - 1):
            g = _activation_grad(trace.pre[i], trace.post[i], g, layer.activation)
        grads[i] = (trace.inputs[i].T @ g, np.sum(g, axis=0))
        g = g @ layer.weight.T
    return grads, g


def backward(
    params: NetworkParams,
    encoder_trace: Trace | None = None,
    classifier_trace: Trace | None = None,
    dlogits: np.ndarray | None = None,
    dembed: np.ndarray | None = None,
) -> GradientSet:
    """Reverse-mode gradients for one forward chain.

    ``dlogits`` is the loss gradient at the classifier logits (see
    ``cross_entropy_logit_grad``) and requires ``classifier_trace``.
    ``dembed`` is an extra gradient arriving directly at the embedding, e.g.
    from a distribution-matching loss; it is added to whatever flows back
    through the classifier and pushed through ``encoder_trace`` when given.
    Without an encoder trace the embedding gradient is discarded, which is the
    right thing when the classifier was fed embeddings that do not depend on
    the encoder.
    """
    grads = GradientSet.zeros_like(params)
    if dlogits is None and dembed is None:
        return grads
    g_embed = None
    if dlogits is not None:
        if classifier_trace is None or not classifier_trace.inputs:
            raise StateError("classifier gradient requested without a cached classifier forward pass")
        if dlogits.shape != classifier_trace.post[-1].shape:
            raise DimensionError(f"dlogits {dlogits.shape} vs logits {classifier_trace.post[-1].shape}")
        grads.classifier, g_embed = _backprop_layers(params.classifier, classifier_trace, dlogits, True)
    if dembed is not None:
        g_embed = dembed if g_embed is None else g_embed + dembed
    if encoder_trace is not None:
        if not encoder_trace.inputs:
            raise StateError("encoder trace is empty; run forward_encoder(keep=True) first")
        if g_embed is not None:
            if g_embed.shape != encoder_trace.post[-1].shape:
                raise DimensionError(f"embedding gradient {g_embed.shape} vs embeddings {encoder_trace.post[-1].shape}")
            grads.encoder, _ = _backprop_layers(params.encoder, encoder_trace, g_embed, False)
    elif dembed is not None and classifier_trace is None:
        raise StateError("embedding gradient given without an encoder forward pass")
    return grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None

    @classmethod
    def for_params(cls, params: NetworkParams, **kw) -> "AdamState":
        arrays = [a for _, a in params.arrays()]
        return cls(m=[np.zeros_like(a) for a in arrays], v=[np.zeros_like(a) for a in arrays], **kw)


def adam_step(params: NetworkParams, grads: GradientSet, state: AdamState) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    named = params.arrays()
    g_arrays = grads.arrays()
    if len(g_arrays) != len(named) or state.m is None or len(state.m) != len(named):
        raise DimensionError("gradient set / optimizer state do not match the network")
    for (name, p), g, m in zip(named, g_arrays, state.m):
        if g.shape != p.shape or m.shape != p.shape:
            raise DimensionError(f"{name}: parameter {p.shape}, gradient {g.shape}, moment {m.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient in {name}; update rejected")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for (_, p), g, m, v in zip(named, g_arrays, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(state.lr, b1, b2, state.eps, t, new_m, new_v)
    return params.with_arrays(new_p), new_state
