"""Edge, cloud and adapter networks: feature taps, split inference, and
confidence scores.

A model is a stack of layers ending in a ``num_classes``-wide head; class
probabilities are always a max-subtracted softmax over the final logits. A
*tap* is a 0-based layer index whose post-layer activation may be exported
as a :class:`FeatureMap`, and ``cloud_tail`` resumes a model from such an
activation by running only the layers after the tap.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nncore
from .nncore import (ConfigError, IDENTITY, LayerSpec, Param, RELU, UsageError,
                     apply_layer, as_tensor, dense, residual_block, softmax)

NORMAL_CLASS_MODE = "normal-class"
MAX_CLASS_MODE = "max-class"


@dataclass(frozen=True)
class FeatureMap:
    """Intermediate activation exported at a declared tap."""

    values: np.ndarray
    producer: str
    tap: int


class ModelSpec:
    """Named layer stack with a softmax head, declared feature taps, and the
    index of the 'nothing of interest' class."""

    __slots__ = ("name", "layers", "num_classes", "normal_class", "taps")

    def __init__(self, name: str, layers: Sequence[LayerSpec], num_classes: int,
                 normal_class: int, taps: Sequence[int]) -> None:
        layers = list(layers)
        if not layers:
            raise ConfigError("model needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise ConfigError(f"layer {i} expects input dim {layers[i].in_dim}, "
                                  f"got {layers[i - 1].out_dim}")
        if layers[-1].out_dim != num_classes:
            raise ConfigError(f"last layer out_dim {layers[-1].out_dim} != num_classes {num_classes}")
        if not 0 <= normal_class < num_classes:
            raise ConfigError(f"normal_class {normal_class} out of range")
        tap_set = frozenset(int(t) for t in taps)
        if any(t < 0 or t >= len(layers) for t in tap_set):
            raise ConfigError("tap index out of range")
        self.name = name
        self.layers = layers
        self.num_classes = num_classes
        self.normal_class = normal_class
        self.taps = tap_set

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    def tap_dim(self, tap: int) -> int:
        return self.layers[tap].out_dim

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def total_flops(self) -> int:
        return nncore.flops(self.layers)

    def __repr__(self) -> str:
        dims = "->".join(str(d) for d in [self.in_dim] + [l.out_dim for l in self.layers])
        return f"ModelSpec({self.name!r}, {dims}, taps={sorted(self.taps)})"


class AdapterSpec:
    """Projection plus residual-block stack mapping an edge feature tap into
    a cloud feature tap.

    ``blocks`` may be empty, which gives the plain single-dense adapter used
    as the shallow baseline in depth comparisons.
    """

    __slots__ = ("name", "edge_tap", "cloud_tap", "projection", "blocks")

    def __init__(self, name: str, edge_tap: int, cloud_tap: int,
                 projection: LayerSpec, blocks: Sequence[LayerSpec]) -> None:
        if edge_tap < 0 or cloud_tap < 0:
            raise ConfigError("tap indices must be nonnegative")
        if projection.kind != nncore.DENSE:
            raise ConfigError("adapter projection must be a dense layer")
        blocks = list(blocks)
        for i, blk in enumerate(blocks):
            if blk.kind != nncore.RESIDUAL:
                raise ConfigError(f"adapter block {i} must be a residual-block")
            if blk.out_dim != projection.out_dim:
                raise ConfigError(f"adapter block {i} width {blk.out_dim} != projection out {projection.out_dim}")
        self.name = name
        self.edge_tap = edge_tap
        self.cloud_tap = cloud_tap
        self.projection = projection
        self.blocks = blocks

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def layers(self) -> list[LayerSpec]:
        return [self.projection, *self.blocks]

    def params(self) -> list[Param]:
        return [p for layer in self.layers() for p in layer.params()]

    def total_flops(self) -> int:
        return nncore.flops(self.layers())

    def __repr__(self) -> str:
        return (f"AdapterSpec({self.name!r}, edge_tap={self.edge_tap}, "
                f"cloud_tap={self.cloud_tap}, blocks={self.num_blocks})")


def feedforward(name: str, in_dim: int, hidden: Sequence[int], num_classes: int,
                normal_class: int, taps: Sequence[int],
                rng: np.random.Generator | None = None) -> ModelSpec:
    """Relu MLP with an identity head; hidden layer i is named ``{name}.h{i}``."""
    layers = []
    prev = in_dim
    for i, width in enumerate(hidden):
        layers.append(dense(prev, width, RELU, rng=rng, name=f"{name}.h{i}"))
        prev = width
    layers.append(dense(prev, num_classes, IDENTITY, rng=rng, name=f"{name}.head"))
    return ModelSpec(name, layers, num_classes, normal_class, taps)


def make_adapter(name: str, edge_tap: int, cloud_tap: int, edge_dim: int,
                 cloud_dim: int, num_blocks: int,
                 rng: np.random.Generator | None = None,
                 projection_activation: str = RELU) -> AdapterSpec:
    projection = dense(edge_dim, cloud_dim, projection_activation, rng=rng, name=f"{name}.proj")
    blocks = [residual_block(cloud_dim, rng=rng, name=f"{name}.res{i}") for i in range(num_blocks)]
    return AdapterSpec(name, edge_tap, cloud_tap, projection, blocks)


def _as_batch(x) -> tuple[np.ndarray, bool]:
    arr = as_tensor(x)
    if arr.ndim == 1:
        return arr.reshape(1, -1), True
    if arr.ndim == 2:
        return arr, False
    raise UsageError(f"input must be 1-D or 2-D, got shape {arr.shape}")


def infer(model: ModelSpec, x) -> np.ndarray:
    """Class probabilities for a sample or batch."""
    return softmax(nncore.forward(model.layers, x))


def infer_with_tap(model: ModelSpec, x, tap: int) -> tuple[np.ndarray, FeatureMap]:
    """Class probabilities plus the activation after layer ``tap``."""
    if tap not in model.taps:
        raise UsageError(f"tap {tap} not declared for model {model.name!r}")
    h, squeeze = _as_batch(x)
    nncore._check_chain(model.layers, h.shape[1])
    captured = None
    for i, layer in enumerate(model.layers):
        h = apply_layer(layer, h)
        if i == tap:
            captured = h
    if not np.all(np.isfinite(h)):
        raise ArithmeticError("forward produced non-finite values")
    probs = softmax(h)
    if squeeze:
        probs, captured = probs[0], captured[0]
    return probs, FeatureMap(captured, model.name, tap)


def adapt(adapter: AdapterSpec, edge_feature) -> FeatureMap:
    """Map an edge tap feature into the cloud's tap-``n`` feature space."""
    if isinstance(edge_feature, FeatureMap):
        if edge_feature.tap != adapter.edge_tap:
            raise UsageError(f"feature tap {edge_feature.tap} != adapter edge tap {adapter.edge_tap}")
        values = edge_feature.values
    else:
        values = edge_feature
    h, squeeze = _as_batch(values)
    if h.shape[1] != adapter.projection.in_dim:
        raise ConfigError(f"feature dim {h.shape[1]} != adapter input dim {adapter.projection.in_dim}")
    for layer in adapter.layers():
        h = apply_layer(layer, h)
    if not np.all(np.isfinite(h)):
        raise ArithmeticError("adapter produced non-finite values")
    if squeeze:
        h = h[0]
    return FeatureMap(h, adapter.name, adapter.cloud_tap)


def cloud_tail(model: ModelSpec, injected, from_tap: int) -> np.ndarray:
    """Resume the model from an injected tap-``from_tap`` activation.

    Runs only the layers with index > ``from_tap``; injecting the model's
    own tap activation reproduces the full forward pass bit-exactly.
    """
    if not 0 <= from_tap < len(model.layers):
        raise UsageError(f"from_tap {from_tap} out of range for {model.name!r}")
    values = injected.values if isinstance(injected, FeatureMap) else injected
    h, squeeze = _as_batch(values)
    expected = model.layers[from_tap].out_dim
    if h.shape[1] != expected:
        raise ConfigError(f"injected dim {h.shape[1]} != tap {from_tap} dim {expected}")
    for layer in model.layers[from_tap + 1:]:
        h = apply_layer(layer, h)
    probs = softmax(h)
    return probs[0] if squeeze else probs


def confidence(probs, normal_class: int, mode: str = NORMAL_CLASS_MODE):
    """Confidence score used by the routing rules.

    ``normal-class`` returns the probability of the normal class; ``max-class``
    returns the top probability. Accepts a single vector or a batch.
    """
    if mode not in (NORMAL_CLASS_MODE, MAX_CLASS_MODE):
        raise UsageError(f"unknown confidence mode {mode!r}")
    arr = np.asarray(probs, dtype=np.float64)
    sums = arr.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-6):
        raise UsageError("probabilities must sum to 1")
    if mode == NORMAL_CLASS_MODE:
        out = arr[..., normal_class]
    else:
        out = arr.max(axis=-1)
    return float(out) if out.ndim == 0 else out


def clone_model(model: ModelSpec) -> ModelSpec:
    return copy.deepcopy(model)


def clone_adapter(adapter: AdapterSpec) -> AdapterSpec:
    return copy.deepcopy(adapter)


# ---------------------------------------------------------------------------
# Structured-text (JSON) model definitions: architecture only, parameters
# travel through nncore checkpoints.

def model_to_config(model: ModelSpec) -> dict:
    return {
        "name": model.name,
        "num_classes": model.num_classes,
        "normal_class": model.normal_class,
        "taps": sorted(model.taps),
        "layers": [
            {"kind": l.kind, "in_dim": l.in_dim, "out_dim": l.out_dim, "activation": l.activation}
            for l in model.layers
        ],
    }


def model_from_config(cfg: dict, rng: np.random.Generator | None = None) -> ModelSpec:
    name = cfg["name"]
    layers = []
    for i, lc in enumerate(cfg["layers"]):
        if lc["kind"] == nncore.DENSE:
            layers.append(dense(lc["in_dim"], lc["out_dim"], lc["activation"],
                                rng=rng, name=f"{name}.h{i}" if i < len(cfg["layers"]) - 1 else f"{name}.head"))
        elif lc["kind"] == nncore.RESIDUAL:
            layers.append(residual_block(lc["out_dim"], lc["activation"], rng=rng, name=f"{name}.r{i}"))
        else:
            raise ConfigError(f"layers[{i}].kind: unknown kind {lc['kind']!r}")
    return ModelSpec(name, layers, cfg["num_classes"], cfg["normal_class"], cfg["taps"])


def save_model_config(path, model: ModelSpec) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_config(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model_config(path, rng: np.random.Generator | None = None) -> ModelSpec:
    with open(path) as fh:
        return model_from_config(json.load(fh), rng)
