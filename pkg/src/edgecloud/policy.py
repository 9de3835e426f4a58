"""Confidence-threshold routing rules.

Every sample first runs through the edge model; its confidence (normal-class
probability by default) against the thresholds decides the route:

* independent: keep on edge when ``conf >= c1``, otherwise send the raw
  input through the full cloud model.
* adaptive: keep on edge when ``conf >= c1``, otherwise transmit the edge
  tap feature, adapt it, and finish with the cloud layers after the
  injection tap.
* dynamic: three-way rule -- edge when ``conf >= c1``, adapted offload when
  ``c2 <= conf < c1``, full cloud on the raw input when ``conf < c2``.

Boundary semantics follow the inequalities as written: ties at ``c1`` stay
on edge, ties at ``c2`` go adaptive. Each decision returns a
:class:`RouteRecord` carrying the byte and FLOP costs for scoring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nncore
from .models import (AdapterSpec, ModelSpec, NORMAL_CLASS_MODE, adapt,
                     cloud_tail, confidence, infer, infer_with_tap)
from .nncore import ConfigError, UsageError

INDEPENDENT = "independent"
ADAPTIVE = "adaptive"
DYNAMIC = "dynamic"
VARIANTS = (INDEPENDENT, ADAPTIVE, DYNAMIC)

ROUTE_EDGE = "edge-only"
ROUTE_ADAPTIVE = "adaptive"
ROUTE_CLOUD = "full-cloud"

DEFAULT_BYTES_PER_ELEMENT = 4


@dataclass
class RoutingPolicy:
    """One routing rule plus the knobs cost accounting needs."""

    variant: str
    c1: float
    c2: float = 0.0
    confidence_mode: str = NORMAL_CLASS_MODE
    adapter: AdapterSpec | None = None
    bytes_per_element: int = DEFAULT_BYTES_PER_ELEMENT

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown policy variant {self.variant!r}")
        if not 0.0 <= self.c1 <= 1.0:
            raise ConfigError("c1 must lie in [0, 1]")
        if self.variant == DYNAMIC and not 0.0 <= self.c2 <= self.c1:
            raise ConfigError("dynamic policy requires 0 <= c2 <= c1")
        if self.variant in (ADAPTIVE, DYNAMIC) and self.adapter is None:
            raise ConfigError(f"{self.variant} policy requires an adapter")
        if self.bytes_per_element < 1:
            raise ConfigError("bytes_per_element must be >= 1")


@dataclass(frozen=True)
class RouteRecord:
    """Outcome of routing one sample, with per-sample costs."""

    route: str
    confidence: float
    bytes_sent: int
    flops_edge: int
    flops_cloud_side: int
    prediction: int

    def __post_init__(self) -> None:
        if self.route not in (ROUTE_EDGE, ROUTE_ADAPTIVE, ROUTE_CLOUD):
            raise UsageError(f"unknown route {self.route!r}")
        if self.route == ROUTE_EDGE and (self.bytes_sent != 0 or self.flops_cloud_side != 0):
            raise UsageError("edge-only records must carry zero cloud-side cost")


def decide(variant: str, conf: float, c1: float, c2: float = 0.0) -> str:
    """Pure threshold rule; the route depends on the input only through ``conf``."""
    if conf >= c1:
        return ROUTE_EDGE
    if variant == INDEPENDENT:
        return ROUTE_CLOUD
    if variant == ADAPTIVE:
        return ROUTE_ADAPTIVE
    return ROUTE_ADAPTIVE if conf >= c2 else ROUTE_CLOUD


def _as_sample(x) -> np.ndarray:
    arr = nncore.as_tensor(x)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim == 2 and arr.shape[0] == 1:
        return arr
    raise UsageError("route operations take one sample at a time")


def _edge_record(conf: float, probs: np.ndarray, flops_edge: int) -> RouteRecord:
    return RouteRecord(ROUTE_EDGE, conf, 0, flops_edge, 0, int(np.argmax(probs)))


def _cloud_record(conf: float, cloud: ModelSpec, x: np.ndarray, flops_edge: int,
                  bytes_per_element: int) -> RouteRecord:
    probs = infer(cloud, x)
    return RouteRecord(ROUTE_CLOUD, conf, int(x.size) * bytes_per_element,
                       flops_edge, cloud.total_flops(), int(np.argmax(probs)))


def _adaptive_record(conf: float, cloud: ModelSpec, adapter: AdapterSpec, feature,
                     flops_edge: int, bytes_per_element: int) -> RouteRecord:
    adapted = adapt(adapter, feature)
    probs = cloud_tail(cloud, adapted, adapter.cloud_tap)
    flops_cloud_side = adapter.total_flops() + nncore.flops(cloud.layers[adapter.cloud_tap + 1:])
    return RouteRecord(ROUTE_ADAPTIVE, conf, int(feature.values.size) * bytes_per_element,
                       flops_edge, flops_cloud_side, int(np.argmax(probs)))


def _check_adapter_binding(edge: ModelSpec, cloud: ModelSpec, adapter: AdapterSpec) -> None:
    if adapter.edge_tap not in edge.taps:
        raise ConfigError(f"adapter edge tap {adapter.edge_tap} not declared by {edge.name!r}")
    if adapter.cloud_tap not in cloud.taps:
        raise ConfigError(f"adapter cloud tap {adapter.cloud_tap} not declared by {cloud.name!r}")


def route_independent(edge: ModelSpec, cloud: ModelSpec, policy: RoutingPolicy, x) -> RouteRecord:
    if policy.variant != INDEPENDENT:
        raise UsageError("route_independent requires an independent policy")
    x = _as_sample(x)
    probs = infer(edge, x)
    conf = confidence(probs[0], edge.normal_class, policy.confidence_mode)
    if decide(INDEPENDENT, conf, policy.c1) == ROUTE_EDGE:
        return _edge_record(conf, probs, edge.total_flops())
    return _cloud_record(conf, cloud, x, edge.total_flops(), policy.bytes_per_element)


def route_adaptive(edge: ModelSpec, cloud: ModelSpec, adapter: AdapterSpec,
                   policy: RoutingPolicy, x) -> RouteRecord:
    if policy.variant != ADAPTIVE:
        raise UsageError("route_adaptive requires an adaptive policy")
    _check_adapter_binding(edge, cloud, adapter)
    x = _as_sample(x)
    probs, feature = infer_with_tap(edge, x, adapter.edge_tap)
    conf = confidence(probs[0], edge.normal_class, policy.confidence_mode)
    if decide(ADAPTIVE, conf, policy.c1) == ROUTE_EDGE:
        return _edge_record(conf, probs, edge.total_flops())
    return _adaptive_record(conf, cloud, adapter, feature, edge.total_flops(),
                            policy.bytes_per_element)


def route_dynamic(edge: ModelSpec, cloud: ModelSpec, adapter: AdapterSpec,
                  policy: RoutingPolicy, x) -> RouteRecord:
    if policy.variant != DYNAMIC:
        raise UsageError("route_dynamic requires a dynamic policy")
    _check_adapter_binding(edge, cloud, adapter)
    x = _as_sample(x)
    probs, feature = infer_with_tap(edge, x, adapter.edge_tap)
    conf = confidence(probs[0], edge.normal_class, policy.confidence_mode)
    route = decide(DYNAMIC, conf, policy.c1, policy.c2)
    if route == ROUTE_EDGE:
        return _edge_record(conf, probs, edge.total_flops())
    if route == ROUTE_ADAPTIVE:
        return _adaptive_record(conf, cloud, adapter, feature, edge.total_flops(),
                                policy.bytes_per_element)
    return _cloud_record(conf, cloud, x, edge.total_flops(), policy.bytes_per_element)


def route_sample(edge: ModelSpec, cloud: ModelSpec, policy: RoutingPolicy, x) -> RouteRecord:
    """Dispatch on the policy variant (adapter taken from the policy)."""
    if policy.variant == INDEPENDENT:
        return route_independent(edge, cloud, policy, x)
    if policy.variant == ADAPTIVE:
        return route_adaptive(edge, cloud, policy.adapter, policy, x)
    return route_dynamic(edge, cloud, policy.adapter, policy, x)


def route_dataset(edge: ModelSpec, cloud: ModelSpec, policy: RoutingPolicy,
                  X) -> list[RouteRecord]:
    X = nncore.as_tensor(X)
    if X.ndim != 2:
        raise UsageError("route_dataset expects an (n, d) array")
    return [route_sample(edge, cloud, policy, X[i:i + 1]) for i in range(X.shape[0])]
