"""Loss functions and training procedures.

Four procedures are provided:

* ``train_base`` -- plain minibatch SGD on classifier cross-entropy.
* ``train_edge_kd`` -- edge training with a feature-imitation term: the
  adapter maps the edge tap into the cloud tap's space and a sigmoid BCE
  pulls the adapted map toward the (frozen) cloud feature map. Edge layers
  up to the tap receive both gradients, later layers only the classifier
  gradient, and the adapter only the imitation gradient.
* ``finetune_adapter`` -- tunes the adapter plus the cloud layers after the
  injection tap on the end-to-end adapted path, everything else frozen.
* ``train_recall_boost`` -- two-objective SGD (full cross-entropy and
  positive-samples-only cross-entropy) where each step uses minimum-norm
  simplex weights, so no step increases either objective to first order.

Losses clamp probabilities to ``[1e-12, 1 - 1e-12]`` before taking logs.
All procedures are deterministic given ``TrainConfig.seed`` (the only
randomness is minibatch shuffling) and verify their freeze contracts by
hashing frozen parameters before and after.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .models import (AdapterSpec, FeatureMap, ModelSpec, adapt, cloud_tail,
                     infer, infer_with_tap)
from .moo import GradientBundle, solve_min_norm
from .nncore import (ConfigError, GradientTape, Node, Param, UsageError,
                     as_tensor, sigmoid)

LOG_EPS = 1e-12

STAGES = ("base", "kd-edge", "adapter-finetune", "recall-boost")

TRAINING_LOG_COLUMNS = ["epoch", "ce", "kd", "positive_ce", "acc", "recall"]


class DivergenceError(RuntimeError):
    """Training loss became non-finite; carries the stage name and epoch."""

    def __init__(self, stage: str, epoch: int) -> None:
        super().__init__(f"training stage {stage!r} diverged at epoch {epoch}: loss is not finite")
        self.stage = stage
        self.epoch = epoch


class FrozenParamsError(RuntimeError):
    """A parameter set declared frozen was mutated (internal invariant)."""


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    kd_weight: float = 1.0
    seed: int = 0
    stage: str = "base"

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.kd_weight < 0:
            raise ConfigError("kd_weight must be >= 0")
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}")


@dataclass
class LossReport:
    ce_loss: float
    kd_loss: float
    positive_ce_loss: float
    accuracy: float
    recall: float
    n_positive: int = 0
    alpha: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        for name in ("ce_loss", "kd_loss", "positive_ce_loss", "accuracy", "recall"):
            if not math.isfinite(getattr(self, name)):
                raise UsageError(f"LossReport.{name} is not finite")
        if not 0.0 <= self.accuracy <= 1.0 or not 0.0 <= self.recall <= 1.0:
            raise UsageError("accuracy and recall must lie in [0, 1]")


@dataclass
class TrainResult:
    """Per-epoch reports (row 0 is the pre-training state) plus, for
    multi-objective runs, the per-step simplex weights."""

    history: list[LossReport]
    alpha_steps: list[tuple[float, ...]] = field(default_factory=list)
    skipped_steps: int = 0
    min_descent_inner: float = math.inf

    @property
    def final(self) -> LossReport:
        return self.history[-1]


# ---------------------------------------------------------------------------
# Losses (plain-array versions; used for reporting and as test oracles).

def cross_entropy(probs, labels) -> float:
    """Mean negative log-probability of the true class over a batch."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise UsageError("cross_entropy needs a nonempty batch of probability rows")
    if labels.shape != (probs.shape[0],):
        raise UsageError("labels must align with probability rows")
    picked = np.clip(probs[np.arange(len(labels)), labels], LOG_EPS, 1.0 - LOG_EPS)
    return float(-np.log(picked).mean())


def kd_loss(cloud_feature, adapted_feature) -> float:
    """Elementwise BCE between sigmoid-squashed cloud and adapted features.

    Target ``p = sigmoid(cloud)``, prediction ``q = sigmoid(adapted)``
    clamped away from {0, 1}; mean over elements.
    """
    cval = cloud_feature.values if isinstance(cloud_feature, FeatureMap) else np.asarray(cloud_feature)
    aval = adapted_feature.values if isinstance(adapted_feature, FeatureMap) else np.asarray(adapted_feature)
    if cval.shape != aval.shape:
        raise UsageError(f"feature shapes differ: {cval.shape} vs {aval.shape}")
    p = sigmoid(cval)
    q = np.clip(sigmoid(aval), LOG_EPS, 1.0 - LOG_EPS)
    return float(-(p * np.log(q) + (1.0 - p) * np.log(1.0 - q)).mean())


def positive_cross_entropy(probs, labels, normal_class: int) -> float:
    """Cross-entropy restricted to rows whose label is not the normal class.

    Returns 0 when the batch has no positive rows (a defined result, not an
    error; callers flag it via the report's ``n_positive``).
    """
    labels = np.asarray(labels, dtype=np.intp)
    mask = labels != normal_class
    if not mask.any():
        return 0.0
    probs = np.asarray(probs, dtype=np.float64)
    return cross_entropy(probs[mask], labels[mask])


def accuracy_rate(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    return float((preds == labels).mean())


def recall_rate(preds, labels, normal_class: int) -> float:
    """Fraction of positive-labelled samples predicted as any positive class.

    Vacuously 1 when the batch has no positive samples.
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    mask = labels != normal_class
    if not mask.any():
        return 1.0
    return float((preds[mask] != normal_class).mean())


# ---------------------------------------------------------------------------
# Taped loss builders (the differentiable route).

def ce_on_tape(tape: GradientTape, logits: Node, labels) -> Node:
    labels = np.asarray(labels, dtype=np.intp)
    probs = nncore.op_softmax(tape, logits)
    picked = nncore.op_pick(tape, probs, labels)
    clamped = nncore.op_clamp(tape, picked, LOG_EPS, 1.0 - LOG_EPS)
    return nncore.op_scale(tape, nncore.op_mean(tape, nncore.op_log(tape, clamped)), -1.0)


def kd_on_tape(tape: GradientTape, adapted: Node, cloud_values) -> Node:
    target = sigmoid(as_tensor(cloud_values))
    if target.shape != adapted.value.shape:
        raise UsageError(f"feature shapes differ: {target.shape} vs {adapted.value.shape}")
    q = nncore.op_clamp(tape, nncore.op_sigmoid(tape, adapted), LOG_EPS, 1.0 - LOG_EPS)
    hit = nncore.op_cmul(tape, target, nncore.op_log(tape, q))
    miss = nncore.op_cmul(tape, 1.0 - target, nncore.op_log(tape, nncore.op_rsub(tape, 1.0, q)))
    return nncore.op_scale(tape, nncore.op_mean(tape, nncore.op_add(tape, hit, miss)), -1.0)


def positive_ce_on_tape(tape: GradientTape, logits: Node, labels,
                        normal_class: int) -> tuple[Node | None, int]:
    labels = np.asarray(labels, dtype=np.intp)
    idx = np.flatnonzero(labels != normal_class)
    if idx.size == 0:
        return None, 0
    subset = nncore.op_rows(tape, logits, idx)
    return ce_on_tape(tape, subset, labels[idx]), int(idx.size)


def adapter_on_tape(tape: GradientTape, adapter: AdapterSpec, feature: Node) -> Node:
    h = feature
    for layer in adapter.layers():
        h = nncore.layer_on_tape(tape, layer, h)
    return h


# ---------------------------------------------------------------------------
# Evaluation helpers.

def evaluate_model(model: ModelSpec, X, y) -> LossReport:
    """Classifier metrics of a model on a labelled set (kd reported as 0)."""
    y = np.asarray(y, dtype=np.intp)
    probs = infer(model, X)
    preds = np.argmax(probs, axis=1)
    n_pos = int((y != model.normal_class).sum())
    return LossReport(
        ce_loss=cross_entropy(probs, y),
        kd_loss=0.0,
        positive_ce_loss=positive_cross_entropy(probs, y, model.normal_class),
        accuracy=accuracy_rate(preds, y),
        recall=recall_rate(preds, y, model.normal_class),
        n_positive=n_pos,
    )


def evaluate_adaptive_path(edge: ModelSpec, cloud: ModelSpec, adapter: AdapterSpec,
                           X, y) -> LossReport:
    """Metrics of the edge-tap -> adapter -> cloud-tail path."""
    y = np.asarray(y, dtype=np.intp)
    _, edge_feat = infer_with_tap(edge, X, adapter.edge_tap)
    adapted = adapt(adapter, edge_feat)
    probs = cloud_tail(cloud, adapted, adapter.cloud_tap)
    preds = np.argmax(probs, axis=1)
    _, cloud_feat = infer_with_tap(cloud, X, adapter.cloud_tap)
    return LossReport(
        ce_loss=cross_entropy(probs, y),
        kd_loss=kd_loss(cloud_feat, adapted),
        positive_ce_loss=positive_cross_entropy(probs, y, cloud.normal_class),
        accuracy=accuracy_rate(preds, y),
        recall=recall_rate(preds, y, cloud.normal_class),
        n_positive=int((y != cloud.normal_class).sum()),
    )


# ---------------------------------------------------------------------------
# Training internals.

def _coerce_data(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = as_tensor(X)
    y = np.asarray(y, dtype=np.intp)
    if X.ndim != 2 or X.shape[0] == 0:
        raise UsageError("training data must be a nonempty (n, d) array")
    if not np.all(np.isfinite(X)):
        raise UsageError("training data must be finite")
    if y.shape != (X.shape[0],):
        raise UsageError("labels must align with training rows")
    return X, y


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def _sgd(params: list[Param], grads: dict[Param, np.ndarray], lr: float) -> None:
    if lr == 0.0:
        return
    for p in params:
        g = grads.get(p)
        if g is not None:
            p.value -= lr * g


def _check_finite(node: Node, config: TrainConfig, epoch: int) -> None:
    if not np.isfinite(node.value):
        raise DivergenceError(config.stage, epoch)


class _FreezeGuard:
    def __init__(self, params: list[Param], what: str) -> None:
        self.params = params
        self.what = what
        self.digest = nncore.params_digest(params)

    def verify(self) -> None:
        if nncore.params_digest(self.params) != self.digest:
            raise FrozenParamsError(f"frozen parameters mutated: {self.what}")


def _flat(grads: dict[Param, np.ndarray], params: list[Param]) -> np.ndarray:
    return np.concatenate([np.ravel(grads.get(p, np.zeros_like(p.value))) for p in params])


def _combine(per_obj: list[dict[Param, np.ndarray]], alpha: np.ndarray,
             params: list[Param]) -> dict[Param, np.ndarray]:
    out: dict[Param, np.ndarray] = {}
    for p in params:
        total = np.zeros_like(p.value)
        for a, grads in zip(alpha, per_obj):
            g = grads.get(p)
            if g is not None and a != 0.0:
                total += a * g
        out[p] = total
    return out


def _epoch_alpha(steps: list[tuple[float, ...]]) -> tuple[float, ...] | None:
    if not steps:
        return None
    arr = np.asarray(steps, dtype=np.float64)
    return tuple(float(v) for v in arr.mean(axis=0))


# ---------------------------------------------------------------------------
# Training procedures.

def train_base(model: ModelSpec, X, y, config: TrainConfig) -> TrainResult:
    """Minibatch SGD on cross-entropy; history row 0 is the initial state."""
    X, y = _coerce_data(X, y)
    rng = np.random.default_rng(config.seed)
    params = model.params()
    history = [evaluate_model(model, X, y)]
    for epoch in range(1, config.epochs + 1):
        for idx in _batches(len(X), config.batch_size, rng):
            tape = GradientTape()
            logits = nncore.forward_on_tape(tape, model.layers, tape.input(X[idx]))
            loss = ce_on_tape(tape, logits, y[idx])
            _check_finite(loss, config, epoch)
            grads = nncore.adjoints(tape, loss)
            _sgd(params, grads, config.learning_rate)
        history.append(evaluate_model(model, X, y))
    return TrainResult(history)


def _edge_kd_report(edge: ModelSpec, adapter: AdapterSpec, X, y,
                    cloud_targets: np.ndarray | None,
                    alpha: tuple[float, ...] | None) -> LossReport:
    rep = evaluate_model(edge, X, y)
    if cloud_targets is not None:
        _, edge_feat = infer_with_tap(edge, X, adapter.edge_tap)
        rep.kd_loss = kd_loss(cloud_targets, adapt(adapter, edge_feat).values)
    rep.alpha = alpha
    return rep


def train_edge_kd(edge: ModelSpec, cloud: ModelSpec, adapter: AdapterSpec,
                  X, y, config: TrainConfig, *, freeze_edge: bool = False,
                  recall_boost: bool = False) -> TrainResult:
    """Edge training with the feature-imitation term.

    The cloud stays frozen throughout (verified by hashing). With
    ``kd_weight == 0`` the imitation branch is skipped entirely, so the edge
    update sequence matches ``train_base`` bit for bit. With
    ``recall_boost`` the step direction is the minimum-norm combination of
    up to three objectives: cross-entropy, positive-sample cross-entropy,
    and the imitation loss.
    """
    if adapter.edge_tap not in edge.taps:
        raise UsageError(f"adapter edge tap {adapter.edge_tap} not declared by {edge.name!r}")
    if adapter.cloud_tap not in cloud.taps:
        raise UsageError(f"adapter cloud tap {adapter.cloud_tap} not declared by {cloud.name!r}")
    X, y = _coerce_data(X, y)
    rng = np.random.default_rng(config.seed)
    use_kd = config.kd_weight != 0.0
    if recall_boost and not use_kd:
        raise ConfigError("the recall_boost bundle requires kd_weight > 0")

    frozen = list(cloud.params()) + (list(edge.params()) if freeze_edge else [])
    guard = _FreezeGuard(frozen, "cloud (and edge)" if freeze_edge else "cloud")
    trainable = ([] if freeze_edge else edge.params()) + adapter.params()

    cloud_targets = None
    if use_kd:
        _, cloud_feat = infer_with_tap(cloud, X, adapter.cloud_tap)
        cloud_targets = cloud_feat.values

    result = TrainResult([_edge_kd_report(edge, adapter, X, y, cloud_targets, None)])
    for epoch in range(1, config.epochs + 1):
        epoch_alphas: list[tuple[float, ...]] = []
        for idx in _batches(len(X), config.batch_size, rng):
            tape = GradientTape()
            h = tape.input(X[idx])
            tap_node = None
            for i, layer in enumerate(edge.layers):
                h = nncore.layer_on_tape(tape, layer, h)
                if i == adapter.edge_tap:
                    tap_node = h
            ce = ce_on_tape(tape, h, y[idx])
            _check_finite(ce, config, epoch)
            kd_node = None
            if use_kd:
                adapted = adapter_on_tape(tape, adapter, tap_node)
                kd_node = kd_on_tape(tape, adapted, cloud_targets[idx])
                _check_finite(kd_node, config, epoch)
            if not recall_boost:
                if kd_node is None:
                    loss = ce
                else:
                    loss = nncore.op_add(tape, ce, nncore.op_scale(tape, kd_node, config.kd_weight))
                grads = nncore.adjoints(tape, loss)
                _sgd(trainable, grads, config.learning_rate)
                continue

            # Objective bundle {ce, positive-ce, kd}; a batch with no positive
            # rows drops that objective from the bundle for the step.
            pos_node, _ = positive_ce_on_tape(tape, h, y[idx], edge.normal_class)
            if pos_node is not None:
                _check_finite(pos_node, config, epoch)
            slots = (ce, pos_node, kd_node)
            present = [i for i, node in enumerate(slots) if node is not None]
            per_obj = [nncore.adjoints(tape, slots[i]) for i in present]
            flats = np.stack([_flat(g, trainable) for g in per_obj])
            if not flats.any():
                result.skipped_steps += 1
                continue
            weights, combined = solve_min_norm(GradientBundle(flats))
            result.min_descent_inner = min(result.min_descent_inner,
                                           float((flats @ combined).min()))
            alpha_by_slot = [0.0, 0.0, 0.0]
            for slot, a in zip(present, weights.alpha):
                alpha_by_slot[slot] = float(a)
            epoch_alphas.append(tuple(alpha_by_slot))
            _sgd(trainable, _combine(per_obj, weights.alpha, trainable), config.learning_rate)
        result.alpha_steps.extend(epoch_alphas)
        result.history.append(
            _edge_kd_report(edge, adapter, X, y, cloud_targets, _epoch_alpha(epoch_alphas)))
    guard.verify()
    return result


def finetune_adapter(edge: ModelSpec, cloud: ModelSpec, adapter: AdapterSpec,
                     X, y, config: TrainConfig) -> TrainResult:
    """Tune the adapter and the cloud tail on the end-to-end adapted path.

    The edge and the cloud layers up to (and including) the injection tap
    are frozen; history rows report adapted-path metrics.
    """
    if adapter.edge_tap not in edge.taps:
        raise UsageError(f"adapter edge tap {adapter.edge_tap} not declared by {edge.name!r}")
    n = adapter.cloud_tap
    if not 0 <= n < len(cloud.layers):
        raise UsageError(f"adapter cloud tap {n} out of range for {cloud.name!r}")
    X, y = _coerce_data(X, y)
    rng = np.random.default_rng(config.seed)

    frozen = list(edge.params()) + [p for layer in cloud.layers[:n + 1] for p in layer.params()]
    guard = _FreezeGuard(frozen, "edge and cloud prefix")
    trainable = adapter.params() + [p for layer in cloud.layers[n + 1:] for p in layer.params()]

    _, edge_feat = infer_with_tap(edge, X, adapter.edge_tap)
    feats = edge_feat.values

    history = [evaluate_adaptive_path(edge, cloud, adapter, X, y)]
    for epoch in range(1, config.epochs + 1):
        for idx in _batches(len(X), config.batch_size, rng):
            tape = GradientTape()
            adapted = adapter_on_tape(tape, adapter, tape.input(feats[idx]))
            logits = nncore.forward_on_tape(tape, cloud.layers[n + 1:], adapted)
            loss = ce_on_tape(tape, logits, y[idx])
            _check_finite(loss, config, epoch)
            grads = nncore.adjoints(tape, loss)
            _sgd(trainable, grads, config.learning_rate)
        history.append(evaluate_adaptive_path(edge, cloud, adapter, X, y))
    guard.verify()
    return TrainResult(history)


def train_recall_boost(edge: ModelSpec, X, y, config: TrainConfig) -> TrainResult:
    """Two-objective SGD weighting cross-entropy and positive-only
    cross-entropy by the per-step minimum-norm solution."""
    X, y = _coerce_data(X, y)
    pos_mask = y != edge.normal_class
    if not pos_mask.any() or pos_mask.all():
        raise UsageError("recall boosting needs both normal and positive samples")
    rng = np.random.default_rng(config.seed)
    params = edge.params()

    result = TrainResult([evaluate_model(edge, X, y)])
    for epoch in range(1, config.epochs + 1):
        epoch_alphas: list[tuple[float, ...]] = []
        for idx in _batches(len(X), config.batch_size, rng):
            tape = GradientTape()
            logits = nncore.forward_on_tape(tape, edge.layers, tape.input(X[idx]))
            ce = ce_on_tape(tape, logits, y[idx])
            _check_finite(ce, config, epoch)
            pos_node, _ = positive_ce_on_tape(tape, logits, y[idx], edge.normal_class)
            if pos_node is not None:
                _check_finite(pos_node, config, epoch)
            g_ce = nncore.adjoints(tape, ce)
            g_pos = nncore.adjoints(tape, pos_node) if pos_node is not None else {}
            flats = np.stack([_flat(g_ce, params), _flat(g_pos, params)])
            if not flats.any():
                result.skipped_steps += 1
                continue
            weights, combined = solve_min_norm(GradientBundle(flats))
            result.min_descent_inner = min(result.min_descent_inner,
                                           float((flats @ combined).min()))
            epoch_alphas.append(tuple(float(a) for a in weights.alpha))
            _sgd(params, _combine([g_ce, g_pos], weights.alpha, params), config.learning_rate)
        result.alpha_steps.extend(epoch_alphas)
        rep = evaluate_model(edge, X, y)
        rep.alpha = _epoch_alpha(epoch_alphas)
        result.history.append(rep)
    return result


# ---------------------------------------------------------------------------
# Training-log export: one CSV row per epoch.

def write_training_log(path, result: TrainResult) -> None:
    has_alpha = any(rep.alpha is not None for rep in result.history)
    arity = max((len(rep.alpha) for rep in result.history if rep.alpha), default=0)
    columns = TRAINING_LOG_COLUMNS + [f"alpha_{i + 1}" for i in range(arity)] if has_alpha \
        else TRAINING_LOG_COLUMNS
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for epoch, rep in enumerate(result.history):
            row = [str(epoch), repr(rep.ce_loss), repr(rep.kd_loss),
                   repr(rep.positive_ce_loss), repr(rep.accuracy), repr(rep.recall)]
            if has_alpha:
                alpha = rep.alpha or ()
                row += [repr(float(a)) for a in alpha] + [""] * (arity - len(alpha))
            writer.writerow(row)
