"""Shared fixtures and independent oracles used across the test suite."""

import numpy as np
import pytest

from edgecloud import harness, nncore
from edgecloud.harness import DataConfig, ExperimentPlan, PolicyConfig, StageConfig


def scalar_forward_reference(layers, x):
    """Pure-Python scalar-loop evaluator for a layer stack (test oracle)."""
    x = [float(v) for v in np.asarray(x).ravel()]
    for layer in layers:
        if layer.kind == nncore.DENSE:
            w, b = layer.weights[0].value, layer.biases[0].value
            y = [sum(w[o][i] * x[i] for i in range(layer.in_dim)) + b[o]
                 for o in range(layer.out_dim)]
        else:
            w1, b1 = layer.weights[0].value, layer.biases[0].value
            w2, b2 = layer.weights[1].value, layer.biases[1].value
            h = [max(sum(w1[o][i] * x[i] for i in range(layer.in_dim)) + b1[o], 0.0)
                 for o in range(layer.out_dim)]
            y = [x[o] + sum(w2[o][i] * h[i] for i in range(layer.out_dim)) + b2[o]
                 for o in range(layer.out_dim)]
        if layer.activation == nncore.RELU:
            y = [max(v, 0.0) for v in y]
        x = y
    return np.array(x)


def finite_difference_grads(loss_fn, params, h=1e-5):
    """Central finite differences of a closure over every parameter element."""
    grads = []
    for p in params:
        g = np.zeros_like(p.value)
        flat, gflat = p.value.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-3):
    """Worst-case elementwise relative error with a small denominator floor."""
    worst = 0.0
    for a, f in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        worst = max(worst, float((np.abs(a - f) / denom).max()))
    return worst


def random_net(rng, num_classes=3, max_depth=4, max_width=16):
    """Random stack of dense/residual layers ending in an identity head."""
    depth = int(rng.integers(1, max_depth + 1))
    in_dim = int(rng.integers(2, max_width + 1))
    layers = []
    prev = in_dim
    for i in range(depth - 1):
        if rng.random() < 0.35:
            layers.append(nncore.residual_block(prev, rng=rng, name=f"r{i}"))
        else:
            width = int(rng.integers(2, max_width + 1))
            act = nncore.RELU if rng.random() < 0.7 else nncore.IDENTITY
            layers.append(nncore.dense(prev, width, act, rng=rng, name=f"d{i}"))
            prev = width
    layers.append(nncore.dense(prev, num_classes, nncore.IDENTITY, rng=rng, name="head"))
    return layers, in_dim


def brute_force_frontier(points):
    """All-pairs non-dominance filter over sense-normalized objectives."""
    norm = np.array([[v if s == "max" else -v for v, s in zip(p.objectives, p.senses)]
                     for p in points])
    keep = []
    seen = set()
    for i in range(len(points)):
        ge = np.all(norm >= norm[i], axis=1)
        gt = np.any(norm > norm[i], axis=1)
        if not np.any(ge & gt):
            key = points[i].objectives
            if key not in seen:
                seen.add(key)
                keep.append(points[i])
    return sorted(keep, key=lambda p: (p.objectives, p.label))


def tiny_plan(master_seed=0, **overrides):
    """Small fast plan for unit and CLI tests (seconds, not minutes)."""
    kwargs = dict(
        master_seed=master_seed,
        data=DataConfig(num_classes=4, dim=8, n=600, normal_fraction=0.4, difficulty=0.4),
        edge_hidden=[6],
        edge_taps=[0],
        cloud_hidden=[16, 16, 16],
        cloud_taps=[0, 1, 2],
        adapter_edge_tap=0,
        adapter_cloud_tap=1,
        adapter_blocks=1,
        stages={
            "cloud": StageConfig(epochs=8, batch_size=32, learning_rate=0.1),
            "edge_kd": StageConfig(epochs=8, batch_size=32, learning_rate=0.1, kd_weight=1.0),
            "finetune": StageConfig(epochs=4, batch_size=32, learning_rate=0.05),
        },
        policies=[
            PolicyConfig("independent", c1=0.8),
            PolicyConfig("adaptive", c1=0.8),
            PolicyConfig("dynamic", c1=0.8, c2=0.3),
        ],
        c2_grid=[0.2, 0.3, 0.4],
    )
    kwargs.update(overrides)
    return ExperimentPlan(**kwargs)


@pytest.fixture(scope="session")
def tiny_system():
    """One trained tiny system shared by routing/harness tests."""
    plan = tiny_plan()
    result = harness.run_experiment(plan)
    return result
