"""Synthetic data generation and end-to-end experiment execution.

The synthetic task mirrors the intended deployment: one "normal" class
(nothing of interest) drawn from a wide multi-cluster blob around the
origin, plus well-separated positive classes on orthogonal directions;
``difficulty`` widens every cluster and so controls their overlap. A plan
bundles dataset, model, training-stage and policy configs under a single
master seed, from which every stage seed is derived, so a whole experiment
is reproducible byte for byte.

Pipeline order: train the cloud model, train the edge with the
feature-imitation term (optionally with the three-objective recall bundle),
then fine-tune the adapter plus the cloud tail. Policies are evaluated on
the held-out split and written as one CSV row per system, together with the
non-dominated subsets for (s_p, s_comp) and (s_p, s_comm).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import metrics, models, nncore, policy as policy_mod, train as train_mod
from .metrics import MAX, MIN, CostReport, ParetoPoint, pareto_frontier
from .models import AdapterSpec, ModelSpec
from .nncore import ConfigError, UsageError
from .policy import DYNAMIC, RoutingPolicy, route_dataset
from .train import TrainConfig, TrainResult

DATASET_VERSION = 1
NORMAL_SUBCLUSTERS = 3
POSITIVE_RADIUS = 2.0
TRAIN_FRACTION = 0.8


@dataclass
class Dataset:
    """Labelled synthetic samples with a fixed stratified train/val split.

    ``centers`` holds the generating mixture components per class (the
    normal class has several), and ``sigma_normal``/``sigma_positive`` their
    isotropic scales; together they define the closed-form per-component
    maximum-likelihood classifier used as a separability oracle in tests.
    """

    X: np.ndarray
    y: np.ndarray
    num_classes: int
    normal_class: int
    normal_fraction: float
    train_idx: np.ndarray
    val_idx: np.ndarray
    centers: list[np.ndarray]
    sigma_normal: float = 1.0
    sigma_positive: float = 1.0

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def train_X(self) -> np.ndarray:
        return self.X[self.train_idx]

    @property
    def train_y(self) -> np.ndarray:
        return self.y[self.train_idx]

    @property
    def val_X(self) -> np.ndarray:
        return self.X[self.val_idx]

    @property
    def val_y(self) -> np.ndarray:
        return self.y[self.val_idx]

    def save(self, path) -> None:
        arrays = {f"centers_{c}": arr for c, arr in enumerate(self.centers)}
        np.savez(path, __dataset_version__=np.int64(DATASET_VERSION),
                 X=self.X, y=self.y, train_idx=self.train_idx, val_idx=self.val_idx,
                 num_classes=np.int64(self.num_classes),
                 normal_class=np.int64(self.normal_class),
                 normal_fraction=np.float64(self.normal_fraction),
                 sigma_normal=np.float64(self.sigma_normal),
                 sigma_positive=np.float64(self.sigma_positive), **arrays)

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path) as z:
            if "__dataset_version__" not in z.files:
                raise ConfigError(f"{path}: not an edgecloud dataset file")
            num_classes = int(z["num_classes"])
            centers = [z[f"centers_{c}"] for c in range(num_classes)]
            return cls(z["X"], z["y"], num_classes, int(z["normal_class"]),
                       float(z["normal_fraction"]), z["train_idx"], z["val_idx"],
                       centers, float(z["sigma_normal"]), float(z["sigma_positive"]))


def gen_dataset(num_classes: int, dim: int, n: int, normal_fraction: float,
                seed: int, difficulty: float = 0.5) -> Dataset:
    """Gaussian-mixture classification set with a designated normal class.

    Class 0 is the normal class: a wide set of ``NORMAL_SUBCLUSTERS``
    sub-clusters near the origin holding ``round(n * normal_fraction)``
    samples. The remaining classes sit on orthogonalized directions at
    radius ``POSITIVE_RADIUS``. ``difficulty`` in [0, 1] scales every
    cluster's spread; at 0 the classes are essentially separable.
    """
    if num_classes < 2:
        raise UsageError("num_classes must be >= 2")
    if dim < 1 or n < num_classes:
        raise UsageError("degenerate dataset config (need dim >= 1, n >= num_classes)")
    if not 0.0 <= normal_fraction <= 1.0:
        raise UsageError("normal_fraction must lie in [0, 1]")
    if not 0.0 <= difficulty <= 1.0:
        raise UsageError("difficulty must lie in [0, 1]")

    rng = np.random.default_rng(seed)
    n_positive_classes = num_classes - 1

    raw = rng.standard_normal((dim, n_positive_classes))
    if dim >= n_positive_classes:
        q, _ = np.linalg.qr(raw)
        directions = q.T
    else:
        directions = (raw / np.linalg.norm(raw, axis=0, keepdims=True)).T
    positive_centers = POSITIVE_RADIUS * directions

    sub_dirs = rng.standard_normal((NORMAL_SUBCLUSTERS, dim))
    sub_dirs /= np.linalg.norm(sub_dirs, axis=1, keepdims=True)
    sub_radii = rng.uniform(0.3, 1.0, NORMAL_SUBCLUSTERS)
    normal_centers = sub_dirs * sub_radii[:, None]

    sigma_pos = 0.25 + 1.1 * difficulty
    sigma_norm = 2.0 * sigma_pos

    n_normal = int(round(n * normal_fraction))
    remaining = n - n_normal
    counts = [n_normal]
    base, extra = divmod(remaining, n_positive_classes)
    counts += [base + (1 if c < extra else 0) for c in range(n_positive_classes)]

    blocks, labels = [], []
    assign = rng.integers(0, NORMAL_SUBCLUSTERS, n_normal)
    blocks.append(normal_centers[assign] + sigma_norm * rng.standard_normal((n_normal, dim)))
    labels.append(np.zeros(n_normal, dtype=np.intp))
    for c in range(n_positive_classes):
        k = counts[c + 1]
        blocks.append(positive_centers[c] + sigma_pos * rng.standard_normal((k, dim)))
        labels.append(np.full(k, c + 1, dtype=np.intp))

    X = np.concatenate(blocks)
    y = np.concatenate(labels)
    perm = rng.permutation(n)
    X, y = nncore.as_tensor(X[perm]), y[perm]

    train_parts, val_parts = [], []
    for c in range(num_classes):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        cut = int(len(idx) * TRAIN_FRACTION)
        train_parts.append(idx[:cut])
        val_parts.append(idx[cut:])
    train_idx = np.sort(np.concatenate(train_parts))
    val_idx = np.sort(np.concatenate(val_parts))

    centers = [normal_centers] + [positive_centers[c:c + 1] for c in range(n_positive_classes)]
    return Dataset(X, y, num_classes, 0, normal_fraction, train_idx, val_idx,
                   centers, sigma_norm, sigma_pos)


# ---------------------------------------------------------------------------
# Experiment plan.

@dataclass
class DataConfig:
    num_classes: int = 7
    dim: int = 16
    n: int = 10_000
    normal_fraction: float = 0.4
    difficulty: float = 0.6


@dataclass
class StageConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    kd_weight: float = 1.0


@dataclass
class PolicyConfig:
    variant: str
    c1: float
    c2: float = 0.0
    confidence_mode: str = models.NORMAL_CLASS_MODE


@dataclass
class ExperimentPlan:
    master_seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    edge_hidden: list[int] = field(default_factory=lambda: [8])
    edge_taps: list[int] = field(default_factory=lambda: [0])
    cloud_hidden: list[int] = field(default_factory=lambda: [64, 64, 64, 64])
    cloud_taps: list[int] = field(default_factory=lambda: [1, 2, 3])
    adapter_edge_tap: int = 0
    adapter_cloud_tap: int = 2
    adapter_blocks: int = 2
    stages: dict[str, StageConfig] = field(default_factory=dict)
    recall_boost: bool = False
    policies: list[PolicyConfig] = field(default_factory=list)
    c2_grid: list[float] = field(default_factory=lambda: [0.2, 0.25, 0.3, 0.35, 0.4, 0.45])
    bytes_per_element: int = 4

    def __post_init__(self) -> None:
        if self.adapter_edge_tap not in self.edge_taps:
            raise ConfigError("adapter.edge_tap: not among edge taps")
        if self.adapter_cloud_tap not in self.cloud_taps:
            raise ConfigError("adapter.cloud_tap: not among cloud taps")
        if self.adapter_blocks < 0:
            raise ConfigError("adapter.blocks: must be >= 0")
        for name in ("cloud", "edge_kd", "finetune"):
            if name not in self.stages:
                raise ConfigError(f"stages.{name}: missing stage config")
        for p in self.policies:
            if p.variant not in policy_mod.VARIANTS:
                raise ConfigError(f"policies: unknown variant {p.variant!r}")
        for c2 in self.c2_grid:
            if not 0.0 <= c2 <= 1.0:
                raise ConfigError("c2_grid: entries must lie in [0, 1]")


def default_plan(master_seed: int = 0) -> ExperimentPlan:
    """The standard desk-scale plan used by the acceptance suite."""
    return ExperimentPlan(
        master_seed=master_seed,
        stages={
            "cloud": StageConfig(epochs=30, batch_size=64, learning_rate=0.08),
            "edge_kd": StageConfig(epochs=30, batch_size=64, learning_rate=0.08, kd_weight=0.5),
            "finetune": StageConfig(epochs=12, batch_size=64, learning_rate=0.04),
        },
        policies=[
            PolicyConfig("independent", c1=0.8),
            PolicyConfig("adaptive", c1=0.8),
            PolicyConfig("dynamic", c1=0.8, c2=0.3),
        ],
    )


def _expect(mapping: dict, key: str, kind, path: str):
    if key not in mapping:
        raise ConfigError(f"{path}.{key}: missing")
    value = mapping[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def plan_from_dict(cfg: dict) -> ExperimentPlan:
    try:
        data_cfg = _expect(cfg, "dataset", dict, "plan")
        data = DataConfig(
            num_classes=_expect(data_cfg, "num_classes", int, "plan.dataset"),
            dim=_expect(data_cfg, "dim", int, "plan.dataset"),
            n=_expect(data_cfg, "n", int, "plan.dataset"),
            normal_fraction=_expect(data_cfg, "normal_fraction", float, "plan.dataset"),
            difficulty=_expect(data_cfg, "difficulty", float, "plan.dataset"),
        )
        edge_cfg = _expect(cfg, "edge", dict, "plan")
        cloud_cfg = _expect(cfg, "cloud", dict, "plan")
        adapter_cfg = _expect(cfg, "adapter", dict, "plan")
        stages_cfg = _expect(cfg, "stages", dict, "plan")
        stages = {}
        for name, sc in stages_cfg.items():
            if not isinstance(sc, dict):
                raise ConfigError(f"plan.stages.{name}: expected object")
            stages[name] = StageConfig(
                epochs=_expect(sc, "epochs", int, f"plan.stages.{name}"),
                batch_size=_expect(sc, "batch_size", int, f"plan.stages.{name}"),
                learning_rate=_expect(sc, "learning_rate", float, f"plan.stages.{name}"),
                kd_weight=float(sc.get("kd_weight", 1.0)),
            )
        policies = []
        for i, pc in enumerate(cfg.get("policies", [])):
            if not isinstance(pc, dict):
                raise ConfigError(f"plan.policies[{i}]: expected object")
            policies.append(PolicyConfig(
                variant=_expect(pc, "variant", str, f"plan.policies[{i}]"),
                c1=_expect(pc, "c1", float, f"plan.policies[{i}]"),
                c2=float(pc.get("c2", 0.0)),
                confidence_mode=pc.get("confidence_mode", models.NORMAL_CLASS_MODE),
            ))
        return ExperimentPlan(
            master_seed=_expect(cfg, "master_seed", int, "plan"),
            data=data,
            edge_hidden=list(_expect(edge_cfg, "hidden", list, "plan.edge")),
            edge_taps=list(edge_cfg.get("taps", [0])),
            cloud_hidden=list(_expect(cloud_cfg, "hidden", list, "plan.cloud")),
            cloud_taps=list(_expect(cloud_cfg, "taps", list, "plan.cloud")),
            adapter_edge_tap=_expect(adapter_cfg, "edge_tap", int, "plan.adapter"),
            adapter_cloud_tap=_expect(adapter_cfg, "cloud_tap", int, "plan.adapter"),
            adapter_blocks=_expect(adapter_cfg, "blocks", int, "plan.adapter"),
            stages=stages,
            recall_boost=bool(cfg.get("recall_boost", False)),
            policies=policies,
            c2_grid=[float(v) for v in cfg.get("c2_grid", [])],
            bytes_per_element=int(cfg.get("bytes_per_element", 4)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"plan: {exc}") from exc


def plan_to_dict(plan: ExperimentPlan) -> dict:
    return {
        "master_seed": plan.master_seed,
        "dataset": dataclasses.asdict(plan.data),
        "edge": {"hidden": plan.edge_hidden, "taps": plan.edge_taps},
        "cloud": {"hidden": plan.cloud_hidden, "taps": plan.cloud_taps},
        "adapter": {"edge_tap": plan.adapter_edge_tap, "cloud_tap": plan.adapter_cloud_tap,
                    "blocks": plan.adapter_blocks},
        "stages": {name: dataclasses.asdict(sc) for name, sc in plan.stages.items()},
        "recall_boost": plan.recall_boost,
        "policies": [dataclasses.asdict(pc) for pc in plan.policies],
        "c2_grid": plan.c2_grid,
        "bytes_per_element": plan.bytes_per_element,
    }


def load_plan(path, seed_override: int | None = None) -> ExperimentPlan:
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: plan must be a JSON object")
    plan = plan_from_dict(cfg)
    if seed_override is not None:
        plan.master_seed = seed_override
    return plan


def save_plan(path, plan: ExperimentPlan) -> None:
    with open(path, "w") as fh:
        json.dump(plan_to_dict(plan), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Seeded construction and the training pipeline.

_SEED_NAMES = ("dataset", "edge_init", "cloud_init", "adapter_init",
               "cloud_train", "edge_train", "finetune", "aux")


def derive_seeds(master_seed: int) -> dict[str, int]:
    """Stable per-component seeds spawned from the master seed."""
    children = np.random.SeedSequence(master_seed).spawn(len(_SEED_NAMES))
    return {name: int(c.generate_state(1, dtype=np.uint64)[0])
            for name, c in zip(_SEED_NAMES, children)}


def build_dataset(plan: ExperimentPlan) -> Dataset:
    seeds = derive_seeds(plan.master_seed)
    d = plan.data
    return gen_dataset(d.num_classes, d.dim, d.n, d.normal_fraction,
                       seeds["dataset"], d.difficulty)


def build_models(plan: ExperimentPlan) -> tuple[ModelSpec, ModelSpec, AdapterSpec]:
    seeds = derive_seeds(plan.master_seed)
    k = plan.data.num_classes
    edge = models.feedforward("edge", plan.data.dim, plan.edge_hidden, k, 0,
                              plan.edge_taps, np.random.default_rng(seeds["edge_init"]))
    cloud = models.feedforward("cloud", plan.data.dim, plan.cloud_hidden, k, 0,
                               plan.cloud_taps, np.random.default_rng(seeds["cloud_init"]))
    adapter = models.make_adapter("adapter", plan.adapter_edge_tap, plan.adapter_cloud_tap,
                                  edge.tap_dim(plan.adapter_edge_tap),
                                  cloud.tap_dim(plan.adapter_cloud_tap),
                                  plan.adapter_blocks,
                                  np.random.default_rng(seeds["adapter_init"]))
    return edge, cloud, adapter


def train_stages(plan: ExperimentPlan, ds: Dataset, edge: ModelSpec,
                 cloud: ModelSpec, adapter: AdapterSpec) -> dict[str, TrainResult]:
    """Cloud base training, edge training with feature imitation, adapter
    plus cloud-tail fine-tuning; all seeds derived from the master seed."""
    seeds = derive_seeds(plan.master_seed)
    X, y = ds.train_X, ds.train_y
    sc = plan.stages
    logs: dict[str, TrainResult] = {}
    logs["cloud"] = train_mod.train_base(cloud, X, y, TrainConfig(
        sc["cloud"].epochs, sc["cloud"].batch_size, sc["cloud"].learning_rate,
        seed=seeds["cloud_train"], stage="base"))
    logs["edge_kd"] = train_mod.train_edge_kd(edge, cloud, adapter, X, y, TrainConfig(
        sc["edge_kd"].epochs, sc["edge_kd"].batch_size, sc["edge_kd"].learning_rate,
        kd_weight=sc["edge_kd"].kd_weight, seed=seeds["edge_train"], stage="kd-edge"),
        recall_boost=plan.recall_boost)
    logs["finetune"] = train_mod.finetune_adapter(edge, cloud, adapter, X, y, TrainConfig(
        sc["finetune"].epochs, sc["finetune"].batch_size, sc["finetune"].learning_rate,
        seed=seeds["finetune"], stage="adapter-finetune"))
    return logs


@dataclass
class TrainedSystem:
    """A trained edge/cloud/adapter triple bound to its dataset and plan."""

    plan: ExperimentPlan
    dataset: Dataset
    edge: ModelSpec
    cloud: ModelSpec
    adapter: AdapterSpec


def _policy_label(pc: PolicyConfig) -> str:
    if pc.variant == DYNAMIC:
        return f"dynamic(c2={pc.c2:g})"
    return pc.variant


def _system_report(label: str, records, input_bytes: int, flops_edge: int,
                   flops_cloud: int, preds: np.ndarray, yv: np.ndarray,
                   normal_class: int, pi_edge: float, pi_cloud: float) -> CostReport:
    tau, psi, s_comm = metrics.comm_score(records, input_bytes)
    flops_sys, s_comp = metrics.comp_score(flops_edge, flops_cloud, records)
    acc = train_mod.accuracy_rate(preds, yv)
    return CostReport(
        label=label, tau=tau, psi=psi, s_comm=s_comm,
        flops_ecc=flops_sys, flops_edge=flops_edge, flops_cloud=flops_cloud,
        s_comp=s_comp, pi_ecc=acc, pi_edge=pi_edge, pi_cloud=pi_cloud,
        s_p=metrics.perf_score(acc, pi_edge, pi_cloud), accuracy=acc,
        recall=train_mod.recall_rate(preds, yv, normal_class),
    )


def _baseline_reports(system: TrainedSystem) -> tuple[CostReport, CostReport, float, float]:
    """Edge and cloud anchor rows: scores (0,0,0) and (1,1,1) by construction."""
    ds = system.dataset
    flops_edge, flops_cloud = system.edge.total_flops(), system.cloud.total_flops()
    yv = ds.val_y
    edge_preds = np.argmax(models.infer(system.edge, ds.val_X), axis=1)
    cloud_preds = np.argmax(models.infer(system.cloud, ds.val_X), axis=1)
    pi_edge = train_mod.accuracy_rate(edge_preds, yv)
    pi_cloud = train_mod.accuracy_rate(cloud_preds, yv)
    edge_report = CostReport(
        label="edge", tau=0.0, psi=0.0, s_comm=0.0,
        flops_ecc=float(flops_edge), flops_edge=flops_edge, flops_cloud=flops_cloud,
        s_comp=0.0, pi_ecc=pi_edge, pi_edge=pi_edge, pi_cloud=pi_cloud,
        s_p=0.0, accuracy=pi_edge,
        recall=train_mod.recall_rate(edge_preds, yv, ds.normal_class))
    cloud_report = CostReport(
        label="cloud", tau=1.0, psi=1.0, s_comm=1.0,
        flops_ecc=float(flops_cloud), flops_edge=flops_edge, flops_cloud=flops_cloud,
        s_comp=1.0, pi_ecc=pi_cloud, pi_edge=pi_edge, pi_cloud=pi_cloud,
        s_p=1.0, accuracy=pi_cloud,
        recall=train_mod.recall_rate(cloud_preds, yv, ds.normal_class))
    return edge_report, cloud_report, pi_edge, pi_cloud


def _evaluate_policy_records(system: TrainedSystem, pol: RoutingPolicy, label: str,
                             pi_edge: float, pi_cloud: float):
    ds = system.dataset
    records = route_dataset(system.edge, system.cloud, pol, ds.val_X)
    preds = np.asarray([r.prediction for r in records])
    input_bytes = ds.dim * pol.bytes_per_element
    report = _system_report(label, records, input_bytes, system.edge.total_flops(),
                            system.cloud.total_flops(), preds, ds.val_y,
                            ds.normal_class, pi_edge, pi_cloud)
    return report, records


def evaluate_policy(system: TrainedSystem, pol: RoutingPolicy, label: str,
                    pi_edge: float, pi_cloud: float) -> CostReport:
    return _evaluate_policy_records(system, pol, label, pi_edge, pi_cloud)[0]


def evaluate_policies(system: TrainedSystem) -> list[CostReport]:
    """Edge/cloud baselines plus one report per policy in the plan's grid."""
    plan = system.plan
    edge_report, cloud_report, pi_edge, pi_cloud = _baseline_reports(system)
    reports = [edge_report, cloud_report]
    seen = {"edge", "cloud"}
    for pc in plan.policies:
        label = _policy_label(pc)
        if label in seen:
            raise ConfigError(f"duplicate policy label {label!r}")
        seen.add(label)
        pol = RoutingPolicy(pc.variant, pc.c1, pc.c2, pc.confidence_mode,
                            adapter=None if pc.variant == policy_mod.INDEPENDENT else system.adapter,
                            bytes_per_element=plan.bytes_per_element)
        reports.append(evaluate_policy(system, pol, label, pi_edge, pi_cloud))
    return reports


@dataclass
class SweepResult:
    """Dynamic-threshold sweep: one report per c2, the 3-objective points,
    their non-dominated subset, and per-branch sample counts."""

    reports: list[CostReport]
    points: list[ParetoPoint]
    frontier: list[ParetoPoint]
    full_cloud_counts: list[int]
    adaptive_counts: list[int]


def sweep_dynamic(system: TrainedSystem, c2_grid: list[float], c1: float = 0.8,
                  confidence_mode: str = models.NORMAL_CLASS_MODE) -> SweepResult:
    """Evaluate the dynamic policy across ascending c2 values.

    Endpoints collapse to the other rules: c2 = 0 reproduces the adaptive
    policy and c2 = c1 the independent one, sample for sample.
    """
    if list(c2_grid) != sorted(c2_grid):
        raise UsageError("c2 grid must be ascending")
    if any(not 0.0 <= c2 <= c1 for c2 in c2_grid):
        raise UsageError("c2 values must lie in [0, c1]")
    _, _, pi_edge, pi_cloud = _baseline_reports(system)
    reports, points = [], []
    full_cloud_counts, adaptive_counts = [], []
    for c2 in c2_grid:
        pol = RoutingPolicy(DYNAMIC, c1, c2, confidence_mode, adapter=system.adapter,
                            bytes_per_element=system.plan.bytes_per_element)
        label = f"dynamic(c2={c2:g})"
        report, records = _evaluate_policy_records(system, pol, label, pi_edge, pi_cloud)
        full_cloud_counts.append(sum(r.route == policy_mod.ROUTE_CLOUD for r in records))
        adaptive_counts.append(sum(r.route == policy_mod.ROUTE_ADAPTIVE for r in records))
        reports.append(report)
        points.append(ParetoPoint((report.s_p, report.s_comp, report.s_comm),
                                  (MAX, MIN, MIN), label))
    return SweepResult(reports, points, pareto_frontier(points),
                       full_cloud_counts, adaptive_counts)


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    dataset: Dataset
    edge: ModelSpec
    cloud: ModelSpec
    adapter: AdapterSpec
    initial_edge: ModelSpec
    initial_adapter: AdapterSpec
    stage_logs: dict[str, TrainResult]
    reports: list[CostReport]

    @property
    def system(self) -> TrainedSystem:
        return TrainedSystem(self.plan, self.dataset, self.edge, self.cloud, self.adapter)

    def report(self, label: str) -> CostReport:
        for r in self.reports:
            if r.label == label:
                return r
        raise KeyError(label)


def write_outputs(out_dir, reports: list[CostReport],
                  stage_logs: dict[str, TrainResult] | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    metrics.write_reports_csv(os.path.join(out_dir, "reports.csv"), reports)
    metrics.write_reports_csv(os.path.join(out_dir, "frontier_comp.csv"),
                              metrics.frontier_reports(reports, "s_comp"))
    metrics.write_reports_csv(os.path.join(out_dir, "frontier_comm.csv"),
                              metrics.frontier_reports(reports, "s_comm"))
    if stage_logs:
        for name, result in stage_logs.items():
            train_mod.write_training_log(os.path.join(out_dir, f"train_{name}.csv"), result)


def run_experiment(plan: ExperimentPlan, out_dir=None) -> ExperimentResult:
    """Full pipeline: generate data, run all training stages, evaluate every
    policy, and (optionally) write the CSV outputs. Deterministic from the
    plan's master seed."""
    ds = build_dataset(plan)
    edge, cloud, adapter = build_models(plan)
    initial_edge = models.clone_model(edge)
    initial_adapter = models.clone_adapter(adapter)
    stage_logs = train_stages(plan, ds, edge, cloud, adapter)
    system = TrainedSystem(plan, ds, edge, cloud, adapter)
    reports = evaluate_policies(system)
    if out_dir is not None:
        write_outputs(out_dir, reports, stage_logs)
    return ExperimentResult(plan, ds, edge, cloud, adapter, initial_edge,
                            initial_adapter, stage_logs, reports)
