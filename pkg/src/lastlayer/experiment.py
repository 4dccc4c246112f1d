"""Experiment harness: the three-way comparison protocol and the
self-check suite.

``run_experiment`` trains a network along a single seeded trajectory,
pausing at each checkpoint to branch three ways: keep training (classic),
fine-tune the last layer on frozen features (post-training), and
substitute the closed-form ridge-optimal last layer.  Each branch is
scored on the held-out split and one comparison row is emitted per
(seed, checkpoint).  Everything is deterministic: the same config
produces byte-identical CSV output.

``check_suite`` re-verifies the package's numerical contracts (gradient
correctness, Hessian structure, positive semidefiniteness, primal/dual
agreement, norm bounds, monotone fine-tuning, frozen layers) and returns
a machine-readable report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import jsonio
from .convexity import SoftmaxInstance, ce_hessian, ce_value, p_matrix
from .data import Dataset, apply_standardization, gen_synthetic, load_csv, split, standardize
from .kernel import gram, krr_solve, primal_ridge, rkhs_norm_bound
from .linalg import matmul, min_eigenvalue_symmetric, solve_spd
from .network import (
    LayerSpec,
    Network,
    build_network,
    forward,
    loss_and_gradients,
    loss_eval,
    replace_last_layer,
)
from .posttrain import PostTrainConfig, effective_features, post_train, posttrain_objective
from .rng import derive
from .train import TrainConfig, classification_error, sgd_train

CONFIG_FORMAT_VERSION = 1

METRICS = ("rmse", "classification_error")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class DatasetSpec:
    kind: str  # "synthetic" | "csv"
    n: int = 10000
    seed: int = 0
    path: Optional[str] = None
    feature_columns: Optional[list] = None
    target_columns: Optional[list] = None
    has_header: bool = True

    def __post_init__(self):
        if self.kind not in ("synthetic", "csv"):
            raise ValueError(f"dataset kind must be 'synthetic' or 'csv', got {self.kind!r}")
        if self.kind == "csv" and not self.path:
            raise ValueError("csv dataset requires a path")


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    split_fraction: float
    split_seed: int
    layer_specs: list
    init_seed: int
    loss: str
    train: TrainConfig
    posttrain: PostTrainConfig
    checkpoints: list
    metric: str = "rmse"
    seeds: list = field(default_factory=lambda: [0])
    krr_convention: str = "objective_consistent"
    standardize: bool = True

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if not self.checkpoints:
            raise ValueError("at least one checkpoint is required")
        for a, b in zip(self.checkpoints, self.checkpoints[1:]):
            if b <= a:
                raise ValueError("checkpoints must be strictly increasing")
        if self.checkpoints[-1] > self.train.iterations:
            raise ValueError("checkpoints cannot exceed train.iterations")
        if not self.seeds:
            raise ValueError("at least one run seed is required")
        if self.metric == "rmse" and self.loss != "squared_error":
            raise ValueError("rmse metric requires squared_error loss")
        if self.metric == "classification_error" and self.loss != "cross_entropy":
            raise ValueError("classification_error metric requires cross_entropy loss")


def config_from_dict(doc: dict) -> ExperimentConfig:
    ds = doc["dataset"]
    dataset = DatasetSpec(
        kind=ds["kind"],
        n=int(ds.get("n", 10000)),
        seed=int(ds.get("seed", 0)),
        path=ds.get("path"),
        feature_columns=ds.get("feature_columns"),
        target_columns=ds.get("target_columns"),
        has_header=bool(ds.get("has_header", True)),
    )
    layer_specs = [
        LayerSpec(
            input_dim=int(item["input_dim"]),
            output_dim=int(item["output_dim"]),
            activation=item["activation"],
            has_bias=bool(item["has_bias"]),
        )
        for item in doc["network"]["layers"]
    ]
    tr = doc["train"]
    train_cfg = TrainConfig(
        iterations=int(tr["iterations"]),
        batch_size=int(tr["batch_size"]),
        lr0=float(tr["lr0"]),
        lr_decay=float(tr.get("lr_decay", 1.0)),
        dropout_keep=tr.get("dropout_keep"),
        weight_decay=float(tr.get("weight_decay", 0.0)),
        seed=int(tr.get("seed", 0)),
        eval_every=int(tr.get("eval_every", 100)),
    )
    pt = doc["posttrain"]
    posttrain_cfg = PostTrainConfig(
        lam=float(pt["lambda"]),
        iterations=int(pt.get("iterations", 200)),
        mode=pt.get("mode", "full_batch_backtracking"),
        batch_size=int(pt.get("batch_size", 128)),
        lr=float(pt.get("lr", 0.05)),
        seed=int(pt.get("seed", 0)),
    )
    return ExperimentConfig(
        dataset=dataset,
        split_fraction=float(doc["split"]["fraction"]),
        split_seed=int(doc["split"]["seed"]),
        layer_specs=layer_specs,
        init_seed=int(doc["network"].get("init_seed", 0)),
        loss=doc["loss"],
        train=train_cfg,
        posttrain=posttrain_cfg,
        checkpoints=[int(c) for c in doc["checkpoints"]],
        metric=doc.get("metric", "rmse"),
        seeds=[int(s) for s in doc.get("seeds", [0])],
        krr_convention=doc.get("krr_convention", "objective_consistent"),
        standardize=bool(doc.get("standardize", True)),
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Fully resolved config document, written alongside every run."""
    return {
        "format_version": CONFIG_FORMAT_VERSION,
        "dataset": {
            "kind": cfg.dataset.kind,
            "n": cfg.dataset.n,
            "seed": cfg.dataset.seed,
            "path": cfg.dataset.path,
            "feature_columns": cfg.dataset.feature_columns,
            "target_columns": cfg.dataset.target_columns,
            "has_header": cfg.dataset.has_header,
        },
        "split": {"fraction": cfg.split_fraction, "seed": cfg.split_seed},
        "standardize": cfg.standardize,
        "network": {
            "init_seed": cfg.init_seed,
            "layers": [
                {
                    "input_dim": s.input_dim,
                    "output_dim": s.output_dim,
                    "activation": s.activation,
                    "has_bias": s.has_bias,
                }
                for s in cfg.layer_specs
            ],
        },
        "loss": cfg.loss,
        "train": {
            "iterations": cfg.train.iterations,
            "batch_size": cfg.train.batch_size,
            "lr0": cfg.train.lr0,
            "lr_decay": cfg.train.lr_decay,
            "dropout_keep": cfg.train.dropout_keep,
            "weight_decay": cfg.train.weight_decay,
            "seed": cfg.train.seed,
            "eval_every": cfg.train.eval_every,
        },
        "posttrain": {
            "lambda": cfg.posttrain.lam,
            "iterations": cfg.posttrain.iterations,
            "mode": cfg.posttrain.mode,
            "batch_size": cfg.posttrain.batch_size,
            "lr": cfg.posttrain.lr,
            "seed": cfg.posttrain.seed,
        },
        "checkpoints": list(cfg.checkpoints),
        "metric": cfg.metric,
        "seeds": list(cfg.seeds),
        "krr_convention": cfg.krr_convention,
    }


# ---------------------------------------------------------------------------
# comparison protocol
# ---------------------------------------------------------------------------

@dataclass
class ComparisonRow:
    iterations: int
    classic: float
    posttrained: float
    optimal: Optional[float]  # None for classification runs (no closed form)
    seed: int


def rmse(output, targets) -> float:
    """sqrt(mean over samples of the squared prediction-error norm)."""
    return math.sqrt(loss_eval("squared_error", output, targets))


def _test_metric(cfg: ExperimentConfig, net: Network, test: Dataset) -> float:
    out = forward(net, test.x).output
    if cfg.metric == "rmse":
        return rmse(out, test.y)
    return classification_error(out, test.y)


def _materialize_data(cfg: ExperimentConfig, run_seed: int):
    """Dataset, split and standardization for one run seed.

    Synthetic data is regenerated per run seed; file-backed data is fixed
    and only the split varies.
    """
    if cfg.dataset.kind == "synthetic":
        ds = gen_synthetic(cfg.dataset.n, derive(cfg.dataset.seed, "dataset", run_seed))
    else:
        try:
            ds = load_csv(
                cfg.dataset.path,
                cfg.dataset.feature_columns,
                cfg.dataset.target_columns,
                has_header=cfg.dataset.has_header,
            )
        except FileNotFoundError:
            raise FileNotFoundError(
                f"dataset file {cfg.dataset.path!r} not found; tabular datasets are "
                "not bundled, supply the CSV yourself or use the synthetic config"
            ) from None
    parts = split(ds, cfg.split_fraction, derive(cfg.split_seed, "run", run_seed))
    train_ds, test_ds = parts.train, parts.test
    if cfg.standardize:
        train_ds, params = standardize(train_ds)
        test_ds = apply_standardization(test_ds, params)
    return train_ds, test_ds


def _optimal_last_layer(cfg: ExperimentConfig, net: Network, train_ds: Dataset) -> Network:
    feats = effective_features(net, train_ds.x)
    solution = krr_solve(feats, train_ds.y, cfg.posttrain.lam, cfg.krr_convention)
    w_eff = solution.weights.T
    if net.layers[-1].spec.has_bias:
        return replace_last_layer(net, w_eff[:, :-1], w_eff[:, -1])
    return replace_last_layer(net, w_eff)


def run_experiment(cfg: ExperimentConfig) -> list:
    """One row per (seed, checkpoint): classic / post-trained / optimal
    test metrics, emitted seed-major in checkpoint order."""
    rows = []
    for run_seed in cfg.seeds:
        train_ds, test_ds = _materialize_data(cfg, run_seed)
        net = build_network(cfg.layer_specs, derive(cfg.init_seed, "run", run_seed))
        train_cfg = replace(cfg.train, seed=derive(cfg.train.seed, "run", run_seed))
        pt_cfg = replace(cfg.posttrain, seed=derive(cfg.posttrain.seed, "run", run_seed))
        completed = 0
        for checkpoint in cfg.checkpoints:
            chunk = replace(train_cfg, iterations=checkpoint - completed)
            net, _ = sgd_train(
                net, train_ds, chunk, cfg.loss, start_iteration=completed
            )
            completed = checkpoint

            classic = _test_metric(cfg, net, test_ds)
            tuned, _ = post_train(net, train_ds, pt_cfg, cfg.loss)
            posttrained = _test_metric(cfg, tuned, test_ds)
            optimal = None
            if cfg.loss == "squared_error":
                best = _optimal_last_layer(cfg, net, train_ds)
                optimal = _test_metric(cfg, best, test_ds)
            rows.append(
                ComparisonRow(
                    iterations=checkpoint,
                    classic=classic,
                    posttrained=posttrained,
                    optimal=optimal,
                    seed=run_seed,
                )
            )
    return rows


def rows_to_csv(rows) -> str:
    lines = ["iterations,classic,posttrain,optimal,seed"]
    for row in rows:
        optimal = "NA" if row.optimal is None else jsonio.format_float(row.optimal)
        lines.append(
            f"{row.iterations},{jsonio.format_float(row.classic)},"
            f"{jsonio.format_float(row.posttrained)},{optimal},{row.seed}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# self-check suite
# ---------------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "max_error": self.max_error,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }


@dataclass
class CheckReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            lines.append(
                f"[{status}] {c.name}: max_error={c.max_error:.3e} tolerance={c.tolerance:.3e}"
                + (f" ({c.detail})" if c.detail else "")
            )
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _flatten_params(net: Network):
    arrays = []
    for layer in net.layers:
        arrays.append(layer.weights)
        if layer.bias is not None:
            arrays.append(layer.bias)
    return arrays


def _fd_loss_gradient(net: Network, x, y, loss: str, step: float = 1e-5):
    """Central finite differences of the batch-mean loss over every
    parameter; independent of the backward pass."""
    grads = []
    for array in _flatten_params(net):
        g = np.zeros_like(array)
        flat = array.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = loss_eval(loss, forward(net, x).output, y)
            flat[i] = keep - step
            down = loss_eval(loss, forward(net, x).output, y)
            flat[i] = keep
            gf[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def _random_net(rng: np.random.Generator, loss: str) -> Network:
    depth = int(rng.integers(1, 4))
    widths = [int(rng.integers(2, 9)) for _ in range(depth + 1)]
    specs = []
    for i in range(depth):
        last = i == depth - 1
        activation = (
            ("softmax" if loss == "cross_entropy" else "identity")
            if last
            else ("tanh" if rng.integers(2) else "relu")
        )
        specs.append(
            LayerSpec(widths[i], widths[i + 1], activation, has_bias=not last)
        )
    net = build_network(specs, int(rng.integers(0, 2**31)))
    for layer in net.layers:  # non-zero biases so their gradients are exercised
        if layer.bias is not None:
            layer.bias += rng.normal(scale=0.3, size=layer.bias.shape)
        layer.weights += rng.normal(scale=0.2, size=layer.weights.shape)
    return net


def _random_batch(rng: np.random.Generator, net: Network, loss: str):
    batch = int(rng.integers(1, 17))
    x = rng.normal(size=(batch, net.input_dim))
    if loss == "squared_error":
        y = rng.normal(size=(batch, net.output_dim))
    else:
        y = np.zeros((batch, net.output_dim))
        y[np.arange(batch), rng.integers(0, net.output_dim, size=batch)] = 1.0
    return x, y


def _check_gradients(seed: int, perturbation: float) -> CheckResult:
    rng = np.random.default_rng(derive(seed, "gradcheck"))
    worst = 0.0
    for trial in range(20):
        loss = "squared_error" if trial % 2 == 0 else "cross_entropy"
        net = _random_net(rng, loss)
        x, y = _random_batch(rng, net, loss)
        _, grads = loss_and_gradients(net, x, y, loss)
        ordered = []
        for index, layer in enumerate(net.layers):
            ordered.append(grads.weights[index].copy())
            if layer.bias is not None:
                ordered.append(grads.biases[index].copy())
        if perturbation:
            ordered[0].reshape(-1)[0] += perturbation
        reference = _fd_loss_gradient(net, x, y, loss)
        scale = max(1.0, max(float(np.max(np.abs(r))) for r in reference))
        err = max(
            float(np.max(np.abs(a - b))) for a, b in zip(ordered, reference)
        ) / scale
        worst = max(worst, err)
    return CheckResult("gradient_vs_finite_differences", worst <= 1e-5, worst, 1e-5)


def _fd_ce_hessian(inst: SoftmaxInstance, step: float = 1e-4):
    m, n = inst.w.shape
    size = m * n
    hess = np.zeros((size, size))

    def value_at(flat):
        return ce_value(SoftmaxInstance(flat.reshape(m, n), inst.x, inst.true_class))

    base = inst.w.reshape(-1).copy()
    for i in range(size):
        for j in range(i, size):
            pp = base.copy(); pp[i] += step; pp[j] += step
            pm = base.copy(); pm[i] += step; pm[j] -= step
            mp = base.copy(); mp[i] -= step; mp[j] += step
            mm = base.copy(); mm[i] -= step; mm[j] -= step
            hess[i, j] = (value_at(pp) - value_at(pm) - value_at(mp) + value_at(mm)) / (
                4.0 * step * step
            )
            hess[j, i] = hess[i, j]
    return hess


def _random_softmax_instance(rng: np.random.Generator) -> SoftmaxInstance:
    m = int(rng.integers(2, 7))
    n = int(rng.integers(1, 9))
    return SoftmaxInstance(
        rng.normal(size=(m, n)), rng.normal(size=n), int(rng.integers(0, m))
    )


def _check_softmax_curvature(seed: int, instances: int = 100):
    rng = np.random.default_rng(derive(seed, "curvature"))
    worst_fd = 0.0
    worst_eig = 0.0
    worst_dom = 0.0
    fd_budget = 25  # explicit finite-difference Hessians are quartic; sample
    for trial in range(instances):
        inst = _random_softmax_instance(rng)
        hess = ce_hessian(inst)
        if trial < fd_budget:
            reference = _fd_ce_hessian(inst)
            scale = max(1.0, float(np.max(np.abs(reference))))
            worst_fd = max(worst_fd, float(np.max(np.abs(hess - reference))) / scale)
        worst_eig = max(worst_eig, max(0.0, -min_eigenvalue_symmetric(hess, 1e-12)))
        coupling = p_matrix(inst)
        off = np.sum(np.abs(coupling), axis=1) - np.abs(np.diag(coupling))
        worst_dom = max(worst_dom, float(np.max(np.abs(off - np.diag(coupling)))))
    return [
        CheckResult("softmax_hessian_vs_finite_differences", worst_fd <= 1e-4, worst_fd, 1e-4),
        CheckResult("softmax_hessian_psd", worst_eig <= 1e-10, worst_eig, 1e-10),
        CheckResult("softmax_coupling_diagonal_dominance", worst_dom <= 1e-12, worst_dom, 1e-12),
    ]


def _check_kernel_identities(seed: int) -> list:
    rng = np.random.default_rng(derive(seed, "kernel"))
    worst_push = 0.0
    worst_repr = 0.0
    worst_psd = 0.0
    for _ in range(25):
        n = int(rng.integers(5, 40))
        d = int(rng.integers(2, 10))
        m = int(rng.integers(1, 4))
        feats = rng.normal(size=(n, d))
        targets = rng.normal(size=(n, m))
        lam = float(10.0 ** rng.uniform(-4, 0))
        solution = krr_solve(feats, targets, lam, "paper_literal")
        primal = primal_ridge(feats, targets, lam)
        scale = max(1.0, float(np.max(np.abs(primal))))
        worst_push = max(
            worst_push, float(np.max(np.abs(solution.weights - primal))) / scale
        )
        k = gram(feats)
        pred_dual = matmul(k, solution.dual_coef)
        pred_primal = matmul(feats, solution.weights)
        pscale = max(1.0, float(np.max(np.abs(pred_dual))))
        worst_repr = max(
            worst_repr, float(np.max(np.abs(pred_dual - pred_primal))) / pscale
        )
        if n <= 30:
            min_eig = min_eigenvalue_symmetric(k, 1e-10)
            # negative spectrum relative to the mean diagonal, per the PSD contract
            worst_psd = max(worst_psd, max(0.0, -min_eig) / (float(np.trace(k)) / n))
    return [
        CheckResult("primal_dual_push_through", worst_push <= 1e-8, worst_push, 1e-8),
        CheckResult("representer_predictions_agree", worst_repr <= 1e-8, worst_repr, 1e-8),
        CheckResult("gram_positive_semidefinite", worst_psd <= 1e-8, worst_psd, 1e-8),
    ]


def _check_norm_bound(seed: int) -> CheckResult:
    rng = np.random.default_rng(derive(seed, "normbound"))
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 12))
        n = int(rng.integers(1, 20))
        feats = rng.normal(size=(n, d))
        if rng.integers(2):  # force rank deficiency half the time
            rank = max(1, min(n, d) // 2)
            feats = feats[:, :rank] @ rng.normal(size=(rank, d))
        w = rng.normal(size=d)
        proj, full = rkhs_norm_bound(w, feats)
        worst = max(worst, proj - full)
    return CheckResult("span_norm_never_exceeds_l2", worst <= 1e-10, worst, 1e-10)


def _check_posttrain(seed: int) -> list:
    rng = np.random.default_rng(derive(seed, "posttrain"))
    specs = [
        LayerSpec(4, 6, "tanh"),
        LayerSpec(6, 5, "relu"),
        LayerSpec(5, 2, "identity", has_bias=False),
    ]
    net = build_network(specs, derive(seed, "ptnet"))
    x = rng.uniform(size=(40, 4))
    y = rng.normal(size=(40, 2))
    ds = Dataset(x, y)
    cfg = PostTrainConfig(lam=1e-3, iterations=40)
    tuned, metrics = post_train(net, ds, cfg, "squared_error")

    series = metrics.train_losses()
    worst_increase = max(
        [b - a for a, b in zip(series, series[1:])], default=0.0
    )
    frozen_diff = 0.0
    for before, after in zip(net.layers[:-1], tuned.layers[:-1]):
        frozen_diff = max(frozen_diff, float(np.max(np.abs(before.weights - after.weights))))
        if before.bias is not None:
            frozen_diff = max(frozen_diff, float(np.max(np.abs(before.bias - after.bias))))

    worst_midpoint = 0.0
    lam = 1e-3
    for _ in range(100):
        wa = rng.normal(size=(2, 5))
        wb = rng.normal(size=(2, 5))
        net_a = replace_last_layer(net, wa)
        net_b = replace_last_layer(net, wb)
        net_mid = replace_last_layer(net, (wa + wb) / 2.0)
        j_mid = posttrain_objective(net_mid, ds, lam, "squared_error")
        j_avg = (
            posttrain_objective(net_a, ds, lam, "squared_error")
            + posttrain_objective(net_b, ds, lam, "squared_error")
        ) / 2.0
        worst_midpoint = max(worst_midpoint, j_mid - j_avg)
    return [
        CheckResult("posttrain_objective_monotone", worst_increase <= 0.0, worst_increase, 0.0),
        CheckResult("posttrain_frozen_layers_bit_identical", frozen_diff == 0.0, frozen_diff, 0.0),
        CheckResult("posttrain_objective_midpoint_convex", worst_midpoint <= 1e-10, worst_midpoint, 1e-10),
    ]


def _check_solver(seed: int) -> CheckResult:
    rng = np.random.default_rng(derive(seed, "solver"))
    worst = 0.0
    for _ in range(25):
        n = int(rng.integers(2, 30))
        m = rng.normal(size=(n, n))
        a = m.T @ m + np.eye(n)
        b = rng.normal(size=(n, int(rng.integers(1, 4))))
        x = solve_spd(a, b)
        residual = float(np.max(np.abs(a @ x - b)))
        worst = max(worst, residual / (1.0 + float(np.max(np.abs(b)))))
    return CheckResult("spd_solve_residual", worst <= 1e-8, worst, 1e-8)


def check_suite(seed: int = 0, gradient_perturbation: float = 0.0) -> CheckReport:
    """Run every numerical self-check; failures are report content, not
    exceptions.  ``gradient_perturbation`` injects an error into the first
    gradient entry so tests can confirm the harness actually detects bad
    gradients."""
    checks = [_check_gradients(seed, gradient_perturbation)]
    checks.extend(_check_softmax_curvature(seed))
    checks.extend(_check_kernel_identities(seed))
    checks.append(_check_norm_bound(seed))
    checks.extend(_check_posttrain(seed))
    checks.append(_check_solver(seed))
    return CheckReport(checks)


def convexity_statistics(seed: int = 0, instances: int = 100) -> dict:
    """Min-eigenvalue statistics of the softmax curvature over seeded
    random instances (the `check --convexity` CLI surface)."""
    rng = np.random.default_rng(derive(seed, "convexstats"))
    eigs = []
    for _ in range(instances):
        inst = _random_softmax_instance(rng)
        eigs.append(min_eigenvalue_symmetric(ce_hessian(inst), 1e-12))
    arr = np.array(eigs)
    return {
        "instances": instances,
        "min": float(arr.min()),
        "median": float(np.median(arr)),
        "max": float(arr.max()),
        "all_above": -1e-10,
        "passed": bool(arr.min() >= -1e-10),
    }
