"""Adam training loop, loss metrics, evaluation, and the size-generalization sweep.

Training minimizes the mean squared connectivity error; reported numbers use
the absolute-error metric (both keep the 1/(2n) normalizer, so a global
scalar estimate counts as a single term with factor 1/2). Runs are
deterministic: a seeded permutation reshuffles each epoch and gradients are
reduced in fixed graph order, so identical configs give identical checkpoints.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .data import Dataset, generate_dataset
from .graphs import GraphGenConfig
from .model import (
    ModelParams,
    backward_stack,
    build_stack,
    flatten_params,
    forward_stack,
    init_params,
    param_count,
    save_params,
    stack_losses,
    unflatten_params,
)

EVAL_CHUNK = 512

METRICS_HEADER = "epoch,train_l2,val_l1,val_l2,wall_time_s"


@dataclass(frozen=True)
class TrainConfig:
    """One experiment: message rounds, readout mode, and optimizer settings."""

    rounds: int
    mode: str
    hidden_size: int
    epochs: int
    learning_rate: float = 1e-3
    batch_size: int = 256
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    # Dataset provenance, carried for run manifests; train() takes datasets.
    train_count: Optional[int] = None
    val_count: Optional[int] = None
    n_range: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.mode not in ("local", "global"):
            raise ValueError(f"mode must be local or global, got {self.mode!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        # zero is allowed: a no-op optimizer is a useful control experiment
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


@dataclass
class EpochRecord:
    epoch: int
    train_l2: float
    val_l1: float
    val_l2: float
    wall_time_s: float


@dataclass
class Metrics:
    rows: list = field(default_factory=list)

    def validate(self) -> None:
        for i, row in enumerate(self.rows, start=1):
            if row.epoch != i:
                raise ValueError("epochs must be contiguous from 1")
            values = (row.train_l2, row.val_l1, row.val_l2, row.wall_time_s)
            if not all(np.isfinite(v) and v >= 0.0 for v in values):
                raise ValueError(f"non-finite or negative metric at epoch {i}")

    def csv_text(self) -> str:
        lines = [METRICS_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.epoch},{r.train_l2:.17g},{r.val_l1:.17g},{r.val_l2:.17g},"
                f"{r.wall_time_s:.17g}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv_text(cls, text: str) -> "Metrics":
        lines = text.splitlines()
        if not lines or lines[0] != METRICS_HEADER:
            raise ValueError("not a metrics CSV")
        rows = []
        for line in lines[1:]:
            epoch, train_l2, val_l1, val_l2, wall = line.split(",")
            rows.append(
                EpochRecord(int(epoch), float(train_l2), float(val_l1),
                            float(val_l2), float(wall))
            )
        return cls(rows=rows)


def write_metrics(metrics: Metrics, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(metrics.csv_text())


@dataclass
class AdamState:
    """First/second moment accumulators over the flattened parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n_coords: int) -> "AdamState":
        return cls(m=np.zeros(n_coords), v=np.zeros(n_coords), step=0)


def adam_step(
    params: ModelParams,
    grads: ModelParams,
    state: AdamState,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
):
    """One bias-corrected Adam update; returns (new params, new state)."""
    g = flatten_params(grads)
    theta = flatten_params(params)
    if g.shape != state.m.shape or g.shape != theta.shape:
        raise ValueError("gradient/state shape mismatch")
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    step = state.step + 1
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    theta = theta - learning_rate * m_hat / (np.sqrt(v_hat) + epsilon)
    return unflatten_params(theta, params.hidden_size), AdamState(m=m, v=v, step=step)


def l1_error(estimates, lambda2: float) -> float:
    """(1/(2n)) sum of absolute errors; a lone scalar estimate counts as n=1."""
    err = np.atleast_1d(np.asarray(estimates, dtype=float)) - lambda2
    return float(np.sum(np.abs(err)) / (2.0 * err.size))


def l2_loss(estimates, lambda2: float) -> float:
    """(1/(2n)) sum of squared errors; a lone scalar estimate counts as n=1."""
    err = np.atleast_1d(np.asarray(estimates, dtype=float)) - lambda2
    return float(np.sum(err * err) / (2.0 * err.size))


def evaluate(
    params: ModelParams,
    dataset: Dataset,
    rounds: int,
    mode: str,
) -> tuple[float, float]:
    """Mean per-graph absolute and squared error over a dataset."""
    if not dataset.items:
        raise ValueError("dataset is empty")
    l1_sum = 0.0
    l2_sum = 0.0
    items = dataset.items
    for start in range(0, len(items), EVAL_CHUNK):
        chunk = items[start : start + EVAL_CHUNK]
        stack = build_stack([g for g, _ in chunk])
        targets = np.array([y for _, y in chunk])
        estimates, _ = forward_stack(params, stack, rounds, mode, want_cache=False)
        if mode == "local":
            node_err = np.abs(estimates - np.repeat(targets, stack.sizes))
            per_graph_l1 = (
                np.bincount(stack.node_graph, weights=node_err, minlength=len(chunk))
                / (2.0 * stack.sizes)
            )
        else:
            per_graph_l1 = 0.5 * np.abs(estimates - targets)
        per_graph_l2 = stack_losses(estimates, stack, targets, mode)
        l1_sum += float(per_graph_l1.sum())
        l2_sum += float(per_graph_l2.sum())
    n = len(items)
    return l1_sum / n, l2_sum / n


def train(
    config: TrainConfig,
    train_set: Dataset,
    val_set: Dataset,
    checkpoint_dir=None,
    clock: Callable[[], float] = time.perf_counter,
) -> tuple[ModelParams, Metrics]:
    """Train from scratch; returns final parameters and per-epoch metrics.

    Each epoch shuffles the training set with a seeded permutation, steps Adam
    on the mean per-graph squared loss of each batch, evaluates the validation
    set, and (when ``checkpoint_dir`` is given) writes an epoch checkpoint.
    Aborts with RuntimeError on a non-finite loss.
    """
    if not train_set.items or not val_set.items:
        raise ValueError("datasets must be non-empty")
    params = init_params(config.hidden_size, config.seed)
    state = AdamState.zeros(param_count(config.hidden_size))
    metrics = Metrics()
    items = train_set.items
    started = clock()

    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(1, config.epochs + 1):
        order_rng = np.random.default_rng(
            np.random.SeedSequence([config.seed & ((1 << 64) - 1), epoch])
        )
        order = order_rng.permutation(len(items))
        loss_sum = 0.0
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            batch = [items[i] for i in batch_idx]
            stack = build_stack([g for g, _ in batch])
            targets = np.array([y for _, y in batch])
            # a diverging run overflows before the loss check catches it;
            # the check below is the detector, so keep the warnings quiet
            with np.errstate(over="ignore", invalid="ignore"):
                _, cache = forward_stack(
                    params, stack, config.rounds, config.mode, want_cache=True
                )
                loss, grads = backward_stack(params, cache, targets)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"batch starting at item {start}"
                )
            params, state = adam_step(
                params,
                grads,
                state,
                config.learning_rate,
                config.adam_beta1,
                config.adam_beta2,
                config.adam_epsilon,
            )
            loss_sum += loss * len(batch)
        train_l2 = loss_sum / len(items)
        val_l1, val_l2 = evaluate(params, val_set, config.rounds, config.mode)
        if not (np.isfinite(val_l1) and np.isfinite(val_l2)):
            raise RuntimeError(f"training diverged: non-finite validation loss at epoch {epoch}")
        metrics.rows.append(
            EpochRecord(epoch, train_l2, val_l1, val_l2, clock() - started)
        )
        if checkpoint_dir is not None:
            save_params(
                params,
                checkpoint_dir / f"checkpoint_epoch_{epoch:03d}.txt",
                mode=config.mode,
                rounds=config.rounds,
            )
    metrics.validate()
    return params, metrics


def generalization_sweep(
    params: ModelParams,
    sizes,
    per_size_count: int,
    gen_cfg: GraphGenConfig,
    rounds: int,
    mode: str,
) -> list[tuple[int, float, int]]:
    """Mean absolute error on fresh labeled graphs of each requested size.

    Per-size graphs come from ``gen_cfg`` pinned to that node count (seed
    offset by the size, so sizes draw distinct streams). Returns
    (size, mean_l1, count) per entry.
    """
    if per_size_count < 1:
        raise ValueError("per_size_count must be >= 1")
    out = []
    for n in sizes:
        cfg = replace(gen_cfg, n_range=(int(n), int(n)), seed=gen_cfg.seed + int(n))
        ds = generate_dataset(cfg, per_size_count)
        mean_l1, _ = evaluate(params, ds, rounds, mode)
        out.append((int(n), mean_l1, per_size_count))
    return out
