"""Desk-scale training: per-step cross-entropy, AdaBelief, early stopping on validation loss."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from .cells import CellSpec
from .errors import ConfigError
from .linalg_core import make_rng
from .optim import AdaBelief
from .pretrain import PretrainConfig, pretrain_run
from .stack import StackConfig, StackParams, backprop, init_stack_params, readout_vjp, stack_forward
from .tasks import Dataset, TaskSpec, mode_accuracy, synthetic_generate

__all__ = ["RunConfig", "SeedResult", "evaluate", "train_seed", "train_run", "aggregate",
           "METRIC_FIELDS", "write_metrics_csv", "read_metrics_csv"]

METRIC_FIELDS = ["epoch", "split", "loss", "accuracy", "perplexity"]


@dataclass
class RunConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    cell: str = "rnn"
    activation: str = "sigmoid"
    depth: int = 2
    width: int = 32
    learning_rate: float = 1e-2
    batch_size: int = 32
    max_epochs: int = 30
    early_stop_patience: int = 10
    seeds: list[int] = field(default_factory=lambda: [0])
    root_seed: int = 0
    pretrain: PretrainConfig | None = None
    pretrain_batch: int = 16
    output_dir: str = "runs"
    tie_break: str = "frequency_then_run"

    def __post_init__(self):
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.max_epochs < 0 or self.batch_size < 1 or self.depth < 1 or self.width < 1:
            raise ConfigError("max_epochs >= 0, batch_size, depth and width >= 1 required")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    def stack(self) -> StackConfig:
        kw = {}
        kind = self.cell
        if kind == "rnn":
            kw["activation"] = self.activation
        specs = [CellSpec(kind, self.width, self.task.channels if i == 0 else self.width, **kw)
                 for i in range(self.depth)]
        return StackConfig(tuple(specs), self.task.classes)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SeedResult:
    seed: int
    rows: list[dict]
    test: dict | None
    failed: bool = False
    best_epoch: int = 0
    pretrain: dict | None = None


def _loss_and_grad(stack, params: StackParams, inputs, labels, need_grad=True):
    run = stack_forward(stack, params, inputs)
    logits = run.outputs  # (T, B, K)
    T, B, K = logits.shape
    logp = log_softmax(logits, axis=-1)
    loss = -float(np.mean(logp[:, np.arange(B), labels]))
    if not need_grad:
        return loss, logits, None
    g = softmax(logits, axis=-1)
    g[:, np.arange(B), labels] -= 1.0
    g /= T * B
    cot, g_read = readout_vjp(stack, params, run, g)
    grads, _ = backprop(stack, params, run, [None] * (stack.depth - 1) + [cot])
    return loss, logits, (grads, g_read)


def evaluate(stack, params: StackParams, data: Dataset, batch: int = 256, rule="frequency_then_run") -> dict:
    total, correct, n = 0.0, 0, 0
    for x, y in data.batches(batch):
        loss, logits, _ = _loss_and_grad(stack, params, x, y, need_grad=False)
        total += loss * len(y)
        correct += int(mode_accuracy(logits, y, rule).sum())
        n += len(y)
    mean = total / n
    return {"loss": mean, "accuracy": correct / n, "perplexity": math.exp(mean) if mean < 700 else math.inf}


def _pretrain_source(train: Dataset, batch: int):
    def draw(rng):
        idx = rng.integers(0, len(train), size=batch)
        return np.ascontiguousarray(train.inputs[idx].transpose(1, 0, 2))
    return draw


def train_seed(config: RunConfig, seed: int) -> SeedResult:
    ss = np.random.SeedSequence([config.root_seed, seed])
    data_ss, init_ss, pre_ss, order_ss = ss.spawn(4)
    splits = synthetic_generate(config.task, make_rng(data_ss))
    stack = config.stack()
    params = init_stack_params(stack, make_rng(init_ss))
    pre_summary = None
    if config.pretrain is not None:
        params, rep = pretrain_run(stack, params, config.pretrain,
                                   _pretrain_source(splits["train"], config.pretrain_batch), make_rng(pre_ss))
        pre_summary = rep.summary()
    order_rng = make_rng(order_ss)
    cells = stack.cells
    opt = AdaBelief(lr=config.learning_rate)
    rows: list[dict] = []

    def log(epoch, split, m):
        rows.append({"epoch": epoch, "split": split, **m})

    val = evaluate(stack, params, splits["val"], rule=config.tie_break)
    log(0, "train", evaluate(stack, params, splits["train"], rule=config.tie_break))
    log(0, "val", val)
    best, best_epoch, best_params, waited = val["loss"], 0, params.copy(), 0
    failed = not math.isfinite(val["loss"])
    for epoch in range(1, config.max_epochs + 1):
        if failed:
            break
        order = order_rng.permutation(len(splits["train"]))
        for x, y in splits["train"].batches(config.batch_size, order):
            loss, _, (grads, g_read) = _loss_and_grad(stack, params, x, y)
            if not math.isfinite(loss):
                failed = True
                break
            flat_p, flat_g = {}, {}
            for l, cell in enumerate(cells):
                for name in cell.trainable(params.layers[l]):
                    flat_p[(l, name)] = params.layers[l][name]
                    flat_g[(l, name)] = grads[l][name]
            for name, g in g_read.items():
                flat_p[("readout", name)] = params.readout[name]
                flat_g[("readout", name)] = g
            opt.step(flat_p, flat_g)
            params.layers = [cell.clamp(p) for cell, p in zip(cells, params.layers)]
        if failed:
            break
        tr = evaluate(stack, params, splits["train"], rule=config.tie_break)
        val = evaluate(stack, params, splits["val"], rule=config.tie_break)
        log(epoch, "train", tr)
        log(epoch, "val", val)
        if not math.isfinite(val["loss"]):
            failed = True
            break
        if val["loss"] < best:
            best, best_epoch, best_params, waited = val["loss"], epoch, params.copy(), 0
        else:
            waited += 1
            if waited >= config.early_stop_patience:
                break
    test = None
    if not failed:
        test = evaluate(stack, best_params, splits["test"], rule=config.tie_break)
        log(best_epoch, "test", test)
    return SeedResult(seed, rows, test, failed, best_epoch, pre_summary)


# ----------------------------------------------------------- artifacts

def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in METRIC_FIELDS})


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"epoch": int(r["epoch"]), "split": r["split"], "loss": float(r["loss"]),
                 "accuracy": float(r["accuracy"]), "perplexity": float(r["perplexity"])}
                for r in csv.DictReader(fh)]


def aggregate(tests: list[dict]) -> dict:
    """Mean and population std of each test metric over seeds (fixed order)."""
    out = {"seeds": len(tests)}
    for key in ("loss", "accuracy", "perplexity"):
        vals = np.array([t[key] for t in tests], dtype=float)
        out[f"{key}_mean"] = float(np.mean(vals)) if len(vals) else math.nan
        out[f"{key}_std"] = float(np.std(vals)) if len(vals) else math.nan
    return out


def train_run(config: RunConfig, write: bool = True, jobs: int = 1) -> dict:
    """Train every seed, write per-seed metrics and the aggregate; returns the aggregate.

    Seeds are independent jobs; ``jobs > 1`` runs them in worker processes.
    Results do not depend on ``jobs``.
    """
    if jobs > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(train_seed, [config] * len(config.seeds), config.seeds))
    else:
        results = [train_seed(config, s) for s in config.seeds]
    ok = [r for r in results if not r.failed]
    agg = aggregate([r.test for r in ok])
    agg["failed_seeds"] = [r.seed for r in results if r.failed]
    agg["per_seed"] = {str(r.seed): r.test for r in ok}
    if write:
        os.makedirs(config.output_dir, exist_ok=True)
        for r in results:
            write_metrics_csv(os.path.join(config.output_dir, f"metrics_seed{r.seed}.csv"), r.rows)
            with open(os.path.join(config.output_dir, f"result_seed{r.seed}.json"), "w") as fh:
                json.dump({"seed": r.seed, "failed": r.failed, "best_epoch": r.best_epoch,
                           "test": r.test, "pretrain": r.pretrain}, fh, indent=2, sort_keys=True)
        with open(os.path.join(config.output_dir, "aggregate.json"), "w") as fh:
            json.dump(agg, fh, indent=2, sort_keys=True)
    return agg
