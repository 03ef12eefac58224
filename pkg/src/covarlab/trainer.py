"""Mini-batch SGD over the quantile models, with a hyperparameter grid,
chronological splits and early stopping.

The grid is the cross product of learning rates and batch sizes; every
cell trains from the same initial weights with its own derived RNG stream,
and the cell + epoch with the lowest validation pinball loss wins. A cell
whose loss turns non-finite is marked failed rather than aborting the
search. Plain SGD by default; a momentum coefficient exists but is off.

Fixed seed + fixed data give a bit-identical TrainReport on one machine.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .numcore import Tape
from .quantile import pinball


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    tau: float = 0.05
    lr_grid: tuple = (0.00015, 0.0015, 0.015)
    batch_grid: tuple = (32, 64, 128)
    max_epochs: int = 200
    patience: int = 50
    split: tuple = (0.40, 0.20, 0.40)
    seed: int = 0
    momentum: float = 0.0
    parallel: bool = False

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must be in (0, 1)")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if not self.patience < self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")


@dataclass
class SupervisedData:
    """Stacked model inputs, chronological. X is (T, ...), y is (T,)."""

    X: np.ndarray
    y: np.ndarray
    mask: np.ndarray | None = None
    dates: list | None = None

    def __len__(self):
        return len(self.y)

    def take(self, idx):
        mask = self.mask[idx] if self.mask is not None else None
        return self.X[idx], mask, self.y[idx]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class CellRecord:
    lr: float
    batch_size: int
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf
    failed: bool = False


@dataclass
class TrainReport:
    seed: int
    cells: list[CellRecord]
    chosen_lr: float
    chosen_batch: int
    best_epoch: int
    best_val: float
    weights_ref: str | None = None

    @property
    def chosen_cell(self) -> CellRecord:
        for c in self.cells:
            if c.lr == self.chosen_lr and c.batch_size == self.chosen_batch:
                return c
        raise LookupError("chosen cell missing from report")


def split_chronological(samples, split=(0.40, 0.20, 0.40)):
    """Carve a date-sorted sequence into contiguous train/val/test segments.

    Sizes are (floor(s1*T), floor(s2*T), rest).
    """
    T = len(samples)
    if T < 10:
        raise ValueError(f"need at least 10 samples to split, got {T}")
    if abs(sum(split) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    n1 = int(math.floor(split[0] * T))
    n2 = int(math.floor(split[1] * T))
    return samples[:n1], samples[n1 : n1 + n2], samples[n1 + n2 :]


class EarlyStopping:
    """Stop when the loss has not strictly improved for `patience` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.since = 0

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best:
            self.best = loss
            self.best_epoch = epoch
            self.since = 0
        else:
            self.since += 1
        return self.since >= self.patience


def _threads() -> int:
    env = os.environ.get("COVARLAB_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def eval_loss(model, data: SupervisedData, idx, tau: float) -> float:
    X, mask, y = data.take(idx)
    preds = model.predict_batch(X, mask)
    return float(np.mean(pinball(y - preds, tau)))


def sgd_step(model, data: SupervisedData, idx, tau: float, lr: float,
             velocity=None, momentum: float = 0.0) -> float:
    """One SGD update on the given sample indices; returns the batch loss."""
    tape = Tape()
    X, mask, y = data.take(idx)
    loss, nodes = model.training_loss(tape, X, mask, y, tau)
    value = float(loss.value)
    if not math.isfinite(value):
        return value
    grads = tape.grad(loss, nodes)
    if velocity is not None and momentum > 0.0:
        for a, g, v in zip(model.param_arrays(), grads, velocity):
            v *= momentum
            v += g
            a -= lr * v
    else:
        for a, g in zip(model.param_arrays(), grads):
            a -= lr * g
    return value


def _run_cell(model_init, data, tr_idx, va_idx, config, lr, batch_size, seed_seq):
    with np.errstate(over="ignore", invalid="ignore"):
        # divergent cells are detected by the isfinite checks below
        return _run_cell_inner(model_init, data, tr_idx, va_idx, config, lr, batch_size, seed_seq)


def _run_cell_inner(model_init, data, tr_idx, va_idx, config, lr, batch_size, seed_seq):
    rng = np.random.default_rng(seed_seq)
    model = model_init.clone()
    velocity = (
        [np.zeros_like(a) for a in model.param_arrays()] if config.momentum > 0 else None
    )
    record = CellRecord(lr=lr, batch_size=batch_size)
    stopper = EarlyStopping(config.patience)
    best_params = None
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(len(tr_idx))
        diverged = False
        for start in range(0, len(perm), batch_size):
            bidx = tr_idx[perm[start : start + batch_size]]
            value = sgd_step(model, data, bidx, config.tau, lr, velocity, config.momentum)
            if not math.isfinite(value):
                diverged = True
                break
        if diverged:
            record.failed = True
            break
        train_loss = eval_loss(model, data, tr_idx, config.tau)
        val_loss = eval_loss(model, data, va_idx, config.tau)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            record.failed = True
            break
        record.epochs.append(EpochRecord(epoch, train_loss, val_loss))
        improved = val_loss < stopper.best
        stop = stopper.update(epoch, val_loss)
        if improved:
            best_params = [a.copy() for a in model.param_arrays()]
        if stop:
            break
    if best_params is None:
        record.failed = True
    else:
        record.best_epoch = stopper.best_epoch
        record.best_val = stopper.best
    return record, best_params


def train(model_init, data: SupervisedData, config: TrainConfig):
    """Grid-searched SGD fit. Returns (best model, TrainReport).

    The dataset must be chronological; the config's split carves it into
    train/validation (the trailing test segment is left untouched).
    """
    idx = np.arange(len(data))
    tr_idx, va_idx, _ = split_chronological(idx, config.split)
    if len(tr_idx) == 0 or len(va_idx) == 0:
        raise TrainingError("empty train or validation segment")

    cells = list(product(config.lr_grid, config.batch_grid))
    children = np.random.SeedSequence(config.seed).spawn(len(cells))

    def run(i):
        lr, bs = cells[i]
        return _run_cell(model_init, data, tr_idx, va_idx, config, lr, bs, children[i])

    if config.parallel and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=min(_threads(), len(cells))) as pool:
            results = list(pool.map(run, range(len(cells))))
    else:
        results = [run(i) for i in range(len(cells))]

    best_i, best_params = -1, None
    for i, (record, params) in enumerate(results):
        if record.failed:
            continue
        if best_i < 0 or record.best_val < results[best_i][0].best_val:
            best_i, best_params = i, params
    if best_i < 0:
        raise TrainingError("all grid cells failed (divergent loss)")

    model = model_init.clone()
    model.set_params(best_params)
    chosen = results[best_i][0]
    report = TrainReport(
        seed=config.seed,
        cells=[r for r, _ in results],
        chosen_lr=chosen.lr,
        chosen_batch=chosen.batch_size,
        best_epoch=chosen.best_epoch,
        best_val=chosen.best_val,
    )
    return model, report


@dataclass
class RollingPrediction:
    dates: list
    values: np.ndarray
    skipped: list


def rolling_predict(model, data: SupervisedData, idx=None) -> RollingPrediction:
    """One prediction per sample using only that sample's inputs.

    No state is carried between dates and no weights are updated. Samples
    with non-finite inputs are skipped and reported.
    """
    if idx is None:
        idx = np.arange(len(data))
    idx = np.asarray(idx)
    X = data.X[idx]
    flat = X.reshape(len(idx), -1)
    ok = np.isfinite(flat).all(axis=1)
    kept = idx[ok]
    Xk, maskk, _ = data.take(kept)
    values = model.predict_batch(Xk, maskk) if len(kept) else np.zeros(0)
    dates = [data.dates[i] for i in kept] if data.dates is not None else list(kept)
    skipped = [data.dates[i] for i in idx[~ok]] if data.dates is not None else list(idx[~ok])
    return RollingPrediction(dates=dates, values=values, skipped=skipped)


def write_report_records(report: TrainReport, path):
    """Line-delimited (epoch, split, loss) records of the chosen cell."""
    cell = report.chosen_cell
    with open(path, "w") as f:
        f.write("epoch,split,loss\n")
        for rec in cell.epochs:
            f.write(f"{rec.epoch},train,{rec.train_loss!r}\n")
            f.write(f"{rec.epoch},val,{rec.val_loss!r}\n")


def report_to_dict(report: TrainReport) -> dict:
    return {
        "seed": report.seed,
        "chosen_lr": report.chosen_lr,
        "chosen_batch": report.chosen_batch,
        "best_epoch": report.best_epoch,
        "best_val": report.best_val,
        "weights_ref": report.weights_ref,
        "cells": [
            {
                "lr": c.lr,
                "batch_size": c.batch_size,
                "failed": c.failed,
                "best_epoch": c.best_epoch,
                "best_val": None if c.failed else c.best_val,
                "epochs": [[e.epoch, e.train_loss, e.val_loss] for e in c.epochs],
            }
            for c in report.cells
        ],
    }
