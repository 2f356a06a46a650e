"""Loss, learning-rate schedule, AdamW, and the training loop.

Reverse-mode differentiation itself lives in :mod:`lenslesskit.autodiff`;
this module owns the optimization protocol: decoupled weight decay, cosine
decay with linear warm-up, per-epoch seeded shuffling, and
best-by-validation checkpointing. Gradient reduction over a batch follows
record order, so loss curves are bit-reproducible for a fixed seed.
"""

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import arrayio
from . import autodiff as ad
from . import pipeline as pl
from .errors import (
    EmptyDatasetError,
    EmptyParameterSetError,
    OutOfRangeError,
    ShapeMismatchError,
)

backward = ad.backward  # re-exported: gradients for every leaf of a recorded graph


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings (AdamW + cosine decay with warm-up)."""

    lr0: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_frac: float = 0.05
    epochs: int = 25
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.warmup_frac < 1.0:
            raise ValueError(f"warmup_frac must be in (0, 1), got {self.warmup_frac}")
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def loss(x_hat, x):
    """Mean squared error over all elements; differentiable."""
    if ad.value_of(x_hat).shape != ad.value_of(x).shape:
        raise ShapeMismatchError(
            f"shapes {ad.value_of(x_hat).shape} and {ad.value_of(x).shape} differ"
        )
    return ad.mean(ad.square(ad.sub(x_hat, x)))


def lr_schedule(step, total_steps, cfg):
    """Linear warm-up to ``lr0`` followed by cosine decay to 0.

    Warm-up covers ``round(warmup_frac * total_steps)`` steps; at the
    boundary both branches evaluate to ``lr0``, and the final step lands on
    the cosine tail.
    """
    if not 0 <= step < total_steps:
        raise OutOfRangeError(f"step {step} outside [0, {total_steps})")
    warmup = int(round(cfg.warmup_frac * total_steps))
    if warmup > 0 and step < warmup:
        return cfg.lr0 * step / warmup
    span = max(total_steps - 1 - warmup, 1)
    progress = (step - warmup) / span
    return cfg.lr0 * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adamw_init(params):
    return AdamState(
        m={k: np.zeros_like(np.asarray(v)) for k, v in params.items()},
        v={k: np.zeros_like(np.asarray(v)) for k, v in params.items()},
        t=0,
    )


def adamw_step(params, grads, state, lr, cfg=None):
    """One AdamW update; returns new (params, state), inputs untouched.

    Weight decay is decoupled: ``p <- p - lr*wd*p`` applies separately from
    the bias-corrected adaptive step.
    """
    if cfg is None:
        cfg = TrainConfig()
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeMismatchError(
                f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}"
            )
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p_new = p - lr * cfg.weight_decay * p
        p_new = p_new - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        new_params[name] = p_new
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(m=new_m, v=new_v, t=t)


# ---------------------------------------------------------------------------
# training loop


def _mean_loss(spec, op, records):
    total = 0.0
    for rec in records:
        x_hat = pl.run_pipeline(spec, op, pl.Measurement(y=rec.y, b_hat=rec.b_hat))
        total += float(ad.value_of(loss(x_hat, rec.x)))
    return total / len(records)


def train(spec, dataset, cfg=None, trainable=None, out_dir=None, max_steps=None):
    """Train a pipeline's parameters on a dataset manifest.

    Parameters
    ----------
    spec : PipelineSpec
        Pipeline whose parameters are updated in place.
    dataset : simulate.DatasetManifest
        Records come from the train split; the test split is used as the
        validation set for checkpoint selection.
    cfg : TrainConfig
    trainable : list of str, optional
        Parameter-name prefixes to optimize (e.g. ``["pre"]``); everything
        else stays frozen. Default: all learnable parameters.
    out_dir : path, optional
        When given, writes ``history.csv`` and a ``checkpoint/`` directory
        holding the best-by-validation-loss pipeline. The checkpoint records
        the validation loss of the exact parameter values it stores.
    max_steps : int, optional
        Stop after this many optimizer steps (schedule spans the same).

    Returns
    -------
    (spec, history) where history is a list of per-step dict rows.
    """
    if cfg is None:
        cfg = TrainConfig()
    all_params = spec.parameters()
    if trainable is not None:
        params = OrderedDict(
            (k, v) for k, v in all_params.items() if any(k.startswith(p) for p in trainable)
        )
    else:
        params = all_params
    if not params:
        raise EmptyParameterSetError("pipeline has no learnable parameters to train")

    train_idx = dataset.indices("train")
    val_idx = dataset.indices("test")
    if not train_idx:
        raise EmptyDatasetError("dataset has no training records")
    op = dataset.operator()
    train_records = [dataset.load_record(i) for i in train_idx]
    val_records = [dataset.load_record(i) for i in val_idx]

    steps_per_epoch = math.ceil(len(train_records) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    if max_steps is not None:
        total_steps = min(total_steps, int(max_steps))
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    state = adamw_init({k: v.value for k, v in params.items()})

    history = []
    best_val = math.inf
    best_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        best_dir = out_dir / "checkpoint"

    step = 0
    done = False
    leaves = list(params.values())
    for _ in range(cfg.epochs):
        if done:
            break
        perm = shuffle_rng.permutation(len(train_records))
        for start in range(0, len(perm), cfg.batch_size):
            batch = perm[start : start + cfg.batch_size]
            lr = lr_schedule(step, total_steps, cfg)
            ad.zero_grads(leaves)
            batch_loss = 0.0
            for idx in batch:  # ordered reduction: deterministic gradients
                rec = train_records[idx]
                x_hat = pl.run_pipeline(spec, op, pl.Measurement(y=rec.y, b_hat=rec.b_hat))
                item = loss(x_hat, rec.x)
                ad.backward(item)
                batch_loss += float(ad.value_of(item))
            batch_loss /= len(batch)
            grads = {
                k: (v.grad if v.grad is not None else np.zeros_like(v.value)) / len(batch)
                for k, v in params.items()
            }
            new_vals, state = adamw_step(
                {k: v.value for k, v in params.items()}, grads, state, lr, cfg
            )
            for k, v in params.items():
                v.value = new_vals[k]

            row = {"step": step, "lr": lr, "train_loss": batch_loss, "val_loss": ""}
            step += 1
            last_of_epoch = start + cfg.batch_size >= len(perm)
            if val_records and (last_of_epoch or step >= total_steps):
                val = _mean_loss(spec, op, val_records)
                row["val_loss"] = val
                if val < best_val:
                    best_val = val
                    if best_dir is not None:
                        pl.save_pipeline(spec, best_dir, extra={"val_loss": val, "step": step})
            history.append(row)
            if step >= total_steps:
                done = True
                break

    if out_dir is not None:
        arrayio.write_csv(
            out_dir / "history.csv", history, ["step", "lr", "train_loss", "val_loss"]
        )
    return spec, history
