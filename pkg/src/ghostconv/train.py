"""Desk-scale training: SGD with momentum, cross-entropy, hyperparameter sweeps."""
import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .arch import ghostify
from .cost import count_spec
from .data import augment_batch
from .network import materialize, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    augment_crop: bool = False
    augment_mirror: bool = False
    lr_schedule: str = "step"
    milestones: tuple | None = None  # epoch indices; default 50% and 75% of epochs
    gamma: float = 0.1
    freeze_bn: bool = False

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_schedule not in ("constant", "step"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")

    def lr_at(self, epoch):
        if self.lr_schedule == "constant":
            return self.lr
        milestones = self.milestones
        if milestones is None:
            milestones = (int(0.5 * self.epochs), int(0.75 * self.epochs))
        drops = sum(1 for m in milestones if 0 < m <= epoch)
        return self.lr * self.gamma**drops


def sgd_step(params, grads, velocity, config, lr=None):
    """In-place momentum SGD: ``v = mu*v + g + wd*w``, ``w -= lr*v``.

    ``params``, ``grads`` and ``velocity`` are dicts keyed by parameter name;
    missing velocity entries start at zero.
    """
    lr = config.lr if lr is None else lr
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {w.shape}")
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(w)
        v *= config.momentum
        v += g
        if config.weight_decay:
            v += config.weight_decay * w
        w -= lr * v
    return velocity


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float = float("nan")


@dataclass
class History:
    records: list = field(default_factory=list)

    @property
    def final(self):
        return self.records[-1]

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["epoch", "loss", "train_acc", "test_acc"])
            for r in self.records:
                test = "" if math.isnan(r.test_acc) else repr(r.test_acc)
                wr.writerow([r.epoch, repr(r.loss), repr(r.train_acc), test])


def predict(net, images, batch_size=256):
    preds = []
    for i in range(0, len(images), batch_size):
        preds.append(net.forward(images[i : i + batch_size], mode="eval").argmax(axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def accuracy(net, dataset, batch_size=256):
    if dataset is None or len(dataset) == 0:
        return float("nan")
    return float((predict(net, dataset.images, batch_size) == dataset.labels).mean())


def batch_loss(net, images, labels, mode="train"):
    logits = net.forward(images, mode=mode)
    return ops.softmax_cross_entropy(logits, labels)


def train(net, dataset, config, test_set=None, out_dir=None, norm_extra=True):
    """Train ``net`` in place and return its :class:`History`.

    Each epoch visits a seeded shuffle of ``dataset`` in mini-batches, then
    measures eval-mode accuracy on the full training set (and ``test_set``).
    With ``out_dir`` the history CSV and a checkpoint per epoch are written
    there.
    """
    num_out = net.spec.num_classes
    if num_out is not None and num_out != dataset.num_classes:
        raise ValueError(f"network predicts {num_out} classes, dataset has {dataset.num_classes}")
    root = np.random.default_rng(config.seed)
    shuffle_rng, aug_rng = root.spawn(2)
    params = dict(net.named_parameters())
    velocity = {}
    history = History()
    mode = "eval" if config.freeze_bn else "train"
    augmenting = config.augment_crop or config.augment_mirror
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = shuffle_rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            x = dataset.images[idx]
            if augmenting:
                x = augment_batch(x, aug_rng, random_crop=config.augment_crop, flip=config.augment_mirror)
            loss, grad = batch_loss(net, x, dataset.labels[idx], mode)
            net.backward(grad)
            sgd_step(params, dict(net.named_gradients()), velocity, config, lr)
            losses.append(loss * len(idx))
        rec = EpochRecord(epoch + 1, float(sum(losses) / len(dataset)), accuracy(net, dataset),
                          accuracy(net, test_set))
        history.records.append(rec)
        log.info("epoch %d lr=%g loss=%.4f train_acc=%.4f test_acc=%.4f",
                 rec.epoch, lr, rec.loss, rec.train_acc, rec.test_acc)
        if out_dir:
            extra = {"__norm__.mean": dataset.mean, "__norm__.std": dataset.std} if norm_extra else None
            save_checkpoint(os.path.join(out_dir, f"checkpoint_epoch{rec.epoch:03d}.gnck"), net, extra)
            history.write_csv(os.path.join(out_dir, "history.csv"))
    return history


SWEEP_COLUMNS = ["param", "value", "weights", "flops", "acc"]


def sweep(base_spec, param, values, dataset, config, test_set=None, fixed_s=2, fixed_d=3,
          include_baseline=True, dtype=None):
    """Ghostify ``base_spec`` once per value of ``s`` or ``d`` and train each variant.

    Returns rows ``(param, value, weights, flops, acc)`` where ``acc`` is the
    final test accuracy (training accuracy when no test split is given). The
    first row is the unmodified baseline when ``include_baseline`` is set.
    """
    if param not in ("s", "d"):
        raise ValueError(f"sweep parameter must be 's' or 'd', got {param!r}")
    variants = []
    if include_baseline:
        variants.append(("baseline", base_spec))
    for v in values:
        s, d = (v, fixed_d) if param == "s" else (fixed_s, v)
        variants.append((v, ghostify(base_spec, s=s, d=d)))
    rows = []
    for value, spec in variants:
        report = count_spec(spec)
        acc = float("nan")
        if config.epochs > 0 and dataset is not None:
            net = materialize(spec, seed=config.seed, dtype=dtype)
            hist = train(net, dataset, config, test_set)
            acc = hist.final.test_acc if test_set is not None else hist.final.train_acc
        rows.append((param, value, report.params, report.flops, acc))
        log.info("sweep %s=%s weights=%d flops=%d acc=%s", param, value, report.params, report.flops, acc)
    return rows


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(SWEEP_COLUMNS)
        for param, value, weights, flops, acc in rows:
            wr.writerow([param, value, weights, flops, "" if math.isnan(acc) else repr(acc)])
