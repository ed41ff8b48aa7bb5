"""Training loop, optimizer, and evaluation metrics.

Training minimizes either the preliminary loss or the manifold-regularized
total loss with Adam; when the manifold term is active, the reconstruction
table is computed once from the training targets before the first epoch.
Per-epoch train/test MAE is appended to ``training_log.csv``; the final
checkpoint, ``metrics.csv`` and a human-readable report land in the output
directory. Runs are fully deterministic for a fixed config and seed.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .losses import LossConfig, loss_p, loss_t, precompute_reconstructions
from .model import build_model, forward
from .phantom import IDH_SLICE, INDEX_NAMES, VBH_SLICE, read_dataset
from .tensor import Tensor

GROUPS = ("IDH", "VBH", "Total")
_GROUP_SLICES = {"IDH": IDH_SLICE, "VBH": VBH_SLICE, "Total": slice(0, 30)}


class TrainingDivergence(RuntimeError):
    """Raised when the loss becomes non-finite; names the epoch and batch."""


class Adam:
    """Adaptive-moment gradient descent with bias correction."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsReport:
    """MAE +- std in millimetres per split and index group, plus the
    per-index table. The std is over per-(sample, index) absolute errors."""

    groups: dict      # (split, group) -> (mae, std)
    per_index: dict   # (split, index_name) -> (mae, std)
    seed: int = 0
    wall_clock: float = 0.0

    def consistency_error(self):
        """Max |group Total MAE - mean of its per-index MAEs| over splits."""
        worst = 0.0
        for split in ("train", "test"):
            keys = [(split, name) for name in INDEX_NAMES]
            if not all(k in self.per_index for k in keys):
                continue
            per_index_mean = np.mean([self.per_index[k][0] for k in keys])
            worst = max(worst, abs(self.groups[(split, "Total")][0] - per_index_mean))
        return worst

    def csv_rows(self):
        rows = [("split", "scope", "name", "mae_mm", "std_mm")]
        for (split, group), (mae, std) in sorted(self.groups.items()):
            rows.append((split, "group", group, repr(float(mae)), repr(float(std))))
        for (split, name), (mae, std) in sorted(self.per_index.items()):
            rows.append((split, "index", name, repr(float(mae)), repr(float(std))))
        return rows

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh).writerows(self.csv_rows())

    def text(self):
        lines = ["group   split   MAE+-std (mm)"]
        for group in GROUPS:
            for split in ("train", "test"):
                mae, std = self.groups[(split, group)]
                lines.append(f"{group:<7} {split:<7} {mae:.4f}+-{std:.4f}")
        return "\n".join(lines)

    def payload(self):
        """JSON-friendly nested dict (service wire format)."""
        out = {}
        for (split, group), (mae, std) in self.groups.items():
            out.setdefault(split, {})[group] = {"mae_mm": float(mae), "std_mm": float(std)}
        return out


def group_errors(pred, targets):
    """(mae, std) per index group from |pred - target| in mm."""
    err = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(targets, dtype=np.float64))
    return {g: (float(err[:, sl].mean()), float(err[:, sl].std()))
            for g, sl in _GROUP_SLICES.items()}


def compute_report(preds, targets_by_split, seed=0, wall_clock=0.0):
    groups = {}
    per_index = {}
    for split, pred in preds.items():
        err = np.abs(pred - targets_by_split[split])
        for g, sl in _GROUP_SLICES.items():
            groups[(split, g)] = (float(err[:, sl].mean()), float(err[:, sl].std()))
        for j, name in enumerate(INDEX_NAMES):
            per_index[(split, name)] = (float(err[:, j].mean()), float(err[:, j].std()))
    return MetricsReport(groups=groups, per_index=per_index, seed=seed, wall_clock=wall_clock)


def predict(params, images, batch_size=64):
    """Infer-mode predictions (N, d) computed in deterministic batches."""
    outputs = []
    for start in range(0, images.shape[0], batch_size):
        batch = Tensor(images[start:start + batch_size])
        outputs.append(forward(params, batch, "infer").data.astype(np.float64))
    return np.concatenate(outputs, axis=0)


# ---------------------------------------------------------------------------
# training


def _log_epoch(writer, epoch, params, data, eval_batch):
    rows = []
    for split in ("train", "test"):
        images, targets = data.split_arrays(split)
        stats = group_errors(predict(params, images, eval_batch), targets)
        for group in GROUPS:
            mae = stats[group][0]
            writer.writerow((epoch, split, group, repr(mae)))
            rows.append((epoch, split, group, mae))
    return rows


def train(cfg):
    """Run one experiment; returns a TrainResult with file paths and metrics.

    The head bias is warm-started at the train-target mean (deterministic),
    batches of size 1 at the epoch tail are dropped (train-mode batch norm
    needs >= 2), and a non-finite loss aborts with the offending epoch and
    batch.
    """
    from .experiment import ExperimentConfig  # local import to avoid a cycle

    if not isinstance(cfg, ExperimentConfig):
        raise TypeError("train expects an ExperimentConfig")
    start_time = time.time()
    data = read_dataset(cfg.dataset)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model_cfg = cfg.model_config(data.manifest.image_hw)
    params = build_model(model_cfg, cfg.seed)
    train_images, train_targets = data.split_arrays("train")
    if train_images.shape[0] < 2:
        raise ValueError("training split needs at least 2 samples")
    params.head_b.data[:] = train_targets.mean(axis=0).astype(params.head_b.data.dtype)

    loss_cfg = cfg.loss_config()
    table = None
    if cfg.loss == "loss_t":
        table = precompute_reconstructions(train_targets, loss_cfg.k)
        table.save(out_dir / "recon_table.bin")

    named = params.trainable()
    optimizer = Adam(named, lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2)
    regularized = params.regularized()
    rng = np.random.default_rng(cfg.seed)
    n_train = train_images.shape[0]

    log_path = out_dir / "training_log.csv"
    new_log = not log_path.exists()
    with open(log_path, "a", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if new_log:
            writer.writerow(("epoch", "split", "group", "mae_mm"))
        for epoch in range(1, cfg.epochs + 1):
            perm = rng.permutation(n_train)
            for b_start in range(0, n_train, cfg.batch_size):
                idx = perm[b_start:b_start + cfg.batch_size]
                if idx.shape[0] < 2:
                    continue
                batch = Tensor(train_images[idx])
                target = train_targets[idx]
                pred = forward(params, batch, "train")
                if cfg.loss == "loss_t":
                    loss = loss_t(pred, target, table.y_tilde[idx], regularized, loss_cfg)
                else:
                    loss = loss_p(pred, target, regularized, loss_cfg.lambda_p,
                                  loss_cfg.squared_weight_norm)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDivergence(
                        f"non-finite loss {value} at epoch {epoch}, "
                        f"batch starting at sample {b_start}"
                    )
                loss.backward()
                optimizer.step()
            _log_epoch(writer, epoch, params, data, cfg.eval_batch_size)

    ckpt_path = out_dir / "checkpoint.bin"
    checkpoint.save_model(ckpt_path, params, extra_meta={"seed": cfg.seed,
                                                         "loss": cfg.loss})
    report = evaluate(ckpt_path, cfg.dataset, eval_batch=cfg.eval_batch_size)
    report.seed = cfg.seed
    report.wall_clock = time.time() - start_time
    report.write_csv(out_dir / "metrics.csv")
    (out_dir / "report.txt").write_text(report.text() + "\n", encoding="utf-8")
    return TrainResult(
        checkpoint=str(ckpt_path),
        training_log=str(log_path),
        metrics_csv=str(out_dir / "metrics.csv"),
        report_txt=str(out_dir / "report.txt"),
        report=report,
    )


@dataclass
class TrainResult:
    checkpoint: str
    training_log: str
    metrics_csv: str
    report_txt: str
    report: MetricsReport


def evaluate(checkpoint_path, dataset_path, eval_batch=64):
    """MAE +- std per group and per index, for both splits, in millimetres."""
    params, _meta = checkpoint.load_model(checkpoint_path)
    data = read_dataset(dataset_path)
    if params.config.input_hw != tuple(data.manifest.image_hw):
        raise ValueError(
            f"checkpoint expects {params.config.input_hw} images, dataset has "
            f"{tuple(data.manifest.image_hw)}"
        )
    preds = {}
    targets = {}
    for split in ("train", "test"):
        images, y = data.split_arrays(split)
        preds[split] = predict(params, images, eval_batch)
        targets[split] = y
    return compute_report(preds, targets)
