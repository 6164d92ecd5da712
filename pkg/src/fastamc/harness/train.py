"""Training loop with validation early stopping, and the TrainedModel bundle."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import dataset as dsmod
from .. import models
from ..dataset import Dataset, DatasetError, atomic_write_bytes
from ..nn import checkpoint
from ..nn.network import Network, cross_entropy
from ..nn.optim import Adam, TrainConfig
from .config import ConfigError, ExperimentConfig
from .pipeline import Preprocessor, fit_preprocessor


class TrainingError(RuntimeError):
    pass


@dataclass
class FitResult:
    epoch_times: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = -1


def _batches(n: int, batch_size: int) -> list[slice]:
    bounds = list(range(0, n, batch_size)) + [n]
    # a trailing batch of one would break batch statistics; fold it into its neighbour
    if len(bounds) > 2 and bounds[-1] - bounds[-2] == 1:
        bounds.pop(-2)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def _eval_loss(net: Network, x, y, batch_size: int) -> tuple[float, float]:
    probs = net.predict_proba(x, batch_size)
    return cross_entropy(probs, y), float(np.mean(probs.argmax(axis=1) == y))


def fit(net: Network, x, y, cfg: TrainConfig, x_val=None, y_val=None, log=None, batch_fn=None) -> FitResult:
    """Minibatch Adam on ``(x, y)``; keeps the parameters of the lowest validation loss.

    ``batch_fn(idx, rng)``, when given, builds each input batch in place of
    ``x[idx]`` (``x`` then only needs a length); this is how augmentation runs.
    Epoch time covers the shuffled optimizer loop only.  Without validation
    data every epoch runs and the final parameters are kept.
    """
    if batch_fn is None:
        x = np.asarray(x, dtype=net.dtype)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise TrainingError("empty training set")
    has_val = x_val is not None and len(x_val) > 0
    opt = Adam(net, cfg)
    order_rng = np.random.default_rng([cfg.seed, 0])
    drop_rng = np.random.default_rng([cfg.seed, 1])
    aug_rng = np.random.default_rng([cfg.seed, 2])
    res = FitResult()
    best = None
    best_loss = np.inf
    stale = 0
    for epoch in range(cfg.epochs):
        perm = order_rng.permutation(len(x))
        total = 0.0
        t0 = time.perf_counter()
        for sl in _batches(len(x), cfg.batch_size):
            idx = perm[sl]
            xb = x[idx] if batch_fn is None else batch_fn(idx, aug_rng)
            net.zero_grad()
            total += net.loss_and_grad(xb, y[idx], training=True, rng=drop_rng) * len(idx)
            opt.step()
        res.epoch_times.append(time.perf_counter() - t0)
        res.train_loss.append(total / len(x))
        if has_val:
            vl, va = _eval_loss(net, x_val, y_val, cfg.batch_size)
            res.val_loss.append(vl)
            res.val_accuracy.append(va)
            if vl < best_loss:
                best_loss, best, stale = vl, net.snapshot(), 0
                res.best_epoch = epoch
            else:
                stale += 1
        if log:
            msg = f"epoch {epoch + 1}/{cfg.epochs} loss {res.train_loss[-1]:.4f} time {res.epoch_times[-1]:.2f}s"
            if has_val:
                msg += f" val_loss {res.val_loss[-1]:.4f} val_acc {res.val_accuracy[-1]:.3f}"
            log(msg)
        if has_val and stale >= cfg.patience:
            break
    if best is not None:
        net.load_arrays(*best)
    else:
        res.best_epoch = len(res.epoch_times) - 1
    return res


@dataclass
class TrainedModel:
    network: Network
    preprocessor: Preprocessor
    config: ExperimentConfig
    fit: FitResult

    @property
    def epoch_times(self) -> list[float]:
        return self.fit.epoch_times

    def predict(self, frames, batch_size: int = 1024) -> np.ndarray:
        return self.network.predict(self.preprocessor.transform(frames), batch_size)

    def save(self, path) -> None:
        """Checkpoint plus a ``<path>.timing.json`` sidecar holding the wall-clock times,
        which keeps the checkpoint itself deterministic."""
        pre_meta, pre_arrays = self.preprocessor.to_record()
        meta = {
            "config": self.config.to_dict(),
            "config_digest": self.config.digest,
            "preprocess": pre_meta,
            "best_epoch": self.fit.best_epoch,
            "train_loss": self.fit.train_loss,
            "val_loss": self.fit.val_loss,
            "val_accuracy": self.fit.val_accuracy,
        }
        checkpoint.save(self.network, path, meta, pre_arrays)
        timing = json.dumps({"epoch_times": self.fit.epoch_times}, indent=2) + "\n"
        atomic_write_bytes(timing_path(path), timing.encode())

    @classmethod
    def load(cls, path) -> "TrainedModel":
        net, meta, extra = checkpoint.load(path)
        cfg = ExperimentConfig.from_dict(meta["config"])
        pre = Preprocessor.from_record(meta["preprocess"], extra)
        tp = timing_path(path)
        times = json.loads(tp.read_text())["epoch_times"] if tp.exists() else []
        res = FitResult(times, meta["train_loss"], meta["val_loss"], meta["val_accuracy"], meta["best_epoch"])
        return cls(net, pre, cfg, res)


def timing_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".timing.json")


def load_splits(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset is None:
        raise ConfigError("config names no dataset")
    try:
        if cfg.test_dataset is not None:
            return dsmod.load(cfg.dataset), dsmod.load(cfg.test_dataset)
        return dsmod.split(dsmod.load(cfg.dataset), cfg.train_fraction, cfg.split_seed)
    except OSError as exc:
        raise ConfigError(f"cannot read dataset: {exc}") from exc


def select_training(cfg: ExperimentConfig, train: Dataset) -> Dataset:
    cells = train.mods.astype(np.int64) * 256 + train.snrs.astype(np.int64)
    idx = cfg.snr_policy.select(train.snrs, cells)
    if idx.size == 0:
        raise TrainingError(
            f"snr policy {cfg.snr_policy} selects no training examples (dataset SNRs: {train.snr_values()})"
        )
    return train.subset(idx)


def train_model(cfg: ExperimentConfig, train: Dataset | None = None, log=None) -> TrainedModel:
    """Filter by the SNR policy, hold out a stratified validation slice, fit the
    preprocessing on the rest, then train the configured architecture."""
    if train is None:
        train, _ = load_splits(cfg)
    chosen = select_training(cfg, train)
    if cfg.val_fraction > 0:
        try:
            fit_set, val_set = dsmod.split(chosen, 1.0 - cfg.val_fraction, cfg.split_seed + 1, strict=False)
        except DatasetError as exc:
            raise TrainingError(str(exc)) from exc
    else:
        fit_set, val_set = chosen, None
    if len(fit_set) == 0:
        raise TrainingError(f"snr policy {cfg.snr_policy} leaves no examples after the validation hold-out")
    pre = fit_preprocessor(cfg.preprocess, fit_set.frames, cfg.arch, cfg.normalize)
    spec = models.build(cfg.arch, pre.output_len)
    net = Network(spec, seed=cfg.train.seed)
    x_val = y_val = None
    if val_set is not None and len(val_set):
        x_val, y_val = pre.transform(val_set.frames), val_set.mods.astype(np.int64)
    y = fit_set.mods.astype(np.int64)
    if cfg.augment_phase:
        frames = fit_set.frames

        def batch_fn(idx, rng):
            return pre.transform(rotate_phase(frames[idx], rng))

        res = fit(net, frames, y, cfg.train, x_val, y_val, log, batch_fn)
    else:
        res = fit(net, pre.transform(fit_set.frames), y, cfg.train, x_val, y_val, log)
    return TrainedModel(net, pre, cfg, res)


def rotate_phase(frames, rng: np.random.Generator) -> np.ndarray:
    """Rotate each (2, L) frame by its own uniform carrier phase.

    The channel already draws the carrier phase uniformly and independently of
    everything else, so this maps the frame distribution of each class onto itself.
    """
    frames = np.asarray(frames, dtype=np.float32)
    theta = rng.uniform(0.0, 2 * np.pi, len(frames))
    c = np.cos(theta).astype(np.float32)[:, None]
    s = np.sin(theta).astype(np.float32)[:, None]
    i, q = frames[:, 0], frames[:, 1]
    return np.stack([c * i - s * q, s * i + c * q], axis=1)
