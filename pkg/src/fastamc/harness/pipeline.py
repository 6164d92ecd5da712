"""Fitted preprocessing: turns (N, 2, L) frames into network input (N, 1, 2, L').

Each frame is first scaled to unit mean power (unless ``normalize`` is off). Noise
is added on top of a unit-power signal, so raw frame power grows by up to ~100x
toward low SNR; left in, those frames dominate the batch-norm statistics.

The fitted state (PCA basis or index plan) is stored alongside the network in
the checkpoint so evaluation applies exactly what training used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import preprocess as pp
from ..models import ArchKind
from .config import PreprocessSpec


@dataclass
class Preprocessor:
    spec: PreprocessSpec
    frame_len: int
    polar: bool = False
    pca: pp.PCAModel | None = None
    plan: pp.SubsamplePlan | None = None
    normalize: bool = True

    @property
    def output_len(self) -> int:
        if self.spec.method in ("none", "polar"):
            return self.frame_len
        return self.frame_len // self.spec.factor

    def transform(self, frames) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim != 3 or frames.shape[1] != 2:
            raise pp.PreprocessError(f"expected (N, 2, L) frames, got {frames.shape}")
        if frames.shape[2] != self.frame_len:
            raise pp.PreprocessError(
                f"preprocessing was fitted on frame length {self.frame_len}, got frames of length {frames.shape[2]}"
            )
        if self.normalize:
            frames = normalize_power(frames)
        m = self.spec.method
        if m == "pca":
            out = pp.pca_transform(self.pca, frames)
        elif m in ("uniform", "random"):
            out = pp.apply_plan(frames, self.plan)
        elif m == "magrank":
            out = pp.magnitude_rank_subsample(frames, self.spec.factor)
        else:
            out = frames
        if self.polar:
            out = pp.to_polar(out)
        return np.ascontiguousarray(out, dtype=np.float32)[:, None]

    # checkpoint (de)serialisation: a JSON-able header plus named arrays
    def to_record(self) -> tuple[dict, dict[str, np.ndarray]]:
        meta = {"spec": str(self.spec), "frame_len": self.frame_len, "polar": self.polar, "normalize": self.normalize}
        arrays: dict[str, np.ndarray] = {}
        if self.pca is not None:
            arrays = {"pca_mean": self.pca.mean, "pca_basis": self.pca.basis, "pca_variances": self.pca.variances}
        if self.plan is not None:
            arrays = {"plan_indices": self.plan.indices}
            meta["plan_method"] = self.plan.method
            meta["plan_seed"] = self.plan.seed
        return meta, arrays

    @classmethod
    def from_record(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "Preprocessor":
        spec = PreprocessSpec.parse(meta["spec"])
        pca = plan = None
        if spec.method == "pca":
            pca = pp.PCAModel(arrays["pca_mean"], arrays["pca_basis"], arrays["pca_variances"])
        elif spec.method in ("uniform", "random"):
            plan = pp.SubsamplePlan(arrays["plan_indices"], meta["plan_method"], meta["frame_len"], meta.get("plan_seed"))
        return cls(spec, int(meta["frame_len"]), bool(meta["polar"]), pca, plan, bool(meta["normalize"]))


def normalize_power(frames) -> np.ndarray:
    """Scale each (2, L) frame to unit mean power |I + jQ|^2; all-zero frames pass through."""
    frames = np.asarray(frames, dtype=np.float32)
    power = np.mean(np.sum(frames.astype(np.float64) ** 2, axis=-2), axis=-1)
    scale = np.where(power > 0, 1.0 / np.sqrt(np.where(power > 0, power, 1.0)), 1.0)
    return (frames * scale[..., None, None]).astype(np.float32)


def fit_preprocessor(spec: PreprocessSpec, train_frames, arch=None, normalize: bool = True) -> Preprocessor:
    """Fit on training frames only. LSTM2 always reads (amplitude, phase) rows, so
    for it any reduction is followed by polar conversion."""
    train_frames = np.asarray(train_frames)
    L = train_frames.shape[-1]
    polar = spec.method == "polar" or (arch is not None and ArchKind(arch) is ArchKind.LSTM2)
    if spec.method == "pca":
        k = 2 * L // spec.factor
        fit_on = normalize_power(train_frames) if normalize else train_frames
        return Preprocessor(spec, L, polar, pca=pp.pca_fit(fit_on, k), normalize=normalize)
    if spec.method == "uniform":
        return Preprocessor(spec, L, polar, plan=pp.uniform_plan(L, spec.factor), normalize=normalize)
    if spec.method == "random":
        return Preprocessor(spec, L, polar, plan=pp.random_plan(L, spec.factor, spec.seed or 0), normalize=normalize)
    if spec.method == "magrank" and L % spec.factor:
        raise pp.PreprocessError(f"frame length {L} is not divisible by {spec.factor}")
    return Preprocessor(spec, L, polar, normalize=normalize)
