"""Input reduction for I/Q frames: PCA, uniform/random/magnitude-rank subsampling,
polar conversion and a streaming threshold subsampler."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import binio
from .dataset import atomic_write_bytes

FACTORS = (1, 2, 4, 8, 16, 32)
PCA_MAGIC = b"MODP"
PLAN_MAGIC = b"MODS"


class PreprocessError(ValueError):
    pass


def flatten_frames(frames) -> np.ndarray:
    """(N, 2, L) frames -> (N, 2L) rows laid out as [I row | Q row]."""
    frames = np.asarray(frames)
    return frames.reshape(frames.shape[0], -1)


# --------------------------------------------------------------------------- PCA


@dataclass(frozen=True)
class PCAModel:
    mean: np.ndarray
    basis: np.ndarray  # (k, D), rows orthonormal, descending variance
    variances: np.ndarray

    @property
    def k(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


def pca_fit(train, k: int) -> PCAModel:
    x = np.asarray(train, dtype=np.float64)
    if x.ndim == 3:
        x = flatten_frames(x)
    n, d = x.shape
    if not 1 <= k <= d:
        raise PreprocessError(f"k must lie in [1, {d}], got {k}")
    if n <= k:
        raise PreprocessError(f"need more samples than components (N={n}, k={k})")
    mean = x.mean(axis=0)
    centered = x - mean
    if not np.any(centered):
        raise PreprocessError("training data has zero variance")
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    basis = vt[:k].copy()
    variances = s[:k] ** 2 / (n - 1)
    pivot = np.argmax(np.abs(basis), axis=1)
    signs = np.sign(basis[np.arange(k), pivot])
    basis *= signs[:, None]
    return PCAModel(mean, basis, variances)


def pca_project(model: PCAModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim >= 2 and x.shape[-2:] == (2, model.dim // 2):
        x = x.reshape(*x.shape[:-2], model.dim)
    if x.shape[-1] != model.dim:
        raise PreprocessError(f"PCA expects {model.dim}-dim input, got {x.shape[-1]}")
    return (x - model.mean) @ model.basis.T


def pca_transform(model: PCAModel, x) -> np.ndarray:
    """Project and reshape the k coefficients into 2 rows of k/2 for network input."""
    if model.k % 2:
        raise PreprocessError("k must be even to form a 2-row input")
    y = pca_project(model, x)
    return y.reshape(*y.shape[:-1], 2, model.k // 2)


def pca_inverse(model: PCAModel, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    y = y.reshape(*y.shape[:-2], model.k) if y.shape[-2:] == (2, model.k // 2) else y
    return y @ model.basis + model.mean


def reconstruction_error(model: PCAModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = flatten_frames(x)
    return float(np.mean((pca_inverse(model, pca_project(model, x)) - x) ** 2))


def save_pca(model: PCAModel, path) -> None:
    atomic_write_bytes(path, binio.pack(PCA_MAGIC, {"kind": "pca"}, {"mean": model.mean, "basis": model.basis, "variances": model.variances}))


def load_pca(path) -> PCAModel:
    _, arrays = binio.unpack(Path(path).read_bytes(), PCA_MAGIC)
    return PCAModel(arrays["mean"], arrays["basis"], arrays["variances"])


# ------------------------------------------------------------------ subsampling


@dataclass(frozen=True)
class SubsamplePlan:
    indices: np.ndarray
    method: str
    frame_len: int
    seed: int | None = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or (idx.size > 1 and np.any(np.diff(idx) <= 0)):
            raise PreprocessError("plan indices must be strictly increasing")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.frame_len):
            raise PreprocessError("plan index out of range")
        object.__setattr__(self, "indices", idx)

    @property
    def factor(self) -> int:
        return self.frame_len // len(self.indices)


def _check_factor(frame_len: int, factor: int) -> None:
    if factor not in FACTORS:
        raise PreprocessError(f"factor must be one of {FACTORS}, got {factor}")
    if frame_len % factor:
        raise PreprocessError(f"frame length {frame_len} is not divisible by {factor}")


def uniform_plan(frame_len: int, factor: int) -> SubsamplePlan:
    _check_factor(frame_len, factor)
    return SubsamplePlan(np.arange(0, frame_len, factor), "uniform", frame_len)


def random_plan(frame_len: int, factor: int, seed: int) -> SubsamplePlan:
    """One random index set, drawn once and shared by every train and test frame."""
    _check_factor(frame_len, factor)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(frame_len, size=frame_len // factor, replace=False))
    return SubsamplePlan(idx, "random", frame_len, seed)


def apply_plan(frame, plan: SubsamplePlan) -> np.ndarray:
    """Keep the plan's time indices from both rows; works on (2, L) or (N, 2, L)."""
    frame = np.asarray(frame)
    if frame.shape[-1] <= (plan.indices[-1] if plan.indices.size else -1):
        raise PreprocessError(f"plan index {plan.indices[-1]} outside frame of length {frame.shape[-1]}")
    return frame[..., plan.indices]


def magnitude_rank_indices(frames, keep: int) -> np.ndarray:
    frames = np.asarray(frames)
    mags = np.hypot(frames[..., 0, :], frames[..., 1, :])
    # stable sort on -|x|: equal magnitudes keep the earlier index first
    order = np.argsort(-mags, axis=-1, kind="stable")[..., :keep]
    return np.sort(order, axis=-1)


def magnitude_rank_subsample(frame, factor: int) -> np.ndarray:
    """Keep the L/factor largest-magnitude samples of each frame, in original time order."""
    frame = np.asarray(frame)
    L = frame.shape[-1]
    if factor < 1 or L % factor:
        raise PreprocessError(f"factor {factor} does not divide frame length {L}")
    idx = magnitude_rank_indices(frame, L // factor)
    return np.take_along_axis(frame, np.expand_dims(idx, -2).repeat(2, axis=-2), axis=-1)


def to_polar(frame) -> np.ndarray:
    """Rows become amplitude and phase/pi in (-1, 1]."""
    frame = np.asarray(frame)
    i, q = frame[..., 0, :], frame[..., 1, :]
    amp = np.hypot(i, q)
    phase = np.arctan2(q, i) / np.pi
    phase = np.where(phase == -1.0, 1.0, phase)
    return np.stack([amp, phase], axis=-2).astype(frame.dtype if frame.dtype.kind == "f" else np.float64)


def save_plan(plan: SubsamplePlan, path) -> None:
    header = {"method": plan.method, "frame_len": plan.frame_len, "seed": plan.seed}
    atomic_write_bytes(path, binio.pack(PLAN_MAGIC, header, {"indices": plan.indices}))


def load_plan(path) -> SubsamplePlan:
    header, arrays = binio.unpack(Path(path).read_bytes(), PLAN_MAGIC)
    return SubsamplePlan(arrays["indices"], header["method"], header["frame_len"], header["seed"])


# ------------------------------------------------------------ online threshold


def online_threshold_subsample(
    stream,
    threshold: float,
    budget: int,
    window: int = 64,
    step: float = 1.1,
    adapt: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Single-pass magnitude gate for arriving samples.

    A sample is kept when its magnitude is at least the current threshold.
    With ``adapt`` the threshold is multiplied by ``step`` whenever the kept
    rate over the trailing ``window`` samples exceeds ``budget / len(stream)``
    and divided by ``step`` when it falls below.  At most ``budget`` samples
    are emitted, in arrival order.  ``stream`` is complex or a (2, L) frame.
    """
    if budget < 1:
        raise PreprocessError("budget must be at least 1")
    x = np.asarray(stream)
    if x.ndim == 2 and x.shape[0] == 2 and not np.iscomplexobj(x):
        x = x[0] + 1j * x[1]
    mags = np.abs(x)
    target = budget / max(len(x), 1)
    kept_flags = np.zeros(len(x), dtype=bool)
    kept: list[int] = []
    in_window = 0
    seen_sum = 0.0
    for n, m in enumerate(mags):
        seen_sum += m
        if len(kept) < budget and m >= threshold:
            kept.append(n)
            kept_flags[n] = True
            in_window += 1
        if n >= window and kept_flags[n - window]:
            in_window -= 1
        if adapt:
            rate = in_window / min(n + 1, window)
            if rate > target:
                threshold = threshold * step if threshold > 0 else 0.1 * seen_sum / (n + 1)
            elif rate < target:
                threshold /= step
    idx = np.asarray(kept, dtype=np.int64)
    return x[idx], idx
