"""Labelled 2xL I/Q frames: windowing, balanced generation, stratified splits, binary I/O.

File layout (all little-endian)::

    b"MODC"  u16 version  u32 n_examples  u16 frame_len
    n_examples x (u8 mod, i8 snr_db, float32[2 * frame_len])   # I row then Q row
    u64 checksum                                              # blake2b-64 of the records

A JSON sidecar (``<path>.json``) carries the split seed, the generation
metadata and its SHA-256 digest.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import channel, sigsynth
from .channel import SNR_GRID, ChannelDrawConfig
from .sigsynth import ModType

MAGIC = b"MODC"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIH")
_CHECKSUM = struct.Struct("<Q")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledExample:
    frame: np.ndarray
    mod: ModType
    snr_db: int


def check_frame(frame, frame_len: int | None = None) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 2 or frame.shape[0] != 2 or (frame_len is not None and frame.shape[1] != frame_len):
        raise DatasetError(f"expected a 2x{frame_len or 'L'} frame, got shape {frame.shape}")
    if not np.all(np.isfinite(frame)):
        raise DatasetError("frame contains non-finite values")
    return frame


def to_iq(x) -> np.ndarray:
    x = np.asarray(x)
    return np.stack([x.real, x.imag], axis=-2).astype(np.float32)


def window_frames(stream, frame_len: int = 128, shift: int = 64) -> np.ndarray:
    """Slice a complex stream into ``(n_frames, 2, frame_len)`` float32 frames."""
    if frame_len <= 0 or not 0 < shift <= frame_len:
        raise DatasetError("need frame_len > 0 and 0 < shift <= frame_len")
    stream = np.asarray(stream)
    if stream.size < frame_len:
        return np.zeros((0, 2, frame_len), dtype=np.float32)
    n = (stream.size - frame_len) // shift + 1
    idx = np.arange(n)[:, None] * shift + np.arange(frame_len)
    return to_iq(stream[idx])


class Dataset:
    """Balanced collection of labelled frames backed by contiguous arrays."""

    def __init__(self, frames, mods, snrs, split_seed: int | None = None, metadata: dict | None = None):
        self.frames = np.ascontiguousarray(frames, dtype=np.float32)
        self.mods = np.asarray(mods, dtype=np.uint8)
        self.snrs = np.asarray(snrs, dtype=np.int8)
        if self.frames.ndim != 3 or self.frames.shape[1] != 2:
            raise DatasetError(f"frames must be (N, 2, L), got {self.frames.shape}")
        if not len(self.frames) == len(self.mods) == len(self.snrs):
            raise DatasetError("frames and labels disagree in length")
        self.split_seed = split_seed
        self.metadata = dict(metadata or {})

    @property
    def frame_len(self) -> int:
        return self.frames.shape[2]

    def __len__(self) -> int:
        return len(self.mods)

    def __getitem__(self, i: int) -> LabeledExample:
        return LabeledExample(self.frames[i], ModType(int(self.mods[i])), int(self.snrs[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.frames.shape == other.frames.shape
            and np.array_equal(self.frames.view(np.uint32), other.frames.view(np.uint32))
            and np.array_equal(self.mods, other.mods)
            and np.array_equal(self.snrs, other.snrs)
            and self.split_seed == other.split_seed
            and self.digest == other.digest
        )

    @property
    def digest(self) -> str:
        return metadata_digest(self.metadata)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.frames[idx], self.mods[idx], self.snrs[idx], self.split_seed, self.metadata)

    def cell_counts(self) -> Counter:
        return Counter(zip(self.mods.tolist(), self.snrs.tolist()))

    def snr_values(self) -> list[int]:
        return sorted(set(self.snrs.tolist()))


def metadata_digest(metadata: dict) -> str:
    blob = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class GenerationConfig:
    total_examples: int = 20_000
    seed: int = 0
    frame_len: int = 128
    shift: int = 64
    sps: int = sigsynth.DEFAULT_SPS
    rolloff: float = sigsynth.DEFAULT_ROLLOFF
    span: int = sigsynth.DEFAULT_SPAN
    mode: str = "single"  # or "stream"
    frames_per_stream: int = 16
    mods: tuple[int, ...] = tuple(int(m) for m in ModType)
    snrs: tuple[int, ...] = SNR_GRID
    channel: ChannelDrawConfig = field(default_factory=ChannelDrawConfig)

    def __post_init__(self):
        if self.total_examples < 0:
            raise DatasetError("total_examples must be non-negative")
        if self.mode not in ("single", "stream"):
            raise DatasetError(f"unknown generation mode {self.mode!r}")
        if self.frame_len <= 0 or not 0 < self.shift <= self.frame_len:
            raise DatasetError("need frame_len > 0 and 0 < shift <= frame_len")
        if any(s not in SNR_GRID for s in self.snrs):
            raise DatasetError(f"snr values must come from {SNR_GRID}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mods"] = list(self.mods)
        d["snrs"] = list(self.snrs)
        d["channel"]["amplitude"] = list(self.channel.amplitude)
        d["channel"]["snr_grid"] = list(self.channel.snr_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationConfig":
        d = dict(d)
        ch = dict(d.pop("channel", {}) or {})
        for key in ("amplitude", "snr_grid"):
            if key in ch:
                ch[key] = tuple(ch[key])
        for key in ("mods", "snrs"):
            if key in d:
                d[key] = tuple(int(v) for v in d[key])
        return cls(channel=ChannelDrawConfig(**ch), **d)


def _margin(cfg: GenerationConfig) -> int:
    return cfg.span * cfg.sps


def _single_example(cfg: GenerationConfig, idx: int, mod: int, snr: int, shape) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, idx])
    margin = _margin(cfg)
    n = cfg.frame_len + 2 * margin + 64
    x = sigsynth.modulate(ModType(mod), n, rng, cfg.sps, shape)
    params = cfg.channel.draw(rng, snr_db=snr, sps=cfg.sps)
    y = channel.apply_impairments(x, params)
    start = int(rng.integers(margin, n - margin - cfg.frame_len + 1))
    frame = y[start : start + cfg.frame_len]
    # SNR is referenced to this frame's own pre-noise power
    frame = channel.add_awgn(frame, snr, np.random.default_rng([cfg.seed, idx, 1]))
    return to_iq(frame)


def _stream_frames(cfg: GenerationConfig, cell: int, chunk: int, mod: int, snr: int, count: int, shape) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, cell, chunk, 2])
    margin = _margin(cfg)
    span = (count - 1) * cfg.shift + cfg.frame_len
    x = sigsynth.modulate(ModType(mod), span + 2 * margin, rng, cfg.sps, shape)
    params = cfg.channel.draw(rng, snr_db=snr, sps=cfg.sps)
    y = channel.apply_impairments(x, params)[margin : margin + span]
    y = channel.add_awgn(y, snr, rng)
    return window_frames(y, cfg.frame_len, cfg.shift)


def _cells(cfg: GenerationConfig) -> list[tuple[int, int]]:
    return [(m, s) for m in cfg.mods for s in cfg.snrs]


def generate_dataset(cfg: GenerationConfig) -> Dataset:
    """Balanced dataset: example ``i`` falls in cell ``i mod n_cells`` (mod-major, then SNR)."""
    cells = _cells(cfg)
    shape = sigsynth.PulseShape(cfg.rolloff, cfg.span, cfg.sps)
    L = cfg.frame_len
    frames = np.empty((cfg.total_examples, 2, L), dtype=np.float32)
    mods = np.empty(cfg.total_examples, dtype=np.uint8)
    snrs = np.empty(cfg.total_examples, dtype=np.int8)
    for i in range(cfg.total_examples):
        mods[i], snrs[i] = cells[i % len(cells)]

    if cfg.mode == "single":
        for i in range(cfg.total_examples):
            frames[i] = _single_example(cfg, i, int(mods[i]), int(snrs[i]), shape)
    else:
        for c, (m, s) in enumerate(cells):
            slots = np.arange(c, cfg.total_examples, len(cells))
            for chunk, start in enumerate(range(0, slots.size, cfg.frames_per_stream)):
                part = slots[start : start + cfg.frames_per_stream]
                frames[part] = _stream_frames(cfg, c, chunk, m, s, part.size, shape)

    meta = {"generator": cfg.to_dict()}
    return Dataset(frames, mods, snrs, split_seed=None, metadata=meta)


def _cell_indices(ds: Dataset) -> dict[tuple[int, int], np.ndarray]:
    keys = ds.mods.astype(np.int64) * 256 + (ds.snrs.astype(np.int64) + 128)
    out = {}
    for key in np.unique(keys):
        m, s = divmod(int(key), 256)
        out[(m, s - 128)] = np.flatnonzero(keys == key)
    return out


def split(ds: Dataset, train_fraction: float, seed: int, strict: bool = True) -> tuple[Dataset, Dataset]:
    """Stratified split: each (mod, snr) cell is divided independently at ``train_fraction``.

    With ``strict`` a cell that would leave either side empty is an error.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DatasetError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for (m, s), idx in sorted(_cell_indices(ds).items()):
        n_train = int(round(idx.size * train_fraction))
        if strict and (n_train == 0 or n_train == idx.size):
            raise DatasetError(
                f"cell ({ModType(m).name}, {s} dB) has {idx.size} examples, too few to split at {train_fraction}"
            )
        perm = rng.permutation(idx)
        train_idx.append(perm[:n_train])
        test_idx.append(perm[n_train:])
    train_idx = np.sort(np.concatenate(train_idx)) if train_idx else np.zeros(0, np.int64)
    test_idx = np.sort(np.concatenate(test_idx)) if test_idx else np.zeros(0, np.int64)
    train, test = ds.subset(train_idx), ds.subset(test_idx)
    train.split_seed = test.split_seed = seed
    return train, test


def _record_dtype(frame_len: int) -> np.dtype:
    return np.dtype([("mod", "u1"), ("snr", "i1"), ("iq", "<f4", (2 * frame_len,))])


def _checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def dumps(ds: Dataset) -> bytes:
    L = ds.frame_len
    rec = np.empty(len(ds), dtype=_record_dtype(L))
    rec["mod"] = ds.mods
    rec["snr"] = ds.snrs
    rec["iq"] = ds.frames.reshape(len(ds), 2 * L)
    payload = rec.tobytes()
    return _HEADER.pack(MAGIC, FORMAT_VERSION, len(ds), L) + payload + _CHECKSUM.pack(_checksum(payload))


def loads(blob: bytes, sidecar: dict | None = None) -> Dataset:
    if len(blob) < _HEADER.size + _CHECKSUM.size:
        raise DatasetError("truncated dataset file")
    magic, version, n, L = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DatasetError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DatasetError(f"unsupported dataset format version {version}")
    dt = _record_dtype(L)
    expected = _HEADER.size + n * dt.itemsize + _CHECKSUM.size
    if len(blob) != expected:
        raise DatasetError(f"dataset file is {len(blob)} bytes, expected {expected} (truncated or padded)")
    payload = blob[_HEADER.size : -_CHECKSUM.size]
    (stored,) = _CHECKSUM.unpack(blob[-_CHECKSUM.size :])
    if stored != _checksum(payload):
        raise DatasetError("dataset checksum mismatch")
    rec = np.frombuffer(payload, dtype=dt)
    sidecar = sidecar or {}
    return Dataset(
        rec["iq"].reshape(n, 2, L).copy(),
        rec["mod"].copy(),
        rec["snr"].copy(),
        split_seed=sidecar.get("split_seed"),
        metadata=sidecar.get("metadata", {}),
    )


def save(ds: Dataset, path) -> None:
    atomic_write_bytes(path, dumps(ds))
    side = {"format_version": FORMAT_VERSION, "split_seed": ds.split_seed, "metadata": ds.metadata, "digest": ds.digest}
    atomic_write_bytes(sidecar_path(path), (json.dumps(side, indent=2, sort_keys=True) + "\n").encode())


def load(path) -> Dataset:
    path = Path(path)
    side = None
    sp = sidecar_path(path)
    if sp.exists():
        side = json.loads(sp.read_text())
        if side.get("digest") != metadata_digest(side.get("metadata", {})):
            raise DatasetError(f"metadata digest mismatch in {sp}")
    return loads(path.read_bytes(), side)
