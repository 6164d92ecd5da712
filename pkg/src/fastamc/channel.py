"""Stochastic channel impairments: fading, timing/clock offset, carrier rotation, AWGN."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SNR_GRID = tuple(range(-20, 20, 2))


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelParams:
    amplitude: float = 1.0
    cfo: float = 0.0
    phase: float = 0.0
    jitter_std: float = 0.0
    timing_eps: float = 0.0
    fading_taps: np.ndarray = field(default_factory=lambda: np.ones(1, dtype=complex))
    sro_ppm: float = 0.0
    snr_db: float = math.inf
    seed: int = 0
    sps: int = 8

    def __post_init__(self):
        taps = np.asarray(self.fading_taps, dtype=complex)
        object.__setattr__(self, "fading_taps", taps)
        if self.amplitude <= 0:
            raise ChannelError("amplitude must be positive")
        if self.jitter_std < 0:
            raise ChannelError("jitter_std must be non-negative")
        if not 0.0 <= self.timing_eps < 1.0:
            raise ChannelError("timing_eps must lie in [0, 1)")
        if taps.size == 0 or abs(np.sum(np.abs(taps) ** 2) - 1.0) > 1e-6:
            raise ChannelError("fading taps must be power-normalised")


@dataclass(frozen=True)
class ChannelDrawConfig:
    """Ranges for per-frame channel draws. Frequencies in cycles/sample."""

    amplitude: tuple[float, float] = (0.75, 1.25)
    cfo_ppm: float = 500.0
    jitter_std: float = 0.01
    n_fading_taps: int = 3
    fading_decay: float = 0.5
    sro_ppm: float = 50.0
    snr_grid: tuple[int, ...] = SNR_GRID

    def __post_init__(self):
        vals = [*self.amplitude, self.cfo_ppm, self.jitter_std, self.fading_decay, self.sro_ppm]
        if not all(np.isfinite(vals)):
            raise ChannelError("draw bounds must be finite")
        if any(s not in SNR_GRID for s in self.snr_grid):
            raise ChannelError(f"snr values must come from {SNR_GRID}")

    def draw(self, rng: np.random.Generator, snr_db: float | None = None, sps: int = 8) -> ChannelParams:
        if snr_db is None:
            snr_db = float(rng.choice(self.snr_grid))
        powers = self.fading_decay ** np.arange(self.n_fading_taps)
        taps = np.sqrt(powers / 2) * (
            rng.standard_normal(self.n_fading_taps) + 1j * rng.standard_normal(self.n_fading_taps)
        )
        taps /= np.sqrt(np.sum(np.abs(taps) ** 2))
        return ChannelParams(
            amplitude=float(rng.uniform(*self.amplitude)),
            cfo=float(rng.uniform(-1, 1) * self.cfo_ppm * 1e-6),
            phase=float(rng.uniform(0, 2 * np.pi)),
            jitter_std=self.jitter_std,
            timing_eps=float(rng.uniform(0, 1)),
            fading_taps=taps,
            sro_ppm=float(rng.uniform(-1, 1) * self.sro_ppm),
            snr_db=snr_db,
            seed=int(rng.integers(0, 2**63 - 1)),
            sps=sps,
        )


def add_awgn(x, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Add circular complex Gaussian noise scaled to the mean power of ``x``."""
    x = np.asarray(x, dtype=complex)
    if x.size == 0:
        raise ChannelError("cannot add noise to an empty waveform")
    if math.isinf(snr_db) and snr_db > 0:
        return x.copy()
    power = np.mean(np.abs(x) ** 2)
    if power == 0:
        raise ChannelError("zero-power input: noise scale undefined for a finite SNR")
    sigma2 = power / 10 ** (snr_db / 10)
    noise = rng.standard_normal(x.size) + 1j * rng.standard_normal(x.size)
    return x + np.sqrt(sigma2 / 2) * noise


def apply_cfo_phase(x, cfo: float, phase: float, jitter_std: float, rng: np.random.Generator | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    n = np.arange(x.size)
    angle = 2 * np.pi * cfo * n + phase
    if jitter_std > 0:
        if rng is None:
            raise ChannelError("phase jitter needs a random generator")
        angle = angle + rng.normal(0.0, jitter_std, size=x.size)
    return x * np.exp(1j * angle)


def apply_fading(x, taps) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    return np.convolve(x, np.asarray(taps, dtype=complex))[: x.size]


def _interp(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    # linear interpolation at fractional positions; zero outside the record
    return np.interp(t, np.arange(x.size), x.real, left=0.0, right=0.0) + 1j * np.interp(
        t, np.arange(x.size), x.imag, left=0.0, right=0.0
    )


def apply_timing_sro(x, timing_eps: float, sro_ppm: float, sps: int = 8) -> np.ndarray:
    """Delay by ``timing_eps * sps`` samples, then resample at ratio ``1 + sro_ppm * 1e-6``."""
    x = np.asarray(x, dtype=complex)
    if not 0.0 <= timing_eps < 1.0:
        raise ChannelError("timing_eps must lie in [0, 1)")
    n = np.arange(x.size, dtype=float)
    y = x if timing_eps == 0 else _interp(x, n - timing_eps * sps)
    if sro_ppm == 0:
        return y.copy() if y is x else y
    return _interp(y, n / (1.0 + sro_ppm * 1e-6))


def apply_impairments(x, params: ChannelParams, rng: np.random.Generator | None = None) -> np.ndarray:
    """Every impairment except additive noise, in the fixed channel order."""
    rng = np.random.default_rng(params.seed) if rng is None else rng
    y = apply_fading(x, params.fading_taps)
    y = apply_timing_sro(y, params.timing_eps, params.sro_ppm, params.sps)
    return params.amplitude * apply_cfo_phase(y, params.cfo, params.phase, params.jitter_std, rng)


def apply_channel(x, params: ChannelParams) -> np.ndarray:
    """fading -> timing/SRO -> amplitude, CFO, phase, jitter -> AWGN; replayable from ``params.seed``."""
    rng = np.random.default_rng(params.seed)
    y = apply_impairments(x, params, rng)
    return add_awgn(y, params.snr_db, rng)


def empirical_snr_db(clean, noisy) -> float:
    clean = np.asarray(clean)
    noise = np.asarray(noisy) - clean
    return 10 * np.log10(np.mean(np.abs(clean) ** 2) / np.mean(np.abs(noise) ** 2))
