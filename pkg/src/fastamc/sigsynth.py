"""Noise-free complex baseband waveform synthesis for the ten modulation classes."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

DEFAULT_SPS = 8
DEFAULT_ROLLOFF = 0.35
DEFAULT_SPAN = 8

CPFSK_INDEX = 0.5
BFSK_INDEX = 1.0
WBFM_DEVIATION = 0.075
AM_CARRIER_LEVEL = 1.0
AM_AUDIO_GAIN = 0.5


class ModType(enum.IntEnum):
    BPSK = 0
    QPSK = 1
    PSK8 = 2
    QAM16 = 3
    QAM64 = 4
    BFSK = 5
    CPFSK = 6
    PAM4 = 7
    WBFM = 8
    AMDSB = 9

    @property
    def is_linear(self) -> bool:
        return self in _LINEAR

    @property
    def is_analog(self) -> bool:
        return self in (ModType.WBFM, ModType.AMDSB)


_LINEAR = {ModType.BPSK, ModType.QPSK, ModType.PSK8, ModType.QAM16, ModType.QAM64, ModType.PAM4}

BITS_PER_SYMBOL = {
    ModType.BPSK: 1,
    ModType.QPSK: 2,
    ModType.PSK8: 3,
    ModType.QAM16: 4,
    ModType.QAM64: 6,
    ModType.PAM4: 2,
    ModType.BFSK: 1,
    ModType.CPFSK: 1,
}


class ModulationError(ValueError):
    pass


@dataclass(frozen=True)
class SymbolStream:
    symbols: np.ndarray
    sps: int = DEFAULT_SPS

    def __post_init__(self):
        if self.sps < 2:
            raise ValueError(f"sps must be >= 2, got {self.sps}")


@dataclass(frozen=True)
class PulseShape:
    rolloff: float = DEFAULT_ROLLOFF
    span: int = DEFAULT_SPAN
    sps: int = DEFAULT_SPS
    kind: str = "rrc"
    taps: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind != "rrc":
            raise ValueError(f"unsupported pulse kind {self.kind!r}")
        if not 0.0 < self.rolloff < 1.0:
            raise ValueError("rolloff must lie in (0, 1)")
        object.__setattr__(self, "taps", rrc_taps(self.rolloff, self.span, self.sps))


def rrc_taps(rolloff: float, span: int, sps: int) -> np.ndarray:
    """Unit-energy root-raised-cosine taps, ``span * sps + 1`` long, symmetric."""
    n = np.arange(span * sps + 1) - span * sps / 2
    t = n / sps
    beta = rolloff
    taps = np.empty_like(t)
    for i, ti in enumerate(t):
        if np.isclose(ti, 0.0):
            taps[i] = 1.0 + beta * (4.0 / np.pi - 1.0)
        elif np.isclose(abs(ti), 1.0 / (4.0 * beta)):
            taps[i] = (beta / np.sqrt(2.0)) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
                + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
            )
        else:
            num = np.sin(np.pi * ti * (1 - beta)) + 4 * beta * ti * np.cos(np.pi * ti * (1 + beta))
            den = np.pi * ti * (1 - (4 * beta * ti) ** 2)
            taps[i] = num / den
    return taps / np.sqrt(np.sum(taps**2))


def _gray(m: np.ndarray) -> np.ndarray:
    return m ^ (m >> 1)


def _bits_to_int(bits: np.ndarray) -> np.ndarray:
    # MSB first
    weights = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return (bits * weights).sum(axis=-1)


def _gray_pam_levels(nbits: int) -> np.ndarray:
    """Amplitude level for each bit label of a reflected-Gray PAM axis."""
    order = 1 << nbits
    positions = np.arange(order)
    levels = np.empty(order)
    levels[_gray(positions)] = 2 * positions - (order - 1)
    return levels


def constellation(mod: ModType) -> np.ndarray:
    """Constellation point for every integer label (MSB-first bit labels)."""
    mod = ModType(mod)
    if mod == ModType.BPSK:
        return np.array([1.0 + 0j, -1.0 + 0j])
    if mod == ModType.QPSK:
        signs = np.array([1.0, -1.0])
        labels = np.arange(4)
        return (signs[labels >> 1] + 1j * signs[labels & 1]) / np.sqrt(2.0)
    if mod == ModType.PSK8:
        positions = np.arange(8)
        points = np.empty(8, dtype=complex)
        points[_gray(positions)] = np.exp(2j * np.pi * positions / 8)
        return points
    if mod in (ModType.QAM16, ModType.QAM64):
        half = BITS_PER_SYMBOL[mod] // 2
        axis = _gray_pam_levels(half)
        labels = np.arange(1 << (2 * half))
        points = axis[labels >> half] + 1j * axis[labels & ((1 << half) - 1)]
        return points / np.sqrt(np.mean(np.abs(points) ** 2))
    if mod == ModType.PAM4:
        axis = _gray_pam_levels(2)
        return axis.astype(complex) / np.sqrt(np.mean(axis**2))
    raise ModulationError(f"{mod.name} has no memoryless constellation")


def label_bits(mod: ModType) -> np.ndarray:
    """Bit pattern (rows, MSB first) of every constellation label."""
    k = BITS_PER_SYMBOL[ModType(mod)]
    labels = np.arange(1 << k)
    return (labels[:, None] >> np.arange(k - 1, -1, -1)) & 1


def map_bits(bits, mod: ModType, sps: int = DEFAULT_SPS) -> SymbolStream:
    mod = ModType(mod)
    if not mod.is_linear:
        raise ModulationError(f"map_bits does not handle {mod.name}; use its dedicated modulator")
    bits = np.asarray(bits, dtype=np.int64)
    k = BITS_PER_SYMBOL[mod]
    if bits.ndim != 1 or bits.size % k:
        raise ModulationError(f"{mod.name} needs a bit count divisible by {k}, got {bits.size}")
    labels = _bits_to_int(bits.reshape(-1, k))
    return SymbolStream(constellation(mod)[labels], sps)


def pulse_shape(sym: SymbolStream, shape: PulseShape | np.ndarray) -> np.ndarray:
    taps = shape.taps if isinstance(shape, PulseShape) else np.asarray(shape, dtype=float)
    symbols = np.asarray(sym.symbols, dtype=complex)
    if taps.size == 0 or symbols.size == 0:
        raise ValueError("pulse_shape needs non-empty taps and symbols")
    n = symbols.size * sym.sps
    upsampled = np.zeros(n, dtype=complex)
    upsampled[:: sym.sps] = symbols
    full = np.convolve(upsampled, taps)
    delay = (taps.size - 1) // 2
    return full[delay : delay + n]


def cpfsk_modulate(bits, sps: int = DEFAULT_SPS, mod_index: float = CPFSK_INDEX) -> np.ndarray:
    """Continuous-phase binary FSK; bit 0 maps to frequency ``-mod_index / (2 sps)``."""
    if mod_index <= 0:
        raise ValueError("mod_index must be positive")
    bits = np.asarray(bits, dtype=np.int64)
    freq = np.repeat((2 * bits - 1) * mod_index / (2.0 * sps), sps)
    phase = 2 * np.pi * np.concatenate(([0.0], np.cumsum(freq)[:-1]))
    return np.exp(1j * phase)


def analog_modulate(
    audio,
    mod: ModType,
    deviation: float = WBFM_DEVIATION,
    carrier_level: float = AM_CARRIER_LEVEL,
    audio_gain: float = AM_AUDIO_GAIN,
) -> np.ndarray:
    """WBFM or AM-DSB baseband envelope of an audio sequence in [-1, 1].

    ``deviation`` is the peak frequency deviation in cycles/sample.
    """
    mod = ModType(mod)
    audio = np.asarray(audio, dtype=float)
    if mod == ModType.WBFM:
        phase = 2 * np.pi * deviation * np.concatenate(([0.0], np.cumsum(audio)[:-1]))
        return np.exp(1j * phase)
    if mod == ModType.AMDSB:
        return (carrier_level + audio_gain * audio).astype(complex)
    raise ModulationError(f"{mod.name} is not an analog modulation")


@dataclass(frozen=True)
class SourceConfig:
    seed: int = 0
    n_tones: int = 3
    noise_fraction: float = 0.2
    tone_band: tuple[float, float] = (0.002, 0.02)
    noise_cutoff: float = 0.03
    gap_probability: float = 0.15
    gap_length: tuple[int, int] = (64, 256)


def random_bits(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=n, dtype=np.int64)


def synthetic_audio(n: int, cfg: SourceConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Voice-like stand-in: drifting tones, band-limited noise and silent gaps, peak-normalised."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    t = np.arange(n)
    lo, hi = cfg.tone_band
    audio = np.zeros(n)
    for _ in range(cfg.n_tones):
        f0 = rng.uniform(lo, hi)
        drift = rng.normal(0.0, 0.05 * f0, size=n // 64 + 2)
        # slow piecewise-linear frequency drift
        freq = f0 + np.interp(t, np.arange(drift.size) * 64, np.cumsum(drift) / np.sqrt(drift.size))
        freq = np.clip(freq, lo / 2, hi * 1.5)
        phase = 2 * np.pi * np.cumsum(freq) + rng.uniform(0, 2 * np.pi)
        audio += rng.uniform(0.5, 1.0) * np.sin(phase)
    audio /= max(np.max(np.abs(audio)), 1e-12)

    white = rng.standard_normal(n + 64)
    kernel = np.sinc(2 * cfg.noise_cutoff * (np.arange(65) - 32)) * np.hamming(65)
    noise = np.convolve(white, kernel, mode="same")[32 : 32 + n]
    noise /= max(np.max(np.abs(noise)), 1e-12)
    audio = (1 - cfg.noise_fraction) * audio + cfg.noise_fraction * noise

    if cfg.gap_probability > 0 and rng.random() < cfg.gap_probability:
        glen = int(rng.integers(cfg.gap_length[0], cfg.gap_length[1] + 1))
        start = int(rng.integers(0, max(n - glen, 0) + 1))
        audio[start : start + glen] = 0.0
    peak = np.max(np.abs(audio))
    return audio / peak if peak > 0 else audio


def modulate(
    mod: ModType,
    n_samples: int,
    rng: np.random.Generator,
    sps: int = DEFAULT_SPS,
    shape: PulseShape | None = None,
    source: SourceConfig | None = None,
) -> np.ndarray:
    """Noise-free waveform of at least ``n_samples`` samples for ``mod`` from a fresh random source."""
    mod = ModType(mod)
    n_sym = -(-n_samples // sps)
    if mod.is_linear:
        shape = shape or PulseShape(sps=sps)
        bits = random_bits(n_sym * BITS_PER_SYMBOL[mod], rng)
        # sqrt(sps) brings the shaped waveform to unit average power
        return np.sqrt(sps) * pulse_shape(map_bits(bits, mod, sps), shape)[:n_samples]
    if mod == ModType.BFSK:
        return cpfsk_modulate(random_bits(n_sym, rng), sps, BFSK_INDEX)[:n_samples]
    if mod == ModType.CPFSK:
        return cpfsk_modulate(random_bits(n_sym, rng), sps, CPFSK_INDEX)[:n_samples]
    audio = synthetic_audio(n_samples, source or SourceConfig(), rng)
    return analog_modulate(audio, mod)
