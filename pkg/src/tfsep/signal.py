"""STFT front end, synthetic harmonic sources, and label construction.

Conventions used throughout the package:

  * float64 mono waveforms, integer sample rates
  * spectrograms are (f_bins, n_frames) with f_bins = window // 2 + 1
  * time-frequency bins vectorise as k = n * f_bins + f, i.e. frame-major,
    so a (f_bins, n_frames) array flattens via values.T.ravel()
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_WINDOW = 254
DEFAULT_HOP = 127
DEFAULT_RATE = 8000

SILENCE_THRESHOLD_DB = -40.0
LOG_FLOOR = 1e-16


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"waveform must be 1-d, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class Spectrogram:
    """A (f_bins, n_frames) array tagged with its analysis parameters.

    kind is one of 'complex', 'magnitude', 'log'.
    """

    values: np.ndarray
    window: int
    hop: int
    sample_rate: int
    kind: str = "complex"

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError(f"spectrogram must be 2-d, got shape {self.values.shape}")
        if self.kind not in ("complex", "magnitude", "log"):
            raise ValueError(f"unknown spectrogram kind {self.kind!r}")
        if self.values.shape[0] != self.window // 2 + 1:
            raise ValueError(
                f"{self.values.shape[0]} rows inconsistent with window {self.window} "
                f"(expected {self.window // 2 + 1})"
            )
        if self.kind == "magnitude" and self.values.size and self.values.min() < 0:
            raise ValueError("magnitude spectrogram has negative entries")

    @property
    def f_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class LabelMatrix:
    """One-hot dominant-source labels per vectorised bin; silent rows are all-zero."""

    y: np.ndarray          # (K, I) float64
    silence: np.ndarray    # (K,) bool
    f_bins: int
    n_frames: int

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        self.silence = np.asarray(self.silence, dtype=bool)
        k = self.f_bins * self.n_frames
        if self.y.shape[0] != k or self.silence.shape != (k,):
            raise ValueError(
                f"label shapes {self.y.shape}, {self.silence.shape} inconsistent with "
                f"{self.f_bins} bins x {self.n_frames} frames"
            )
        rowsum = self.y.sum(axis=1)
        if not (np.all(rowsum[self.silence] == 0.0) and np.all(rowsum[~self.silence] == 1.0)):
            raise ValueError("label rows must be one-hot on non-silent bins and zero on silent ones")

    @property
    def nonsilent_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.silence)


def hann_window(window: int) -> np.ndarray:
    """Periodic Hann: w[t] = 0.5 - 0.5 cos(2 pi t / window)."""
    t = np.arange(window, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * t / window)


def n_frames_for(n_samples: int, window: int, hop: int) -> int:
    if n_samples < window:
        raise ValueError(f"signal of {n_samples} samples is shorter than the window ({window})")
    return int(np.ceil((n_samples - window) / hop)) + 1


def samples_for_frames(n_frames: int, window: int, hop: int) -> int:
    """Largest signal length analysed into exactly n_frames (no partial tail)."""
    if n_frames < 1:
        raise ValueError("need at least one frame")
    return window + (n_frames - 1) * hop


def stft(wave: Waveform, window: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP) -> Spectrogram:
    """Hann-windowed short-time Fourier transform, one-sided.

    The final partial frame, if any, is zero-padded rather than dropped.
    """
    if hop <= 0 or hop > window:
        raise ValueError(f"hop must be in (0, window], got hop={hop}, window={window}")
    x = wave.samples
    frames = n_frames_for(len(x), window, hop)
    padded_len = window + (frames - 1) * hop
    if padded_len > len(x):
        x = np.concatenate([x, np.zeros(padded_len - len(x))])
    win = hann_window(window)
    seg = np.empty((window, frames), dtype=np.float64)
    for n in range(frames):
        seg[:, n] = x[n * hop:n * hop + window] * win
    values = np.fft.rfft(seg, axis=0)
    return Spectrogram(values, window=window, hop=hop, sample_rate=wave.sample_rate, kind="complex")


def istft(spec: Spectrogram, length: int | None = None) -> Waveform:
    """Overlap-add inverse of stft; exact away from the outermost window of samples.

    Each frame is inverse-transformed and overlap-added, then divided by the
    overlap-added analysis window.  Where that window sum is ~0 (the very
    edges, since the periodic Hann starts at zero) the output is left at 0.
    """
    if spec.kind != "complex":
        raise ValueError(f"istft needs a complex spectrogram, got kind {spec.kind!r}")
    window, hop = spec.window, spec.hop
    frames = spec.n_frames
    total = window + (frames - 1) * hop
    win = hann_window(window)
    out = np.zeros(total, dtype=np.float64)
    wsum = np.zeros(total, dtype=np.float64)
    seg = np.fft.irfft(spec.values, n=window, axis=0)
    for n in range(frames):
        lo = n * hop
        out[lo:lo + window] += seg[:, n]
        wsum[lo:lo + window] += win
    good = wsum > 1e-8
    out[good] /= wsum[good]
    out[~good] = 0.0
    if length is not None:
        if length > total:
            out = np.concatenate([out, np.zeros(length - total)])
        else:
            out = out[:length]
    return Waveform(out, spec.sample_rate)


def scale_amplitude(spec: Spectrogram) -> Spectrogram:
    """Magnitude normalised by its peak, so values land in [0, 1]."""
    mag = np.abs(spec.values)
    peak = mag.max()
    if peak == 0.0:
        raise ValueError("cannot scale an all-zero spectrogram")
    return Spectrogram(mag / peak, window=spec.window, hop=spec.hop,
                       sample_rate=spec.sample_rate, kind="magnitude")


def log_spectrogram(spec: Spectrogram) -> Spectrogram:
    """10 log10(|X| + 1e-16); the floor keeps exact zeros finite."""
    mag = np.abs(spec.values)
    return Spectrogram(10.0 * np.log10(mag + LOG_FLOOR), window=spec.window, hop=spec.hop,
                       sample_rate=spec.sample_rate, kind="log")


def vec_tf(a: np.ndarray) -> np.ndarray:
    """(f_bins, n_frames) -> (K,) with k = n * f_bins + f."""
    if a.ndim != 2:
        raise ValueError(f"vec_tf expects 2-d input, got shape {a.shape}")
    return np.ascontiguousarray(a.T).ravel()


def unvec_tf(v: np.ndarray, f_bins: int) -> np.ndarray:
    """Inverse of vec_tf."""
    if v.ndim != 1 or v.size % f_bins != 0:
        raise ValueError(f"cannot unflatten {v.shape} into rows of {f_bins} bins")
    return np.ascontiguousarray(v.reshape(-1, f_bins).T)


def silence_mask(spec: Spectrogram) -> np.ndarray:
    """Bins more than 40 dB below the mixture peak, vectorised bin order.

    The comparison is strict: a bin exactly at -40 dB counts as active.
    """
    mag = np.abs(spec.values)
    peak = mag.max()
    if peak == 0.0:
        return np.ones(mag.size, dtype=bool)
    level_db = 20.0 * np.log10(mag / peak + LOG_FLOOR)
    return vec_tf(level_db < SILENCE_THRESHOLD_DB)


def dominant_labels(source_specs: list[Spectrogram], silence: np.ndarray) -> LabelMatrix:
    """One-hot labels by per-bin magnitude argmax over sources.

    Ties go to the lowest source index (argmax convention).  Rows flagged
    silent get all-zero labels so they drop out of clustering losses.
    """
    if not source_specs:
        raise ValueError("need at least one source spectrogram")
    f_bins, frames = source_specs[0].values.shape
    for s in source_specs:
        if s.values.shape != (f_bins, frames):
            raise ValueError(f"source spectrogram shapes differ: {s.values.shape} vs {(f_bins, frames)}")
    mags = np.stack([np.abs(s.values) for s in source_specs])   # (I, F, N)
    winner = vec_tf(np.argmax(mags, axis=0))                    # (K,)
    k = f_bins * frames
    y = np.zeros((k, len(source_specs)), dtype=np.float64)
    y[np.arange(k), winner] = 1.0
    silence = np.asarray(silence, dtype=bool)
    y[silence] = 0.0
    return LabelMatrix(y=y, silence=silence, f_bins=f_bins, n_frames=frames)


def gen_harmonic_source(f0_hz: float, n_partials: int, duration_s: float,
                        sample_rate_hz: int = DEFAULT_RATE, seed: int = 0,
                        amplitude_envelope: np.ndarray | None = None) -> Waveform:
    """Sum of harmonics of f0 with 1/k partial weights, random phases, and a
    slowly varying amplitude envelope; peak-normalised.

    Pass amplitude_envelope (one value per sample) to override the random
    envelope; it must be non-negative and not identically zero.
    """
    if f0_hz <= 0 or n_partials < 1:
        raise ValueError(f"need f0 > 0 and at least one partial, got f0={f0_hz}, n_partials={n_partials}")
    if f0_hz * n_partials >= sample_rate_hz / 2:
        raise ValueError(
            f"partial {n_partials} of f0={f0_hz} Hz is at or above Nyquist for {sample_rate_hz} Hz"
        )
    n = int(round(duration_s * sample_rate_hz))
    if n < 1:
        raise ValueError(f"duration {duration_s}s too short at {sample_rate_hz} Hz")
    rng = np.random.default_rng(seed)
    t = np.arange(n) / sample_rate_hz
    x = np.zeros(n)
    for k in range(1, n_partials + 1):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        x += (1.0 / k) * np.sin(2.0 * np.pi * k * f0_hz * t + phase)
    if amplitude_envelope is None:
        # piecewise-linear envelope with ~4 knots per second
        n_knots = max(4, int(round(duration_s * 4)) + 1)
        knots = rng.uniform(0.3, 1.0, size=n_knots)
        env = np.interp(np.linspace(0.0, 1.0, n), np.linspace(0.0, 1.0, n_knots), knots)
    else:
        env = np.asarray(amplitude_envelope, dtype=np.float64)
        if env.shape != (n,):
            raise ValueError(f"envelope length {env.shape} does not match {n} samples")
        if env.min() < 0 or env.max() == 0:
            raise ValueError("envelope must be non-negative and not identically zero")
    x *= env
    peak = np.abs(x).max()
    if peak == 0.0:
        raise ValueError("generated source is identically zero")
    return Waveform(x / peak, sample_rate_hz)


@dataclass
class MixtureResult:
    mixture: Spectrogram                  # complex
    sources: list[Spectrogram]            # complex, weights already applied
    weights: np.ndarray                   # (I,)
    source_waves: list[np.ndarray] = field(default_factory=list)  # weighted time domain


def synth_mixture(sources: list[Waveform], weight_mode: str = "deterministic",
                  seed: int | None = None, window: int = DEFAULT_WINDOW,
                  hop: int = DEFAULT_HOP, weights: np.ndarray | None = None) -> MixtureResult:
    """Weight, sum, and analyse a set of sources.

    weight_mode 'random' draws each weight uniformly from [0, 1);
    'deterministic' uses weight 1.0 for every source; passing `weights`
    explicitly overrides both.  The mixture spectrogram is the sum of the
    weighted source spectrograms, so the two are consistent bin for bin.
    """
    if not sources:
        raise ValueError("need at least one source")
    n = len(sources[0].samples)
    rate = sources[0].sample_rate
    for s in sources:
        if len(s.samples) != n:
            raise ValueError(f"source lengths differ: {len(s.samples)} vs {n}")
        if s.sample_rate != rate:
            raise ValueError(f"source sample rates differ: {s.sample_rate} vs {rate}")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(sources),):
            raise ValueError(f"got {weights.shape} weights for {len(sources)} sources")
    elif weight_mode == "random":
        rng = np.random.default_rng(seed)
        weights = rng.uniform(0.0, 1.0, size=len(sources))
    elif weight_mode == "deterministic":
        weights = np.ones(len(sources))
    else:
        raise ValueError(f"unknown weight_mode {weight_mode!r}")
    waves = [w * s.samples for w, s in zip(weights, sources)]
    specs = [stft(Waveform(x, rate), window=window, hop=hop) for x in waves]
    mix_values = np.sum([s.values for s in specs], axis=0)
    mixture = Spectrogram(mix_values, window=window, hop=hop, sample_rate=rate, kind="complex")
    return MixtureResult(mixture=mixture, sources=specs, weights=weights, source_waves=waves)
