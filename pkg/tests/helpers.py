"""Shared builders for the test suite: tiny two-tone mixtures that keep
training-dynamics tests fast."""

import numpy as np

from tfsep.signal import (Waveform, dominant_labels, log_spectrogram,
                          scale_amplitude, silence_mask, synth_mixture)

TOY_WINDOW = 62
TOY_HOP = 31
TOY_FRAMES = 20
TOY_RATE = 8000

# STFT bin indices of the two tone pairs; disjoint frequency support.
TONE_BINS_A = (5, 9)
TONE_BINS_B = (20, 24)


def tone_wave(bins, seed, n_samples=TOY_WINDOW + (TOY_FRAMES - 1) * TOY_HOP):
    """Sum of bin-centred sines with seeded random phases, peak-normalised."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples) / TOY_RATE
    x = np.zeros(n_samples)
    for b in bins:
        freq = b * TOY_RATE / TOY_WINDOW
        x += np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    return Waveform(x / np.abs(x).max(), TOY_RATE)


def two_tone_example(seed):
    """Mixture of two band-disjoint tone pairs plus everything a separator
    needs: scaled magnitude, log magnitude, and dominant-source labels."""
    mixres = synth_mixture([tone_wave(TONE_BINS_A, 2 * seed),
                            tone_wave(TONE_BINS_B, 2 * seed + 1)],
                           window=TOY_WINDOW, hop=TOY_HOP)
    silence = silence_mask(mixres.mixture)
    labels = dominant_labels(mixres.sources, silence)
    x_scaled = scale_amplitude(mixres.mixture).values
    x_log = log_spectrogram(mixres.mixture).values
    return mixres, x_scaled, x_log, labels
