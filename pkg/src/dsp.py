"""
Time-domain conditioning of respiratory audio: resampling, cyclic duration normalization, band-pass filtering and
peak normalization.
"""
import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy import signal

RESAMPLE_KAISER_BETA = 8.6
RESAMPLE_TAPS_PER_PHASE = 64
BUTTERWORTH_ORDER = 4


class EmptyClip(ValueError):
    pass


class BandOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class ClipSource:
    recording_key: str
    cycle_index: Optional[int] = None


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    source: ClipSource = ClipSource("")

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("Sample rate must be positive, got {}".format(self.sample_rate))
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("Expected mono samples, got shape {}".format(samples.shape))
        if not np.all(np.isfinite(samples)):
            raise ValueError("Non-finite samples in clip {}".format(self.source))
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate

    def with_samples(self, samples, sample_rate=None):
        return AudioClip(samples, self.sample_rate if sample_rate is None else sample_rate, self.source)


class DurationMode(enum.Enum):
    EXACT = "exact"
    AT_LEAST = "at_least"


def resample_filter(up: int, down: int):
    """
    Kaiser windowed-sinc anti-aliasing filter for polyphase resampling, RESAMPLE_TAPS_PER_PHASE taps per phase of
    the faster of the two rates
    """
    max_rate = max(up, down)
    num_taps = RESAMPLE_TAPS_PER_PHASE * max_rate + 1
    return signal.firwin(num_taps, 1.0 / max_rate, window=("kaiser", RESAMPLE_KAISER_BETA))


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    if target_rate <= 0:
        raise ValueError("Target rate must be positive, got {}".format(target_rate))
    if target_rate == clip.sample_rate:
        return clip
    ratio = Fraction(int(target_rate), int(clip.sample_rate))
    up, down = ratio.numerator, ratio.denominator
    samples = signal.resample_poly(clip.samples, up, down, window=resample_filter(up, down))
    return clip.with_samples(samples, int(target_rate))


def normalize_duration(clip: AudioClip, target_s: float, mode: DurationMode) -> AudioClip:
    """
    Cyclic repetition of the clip. EXACT repeats then truncates to exactly target_s; AT_LEAST only repeats clips
    shorter than target_s, to the smallest whole number of copies reaching it.
    """
    if len(clip.samples) == 0:
        raise EmptyClip("Cannot normalize the duration of an empty clip {}".format(clip.source))
    if target_s <= 0:
        raise ValueError("Target duration must be positive, got {}".format(target_s))
    target_len = int(round(target_s * clip.sample_rate))
    n = len(clip.samples)
    if mode is DurationMode.EXACT:
        if n == target_len:
            return clip
        return clip.with_samples(np.resize(clip.samples, target_len))
    if n >= target_len:
        return clip
    copies = -(-target_len // n)
    return clip.with_samples(np.tile(clip.samples, copies))


def bandpass(clip: AudioClip, lo: float, hi: float) -> AudioClip:
    """
    Zero-phase (forward-backward) Butterworth band-pass. An upper edge exactly at Nyquist leaves only the lower
    edge, so the filter degenerates to a high-pass.
    """
    nyquist = clip.sample_rate / 2.0
    if not 0 < lo < hi <= nyquist:
        raise BandOutOfRange("Band [{}, {}] Hz is not inside (0, {}] Hz".format(lo, hi, nyquist))
    if hi == nyquist:
        sos = signal.butter(BUTTERWORTH_ORDER, lo, btype="highpass", fs=clip.sample_rate, output="sos")
    else:
        sos = signal.butter(BUTTERWORTH_ORDER, [lo, hi], btype="bandpass", fs=clip.sample_rate, output="sos")
    if len(clip.samples) == 0:
        return clip
    return clip.with_samples(signal.sosfiltfilt(sos, clip.samples))


def peak_normalize(clip: AudioClip) -> AudioClip:
    peak = np.max(np.abs(clip.samples)) if len(clip.samples) else 0.0
    if peak == 0:
        return clip
    return clip.with_samples(clip.samples / peak)


@dataclass(frozen=True)
class Conditioning:
    """Per-task conditioning chain: resample, duplicate to duration, optional band-pass, optional peak norm"""
    sample_rate: int
    duration_s: float
    duration_mode: DurationMode
    band: Optional[tuple] = None
    peak_normalize: bool = True

    def __call__(self, clip: AudioClip) -> AudioClip:
        clip = resample(clip, self.sample_rate)
        clip = normalize_duration(clip, self.duration_s, self.duration_mode)
        if self.band is not None:
            clip = bandpass(clip, *self.band)
        if self.peak_normalize:
            clip = peak_normalize(clip)
        return clip


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x ** 2))) if x.size else 0.0
