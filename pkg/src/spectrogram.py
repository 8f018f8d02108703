"""
Front-ends turning conditioned audio into 124 x T time-frequency images: continuous wavelet transform scalograms
(Morse and analytic Morlet mothers) and the gammatonegram, followed by time rescaling (10 s -> 154 columns),
log compression, splitting into non-overlapping 124 x 154 patches and per-patch standardization.
"""
import enum
import functools
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy import signal
from ssqueezepy import Wavelet, cwt

import hparams as hp
from dsp import AudioClip, BandOutOfRange

hp.add("fmin", 100.0, help="Lowest center frequency of every front-end (Hz)")
hp.add("fmax", 2000.0, help="Highest center frequency of every front-end (Hz)")
hp.add("n_freq", 124, help="Number of frequency rows")
hp.add("gamma_window", 512, help="Gammatonegram frame length (samples)")
hp.add("gamma_hop", 256, help="Gammatonegram hop (samples)")
hp.add("patch_width", 154, help="Patch width in columns, also the width of 10 s of audio")
hp.add("log_epsilon", 1e-6, help="Magnitudes are compressed as log(1 + x / log_epsilon)")

MORSE_GAMMA = 3.0
MORSE_BETA = 20.0
AMOR_CENTER = 6.0
PEAK_SEARCH_POINTS = 1 << 16
GAMMATONE_ORDER = 4
SECONDS_PER_PATCH = 10.0
STD_FLOOR = 1e-8


class ClipTooShort(ValueError):
    pass


class ImageTooNarrow(ValueError):
    pass


class FrontEndKind(enum.IntEnum):
    SCAL_MORSE = 0
    SCAL_AMOR = 1
    GAMMA = 2

    @property
    def cli_name(self):
        return self.name.lower().replace("_", "-")

    @classmethod
    def from_cli_name(cls, name):
        for kind in cls:
            if kind.cli_name == name:
                return kind
        raise ValueError("Unknown front-end '{}', expected one of {}".format(name, [k.cli_name for k in cls]))


class Mother(enum.Enum):
    MORSE = "morse"
    AMOR = "amor"


@dataclass(frozen=True)
class SpectrogramImage:
    values: np.ndarray
    kind: FrontEndKind
    freq_axis: np.ndarray
    source: str = ""

    @property
    def width(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class SpectrogramPatch:
    values: np.ndarray
    kind: FrontEndKind
    source: str = ""
    index: int = 0
    label: Optional[np.ndarray] = None


@dataclass(frozen=True)
class FrontEndSettings:
    fmin: float = 100.0
    fmax: float = 2000.0
    n_freq: int = 124
    gamma_window: int = 512
    gamma_hop: int = 256
    patch_width: int = 154
    log_epsilon: float = 1e-6

    @classmethod
    def from_hparams(cls):
        return cls(hp.get("fmin"), hp.get("fmax"), hp.get("n_freq"), hp.get("gamma_window"), hp.get("gamma_hop"),
                   hp.get("patch_width"), hp.get("log_epsilon"))


def _check_band(fmin, fmax, sample_rate):
    if not 0 < fmin < fmax <= sample_rate / 2.0:
        raise BandOutOfRange("Band [{}, {}] Hz is not inside (0, {}] Hz".format(fmin, fmax, sample_rate / 2.0))


def _interpolate_columns(values, target_T):
    """Linear interpolation along the last axis with both end columns pinned"""
    T = values.shape[-1]
    if T == target_T:
        return values
    if T == 1:
        return np.repeat(values, target_T, axis=-1)
    positions = np.linspace(0.0, T - 1, target_T)
    left = np.minimum(np.floor(positions).astype(np.int64), T - 2)
    frac = positions - left
    return values[..., left] * (1.0 - frac) + values[..., left + 1] * frac


@functools.lru_cache(maxsize=None)
def mother_wavelet(mother: Mother) -> Wavelet:
    if mother is Mother.MORSE:
        return Wavelet(("gmw", {"gamma": MORSE_GAMMA, "beta": MORSE_BETA}))
    return Wavelet(("morlet", {"mu": AMOR_CENTER}))


@functools.lru_cache(maxsize=None)
def peak_frequency(mother: Mother) -> float:
    """Radian frequency where the mother's response peaks at scale 1"""
    omega = np.linspace(0.0, 4.0 * np.pi, PEAK_SEARCH_POINTS)
    return float(omega[np.argmax(np.abs(mother_wavelet(mother).fn(omega)))])


def cwt_frequencies(fmin, fmax, n_freq):
    return np.geomspace(fmin, fmax, n_freq)


def cwt_scales(mother: Mother, freqs, sample_rate):
    """Scale that puts the mother's peak on each frequency (Hz)"""
    return peak_frequency(mother) * sample_rate / (2.0 * np.pi * np.asarray(freqs, dtype=np.float64))


def cwt_scalogram(clip: AudioClip, mother: Mother, fmin: float, fmax: float, n_freq: int,
                  target_T: Optional[int] = None) -> SpectrogramImage:
    """
    CWT magnitude at n_freq log-spaced center frequencies, one coefficient per input sample, computed by ssqueezepy
    over ascending scales (descending frequency) and flipped to ascending frequency. target_T rescales the
    result like rescale_time().
    """
    _check_band(fmin, fmax, clip.sample_rate)
    kind = FrontEndKind.SCAL_MORSE if mother is Mother.MORSE else FrontEndKind.SCAL_AMOR
    freqs = cwt_frequencies(fmin, fmax, n_freq)
    n = len(clip.samples)
    width = n if target_T is None else target_T
    values = np.zeros((n_freq, width), dtype=np.float64)
    if n == 0:
        return SpectrogramImage(values, kind, freqs, _source_key(clip))

    samples = np.asarray(clip.samples, dtype=np.float64)
    scales = cwt_scales(mother, freqs[::-1], clip.sample_rate)
    coefficients, *_ = cwt(samples, mother_wavelet(mother), scales=scales, fs=clip.sample_rate, l1_norm=True,
                           padtype="reflect")
    magnitude = np.abs(np.asarray(coefficients))[::-1].astype(np.float64)
    values[:] = magnitude if target_T is None else _interpolate_columns(magnitude, target_T)
    return SpectrogramImage(values, kind, freqs, _source_key(clip))


def erb(f):
    return 24.7 * (4.37 * f / 1000.0 + 1.0)


def erb_space(fmin, fmax, n_filters):
    """Center frequencies equally spaced on the ERB-rate scale, ascending, both ends included"""
    erb_low = 9.265 * np.log(1 + fmin / (24.7 * 9.265))
    erb_high = 9.265 * np.log(1 + fmax / (24.7 * 9.265))
    return 24.7 * 9.265 * (np.exp(np.linspace(erb_low, erb_high, n_filters) / 9.265) - 1)


def gammatone_centers(fmin, fmax, n_filters, sample_rate):
    """
    ERB-spaced centers from fmin to fmax, except that the top center stays half an ERB below Nyquist: a gammatone
    cannot be centered on Nyquist, so at 4 kHz with fmax = 2000 Hz the axis ends near 1880 Hz
    """
    nyquist = sample_rate / 2.0
    top = min(fmax, nyquist - erb(nyquist) / 2.0)
    return erb_space(fmin, top, n_filters)


def gammatone_filter(center, sample_rate):
    """4th-order FIR gammatone, long enough for the envelope to decay by ~100 dB, unit gain at its center"""
    bandwidth = 1.019 * erb(center)
    num_taps = int(np.ceil(20.0 / (2.0 * np.pi * bandwidth) * sample_rate))
    taps, _ = signal.gammatone(center, "fir", order=GAMMATONE_ORDER, numtaps=num_taps, fs=sample_rate)
    _, gain = signal.freqz(taps, worN=[center], fs=sample_rate)
    return taps / np.abs(gain[0])


def gammatonegram(clip: AudioClip, window: int, hop: int, n_filters: int, fmin: float, fmax: float,
                  target_T: Optional[int] = None) -> SpectrogramImage:
    """
    Time-domain gammatone filterbank; each frame holds the RMS of each filter output over the window.
    Frame count is floor((len - window) / hop) + 1.
    """
    if not window > hop > 0:
        raise ValueError("Expected window > hop > 0, got window={} hop={}".format(window, hop))
    _check_band(fmin, fmax, clip.sample_rate)
    n = len(clip.samples)
    if n < window:
        raise ClipTooShort("Clip of {} samples is shorter than the {} sample window".format(n, window))
    centers = gammatone_centers(fmin, fmax, n_filters, clip.sample_rate)
    n_frames = (n - window) // hop + 1
    starts = np.arange(n_frames) * hop
    values = np.zeros((n_filters, n_frames if target_T is None else target_T), dtype=np.float64)
    for row, center in enumerate(centers):
        output = signal.oaconvolve(clip.samples, gammatone_filter(center, clip.sample_rate))[:n]
        energy = np.concatenate([[0.0], np.cumsum(output ** 2)])
        frames = np.sqrt(np.maximum(energy[starts + window] - energy[starts], 0.0) / window)
        values[row] = frames if target_T is None else _interpolate_columns(frames, target_T)
    return SpectrogramImage(values, FrontEndKind.GAMMA, centers, _source_key(clip))


def rescale_time(img: SpectrogramImage, target_T: int) -> SpectrogramImage:
    if img.width < 1:
        raise ImageTooNarrow("Cannot rescale an image without columns")
    return SpectrogramImage(_interpolate_columns(img.values, target_T), img.kind, img.freq_axis, img.source)


def log_compress(img: SpectrogramImage, epsilon: float) -> SpectrogramImage:
    return SpectrogramImage(np.log1p(img.values / epsilon), img.kind, img.freq_axis, img.source)


def split_patches(img: SpectrogramImage, width: int) -> List[SpectrogramPatch]:
    n_patches = img.width // width
    if n_patches == 0:
        raise ImageTooNarrow("Image of width {} is narrower than one {} column patch".format(img.width, width))
    return [SpectrogramPatch(img.values[:, i * width:(i + 1) * width], img.kind, img.source, i)
            for i in range(n_patches)]


def standardize(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values)
    return (values - values.mean()) / max(float(values.std()), STD_FLOOR)


def columns_for(clip: AudioClip, patch_width: int) -> int:
    return max(1, int(round(clip.duration_s / SECONDS_PER_PATCH * patch_width)))


def compute_image(clip: AudioClip, kind: FrontEndKind, settings: FrontEndSettings) -> SpectrogramImage:
    """
    Front-end image of a conditioned clip: rescaled so that 10 s span patch_width columns, then log compressed
    """
    target_T = columns_for(clip, settings.patch_width)
    if kind is FrontEndKind.GAMMA:
        img = gammatonegram(clip, settings.gamma_window, settings.gamma_hop, settings.n_freq, settings.fmin,
                            settings.fmax, target_T=target_T)
    else:
        mother = Mother.MORSE if kind is FrontEndKind.SCAL_MORSE else Mother.AMOR
        img = cwt_scalogram(clip, mother, settings.fmin, settings.fmax, settings.n_freq, target_T=target_T)
    return log_compress(img, settings.log_epsilon)


def _source_key(clip: AudioClip):
    source = clip.source
    if source.cycle_index is None:
        return source.recording_key
    return "{}#{:03d}".format(source.recording_key, source.cycle_index)
