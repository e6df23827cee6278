"""Multi-channel audio container, WAV I/O and STFT analysis."""

import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

LPS_FLOOR = 1e-10


class WavError(Exception):
    pass


class MalformedWavError(WavError):
    pass


class UnsupportedEncodingError(WavError):
    pass


@dataclass
class MultiChannelAudio:
    """Synchronized samples, shape ``(channels, n_samples)``."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("audio needs at least one channel")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        self.samples = x
        self.sample_rate = int(self.sample_rate)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


def read_wav(path) -> MultiChannelAudio:
    """Read a PCM16 or float32 WAV file; samples are scaled to [-1, 1]."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    try:
        rate, data = wavfile.read(path)
    except (ValueError, EOFError, UnboundLocalError, struct.error) as exc:
        # scipy raises several exception types for truncated headers
        raise MalformedWavError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise UnsupportedEncodingError(f"{path}: unsupported sample type {data.dtype}")
    if x.ndim == 1:
        x = x[:, None]
    return MultiChannelAudio(x.T.copy(), rate)


def write_wav(audio: MultiChannelAudio, path, encoding: str = "float32") -> None:
    """Write interleaved PCM16 (``encoding="pcm16"``) or float32 WAV."""
    x = np.asarray(audio.samples)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("audio has no channels")
    if encoding == "float32":
        data = x.T.astype(np.float32)
    elif encoding == "pcm16":
        data = np.clip(np.round(x.T * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        wavfile.write(tmp, audio.sample_rate, np.ascontiguousarray(data))
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 400
    hop: int = 160
    fft_size: int = 512
    window: str = "hann"

    def __post_init__(self):
        if not (0 < self.hop <= self.window_len <= self.fft_size):
            raise ValueError("need 0 < hop <= window_len <= fft_size")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window_array(self) -> np.ndarray:
        if self.window in ("rect", "boxcar"):
            return np.ones(self.window_len)
        return get_window(self.window, self.window_len, fftbins=True)


@dataclass
class ChannelSpectrogram:
    """Complex STFT values, shape ``(channels, frames, bins)``."""

    values: np.ndarray
    sample_rate: int
    config: StftConfig

    @property
    def hop(self) -> int:
        return self.config.hop

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]

    @property
    def bins(self) -> int:
        return self.values.shape[2]

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(self.bins) * self.sample_rate / self.config.fft_size

    @property
    def hop_seconds(self) -> float:
        return self.config.hop / self.sample_rate

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def phase(self) -> np.ndarray:
        return np.angle(self.values)

    def check_channel(self, ch: int) -> None:
        if not 0 <= ch < self.channels:
            raise IndexError(f"channel {ch} out of range for {self.channels} channels")


def frame_count(n_samples: int, cfg: StftConfig) -> int:
    if n_samples < cfg.window_len:
        return 0
    return 1 + (n_samples - cfg.window_len) // cfg.hop


def stft(audio: MultiChannelAudio, cfg: StftConfig = StftConfig()) -> ChannelSpectrogram:
    """Frame, window and FFT every channel.  Frames start at sample 0 and
    no padding is applied, so ``T = 1 + (len - window_len) // hop``."""
    x = audio.samples
    n = x.shape[1]
    if n < cfg.window_len:
        raise ValueError(f"audio of {n} samples is shorter than one window ({cfg.window_len})")
    t = frame_count(n, cfg)
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.window_len, axis=1)[:, ::cfg.hop][:, :t]
    spec = np.fft.rfft(frames * cfg.window_array(), n=cfg.fft_size, axis=-1)
    return ChannelSpectrogram(spec, audio.sample_rate, cfg)


def istft(spec: ChannelSpectrogram, length: int = None) -> MultiChannelAudio:
    """Least-squares overlap-add inverse of :func:`stft`.

    Samples not covered by any frame come back as zero.
    """
    cfg = spec.config
    win = cfg.window_array()
    frames = np.fft.irfft(spec.values, n=cfg.fft_size, axis=-1)[..., :cfg.window_len]
    n_out = (spec.frames - 1) * cfg.hop + cfg.window_len
    y = np.zeros((spec.channels, n_out))
    norm = np.zeros(n_out)
    for t in range(spec.frames):
        sl = slice(t * cfg.hop, t * cfg.hop + cfg.window_len)
        y[:, sl] += frames[:, t] * win
        norm[sl] += win ** 2
    nz = norm > 1e-10
    y[:, nz] /= norm[nz]
    if length is not None:
        if length > n_out:
            y = np.pad(y, ((0, 0), (0, length - n_out)))
        y = y[:, :length]
    return MultiChannelAudio(y, spec.sample_rate)


def lps(spec: ChannelSpectrogram, channel: int) -> np.ndarray:
    """Log power spectrum ``log(|X|^2 + 1e-10)`` of one channel, T x F."""
    spec.check_channel(channel)
    return np.log(np.abs(spec.values[channel]) ** 2 + LPS_FLOOR)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def band_pooling_matrix(freqs: np.ndarray, n_bands: int = 16, fmin: float = 125.0,
                        fmax: float = 4000.0) -> np.ndarray:
    """F x B averaging matrix over mel-spaced rectangular bands.

    A band too narrow to contain a bin takes the bin nearest its center.
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_bands + 1))
    pool = np.zeros((len(freqs), n_bands))
    for b in range(n_bands):
        sel = (freqs >= edges[b]) & (freqs < edges[b + 1])
        if not sel.any():
            sel = np.zeros(len(freqs), dtype=bool)
            sel[int(np.argmin(np.abs(freqs - 0.5 * (edges[b] + edges[b + 1]))))] = True
        pool[sel, b] = 1.0 / sel.sum()
    return pool
