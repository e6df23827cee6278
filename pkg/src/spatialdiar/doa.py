"""Per-speaker direction of arrival from annotated single-speaker speech.

The direction is the azimuth on a regular grid that maximizes the mean
normalized angle feature over the speaker's pooled time-frequency bins.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import intervals as iv
from .annotations import Annotation
from .signals import ChannelSpectrogram, MultiChannelAudio, StftConfig, stft
from .spatial import DEFAULT_PAIRS, ArrayGeometry, MicPair, circular_distance, ipd, steering_phase

SPEECH_BAND = (300.0, 3400.0)
ACTIVE_FLOOR_DB = 40.0


@dataclass
class DoaEstimate:
    speaker: str
    theta: float
    score: float
    segment_seconds: float
    confidence: float = 0.0
    ambiguous: bool = False
    response: Optional[np.ndarray] = field(default=None, repr=False)


def pool_speaker_segments(annotation: Annotation, speaker: str,
                          min_duration: float = 0.5) -> List[iv.Interval]:
    """The speaker's non-overlapped speech, keeping pieces of at least
    ``min_duration`` seconds."""
    tracks = annotation.tracks()
    if speaker not in tracks:
        raise KeyError(f"speaker {speaker!r} not in annotation")
    others = [x for name, ints in tracks.items() if name != speaker for x in ints]
    solo = iv.subtract(tracks[speaker], others)
    return [(s, e) for s, e in solo if e - s >= min_duration]


def frames_within(segments, n_frames: int, hop_seconds: float, window_seconds: float) -> np.ndarray:
    """Mask of STFT frames lying entirely inside one of ``segments``."""
    starts = np.arange(n_frames) * hop_seconds
    ends = starts + window_seconds
    mask = np.zeros(n_frames, dtype=bool)
    eps = 1e-9
    for s, e in segments:
        mask |= (starts >= s - eps) & (ends <= e + eps)
    return mask


def steered_response(spec: ChannelSpectrogram, geom: ArrayGeometry, pairs: Sequence[MicPair],
                     frame_mask: np.ndarray, thetas: np.ndarray,
                     band: Tuple[float, float] = SPEECH_BAND) -> np.ndarray:
    """Mean normalized angle feature over active bins for every direction.

    Uses ``cos(a - b) = cos a cos b + sin a sin b`` so the IPD statistics
    are accumulated once per pair and bin.
    """
    pairs = list(pairs)
    freqs = spec.freqs
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    x = spec.values[:, frame_mask][:, :, in_band]
    power = np.mean(np.abs(x) ** 2, axis=0)
    if power.size == 0 or power.max() <= 0:
        active = np.ones(power.shape, dtype=bool)
    else:
        active = power >= power.max() * 10.0 ** (-ACTIVE_FLOOR_DB / 10.0)
    n_active = active.sum()
    resp = np.zeros(len(thetas))
    for pair in pairs:
        d = ipd(spec, pair)[frame_mask][:, in_band]
        c = np.where(active, np.cos(d), 0.0).sum(axis=0)
        s = np.where(active, np.sin(d), 0.0).sum(axis=0)
        phi = steering_phase(geom, pair, thetas[:, None], freqs[in_band][None, :])
        resp += np.cos(phi) @ c + np.sin(phi) @ s
    return resp / (len(pairs) * max(n_active, 1))


def estimate_doa(audio, geom: ArrayGeometry, pairs: Sequence[MicPair] = DEFAULT_PAIRS,
                 segments: Sequence[iv.Interval] = (), grid_step: float = 1.0,
                 speaker: str = "", cfg: StftConfig = StftConfig(),
                 band: Tuple[float, float] = SPEECH_BAND) -> DoaEstimate:
    """Grid-search DOA over the frames of ``segments``.

    ``audio`` may be a :class:`MultiChannelAudio` or a precomputed
    :class:`ChannelSpectrogram`.  Ties (within 1e-9) go to the smallest
    angle; ``ambiguous`` is set when another maximum lies more than two grid
    steps away.  ``confidence`` is peak minus median of the response.
    """
    n_grid = 360.0 / grid_step
    if grid_step <= 0 or abs(n_grid - round(n_grid)) > 1e-9:
        raise ValueError("grid_step must divide 360")
    segments = iv.normalize(segments)
    if not segments:
        raise ValueError("no segments to pool")
    spec = audio if isinstance(audio, ChannelSpectrogram) else stft(audio, cfg)
    # a spectrogram drops fewer than hop trailing samples
    duration = spec.frames * spec.hop_seconds + spec.config.window_len / spec.sample_rate
    if isinstance(audio, MultiChannelAudio):
        duration = audio.duration
    if segments[0][0] < 0 or segments[-1][1] > duration + 1e-6:
        raise ValueError("segments extend outside the audio")
    mask = frames_within(segments, spec.frames, spec.hop_seconds,
                         spec.config.window_len / spec.sample_rate)
    if not mask.any():
        raise ValueError("segments too short to contain a full analysis frame")
    thetas = np.arange(int(round(n_grid))) * grid_step
    resp = steered_response(spec, geom, pairs, mask, thetas, band)
    peak = resp.max()
    near = np.flatnonzero(resp >= peak - 1e-9 * max(1.0, abs(peak)))
    best = int(near[0])
    ambiguous = bool((circular_distance(thetas[near], thetas[best]) > 2 * grid_step).any())
    return DoaEstimate(
        speaker=speaker,
        theta=float(thetas[best]),
        score=float(resp[best]),
        segment_seconds=float(sum(e - s for s, e in segments)),
        confidence=float(peak - np.median(resp)),
        ambiguous=ambiguous,
        response=resp,
    )
