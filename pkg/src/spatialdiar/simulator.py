"""Far-field multi-channel meeting simulator.

Each speaker is a stationary source (tinted band-limited noise, or a set of
bin-centered tones) gated by a turn-taking activity pattern and propagated
to every microphone as a plane wave with a windowed-sinc fractional delay.
No reverberation is modeled.  Optional diffuse noise follows the spherically
isotropic coherence model.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from scipy.signal import oaconvolve
from scipy.special import i0

from . import intervals as iv
from .annotations import Annotation, Segment, overlap_ratio, rttm_write
from .profiles import SpeakerProfile, write_profiles
from .signals import (ChannelSpectrogram, MultiChannelAudio, StftConfig, hz_to_mel, istft,
                      mel_to_hz, write_wav)
from .spatial import ArrayGeometry, circular_distance

EMBEDDING_DIM = 16
TINT_DB = 24.0
SOURCE_BAND = (150.0, 4000.0)
OVERLAP_TOLERANCE = 0.05
_SPEAKER_TAG = 0x5EED
_VIRTUAL_TAG = 0x7A27


class InfeasibleSceneError(ValueError):
    pass


@dataclass
class SceneConfig:
    n_speakers: int = 3
    doas: Optional[Sequence[float]] = None
    min_separation: float = 30.0
    target_overlap_ratio: float = 0.35
    duration: float = 20.0
    snr_db: Optional[float] = None
    seed: int = 0
    sample_rate: int = 16000
    source: str = "noise"
    mean_turn: float = 2.5
    mean_pause: float = 0.5
    level_spread_db: float = 3.0
    geometry: ArrayGeometry = field(default_factory=ArrayGeometry.circular)

    def __post_init__(self):
        if not 2 <= self.n_speakers <= 4:
            raise ValueError("n_speakers must be between 2 and 4")
        if not 0.0 <= self.target_overlap_ratio < 1.0:
            raise ValueError("target_overlap_ratio must lie in [0, 1)")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.doas is not None and len(self.doas) != self.n_speakers:
            raise ValueError("one DOA per speaker required")
        if self.source not in ("noise", "tones"):
            raise ValueError("source must be 'noise' or 'tones'")


@dataclass
class SceneTruth:
    annotation: Annotation
    profiles: List[SpeakerProfile]
    audio: MultiChannelAudio
    tone_bins: Optional[List[np.ndarray]] = None


def speaker_embedding(seed: int, index: int, dim: int = EMBEDDING_DIM) -> np.ndarray:
    v = np.random.default_rng([_SPEAKER_TAG, seed, index]).standard_normal(dim)
    return v / np.linalg.norm(v)


def virtual_embedding(index: int, dim: int = EMBEDDING_DIM) -> np.ndarray:
    """Filler embedding from a pool whose seeds never collide with scene speakers."""
    v = np.random.default_rng([_VIRTUAL_TAG, index]).standard_normal(dim)
    return v / np.linalg.norm(v)


def random_doas(rng, n: int, min_separation: float, max_tries: int = 10000) -> np.ndarray:
    for _ in range(max_tries):
        t = np.round(rng.uniform(0.0, 360.0, n), 1) % 360.0
        d = circular_distance(t[:, None], t[None, :])
        np.fill_diagonal(d, 360.0)
        if d.min() >= min_separation:
            return t
    raise InfeasibleSceneError(f"cannot place {n} speakers {min_separation} degrees apart")


# ---------------------------------------------------------------------------
# turn taking


def _turn_draws(rng, n_max: int):
    return dict(
        dur=rng.exponential(1.0, n_max),
        pause=rng.exponential(1.0, n_max),
        ov=rng.uniform(0.0, 1.0, n_max),
        flag=rng.uniform(0.0, 1.0, n_max),
        pick=rng.uniform(0.0, 1.0, n_max),
    )


def _build_turns(draws, n_spk: int, duration: float, mean_turn: float, mean_pause: float,
                 amount: float) -> Annotation:
    """Lay out alternating turns; ``amount`` in [0, 3] controls overlap.

    The speaker order, turn lengths and raw pauses/overlaps are fixed by
    ``draws``.  Each transition is offset by
    ``max(0, 1 - amount) * pause - amount * depth * shorter_turn`` (never
    before the current onset), so the overlap
    grows continuously with ``amount``.  A speaker never overlaps itself.
    """
    n_max = len(draws["dur"])
    durs = np.clip(mean_turn * draws["dur"], 0.6, 2.0 * mean_turn)
    pauses = np.clip(mean_pause * draws["pause"], 0.05, 4.0 * mean_pause)
    depth = 0.2 + 0.8 * draws["ov"]
    order = []
    used = set()
    spk = int(draws["pick"][0] * n_spk)
    for k in range(n_max):
        order.append(spk)
        used.add(spk)
        others = [s for s in range(n_spk) if s != spk]
        fresh = [s for s in others if s not in used]
        pool = fresh or others
        spk = pool[int(draws["pick"][(k + 1) % n_max] * len(pool))]

    last_end = np.full(n_spk, -np.inf)
    segs = []
    onset = pauses[0]
    for k in range(n_max - 1):
        spk = order[k]
        onset = max(onset, last_end[spk])
        if onset >= duration:
            break
        end = onset + durs[k]
        segs.append(Segment(f"spk{spk + 1}", onset, min(end, duration) - onset))
        last_end[spk] = end
        shorter = min(durs[k], durs[k + 1])
        onset = max(onset, end + max(0.0, 1.0 - amount) * pauses[k + 1] - amount * depth[k] * shorter)
    return Annotation("scene", segs)


def _fit_overlap(draws, n_spk, duration, mean_turn, mean_pause, target):
    def build(a):
        return _build_turns(draws, n_spk, duration, mean_turn, mean_pause, a)

    def ratio(a):
        ann = build(a)
        return overlap_ratio(ann) if ann.segments else 0.0

    if target == 0:
        return build(0.0), 0.0
    # ratio(a) is continuous but not monotone: scan, then bisect a bracket
    grid = np.linspace(0.0, 3.0, 31)
    vals = np.array([ratio(a) for a in grid])
    k = int(np.argmin(np.abs(vals - target)))
    best_a, best_err = grid[k], abs(vals[k] - target)
    cross = np.flatnonzero((vals[:-1] - target) * (vals[1:] - target) <= 0)
    if len(cross):
        lo, hi = grid[cross[0]], grid[cross[0] + 1]
        lo_below = vals[cross[0]] < target
        for _ in range(30):
            if best_err < 1e-3:
                break
            mid = 0.5 * (lo + hi)
            r = ratio(mid)
            if abs(r - target) < best_err:
                best_a, best_err = mid, abs(r - target)
            if (r < target) == lo_below:
                lo = mid
            else:
                hi = mid
    return build(best_a), best_err


def generate_turns(rng, n_spk: int, duration: float, target: float, mean_turn: float = 2.5,
                   mean_pause: float = 0.5, max_attempts: int = 25) -> Annotation:
    """Turn annotation whose overlap ratio is within 5 points of ``target``.

    Fresh turn draws are taken from ``rng`` until the target is reachable.
    """
    n_max = int(np.ceil(4 * duration / 0.6)) + 8
    best_miss = np.inf
    for _ in range(max_attempts):
        ann, err = _fit_overlap(_turn_draws(rng, n_max), n_spk, duration, mean_turn, mean_pause, target)
        if err <= 0.01:
            return ann
        best_miss = min(best_miss, err)
    raise InfeasibleSceneError(f"overlap ratio {target} not reachable (closest miss {best_miss:.3f})")


# ---------------------------------------------------------------------------
# propagation


def fractional_delay_filter(delay: float, half_len: int = 64, beta: float = 8.0) -> np.ndarray:
    """Kaiser-windowed sinc delaying by ``half_len + delay`` samples."""
    n = np.arange(2 * half_len + 1) - half_len - delay
    w = np.where(np.abs(n) <= half_len, i0(beta * np.sqrt(np.clip(1 - (n / half_len) ** 2, 0, None))) / i0(beta), 0.0)
    return np.sinc(n) * w


def propagate(source: np.ndarray, geom: ArrayGeometry, theta: float, sample_rate: int,
              half_len: int = 64) -> np.ndarray:
    """Plane-wave image of a mono source on every microphone, M x N."""
    delays = geom.arrival_delays(theta) * sample_rate
    h = np.stack([fractional_delay_filter(d, half_len) for d in delays])
    y = oaconvolve(source[None, :], h, axes=1)
    return y[:, half_len:half_len + len(source)]


def activity_envelope(segments, n: int, sample_rate: int, ramp: float = 0.01) -> np.ndarray:
    env = np.zeros(n)
    r = max(1, int(round(ramp * sample_rate)))
    fade = 0.5 - 0.5 * np.cos(np.pi * (np.arange(r) + 0.5) / r)
    for s, e in segments:
        a, b = int(round(s * sample_rate)), min(n, int(round(e * sample_rate)))
        if b <= a:
            continue
        env[a:b] = 1.0
        k = min(r, (b - a) // 2)
        env[a:a + k] *= fade[:k]
        env[b - k:b] *= fade[:k][::-1]
    return env


def tinted_noise(rng, n: int, sample_rate: int, embedding: np.ndarray) -> np.ndarray:
    """Band-limited Gaussian noise with a per-band dB tint set by ``embedding``."""
    x = rng.standard_normal(n)
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    lo, hi = SOURCE_BAND
    edges = mel_to_hz(np.linspace(hz_to_mel(lo), hz_to_mel(hi), len(embedding) + 1))
    centers = 0.5 * (edges[:-1] + edges[1:])
    gain_db = np.interp(hz_to_mel(freqs), hz_to_mel(centers), TINT_DB * np.asarray(embedding))
    band = (freqs >= lo) & (freqs <= hi)
    spec *= np.where(band, 10.0 ** (gain_db / 20.0), 0.0)
    y = np.fft.irfft(spec, n=n)
    return y / np.sqrt(np.mean(y ** 2))


def tone_source(rng, n: int, sample_rate: int, bins: np.ndarray, fft_size: int) -> np.ndarray:
    t = np.arange(n) / sample_rate
    phases = rng.uniform(0, 2 * np.pi, len(bins))
    y = sum(np.cos(2 * np.pi * b * sample_rate / fft_size * t + p) for b, p in zip(bins, phases))
    return y / np.sqrt(np.mean(y ** 2))


def diffuse_noise(rng, geom: ArrayGeometry, n: int, sample_rate: int) -> np.ndarray:
    """Unit-power noise with spherically isotropic inter-mic coherence."""
    cfg = StftConfig(512, 256, 512, "hann")
    frames = 1 + int(np.ceil(max(0, n - cfg.window_len) / cfg.hop))
    m = geom.n_mics
    z = rng.standard_normal((cfg.n_bins, m, 2 * frames)).view(np.complex128) / np.sqrt(2)
    freqs = np.arange(cfg.n_bins) * sample_rate / cfg.fft_size
    dist = np.linalg.norm(geom.mic_positions[:, None] - geom.mic_positions[None], axis=-1)
    gamma = np.sinc(2.0 * freqs[:, None, None] * dist[None] / geom.sound_speed)
    w, v = np.linalg.eigh(gamma)
    mix = v * np.sqrt(np.clip(w, 0.0, None))[:, None, :]  # F x M x M, mix @ mix^H = gamma
    coloured = np.matmul(mix, z).transpose(1, 2, 0)
    total = (frames - 1) * cfg.hop + cfg.window_len
    y = istft(ChannelSpectrogram(coloured, sample_rate, cfg), length=max(n, total)).samples[:, :n]
    return y / np.sqrt(np.mean(y ** 2))


# ---------------------------------------------------------------------------


def synthesize_scene(config: SceneConfig) -> SceneTruth:
    """Render a scene and its ground truth; deterministic in ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    sr = config.sample_rate
    n = int(round(config.duration * sr))
    geom = config.geometry
    n_spk = config.n_speakers
    if config.doas is None:
        doas = random_doas(rng, n_spk, config.min_separation)
    else:
        doas = np.asarray(config.doas, dtype=np.float64) % 360.0
    turns = generate_turns(rng, n_spk, config.duration, config.target_overlap_ratio,
                           config.mean_turn, config.mean_pause)
    session = f"scene{config.seed:05d}"
    annotation = Annotation(session, turns.segments)
    tracks = annotation.tracks()

    names = [f"spk{i + 1}" for i in range(n_spk)]
    levels = 10.0 ** (rng.uniform(-1, 1, n_spk) * config.level_spread_db / 20.0)
    tone_bins = None
    if config.source == "tones":
        fft_size = 512
        lo = int(np.ceil(300.0 * fft_size / sr))
        hi = int(np.floor(3400.0 * fft_size / sr))
        # an even comb dealt round-robin keeps each speaker's own tones far
        # apart, so window leakage between them stays negligible
        n_tones = 6 * n_spk
        step = (hi - lo) // (n_tones - 1)
        start = lo + int(rng.integers(0, (hi - lo) - step * (n_tones - 1) + 1))
        comb = start + step * np.arange(n_tones)
        owner = rng.permutation(n_spk)
        tone_bins = [comb[owner[i]::n_spk] for i in range(n_spk)]

    clean = np.zeros((geom.n_mics, n))
    profiles = []
    for i, name in enumerate(names):
        emb = speaker_embedding(config.seed, i)
        src_rng = np.random.default_rng([config.seed, i, 1])
        if config.source == "tones":
            src = tone_source(src_rng, n, sr, tone_bins[i], 512)
        else:
            src = tinted_noise(src_rng, n, sr, emb)
        src = 0.05 * levels[i] * src * activity_envelope(tracks.get(name, []), n, sr)
        clean += propagate(src, geom, doas[i], sr)
        profiles.append(SpeakerProfile(name, float(doas[i]), emb))

    audio = clean
    if config.snr_db is not None and np.isfinite(config.snr_db):
        speech = iv.normalize(annotation.speech())
        mask = activity_envelope(speech, n, sr, ramp=1e-9) > 0
        p_speech = np.mean(clean[:, mask] ** 2) if mask.any() else np.mean(clean ** 2)
        noise = diffuse_noise(np.random.default_rng([config.seed, 99]), geom, n, sr)
        audio = clean + noise * np.sqrt(p_speech / 10.0 ** (config.snr_db / 10.0))
    return SceneTruth(annotation, profiles, MultiChannelAudio(audio, sr), tone_bins)


def overlap_mix_augment(chunk_a: MultiChannelAudio, chunk_b: MultiChannelAudio, ssr_db: float,
                        labels_a=None, labels_b=None):
    """Sum two chunks with ``chunk_b`` rescaled to the requested
    signal-to-signal ratio; frame labels, when given, are OR-ed."""
    a, b = chunk_a.samples, chunk_b.samples
    if a.shape != b.shape:
        raise ValueError(f"chunk shapes differ: {a.shape} vs {b.shape}")
    if chunk_a.sample_rate != chunk_b.sample_rate:
        raise ValueError("sample rates differ")
    rms_a = np.sqrt(np.mean(a ** 2))
    rms_b = np.sqrt(np.mean(b ** 2))
    if rms_a == 0 or rms_b == 0:
        raise ValueError("silent chunk: signal-to-signal ratio undefined")
    scale = rms_a / (rms_b * 10.0 ** (ssr_db / 20.0))
    mixed = MultiChannelAudio(a + scale * b, chunk_a.sample_rate)
    labels = None
    if labels_a is not None and labels_b is not None:
        labels = np.logical_or(labels_a, labels_b)
    return mixed, labels


def write_scene(truth: SceneTruth, directory, stem: Optional[str] = None, encoding: str = "float32"):
    """Write ``<stem>.wav``, ``<stem>.rttm`` and ``<stem>.profile``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or truth.annotation.session
    write_wav(truth.audio, directory / f"{stem}.wav", encoding)
    rttm_write([truth.annotation], directory / f"{stem}.rttm")
    write_profiles(truth.profiles, directory / f"{stem}.profile")
    return directory / f"{stem}.wav"
