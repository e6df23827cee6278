"""Glue between recordings, annotations and the activity model.

Turns a multichannel recording plus a speaker list into
:class:`~spatialdiar.model.FusedFeatures`, runs inference back to RTTM
segments, and provides the baseline and scene sets used for evaluation.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .annotations import Annotation, frames_to_segments, postprocess, segments_to_frames
from .doa import DoaEstimate, estimate_doa, pool_speaker_segments
from .model import (FusedFeatures, ModelParams, TrainingScene, assemble_features,
                    forward, infer)
from .profiles import SpeakerProfile
from .scoring import DerReport, der
from .signals import (ChannelSpectrogram, MultiChannelAudio, StftConfig, band_pooling_matrix,
                      lps, stft)
from .simulator import SceneConfig, SceneTruth, synthesize_scene
from .spatial import DEFAULT_PAIRS, ArrayGeometry, MicPair, angle_features

logger = logging.getLogger(__name__)

# shorter solo pieces are tried in turn before falling back to the whole track
DOA_FALLBACK_DURATIONS = (0.5, 0.2, 0.05)


@dataclass
class FeatureSettings:
    stft: StftConfig = field(default_factory=StftConfig)
    n_bands: int = 16
    band_min: float = 125.0
    band_max: float = 4000.0
    reference_channel: int = 0
    pairs: Sequence[MicPair] = DEFAULT_PAIRS
    n_slots: int = 4
    grid_step: float = 1.0
    min_duration: float = 0.5


class BandFeatures:
    """Band-pooled LPS and on-demand band-pooled angle features of one
    recording."""

    def __init__(self, audio: MultiChannelAudio, geom: ArrayGeometry,
                 settings: FeatureSettings = FeatureSettings()):
        if audio.channels != geom.n_mics:
            raise ValueError(f"audio has {audio.channels} channels, geometry {geom.n_mics} mics")
        self.settings = settings
        self.geom = geom
        self.spec: ChannelSpectrogram = stft(audio, settings.stft)
        self.pool = band_pooling_matrix(self.spec.freqs, settings.n_bands,
                                        settings.band_min, settings.band_max)
        self.lps = lps(self.spec, settings.reference_channel) @ self.pool

    @property
    def hop_seconds(self) -> float:
        return self.spec.hop_seconds

    @property
    def frames(self) -> int:
        return self.spec.frames

    def af(self, thetas) -> np.ndarray:
        """K x T x B band-pooled normalized angle features."""
        full = angle_features(self.spec, self.geom, self.settings.pairs, thetas, normalize=True)
        return full @ self.pool

    def af_at(self, theta: float) -> np.ndarray:
        return self.af([theta])[0]


def estimate_speaker_doas(spec: ChannelSpectrogram, geom: ArrayGeometry, annotation: Annotation,
                          speakers: Sequence[str], settings: FeatureSettings = FeatureSettings()
                          ) -> Dict[str, DoaEstimate]:
    """DOA per speaker from the speaker's non-overlapped speech.

    When no solo piece reaches ``settings.min_duration`` the threshold is
    relaxed step by step; as a last resort the whole speaker track is used.
    """
    out = {}
    tracks = annotation.tracks()
    durations = [settings.min_duration] + [d for d in DOA_FALLBACK_DURATIONS
                                           if d < settings.min_duration]
    for name in speakers:
        est = None
        for d in durations:
            segs = pool_speaker_segments(annotation, name, d)
            try:
                est = estimate_doa(spec, geom, settings.pairs, segs, settings.grid_step,
                                   speaker=name, cfg=settings.stft)
                break
            except ValueError:
                continue
        if est is None:
            logger.warning("speaker %s has no usable solo speech; pooling the whole track", name)
            est = estimate_doa(spec, geom, settings.pairs, tracks[name], settings.grid_step,
                               speaker=name, cfg=settings.stft)
        out[name] = est
    return out


def recording_features(audio: MultiChannelAudio, geom: ArrayGeometry,
                       profiles: Sequence[SpeakerProfile],
                       settings: FeatureSettings = FeatureSettings(),
                       band: Optional[BandFeatures] = None) -> FusedFeatures:
    """Features for the speakers in ``profiles`` (their ``theta`` is used as
    the look direction); free slots are filled with virtual speakers."""
    band = band or BandFeatures(audio, geom, settings)
    thetas = np.array([p.theta for p in profiles], dtype=np.float64)
    af = band.af(thetas) if len(thetas) else np.zeros((0, band.frames, settings.n_bands))
    return assemble_features(band.lps, list(af), None, [p.embedding for p in profiles],
                             settings.n_slots, thetas=thetas, af_at=band.af_at,
                             names=[p.name for p in profiles], hop_seconds=band.hop_seconds)


def estimated_profiles(audio: MultiChannelAudio, geom: ArrayGeometry, annotation: Annotation,
                       embeddings: Dict[str, np.ndarray],
                       settings: FeatureSettings = FeatureSettings(),
                       band: Optional[BandFeatures] = None) -> List[SpeakerProfile]:
    """Profiles whose directions are estimated from ``annotation``."""
    band = band or BandFeatures(audio, geom, settings)
    names = annotation.speakers
    missing = [n for n in names if n not in embeddings]
    if missing:
        raise KeyError(f"no embedding for speakers {missing}")
    est = estimate_speaker_doas(band.spec, geom, annotation, names, settings)
    return [SpeakerProfile(n, est[n].theta, np.asarray(embeddings[n])) for n in names]


def scene_training_example(truth: SceneTruth, geom: ArrayGeometry,
                           settings: FeatureSettings = FeatureSettings(),
                           oracle_doa: bool = False) -> TrainingScene:
    """Features plus frame targets for a simulated scene.

    Directions are estimated from the reference annotation unless
    ``oracle_doa`` is set.
    """
    band = BandFeatures(truth.audio, geom, settings)
    if oracle_doa:
        profiles = list(truth.profiles)
    else:
        emb = {p.name: p.embedding for p in truth.profiles}
        profiles = estimated_profiles(truth.audio, geom, truth.annotation, emb, settings, band)
    feats = recording_features(truth.audio, geom, profiles, settings, band)
    targets = segments_to_frames(truth.annotation, feats.frames, feats.hop_seconds, feats.names)
    return TrainingScene(feats, targets.astype(np.float64))


def simulate_examples(configs: Sequence[SceneConfig], settings: FeatureSettings = FeatureSettings(),
                      jobs: int = 1, oracle_doa: bool = False, keep_audio: bool = False):
    """Simulate and featurize scenes; returns ``(truths, examples)``.

    The returned truths carry no audio unless ``keep_audio`` is set.
    """

    def one(cfg):
        truth = synthesize_scene(cfg)
        ex = scene_training_example(truth, cfg.geometry, settings, oracle_doa)
        return (truth if keep_audio else replace(truth, audio=None)), ex

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            res = list(pool.map(one, configs))
    else:
        res = [one(c) for c in configs]
    return [r[0] for r in res], [r[1] for r in res]


def activity_to_annotation(binary: np.ndarray, features: FusedFeatures, session: str,
                           min_on: float = 0.2, max_gap: float = 0.3) -> Annotation:
    """Real-slot columns of a binary activity matrix as post-processed
    segments; virtual slots are dropped."""
    real = np.asarray(features.real, dtype=bool)
    names = [n for n, r in zip(features.names, real) if r]
    ann = frames_to_segments(np.asarray(binary)[:, real], features.hop_seconds, names, session)
    return postprocess(ann, min_on, max_gap)


def diarize(params: ModelParams, features: FusedFeatures, session: str, threshold: float = 0.5,
            min_on: float = 0.2, max_gap: float = 0.3) -> Annotation:
    return activity_to_annotation(infer(params, features, threshold), features, session,
                                  min_on, max_gap)


def dominant_speaker_baseline(reference: Annotation) -> Annotation:
    """All reference speech attributed to the speaker who talks most."""
    tracks = reference.tracks()
    if not tracks:
        return Annotation(reference.session, [])
    top = max(sorted(tracks), key=lambda n: sum(e - s for s, e in tracks[n]))
    return Annotation.from_tracks(reference.session, {top: reference.speech()})


@dataclass
class EvalResult:
    report: DerReport
    per_scene: List[DerReport]
    hypotheses: List[Annotation]


def pooled_der(references: Sequence[Annotation], hypotheses: Sequence[Annotation],
               collar: float = 0.25) -> DerReport:
    """Corpus-level DER: error times summed over recordings before dividing.

    JER is the mean of the per-recording values.
    """
    reps = [der(r, h, collar) for r, h in zip(references, hypotheses)]
    return _pool(reps)


def _pool(reps: Sequence[DerReport]) -> DerReport:
    scored = sum(r.scored_time for r in reps)
    if scored <= 0:
        raise ValueError("no scored reference speech")
    fa = sum(r.fa * r.scored_time for r in reps) / scored
    miss = sum(r.miss * r.scored_time for r in reps) / scored
    sc = sum(r.sc * r.scored_time for r in reps) / scored
    jer = float(np.mean([r.jer for r in reps]))
    return DerReport(fa, miss, sc, fa + miss + sc, jer, scored, {})


def evaluate(params: ModelParams, truths: Sequence[SceneTruth], examples: Sequence[TrainingScene],
             collar: float = 0.25, threshold: float = 0.5, min_on: float = 0.2,
             max_gap: float = 0.3) -> EvalResult:
    hyps = [diarize(params, ex.features, t.annotation.session, threshold, min_on, max_gap)
            for t, ex in zip(truths, examples)]
    reps = [der(t.annotation, h, collar) for t, h in zip(truths, hyps)]
    return EvalResult(_pool(reps), reps, hyps)


def is_close_scene(truth: SceneTruth, limit: float = 45.0) -> bool:
    """True when some pair of speakers is at most ``limit`` degrees apart."""
    from .spatial import min_angular_difference
    return bool(min_angular_difference([p.theta for p in truth.profiles]).min() <= limit)


def scene_configs(n: int, seed0: int, rng_seed: int, duration: float = 20.0,
                  overlap=(0.3, 0.45), speakers=(2, 4), snr_db: Optional[float] = 20.0,
                  min_separation: float = 20.0,
                  geometry: Optional[ArrayGeometry] = None) -> List[SceneConfig]:
    """``n`` scene configs with seeds ``seed0, seed0 + 1, ...``; speaker count
    and overlap target are drawn from ``rng_seed``."""
    rng = np.random.default_rng(rng_seed)
    geometry = geometry or ArrayGeometry.circular()
    out = []
    for k in range(n):
        out.append(SceneConfig(
            n_speakers=int(rng.integers(speakers[0], speakers[1] + 1)),
            target_overlap_ratio=float(rng.uniform(*overlap)),
            duration=duration, snr_db=snr_db, seed=seed0 + k,
            min_separation=min_separation, geometry=geometry))
    return out


def close_pair_configs(n: int, seed0: int, rng_seed: int, duration: float = 20.0,
                       overlap=(0.3, 0.45), speakers=(2, 4), snr_db: Optional[float] = 20.0,
                       max_gap: float = 45.0, min_gap: float = 15.0,
                       geometry: Optional[ArrayGeometry] = None) -> List[SceneConfig]:
    """Scene configs in which two speakers are ``min_gap``..``max_gap``
    degrees apart and the rest are well separated from both."""
    rng = np.random.default_rng(rng_seed)
    geometry = geometry or ArrayGeometry.circular()
    out = []
    for k in range(n):
        n_spk = int(rng.integers(speakers[0], speakers[1] + 1))
        base = float(rng.uniform(0, 360))
        doas = [base, base + float(rng.uniform(min_gap, max_gap))]
        while len(doas) < n_spk:
            cand = float(rng.uniform(0, 360))
            if all(_cdist(cand, d) > max_gap + 15.0 for d in doas):
                doas.append(cand)
        order = rng.permutation(n_spk)
        out.append(SceneConfig(
            n_speakers=n_spk, doas=[doas[i] % 360.0 for i in order],
            target_overlap_ratio=float(rng.uniform(*overlap)),
            duration=duration, snr_db=snr_db, seed=seed0 + k, geometry=geometry))
    return out


def _cdist(a, b):
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)
