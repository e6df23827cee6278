"""Plain-text ``key = value`` configuration files.

Three kinds share one syntax (``#`` starts a comment, blank lines are
ignored):

* pipeline configs (:class:`PipelineConfig`), loaded by :func:`load_config`;
* array geometry files with ``mic<k> = x y`` lines and repeatable
  ``pair = a b`` lines, both 1-based;
* scene configs for the simulator.
"""

import math
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .model import TrainConfig
from .signals import StftConfig
from .spatial import DEFAULT_PAIRS, SOUND_SPEED, ArrayGeometry, MicPair

CONFIG_ENV = "SPATIALDIAR_CONFIG"


class ConfigError(ValueError):
    """Syntax or value error in a configuration file."""

    def __init__(self, msg: str, path=None, lineno: Optional[int] = None, key: Optional[str] = None):
        self.path, self.lineno, self.key = path, lineno, key
        where = ""
        if path is not None:
            where = f"{path}:{lineno}: " if lineno else f"{path}: "
        super().__init__(where + msg)


def parse_kv(text: str, path="<string>") -> List[Tuple[str, str, int]]:
    """``(key, value, line number)`` triples in file order."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not key.replace("_", "").isalnum():
            raise ConfigError(f"invalid key {key!r}", path, lineno)
        out.append((key, value, lineno))
    return out


def _read(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise ConfigError("not a UTF-8 text file", path) from None


def _convert(kind, value: str, key: str, path, lineno):
    try:
        if kind is bool:
            v = value.lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind is int:
            return int(value)
        if kind is float:
            x = float(value)
            if math.isnan(x):
                raise ValueError
            return x
        return value
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}", path, lineno, key) from None


# ---------------------------------------------------------------------------
# pipeline config

# key -> (type, default, description)
_SCHEMA = {
    "collar": (float, 0.25, "scoring collar around reference boundaries, s"),
    "alpha": (float, 0.25, "weight of the frame speech-activity loss term"),
    "beta": (float, 0.25, "weight of the frame overlap loss term"),
    "gamma_min": (float, 0.8, "lower bound of the augmentation mixing weight"),
    "gamma_max": (float, 1.0, "upper bound of the augmentation mixing weight"),
    "theta_n_max": (float, 45.0, "upper bound of the shared-direction offset, deg"),
    "aug_prob": (float, 0.5, "fraction of training chunks given AF augmentation"),
    "n_slots": (int, 4, "speaker output slots"),
    "chunk_seconds": (float, 4.0, "training chunk length, s"),
    "lr": (float, 3e-3, "Adam learning rate"),
    "epochs": (int, 40, "maximum training epochs"),
    "batch_size": (int, 16, "chunks per mini-batch"),
    "val_fraction": (float, 0.1, "share of scenes held out for validation"),
    "plateau_patience": (int, 2, "epochs without improvement before lr decay"),
    "lr_factor": (float, 0.5, "learning rate decay factor"),
    "stop_patience": (int, 6, "epochs without improvement before stopping"),
    "hidden": (int, 32, "detector hidden units"),
    "sd_dim": (int, 4, "detector output units per slot"),
    "context": (int, 7, "combiner context frames on each side"),
    "dilation": (int, 2, "combiner frame spacing"),
    "threshold": (float, 0.5, "activity decision threshold"),
    "min_on": (float, 0.2, "shortest kept segment, s"),
    "max_gap": (float, 0.3, "longest filled gap, s"),
    "window_len": (int, 400, "STFT window, samples"),
    "hop": (int, 160, "STFT hop, samples"),
    "fft_size": (int, 512, "FFT size"),
    "window": (str, "hann", "STFT window type"),
    "n_bands": (int, 16, "mel bands for LPS and AF pooling"),
    "band_min": (float, 125.0, "lowest pooled frequency, Hz"),
    "band_max": (float, 4000.0, "highest pooled frequency, Hz"),
    "grid_step": (float, 1.0, "DOA search grid step, deg"),
    "min_duration": (float, 0.5, "shortest solo piece pooled for DOA, s"),
    "seed": (int, 0, "random seed"),
}


@dataclass
class PipelineConfig:
    collar: float = 0.25
    alpha: float = 0.25
    beta: float = 0.25
    gamma_min: float = 0.8
    gamma_max: float = 1.0
    theta_n_max: float = 45.0
    aug_prob: float = 0.5
    n_slots: int = 4
    chunk_seconds: float = 4.0
    lr: float = 3e-3
    epochs: int = 40
    batch_size: int = 16
    val_fraction: float = 0.1
    plateau_patience: int = 2
    lr_factor: float = 0.5
    stop_patience: int = 6
    hidden: int = 32
    sd_dim: int = 4
    context: int = 7
    dilation: int = 2
    threshold: float = 0.5
    min_on: float = 0.2
    max_gap: float = 0.3
    window_len: int = 400
    hop: int = 160
    fft_size: int = 512
    window: str = "hann"
    n_bands: int = 16
    band_min: float = 125.0
    band_max: float = 4000.0
    grid_step: float = 1.0
    min_duration: float = 0.5
    seed: int = 0

    def validate(self) -> "PipelineConfig":
        def need(ok, key, what):
            if not ok:
                raise ConfigError(f"{key} = {getattr(self, key)!r} out of range: {what}", key=key)

        for key in ("collar", "alpha", "beta", "min_on", "max_gap", "min_duration"):
            need(getattr(self, key) >= 0, key, "must be >= 0")
        need(0 <= self.gamma_min <= 1, "gamma_min", "must lie in [0, 1]")
        need(0 <= self.gamma_max <= 1, "gamma_max", "must lie in [0, 1]")
        need(self.gamma_min <= self.gamma_max, "gamma_max", "must be >= gamma_min")
        need(0 <= self.theta_n_max <= 180, "theta_n_max", "must lie in [0, 180]")
        need(0 <= self.aug_prob <= 1, "aug_prob", "must lie in [0, 1]")
        need(1 <= self.n_slots <= 8, "n_slots", "must lie in [1, 8]")
        need(self.chunk_seconds > 0, "chunk_seconds", "must be > 0")
        need(self.lr > 0 and math.isfinite(self.lr), "lr", "must be > 0")
        for key in ("epochs", "batch_size", "plateau_patience", "stop_patience", "hidden",
                    "sd_dim", "dilation", "n_bands"):
            need(getattr(self, key) >= 1, key, "must be >= 1")
        need(self.context >= 0, "context", "must be >= 0")
        need(0 <= self.val_fraction < 1, "val_fraction", "must lie in [0, 1)")
        need(0 < self.lr_factor < 1, "lr_factor", "must lie in (0, 1)")
        need(0 < self.threshold < 1, "threshold", "must lie in (0, 1)")
        need(self.hop >= 1, "hop", "must be >= 1")
        need(self.hop <= self.window_len, "window_len", "must be >= hop")
        need(self.window_len <= self.fft_size, "fft_size", "must be >= window_len")
        need(self.window in ("hann", "hamming", "rect", "boxcar"), "window",
             "must be one of hann, hamming, rect, boxcar")
        need(0 < self.band_min < self.band_max, "band_max", "must exceed band_min > 0")
        n_grid = 360.0 / self.grid_step if self.grid_step > 0 else 0.5
        need(self.grid_step > 0 and abs(n_grid - round(n_grid)) < 1e-9, "grid_step",
             "must divide 360")
        need(self.seed >= 0, "seed", "must be >= 0")
        return self

    def stft(self) -> StftConfig:
        return StftConfig(self.window_len, self.hop, self.fft_size, self.window)

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: getattr(self, k) for k in names})

    def feature_settings(self, pairs: Sequence[MicPair] = DEFAULT_PAIRS):
        from .pipeline import FeatureSettings
        return FeatureSettings(self.stft(), self.n_bands, self.band_min, self.band_max, 0,
                               tuple(pairs), self.n_slots, self.grid_step, self.min_duration)

    def echo(self) -> str:
        """All settings as a loadable config file with one comment per key."""
        lines = []
        for key, (_, _, desc) in _SCHEMA.items():
            lines.append(f"{key + ' = ' + _fmt(getattr(self, key)):<28}# {desc}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text: str, path="<string>") -> PipelineConfig:
    values: Dict[str, object] = {}
    seen: Dict[str, int] = {}
    for key, value, lineno in parse_kv(text, path):
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}", path, lineno, key)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first on line {seen[key]})", path, lineno, key)
        seen[key] = lineno
        values[key] = _convert(_SCHEMA[key][0], value, key, path, lineno)
    cfg = PipelineConfig(**values)
    try:
        return cfg.validate()
    except ConfigError as err:
        raise ConfigError(str(err), path, seen.get(err.key), err.key) from None


def load_config(path=None) -> PipelineConfig:
    """Read and validate a pipeline config.

    Without ``path`` the file named by ``$SPATIALDIAR_CONFIG`` is used, and
    without that the defaults.
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
        if path is None:
            return PipelineConfig()
    return parse_config(_read(path), path)


# ---------------------------------------------------------------------------
# geometry files


def parse_geometry(text: str, path="<string>") -> Tuple[ArrayGeometry, Tuple[MicPair, ...]]:
    mics: Dict[int, Tuple[float, float]] = {}
    pairs: List[Tuple[MicPair, int]] = []
    sound_speed = SOUND_SPEED
    for key, value, lineno in parse_kv(text, path):
        parts = value.split()
        if key == "sound_speed":
            sound_speed = _convert(float, value, key, path, lineno)
            if sound_speed <= 0:
                raise ConfigError("sound_speed must be > 0", path, lineno, key)
        elif key.startswith("mic") and key[3:].isdigit():
            k = int(key[3:])
            if k < 1:
                raise ConfigError("microphones are numbered from 1", path, lineno, key)
            if k in mics:
                raise ConfigError(f"duplicate {key}", path, lineno, key)
            if len(parts) != 2:
                raise ConfigError(f"{key}: expected 'x y' in meters", path, lineno, key)
            mics[k] = tuple(_convert(float, p, key, path, lineno) for p in parts)
        elif key == "pair":
            if len(parts) != 2:
                raise ConfigError("pair: expected two 1-based microphone numbers", path, lineno, key)
            a, b = (_convert(int, p, key, path, lineno) for p in parts)
            if a < 1 or b < 1 or a == b:
                raise ConfigError(f"pair {a} {b}: need two different numbers >= 1", path, lineno, key)
            pairs.append((MicPair(a - 1, b - 1), lineno))
        else:
            raise ConfigError(f"unknown key {key!r}", path, lineno, key)
    if len(mics) < 2:
        raise ConfigError("need at least two microphones", path)
    if sorted(mics) != list(range(1, len(mics) + 1)):
        raise ConfigError("microphones must be numbered 1..M without gaps", path)
    for pair, lineno in pairs:
        if pair.m1 >= len(mics) or pair.m2 >= len(mics):
            raise ConfigError(f"pair refers to a microphone beyond mic{len(mics)}", path, lineno, "pair")
    try:
        geom = ArrayGeometry([mics[k] for k in sorted(mics)], sound_speed)
    except ValueError as err:
        raise ConfigError(str(err), path) from None
    return geom, tuple(p for p, _ in pairs) or _default_pairs(geom)


def _default_pairs(geom: ArrayGeometry) -> Tuple[MicPair, ...]:
    if geom.n_mics % 2:
        raise ConfigError("no pairs given and an odd microphone count has no diametric pairs")
    h = geom.n_mics // 2
    return tuple(MicPair(i, i + h) for i in range(h))


def load_geometry(path) -> Tuple[ArrayGeometry, Tuple[MicPair, ...]]:
    return parse_geometry(_read(path), path)


def format_geometry(geom: ArrayGeometry, pairs: Sequence[MicPair]) -> str:
    lines = [f"sound_speed = {geom.sound_speed!r}"]
    for k, (x, y) in enumerate(geom.mic_positions, 1):
        lines.append(f"mic{k} = {float(x)!r} {float(y)!r}")
    lines += [f"pair = {p.m1 + 1} {p.m2 + 1}" for p in pairs]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# scene configs

_SCENE_KEYS = {
    "n_speakers": int, "doas": "floats", "min_separation": float, "target_overlap_ratio": float,
    "duration": float, "snr_db": "snr", "seed": int, "sample_rate": int, "source": str,
    "mean_turn": float, "mean_pause": float, "level_spread_db": float, "geometry": "path",
}


def parse_scene_config(text: str, path="<string>"):
    """Keyword arguments for :class:`~spatialdiar.simulator.SceneConfig`.

    ``doas`` is a space-separated list of degrees, ``snr_db = none`` means
    noiseless and ``geometry`` names a geometry file relative to the config.
    """
    from .simulator import SceneConfig

    kw = {}
    for key, value, lineno in parse_kv(text, path):
        kind = _SCENE_KEYS.get(key)
        if kind is None:
            raise ConfigError(f"unknown key {key!r}", path, lineno, key)
        if key in kw:
            raise ConfigError(f"duplicate key {key!r}", path, lineno, key)
        if kind == "floats":
            kw[key] = [_convert(float, v, key, path, lineno) for v in value.split()]
        elif kind == "snr":
            kw[key] = None if value.lower() in ("none", "inf") else _convert(float, value, key, path, lineno)
        elif kind == "path":
            gpath = Path(value)
            if not gpath.is_absolute() and path != "<string>":
                gpath = Path(path).parent / gpath
            kw[key] = load_geometry(gpath)[0]
        else:
            kw[key] = _convert(kind, value, key, path, lineno)
    try:
        return SceneConfig(**kw)
    except ValueError as err:
        raise ConfigError(str(err), path) from None


def load_scene_config(path):
    return parse_scene_config(_read(path), path)
