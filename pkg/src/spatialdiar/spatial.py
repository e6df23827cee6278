"""Array geometry, inter-channel phase differences and angle features.

Angles are azimuths in degrees, counter-clockwise from the +x axis, and a
direction always means the direction *towards* the source.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .signals import ChannelSpectrogram

SOUND_SPEED = 343.0
DEFAULT_RADIUS = 0.0425


@dataclass(frozen=True)
class MicPair:
    """Zero-based channel indices of a microphone pair."""

    m1: int
    m2: int

    def __post_init__(self):
        if self.m1 == self.m2:
            raise ValueError("a microphone pair needs two different channels")
        if self.m1 < 0 or self.m2 < 0:
            raise ValueError("channel indices must be non-negative")

    def swapped(self) -> "MicPair":
        return MicPair(self.m2, self.m1)


# diametric pairs (1,5), (2,6), (3,7), (4,8) of an 8-mic circle
DEFAULT_PAIRS = (MicPair(0, 4), MicPair(1, 5), MicPair(2, 6), MicPair(3, 7))


class ArrayGeometry:
    """Planar microphone positions in meters plus the speed of sound."""

    def __init__(self, mic_positions, sound_speed: float = SOUND_SPEED):
        pos = np.asarray(mic_positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 2:
            raise ValueError("need at least two (x, y) microphone positions")
        if sound_speed <= 0:
            raise ValueError("sound speed must be positive")
        d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        if (d[~np.eye(len(pos), dtype=bool)] <= 0).any():
            raise ValueError("microphone positions must be distinct")
        self.mic_positions = pos
        self.sound_speed = float(sound_speed)

    @classmethod
    def circular(cls, n_mics: int = 8, radius: float = DEFAULT_RADIUS,
                 sound_speed: float = SOUND_SPEED, start_deg: float = 0.0) -> "ArrayGeometry":
        ang = np.deg2rad(start_deg + 360.0 * np.arange(n_mics) / n_mics)
        return cls(radius * np.stack([np.cos(ang), np.sin(ang)], axis=1), sound_speed)

    @property
    def n_mics(self) -> int:
        return len(self.mic_positions)

    def check_pair(self, pair: MicPair) -> None:
        if pair.m1 >= self.n_mics or pair.m2 >= self.n_mics:
            raise IndexError(f"pair {pair} invalid for a {self.n_mics}-mic array")

    def arrival_delays(self, theta_deg: float) -> np.ndarray:
        """Plane-wave arrival time per mic relative to the array origin, seconds."""
        u = unit_vector(theta_deg)
        return -(self.mic_positions @ u) / self.sound_speed

    def __eq__(self, other):
        return (isinstance(other, ArrayGeometry)
                and np.array_equal(self.mic_positions, other.mic_positions)
                and self.sound_speed == other.sound_speed)

    def __repr__(self):
        return f"ArrayGeometry(n_mics={self.n_mics}, c={self.sound_speed})"


def unit_vector(theta_deg) -> np.ndarray:
    t = np.deg2rad(theta_deg)
    return np.stack([np.cos(t), np.sin(t)], axis=-1)


def pair_baseline(geom: ArrayGeometry, pair: MicPair) -> Tuple[float, float]:
    """Distance between the pair's mics and azimuth of the m1 -> m2 vector."""
    geom.check_pair(pair)
    v = geom.mic_positions[pair.m2] - geom.mic_positions[pair.m1]
    delta = float(np.hypot(*v))
    if delta <= 0:
        raise ValueError("coincident microphones")
    axis = float(np.rad2deg(np.arctan2(v[1], v[0])) % 360.0)
    return delta, axis


def steering_phase(geom: ArrayGeometry, pair: MicPair, theta, f):
    """Phase by which channel m1 leads m2 for a plane wave from ``theta``.

    Equals ``2 pi f delta cos(theta_rel) / c`` with ``theta_rel`` measured
    from the m2 -> m1 direction (the side on which m1 hears the source
    first), i.e. ``-2 pi f delta cos(theta - axis) / c`` with ``axis`` from
    :func:`pair_baseline`.
    """
    delta, axis = pair_baseline(geom, pair)
    f = np.asarray(f, dtype=np.float64)
    if (f < 0).any():
        raise ValueError("frequency must be non-negative")
    cos_rel = -np.cos(np.deg2rad(np.asarray(theta, dtype=np.float64) - axis))
    return 2.0 * np.pi * f * delta * cos_rel / geom.sound_speed


def wrap_phase(x):
    """Wrap radians to (-pi, pi]."""
    y = np.mod(np.asarray(x) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(y <= -np.pi, y + 2.0 * np.pi, y)


def ipd(spec: ChannelSpectrogram, pair: MicPair) -> np.ndarray:
    """Phase of channel m1 minus phase of channel m2, T x F, wrapped."""
    spec.check_channel(pair.m1)
    spec.check_channel(pair.m2)
    return wrap_phase(np.angle(spec.values[pair.m1]) - np.angle(spec.values[pair.m2]))


@dataclass
class AngleFeature:
    theta: float
    values: np.ndarray
    normalized: bool = True


def angle_features(spec: ChannelSpectrogram, geom: ArrayGeometry, pairs: Sequence[MicPair],
                   thetas, normalize: bool = True) -> np.ndarray:
    """Angle features for several look directions at once, K x T x F."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no microphone pairs given")
    thetas = np.atleast_1d(np.asarray(thetas, dtype=np.float64))
    freqs = spec.freqs
    out = np.zeros((len(thetas), spec.frames, spec.bins))
    for pair in pairs:
        d = ipd(spec, pair)
        c, s = np.cos(d), np.sin(d)
        phi = steering_phase(geom, pair, thetas[:, None], freqs[None, :])  # K x F
        out += np.cos(phi)[:, None, :] * c[None] + np.sin(phi)[:, None, :] * s[None]
    if normalize:
        out /= len(pairs)
    return out


def angle_feature(spec: ChannelSpectrogram, geom: ArrayGeometry, pairs: Sequence[MicPair],
                  theta: float, normalize: bool = True) -> AngleFeature:
    """Sum over pairs of ``cos(steering_phase - ipd)``, divided by the pair
    count when ``normalize`` is set."""
    vals = angle_features(spec, geom, pairs, [theta], normalize)[0]
    return AngleFeature(float(theta) % 360.0, vals, normalize)


def circular_midpoint(theta_i: float, theta_j: float) -> float:
    """Midpoint along the shorter arc; antipodal inputs give ``theta_i - 90``."""
    d = (theta_j - theta_i + 180.0) % 360.0 - 180.0
    return (theta_i + d / 2.0) % 360.0


def augment_af(af_i, af_j, theta_i: float, theta_j: float, gamma: float, theta_n: float = 0.0):
    """Make two speakers' angle features look like those of nearby speakers.

    Returns ``(max(af_i, gamma * af_j), max(gamma * af_i, af_j), theta)``
    where ``theta`` is the circular midpoint of the two directions shifted by
    ``theta_n``.
    """
    af_i = np.asarray(af_i, dtype=np.float64)
    af_j = np.asarray(af_j, dtype=np.float64)
    if af_i.shape != af_j.shape:
        raise ValueError(f"shape mismatch {af_i.shape} vs {af_j.shape}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    new_i = np.maximum(af_i, gamma * af_j)
    new_j = np.maximum(gamma * af_i, af_j)
    return new_i, new_j, (circular_midpoint(theta_i, theta_j) + theta_n) % 360.0


def circular_distance(a, b):
    d = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) % 360.0
    return np.minimum(d, 360.0 - d)


def min_angular_difference(thetas) -> np.ndarray:
    """Per speaker, the smallest circular distance to any other speaker.

    A lone speaker gets 180 degrees.
    """
    t = np.asarray(thetas, dtype=np.float64).ravel()
    if t.size == 0:
        raise ValueError("no directions given")
    if t.size == 1:
        return np.array([180.0])
    d = circular_distance(t[:, None], t[None, :])
    np.fill_diagonal(d, np.inf)
    return d.min(axis=1)
