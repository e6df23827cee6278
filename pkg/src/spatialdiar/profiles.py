"""Per-speaker profiles: direction, angular guard value and embedding."""

import os
from dataclasses import dataclass
from typing import List, Optional

import numpy as np


@dataclass
class SpeakerProfile:
    name: str
    theta: float
    embedding: np.ndarray
    delta_theta: Optional[float] = None


def write_profiles(profiles: List[SpeakerProfile], path) -> None:
    """One line per speaker: ``name theta v1 v2 ...``."""
    lines = []
    for p in profiles:
        vals = " ".join(repr(float(v)) for v in np.asarray(p.embedding).ravel())
        lines.append(f"{p.name} {float(p.theta)!r} {vals}\n")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.writelines(lines)
    os.replace(tmp, path)


def read_profiles(path) -> List[SpeakerProfile]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields or fields[0].startswith("#"):
                continue
            if len(fields) < 2:
                raise ValueError(f"{path}:{lineno}: expected 'name theta [embedding...]'")
            try:
                theta = float(fields[1])
                emb = np.array([float(v) for v in fields[2:]])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric value") from None
            out.append(SpeakerProfile(fields[0], theta, emb))
    return out
