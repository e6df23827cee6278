"""Overlap-aware fusion of several diarization hypotheses.

Labels of every hypothesis are first mapped greedily onto the label space
of an anchor hypothesis; the mapped hypotheses then vote region by region.
"""

from typing import Dict, List, Optional, Sequence

import numpy as np

from . import intervals as iv
from .annotations import Annotation


def greedy_map(anchor: Annotation, other: Annotation, tag: str = "new") -> Dict[str, str]:
    """Map labels of ``other`` onto labels of ``anchor``.

    The pair with the largest co-active time is fixed first, both labels are
    removed, and so on while overlapping pairs remain.  Labels of ``other``
    left over get fresh ids of the form ``"<tag>:<label>"``.
    """
    a_tracks = anchor.tracks()
    o_tracks = other.tracks()
    a_names = sorted(a_tracks)
    o_names = sorted(o_tracks)
    m = np.zeros((len(a_names), len(o_names)))
    for i, a in enumerate(a_names):
        for j, o in enumerate(o_names):
            m[i, j] = iv.overlap_time(a_tracks[a], o_tracks[o])
    mapping = {}
    while m.size and m.max() > 0:
        i, j = np.unravel_index(int(np.argmax(m)), m.shape)
        mapping[o_names[j]] = a_names[i]
        m[i, :] = -1.0
        m[:, j] = -1.0
    taken = set(a_names)
    for o in o_names:
        if o in mapping:
            continue
        fresh = f"{tag}:{o}"
        while fresh in taken:
            fresh += "'"
        taken.add(fresh)
        mapping[o] = fresh
    return mapping


def fuse(hypotheses: Sequence[Annotation], weights: Optional[Sequence[float]] = None,
         anchor: int = 0) -> Annotation:
    """Combine hypotheses by weighted region voting.

    In every region between change points the number of output speakers is
    the weighted mean of the hypotheses' active-speaker counts, rounded half
    up; the labels with the largest weighted vote are kept, ties going to the
    lexicographically smaller label.
    """
    if not hypotheses:
        raise ValueError("nothing to fuse")
    if weights is None:
        weights = [1.0] * len(hypotheses)
    if len(weights) != len(hypotheses):
        raise ValueError("one weight per hypothesis required")
    if any(w <= 0 for w in weights):
        raise ValueError("weights must be positive")
    if not 0 <= anchor < len(hypotheses):
        raise ValueError("anchor index out of range")

    base = hypotheses[anchor]
    order = [anchor] + [k for k in range(len(hypotheses)) if k != anchor]
    mapped: List[Dict[str, list]] = []
    w = []
    for k in order:
        hyp = hypotheses[k]
        if k != anchor:
            hyp = hyp.relabel(greedy_map(base, hyp, tag=f"h{k}"))
        mapped.append(hyp.tracks())
        w.append(float(weights[k]))
    w = np.asarray(w)
    w_sum = w.sum()

    tracks, owner, label = [], [], []
    for h, trk in enumerate(mapped):
        for spk, ints in trk.items():
            tracks.append(ints)
            owner.append(h)
            label.append(spk)

    out: Dict[str, list] = {}
    for s, e, active in iv.sweep(tracks):
        counts = np.zeros(len(mapped))
        votes: Dict[str, float] = {}
        for t in active:
            counts[owner[t]] += 1
            votes[label[t]] = votes.get(label[t], 0.0) + w[owner[t]]
        k = int(np.floor(float(np.dot(w, counts)) / w_sum + 0.5))
        ranked = sorted(votes.items(), key=lambda kv: (-kv[1], kv[0]))
        for spk, _ in ranked[:k]:
            out.setdefault(spk, []).append((s, e))
    return Annotation.from_tracks(base.session, out)
