"""Diarization error rate (with FA / MISS / SC split) and Jaccard error rate.

Scoring is exact: every quantity is computed from interval boundaries with
a sweep line, never from sampled frames.  Overlapped speech is scored.
"""

from dataclasses import dataclass, field
from itertools import permutations
from typing import Dict, List, Optional

import numpy as np

from . import intervals as iv
from .annotations import Annotation

MAX_MAPPED_SPEAKERS = 8


@dataclass
class DerReport:
    fa: float
    miss: float
    sc: float
    der: float
    jer: float
    scored_time: float
    speaker_mapping: Dict[str, str] = field(default_factory=dict)

    def to_table(self) -> str:
        head = f"{'FA':>7} {'MISS':>7} {'SC':>7} {'DER':>7} {'JER':>7} {'SCORED(s)':>10}"
        row = (f"{self.fa:7.2f} {self.miss:7.2f} {self.sc:7.2f} {self.der:7.2f} "
               f"{self.jer:7.2f} {self.scored_time:10.2f}")
        return head + "\n" + row + "\n"

    def to_kv(self) -> str:
        lines = [f"fa={self.fa:.4f}", f"miss={self.miss:.4f}", f"sc={self.sc:.4f}",
                 f"der={self.der:.4f}", f"jer={self.jer:.4f}", f"scored_time={self.scored_time:.4f}"]
        for r, h in sorted(self.speaker_mapping.items()):
            lines.append(f"map.{r}={h}")
        return "\n".join(lines) + "\n"


def collar_zones(ref: Annotation, collar: float) -> List[iv.Interval]:
    """Regions of +-collar around every reference segment boundary."""
    if collar < 0:
        raise ValueError("collar must be non-negative")
    if collar == 0:
        return []
    zones = []
    for ints in ref.tracks().values():
        for s, e in ints:
            zones.append((max(0.0, s - collar), s + collar))
            zones.append((max(0.0, e - collar), e + collar))
    return iv.normalize(zones)


def _scored_tracks(ann: Annotation, excluded) -> Dict[str, List[iv.Interval]]:
    tracks = ann.tracks()
    if excluded:
        tracks = {k: iv.subtract(v, excluded) for k, v in tracks.items()}
    return tracks


def overlap_matrix(ref_tracks, hyp_tracks):
    r_names = sorted(ref_tracks)
    h_names = sorted(hyp_tracks)
    m = np.zeros((len(r_names), len(h_names)))
    for i, r in enumerate(r_names):
        for j, h in enumerate(h_names):
            m[i, j] = iv.overlap_time(ref_tracks[r], hyp_tracks[h])
    return r_names, h_names, m


def optimal_assignments(m: np.ndarray, tol: float = 1e-9):
    """Every maximum-weight one-to-one assignment on a small matrix.

    Exhaustive; assignments within ``tol`` of the optimum count as optimal.
    Each is a sorted list of ``(row, col)`` pairs, in lexicographic
    enumeration order.
    """
    n_r, n_c = m.shape
    if n_r == 0 or n_c == 0:
        return [[]]
    transpose = n_r > n_c
    if transpose:
        m = m.T
        n_r, n_c = n_c, n_r
    perms = np.array(list(permutations(range(n_c), n_r)), dtype=np.intp)
    values = m[np.arange(n_r)[None, :], perms].sum(axis=1)
    out = []
    for k in np.flatnonzero(values >= values.max() - tol):
        pairs = [(i, int(j)) for i, j in enumerate(perms[k])]
        if transpose:
            pairs = [(j, i) for i, j in pairs]
        out.append(sorted(pairs))
    return out


def optimal_assignment(m: np.ndarray):
    """The first optimum of :func:`optimal_assignments`."""
    return optimal_assignments(m)[0]


def _optimal_mapping(ref_t, hyp_t) -> Dict[str, str]:
    # tied optima differ only in JER; take the lowest so the result does not
    # depend on label names or summation order
    if len(ref_t) > MAX_MAPPED_SPEAKERS or len(hyp_t) > MAX_MAPPED_SPEAKERS:
        raise ValueError(f"speaker mapping supports at most {MAX_MAPPED_SPEAKERS} speakers per side")
    r_names, h_names, m = overlap_matrix(ref_t, hyp_t)
    best, best_jer = None, np.inf
    for pairs in optimal_assignments(m):
        mapping = {r_names[i]: h_names[j] for i, j in pairs if m[i, j] > 0}
        value = _jer_tracks(ref_t, hyp_t, mapping)
        if value < best_jer - 1e-9:
            best, best_jer = mapping, value
    return best


def map_speakers(ref: Annotation, hyp: Annotation, collar: float = 0.0) -> Dict[str, str]:
    """One-to-one ref -> hyp label mapping maximizing co-active scored time.

    Pairs with zero overlap are left unmapped.  Among equally good mappings
    the one with the lowest JER wins.
    """
    excluded = collar_zones(ref, collar)
    return _optimal_mapping(_scored_tracks(ref, excluded), _scored_tracks(hyp, excluded))


def jer(ref: Annotation, hyp: Annotation, mapping: Dict[str, str], collar: float = 0.0) -> float:
    """Mean over reference speakers of ``1 - |ref ∩ hyp| / |ref ∪ hyp|``, in percent.

    Reference speakers without a mapped hypothesis speaker count as 100.
    """
    excluded = collar_zones(ref, collar)
    return _jer_tracks(_scored_tracks(ref, excluded), _scored_tracks(hyp, excluded), mapping)


def _jer_tracks(ref_t, hyp_t, mapping) -> float:
    errors = []
    for r, r_ints in ref_t.items():
        if iv.total(r_ints) <= 0:
            continue
        h = mapping.get(r)
        if h is None or h not in hyp_t:
            errors.append(100.0)
            continue
        inter = iv.overlap_time(r_ints, hyp_t[h])
        uni = iv.total(iv.union(r_ints, hyp_t[h]))
        errors.append(100.0 * (1.0 - inter / uni))
    if not errors:
        return 0.0
    return float(np.mean(errors))


def der(ref: Annotation, hyp: Annotation, collar: float = 0.25,
        mapping: Optional[Dict[str, str]] = None) -> DerReport:
    """Score ``hyp`` against ``ref``.

    In each elementary region with ``n_ref`` reference and ``n_hyp``
    hypothesis speakers, of which ``n_corr`` are correctly mapped pairs::

        miss = max(0, n_ref - n_hyp)
        fa   = max(0, n_hyp - n_ref)
        sc   = min(n_ref, n_hyp) - n_corr

    all weighted by region duration and divided by the scored reference
    speaker time.  Regions within ``collar`` of a reference boundary are
    excluded.
    """
    if not ref.segments:
        raise ValueError("empty reference")
    excluded = collar_zones(ref, collar)
    ref_t = _scored_tracks(ref, excluded)
    hyp_t = _scored_tracks(hyp, excluded)
    if mapping is None:
        mapping = _optimal_mapping(ref_t, hyp_t)

    ref_names = sorted(ref_t)
    hyp_names = sorted(hyp_t)
    tracks = [ref_t[n] for n in ref_names] + [hyp_t[n] for n in hyp_names]
    n_r = len(ref_names)
    miss = fa = sc = total = 0.0
    for s, e, active in iv.sweep(tracks):
        d = e - s
        r_act = [ref_names[k] for k in active if k < n_r]
        h_act = {hyp_names[k - n_r] for k in active if k >= n_r}
        nr, nh = len(r_act), len(h_act)
        nc = sum(1 for r in r_act if mapping.get(r) in h_act)
        total += d * nr
        miss += d * max(0, nr - nh)
        fa += d * max(0, nh - nr)
        sc += d * (min(nr, nh) - nc)
    if total <= 0:
        raise ValueError("no scorable reference speech (collar removes everything)")
    fa_p, miss_p, sc_p = 100 * fa / total, 100 * miss / total, 100 * sc / total
    return DerReport(
        fa=fa_p, miss=miss_p, sc=sc_p, der=fa_p + miss_p + sc_p,
        jer=_jer_tracks(ref_t, hyp_t, mapping), scored_time=total, speaker_mapping=dict(mapping),
    )
