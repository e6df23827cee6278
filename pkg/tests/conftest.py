from itertools import permutations

import numpy as np
import pytest

from spatialdiar.annotations import Annotation, Segment
from spatialdiar.model import loss_and_grads


def make_ann(spec, session="s"):
    """``{"A": [(0, 1), ...]}`` -> Annotation."""
    return Annotation.from_tracks(session, spec)


def random_annotation(rng, n_spk=3, length=10.0, max_segs=4, session="s", grid=0.01):
    tracks = {}
    for k in range(n_spk):
        ints = []
        for _ in range(int(rng.integers(1, max_segs + 1))):
            s = np.round(rng.uniform(0, length - 0.5) / grid) * grid
            e = s + max(grid, np.round(rng.uniform(0.1, 3.0) / grid) * grid)
            ints.append((float(s), float(min(e, length))))
        tracks[f"S{k}"] = ints
    return Annotation.from_tracks(session, tracks)


def brute_force(ref, hyp, collar, step=0.001):
    """1 ms discretized DER/JER with an exhaustive mapping."""
    end = max(ref.end, hyp.end) + collar + step
    t = (np.arange(int(np.ceil(end / step))) + 0.5) * step

    def mask(ints):
        m = np.zeros(len(t), dtype=bool)
        for s, e in ints:
            m[int(round(s / step)):int(round(e / step))] = True
        return m

    scored = np.ones(len(t), dtype=bool)
    for ints in ref.tracks().values():
        for s, e in ints:
            for b in (s, e):
                scored &= ~((t >= b - collar) & (t < b + collar)) if collar > 0 else True
    R = {k: mask(v) & scored for k, v in ref.tracks().items()}
    H = {k: mask(v) & scored for k, v in hyp.tracks().items()}
    rn, hn = sorted(R), sorted(H)

    def jer_of(m):
        js = []
        for r in rn:
            if not R[r].any():
                continue
            h = m.get(r)
            if h is None:
                js.append(100.0)
                continue
            js.append(100.0 * (1 - (R[r] & H[h]).sum() / (R[r] | H[h]).sum()))
        return float(np.mean(js)) if js else 0.0

    # maximum overlap; exact ties go to the lowest JER
    best, best_map, best_j = -1, {}, np.inf
    for perm in permutations(hn + [None] * len(rn), len(rn)):
        m = {r: h for r, h in zip(rn, perm) if h is not None and (R[r] & H[h]).any()}
        v = sum((R[r] & H[h]).sum() for r, h in m.items())
        if v < best:
            continue
        j = jer_of(m)
        if v > best or j < best_j:
            best, best_map, best_j = v, m, j
    nr = sum(R[r].astype(int) for r in rn)
    nh = sum(H[h].astype(int) for h in hn) if hn else np.zeros(len(t), dtype=int)
    nc = sum((R[r] & H[h]).astype(int) for r, h in best_map.items()) if best_map else 0
    total = nr.sum()
    d = (np.maximum(0, nr - nh).sum() + np.maximum(0, nh - nr).sum()
         + (np.minimum(nr, nh) - nc).sum()) / total * 100
    return d, best_j


def numeric_grads(params, X, y, alpha=0.25, beta=0.25, h=1e-6):
    out = {}
    for k, arr in params.arrays().items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            lp, _ = loss_and_grads(params, X, y, alpha, beta)
            arr[idx] = old - h
            lm, _ = loss_and_grads(params, X, y, alpha, beta)
            arr[idx] = old
            g[idx] = (lp - lm) / (2 * h)
        out[k] = g
    return out


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
