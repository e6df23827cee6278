"""Half-open interval arithmetic on sorted lists of ``(start, end)`` pairs.

All functions accept any iterable of pairs and return a normalized list:
sorted, non-empty, with overlapping or touching intervals merged.
"""

from typing import Iterable, List, Sequence, Tuple

Interval = Tuple[float, float]


def normalize(intervals: Iterable[Interval]) -> List[Interval]:
    items = sorted((float(s), float(e)) for s, e in intervals if e > s)
    out: List[Interval] = []
    for s, e in items:
        if out and s <= out[-1][1]:
            if e > out[-1][1]:
                out[-1] = (out[-1][0], e)
        else:
            out.append((s, e))
    return out


def total(intervals: Iterable[Interval]) -> float:
    return sum(e - s for s, e in normalize(intervals))


def union(a: Iterable[Interval], b: Iterable[Interval]) -> List[Interval]:
    return normalize(list(a) + list(b))


def intersect(a: Iterable[Interval], b: Iterable[Interval]) -> List[Interval]:
    a, b = normalize(a), normalize(b)
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        s = max(a[i][0], b[j][0])
        e = min(a[i][1], b[j][1])
        if e > s:
            out.append((s, e))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return out


def subtract(a: Iterable[Interval], b: Iterable[Interval]) -> List[Interval]:
    """Return the parts of ``a`` not covered by ``b``."""
    a, b = normalize(a), normalize(b)
    out = []
    j = 0
    for s, e in a:
        cur = s
        while j < len(b) and b[j][1] <= cur:
            j += 1
        k = j
        while k < len(b) and b[k][0] < e:
            if b[k][0] > cur:
                out.append((cur, b[k][0]))
            cur = max(cur, b[k][1])
            k += 1
        if cur < e:
            out.append((cur, e))
    return out


def change_points(tracks: Iterable[Iterable[Interval]]) -> List[float]:
    points = set()
    for track in tracks:
        for s, e in track:
            points.add(float(s))
            points.add(float(e))
    return sorted(points)


def sweep(tracks: Sequence[Iterable[Interval]]) -> List[Tuple[float, float, Tuple[int, ...]]]:
    """Split the time axis at every boundary of every track.

    Returns ``(start, end, active)`` for each elementary region in which at
    least one track is active, where ``active`` holds the indices of the
    active tracks.
    """
    tracks = [normalize(t) for t in tracks]
    events = []
    for idx, track in enumerate(tracks):
        for s, e in track:
            events.append((s, 1, idx))
            events.append((e, -1, idx))
    events.sort(key=lambda ev: ev[0])
    out = []
    active = set()
    prev = None
    i = 0
    while i < len(events):
        t = events[i][0]
        if prev is not None and active and t > prev:
            out.append((prev, t, tuple(sorted(active))))
        while i < len(events) and events[i][0] == t:
            _, kind, idx = events[i]
            if kind == 1:
                active.add(idx)
            else:
                active.discard(idx)
            i += 1
        prev = t
    return out


def overlap_time(a: Iterable[Interval], b: Iterable[Interval]) -> float:
    return sum(e - s for s, e in intersect(a, b))
