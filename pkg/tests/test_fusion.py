import numpy as np
import pytest

from spatialdiar.fusion import fuse, greedy_map
from spatialdiar.scoring import der

from conftest import make_ann, random_annotation


class TestGreedyMap:
    def test_inverse_rename(self):
        a = make_ann({"A": [(0, 2)], "B": [(2, 4)]})
        b = a.relabel({"A": "p", "B": "q"})
        assert greedy_map(a, b) == {"p": "A", "q": "B"}

    def test_disjoint_gets_fresh_ids(self):
        a = make_ann({"A": [(0, 1)]})
        b = make_ann({"A": [(5, 6)], "C": [(7, 8)]})
        m = greedy_map(a, b, tag="h1")
        assert set(m.values()) == {"h1:A", "h1:C"}


class TestFuse:
    def test_single_hypothesis(self, rng):
        h = random_annotation(rng)
        assert fuse([h]).tracks() == h.tracks()

    def test_three_copies(self, rng):
        for _ in range(10):
            h = random_annotation(rng)
            assert fuse([h, h, h]).tracks() == h.tracks()

    def test_vote_example(self):
        on = make_ann({"A": [(0, 1)]})
        off = make_ann({"A": [(5, 6)]})
        out = fuse([on, on, off])
        assert out.tracks()["A"][0] == (0.0, 1.0)

    def test_silent_system_thins_overlap(self):
        # counts 2, 2, 0 average to 4/3, so only one speaker is kept even
        # though each label has two of three votes
        both = make_ann({"A": [(0, 2)], "B": [(0, 2)], "C": [(5, 6)]})
        silent = make_ann({"C": [(5, 6)]})
        out = fuse([both, both, silent])
        assert out.tracks() == {"A": [(0.0, 2.0)], "C": [(5.0, 6.0)]}

    def test_relabeled_copies(self, rng):
        h = random_annotation(rng)
        other = h.relabel({"S0": "a", "S1": "b", "S2": "c"})
        assert fuse([h, other, other]).tracks() == h.tracks()

    def test_count_bound(self, rng):
        from spatialdiar import intervals as iv
        for _ in range(10):
            hs = [random_annotation(rng) for _ in range(3)]
            out = fuse(hs)
            for s, e, act in iv.sweep(list(out.tracks().values())):
                mid = 0.5 * (s + e)
                counts = [sum(any(a <= mid < b for a, b in v) for v in h.tracks().values()) for h in hs]
                assert len(act) <= max(counts)

    def test_errors(self):
        with pytest.raises(ValueError):
            fuse([])
        h = make_ann({"A": [(0, 1)]})
        with pytest.raises(ValueError):
            fuse([h, h], weights=[1.0, 0.0])
        with pytest.raises(ValueError):
            fuse([h], weights=[1.0, 2.0])
