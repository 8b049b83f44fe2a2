import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wireparse.geom import GridSpec
from wireparse.junction_codec import (
    DEFAULT_K,
    JunctionMaps,
    decode_junctions,
    encode_junctions,
    nms3x3,
    proposals_to_arrays,
)
from wireparse.scene_io import Wireframe, synth_scene

TINY = GridSpec(8, 8, 4)
SPEC = GridSpec(512, 512, 4)


def maps_from_mask(mask, spec=None):
    mask = np.asarray(mask, float)
    spec = spec or GridSpec(mask.shape[1] * 4, mask.shape[0] * 4, 4)
    return JunctionMaps(spec, mask, np.zeros((2, *mask.shape)))


class TestEncode:
    def test_hand_example(self):
        wf = Wireframe(8, 8, [[5.0, 2.6], [1.0, 6.0]], [[0, 1]])
        m = encode_junctions(wf, TINY)
        assert m.mask[0, 1] == 1
        assert np.allclose(m.offset[:, 0, 1], [-0.25, 0.15], atol=1e-15)

    def test_center_gives_zero_offset(self):
        wf = Wireframe(8, 8, [[6.0, 2.0], [2.0, 6.0]], [[0, 1]])
        m = encode_junctions(wf, TINY)
        assert m.mask[0, 1] == 1 and np.all(m.offset[:, 0, 1] == 0)

    def test_two_per_bin_keeps_nearest(self):
        # both in bin (row 0, col 0) whose center is (2, 2)
        wf = Wireframe(8, 8, [[0.5, 0.5], [2.5, 1.5], [6, 6]], [[0, 2], [1, 2]])
        m = encode_junctions(wf, TINY)
        d = [np.hypot(*(np.array(p) - 2)) for p in ([0.5, 0.5], [2.5, 1.5])]
        winner = [[0.5, 0.5], [2.5, 1.5]][int(np.argmin(d))]
        assert np.allclose(m.offset[:, 0, 0] * 4 + 2, winner)

    def test_gt_maps_ranges(self):
        m = encode_junctions(synth_scene(0, SPEC, 20), SPEC)
        assert np.all(m.offset >= -0.5) and np.all(m.offset < 0.5)
        assert np.all(m.offset[:, m.mask == 0] == 0)


class TestNMS:
    def test_isolated_peak(self):
        m = np.zeros((5, 5))
        m[2, 2] = 0.7
        assert np.array_equal(nms3x3(m), m)

    def test_dominated_neighbor(self):
        m = np.zeros((3, 4))
        m[1, 1], m[1, 2] = 0.9, 0.8
        out = nms3x3(m)
        assert out[1, 1] == 0.9 and out[1, 2] == 0

    def test_plateau_survives(self):
        m = np.zeros((4, 4))
        m[1:3, 1:3] = 0.5
        assert np.array_equal(nms3x3(m), m)

    @given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=st.floats(0, 1)))
    def test_idempotent_and_matches_brute_force(self, m):
        out = nms3x3(m)
        assert np.array_equal(nms3x3(out), out)
        H, W = m.shape
        for r in range(H):
            for c in range(W):
                peak = max(m[rr, cc] for rr in range(max(0, r - 1), min(H, r + 2)) for cc in range(max(0, c - 1), min(W, c + 2)))
                assert out[r, c] == (m[r, c] if m[r, c] == peak else 0)


class TestDecode:
    def test_round_trip(self):
        wf = synth_scene(4, SPEC, 20)
        pos, score = proposals_to_arrays(decode_junctions(encode_junctions(wf, SPEC)))
        assert len(pos) == len(wf.junctions) and np.all(score == 1)
        for j in wf.junctions:
            assert np.min(np.hypot(*(pos - j).T)) <= 1e-9

    def test_top_k_cut(self):
        m = np.zeros((6, 6))
        m[1, 1], m[4, 4] = 0.7, 0.9
        props = decode_junctions(maps_from_mask(m), k=1)
        assert len(props) == 1 and props[0].bin == (4, 4) and props[0].score == 0.9

    def test_offset_decode_example(self):
        maps = JunctionMaps(TINY, np.array([[0, 1], [0, 0]]), np.zeros((2, 2, 2)))
        maps.offset[:, 0, 1] = -0.25, 0.15
        (p,) = decode_junctions(maps, w=4)
        assert np.allclose(p.position, (5.0, 2.6), atol=1e-15)

    def test_ties_row_major(self):
        m = np.zeros((5, 5))
        m[0, 4] = m[4, 0] = m[2, 2] = 0.5
        props = decode_junctions(maps_from_mask(m))
        assert [p.bin for p in props] == [(0, 4), (2, 2), (4, 0)]

    def test_zero_mask_and_bad_k(self):
        assert decode_junctions(maps_from_mask(np.zeros((4, 4)))) == []
        with pytest.raises(ValueError):
            decode_junctions(maps_from_mask(np.zeros((4, 4))), k=0)

    def test_default_k(self):
        assert DEFAULT_K == 300

    @given(arrays(np.float64, (7, 9), elements=st.floats(0, 1)), st.integers(1, 20))
    def test_size_and_order(self, m, k):
        props = decode_junctions(maps_from_mask(m), k=k)
        assert len(props) <= k
        scores = [p.score for p in props]
        assert scores == sorted(scores, reverse=True)
        assert all(s > 0 for s in scores)
        for p in props:
            assert p.score == m[p.bin]
