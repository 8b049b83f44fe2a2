import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wireparse.container import ContainerError, dump_text, load_text, read_grid, write_grid
from wireparse.geom import GridSpec

SPEC = GridSpec(16, 8, 4)


def test_grid_round_trip_float32(tmp_path):
    v = np.random.default_rng(0).random((4, 2, 4))
    write_grid(tmp_path / "g.bin", v, SPEC)
    back, spec = read_grid(tmp_path / "g.bin")
    assert spec == SPEC
    assert np.array_equal(back, v.astype(np.float32).astype(float))


def test_float64_is_lossless(tmp_path):
    v = np.random.default_rng(1).normal(size=17)
    write_grid(tmp_path / "w.bin", v, None, dtype=np.float64)
    back, spec = read_grid(tmp_path / "w.bin")
    assert spec is None and np.array_equal(back, v)


def test_header_layout(tmp_path):
    write_grid(tmp_path / "g.bin", np.zeros((1, 2, 4)), SPEC)
    raw = (tmp_path / "g.bin").read_bytes()
    assert raw[:4] == b"WPGR"
    assert int.from_bytes(raw[4:6], "little") == 1 and int.from_bytes(raw[6:8], "little") == 4
    assert len(raw) == 4 + 2 + 2 + 4 * 4 + 3 * 4 + 8 * 4


def test_shape_mismatch_rejected(tmp_path):
    with pytest.raises(ContainerError):
        write_grid(tmp_path / "g.bin", np.zeros((3, 3)), SPEC)


@pytest.mark.parametrize("damage", ["magic", "truncate"])
def test_corrupt_files(tmp_path, damage):
    path = tmp_path / "g.bin"
    write_grid(path, np.ones((2, 4)), SPEC)
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:] if damage == "magic" else raw[:-3])
    with pytest.raises(ContainerError):
        read_grid(path)


@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 5)),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_text_dump_lossless(v):
    back, spec = load_text(dump_text(v))
    assert spec is None and np.array_equal(back, v)


def test_text_dump_keeps_spec():
    v = np.arange(8.0).reshape(2, 4) / 3
    back, spec = load_text(dump_text(v, SPEC))
    assert spec == SPEC and np.array_equal(back, v)
