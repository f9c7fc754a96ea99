import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semloc.errors import FormatError
from semloc.labelmap import LabelMap, downsample_mode, load_label_map, save_label_map


@st.composite
def label_maps(draw, max_side=12, max_classes=300):
    w = draw(st.integers(1, max_side))
    h = draw(st.integers(1, max_side))
    c = draw(st.integers(1, max_classes))
    labels = draw(st.lists(st.integers(0, c - 1), min_size=w * h, max_size=w * h))
    return LabelMap.from_list(w, h, c, labels)


def test_load_ascii_example():
    m = load_label_map(b"SLMA 2 1 3\n0 2")
    assert (m.width, m.height, m.num_classes) == (2, 1, 3)
    assert m.labels.ravel().tolist() == [0, 2]


def test_load_ascii_accepts_trailing_newline():
    assert load_label_map(b"SLMA 2 1 3\n0 2\n") == load_label_map(b"SLMA 2 1 3\n0 2")


def test_ascii_label_out_of_range_rejected_with_line():
    with pytest.raises(FormatError, match="out of range") as exc:
        load_label_map(b"SLMA 1 1 2\n5")
    assert exc.value.position == 2 and exc.value.unit == "line"


def test_binary_round_trip_is_byte_exact():
    # independent encoding of a 2x2, C=2 map with labels [0, 1, 1, 0]
    raw = b"SLM1" + struct.pack("<IIH", 2, 2, 2) + struct.pack("<4H", 0, 1, 1, 0)
    m = load_label_map(raw)
    assert m.labels.ravel().tolist() == [0, 1, 1, 0]
    assert save_label_map(m, "binary") == raw


def test_smallest_ascii_map():
    m = LabelMap.from_list(1, 1, 1, [0])
    assert save_label_map(m, "ascii") == b"SLMA 1 1 1\n0"


def test_binary_size_3x2():
    m = LabelMap.from_list(3, 2, 4, [0, 1, 2, 3, 2, 1])
    assert len(save_label_map(m, "binary")) == 4 + 4 + 4 + 2 + 12 == 26


def test_row_major_top_row_first():
    m = LabelMap.from_list(3, 2, 9, [1, 2, 3, 4, 5, 6])
    assert save_label_map(m, "ascii") == b"SLMA 3 2 9\n1 2 3\n4 5 6"
    payload = save_label_map(m, "binary")[14:]
    assert struct.unpack("<6H", payload) == (1, 2, 3, 4, 5, 6)


@pytest.mark.parametrize("data, match, position", [
    (b"XXXX\x00\x00", "unknown magic", 0),
    (b"SLM1" + struct.pack("<IIH", 2, 2, 2) + b"\x00\x00", "truncated", 14),
    (b"SLM1" + struct.pack("<IIH", 0, 2, 2), "width and height", 4),
    (b"SLM1" + struct.pack("<IIH", 1, 1, 0) + b"\x00\x00", "num_classes", 4),
    (b"SLM1" + struct.pack("<IIH", 2, 1, 3) + struct.pack("<2H", 1, 3), "label 3", 16),
    (b"SLM1" + struct.pack("<IIH", 1, 1, 2) + b"\x00\x00\x00", "trailing", 16),
    (b"SLM1\x01\x00", "truncated", 4),
])
def test_binary_errors(data, match, position):
    with pytest.raises(FormatError, match=match) as exc:
        load_label_map(data)
    assert exc.value.position == position


@pytest.mark.parametrize("data, match, line", [
    (b"SLMA 0 1 3\n", "width and height", 1),
    (b"SLMA 1 1 0\n0", "num_classes", 1),
    (b"SLMA 2 2 3\n0 1", "expected 2 label rows", 2),
    (b"SLMA 2 1 3\n0", "expected 2 labels", 2),
    (b"SLMA 2 1 3\n0 x", "not a non-negative integer", 2),
    (b"SLMA 2 1\n0 1", "header", 1),
    (b"SLMA 1 1 3\n0\n1", "trailing", 3),
])
def test_ascii_errors(data, match, line):
    with pytest.raises(FormatError, match=match) as exc:
        load_label_map(data)
    assert exc.value.position == line


def test_constructor_rejects_out_of_range_label():
    with pytest.raises(ValueError):
        LabelMap.from_list(2, 1, 2, [0, 2])


def test_labels_are_read_only():
    m = LabelMap.from_list(2, 1, 3, [0, 2])
    with pytest.raises(ValueError):
        m.labels[0, 0] = 1


@settings(max_examples=60, deadline=None)
@given(label_maps(), st.sampled_from(["binary", "ascii"]))
def test_round_trip_property(m, fmt):
    assert load_label_map(save_label_map(m, fmt)) == m


@settings(max_examples=40, deadline=None)
@given(label_maps(max_classes=20), st.data())
def test_rejects_any_label_at_or_above_num_classes(m, data):
    raw = bytearray(save_label_map(m, "binary"))
    pixel = data.draw(st.integers(0, m.width * m.height - 1))
    bad = data.draw(st.integers(m.num_classes, 0xFFFF))
    struct.pack_into("<H", raw, 14 + 2 * pixel, bad)
    with pytest.raises(FormatError):
        load_label_map(bytes(raw))


# ---------------------------------------------------------------------------
# downsample_mode


def _mode_oracle(m, out_w, out_h):
    out = np.zeros((out_h, out_w), dtype=int)
    for j in range(out_h):
        for i in range(out_w):
            x0, x1 = i * m.width // out_w, (i + 1) * m.width // out_w
            y0, y1 = j * m.height // out_h, (j + 1) * m.height // out_h
            counts = [0] * m.num_classes
            for y in range(y0, y1):
                for x in range(x0, x1):
                    counts[int(m.labels[y, x])] += 1
            best = max(counts)
            out[j, i] = counts.index(best)
    return out


def test_downsample_uniform():
    m = LabelMap(np.full((8, 8), 3), 5)
    assert downsample_mode(m, 2, 2).labels.tolist() == [[3, 3], [3, 3]]


def test_downsample_tie_goes_to_lowest_class():
    m = LabelMap.from_list(2, 2, 2, [0, 1, 1, 0])
    assert downsample_mode(m, 1, 1).labels.tolist() == [[0]]
    m = LabelMap.from_list(2, 2, 4, [3, 1, 1, 3])
    assert downsample_mode(m, 1, 1).labels.tolist() == [[1]]


def test_downsample_matches_counting_oracle():
    rng = np.random.default_rng(7)
    m = LabelMap(rng.integers(0, 5, size=(16, 16)), 5)
    np.testing.assert_array_equal(downsample_mode(m, 4, 4).labels, _mode_oracle(m, 4, 4))


@settings(max_examples=40, deadline=None)
@given(label_maps(max_classes=6), st.data())
def test_downsample_uneven_cells_match_oracle(m, data):
    out_w = data.draw(st.integers(1, m.width))
    out_h = data.draw(st.integers(1, m.height))
    np.testing.assert_array_equal(downsample_mode(m, out_w, out_h).labels,
                                  _mode_oracle(m, out_w, out_h))


@settings(max_examples=30, deadline=None)
@given(label_maps())
def test_downsample_full_size_is_identity(m):
    assert downsample_mode(m, m.width, m.height) == m


@pytest.mark.parametrize("w, h", [(0, 1), (1, 0), (5, 1), (1, 5)])
def test_downsample_rejects_bad_size(w, h):
    with pytest.raises(ValueError):
        downsample_mode(LabelMap(np.zeros((4, 4), dtype=int), 2), w, h)
