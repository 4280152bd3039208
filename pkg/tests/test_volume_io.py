import numpy as np
import pytest

from errors import DataError, FormatError
from volume_io import (
    Centerline,
    DatasetCase,
    SplitSpec,
    Volume,
    load_centerline,
    load_volume,
    save_centerline,
    save_volume,
    split_dataset,
)


def test_volume_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    vol = Volume(rng.normal(size=(3, 4, 5)))
    path = save_volume(vol, tmp_path / "a.vol")
    assert load_volume(path) == vol


def test_volume_payload_is_x_fastest(tmp_path):
    voxels = np.zeros((2, 3, 4), dtype=np.float32)
    voxels[1, 0, 0] = 7.0
    voxels[0, 1, 0] = 8.0
    voxels[0, 0, 1] = 9.0
    path = save_volume(Volume(voxels), tmp_path / "a.vol")
    raw = path.read_bytes()
    header_len = raw.index(b"\n") + 1
    flat = np.frombuffer(raw[header_len:], dtype="<f4")
    assert flat[1] == 7.0
    assert flat[2] == 8.0
    assert flat[2 * 3] == 9.0


def test_single_voxel_file_layout(tmp_path):
    path = save_volume(Volume(np.full((1, 1, 1), 0.5)), tmp_path / "one.vol")
    raw = path.read_bytes()
    assert raw[:10] == b"VOL 1 1 1\n"
    assert len(raw) == 10 + 4


def test_truncated_volume_reports_offset(tmp_path):
    path = save_volume(Volume(np.ones((2, 2, 2))), tmp_path / "a.vol")
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(FormatError) as info:
        load_volume(path)
    assert info.value.offset == len(raw) - 3
    assert "truncated" in str(info.value)


def test_trailing_bytes_rejected(tmp_path):
    path = save_volume(Volume(np.ones((2, 2, 2))), tmp_path / "a.vol")
    raw = path.read_bytes()
    path.write_bytes(raw + b"\x00")
    with pytest.raises(FormatError) as info:
        load_volume(path)
    assert info.value.offset == len(raw)


def test_non_finite_voxel_rejected(tmp_path):
    header = b"VOL 2 1 1\n"
    payload = np.array([1.0, np.nan], dtype="<f4").tobytes()
    path = tmp_path / "nan.vol"
    path.write_bytes(header + payload)
    with pytest.raises(FormatError) as info:
        load_volume(path)
    assert info.value.offset == len(header) + 4


@pytest.mark.parametrize("header", [b"VOX 2 2 2\n", b"VOL 2 2\n", b"VOL a 2 2\n", b"VOL 0 2 2\n"])
def test_malformed_header(tmp_path, header):
    path = tmp_path / "bad.vol"
    path.write_bytes(header + b"\x00" * 32)
    with pytest.raises(FormatError):
        load_volume(path)


def test_centerline_is_sorted_and_unique():
    c = Centerline.from_points([(2, 0, 0), (0, 1, 0), (2, 0, 0), (0, 0, 5)])
    assert list(c) == [(0, 0, 5), (0, 1, 0), (2, 0, 0)]
    assert len(c) == 3


def test_centerline_file_round_trip_with_comments(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# header\n3 1 2\n\n0 0 0  # origin\n3 1 2\n", encoding="ascii")
    c = load_centerline(path)
    assert list(c) == [(0, 0, 0), (3, 1, 2)]
    save_centerline(c, tmp_path / "out.txt")
    assert (tmp_path / "out.txt").read_text() == "0 0 0\n3 1 2\n"


def test_centerline_bad_token_names_line(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("1 2 3\n4 x 6\n", encoding="ascii")
    with pytest.raises(FormatError) as info:
        load_centerline(path)
    assert info.value.line == 2


def test_centerline_wrong_arity(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("1 2\n", encoding="ascii")
    with pytest.raises(FormatError):
        load_centerline(path)


def test_case_rejects_points_outside_volume():
    vol = Volume(np.zeros((4, 4, 4)))
    with pytest.raises(DataError):
        DatasetCase("c", vol, Centerline.from_points([(4, 0, 0)]))


def _cases(n):
    vol = Volume(np.zeros((2, 2, 2)))
    return [DatasetCase(f"case_{i:03d}", vol, Centerline()) for i in range(n)]


def test_split_sizes_and_disjointness():
    cases = _cases(40)
    train, val, test = split_dataset(cases, SplitSpec((0.7, 0.1, 0.2), seed=0))
    assert (len(train), len(val), len(test)) == (28, 4, 8)
    ids = [c.id for c in train + val + test]
    assert sorted(ids) == sorted(c.id for c in cases)


def test_split_remainder_goes_to_train():
    train, val, test = split_dataset(_cases(11), SplitSpec((0.7, 0.1, 0.2), seed=1))
    assert (len(train), len(val), len(test)) == (8, 1, 2)


def test_split_is_deterministic():
    a = split_dataset(_cases(20), SplitSpec(seed=5))
    b = split_dataset(_cases(20), SplitSpec(seed=5))
    assert [[c.id for c in part] for part in a] == [[c.id for c in part] for part in b]


def test_split_ratios_must_sum_to_one():
    with pytest.raises(DataError):
        SplitSpec((0.5, 0.1, 0.2))


def test_split_needs_enough_cases():
    with pytest.raises(DataError):
        split_dataset(_cases(2), SplitSpec((0.7, 0.1, 0.2)))
