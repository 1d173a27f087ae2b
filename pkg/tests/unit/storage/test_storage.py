import struct

import numpy as np
import pytest

from infogain.errors import (
    BadMagicError,
    MalformedHeaderError,
    MalformedRowError,
    MissingMapError,
    NonFiniteError,
    TruncatedFileError,
    ValidationFailedError,
    VersionUnsupportedError,
)
from infogain.models import ImageFrame
from infogain.storage.fixations import (
    parse_fixations_csv,
    parse_frames_csv,
    write_fixations_csv,
    write_frames_csv,
)
from infogain.storage.mapfile import load_model_maps, map_path, read_map, write_map

pytestmark = pytest.mark.unit

HEADER = "image_id,subject_id,x,y,t\n"


def _write(path, text: str):
    path.write_text(text, encoding="utf-8")
    return path


# --- fixation tables ---


def test_rows_of_one_subject_and_image_form_one_train(tmp_path):
    path = _write(tmp_path / "fix.csv", HEADER + "img1,s01,10.5,20.0,0.1\nimg1,s01,30.0,40.25,0.35\n")
    (train,) = parse_fixations_csv(path)
    assert (train.image_id, train.subject_id) == ("img1", "s01")
    assert [(f.x, f.y, f.t) for f in train.fixations] == [(10.5, 20.0, 0.1), (30.0, 40.25, 0.35)]


def test_trains_keep_first_appearance_order(tmp_path):
    path = _write(
        tmp_path / "fix.csv",
        HEADER + "b,s2,1,1,0\na,s1,1,1,0\nb,s2,2,2,1\n",
    )
    trains = parse_fixations_csv(path)
    assert [(t.image_id, t.subject_id, len(t)) for t in trains] == [("b", "s2", 2), ("a", "s1", 1)]


def test_malformed_header(tmp_path):
    path = _write(tmp_path / "fix.csv", "image,subject,x,y,t\na,s,1,1,0\n")
    with pytest.raises(MalformedHeaderError) as exc:
        parse_fixations_csv(path)
    assert exc.value.details["found"] == "image,subject,x,y,t"


def test_malformed_row_reports_line(tmp_path):
    path = _write(tmp_path / "fix.csv", HEADER + "a,s,1,1,0\na,s,oops,1,1\n")
    with pytest.raises(MalformedRowError) as exc:
        parse_fixations_csv(path)
    assert exc.value.details["line"] == 3


def test_short_row(tmp_path):
    path = _write(tmp_path / "fix.csv", HEADER + "a,s,1,1\n")
    with pytest.raises(MalformedRowError) as exc:
        parse_fixations_csv(path)
    assert exc.value.details["line"] == 2


def test_decreasing_times_fail_validation(tmp_path):
    path = _write(tmp_path / "fix.csv", HEADER + "a,s,1,1,0.2\na,s,2,2,0.1\n")
    with pytest.raises(ValidationFailedError) as exc:
        parse_fixations_csv(path)
    assert any("t not strictly increasing" in v for v in exc.value.details["violations"])


def test_coordinates_checked_against_frames(tmp_path):
    path = _write(tmp_path / "fix.csv", HEADER + "a,s,12,1,0\n")
    frames = [ImageFrame(image_id="a", width=10, height=10)]
    with pytest.raises(ValidationFailedError) as exc:
        parse_fixations_csv(path, frames)
    assert exc.value.details["violations"] == ["train s/a: fixation 0 outside frame"]


def test_written_table_reads_back(tmp_path, make_train):
    trains = [make_train("a", "s1", [(0.1, 2.0), (3.25, 1.0)]), make_train("b", "s2", [(4.0, 4.0)])]
    path = write_fixations_csv(tmp_path / "out" / "fix.csv", trains)
    assert path.read_text().splitlines()[0] == HEADER.strip()
    assert parse_fixations_csv(path) == trains


# --- frame tables ---


def test_frames_table(tmp_path):
    path = _write(tmp_path / "frames.csv", "image_id,width,height\na,64,48\nb,32,32\n")
    frames = parse_frames_csv(path)
    assert [(f.image_id, f.width, f.height) for f in frames] == [("a", 64, 48), ("b", 32, 32)]
    again = parse_frames_csv(write_frames_csv(tmp_path / "copy.csv", frames))
    assert again == frames


def test_frames_bad_row(tmp_path):
    path = _write(tmp_path / "frames.csv", "image_id,width,height\na,64\n")
    with pytest.raises(MalformedRowError) as exc:
        parse_frames_csv(path)
    assert exc.value.details["line"] == 2


def test_frames_duplicate_ids(tmp_path):
    path = _write(tmp_path / "frames.csv", "image_id,width,height\na,4,4\na,8,8\n")
    with pytest.raises(ValidationFailedError):
        parse_frames_csv(path)


# --- map files ---


def test_map_file_layout(tmp_path):
    grid = np.array([[0.0, 0.5, 1.0], [0.25, 0.75, 1.0]])
    path = write_map(tmp_path / "a.smap", grid)
    data = path.read_bytes()
    assert data[:4] == b"SMAP"
    assert struct.unpack_from("<III", data, 4) == (1, 3, 2)
    assert len(data) == 16 + 6 * 8
    np.testing.assert_array_equal(read_map(path), grid)


def test_map_rejects_non_finite(tmp_path):
    with pytest.raises(NonFiniteError):
        write_map(tmp_path / "a.smap", np.array([[np.inf, 0.0]]))


def test_bad_magic(tmp_path):
    path = tmp_path / "a.smap"
    path.write_bytes(b"NOPE" + struct.pack("<III", 1, 1, 1) + b"\x00" * 8)
    with pytest.raises(BadMagicError):
        read_map(path)


def test_unsupported_version(tmp_path):
    path = tmp_path / "a.smap"
    path.write_bytes(b"SMAP" + struct.pack("<III", 2, 1, 1) + b"\x00" * 8)
    with pytest.raises(VersionUnsupportedError) as exc:
        read_map(path)
    assert exc.value.details["version"] == 2


@pytest.mark.parametrize("size", [3, 16 + 8 * 3])
def test_truncated(tmp_path, size):
    data = write_map(tmp_path / "full.smap", np.ones((2, 2))).read_bytes()
    path = tmp_path / "cut.smap"
    path.write_bytes(data[:size])
    with pytest.raises(TruncatedFileError):
        read_map(path)


def test_missing_map_names_model_and_image(tmp_path):
    frames = [ImageFrame(image_id="a", width=2, height=2), ImageFrame(image_id="b", width=2, height=2)]
    write_map(map_path(tmp_path, "a"), np.ones((2, 2)))
    with pytest.raises(MissingMapError) as exc:
        load_model_maps("deepnet", tmp_path, frames)
    assert exc.value.details["model_id"] == "deepnet"
    assert exc.value.details["image_id"] == "b"
    payload = exc.value.to_dict()
    assert payload["error"] == "MissingMapError"
    assert payload["details"]["image_id"] == "b"


def test_load_model_maps(tmp_path):
    frames = [ImageFrame(image_id="a", width=3, height=2)]
    write_map(map_path(tmp_path, "a"), np.arange(6.0).reshape(2, 3))
    maps = load_model_maps("m", tmp_path, frames)
    assert maps["a"].model_id == "m"
    assert maps["a"].values.shape == (2, 3)
