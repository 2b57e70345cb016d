import numpy as np
import pytest

from app.core.exceptions import ScenarioParseError
from app.core.gridio import parse_rle_rows, pgm_to_occupancy, read_pgm, write_pgm
from app.core.world import parse_scenario


def test_rle_rows_flip_to_origin_first():
    grid = parse_rle_rows(["3#", "1.2#"])
    assert grid.tolist() == [[False, True, True], [True, True, True]]


@pytest.mark.parametrize("rows", [["3.", "2."], ["3x"], ["0#"], []])
def test_bad_rle_rows(rows):
    with pytest.raises(ValueError):
        parse_rle_rows(rows)


def test_ascii_graymap_with_comment(tmp_path):
    path = tmp_path / "map.pgm"
    path.write_text("P2\n# hall\n3 2\n255\n0 255 255\n255 255 0\n")
    pixels = read_pgm(path)
    assert pixels.tolist() == [[255, 255, 0], [0, 255, 255]]
    assert pgm_to_occupancy(pixels).tolist() == [[False, False, True], [True, False, False]]


def test_binary_graymap_round_trip(tmp_path):
    values = np.arange(12).reshape(3, 4) * 20
    assert np.array_equal(read_pgm(write_pgm(tmp_path / "v.pgm", values)), values)


def test_truncated_graymap(tmp_path):
    path = tmp_path / "short.pgm"
    path.write_text("P2\n3 2\n255\n0 255\n")
    with pytest.raises(ValueError):
        read_pgm(path)


def test_scenario_map_from_graymap(open_room_doc, tmp_path):
    image = np.full((100, 100), 255)
    image[40:60, 60] = 0
    write_pgm(tmp_path / "room.pgm", image)
    open_room_doc["map"] = {"resolution": 0.1, "pgm": "room.pgm", "border": True}
    _, grid = parse_scenario(open_room_doc, base_dir=tmp_path)
    assert grid.occupied[50, 60]
    assert not grid.occupied[50, 59]
    assert grid.occupied[0, 50]


def test_missing_graymap_is_a_parse_error(open_room_doc, tmp_path):
    open_room_doc["map"] = {"resolution": 0.1, "pgm": "absent.pgm"}
    with pytest.raises(ScenarioParseError):
        parse_scenario(open_room_doc, base_dir=tmp_path)
