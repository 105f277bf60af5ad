"""Unit tests for mask export files."""

import cv2
import numpy as np
import pytest

from src.core.exceptions import ShapeError
from src.services.mask_export import (
    decode_runs,
    encode_runs,
    read_rle,
    write_pgm_frames,
    write_rle,
)


def test_runs_start_with_background():
    mask = np.array([[1, 1, 0], [0, 1, 1]], dtype=bool)
    assert encode_runs(mask) == [0, 2, 2, 2]


def test_empty_mask_is_one_background_run():
    assert encode_runs(np.zeros((2, 3), dtype=bool)) == [6]


def test_decode_restores_mask():
    assert decode_runs([1, 2, 3], 2, 3).tolist() == [[False, True, True], [False, False, False]]


def test_decode_rejects_wrong_total():
    with pytest.raises(ShapeError):
        decode_runs([1, 2], 2, 3)


def test_rle_file(tmp_path, rng):
    masks = rng.uniform(size=(3, 4, 5)) > 0.5
    path = write_rle(tmp_path / "out" / "prediction.rle", masks)
    lines = path.read_text().splitlines()
    assert [line.split()[0] for line in lines] == ["0", "1", "2"]
    assert np.array_equal(read_rle(path, 4, 5), masks)


def test_pgm_frames(tmp_path):
    masks = np.zeros((2, 4, 4), dtype=bool)
    masks[1, 1:3, 1:3] = True
    paths = write_pgm_frames(tmp_path, masks, prefix="prediction")
    assert [p.name for p in paths] == ["prediction_000.pgm", "prediction_001.pgm"]
    image = cv2.imread(str(paths[1]), cv2.IMREAD_GRAYSCALE)
    assert image.shape == (4, 4)
    assert image[1, 1] == 255
    assert image[0, 0] == 0
