"""Unit tests for the frame/text encoders, fusion block and FPN."""

import numpy as np
import pytest

from src.core.exceptions import ConfigurationError
from src.diffcore import functional as F
from src.diffcore.gradcheck import finite_diff_check
from src.diffcore.tensor import DiffTensor, Tape, backward
from src.models.frontend import (
    Frontend,
    TextFeatures,
    conv3x3_indices,
    nearest_upsample_indices,
)
from src.models.vocabulary import CLS_ID, encode_program


@pytest.fixture
def frontend(rng):
    return Frontend(16, 4, rng)


class TestEncodeFrame:
    def test_zero_frame_gives_zero_features(self, frontend):
        raw = frontend.encode_frame(np.zeros((16, 16, 3)))
        assert np.array_equal(raw.coarse.data, np.zeros((2, 2, 16)))

    def test_output_extents(self, rng):
        raw = Frontend(64, 4, rng).encode_frame(rng.uniform(size=(64, 64, 3)))
        assert raw.coarse.shape == (8, 8, 64)
        assert raw.fine.shape == (16, 16, 64)

    def test_extents_must_be_divisible_by_eight(self, frontend):
        with pytest.raises(ConfigurationError):
            frontend.encode_frame(np.zeros((20, 16, 3)))

    def test_gradient_on_small_frame(self, frontend, rng):
        weights = rng.normal(size=(2, 2, 16))
        error = finite_diff_check(
            lambda x: F.sum_(F.mul(frontend.encode_frame(x).coarse, weights)),
            DiffTensor(rng.uniform(size=(16, 16, 3))),
        )
        assert error <= 1e-5


class TestEncodeText:
    def test_single_token_program(self, frontend):
        text = frontend.encode_text(encode_program(["red"]))
        assert text.num_tokens == 2
        assert text.cls.shape == (16,)
        assert text.content.shape == (1, 16)

    def test_identical_programs_identical_features(self, frontend):
        program = encode_program(["red", "square", "moving-left"])
        first, second = frontend.encode_text(program), frontend.encode_text(program)
        assert np.array_equal(first.tokens.data, second.tokens.data)

    def test_token_order_changes_sentence_token(self, frontend):
        a = frontend.encode_text(encode_program(["red", "square"]))
        b = frontend.encode_text(encode_program(["square", "red"]))
        assert not np.allclose(a.cls.data, b.cls.data)

    def test_empty_program_rejected(self, frontend):
        with pytest.raises(ConfigurationError):
            frontend.encode_text([])

    def test_out_of_vocabulary_rejected(self, frontend):
        with pytest.raises(ConfigurationError):
            frontend.encode_text([10_000])

    def test_too_long_program_rejected(self, frontend):
        with pytest.raises(ConfigurationError):
            frontend.encode_text([CLS_ID + 2] * 17)


class TestFuse:
    def test_zero_text_leaves_normalised_image(self, frontend, rng):
        raw = frontend.encode_frame(rng.uniform(size=(16, 16, 3)))
        features, _ = frontend.fuse(raw, TextFeatures(DiffTensor(np.zeros((3, 16)))))
        expected = F.layer_norm(raw.coarse).data
        assert np.allclose(features.f_img.data, expected, atol=1e-12)

    def test_shape_contract(self, rng):
        frontend = Frontend(64, 4, rng)
        text = frontend.encode_text(encode_program(["blue", "circle"]))
        features, fused_text = frontend(rng.uniform(size=(64, 64, 3)), text)
        assert features.f_img.shape == (8, 8, 64)
        assert features.f_seg.shape == (16, 16, 64)
        assert fused_text.tokens.shape == text.tokens.shape

    def test_segmentation_map_reaches_token_table(self, frontend, rng):
        with Tape():
            text = frontend.encode_text(encode_program(["green", "triangle"]))
            features, _ = frontend(rng.uniform(size=(16, 16, 3)), text)
            backward(F.sum_(F.mul(features.f_seg, rng.normal(size=(4, 4, 16)))))
        assert frontend.token_embedding.grad is not None
        assert np.abs(frontend.token_embedding.grad).max() > 0

    def test_deterministic_under_seed(self):
        frame = np.random.default_rng(5).uniform(size=(16, 16, 3))
        outputs = []
        for _ in range(2):
            frontend = Frontend(16, 4, np.random.default_rng(9))
            text = frontend.encode_text(encode_program(["red"]))
            features, _ = frontend(frame, text)
            outputs.append(features.f_seg.data.tobytes())
        assert outputs[0] == outputs[1]


def test_conv_indices_pad_outside_the_map():
    index = conv3x3_indices(2, 2).reshape(2, 2, 9)
    # top-left pixel: the three upper and three left neighbours are padding
    assert index[0, 0].tolist() == [4, 4, 4, 4, 0, 1, 4, 2, 3]


def test_nearest_upsample_repeats_pixels():
    assert nearest_upsample_indices(1, 2).tolist() == [0, 0, 1, 1, 0, 0, 1, 1]
