"""Unit tests for the memory tracker and the temporal decoder."""

import itertools

import numpy as np
import pytest

from src.core.exceptions import ConfigurationError, ShapeError
from src.diffcore import functional as F
from src.diffcore.gradcheck import finite_diff_check
from src.diffcore.tensor import DiffTensor
from src.models.temporal_enhancer import (
    AlignedSequence,
    ObjectMemory,
    TemporalBlock,
    TemporalEnhancer,
    align_objects,
    cosine_matrix,
    update_memory,
)


def _frames(objects, orders):
    return [DiffTensor(objects[np.asarray(order)]) for order in orders]


class TestCosineMatrix:
    def test_zero_rows_give_zero(self):
        sims = cosine_matrix(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[1.0, 1.0]]))
        assert sims[0, 0] == 0.0
        assert sims[1, 0] == pytest.approx(1 / np.sqrt(2))


class TestAlignment:
    def test_identity_when_frames_agree(self, rng):
        objects = rng.normal(size=(4, 8))
        memory = ObjectMemory.initialise(DiffTensor(objects))
        aligned, permutation = align_objects(memory, DiffTensor(objects))
        assert permutation.tolist() == [0, 1, 2, 3]
        assert np.array_equal(aligned.data, objects)

    def test_swap_is_undone(self, rng):
        objects = rng.normal(size=(3, 8))
        memory = ObjectMemory.initialise(DiffTensor(objects))
        aligned, permutation = align_objects(memory, DiffTensor(objects[[1, 0, 2]]))
        assert permutation.tolist() == [1, 0, 2]
        assert np.array_equal(aligned.data, objects)

    def test_slot_mismatch_rejected(self, rng):
        memory = ObjectMemory.initialise(DiffTensor(rng.normal(size=(3, 4))))
        with pytest.raises(ShapeError):
            align_objects(memory, DiffTensor(rng.normal(size=(2, 4))))

    @pytest.mark.parametrize("slots", [1, 2, 4, 6])
    def test_matches_exhaustive_similarity_oracle(self, slots):
        rng = np.random.default_rng(slots)
        for _ in range(20):
            memory = ObjectMemory.initialise(DiffTensor(rng.normal(size=(slots, 5))))
            o_t = rng.normal(size=(slots, 5))
            sims = cosine_matrix(memory.m.data, o_t)
            best = max(
                sims[np.arange(slots), list(perm)].sum()
                for perm in itertools.permutations(range(slots))
            )
            _, permutation = align_objects(memory, DiffTensor(o_t))
            assert sims[np.arange(slots), permutation].sum() == pytest.approx(best, abs=1e-12)


class TestMemoryUpdate:
    def test_zero_alpha_is_a_fixpoint(self, rng):
        memory = ObjectMemory(DiffTensor(rng.normal(size=(3, 4))), alpha=0.0)
        updated = update_memory(memory, rng.normal(size=(3, 4)), rng.normal(size=4))
        assert np.array_equal(updated.m.data, memory.m.data)

    def test_full_alpha_and_relevance_replace_memory(self, rng):
        sentence = rng.normal(size=4)
        aligned = np.outer([1.0, 2.5, 0.3], sentence)
        memory = ObjectMemory(DiffTensor(rng.normal(size=(3, 4))), alpha=1.0)
        updated = update_memory(memory, aligned, sentence)
        assert np.allclose(updated.m.data, aligned, atol=1e-12)

    def test_irrelevant_rows_keep_their_memory(self, rng):
        sentence = rng.normal(size=4)
        aligned = np.stack([-sentence, rng.normal(size=4)])
        memory = ObjectMemory(DiffTensor(rng.normal(size=(2, 4))), alpha=0.7)
        updated = update_memory(memory, aligned, sentence)
        assert np.array_equal(updated.m.data[0], memory.m.data[0])

    def test_update_is_a_convex_combination(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            alpha = rng.uniform()
            previous = rng.normal(size=(3, 4))
            aligned = rng.normal(size=(3, 4))
            updated = update_memory(
                ObjectMemory(DiffTensor(previous), alpha), aligned, rng.normal(size=4)
            ).m.data
            low, high = np.minimum(previous, aligned), np.maximum(previous, aligned)
            assert np.all(updated >= low - 1e-12)
            assert np.all(updated <= high + 1e-12)

    def test_memory_carries_no_gradient(self, rng):
        first = DiffTensor.parameter(rng.normal(size=(2, 4)))
        memory = ObjectMemory.initialise(first)
        assert not memory.m.requires_grad

    def test_alpha_outside_unit_interval_rejected(self, rng):
        with pytest.raises(ConfigurationError):
            ObjectMemory(DiffTensor(rng.normal(size=(2, 4))), alpha=1.5)


class TestTemporalBlock:
    def test_zero_attention_reduces_to_layer_norm(self, rng):
        block = TemporalBlock(8, 2, rng)
        block.temporal_attention.out_proj.weight.data[...] = 0.0
        block.sentence_attention.out_proj.weight.data[...] = 0.0
        x = rng.normal(size=(3, 4, 8))
        out = block(AlignedSequence(DiffTensor(x)), DiffTensor(rng.normal(size=(3, 8))))
        expected = F.layer_norm(F.layer_norm(x)).data
        assert np.allclose(out.embeddings.data, expected, atol=1e-12)

    def test_identical_frames_stay_identical(self, rng):
        block = TemporalBlock(8, 2, rng)
        frame = rng.normal(size=(4, 8))
        sentence = rng.normal(size=8)
        out = block(
            AlignedSequence(DiffTensor(np.stack([frame] * 3))),
            DiffTensor(np.stack([sentence] * 3)),
        ).embeddings.data
        assert np.allclose(out[0], out[1], atol=1e-12)
        assert np.allclose(out[0], out[2], atol=1e-12)

    def test_sentence_rows_must_match_frames(self, rng):
        block = TemporalBlock(8, 2, rng)
        with pytest.raises(ShapeError):
            block(
                AlignedSequence(DiffTensor(rng.normal(size=(3, 2, 8)))),
                DiffTensor(rng.normal(size=(2, 8))),
            )


class TestTemporalEnhancer:
    def test_shuffled_static_video_is_realigned(self, rng):
        objects = rng.normal(size=(5, 8))
        orders = [[0, 1, 2, 3, 4], [3, 0, 4, 1, 2], [4, 3, 2, 1, 0]]
        sentences = [DiffTensor(rng.normal(size=8))] * 3
        enhancer = TemporalEnhancer(8, 2, 1, rng)
        sequence, memory = enhancer.track(_frames(objects, orders), sentences)
        for t in range(3):
            assert np.array_equal(sequence.frame(t).data, objects)
            assert np.array_equal(np.asarray(orders[t])[sequence.permutations[t]], np.arange(5))
        assert np.allclose(memory.m.data, objects, atol=1e-12)

    def test_single_frame(self, rng):
        objects = rng.normal(size=(3, 8))
        enhancer = TemporalEnhancer(8, 2, 2, rng)
        sequence, memory = enhancer.enhance([DiffTensor(objects)], [DiffTensor(rng.normal(size=8))])
        assert sequence.embeddings.shape == (1, 3, 8)
        assert np.array_equal(memory.m.data, objects)

    def test_tracker_disabled_keeps_incoming_order(self, rng):
        objects = rng.normal(size=(4, 8))
        enhancer = TemporalEnhancer(8, 2, 1, rng, use_tracker=False)
        frames = _frames(objects, [[0, 1, 2, 3], [1, 0, 3, 2]])
        sequence, _ = enhancer.track(frames, [DiffTensor(rng.normal(size=8))] * 2)
        assert np.array_equal(sequence.frame(1).data, frames[1].data)
        assert sequence.permutations[1].tolist() == [0, 1, 2, 3]

    def test_temporal_decoder_disabled_returns_aligned_frames(self, rng):
        objects = rng.normal(size=(4, 8))
        enhancer = TemporalEnhancer(8, 2, 1, rng, use_temporal_decoder=False)
        frames = _frames(objects, [[0, 1, 2, 3], [2, 3, 0, 1]])
        sequence, _ = enhancer.enhance(frames, [DiffTensor(rng.normal(size=8))] * 2)
        assert np.array_equal(sequence.embeddings.data, np.stack([objects, objects]))

    def test_empty_video_rejected(self, rng):
        with pytest.raises(ConfigurationError):
            TemporalEnhancer(8, 2, 1, rng).enhance([], [])

    def test_varying_slot_count_rejected(self, rng):
        frames = [DiffTensor(rng.normal(size=(3, 8))), DiffTensor(rng.normal(size=(2, 8)))]
        with pytest.raises(ShapeError):
            TemporalEnhancer(8, 2, 1, rng).enhance(frames, [DiffTensor(np.ones(8))] * 2)

    def test_invalid_alpha_rejected(self, rng):
        with pytest.raises(ConfigurationError):
            TemporalEnhancer(8, 2, 1, rng, alpha=-0.1)

    def test_gradient_through_two_frames(self, rng):
        enhancer = TemporalEnhancer(8, 2, 1, rng)
        second = DiffTensor(rng.normal(size=(3, 8)))
        sentences = [DiffTensor(rng.normal(size=8)), DiffTensor(rng.normal(size=8))]
        weights = rng.normal(size=(2, 3, 8))
        error = finite_diff_check(
            lambda first: F.sum_(
                F.mul(enhancer.enhance([first, second], sentences)[0].embeddings, weights)
            ),
            DiffTensor(rng.normal(size=(3, 8))),
        )
        assert error <= 1e-5
