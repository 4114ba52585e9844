import unittest

import numpy as np
import pytest

from uttverify_core.exceptions import CorpusError, FeatureDimensionError, UnknownPhoneError
from uttverify_core.lexicon import script_to_lattice, toy_inventory, toy_lexicon
from uttverify_core.verifier import compute_apr

from ..generator import (
    MIN_DURATION,
    GeneratorSpec,
    StyleShift,
    degenerate_utterance,
    random_scripts,
    spike_degenerate,
    synthesize_corpus,
    synthesize_utterance,
    training_segments,
)
from ..manifest import Label, MismatchMode, make_mismatch_set


class GeneratorSpecTests(unittest.TestCase):
    def setUp(self):
        self.inventory = toy_inventory()
        self.spec = GeneratorSpec.random(self.inventory, seed=5)

    def test_random_is_seeded(self):
        other = GeneratorSpec.random(self.inventory, seed=5)
        for phone in self.inventory.phones:
            assert np.array_equal(self.spec.generators[phone].means, other.generators[phone].means)
        moved = GeneratorSpec.random(self.inventory, seed=6)
        assert not np.array_equal(self.spec.generators["k"].means, moved.generators["k"].means)

    def test_durations_respect_the_aligner(self):
        with self.assertRaises(ValueError):
            GeneratorSpec.random(self.inventory, duration=(MIN_DURATION - 1, 6))
        with self.assertRaises(ValueError):
            GeneratorSpec.random(self.inventory, silence_duration=(6, 5))

    def test_every_phone_needs_a_generator(self):
        generators = dict(self.spec.generators)
        del generators["k"]
        with self.assertRaises(ValueError):
            GeneratorSpec(inventory=self.inventory, generators=generators)

    def test_pause_probability_range(self):
        with self.assertRaises(ValueError):
            GeneratorSpec.random(self.inventory, pause_probability=1.5)

    def test_unknown_phone(self):
        with self.assertRaises(UnknownPhoneError):
            self.spec.sample("qq", 3, np.random.default_rng(0))

    def test_perturbed_moves_means_only(self):
        moved = self.spec.perturbed(0.5, seed=1)
        g, h = self.spec.generators["s"], moved.generators["s"]
        assert not np.array_equal(g.means, h.means)
        assert np.array_equal(g.variances, h.variances)
        assert np.array_equal(g.weights, h.weights)

    def test_as_model(self):
        model = self.spec.as_model()
        assert model.fingerprint == "synthetic"
        assert model.anti_model.weights.shape == (len(self.inventory.ranking_phones),)
        assert model.anti_model.weights.sum() == pytest.approx(1.0)


class StyleShiftTests(unittest.TestCase):
    def test_gamma_below_one(self):
        with self.assertRaises(ValueError):
            StyleShift(gamma=0.5)

    def test_identity(self):
        frames = np.random.default_rng(0).normal(size=(10, 13))
        out = StyleShift().apply(frames, np.random.default_rng(1))
        assert np.array_equal(out, frames)

    def test_offset_dimension(self):
        shift = StyleShift(offset=(1.0, 2.0))
        with self.assertRaises(FeatureDimensionError):
            shift.apply(np.zeros((4, 13)), np.random.default_rng(0))

    def test_with_offset_norm(self):
        shift = StyleShift.with_offset(gamma=3.0, norm=2.0, seed=4)
        assert len(shift.offset) == 13
        assert np.linalg.norm(shift.offset) == pytest.approx(2.0)
        out = shift.apply(np.zeros((20000, 13)), np.random.default_rng(0))
        assert out.mean(axis=0) == pytest.approx(np.array(shift.offset), abs=0.05)
        assert out.var(axis=0) == pytest.approx(np.full(13, 2.0), rel=0.1)


class UtteranceTests(unittest.TestCase):
    def setUp(self):
        self.lexicon = toy_lexicon()
        self.spec = GeneratorSpec.random(self.lexicon.inventory, seed=2)
        self.model = self.spec.as_model()

    def test_same_seed_same_utterance(self):
        a = synthesize_utterance("the red boat", self.lexicon, self.spec, seed=9)
        b = synthesize_utterance("the red boat", self.lexicon, self.spec, seed=9)
        assert np.array_equal(a.features.frames, b.features.frames)
        assert a.alignment == b.alignment

    def test_ground_truth_alignment(self):
        utt = synthesize_utterance("the cat", self.lexicon, self.spec, seed=1)
        segments = utt.alignment.segments
        assert segments[0].is_silence and segments[-1].is_silence
        assert segments[0].start == 0
        assert segments[-1].end == utt.features.num_frames == utt.alignment.num_frames
        for left, right in zip(segments, segments[1:]):
            assert left.end == right.start
        phones = tuple(s.phone for s in utt.alignment.phone_segments)
        expansions = [e.phones for e in script_to_lattice("the cat", self.lexicon).expansions()]
        assert phones in expansions
        for seg in utt.alignment.phone_segments:
            assert self.spec.duration[0] <= seg.end - seg.start <= self.spec.duration[1]

    def test_generator_model_ranks_ground_truth_first(self):
        vocabulary = self.lexicon.words()
        aprs = []
        for i, script in enumerate(random_scripts(vocabulary, 100, (2, 4), seed=3)):
            utt = synthesize_utterance(script, self.lexicon, self.spec, seed=i)
            aprs.append(compute_apr(self.model, utt.alignment, utt.features))
        assert np.mean(aprs) <= 1.5

    def test_degenerate_utterance(self):
        normal = synthesize_utterance("green ship", self.lexicon, self.spec, seed=4)
        degenerate = degenerate_utterance("green ship", self.lexicon, self.spec, seed=4)
        assert compute_apr(self.model, degenerate.alignment, degenerate.features) <= 1.5
        per_frame = [u.alignment.total_loglik / u.alignment.num_frames for u in (normal, degenerate)]
        assert per_frame[1] < per_frame[0] - 40.0


def test_training_segments():
    spec = GeneratorSpec.random(toy_inventory(), seed=0)
    segments = training_segments(spec, per_phone=5, seed=1)
    assert len(segments) == 5 * len(spec.inventory.phones)
    for seg in segments:
        low, high = spec.silence_duration if seg.phone == "sil" else spec.duration
        assert low <= seg.frames.shape[0] <= high


def test_random_scripts():
    vocabulary = ["a", "cat", "dog", "sun"]
    scripts = random_scripts(vocabulary, 20, (1, 3), seed=0)
    assert len(set(scripts)) == 20
    assert all(1 <= len(s.split()) <= 3 for s in scripts)
    assert scripts == random_scripts(vocabulary, 20, (1, 3), seed=0)


@pytest.mark.parametrize(
    "vocabulary,n,words",
    [([], 1, (1, 2)), (["cat"], 3, (1, 1)), (["cat", "dog"], 1, (0, 2)), (["cat", "dog"], 1, (3, 2))],
)
def test_random_scripts_errors(vocabulary, n, words):
    with pytest.raises(CorpusError):
        random_scripts(vocabulary, n, words)


def test_shifted_corpus_shares_scripts():
    lexicon = toy_lexicon()
    spec = GeneratorSpec.random(lexicon.inventory, seed=0)
    read = synthesize_corpus(lexicon, spec, 6, seed=3)
    shifted = synthesize_corpus(lexicon, spec, 6, shift=StyleShift(gamma=2.0), style="spont", seed=3)
    assert [e.script for e in read] == [e.script for e in shifted]
    assert [e.pair_id for e in read] == ["u00000", "u00001", "u00002", "u00003", "u00004", "u00005"]
    assert all(e.label == Label.CORRECT for e in read)
    assert {e.style for e in shifted} == {"spont"}
    for a, b in zip(read, shifted):
        fa, fb = read.features(a), shifted.features(b)
        assert fa.frames.shape == fb.frames.shape
        assert not np.array_equal(fa.frames, fb.frames)


def test_spiking_keeps_the_manifest_balanced():
    lexicon = toy_lexicon()
    spec = GeneratorSpec.random(lexicon.inventory, seed=0)
    manifest = make_mismatch_set(synthesize_corpus(lexicon, spec, 10, words=(2, 3), seed=1), "reassign", seed=1)
    spiked = spike_degenerate(manifest, lexicon, spec, fraction=0.2, seed=2)
    assert len(spiked) == 20
    assert spiked.is_balanced()
    degenerate = [e for e in spiked if e.mode == MismatchMode.DEGENERATE]
    assert [e.pair_id for e in degenerate] == ["g00000", "g00001", "g00002", "g00003"]
    assert all(e.label == Label.INCORRECT for e in degenerate)
    assert [e.pair_id for e in spiked.correct()] == [e.pair_id for e in manifest.correct()]
    for entry in degenerate:
        assert spiked.features(entry).num_frames > 0
    assert spike_degenerate(manifest, lexicon, spec, fraction=0.5, seed=2).counts()[Label.INCORRECT] == 10


@pytest.mark.parametrize("fraction", [0.0, 0.6, 1.5])
def test_spiking_errors(fraction):
    lexicon = toy_lexicon()
    spec = GeneratorSpec.random(lexicon.inventory, seed=0)
    manifest = make_mismatch_set(synthesize_corpus(lexicon, spec, 4, words=(2, 3), seed=1), "reassign", seed=1)
    with pytest.raises(CorpusError):
        spike_degenerate(manifest, lexicon, spec, fraction=fraction)
