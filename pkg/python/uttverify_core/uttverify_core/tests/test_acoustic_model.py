import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pytest

from ..acoustic_model import (
    AcousticModel,
    FrameScorer,
    LabeledSegment,
    identifiability_matrix,
    load_model,
    save_model,
    score_anti,
    score_frame,
    score_segment,
    train_em,
)
from ..exceptions import (
    CorruptModelError,
    EmptySegmentError,
    FeatureDimensionError,
    InsufficientDataError,
    InventoryMismatchError,
    ModelVersionError,
    UnknownPhoneError,
)
from ..frontend import FeatureMatrix
from ..gmm import Gmm, fit_gmm
from . import synthetic


def linear_domain_loglik(gmm: Gmm, frame: np.ndarray) -> float:
    total = 0.0
    for w, mu, var in zip(gmm.weights, gmm.means, gmm.variances):
        density = 1.0
        for d in range(len(frame)):
            density *= math.exp(-((frame[d] - mu[d]) ** 2) / (2 * var[d])) / math.sqrt(
                2 * math.pi * var[d]
            )
        total += w * density
    return math.log(total)


def test_k1_recovers_sample_mean_in_one_iteration():
    rng = np.random.default_rng(0)
    true_mean = np.array([1.0, -2.0, 0.5])
    x = true_mean + rng.normal(scale=[1.0, 0.5, 2.0], size=(2000, 3))
    fit = fit_gmm(x, K=1, iters=50, seed=3)

    assert fit.iterations == 1
    assert fit.converged
    assert len(fit.history) == 2
    np.testing.assert_allclose(fit.gmm.means[0], x.mean(axis=0), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(fit.gmm.variances[0], x.var(axis=0), rtol=1e-10)
    standard_error = x.std(axis=0) / math.sqrt(len(x))
    assert np.all(np.abs(fit.gmm.means[0] - x.mean(axis=0)) < 3 * standard_error)


def test_two_separated_clusters():
    rng = np.random.default_rng(1)
    left = rng.normal(loc=-10.0, size=(300, 2))
    right = rng.normal(loc=10.0, size=(700, 2))
    x = np.vstack([left, right])
    fit = fit_gmm(x, K=2, iters=100, seed=0)
    gmm = fit.gmm

    order = np.argsort(gmm.means[:, 0])
    np.testing.assert_allclose(gmm.weights[order], [0.3, 0.7], atol=0.05)
    np.testing.assert_allclose(gmm.means[order[0]], left.mean(axis=0), atol=1e-6)
    np.testing.assert_allclose(gmm.means[order[1]], right.mean(axis=0), atol=1e-6)

    # responsibilities are hard assignments
    log_comp = np.log(gmm.weights) - 0.5 * np.sum(
        (x[:, None, :] - gmm.means[None]) ** 2 / gmm.variances[None]
        + np.log(2 * np.pi * gmm.variances[None]),
        axis=2,
    )
    resp = np.exp(log_comp - log_comp.max(axis=1, keepdims=True))
    resp /= resp.sum(axis=1, keepdims=True)
    assert np.all(resp.max(axis=1) > 0.999)


@pytest.mark.parametrize("seed", range(5))
def test_em_log_likelihood_never_decreases(seed):
    rng = np.random.default_rng(100 + seed)
    centers = rng.normal(scale=4.0, size=(3, 13))
    labels = rng.integers(0, 3, size=600)
    x = centers[labels] + rng.normal(scale=rng.uniform(0.3, 2.0, size=13), size=(600, 13))
    fit = fit_gmm(x, K=4, iters=60, seed=seed, tol=0.0)
    assert len(fit.history) >= 2
    assert np.all(np.diff(fit.history) >= -1e-8)


def test_variance_floor_applies():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(200, 4))
    x[:, 2] = 5.0
    fit = fit_gmm(x, K=2, seed=0, variance_floor=1e-4)
    assert np.all(fit.gmm.variances >= 1e-4)
    assert np.all(np.isfinite(fit.gmm.log_likelihood(x)))


def test_insufficient_data_names_the_phone():
    with pytest.raises(InsufficientDataError) as exc:
        fit_gmm(np.zeros((10, 13)), K=1, name="zh")
    assert exc.value.phone == "zh"
    assert "zh" in str(exc.value)


def test_gmm_invariants():
    with pytest.raises(ValueError):
        Gmm(weights=[0.5, 0.6], means=np.zeros((2, 2)), variances=np.ones((2, 2)))
    with pytest.raises(ValueError):
        Gmm(weights=[1.0], means=np.zeros((1, 2)), variances=[[1.0, 0.0]])
    with pytest.raises(ValueError):
        Gmm(weights=[1.0], means=[[np.inf, 0.0]], variances=np.ones((1, 2)))


def test_sample_is_seeded():
    gmm = synthetic.single_gaussian(np.arange(13.0))
    a = gmm.sample(50, np.random.default_rng(4))
    b = gmm.sample(50, np.random.default_rng(4))
    assert a.shape == (50, 13)
    assert np.array_equal(a, b)


class ScoringTests(unittest.TestCase):
    def setUp(self):
        self.inventory = synthetic.inventory()
        self.means = synthetic.phone_means(self.inventory)
        self.model = synthetic.fixed_model(self.inventory, self.means)
        self.rng = np.random.default_rng(9)

    def test_gaussian_at_its_mean(self):
        variances = np.linspace(0.5, 2.0, 13)
        gmm = Gmm(weights=[1.0], means=[self.means["a"]], variances=[variances])
        model = AcousticModel(
            inventory=self.inventory,
            gmms={**self.model.gmms, "a": gmm},
            anti_model=self.model.anti_model,
        )
        expected = -0.5 * sum(math.log(2 * math.pi * v) for v in variances)
        assert score_frame(model, "a", self.means["a"]) == pytest.approx(expected, abs=1e-12)

    def test_matches_linear_domain_oracle(self):
        gmm = Gmm(
            weights=[0.2, 0.5, 0.3],
            means=self.rng.normal(scale=0.5, size=(3, 13)),
            variances=self.rng.uniform(0.5, 2.0, size=(3, 13)),
        )
        model = AcousticModel(
            inventory=self.inventory,
            gmms={**self.model.gmms, "b": gmm},
            anti_model=self.model.anti_model,
        )
        for _ in range(20):
            frame = self.rng.normal(scale=0.7, size=13)
            assert score_frame(model, "b", frame) == pytest.approx(
                linear_domain_loglik(gmm, frame), abs=1e-9
            )

    def test_far_frame_is_finite(self):
        value = score_frame(self.model, "a", np.full(13, 1e6))
        assert math.isfinite(value)
        assert value < -1e10

    def test_segment_scores(self):
        seg = synthetic.draw(self.means, "b", 5, self.rng)
        frame_scores = [score_frame(self.model, "b", f) for f in seg]
        assert score_segment(self.model, "b", seg[:1]) == frame_scores[0]
        assert score_segment(self.model, "b", seg) == pytest.approx(np.mean(frame_scores), abs=1e-12)
        repeated = np.tile(seg[2], (7, 1))
        assert score_segment(self.model, "b", repeated) == pytest.approx(frame_scores[2], abs=1e-12)

    def test_anti_uses_the_same_path(self):
        swapped = AcousticModel(
            inventory=self.inventory,
            gmms={**self.model.gmms, "c": self.model.anti_model},
            anti_model=self.model.anti_model,
        )
        seg = synthetic.draw(self.means, "a", 4, self.rng)
        assert score_anti(self.model, seg) == score_segment(swapped, "c", seg)
        assert math.isfinite(score_anti(self.model, seg[:1]))

    def test_errors(self):
        with self.assertRaises(UnknownPhoneError):
            score_frame(self.model, "zz", np.zeros(13))
        with self.assertRaises(FeatureDimensionError):
            score_frame(self.model, "a", np.zeros(12))
        with self.assertRaises(EmptySegmentError):
            score_segment(self.model, "a", np.zeros((0, 13)))
        with self.assertRaises(EmptySegmentError):
            score_anti(self.model, np.zeros((0, 13)))

    def test_frame_scorer_agrees(self):
        feat = FeatureMatrix(frames=synthetic.draw(self.means, "c", 12, self.rng))
        scorer = FrameScorer(self.model, feat)
        assert scorer.segment_score("c", 2, 9) == pytest.approx(
            score_segment(self.model, "c", feat.frames[2:9]), abs=1e-12
        )
        assert scorer.segment_anti(0, 12) == pytest.approx(score_anti(self.model, feat.frames), abs=1e-12)
        assert scorer.phone_scores("c") is scorer.phone_scores("c")


def test_phone_beats_anti_model_statistically():
    model = synthetic.trained_model(K=2)
    inv = model.inventory
    means = synthetic.phone_means(inv)
    rng = np.random.default_rng(77)
    wins = 0
    for i in range(1000):
        phone = inv.ranking_phones[i % inv.size]
        seg = synthetic.draw(means, phone, int(rng.integers(3, 9)), rng)
        wins += score_segment(model, phone, seg) > score_anti(model, seg)
    assert wins >= 950


def test_training_is_deterministic_and_reports_progress():
    inv = synthetic.inventory()
    segments = synthetic.training_segments(synthetic.phone_means(inv))
    calls = []
    a = train_em(segments, inv, K=2, iters=10, seed=5, callback=lambda *args: calls.append(args))
    b = train_em(segments, inv, K=2, iters=10, seed=5)
    for phone in inv.phones:
        assert np.array_equal(a.gmm(phone).means, b.gmm(phone).means)
        assert np.array_equal(a.gmm(phone).variances, b.gmm(phone).variances)
    assert np.array_equal(a.anti_model.means, b.anti_model.means)
    assert {name for name, _, _ in calls} == set(inv.phones) | {"<anti>"}


def test_training_needs_every_phone():
    inv = synthetic.inventory()
    segments = [s for s in synthetic.training_segments(synthetic.phone_means(inv)) if s.phone != "b"]
    with pytest.raises(InsufficientDataError) as exc:
        train_em(segments, inv, K=1)
    assert exc.value.phone == "b"
    with pytest.raises(UnknownPhoneError):
        train_em([LabeledSegment(phone="q", frames=np.zeros((1, 13)))], inv)


def test_identifiability():
    model = synthetic.trained_model(K=2)
    means = synthetic.phone_means(model.inventory)
    rng = np.random.default_rng(3)
    segments = {p: [synthetic.draw(means, p, 6, rng) for _ in range(20)] for p in model.inventory.phones}
    phones, R = identifiability_matrix(model, segments)
    assert phones == model.inventory.phones
    assert np.all(np.argmax(R, axis=1) == np.arange(len(phones)))


class ModelFileTests(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.model = synthetic.trained_model(K=2)
        self.path = self.tmp / "model.txt"
        save_model(self.model, self.path)

    def tearDown(self):
        self._tmp.cleanup()

    def test_round_trip_scores_bit_identical(self):
        back = load_model(self.path, inventory=self.model.inventory)
        rng = np.random.default_rng(0)
        frames = rng.normal(scale=3.0, size=(25, 13))
        for phone in self.model.inventory.phones:
            assert np.array_equal(
                back.gmm(phone).log_likelihood(frames), self.model.gmm(phone).log_likelihood(frames)
            )
        assert score_anti(back, frames) == score_anti(self.model, frames)
        assert back.inventory == self.model.inventory

    def test_header(self):
        lines = self.path.read_text().splitlines()
        assert lines[:3] == ["version 1", "dim 13", "components 2"]
        assert lines[-1] == "end"

    def test_edited_phone_list(self):
        text = self.path.read_text().replace("phone b\n", "phone bb\n")
        self.path.write_text(text)
        with self.assertRaises(InventoryMismatchError):
            load_model(self.path)

    def test_other_inventory(self):
        with self.assertRaises(InventoryMismatchError):
            load_model(self.path, inventory=synthetic.inventory(("a", "b", "x")))

    def test_truncated(self):
        lines = self.path.read_text().splitlines(keepends=True)
        self.path.write_text("".join(lines[: len(lines) // 2]))
        with self.assertRaises(CorruptModelError):
            load_model(self.path)

    def test_version(self):
        self.path.write_text(self.path.read_text().replace("version 1", "version 7", 1))
        with self.assertRaises(ModelVersionError):
            load_model(self.path)

    def test_missing(self):
        with self.assertRaises(FileNotFoundError):
            load_model(self.tmp / "absent.txt")
