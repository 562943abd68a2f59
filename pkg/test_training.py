"""Loss, optimizer, fold planning and training loop tests."""

# run these tests like:
#
#    python -m unittest test_training.py


import math
from collections import Counter
from unittest import TestCase

import numpy as np
from hypothesis import given, settings, strategies as st

from audio import AudioClip, MfccConfig
from errors import (DimensionError, InputContractError, LabelError, NumericError, ParameterError,
                    ProtocolError, StratificationError)
from models import EmotionLabel, ModelHyper, ModelVariant, build_model
from tensor import Tape, Tensor, gradient_check
from training import (AdamState, FeatureSet, Split, TrainConfig, adam_step, compare_variants, cross_entropy,
                      cross_validate, evaluate, minibatches, predict, predict_clip, stratified_kfold, train)

TINY = ModelHyper(channels=(2, 4), gru_hidden=3, cbam_reduction=2, odconv_kernels=2, spatial_kernel=3,
                  classifier_hidden=4, dropout=0.0, mfcc_bins=8, mfcc_frames=12, wave_samples=64)


def learnable_set(per_class=10, seed=0, hyper=TINY):
    """Five classes, each marked by a raised MFCC bin and a distinct waveform period."""

    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(5), per_class)
    n = labels.size
    mfcc = rng.standard_normal((n, hyper.mfcc_frames, hyper.mfcc_bins)) * 0.3
    mfcc[np.arange(n), :, labels] += 2.0
    t = np.arange(hyper.wave_samples)
    wave = rng.standard_normal((n, hyper.wave_samples)) * 0.1
    wave += np.sin(2 * np.pi * (labels[:, None] + 1) * t[None, :] / 16.0)
    return FeatureSet(labels, mfcc, wave)


class CrossEntropyTestCase(TestCase):
    """Softmax cross-entropy."""

    def test_uniform_logits(self):
        """Are equal logits a loss of ln 5?"""

        loss = cross_entropy(Tensor(np.zeros((3, 5))), [0, 2, 4])
        self.assertAlmostEqual(loss.item(), math.log(5), delta=1e-12)

    def test_confident_correct(self):
        """Is a margin of 40 on the right class a loss below 1e-6?"""

        logits = np.zeros((2, 5))
        logits[0, 1] = logits[1, 3] = 40.0
        self.assertLess(cross_entropy(Tensor(logits), [1, 3]).item(), 1e-6)

    def test_stable_for_large_logits(self):
        """Do logits of 1000 stay finite?"""

        logits = np.full((1, 5), 1000.0)
        logits[0, 0] = 1010.0
        self.assertTrue(np.isfinite(cross_entropy(Tensor(logits), [2]).item()))

    def test_naive_oracle(self):
        """Does the loss match -log(softmax) written out on 100 random batches?"""

        for seed in range(100):
            rng = np.random.default_rng(seed)
            z = rng.standard_normal((4, 5)) * 3
            y = rng.integers(0, 5, 4)
            p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
            expected = -np.log(p[np.arange(4), y]).mean()
            self.assertAlmostEqual(cross_entropy(Tensor(z), y).item(), expected, delta=1e-10)

    def test_gradient(self):
        """Is the logit gradient (softmax − one-hot) / B with rows summing to 0?"""

        rng = np.random.default_rng(1)
        for seed in range(5):
            z = Tensor(np.random.default_rng(seed).standard_normal((3, 5)), requires_grad=True)
            y = rng.integers(0, 5, 3)
            with Tape() as tape:
                tape.backward(cross_entropy(z, y))
            np.testing.assert_allclose(z.grad.sum(axis=1), np.zeros(3), atol=1e-12)
            self.assertLess(gradient_check(lambda z: cross_entropy(z, y), [Tensor(z.data)]), 1e-5)

    def test_errors(self):
        """Are bad labels, label counts and logit ranks rejected?"""

        with self.assertRaises(LabelError):
            cross_entropy(Tensor(np.zeros((2, 5))), [0, 5])
        with self.assertRaises(ParameterError):
            cross_entropy(Tensor(np.zeros((2, 5))), [0])
        with self.assertRaises(DimensionError):
            cross_entropy(Tensor(np.zeros(5)), [0])


class AdamTestCase(TestCase):
    """Bias-corrected Adam updates."""

    def setUp(self):
        self.config = TrainConfig()

    def test_zero_gradient(self):
        """Does a zero gradient leave parameters unchanged and decay the moments?"""

        state = AdamState(m={"w": np.ones(3)}, v={"w": np.ones(3)}, t=4)
        params = {"w": np.array([1.0, -2.0, 3.0])}
        updated, state = adam_step(params, {"w": np.zeros(3)}, state, TrainConfig(lr=1e-12))
        np.testing.assert_allclose(updated["w"], params["w"], atol=1e-9)
        np.testing.assert_allclose(state.m["w"], 0.9 * np.ones(3))
        np.testing.assert_allclose(state.v["w"], 0.999 * np.ones(3))
        self.assertEqual(state.t, 5)

    def test_first_step_size(self):
        """Does the first step with g = 1 move a parameter by −lr?"""

        updated, _ = adam_step({"w": np.array([0.5])}, {"w": np.array([1.0])}, AdamState(), self.config)
        self.assertAlmostEqual(updated["w"][0] - 0.5, -0.001, delta=1e-9)

    def test_quadratic_descent(self):
        """Do ten steps on w² move w toward 0 every time?"""

        w, state = np.array([1.0]), AdamState()
        for _ in range(10):
            updated, state = adam_step({"w": w}, {"w": 2 * w}, state, self.config)
            self.assertLess(abs(updated["w"][0]), abs(w[0]))
            w = updated["w"]

    def test_shape_mismatch(self):
        """Is a gradient of the wrong shape rejected?"""

        with self.assertRaises(DimensionError):
            adam_step({"w": np.zeros(3)}, {"w": np.zeros(2)}, AdamState(), self.config)

    def test_config_validation(self):
        """Are unsupported optimizers and bad settings rejected?"""

        with self.assertRaises(ParameterError):
            TrainConfig(optimizer="sgd")
        with self.assertRaises(ParameterError):
            TrainConfig(lr=0)
        with self.assertRaises(ParameterError):
            TrainConfig(k_folds=1)


class StratifiedKFoldTestCase(TestCase):
    """Class-balanced fold assignment."""

    def test_even_classes(self):
        """Do five classes of ten give two of each class per fold?"""

        plan = stratified_kfold(np.repeat(np.arange(5), 10), 5, seed=0)
        np.testing.assert_array_equal(plan.histograms(), np.full((5, 5), 2))

    def test_uneven_class(self):
        """Is a class of eleven split 3/2/2/2/2 across folds?"""

        plan = stratified_kfold(np.repeat(np.arange(5), [11, 10, 10, 10, 10]), 5, seed=0)
        self.assertEqual(sorted(plan.histograms()[:, 0]), [2, 2, 2, 2, 3])

    def test_every_sample_once(self):
        """Is every sample in exactly one test split?"""

        labels = np.repeat(np.arange(5), 7)
        plan = stratified_kfold(labels, 5, seed=3)
        tests = np.concatenate([plan.split(f).test for f in range(5)])
        np.testing.assert_array_equal(np.sort(tests), np.arange(labels.size))
        split = plan.split(2)
        self.assertEqual(len(np.intersect1d(split.train, split.test)), 0)

    def test_deterministic(self):
        """Does the same seed give the same folds and another seed different ones?"""

        labels = np.repeat(np.arange(5), 10)
        a = stratified_kfold(labels, 5, seed=7).folds
        np.testing.assert_array_equal(a, stratified_kfold(labels, 5, seed=7).folds)
        self.assertFalse(np.array_equal(a, stratified_kfold(labels, 5, seed=8).folds))

    @given(st.lists(st.integers(5, 20), min_size=1, max_size=5), st.integers(2, 5), st.integers(0, 1000))
    @settings(max_examples=100, deadline=None)
    def test_balance_property(self, sizes, k, seed):
        """Do a class's fold counts differ by at most one, and fold sizes too?"""

        labels = np.repeat(np.arange(len(sizes)), sizes)
        hist = stratified_kfold(labels, k, seed).histograms()
        for c in range(len(sizes)):
            self.assertLessEqual(hist[:, c].max() - hist[:, c].min(), 1)
        totals = hist.sum(axis=1)
        self.assertLessEqual(totals.max() - totals.min(), 1)

    def test_too_few_samples(self):
        """Is a class with fewer than k samples rejected by name?"""

        labels = np.array([0] * 5 + [2] * 3)
        with self.assertRaisesRegex(StratificationError, "sadness"):
            stratified_kfold(labels, 5, seed=0)
        with self.assertRaises(ParameterError):
            stratified_kfold(labels, 1, seed=0)

    def test_bad_fold(self):
        """Is a fold id outside 0..k-1 rejected?"""

        plan = stratified_kfold(np.repeat(np.arange(5), 5), 5, seed=0)
        with self.assertRaises(ParameterError):
            plan.split(5)


class MinibatchTestCase(TestCase):
    """Shuffled minibatches."""

    def test_covers_all(self):
        """Does one epoch cover every index once?"""

        batches = minibatches(np.arange(70), 32, np.random.default_rng(0))
        self.assertEqual([len(b) for b in batches], [32, 32, 6])
        np.testing.assert_array_equal(np.sort(np.concatenate(batches)), np.arange(70))

    def test_single_trailing_sample_merged(self):
        """Is a trailing batch of one merged into the previous batch?"""

        batches = minibatches(np.arange(65), 32, np.random.default_rng(0))
        self.assertEqual([len(b) for b in batches], [32, 33])


class TrainTestCase(TestCase):
    """The epoch loop."""

    def setUp(self):
        self.data = learnable_set()
        self.split = stratified_kfold(self.data.labels, 5, seed=0).split(0)

    def test_zero_epochs(self):
        """Do zero epochs return the untouched model and an empty history?"""

        model = build_model(ModelVariant.PROPOSED, TINY, seed=0)
        before = model.state_dict()
        model, history = train(model, self.data, TrainConfig(epochs=0), self.split)
        self.assertEqual(history, [])
        for name, value in model.state_dict().items():
            np.testing.assert_array_equal(value, before[name])

    def test_deterministic(self):
        """Do two runs with the same seed give identical weights and histories?"""

        config = TrainConfig(epochs=2, batch_size=8, seed=1)
        runs = [train(build_model(ModelVariant.PROPOSED, TINY, seed=1), self.data, config, self.split)
                for _ in range(2)]
        self.assertEqual(runs[0][1], runs[1][1])
        second = runs[1][0].state_dict()
        for name, value in runs[0][0].state_dict().items():
            np.testing.assert_array_equal(value, second[name])

    def test_loss_falls(self):
        """Does the training loss fall over a few epochs on separable data?"""

        config = TrainConfig(epochs=6, lr=0.01, batch_size=8, seed=0)
        _, history = train(build_model(ModelVariant.PROPOSED, TINY, seed=0), self.data, config, self.split)
        self.assertEqual([r.epoch for r in history], list(range(1, 7)))
        self.assertLess(history[-1].train_loss, history[0].train_loss)
        for record in history:
            self.assertTrue(0.0 <= record.ua <= 1.0 and 0.0 <= record.wa <= 1.0)

    def test_empty_split(self):
        """Is an empty train or test split a protocol error?"""

        model = build_model(ModelVariant.PROPOSED, TINY)
        with self.assertRaises(ProtocolError):
            train(model, self.data, TrainConfig(epochs=1), Split(train=np.arange(10), test=np.array([], int)))

    def test_missing_stream(self):
        """Does training a dual-stream model without waveforms fail up front?"""

        data = FeatureSet(self.data.labels, mfcc=self.data.mfcc)
        model = build_model(ModelVariant.DUAL_STREAM_BIGRU, TINY)
        with self.assertRaises(InputContractError):
            train(model, data, TrainConfig(epochs=1), self.split)

    def test_nan_loss(self):
        """Is a non-finite loss a numeric error?"""

        data = FeatureSet(self.data.labels, mfcc=np.full_like(self.data.mfcc, np.nan))
        model = build_model(ModelVariant.PROPOSED, TINY)
        with np.errstate(all="ignore"), self.assertRaises(NumericError):
            train(model, data, TrainConfig(epochs=1, batch_size=8), self.split)

    def test_predict_and_evaluate(self):
        """Are predictions one per sample with probabilities summing to 1?"""

        model = build_model(ModelVariant.PROPOSED, TINY)
        preds, probs = predict(model, self.data, batch_size=16)
        self.assertEqual(preds.shape, (50,))
        np.testing.assert_allclose(probs.sum(axis=1), np.ones(50), atol=1e-12)
        report = evaluate(model, self.data, np.arange(20))
        self.assertEqual(report.matrix.sum(), 20)


class PredictClipTestCase(TestCase):
    """Single-clip inference."""

    def test_predict_clip(self):
        """Does a clip at another rate give a distribution and an EmotionLabel?"""

        audio = MfccConfig(clip_seconds=0.1, n_mfcc=8)
        hyper = ModelHyper(channels=(2, 4), gru_hidden=3, cbam_reduction=2, odconv_kernels=2, spatial_kernel=3,
                           classifier_hidden=4, dropout=0.0, mfcc_bins=8, mfcc_frames=audio.n_frames,
                           wave_samples=audio.clip_samples)
        clip = AudioClip(np.sin(np.arange(1200) * 0.3), 8000)
        for variant in (ModelVariant.PROPOSED, ModelVariant.DUAL_STREAM_DYN_CBAM):
            probs, label = predict_clip(build_model(variant, hyper), clip, audio)
            self.assertEqual(probs.shape, (5,))
            self.assertAlmostEqual(probs.sum(), 1.0, delta=1e-12)
            self.assertIsInstance(label, EmotionLabel)
            self.assertEqual(int(label), int(probs.argmax()))


class CrossValidationTestCase(TestCase):
    """Stratified k-fold cross-validation."""

    def setUp(self):
        self.data = learnable_set()
        self.config = TrainConfig(epochs=1, batch_size=16, seed=2)

    def test_folds_and_aggregates(self):
        """Are there five folds whose test sets pool to every sample, with a true fold mean?"""

        result = cross_validate(ModelVariant.PROPOSED, self.data, self.config, TINY)
        self.assertEqual([f.fold for f in result.folds], [0, 1, 2, 3, 4])
        self.assertEqual([f.seed for f in result.folds], [2, 3, 4, 5, 6])
        self.assertEqual(result.pooled.matrix.sum(), 50)
        self.assertEqual(sum(f.test_size for f in result.folds), 50)
        self.assertAlmostEqual(result.mean["ua"], sum(f.report.ua for f in result.folds) / 5, delta=1e-12)
        self.assertEqual(result.to_dict()["variant"], "proposed")

    def test_workers_match_serial(self):
        """Does running folds on two workers give the same results as one?"""

        serial = cross_validate(ModelVariant.PROPOSED, self.data, self.config, TINY)
        threaded = cross_validate(ModelVariant.PROPOSED, self.data, self.config, TINY, workers=2)
        np.testing.assert_array_equal(serial.pooled.matrix, threaded.pooled.matrix)
        for a, b in zip(serial.folds, threaded.folds):
            self.assertEqual(a.history, b.history)

    def test_compare_keeps_order(self):
        """Are compared variants reported in the order given?"""

        outcomes = compare_variants(["one-stream-wave", "proposed"], self.data, self.config, TINY)
        self.assertEqual([o.variant for o in outcomes], [ModelVariant.ONE_STREAM_WAVE, ModelVariant.PROPOSED])

    def test_class_too_small(self):
        """Is a class with fewer samples than folds rejected before any training?"""

        labels = self.data.labels.copy()
        labels[labels == 4] = 0
        labels[:3] = 4
        data = FeatureSet(labels, self.data.mfcc, self.data.wave)
        with self.assertRaisesRegex(StratificationError, "neutral"):
            cross_validate(ModelVariant.PROPOSED, data, self.config, TINY)
        self.assertEqual(Counter(labels.tolist())[4], 3)
