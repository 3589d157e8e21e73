import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from evaluation.services import project_2d
from neural.exceptions import NumericalError
from neural.params import EMBEDDING_NAME
from sequences.data import ABNORMAL, NORMAL, DatasetSplit, EventSequence, EventVocab
from sequences.exceptions import SequenceDataError
from sequences.services import build_vocab, windows
from synthetic.services import ChainSpec, gen_normal, inject_global_permutation
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .detector import (
    OC4SeqModel,
    TrainConfig,
    center_from_representations,
    check_gradients,
    combine_scores,
    compute_losses,
    global_representations,
    init_centers,
    local_representations,
    loss_global,
    loss_local,
    loss_total,
    score,
    score_many,
)
from .services import DetectorTrainingService, choose_threshold, train


def tiny_config(**overrides):
    values = dict(lr=0.01, batch_size=4, epochs=3, hidden_size=6, layers=2, embed_dim=4,
                  window=3, alpha=0.5, weight_decay=1e-4, seed=0)
    values.update(overrides)
    return TrainConfig(**values)


def random_sequences(count, length=12, seed=0, vocab_size=10, label=NORMAL):
    rng = np.random.default_rng(seed)
    return [
        EventSequence(id=f"r:{i}", events=tuple(int(e) for e in rng.integers(1, vocab_size, size=length)), label=label)
        for i in range(count)
    ]


def tiny_model(config=None, train=None):
    config = config or tiny_config()
    model = OC4SeqModel.initialize(config, EventVocab(size=10, known=frozenset(range(1, 10))))
    init_centers(model, train or random_sequences(4))
    return model


class CenterTests(SimpleTestCase):

    def test_center_is_mean(self):
        np.testing.assert_array_equal(center_from_representations(np.array([[1.0, 3.0], [3.0, 5.0]])), [2.0, 4.0])

    def test_small_coordinates_clamped_with_sign(self):
        center = center_from_representations(np.array([[0.0, 5e-4, -5e-4, 2.0]]))
        np.testing.assert_array_equal(center, [1e-3, 1e-3, -1e-3, 2.0])

    def test_empty_train_rejected(self):
        model = OC4SeqModel.initialize(tiny_config(), EventVocab(size=10))
        with self.assertRaises(ValueError):
            init_centers(model, [])

    def test_losses_require_centers(self):
        model = OC4SeqModel.initialize(tiny_config(), EventVocab(size=10))
        with self.assertRaises(ValueError):
            loss_global(model, random_sequences(2))

    def test_initial_global_loss_is_total_variance(self):
        train = random_sequences(16, seed=1)
        model = tiny_model(tiny_config(weight_decay=0.0), train)
        reps = global_representations(model, train)
        mean = reps.mean(axis=0)
        variance = float(np.mean(np.sum((reps - mean) ** 2, axis=1)))
        # Сдвиг центра при защите от коллапса добавляет ||c - mean||^2
        expected = variance + float(np.sum((model.center - mean) ** 2))
        self.assertAlmostEqual(loss_global(model, train), expected, delta=1e-9)

    def test_single_training_sequence(self):
        train = random_sequences(1, seed=2)
        model = tiny_model(tiny_config(weight_decay=0.0), train)
        rep = global_representations(model, train)[0]
        clamped = np.abs(rep) < 1e-3
        np.testing.assert_array_equal(model.center[~clamped], rep[~clamped])
        if not clamped.any():
            self.assertEqual(loss_global(model, train), 0.0)

    def test_centers_nonzero(self):
        model = tiny_model()
        self.assertGreater(np.linalg.norm(model.center), 0.0)
        self.assertGreater(np.linalg.norm(model.local_center), 0.0)


class LossTests(SimpleTestCase):

    def setUp(self):
        self.batch = random_sequences(4, seed=3)
        self.model = tiny_model(tiny_config(weight_decay=0.0), self.batch)

    def test_global_loss_matches_recomputation(self):
        reps = global_representations(self.model, self.batch)
        expected = float(np.sum((reps - self.model.center) ** 2)) / len(self.batch)
        self.assertAlmostEqual(loss_global(self.model, self.batch), expected, delta=1e-12)

    def test_local_loss_sums_windows_per_sequence(self):
        reps = local_representations(self.model, self.batch)
        self.assertEqual(reps.shape[0], sum(len(windows(seq, 3)) for seq in self.batch))
        expected = float(np.sum((reps - self.model.local_center) ** 2)) / len(self.batch)
        self.assertAlmostEqual(loss_local(self.model, self.batch), expected, delta=1e-12)

    def test_regularizer_added(self):
        model = tiny_model(tiny_config(weight_decay=0.5), self.batch)
        plain = tiny_model(tiny_config(weight_decay=0.0), self.batch)
        penalty = 0.5 * model.store.squared_norm(model.global_param_names)
        self.assertAlmostEqual(loss_global(model, self.batch), loss_global(plain, self.batch) + penalty, delta=1e-10)

    def test_total_combines_heads(self):
        model = tiny_model(tiny_config(alpha=1.0), self.batch)
        expected = loss_global(model, self.batch) + loss_local(model, self.batch)
        self.assertAlmostEqual(loss_total(model, self.batch), expected, delta=1e-12)

    def test_alpha_zero_total_equals_global(self):
        model = tiny_model(tiny_config(alpha=0.0), self.batch)
        self.assertEqual(loss_total(model, self.batch), loss_global(model, self.batch))

    def test_alpha_zero_ignores_local_head(self):
        model = tiny_model(tiny_config(alpha=0.0, weight_decay=1e-4), self.batch)
        model.store.zero_grad()
        compute_losses(model, self.batch, accumulate=True)
        for name in model.local_param_names:
            self.assertTrue(np.all(model.store.grads[name] == 0.0))
        before = loss_total(model, self.batch)
        model.store[model.local_param_names[0]][0, 0] += 0.5
        self.assertEqual(loss_total(model, self.batch), before)


class GradientTests(SimpleTestCase):

    def test_total_loss_gradient_matches_finite_differences(self):
        batch = random_sequences(4, length=12, seed=4)
        model = tiny_model(tiny_config(alpha=0.5, weight_decay=1e-4), random_sequences(6, seed=5))
        self.assertLess(check_gradients(model, batch, delta=1e-4), 1e-4)

    def test_variable_lengths_and_short_sequences(self):
        rng = np.random.default_rng(6)
        batch = [
            EventSequence(id=f"v:{i}", events=tuple(int(e) for e in rng.integers(0, 10, size=length)))
            for i, length in enumerate((2, 5, 9, 3))
        ]
        model = tiny_model(tiny_config(alpha=1.0, weight_decay=1e-3, layers=1), random_sequences(5, seed=7))
        self.assertLess(check_gradients(model, batch), 1e-4)

    def test_gradients_include_embedding(self):
        batch = random_sequences(2, seed=8)
        model = tiny_model()
        model.store.zero_grad()
        compute_losses(model, batch, accumulate=True)
        self.assertGreater(np.abs(model.store.grads[EMBEDDING_NAME]).sum(), 0.0)

    def test_zero_delta_rejected(self):
        with self.assertRaises(ValueError):
            check_gradients(tiny_model(), random_sequences(1), delta=0.0)


class TrainingTests(SimpleTestCase):

    def setUp(self):
        spec = ChainSpec(num_events=8, out_degree=2, seed=1, length_range=(10, 14))
        self.dataset = DatasetSplit(train=gen_normal(spec, 24), val=[], test=[], seed=0)
        self.config = tiny_config(epochs=6, batch_size=8, hidden_size=8, embed_dim=6, window=4, alpha=1.0)

    def test_history_length_and_descent(self):
        _, history = train(self.dataset, self.config)
        self.assertEqual(len(history), 6)
        self.assertLess(history[-1], history[0])

    def test_fixed_seed_reproduces_history(self):
        _, first = DetectorTrainingService(self.config).train(self.dataset)
        _, second = DetectorTrainingService(self.config).train(self.dataset)
        self.assertEqual(first, second)

    def test_centers_stay_fixed(self):
        untrained = OC4SeqModel.initialize(self.config, build_vocab(self.dataset.train))
        c, c_local = init_centers(untrained, self.dataset.train)
        model, _ = train(self.dataset, self.config)
        np.testing.assert_array_equal(model.center, c)
        np.testing.assert_array_equal(model.local_center, c_local)

    def test_alpha_zero_leaves_local_head(self):
        config = tiny_config(epochs=2, batch_size=8, alpha=0.0)
        model, _ = train(self.dataset, config)
        initial = OC4SeqModel.initialize(config, model.vocab)
        for name in model.local_param_names:
            np.testing.assert_array_equal(model.store[name], initial.store[name])
        self.assertFalse(np.array_equal(model.store['global.0.W'], initial.store['global.0.W']))

    def test_abnormal_train_rejected(self):
        dataset = DatasetSplit(train=[], val=[], test=[], seed=0)
        dataset.train.append(EventSequence(id='a', events=(1, 2), label=ABNORMAL))
        with self.assertRaises(SequenceDataError):
            train(dataset, self.config)

    def test_nan_loss_raises_numerical_error(self):
        config = tiny_config(epochs=1, lr=1e300, batch_size=4)
        with self.assertRaises(NumericalError):
            train(self.dataset, config)

    def test_invalid_config(self):
        with self.assertRaises(ValueError):
            tiny_config(window=0)
        with self.assertRaises(ValueError):
            tiny_config(alpha=-1.0)
        with self.assertRaises(ValueError):
            tiny_config(aggregation='median')


class ScoreTests(SimpleTestCase):

    def setUp(self):
        self.model = tiny_model(train=random_sequences(6, seed=9))
        self.sequences = random_sequences(5, length=9, seed=10)

    def test_report_fields(self):
        report = score(self.model, self.sequences[0])
        self.assertEqual(len(report.local_scores), len(windows(self.sequences[0], 3)))
        self.assertGreaterEqual(report.global_score, 0.0)
        self.assertTrue(all(value >= 0.0 for value in report.local_scores))
        self.assertAlmostEqual(report.combined, report.global_score + 0.5 * max(report.local_scores), delta=1e-15)
        self.assertEqual(report.sequence_id, 'r:0')

    def test_alpha_zero_combined_is_global(self):
        model = tiny_model(tiny_config(alpha=0.0), random_sequences(6, seed=9))
        report = score(model, self.sequences[1])
        self.assertEqual(report.combined, report.global_score)

    def test_single_window_under_both_aggregations(self):
        seq = EventSequence(id='short', events=(1, 2))
        for aggregation in ('max', 'mean'):
            model = tiny_model(tiny_config(aggregation=aggregation), random_sequences(6, seed=9))
            report = score(model, seq)
            self.assertEqual(len(report.local_scores), 1)
            self.assertEqual(report.combined, report.global_score + 0.5 * report.local_scores[0])

    def test_score_is_independent_of_order(self):
        forward = score_many(self.model, self.sequences)
        backward = score_many(self.model, self.sequences[::-1])[::-1]
        for a, b in zip(forward, backward):
            self.assertEqual(a.combined, b.combined)
            self.assertEqual(a.local_scores, b.local_scores)

    def test_combined_monotone(self):
        self.assertLessEqual(combine_scores(1.0, [1.0, 2.0], 0.5), combine_scores(1.5, [1.0, 2.0], 0.5))
        self.assertLessEqual(combine_scores(1.0, [1.0, 2.0], 0.5), combine_scores(1.0, [1.0, 3.0], 0.5))
        self.assertEqual(combine_scores(1.0, [1.0, 3.0], 0.5, 'mean'), 2.0)


def cycle_sequence(start, length, num_events=6):
    return tuple((start - 1 + step) % num_events + 1 for step in range(length))


class TrainedModelTests(SimpleTestCase):
    """Модель, обученная на детерминированном цикле 1 -> 2 -> ... -> 6 -> 1"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        spec = ChainSpec(num_events=6, out_degree=1, length_range=(20, 26),
                         transitions=tuple((event % 6 + 1,) for event in range(1, 7)))
        corpus = gen_normal(spec, 40)
        cls.train_set, cls.normal = corpus[:30], corpus[30:]
        config = tiny_config(epochs=60, batch_size=8, hidden_size=8, embed_dim=4, window=3,
                             layers=1, alpha=1.0, lr=0.02)
        cls.model, cls.history = train(DatasetSplit(train=cls.train_set, val=[], test=[], seed=0), config)

    def test_training_fits_the_cycle(self):
        self.assertLess(self.history[-1], 0.1 * self.history[0])

    def test_corrupted_window_raises_local_not_global(self):
        clean = EventSequence(id='clean', events=cycle_sequence(1, 24))
        events = list(clean.events)
        # Событие на два шага впереди: оба соседних перехода невозможны
        events[6] = (events[6] + 1) % 6 + 1
        corrupted = EventSequence(id='corrupted', events=tuple(events), label=ABNORMAL)

        before, after = score(self.model, clean), score(self.model, corrupted)
        local = np.array(after.local_scores)
        self.assertIn(int(np.argmax(local)), (4, 5, 6))
        self.assertGreater(local.max(), 5.0 * np.median(local))
        local_jump = after.local_max - before.local_max
        self.assertGreater(local_jump, 0.0)
        self.assertLess(abs(after.global_score - before.global_score), 0.1 * local_jump)

    def test_permutation_changes_combined_score(self):
        normal_scores = np.array([report.combined for report in score_many(self.model, self.normal)])
        spread = normal_scores.std()
        for seed, source in enumerate(self.normal[:5]):
            permuted = inject_global_permutation(source, seed=seed)
            gap = score(self.model, permuted).combined - score(self.model, source).combined
            self.assertGreater(gap, 10.0 * spread)

    def test_projection_separates_permuted_sequences(self):
        abnormal = [inject_global_permutation(seq, seed=100 + i) for i, seq in enumerate(self.normal)]
        sequences = self.normal + abnormal
        points = project_2d(global_representations(self.model, sequences), [seq.label for seq in sequences])
        coords = np.array([(x, y) for x, y, _ in points])
        is_normal = np.array([label == NORMAL for _, _, label in points])
        centroid = coords[is_normal].mean(axis=0)
        normal_radius = np.linalg.norm(coords[is_normal] - centroid, axis=1).mean()
        abnormal_distance = np.linalg.norm(coords[~is_normal] - centroid, axis=1).mean()
        self.assertLess(normal_radius, abnormal_distance)


class ThresholdTests(SimpleTestCase):

    def test_midpoint_between_classes(self):
        self.assertEqual(choose_threshold([(0.1, NORMAL), (0.9, ABNORMAL)]), 0.5)

    def test_identical_scores_flag_everything(self):
        self.assertEqual(choose_threshold([(0.3, NORMAL), (0.3, ABNORMAL), (0.3, NORMAL)]), -np.inf)

    def test_single_class_rejected(self):
        with self.assertRaises(ValueError):
            choose_threshold([(0.1, NORMAL), (0.2, NORMAL)])

    def test_matches_brute_force_f1(self):
        rng = np.random.default_rng(11)
        values = rng.random(100)
        labels = [ABNORMAL if flag else NORMAL for flag in rng.random(100) < 0.3]
        positive = np.array([label == ABNORMAL for label in labels])

        def f1_at(tau):
            predicted = values > tau
            tp = np.sum(predicted & positive)
            fp = np.sum(predicted & ~positive)
            fn = np.sum(~predicted & positive)
            return 2 * tp / (2 * tp + fp + fn)

        best = max(f1_at(s) for s in np.r_[-np.inf, values])
        tau = choose_threshold(list(zip(values, labels)))
        self.assertAlmostEqual(f1_at(tau), best, delta=1e-12)


class CheckpointTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / 'checkpoint.json'

    def test_round_trip_reproduces_scores(self):
        model = tiny_model(tiny_config(aggregation='mean'), random_sequences(6, seed=12))
        save_checkpoint(model, self.path)
        restored = load_checkpoint(self.path)
        self.assertEqual(restored.config, model.config)
        self.assertEqual(restored.vocab.size, model.vocab.size)
        self.assertEqual(restored.vocab.known, model.vocab.known)
        for seq in random_sequences(5, seed=13) + [EventSequence(id='u', events=(0, 11, 3))]:
            original, reloaded = score(model, seq), score(restored, seq)
            self.assertEqual(original.combined, reloaded.combined)
            self.assertEqual(original.local_scores, reloaded.local_scores)

    def test_wrong_format_rejected(self):
        self.path.write_text('{"format": "other", "version": 1}', encoding='utf-8')
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_invalid_json_rejected(self):
        self.path.write_text('{not json', encoding='utf-8')
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_missing_file(self):
        with self.assertRaises(SequenceDataError):
            load_checkpoint(self.path)
