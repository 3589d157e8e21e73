import numpy as np
from django.test import SimpleTestCase

from baselines.services import count_matrix
from sequences.data import ABNORMAL, NORMAL, EventSequence
from .services import (
    ChainSpec,
    SyntheticCorpusService,
    build_transition_matrix,
    gen_normal,
    inject_global_permutation,
    inject_local_anomaly,
    is_valid_path,
    zero_probability_bigrams,
)


class ChainSpecTests(SimpleTestCase):

    def test_rows_are_stochastic_with_fixed_support(self):
        spec = ChainSpec(num_events=20, out_degree=3, seed=5)
        matrix = build_transition_matrix(spec)
        np.testing.assert_allclose(matrix.sum(axis=1), np.ones(20))
        self.assertTrue(np.all(np.count_nonzero(matrix, axis=1) == 3))

    def test_out_degree_above_k_rejected(self):
        with self.assertRaises(ValueError):
            ChainSpec(num_events=3, out_degree=4)

    def test_single_event_chain_rejected(self):
        with self.assertRaises(ValueError):
            ChainSpec(num_events=1, out_degree=1)


class GenNormalTests(SimpleTestCase):

    def test_deterministic_alternating_chain(self):
        spec = ChainSpec(num_events=2, out_degree=1, transitions=((2,), (1,)), length_range=(6, 9))
        for seq in gen_normal(spec, 10):
            for prev, nxt in zip(seq.events, seq.events[1:]):
                self.assertNotEqual(prev, nxt)
            self.assertTrue(set(seq.events) <= {1, 2})

    def test_same_seed_same_corpus(self):
        spec = ChainSpec(num_events=8, out_degree=2, seed=9)
        first = [seq.events for seq in gen_normal(spec, 20)]
        second = [seq.events for seq in gen_normal(spec, 20)]
        self.assertEqual(first, second)

    def test_zero_count_rejected(self):
        with self.assertRaises(ValueError):
            gen_normal(ChainSpec(num_events=4, out_degree=2), 0)

    def test_lengths_labels_and_valid_paths(self):
        spec = ChainSpec(num_events=10, out_degree=3, seed=1, length_range=(40, 60))
        matrix = build_transition_matrix(spec)
        for seq in gen_normal(spec, 50):
            self.assertEqual(seq.label, NORMAL)
            self.assertTrue(40 <= seq.length <= 60)
            self.assertTrue(is_valid_path(matrix, seq.events))


class LocalAnomalyTests(SimpleTestCase):

    def setUp(self):
        self.spec = ChainSpec(num_events=20, out_degree=3, seed=2, length_range=(100, 100))
        self.service = SyntheticCorpusService(self.spec)
        self.source = self.service.gen_normal(1)[0]

    def test_exactly_span_positions_differ(self):
        corrupted = self.service.inject_local_anomaly(self.source, 5, seed=4)
        differing = [i for i, (a, b) in enumerate(zip(self.source.events, corrupted.events)) if a != b]
        self.assertEqual(len(differing), 5)
        self.assertEqual(differing[-1] - differing[0], 4)
        self.assertEqual(corrupted.length, self.source.length)
        self.assertEqual(corrupted.label, ABNORMAL)

    def test_span_longer_than_sequence_replaces_everything(self):
        corrupted = inject_local_anomaly(self.spec, self.source, 200, seed=1)
        self.assertTrue(all(a != b for a, b in zip(self.source.events, corrupted.events)))

    def test_injected_transitions_are_impossible(self):
        matrix = self.service.matrix
        for seed in range(20):
            corrupted = self.service.inject_local_anomaly(self.source, 5, seed=seed)
            changed = [i for i, (a, b) in enumerate(zip(self.source.events, corrupted.events)) if a != b]
            bad = set(zero_probability_bigrams(matrix, corrupted.events))
            for position in changed:
                if position > 0:
                    self.assertIn(position, bad)
            self.assertFalse(is_valid_path(matrix, corrupted.events))


class PermutationTests(SimpleTestCase):

    def test_multiset_and_counts_preserved(self):
        seq = EventSequence(id='p', events=(1, 2, 3))
        permuted = inject_global_permutation(seq, seed=0)
        self.assertEqual(sorted(permuted.events), [1, 2, 3])
        self.assertEqual(permuted.label, ABNORMAL)

        spec = ChainSpec(num_events=12, out_degree=2, seed=3)
        for source in gen_normal(spec, 10):
            output = inject_global_permutation(source, seed=7)
            self.assertEqual(sorted(output.events), sorted(source.events))
            np.testing.assert_array_equal(count_matrix([source], 13), count_matrix([output], 13))

    def test_length_one_rejected(self):
        with self.assertRaises(ValueError):
            inject_global_permutation(EventSequence(id='p', events=(4,)), seed=0)
