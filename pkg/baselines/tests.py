import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from sequences.data import EventSequence
from sequences.exceptions import SequenceDataError
from synthetic.services import inject_global_permutation
from .services import count_matrix, fit_pca, load_pca_model, pca_score, pca_score_many, save_pca_model


def random_sequences(count, seed=0, vocab_size=10):
    rng = np.random.default_rng(seed)
    return [
        EventSequence(id=f"p:{i}", events=tuple(int(e) for e in rng.integers(1, vocab_size, size=int(rng.integers(5, 15)))))
        for i in range(count)
    ]


class CountMatrixTests(SimpleTestCase):

    def test_counts_and_row_sums(self):
        sequences = [EventSequence(id='a', events=(1, 1, 3)), EventSequence(id='b', events=(2, 9))]
        counts = count_matrix(sequences, 4)
        np.testing.assert_array_equal(counts, [[0, 2, 0, 1], [1, 0, 1, 0]])
        np.testing.assert_array_equal(counts.sum(axis=1), [3, 2])


class FitPCATests(SimpleTestCase):

    def test_identical_rows(self):
        counts = np.tile([1.0, 2.0, 0.0, 3.0], (5, 1))
        model = fit_pca(counts)
        self.assertEqual(model.n_components, 1)
        np.testing.assert_allclose(model.residual_scores(counts), 0.0, atol=1e-12)

    def test_rank_one_data(self):
        rng = np.random.default_rng(1)
        direction = rng.normal(size=6)
        counts = 4.0 + rng.normal(size=(20, 1)) * direction
        model = fit_pca(counts)
        self.assertEqual(model.n_components, 1)
        self.assertLess(float(model.residual_scores(counts).max()), 1e-10)

    def test_subspace_matches_covariance_eigenvectors(self):
        counts = np.random.default_rng(2).integers(0, 6, size=(50, 10)).astype(np.float64)
        model = fit_pca(counts)
        covariance = np.cov(counts, rowvar=False)
        eigenvalues, eigenvectors = np.linalg.eigh(covariance)
        order = np.argsort(eigenvalues)[::-1]
        eigenvalues, eigenvectors = eigenvalues[order], eigenvectors[:, order]
        cumulative = np.cumsum(eigenvalues) / eigenvalues.sum()
        k = int(np.argmax(cumulative >= 0.95)) + 1
        self.assertEqual(model.n_components, k)
        for i in range(k):
            self.assertAlmostEqual(abs(float(model.components[:, i] @ eigenvectors[:, i])), 1.0, delta=1e-8)
        np.testing.assert_allclose(model.components.T @ model.components, np.eye(k), atol=1e-10)

    def test_too_few_rows(self):
        with self.assertRaises(SequenceDataError):
            fit_pca(np.ones((1, 4)))


class PCAScoreTests(SimpleTestCase):

    def setUp(self):
        self.train = random_sequences(40)
        self.counts = count_matrix(self.train, 10)
        self.model = fit_pca(self.counts)

    def test_training_rows_within_training_residuals(self):
        residuals = self.model.residual_scores(self.counts)
        self.assertLessEqual(pca_score(self.model, self.train[0]), residuals.max() + 1e-12)

    def test_vector_inside_subspace_scores_zero(self):
        inside = self.model.mean + 3.0 * self.model.components[:, 0]
        self.assertAlmostEqual(float(self.model.residual_scores(inside)[0]), 0.0, delta=1e-10)

    def test_permutation_invariance(self):
        for seq in self.train[:10]:
            permuted = inject_global_permutation(seq, seed=5)
            self.assertEqual(pca_score(self.model, seq), pca_score(self.model, permuted))

    def test_energies_sum_to_norm(self):
        counts = count_matrix(random_sequences(10, seed=3), 10)
        projected, residual = self.model.energies(counts)
        norms = np.sum((counts - self.model.mean) ** 2, axis=1)
        np.testing.assert_allclose(projected + residual, norms, rtol=0, atol=1e-9)

    def test_save_and_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = save_pca_model(self.model, Path(tmp) / 'pca.json')
            restored = load_pca_model(path)
        sequences = random_sequences(5, seed=4)
        self.assertEqual(pca_score_many(restored, sequences), pca_score_many(self.model, sequences))
