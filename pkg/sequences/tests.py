import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from .data import ABNORMAL, NORMAL, UNK_ID, DatasetSplit, EventSequence, EventVocab
from .exceptions import SequenceDataError, SequenceParseError
from .services import build_vocab, load_sequences, save_sequences, split_dataset, window_matrix, windows


def make_sequences(count, label=NORMAL, length=5, prefix='s'):
    return [
        EventSequence(id=f"{prefix}:{i}", events=tuple(1 + (i + j) % 7 for j in range(length)), label=label)
        for i in range(count)
    ]


class SequenceFileTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def write(self, name, text):
        path = self.dir / name
        path.write_bytes(text.encode('utf-8'))
        return path

    def test_parses_lines_in_order(self):
        path = self.write('normal.txt', "5 3 3 9\n7\n")
        sequences = load_sequences(path, NORMAL)
        self.assertEqual(len(sequences), 2)
        self.assertEqual(sequences[0].events, (5, 3, 3, 9))
        self.assertEqual(sequences[0].length, 4)
        self.assertEqual(sequences[0].id, 'normal.txt:1')
        self.assertEqual(sequences[1].events, (7,))
        self.assertEqual(sequences[1].length, 1)

    def test_blank_lines_and_crlf(self):
        path = self.write('mixed.txt', "1 2\r\n\r\n   \n3\t4 5\r\n")
        sequences = load_sequences(path, ABNORMAL)
        self.assertEqual([seq.events for seq in sequences], [(1, 2), (3, 4, 5)])
        self.assertEqual(sequences[1].id, 'mixed.txt:4')
        self.assertTrue(all(seq.is_abnormal for seq in sequences))

    def test_only_newline_ends_a_line(self):
        path = self.write('separators.txt', "1 2\x0c3  4\x1e5\n6 7\x85 8\n9\r\n")
        sequences = load_sequences(path)
        self.assertEqual([seq.events for seq in sequences], [(1, 2, 3, 4, 5), (6, 7, 8), (9,)])
        self.assertEqual([seq.id for seq in sequences],
                         ['separators.txt:1', 'separators.txt:2', 'separators.txt:3'])

    def test_malformed_token_reports_line_and_column(self):
        path = self.write('bad.txt', "5 x 3\n")
        with self.assertRaises(SequenceParseError) as ctx:
            load_sequences(path)
        self.assertEqual(ctx.exception.line, 1)
        self.assertEqual(ctx.exception.column, 2)
        self.assertEqual(ctx.exception.token, 'x')

    def test_negative_token_rejected(self):
        path = self.write('neg.txt', "1 2\n3 -4\n")
        with self.assertRaises(SequenceParseError) as ctx:
            load_sequences(path)
        self.assertEqual((ctx.exception.line, ctx.exception.column), (2, 2))

    def test_empty_file_is_an_error(self):
        path = self.write('empty.txt', "\n\n")
        with self.assertRaises(SequenceDataError):
            load_sequences(path)

    def test_missing_file_is_an_error(self):
        with self.assertRaises(SequenceDataError):
            load_sequences(self.dir / 'nope.txt')

    def test_save_then_load_keeps_events(self):
        sequences = make_sequences(4, length=6)
        path = save_sequences(self.dir / 'out' / 'seqs.txt', sequences)
        loaded = load_sequences(path)
        self.assertEqual([seq.events for seq in loaded], [seq.events for seq in sequences])
        self.assertEqual(list(self.dir.joinpath('out').iterdir()), [path])


class EventSequenceTests(SimpleTestCase):

    def test_empty_sequence_rejected(self):
        with self.assertRaises(ValueError):
            EventSequence(id='x', events=())

    def test_unknown_label_rejected(self):
        with self.assertRaises(ValueError):
            EventSequence(id='x', events=(1,), label='weird')


class VocabTests(SimpleTestCase):

    def test_size_is_max_plus_one(self):
        train = [EventSequence(id='a', events=(1, 2)), EventSequence(id='b', events=(5,))]
        self.assertEqual(build_vocab(train).size, 6)

    def test_single_event(self):
        self.assertEqual(build_vocab([EventSequence(id='a', events=(1, 1, 1))]).size, 2)

    def test_empty_train_rejected(self):
        with self.assertRaises(SequenceDataError):
            build_vocab([])

    def test_reserved_id_in_train_rejected(self):
        with self.assertRaises(SequenceDataError):
            build_vocab([EventSequence(id='a', events=(0, 1))])

    def test_encode_maps_unseen_and_out_of_range_to_unk(self):
        vocab = build_vocab([EventSequence(id='a', events=(1, 2, 5))])
        encoded = vocab.encode([1, 3, 5, 6, 99, 0])
        np.testing.assert_array_equal(encoded, [1, UNK_ID, 5, UNK_ID, UNK_ID, UNK_ID])

    def test_vocab_is_immutable(self):
        vocab = EventVocab(size=3, known=frozenset({1, 2}))
        with self.assertRaises(Exception):
            vocab.size = 10


class SplitTests(SimpleTestCase):

    def test_partition_counts_match_ratio(self):
        normals = make_sequences(9543 // 10, prefix='n')
        abnormals = make_sequences(985 // 10, label=ABNORMAL, prefix='a')
        split = split_dataset(normals, abnormals, n_train=654, seed=3)
        counts = split.counts()
        # 300 оставшихся нормальных: 90 / 210; 98 аномальных: 29 / 69
        self.assertEqual(counts['train']['total'], 654)
        self.assertEqual((counts['val'][NORMAL], counts['test'][NORMAL]), (90, 210))
        self.assertEqual((counts['val'][ABNORMAL], counts['test'][ABNORMAL]), (29, 69))

    def test_bgl_sized_split(self):
        normals = make_sequences(9543, length=2, prefix='n')
        abnormals = make_sequences(985, length=2, label=ABNORMAL, prefix='a')
        counts = split_dataset(normals, abnormals, n_train=6543, seed=0).counts()
        self.assertEqual((counts['val'][NORMAL], counts['test'][NORMAL]), (900, 2100))
        self.assertEqual((counts['val'][ABNORMAL], counts['test'][ABNORMAL]), (295, 690))

    def test_no_training_sequences(self):
        split = split_dataset(make_sequences(10), [], n_train=0, seed=1)
        self.assertEqual((len(split.train), len(split.val), len(split.test)), (0, 3, 7))

    def test_partition_and_no_abnormal_in_train(self):
        normals = make_sequences(50, prefix='n')
        abnormals = make_sequences(20, label=ABNORMAL, prefix='a')
        for seed in range(10):
            split = split_dataset(normals, abnormals, n_train=30, seed=seed)
            ids = [seq.id for part in (split.train, split.val, split.test) for seq in part]
            self.assertEqual(len(ids), 70)
            self.assertEqual(len(set(ids)), 70)
            self.assertFalse(any(seq.is_abnormal for seq in split.train))

    def test_same_seed_same_split(self):
        normals = make_sequences(40, prefix='n')
        abnormals = make_sequences(10, label=ABNORMAL, prefix='a')
        first = split_dataset(normals, abnormals, n_train=20, seed=11)
        second = split_dataset(normals, abnormals, n_train=20, seed=11)
        for part in ('train', 'val', 'test'):
            self.assertEqual([s.id for s in getattr(first, part)], [s.id for s in getattr(second, part)])

    def test_n_train_too_large(self):
        with self.assertRaises(SequenceDataError):
            split_dataset(make_sequences(5), [], n_train=5, seed=0)

    def test_abnormal_in_train_rejected(self):
        with self.assertRaises(ValueError):
            DatasetSplit(train=make_sequences(1, label=ABNORMAL), val=[], test=[], seed=0)


class WindowTests(SimpleTestCase):

    def test_all_windows_in_order(self):
        seq = EventSequence(id='w', events=tuple(range(1, 11)))
        result = windows(seq, 3)
        self.assertEqual(len(result), 8)
        self.assertEqual(result[0], (1, 2, 3))
        self.assertEqual(result[-1], (8, 9, 10))

    def test_window_equal_to_length(self):
        self.assertEqual(windows([4, 5, 6], 3), [(4, 5, 6)])

    def test_short_sequence_is_one_window(self):
        self.assertEqual(windows([4, 5], 3), [(4, 5)])

    def test_zero_window_rejected(self):
        with self.assertRaises(ValueError):
            windows([1, 2, 3], 0)

    def test_window_count_property(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(1, 30))
            m = int(rng.integers(1, 12))
            matrix = window_matrix(rng.integers(1, 9, size=n), m)
            self.assertEqual(matrix.shape[0], max(1, n - m + 1))
