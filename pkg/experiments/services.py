"""
Сервисы экспериментов: генерация и подготовка данных, обучение, оценка
аномальности, метрики, перебор гиперпараметров и проекция представлений
"""
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from celery import group
from django.db import DatabaseError
from django.utils import timezone

from baselines.services import PCAModel, count_matrix, fit_pca, load_pca_model, pca_score_many, PCA_FORMAT, save_pca_model
from detection.checkpoint import CHECKPOINT_FORMAT, CheckpointError, load_checkpoint, save_checkpoint
from detection.detector import OC4SeqModel, TrainConfig, global_representations, score_many
from detection.services import DetectorTrainingService, choose_threshold
from evaluation.exports import read_csv_rows, write_csv, write_pr_curve, write_projection, write_report
from evaluation.services import evaluate_at_threshold, pr_curve, project_2d
from oc4seq_project.storage import atomic_write_json, json_safe
from oc4seq_project.version import __version__
from sequences.data import ABNORMAL, NORMAL, DatasetSplit, EventSequence
from sequences.exceptions import SequenceDataError
from sequences.services import build_vocab, load_sequences, save_sequences, split_dataset
from synthetic.services import ChainSpec, SyntheticCorpusService, inject_global_permutation
from .config import RunConfigError
from .models import ExperimentRun

logger = logging.getLogger(__name__)

SPLIT_FILES = {
    'train': (('train_normal.txt', NORMAL),),
    'val': (('val_normal.txt', NORMAL), ('val_abnormal.txt', ABNORMAL)),
    'test': (('test_normal.txt', NORMAL), ('test_abnormal.txt', ABNORMAL)),
}
MANIFEST_FILE = 'manifest.json'
CHECKPOINT_FILE = 'checkpoint.json'
LOSS_HISTORY_FILE = 'loss_history.csv'
REPORT_FILE = 'report.json'
PR_CURVE_FILE = 'pr_curve.csv'
SWEEP_FILE = 'sweep.csv'
PROJECTION_FILE = 'projection.csv'
REPRESENTATIONS_FILE = 'representations.csv'

SCORES_HEADER = ('id', 'global', 'local_max', 'combined')
LABELS_HEADER = ('id', 'label')
WINDOWS_HEADER = ('id', 'window', 'local_score')
SWEEP_HEADER = ('alpha', 'layers', 'average_precision')
LOSS_HEADER = ('epoch', 'loss')

# Независимые потоки случайности для подготовки данных
ANOMALY_SEED_STREAM = 2
SUBSAMPLE_STREAM = 3


def scores_file(split: str) -> str:
    return f"{split}_scores.csv"


def labels_file(split: str) -> str:
    return f"{split}_labels.csv"


def windows_file(split: str) -> str:
    return f"{split}_windows.csv"


def checkpoint_format(path: Union[str, Path]) -> str:
    """Формат чекпоинта: OC4Seq или PCA"""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Чекпоинт не найден: {path}")
    try:
        payload = json.loads(path.read_text(encoding='utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Чекпоинт {path} не является корректным JSON: {e}") from e
    return payload.get('format', '') if isinstance(payload, dict) else ''


def load_detector(path: Union[str, Path]) -> Union[OC4SeqModel, PCAModel]:
    detector_format = checkpoint_format(path)
    if detector_format == CHECKPOINT_FORMAT:
        return load_checkpoint(path)
    if detector_format == PCA_FORMAT:
        return load_pca_model(path)
    raise CheckpointError(f"Неизвестный формат чекпоинта {path}: {detector_format!r}")


def subsample(items: Sequence[EventSequence], size: int, rng: np.random.Generator) -> List[EventSequence]:
    """Выбор size элементов без возвращения с сохранением исходного порядка"""
    if size >= len(items):
        return list(items)
    keep = np.sort(rng.choice(len(items), size=size, replace=False))
    return [items[i] for i in keep]


class ExperimentService:
    """
    Сервис запуска экспериментов по конфигурации RunConfig

    Все результаты пишутся атомарно; входные файлы не изменяются.
    """

    def __init__(self, config: Dict[str, Any]):
        self.config = config

    @property
    def output_dir(self) -> Path:
        return Path(self.config['output_dir'])

    @property
    def data_dir(self) -> Path:
        return Path(self.config['data_dir'])

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.config['checkpoint'] or self.output_dir / CHECKPOINT_FILE)

    def train_config(self, **overrides) -> TrainConfig:
        cfg = self.config
        values = {
            'lr': cfg['lr'],
            'batch_size': cfg['batch_size'],
            'epochs': cfg['epochs'],
            'hidden_size': cfg['hidden_size'],
            'layers': cfg['layers'],
            'embed_dim': cfg['embed_dim'],
            'window': cfg['window'],
            'alpha': 0.0 if cfg['detector'] == 'oc4seq-global-only' else cfg['alpha'],
            'weight_decay': cfg['weight_decay'],
            'seed': cfg['seed'],
            'aggregation': cfg['aggregation'],
        }
        values.update(overrides)
        return TrainConfig(**values)

    # Файлы и каталоги

    def _prepare_dir(self, directory: Path) -> Path:
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise RunConfigError(f"Не удалось создать каталог {directory}: {e}") from e
        if not os.access(directory, os.W_OK):
            raise RunConfigError(f"Каталог {directory} недоступен для записи")
        return directory

    def _require_file(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        if not path.is_file():
            raise SequenceDataError(f"Входной файл не найден: {path}")
        return path

    def _read_label_file(self, path: Path, label: str) -> List[EventSequence]:
        self._require_file(path)
        if not path.read_bytes().strip():
            return []
        return load_sequences(path, label)

    def load_split(self, split: str) -> List[EventSequence]:
        sequences = []
        for name, label in SPLIT_FILES[split]:
            sequences.extend(self._read_label_file(self.data_dir / name, label))
        if not sequences:
            raise SequenceDataError(f"Часть {split} в {self.data_dir} не содержит последовательностей")
        return sequences

    def has_split(self, split: str) -> bool:
        return all((self.data_dir / name).is_file() for name, _ in SPLIT_FILES[split])

    def _write_split(self, split: DatasetSplit) -> Dict[str, int]:
        counts = {}
        for part in ('train', 'val', 'test'):
            sequences = getattr(split, part)
            for name, label in SPLIT_FILES[part]:
                selected = [seq for seq in sequences if seq.label == label]
                save_sequences(self.data_dir / name, selected)
                counts[name] = len(selected)
        return counts

    # Команды

    def generate(self) -> Dict[str, Any]:
        """
        Синтетический корпус: нормальные последовательности цепи, аномалии
        внедряются в отдельно сгенерированные нормальные последовательности
        """
        cfg = self.config
        if cfg['n_train'] >= cfg['n_normal']:
            raise RunConfigError(f"n_train ({cfg['n_train']}) должен быть меньше n_normal ({cfg['n_normal']})")
        try:
            spec = ChainSpec(
                num_events=cfg['num_events'],
                out_degree=cfg['out_degree'],
                seed=cfg['seed'],
                length_range=(cfg['min_length'], cfg['max_length']),
            )
        except ValueError as e:
            raise RunConfigError(str(e)) from e
        self._prepare_dir(self.data_dir)

        # Нормальные последовательности и источники для аномалий
        service = SyntheticCorpusService(spec)
        generated = service.gen_normal(cfg['n_normal'] + cfg['n_abnormal'])
        normals, sources = generated[:cfg['n_normal']], generated[cfg['n_normal']:]

        # Внедряем аномалии, у каждого источника свое зерно
        anomaly_seeds = np.random.default_rng([cfg['seed'], ANOMALY_SEED_STREAM]).integers(
            0, 2 ** 31 - 1, size=len(sources)
        )
        if cfg['anomaly_kind'] == 'local':
            abnormals = [
                service.inject_local_anomaly(seq, cfg['anomaly_span'], int(seed), spans=cfg['anomaly_spans'])
                for seq, seed in zip(sources, anomaly_seeds)
            ]
        else:
            abnormals = [inject_global_permutation(seq, int(seed)) for seq, seed in zip(sources, anomaly_seeds)]

        # Разбиваем и записываем части
        split = split_dataset(normals, abnormals, cfg['n_train'], cfg['seed'])
        counts = self._write_split(split)

        # Манифест с описанием цепи
        successors = [[int(e) + 1 for e in np.flatnonzero(row)] for row in service.matrix]
        manifest = {
            'tool_version': __version__,
            'source': 'synthetic',
            'seed': cfg['seed'],
            'chain': {
                'num_events': spec.num_events,
                'out_degree': spec.out_degree,
                'length_range': list(spec.length_range),
                'successors': successors,
            },
            'anomaly': {
                'kind': cfg['anomaly_kind'],
                'span': cfg['anomaly_span'],
                'spans': cfg['anomaly_spans'],
            },
            'counts': counts,
        }
        atomic_write_json(self.data_dir / MANIFEST_FILE, manifest)
        logger.info(f"Синтетический корпус записан в {self.data_dir}: {counts}")
        return manifest

    def prepare_keyed_dataset(self) -> Dict[str, Any]:
        """
        Размеченный набор из двух файлов ключей (нормальные и аномальные
        последовательности) по тому же протоколу разбиения
        """
        cfg = self.config
        if not cfg['source_normal'] or not cfg['source_abnormal']:
            raise RunConfigError("Для split нужно задать source_normal и source_abnormal")
        normals = load_sequences(self._require_file(cfg['source_normal']), NORMAL)
        abnormals = load_sequences(self._require_file(cfg['source_abnormal']), ABNORMAL)
        if cfg['n_train'] >= len(normals):
            raise SequenceDataError(
                f"n_train ({cfg['n_train']}) должен быть меньше числа нормальных последовательностей ({len(normals)})"
            )
        self._prepare_dir(self.data_dir)

        # Подвыборка отложенной части
        held_out = len(normals) - cfg['n_train'] + len(abnormals)
        limit = cfg['max_sequences']
        if limit and held_out > limit:
            ratio = limit / held_out
            rng = np.random.default_rng([cfg['seed'], SUBSAMPLE_STREAM])
            normals = subsample(normals, cfg['n_train'] + int((len(normals) - cfg['n_train']) * ratio), rng)
            abnormals = subsample(abnormals, max(1, int(len(abnormals) * ratio)), rng)
            logger.info(f"Отложенная часть уменьшена до {limit} последовательностей")

        # Разбиваем и записываем части
        split = split_dataset(normals, abnormals, cfg['n_train'], cfg['seed'])
        counts = self._write_split(split)
        manifest = {
            'tool_version': __version__,
            'source': 'keyed',
            'seed': cfg['seed'],
            'source_normal': str(cfg['source_normal']),
            'source_abnormal': str(cfg['source_abnormal']),
            'max_sequences': limit,
            'counts': counts,
        }
        atomic_write_json(self.data_dir / MANIFEST_FILE, manifest)
        logger.info(f"Размеченный набор записан в {self.data_dir}: {counts}")
        return manifest

    def train(self) -> Dict[str, Any]:
        train = self.load_split('train')
        self._prepare_dir(self.output_dir)

        if self.config['detector'] == 'pca':
            vocab = build_vocab(train)
            model = fit_pca(count_matrix(train, vocab.size))
            save_pca_model(model, self.output_dir / CHECKPOINT_FILE)
            return {'detector': 'pca', 'n_components': model.n_components}

        cfg = self.train_config()
        model, loss_history = DetectorTrainingService(cfg).train(DatasetSplit(train=train, val=[], test=[], seed=cfg.seed))
        save_checkpoint(model, self.output_dir / CHECKPOINT_FILE)
        write_csv(self.output_dir / LOSS_HISTORY_FILE, LOSS_HEADER,
                  ((epoch, loss) for epoch, loss in enumerate(loss_history, start=1)))
        return {
            'detector': self.config['detector'],
            'epochs': len(loss_history),
            'final_loss': loss_history[-1],
            'parameters': model.store.num_parameters(),
        }

    def _score_sequences(self, detector: Union[OC4SeqModel, PCAModel], sequences: List[EventSequence],
                         name: str) -> Dict[str, Path]:
        if isinstance(detector, PCAModel):
            values = pca_score_many(detector, sequences)
            rows = [(seq.id, value, 0.0, value) for seq, value in zip(sequences, values)]
            window_rows = []
        else:
            reports = score_many(detector, sequences)
            rows = [(r.sequence_id, r.global_score, r.local_max, r.combined) for r in reports]
            window_rows = [
                (r.sequence_id, index, value)
                for r in reports for index, value in enumerate(r.local_scores, start=1)
            ]

        paths = {
            'scores': write_csv(self.output_dir / scores_file(name), SCORES_HEADER, rows),
            'labels': write_csv(self.output_dir / labels_file(name), LABELS_HEADER,
                                ((seq.id, seq.label) for seq in sequences)),
        }
        if window_rows:
            paths['windows'] = write_csv(self.output_dir / windows_file(name), WINDOWS_HEADER, window_rows)
        logger.info(f"Оценено {len(sequences)} последовательностей ({name})")
        return paths

    def score(self) -> Dict[str, Any]:
        """
        Оценивает файл input или, если он не задан, валидационную и тестовую части
        """
        detector = load_detector(self.checkpoint_path)
        self._prepare_dir(self.output_dir)

        scored = {}
        if self.config['input']:
            path = self._require_file(self.config['input'])
            sequences = load_sequences(path, self.config['input_label'])
            scored[path.stem] = self._score_sequences(detector, sequences, path.stem)
        else:
            for split in ('val', 'test'):
                if self.has_split(split):
                    scored[split] = self._score_sequences(detector, self.load_split(split), split)
            if not scored:
                raise SequenceDataError(f"В {self.data_dir} нет валидационной и тестовой частей")
        return {name: {kind: str(path) for kind, path in paths.items()} for name, paths in scored.items()}

    def _read_scored(self, scores_path: Path, labels_path: Path) -> Tuple[List[float], List[str]]:
        """Итоговые оценки и метки, сопоставленные по идентификатору"""
        rows = read_csv_rows(self._require_file(scores_path))
        labels = {row['id']: row['label'] for row in read_csv_rows(self._require_file(labels_path))}
        values, truth = [], []
        try:
            for row in rows:
                values.append(float(row['combined']))
                truth.append(labels[row['id']])
        except KeyError as e:
            raise SequenceDataError(f"Нет метки или столбца для {e} ({scores_path}, {labels_path})") from e
        except ValueError as e:
            raise SequenceDataError(f"Некорректная оценка в {scores_path}: {e}") from e
        if not values:
            raise SequenceDataError(f"Файл {scores_path} не содержит оценок")
        return values, truth

    def _scored_paths(self, split: str) -> Tuple[Path, Path]:
        return (
            Path(self.config[f'{split}_scores'] or self.output_dir / scores_file(split)),
            Path(self.config[f'{split}_labels'] or self.output_dir / labels_file(split)),
        )

    def evaluate(self) -> Dict[str, Any]:
        """
        Порог выбирается по F1 на валидации, метрики и PR-кривая считаются на тесте
        """
        test_values, test_truth = self._read_scored(*self._scored_paths('test'))
        val_scores, val_labels = self._scored_paths('val')

        # Порог по валидации, при ее отсутствии - по тесту
        extra = {}
        if val_scores.is_file() and val_labels.is_file():
            val_values, val_truth = self._read_scored(val_scores, val_labels)
            threshold = choose_threshold(list(zip(val_values, val_truth)))
            extra['validation_average_precision'] = pr_curve(val_values, val_truth).average_precision
            extra['threshold_source'] = 'val'
        else:
            logger.warning("Валидационные оценки не найдены: порог выбирается по тестовой части")
            threshold = choose_threshold(list(zip(test_values, test_truth)))
            extra['threshold_source'] = 'test'

        # Метрики и PR-кривая на тесте
        report = evaluate_at_threshold(test_values, test_truth, threshold)
        curve = pr_curve(test_values, test_truth)
        self._prepare_dir(self.output_dir)
        write_pr_curve(self.output_dir / PR_CURVE_FILE, curve)
        write_report(self.output_dir / REPORT_FILE, report, average_precision=curve.average_precision, **extra)

        metrics = report.to_dict()
        metrics.update(extra, average_precision=curve.average_precision)
        logger.info(
            f"Тест: P = {report.precision:.4f}, R = {report.recall:.4f}, F1 = {report.f1:.4f}, "
            f"AP = {curve.average_precision:.4f}"
        )
        return metrics

    def evaluate_grid_point(self, alpha: float, layers: int) -> Dict[str, Any]:
        """Обучение одной точки сетки и AP на валидации"""
        train = self.load_split('train')
        val = self.load_split('val')
        cfg = self.train_config(alpha=alpha, layers=layers)
        model, _ = DetectorTrainingService(cfg).train(DatasetSplit(train=train, val=val, test=[], seed=cfg.seed))
        reports = score_many(model, val)
        curve = pr_curve([r.combined for r in reports], [seq.label for seq in val])
        logger.info(f"Точка сетки alpha={alpha}, L={layers}: AP = {curve.average_precision:.4f}")
        return {'alpha': alpha, 'layers': layers, 'average_precision': curve.average_precision}

    def sweep_grid(self) -> List[Tuple[float, int]]:
        if self.config['detector'] == 'pca':
            raise RunConfigError("Перебор гиперпараметров доступен только для детектора OC4Seq")
        alphas = self.config['sweep_alphas']
        layers = self.config['sweep_layers']
        if not alphas or not layers:
            raise RunConfigError("Пустая сетка перебора: задайте sweep_alphas и sweep_layers")
        return [(float(alpha), int(layer)) for layer in layers for alpha in alphas]

    def sweep(self) -> List[Dict[str, Any]]:
        """
        Каждая точка сетки - отдельная задача Celery; строки результата
        идут в порядке сетки
        """
        from .tasks import train_grid_point  # tasks импортирует этот модуль

        grid = self.sweep_grid()
        for split in ('train', 'val'):
            if not self.has_split(split):
                raise SequenceDataError(f"Для перебора нужна часть {split} в {self.data_dir}")
        self._prepare_dir(self.output_dir)

        logger.info(f"Перебор: {len(grid)} точек сетки")
        result = group(train_grid_point.s(self.config, alpha, layers) for alpha, layers in grid).apply_async()
        rows = result.join()
        write_csv(self.output_dir / SWEEP_FILE, SWEEP_HEADER,
                  ((row['alpha'], row['layers'], row['average_precision']) for row in rows))
        return rows

    def project(self) -> Dict[str, Any]:
        """
        Глобальные представления части project_split и их проекция на
        две главные компоненты
        """
        detector = load_detector(self.checkpoint_path)
        if not isinstance(detector, OC4SeqModel):
            raise RunConfigError("Проекция представлений доступна только для модели OC4Seq")
        sequences = self.load_split(self.config['project_split'])
        reps = global_representations(detector, sequences)
        labels = [seq.label for seq in sequences]
        points = project_2d(reps, labels)

        self._prepare_dir(self.output_dir)
        write_projection(self.output_dir / PROJECTION_FILE, points)
        header = ('id', 'label') + tuple(f"r{i}" for i in range(reps.shape[1]))
        write_csv(self.output_dir / REPRESENTATIONS_FILE, header,
                  ((seq.id, seq.label, *[float(v) for v in rep]) for seq, rep in zip(sequences, reps)))
        return {'points': len(points), 'dimension': int(reps.shape[1])}


class RunRecorder:
    """
    Запись ExperimentRun для каждого запуска команды

    Журнал вспомогательный: если база недоступна, команда выполняется без записи.
    """

    def __init__(self, command: str, config: Dict[str, Any]):
        self.command = command
        self.config = config
        self.run: Optional[ExperimentRun] = None
        self.start_time = None

    def __enter__(self) -> 'RunRecorder':
        self.start_time = timezone.now()
        try:
            self.run = ExperimentRun.objects.create(
                command=self.command,
                status='processing',
                config=self.config,
                output_dir=str(self.config.get('output_dir', '')),
            )
        except DatabaseError as e:
            logger.warning(f"Журнал запусков недоступен ({e}); выполните migrate")
            self.run = None
        return self

    def complete(self, metrics: Any) -> None:
        if self.run is None:
            return
        self.run.metrics = json_safe(metrics if isinstance(metrics, dict) else {'result': metrics})
        self.run.status = 'completed'

    def __exit__(self, exc_type, exc, tb):
        processing_time = (timezone.now() - self.start_time).total_seconds()
        if exc is not None:
            logger.error(f"Команда {self.command} завершилась ошибкой: {exc}")
        else:
            logger.info(f"Команда {self.command} выполнена за {processing_time:.2f} секунд")
        if self.run is None:
            return False
        if exc is not None:
            self.run.status = 'error'
            self.run.error_message = str(exc)
        self.run.completed_date = timezone.now()
        self.run.processing_time = processing_time
        try:
            self.run.save()
        except DatabaseError as e:
            logger.warning(f"Не удалось сохранить запись запуска: {e}")
        return False
