"""
Django settings for oc4seq_project project.

Generated by 'django-admin startproject' using Django 5.2.7.

For more information on this file, see
https://docs.djangoproject.com/en/5.2/topics/settings/

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# Quick-start development settings - unsuitable for production
# See https://docs.djangoproject.com/en/5.2/howto/deployment/checklist/

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get(
    'DJANGO_SECRET_KEY',
    'django-insecure-oc4seq-local-experiments-only-3k9x!q2m@7v#r1t$8p',
)

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = os.environ.get('DJANGO_DEBUG', '1') == '1'

ALLOWED_HOSTS = ['localhost', '127.0.0.1', 'testserver']


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',

    # Приложения детектора аномалий
    'sequences',
    'synthetic',
    'neural',
    'detection',
    'baselines',
    'evaluation',
    'experiments',
]


# Database
# https://docs.djangoproject.com/en/5.2/ref/settings/#databases

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.environ.get('OC4SEQ_DB_PATH', str(BASE_DIR / 'db.sqlite3')),
    }
}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'ru-ru'

TIME_ZONE = 'Europe/Moscow'

USE_I18N = True

USE_TZ = True


# Default primary key field type
# https://docs.djangoproject.com/en/5.2/ref/settings/#default-auto-field

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Длинные приемочные эксперименты исключаются из обычного прогона тестов
TEST_RUNNER = 'oc4seq_project.test_runner.OC4SeqTestRunner'

# Значения по умолчанию для конфигурации запуска (RunConfig).
# Приоритет: флаг --set > JSON-файл конфигурации > эти значения.
OC4SEQ_RUN_DEFAULTS = {
    # Общие параметры
    'seed': 42,
    'output_dir': 'runs/default',
    'data_dir': 'data/synthetic',
    'detector': 'oc4seq',
    'aggregation': 'max',

    # Обучение (рецепт: Adam, lr=0.01, батч 64, 100 эпох, 2 слоя по 64 нейрона)
    'lr': 0.01,
    'batch_size': 64,
    'epochs': 100,
    'hidden_size': 64,
    'layers': 2,
    'embed_dim': 32,
    'window': 10,
    'alpha': 1.0,
    'weight_decay': 1e-4,

    # Синтетический корпус
    'num_events': 20,
    'out_degree': 3,
    'min_length': 40,
    'max_length': 60,
    'n_normal': 3000,
    'n_train': 2000,
    'n_abnormal': 300,
    'anomaly_kind': 'local',
    'anomaly_span': 5,
    'anomaly_spans': 1,

    # Подготовка размеченного набора из файлов ключей (например, HDFS)
    'source_normal': '',
    'source_abnormal': '',
    'max_sequences': 0,

    # Оценка аномальности и метрики
    'checkpoint': '',
    'input': '',
    'input_label': 'normal',
    'val_scores': '',
    'val_labels': '',
    'test_scores': '',
    'test_labels': '',

    # Перебор гиперпараметров
    'sweep_alphas': [0.0, 0.01, 0.1, 1.0, 10.0],
    'sweep_layers': [2],

    # Двумерная проекция представлений
    'project_split': 'val',
}

# Настройки Celery (перебор гиперпараметров).
# По умолчанию задачи выполняются синхронно в текущем процессе; для
# параллельного перебора задайте OC4SEQ_CELERY_EAGER=0 и запустите воркеры.
CELERY_BROKER_URL = os.environ.get('CELERY_BROKER_URL', 'redis://localhost:6379/0')
CELERY_RESULT_BACKEND = os.environ.get('CELERY_RESULT_BACKEND', 'redis://localhost:6379/0')
CELERY_ACCEPT_CONTENT = ['json']
CELERY_TASK_SERIALIZER = 'json'
CELERY_RESULT_SERIALIZER = 'json'
CELERY_TIMEZONE = TIME_ZONE
CELERY_TASK_TRACK_STARTED = True
CELERY_TASK_TIME_LIMIT = 6 * 60 * 60  # 6 часов на одну точку сетки
CELERY_WORKER_PREFETCH_MULTIPLIER = 1
CELERY_TASK_ALWAYS_EAGER = os.environ.get('OC4SEQ_CELERY_EAGER', '1') == '1'
CELERY_TASK_EAGER_PROPAGATES = True

# Логирование
OC4SEQ_LOG_LEVEL = os.environ.get('OC4SEQ_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
        'file': {
            'class': 'logging.FileHandler',
            'filename': os.environ.get('OC4SEQ_LOG_FILE', str(BASE_DIR / 'oc4seq.log')),
            'formatter': 'verbose',
            'delay': True,
        },
    },
    'loggers': {
        app: {
            'handlers': ['console', 'file'],
            'level': OC4SEQ_LOG_LEVEL,
            'propagate': False,
        }
        for app in (
            'sequences',
            'synthetic',
            'neural',
            'detection',
            'baselines',
            'evaluation',
            'experiments',
        )
    } | {
        'celery': {
            'handlers': ['console'],
            'level': 'WARNING',
            'propagate': True,
        },
        'django': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': True,
        },
    },
}
