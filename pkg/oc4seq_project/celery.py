import os
from celery import Celery

# Устанавливаем переменную окружения Django
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'oc4seq_project.settings')

app = Celery('oc4seq_project')

# Используем namespace='CELERY' означает, что все настройки Celery
# должны иметь префикс `CELERY_`.
app.config_from_object('django.conf:settings', namespace='CELERY')

# Автоматически обнаруживаем задачи в приложениях Django (experiments.tasks).
app.autodiscover_tasks()
