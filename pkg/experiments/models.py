from django.db import models


class ExperimentRun(models.Model):
    """
    Журнал запусков команд: конфигурация, статус, метрики и время выполнения
    """
    STATUS_CHOICES = [
        ('pending', 'Ожидает'),
        ('processing', 'Выполняется'),
        ('completed', 'Завершено'),
        ('error', 'Ошибка'),
    ]

    COMMAND_CHOICES = [
        ('gen', 'Генерация синтетического корпуса'),
        ('split', 'Подготовка размеченного набора'),
        ('train', 'Обучение'),
        ('score', 'Оценка аномальности'),
        ('eval', 'Расчет метрик'),
        ('sweep', 'Перебор гиперпараметров'),
        ('project', 'Проекция представлений'),
    ]

    command = models.CharField(
        max_length=20,
        choices=COMMAND_CHOICES,
        verbose_name='Команда'
    )

    status = models.CharField(
        max_length=20,
        choices=STATUS_CHOICES,
        default='pending',
        verbose_name='Статус'
    )

    config = models.JSONField(
        default=dict,
        blank=True,
        verbose_name='Конфигурация запуска'
    )

    metrics = models.JSONField(
        default=dict,
        blank=True,
        verbose_name='Метрики'
    )

    output_dir = models.CharField(
        max_length=500,
        blank=True,
        verbose_name='Каталог результатов'
    )

    created_date = models.DateTimeField(
        auto_now_add=True,
        verbose_name='Дата создания'
    )

    completed_date = models.DateTimeField(
        null=True,
        blank=True,
        verbose_name='Дата завершения'
    )

    processing_time = models.FloatField(
        null=True,
        blank=True,
        verbose_name='Время обработки (сек)'
    )

    error_message = models.TextField(
        blank=True,
        verbose_name='Сообщение об ошибке'
    )

    class Meta:
        verbose_name = 'Запуск эксперимента'
        verbose_name_plural = 'Запуски экспериментов'
        ordering = ['-created_date']

    def __str__(self):
        return f"{self.get_command_display()} #{self.pk} ({self.get_status_display()})"
