from django import forms

from sequences.data import LABEL_CHOICES

DETECTOR_CHOICES = [
    ('oc4seq', 'OC4Seq (глобальная и локальная головы)'),
    ('oc4seq-global-only', 'Только глобальная голова (alpha = 0)'),
    ('pca', 'PCA по матрице счетчиков'),
]

AGGREGATION_CHOICES = [
    ('max', 'Максимум по окнам'),
    ('mean', 'Среднее по окнам'),
]

ANOMALY_KIND_CHOICES = [
    ('local', 'Локальная замена участка'),
    ('permutation', 'Глобальная перестановка'),
]

SPLIT_CHOICES = [
    ('val', 'Валидация'),
    ('test', 'Тест'),
]


class RunConfigForm(forms.Form):
    """
    Проверка конфигурации запуска: типы, границы, допустимые значения
    и согласованность полей
    """
    seed = forms.IntegerField(min_value=0, label='Зерно генератора')
    output_dir = forms.CharField(label='Каталог результатов')
    data_dir = forms.CharField(label='Каталог данных')
    detector = forms.ChoiceField(choices=DETECTOR_CHOICES, label='Детектор')
    aggregation = forms.ChoiceField(choices=AGGREGATION_CHOICES, label='Агрегация локальных оценок')

    lr = forms.FloatField(min_value=1e-12, label='Скорость обучения')
    batch_size = forms.IntegerField(min_value=1, label='Размер батча')
    epochs = forms.IntegerField(min_value=1, label='Число эпох')
    hidden_size = forms.IntegerField(min_value=1, label='Размер скрытого состояния')
    layers = forms.IntegerField(min_value=1, label='Число слоев GRU')
    embed_dim = forms.IntegerField(min_value=1, label='Размер эмбеддинга')
    window = forms.IntegerField(min_value=1, label='Размер окна')
    alpha = forms.FloatField(min_value=0.0, label='Вес локальной потери')
    weight_decay = forms.FloatField(min_value=0.0, label='Коэффициент регуляризации')

    num_events = forms.IntegerField(min_value=2, label='Число событий K')
    out_degree = forms.IntegerField(min_value=1, label='Число допустимых переходов')
    min_length = forms.IntegerField(min_value=1, label='Минимальная длина')
    max_length = forms.IntegerField(min_value=1, label='Максимальная длина')
    n_normal = forms.IntegerField(min_value=2, label='Число нормальных последовательностей')
    n_train = forms.IntegerField(min_value=1, label='Размер обучающей выборки')
    n_abnormal = forms.IntegerField(min_value=1, label='Число аномальных последовательностей')
    anomaly_kind = forms.ChoiceField(choices=ANOMALY_KIND_CHOICES, label='Тип аномалии')
    anomaly_span = forms.IntegerField(min_value=1, label='Длина заменяемого участка')
    anomaly_spans = forms.IntegerField(min_value=1, label='Число заменяемых участков')

    source_normal = forms.CharField(required=False, label='Файл нормальных последовательностей')
    source_abnormal = forms.CharField(required=False, label='Файл аномальных последовательностей')
    max_sequences = forms.IntegerField(min_value=0, label='Ограничение размера отложенной части (0 - без ограничения)')

    checkpoint = forms.CharField(required=False, label='Чекпоинт')
    input = forms.CharField(required=False, label='Входной файл последовательностей')
    input_label = forms.ChoiceField(choices=LABEL_CHOICES, label='Метка входного файла')
    val_scores = forms.CharField(required=False, label='Оценки валидации')
    val_labels = forms.CharField(required=False, label='Метки валидации')
    test_scores = forms.CharField(required=False, label='Оценки теста')
    test_labels = forms.CharField(required=False, label='Метки теста')

    sweep_alphas = forms.JSONField(required=False, label='Сетка alpha')
    sweep_layers = forms.JSONField(required=False, label='Сетка числа слоев')

    project_split = forms.ChoiceField(choices=SPLIT_CHOICES, label='Часть для проекции')

    def _clean_grid(self, name, cast, minimum):
        value = self.cleaned_data.get(name)
        if value is None:
            return []
        if not isinstance(value, list):
            raise forms.ValidationError('Ожидался список значений')
        grid = []
        for item in value:
            if isinstance(item, bool) or not isinstance(item, (int, float)):
                raise forms.ValidationError(f'Некорректное значение сетки: {item!r}')
            if cast is int and item != int(item):
                raise forms.ValidationError(f'Ожидалось целое число: {item!r}')
            if item < minimum:
                raise forms.ValidationError(f'Значение сетки меньше {minimum}: {item!r}')
            grid.append(cast(item))
        return grid

    def clean_sweep_alphas(self):
        return self._clean_grid('sweep_alphas', float, 0.0)

    def clean_sweep_layers(self):
        return self._clean_grid('sweep_layers', int, 1)

    def clean(self):
        cleaned_data = super().clean()
        num_events = cleaned_data.get('num_events')
        out_degree = cleaned_data.get('out_degree')
        min_length = cleaned_data.get('min_length')
        max_length = cleaned_data.get('max_length')

        if num_events and out_degree and out_degree > num_events:
            raise forms.ValidationError('Число допустимых переходов не может превышать число событий')
        if min_length and max_length and min_length > max_length:
            raise forms.ValidationError('Минимальная длина больше максимальной')

        return cleaned_data
