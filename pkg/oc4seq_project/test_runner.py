import os

from django.test.runner import DiscoverRunner


class OC4SeqTestRunner(DiscoverRunner):
    """
    Тест-раннер проекта: приемочные эксперименты (тег ``acceptance``)
    обучают модели минутами, поэтому запускаются только при OC4SEQ_ACCEPTANCE=1
    """

    def __init__(self, *args, exclude_tags=None, **kwargs):
        exclude_tags = set(exclude_tags or ())
        if os.environ.get('OC4SEQ_ACCEPTANCE') != '1':
            exclude_tags.add('acceptance')
        super().__init__(*args, exclude_tags=exclude_tags, **kwargs)
