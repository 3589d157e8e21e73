from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Выбирает порог по валидации и считает precision/recall/F1 и PR-кривую на тесте'
    run_name = 'eval'

    def run(self, service):
        return service.evaluate()
