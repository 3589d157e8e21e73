from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Обучает детектор и сохраняет чекпоинт и историю потерь'
    run_name = 'train'

    def run(self, service):
        return service.train()
