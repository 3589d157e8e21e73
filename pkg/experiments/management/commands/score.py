from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Считает оценки аномальности (глобальную, по окнам и итоговую) для последовательностей'
    run_name = 'score'

    def run(self, service):
        return service.score()
