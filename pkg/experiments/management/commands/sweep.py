from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Перебирает alpha и число слоев, записывает AP на валидации для каждой точки сетки'
    run_name = 'sweep'

    def run(self, service):
        return service.sweep()
