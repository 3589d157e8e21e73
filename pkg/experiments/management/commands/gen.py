from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Генерирует синтетический корпус цепи Маркова с внедренными аномалиями и манифест'
    run_name = 'gen'

    def run(self, service):
        return service.generate()
