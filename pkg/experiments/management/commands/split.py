from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Готовит размеченный набор из файлов ключей (например, HDFS) по протоколу разбиения 3/7'
    run_name = 'split'

    def run(self, service):
        return service.prepare_keyed_dataset()
