from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Экспортирует глобальные представления и их двумерную проекцию'
    run_name = 'project'

    def run(self, service):
        return service.project()
