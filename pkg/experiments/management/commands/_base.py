"""
Общая основа команд эксперимента: разбор --config/--set, журнал запуска
и коды завершения (1 - конфигурация, 2 - данные, 3 - численная ошибка)
"""
import json
import sys

from django.core.management.base import BaseCommand, CommandError

from neural.exceptions import NumericalError
from experiments.config import RunConfigError, load_run_config
from experiments.services import ExperimentService, RunRecorder
from oc4seq_project.storage import json_safe

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class ExperimentCommand(BaseCommand):
    """
    Подклассы задают run_name и реализуют run(service)
    """
    run_name = ''

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        if parser.called_from_command_line:
            # Ошибки разбора аргументов - ошибка конфигурации (код 1)
            def usage_error(message):
                parser.print_usage(sys.stderr)
                sys.stderr.write(f"{parser.prog}: ошибка: {message}\n")
                sys.exit(EXIT_CONFIG)

            parser.error = usage_error
        return parser

    def add_arguments(self, parser):
        parser.add_argument(
            '--config',
            default=None,
            help='JSON-файл конфигурации запуска',
        )
        parser.add_argument(
            '--set',
            dest='overrides',
            action='append',
            default=[],
            metavar='KEY=VALUE',
            help='Переопределение ключа конфигурации (значение разбирается как JSON)',
        )

    def handle(self, *args, **options):
        try:
            config = load_run_config(options['config'], options['overrides'])
        except RunConfigError as e:
            raise CommandError(str(e), returncode=EXIT_CONFIG) from e

        try:
            with RunRecorder(self.run_name, config) as recorder:
                result = self.run(ExperimentService(config))
                recorder.complete(result)
        except RunConfigError as e:
            raise CommandError(str(e), returncode=EXIT_CONFIG) from e
        except NumericalError as e:
            raise CommandError(f"Численная ошибка: {e}", returncode=EXIT_NUMERIC) from e
        except (ValueError, OSError) as e:
            raise CommandError(f"Ошибка данных: {e}", returncode=EXIT_DATA) from e

        self.stdout.write(json.dumps(json_safe(result), ensure_ascii=False, indent=2))
        self.stdout.write(self.style.SUCCESS(f"✅ Команда {self.run_name} выполнена"))

    def run(self, service: ExperimentService):
        raise NotImplementedError
