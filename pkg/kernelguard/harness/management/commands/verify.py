import json

from django.core.management.base import CommandError

from harness.management.commands._base import KernelGuardCommand


class Command(KernelGuardCommand):
    help = 'Run the factorization and gain-switching identity checks on a plant.'

    def add_arguments(self, parser):
        parser.add_argument('--plant', required=True, help='Plant JSON (A, B, C, D) or a scenario file')
        parser.add_argument('--seed', type=int, default=0)

    def handle(self, *args, **options):
        result = self.service.verify_plant(self.service.read_json(options['plant']), seed=options['seed'])
        self.stdout.write(json.dumps(result, indent=2))
        if not result['passed']:
            raise CommandError('Hay identidades que no se cumplen', returncode=3)
        self.stdout.write(self.style.SUCCESS('Todas las identidades se cumplen'))
