from harness.management.commands._base import KernelGuardCommand
from harness.transport import TRANSPORTS


class Command(KernelGuardCommand):
    help = 'Run a scenario once per parameter value and write sweep.csv.'

    def add_arguments(self, parser):
        parser.add_argument('--scenario', required=True)
        parser.add_argument('--param', required=True, help="'<path>=<lo>:<hi>:<n>' or '<path>=<v1>,<v2>'")
        parser.add_argument('--steps', type=int)
        parser.add_argument('--seed', type=int)
        parser.add_argument('--transport', choices=sorted(TRANSPORTS))
        parser.add_argument('--out', default='out')

    def handle(self, *args, **options):
        data = self.service.read_json(options['scenario'])
        table = self.service.sweep(data, options['param'], options['out'], seed=options['seed'],
                                   horizon=options['steps'], transport=options['transport'])
        self.stdout.write(table.to_string(index=False))
        self.stdout.write(self.style.SUCCESS(f"{len(table)} corridas en {options['out']}/sweep.csv"))
