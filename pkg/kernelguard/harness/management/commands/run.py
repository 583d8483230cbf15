from harness.management.commands._base import KernelGuardCommand
from harness.nodes import ADVERSARY_SIDES
from harness.transport import TRANSPORTS


class Command(KernelGuardCommand):
    help = 'Run one scenario and write its per-step CSV and rate report.'

    def add_arguments(self, parser):
        parser.add_argument('--scenario', required=True, help='Scenario JSON file')
        parser.add_argument('--steps', type=int, help='Override the scenario horizon')
        parser.add_argument('--seed', type=int, help='Override the scenario seed')
        parser.add_argument('--transport', choices=sorted(TRANSPORTS), help='Override the transport')
        parser.add_argument('--adversary', choices=ADVERSARY_SIDES, help='Side of the link hosting the adversary')
        parser.add_argument('--out', help='Output directory')

    def handle(self, *args, **options):
        scenario = self.service.load_scenario(options['scenario'], seed=options['seed'], horizon=options['steps'],
                                              transport=options['transport'], output_dir=options['out'],
                                              adversary=options['adversary'])
        report = self.service.run_scenario(scenario)
        csv_path, json_path = self.service.write_report(report, scenario.output_dir)
        rate = report.rate
        delay = '-' if rate.detection_delay is None else rate.detection_delay
        self.stdout.write(self.style.SUCCESS(
            f"{scenario.name}: {rate.n_alarms}/{rate.n_steps} alarmas (tasa {rate.rate:.4f}), retardo {delay}"))
        self.stdout.write(f"{csv_path}\n{json_path}")
