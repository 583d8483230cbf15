from harness.management.commands._base import KernelGuardCommand


class Command(KernelGuardCommand):
    help = 'Aggregate every rate report in a directory into summary.json.'

    def add_arguments(self, parser):
        parser.add_argument('--in', dest='in_dir', required=True)

    def handle(self, *args, **options):
        summary = self.service.aggregate_reports(options['in_dir'])
        pooled = summary['pooled']
        self.stdout.write(self.style.SUCCESS(
            f"{summary['n_runs']} corridas: {pooled['n_alarms']}/{pooled['n_steps']} alarmas "
            f"(tasa {pooled['rate']:.4f})"))
