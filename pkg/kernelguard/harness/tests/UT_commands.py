import json
from io import StringIO
from unittest import mock

import pytest
from django.core.management import call_command
from django.core.management.base import CommandError

from core.exceptions import StabilityError, TransportError
from harness.services import ScenarioService
from harness.tests.UT_services import desk_scenario


def write_scenario(path, data):
    path.write_text(json.dumps(data), encoding='utf-8')
    return str(path)


class TestRunCommand:
    """
    Unit tests for ``manage.py run`` and its exit codes.
    """

    def test_writes_csv_and_rate_report(self, tmp_path):
        """
        Test that a run writes both output files and prints a summary.
        """
        scenario = write_scenario(tmp_path / 'desk.json', desk_scenario())
        out = StringIO()
        call_command('run', scenario=scenario, out=str(tmp_path / 'out'), steps=150, seed=3, stdout=out)
        assert (tmp_path / 'out' / 'desk.csv').is_file()
        assert (tmp_path / 'out' / 'desk.rate.json').is_file()
        assert 'desk:' in out.getvalue()

    def test_invalid_scenario_exits_with_two(self, tmp_path):
        """
        Test that a schema violation maps to exit code 2.
        """
        scenario = write_scenario(tmp_path / 'bad.json', desk_scenario(horizon=0))
        with pytest.raises(CommandError) as excinfo:
            call_command('run', scenario=scenario, stdout=StringIO())
        assert excinfo.value.returncode == 2

    def test_transport_failure_exits_with_three(self, tmp_path):
        """
        Test that a transport error maps to exit code 3.
        """
        scenario = write_scenario(tmp_path / 'desk.json', desk_scenario())
        with mock.patch.object(ScenarioService, 'run_scenario', side_effect=TransportError("socket cerrado")):
            with pytest.raises(CommandError, match="socket cerrado") as excinfo:
                call_command('run', scenario=scenario, stdout=StringIO())
        assert excinfo.value.returncode == 3

    def test_adversary_flag_reaches_the_scenario(self, tmp_path):
        """
        Test that --adversary plant moves the adversary to the plant side of the link.
        """
        scenario = write_scenario(tmp_path / 'desk.json', desk_scenario())
        with mock.patch.object(ScenarioService, 'run_scenario', side_effect=TransportError("sin red")) as run:
            with pytest.raises(CommandError):
                call_command('run', scenario=scenario, transport='tcp', adversary='plant', stdout=StringIO())
        assert run.call_args.args[0].transport['adversary'] == 'plant'
        assert run.call_args.args[0].transport['kind'] == 'tcp'


    def test_numerical_failure_exits_with_three(self, tmp_path):
        """
        Test that a non-stabilizing gain maps to exit code 3.
        """
        scenario = write_scenario(tmp_path / 'desk.json', desk_scenario())
        with mock.patch.object(ScenarioService, 'build', side_effect=StabilityError("Ganancias no estabilizantes")):
            with pytest.raises(CommandError) as excinfo:
                call_command('run', scenario=scenario, stdout=StringIO())
        assert excinfo.value.returncode == 3


class TestOtherCommands:
    """
    Unit tests for ``verify``, ``sweep`` and ``report``.
    """

    def test_verify_failure_exits_with_three(self, tmp_path):
        """
        Test that a failed identity check maps to exit code 3.
        """
        plant = write_scenario(tmp_path / 'plant.json', desk_scenario()['plant'])
        with mock.patch.object(ScenarioService, 'verify_plant', return_value={'passed': False}):
            with pytest.raises(CommandError) as excinfo:
                call_command('verify', plant=plant, stdout=StringIO())
        assert excinfo.value.returncode == 3

    def test_sweep_and_report(self, tmp_path):
        """
        Test a sweep followed by aggregation of separately written runs.
        """
        scenario = write_scenario(tmp_path / 'desk.json', desk_scenario())
        call_command('sweep', scenario=scenario, param='horizon=150,160', out=str(tmp_path / 'sweep'), seed=1,
                     stdout=StringIO())
        assert (tmp_path / 'sweep' / 'sweep.csv').is_file()

        call_command('run', scenario=scenario, out=str(tmp_path / 'runs'), steps=150, stdout=StringIO())
        out = StringIO()
        call_command('report', in_dir=str(tmp_path / 'runs'), stdout=out)
        assert '1 corridas' in out.getvalue()
        assert (tmp_path / 'runs' / 'summary.json').is_file()

    def test_report_on_empty_directory_exits_with_two(self, tmp_path):
        """
        Test that aggregating nothing maps to exit code 2.
        """
        with pytest.raises(CommandError) as excinfo:
            call_command('report', in_dir=str(tmp_path), stdout=StringIO())
        assert excinfo.value.returncode == 2
