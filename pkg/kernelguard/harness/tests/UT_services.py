import json
from pathlib import Path

import numpy as np
import pytest

from core.exceptions import InfeasibleAttackError, ScenarioError
from harness.services import ScenarioService, parse_sweep_param, set_path

SCENARIOS = Path(__file__).resolve().parents[2] / 'scenarios'


def desk_scenario(**extra):
    data = {
        'name': 'desk',
        'seed': 4,
        'horizon': 200,
        'plant': {
            'A': [[0.9, 0.1], [0.0, 0.8]],
            'B': [[0.0], [1.0]],
            'C': [[1.0, 0.0]],
            'noise': {'Sigma_w': [[0.01, 0.0], [0.0, 0.01]], 'Sigma_v': [[0.01]]},
        },
        'reference': {'shape': 'sine', 'amplitude': [0.5], 'frequency': 0.01},
    }
    data.update(extra)
    return data


def zero_scenario(**extra):
    data = desk_scenario(**extra)
    data['plant'] = dict(data['plant'], A=[[1.7, -0.72], [1.0, 0.0]], B=[[1.0], [0.0]], C=[[1.0, -0.5]])
    return data


class TestParseScenario:
    """
    Unit tests for scenario validation and defaults.
    """

    def setup_method(self):
        self.service = ScenarioService()

    def test_defaults(self, settings):
        """
        Test the default alpha, lambda, transport and output directory.
        """
        settings.KERNELGUARD_SEED = None
        scenario = self.service.parse_scenario(desk_scenario())
        assert scenario.alpha == 0.05
        assert scenario.lam == 1e6
        assert scenario.seed == 4
        assert scenario.scheme == 'baseline'
        assert scenario.transport['kind'] == 'inproc'
        assert scenario.output_dir == 'out'
        np.testing.assert_array_equal(scenario.plant['D'], [[0.0]])

    def test_lambda_key(self):
        """
        Test that the JSON key 'lambda' sets the weight.
        """
        assert self.service.parse_scenario(desk_scenario(**{'lambda': 10.0})).lam == 10.0

    def test_seed_precedence(self, settings):
        """
        Test that the explicit seed beats the environment, which beats the file.
        """
        settings.KERNELGUARD_SEED = 99
        assert self.service.parse_scenario(desk_scenario()).seed == 99
        assert self.service.parse_scenario(desk_scenario(), seed=1).seed == 1

    def test_negative_horizon(self):
        """
        Test that a non-positive horizon is rejected naming the field.
        """
        with pytest.raises(ScenarioError, match="'horizon'"):
            self.service.parse_scenario(desk_scenario(horizon=-5))

    def test_horizon_must_exceed_ten_times_order(self):
        """
        Test that a horizon of at most 10 n steps is rejected.
        """
        with pytest.raises(ScenarioError, match="10·n = 20"):
            self.service.parse_scenario(desk_scenario(horizon=20))

    def test_horizon_override(self):
        """
        Test that the horizon override replaces the file value before validation.
        """
        assert self.service.parse_scenario(desk_scenario(), horizon=321).horizon == 321

    def test_adversary_side_default_and_override(self):
        """
        Test that the adversary sits on the monitor side unless told otherwise.
        """
        assert self.service.parse_scenario(desk_scenario()).transport['adversary'] == 'monitor'
        scenario = self.service.parse_scenario(desk_scenario(transport={'kind': 'tcp', 'adversary': 'plant'}))
        assert scenario.transport['adversary'] == 'plant'
        assert self.service.parse_scenario(desk_scenario(), adversary='plant').transport['adversary'] == 'plant'

    def test_unknown_adversary_side(self):
        """
        Test that an adversary placement other than plant or monitor is rejected naming the field.
        """
        with pytest.raises(ScenarioError, match="transport.adversary"):
            self.service.parse_scenario(desk_scenario(transport={'kind': 'inproc', 'adversary': 'router'}))
        with pytest.raises(ScenarioError, match="transport.adversary"):
            self.service.parse_scenario(desk_scenario(), adversary='router')


    def test_covert_requires_both_channels(self):
        """
        Test that a covert attack on the sensor link alone is rejected.
        """
        attack = {'kind': 'covert', 'channels': ['a_y'], 'start': 50, 'signal': {'amplitude': [1.0]}}
        with pytest.raises(ScenarioError, match="attacks.0.channels"):
            self.service.parse_scenario(desk_scenario(attacks=[attack]))

    def test_channel_not_sent_by_scheme(self):
        """
        Test that the baseline loop has no r_en channel to attack.
        """
        attack = {'kind': 'additive', 'channels': ['a_r_en'], 'start': 50, 'signal': {'amplitude': [1.0]}}
        with pytest.raises(ScenarioError, match="no transmite"):
            self.service.parse_scenario(desk_scenario(attacks=[attack]))

    def test_signal_dimension(self):
        """
        Test that an injection with the wrong width is rejected.
        """
        attack = {'kind': 'additive', 'channels': ['a_y'], 'start': 50, 'signal': {'amplitude': [1.0, 2.0]}}
        with pytest.raises(ScenarioError, match="dimensión 2, se esperaba 1"):
            self.service.parse_scenario(desk_scenario(attacks=[attack]))

    def test_replay_must_follow_recording(self):
        """
        Test that a replay starting inside its recording window is rejected.
        """
        attack = {'kind': 'replay', 'channels': ['a_y'], 'start': 60, 'record_start': 10, 'record_length': 80}
        with pytest.raises(ScenarioError, match="attacks.0.start"):
            self.service.parse_scenario(desk_scenario(attacks=[attack]))

    def test_plant_dimension_mismatch(self):
        """
        Test that a D inconsistent with B and C is reported under plant.D.
        """
        data = desk_scenario()
        data['plant']['D'] = [[0.0, 0.0]]
        with pytest.raises(ScenarioError, match="plant.D"):
            self.service.parse_scenario(data)

    def test_invalid_lambda(self):
        """
        Test that a non-positive lambda is reported under its JSON name.
        """
        with pytest.raises(ScenarioError, match="'lambda'"):
            self.service.parse_scenario(desk_scenario(**{'lambda': 0.0}))

    def test_missing_file(self, tmp_path):
        """
        Test that a missing scenario file raises ScenarioError.
        """
        with pytest.raises(ScenarioError, match="No existe el archivo"):
            self.service.load_scenario(tmp_path / 'nope.json')

    def test_shipped_scenarios_validate(self):
        """
        Test that every shipped scenario passes the schema.
        """
        for name in ('baseline', 'covert_scheme_a', 'replay_scheme_b', 'zero_dynamics_baseline'):
            scenario = self.service.load_scenario(SCENARIOS / f'{name}.json', seed=0)
            assert scenario.name == name


class TestRunScenario:
    """
    Unit tests for lockstep runs and their reports.
    """

    def setup_method(self):
        self.service = ScenarioService()

    def run(self, data, **overrides):
        return self.service.run_scenario(self.service.parse_scenario(data, seed=overrides.pop('seed', 4),
                                                                     **overrides))

    def test_scheme_a_is_quiet_without_attack(self):
        """
        Test that the switched encoder leaves r_u at zero in an attack-free run.
        """
        report = self.run(desk_scenario(scheme='scheme_a', gain_bank={'kappa': 2, 'dwell_min': 20}))
        assert list(report.steps.columns) == ['k', 'J', 'J_th', 'alarm', 'r_u_norm', 'r_0K_norm', 'mode',
                                              'attack_active']
        assert report.steps['r_u_norm'].max() < 1e-8
        assert report.steps['mode'].nunique() > 1
        assert report.extras['switches'] > 0
        assert report.rate.onset is None

    def test_scheme_a_flags_covert_pair_at_onset(self):
        """
        Test that a covert step is detected on the step it starts.
        """
        attack = {'kind': 'covert', 'channels': ['a_u', 'a_y'], 'start': 120, 'signal': {'amplitude': [0.5]}}
        report = self.run(desk_scenario(scheme='scheme_a', attacks=[attack]))
        assert report.rate.onset == 120
        assert report.rate.detection_delay == 0
        assert bool(report.steps['attack_active'].iloc[120])
        assert not report.steps['attack_active'].iloc[119]

    def test_covert_pair_is_invisible_to_baseline(self):
        """
        Test that the baseline statistic is unchanged by a covert pair.
        """
        attack = {'kind': 'covert', 'channels': ['a_u', 'a_y'], 'start': 100, 'signal': {'amplitude': [1.0]}}
        clean = self.run(desk_scenario())
        attacked = self.run(desk_scenario(attacks=[attack]))
        np.testing.assert_allclose(attacked.steps['J'], clean.steps['J'], atol=1e-9)

    def test_matched_zero_dynamics_is_invisible_to_baseline(self):
        """
        Test that a matched zero-dynamics input leaves the baseline statistic unchanged.
        """
        attack = {'kind': 'zero_dynamics', 'channels': ['a_u'], 'start': 100, 'z0': '0.5',
                  'amplitude': 5.0, 'match_state': True}
        clean = self.run(zero_scenario())
        attacked = self.run(zero_scenario(attacks=[attack]))
        np.testing.assert_allclose(attacked.steps['J'], clean.steps['J'], atol=1e-8)

    def test_zero_dynamics_needs_a_zero(self):
        """
        Test that a plant without finite zeros cannot host the attack.
        """
        attack = {'kind': 'zero_dynamics', 'channels': ['a_u'], 'start': 100}
        with pytest.raises(InfeasibleAttackError):
            self.run(desk_scenario(attacks=[attack]))

    def test_scheme_b_flags_replay(self):
        """
        Test that replaying (r_0p, beta) under a command injection is detected during the replay.
        """
        attack = {'kind': 'replay', 'channels': ['a_r0', 'a_beta', 'a_gamma'], 'start': 250,
                  'record_start': 20, 'record_length': 200, 'signal': {'amplitude': [2.0]}}
        report = self.run(desk_scenario(horizon=500, scheme='scheme_b', attacks=[attack]))
        assert report.rate.detection_delay is not None
        assert report.rate.detection_delay < 200

    def test_scheme_a_flags_zero_dynamics(self):
        """
        Test that a matched zero-dynamics input hidden from the baseline is flagged by the switched encoder.
        """
        attack = {'kind': 'zero_dynamics', 'channels': ['a_u'], 'start': 100, 'z0': '0.5',
                  'amplitude': 5.0, 'match_state': True}
        report = self.run(zero_scenario(scheme='scheme_a', gain_bank={'kappa': 2, 'dwell_min': 20}, attacks=[attack]))
        assert report.rate.onset == 100
        assert report.rate.detection_delay is not None
        assert report.rate.detection_delay <= 25

    def test_scheme_a_flags_replay(self):
        """
        Test that replaying (y, r_en) under an actuator injection is flagged within 25 steps.
        """
        attack = {'kind': 'replay', 'channels': ['a_y', 'a_r_en', 'a_u'], 'start': 250,
                  'record_start': 20, 'record_length': 200, 'signal': {'amplitude': [2.0]}}
        report = self.run(desk_scenario(horizon=500, scheme='scheme_a', gain_bank={'kappa': 2, 'dwell_min': 20},
                                        attacks=[attack]))
        assert report.rate.onset == 250
        assert report.rate.detection_delay is not None
        assert report.rate.detection_delay <= 25

    def test_scheme_b_flags_residual_injection_through_kalman_residual(self):
        """
        Test that an injection on r_0p while mode 0 is active raises r_0K and alarms at onset.
        """
        attack = {'kind': 'additive', 'channels': ['a_r0'], 'start': 100, 'signal': {'amplitude': [1.0]}}
        report = self.run(desk_scenario(horizon=300, scheme='scheme_b', gain_bank={'kappa': 2, 'dwell_min': 200},
                                        attacks=[attack]))
        assert (report.steps['mode'].iloc[:200] == 0).all()
        assert report.steps['r_0K_norm'].iloc[100] > 0.5
        assert report.rate.detection_delay == 0

    def test_scheme_b_pure_replay_trips_windowed_test(self):
        """
        Test that replaying recorded (r_0p, beta) frames under switching trips the windowed mean-shift alarm.
        """
        attack = {'kind': 'replay', 'channels': ['a_r0', 'a_beta'], 'start': 250,
                  'record_start': 20, 'record_length': 200}
        report = self.run(desk_scenario(horizon=500, scheme='scheme_b', gain_bank={'kappa': 2, 'dwell_min': 20},
                                        attacks=[attack]))
        assert report.extras['switches'] > 0
        assert report.windowed_alarms > 0
        assert report.windowed_delay is not None
        assert report.windowed_delay < 200


    def test_inproc_and_tcp_give_identical_bytes(self, tmp_path):
        """
        Test that both transports write byte-identical CSV files for the same seed.
        """
        data = desk_scenario(scheme='scheme_a')
        for kind in ('inproc', 'tcp'):
            report = self.run(data, transport=kind)
            self.service.write_report(report, tmp_path / kind)
        assert (tmp_path / 'inproc' / 'desk.csv').read_bytes() == (tmp_path / 'tcp' / 'desk.csv').read_bytes()

    def test_plant_side_adversary_matches_monitor_side(self, tmp_path):
        """
        Test that a covert pair applied inside the TCP plant process writes the same CSV as the in-process run.
        """
        attack = {'kind': 'covert', 'channels': ['a_u', 'a_y'], 'start': 120, 'signal': {'amplitude': [0.5]}}
        data = desk_scenario(scheme='scheme_a', attacks=[attack])
        for kind, side in (('inproc', 'monitor'), ('tcp', 'plant')):
            report = self.run(data, transport=kind, adversary=side)
            assert report.rate.detection_delay == 0
            self.service.write_report(report, tmp_path / kind)
        assert (tmp_path / 'inproc' / 'desk.csv').read_bytes() == (tmp_path / 'tcp' / 'desk.csv').read_bytes()


    def test_same_seed_same_bytes(self, tmp_path):
        """
        Test that rerunning a seed reproduces the CSV exactly.
        """
        for run in ('a', 'b'):
            self.service.write_report(self.run(desk_scenario(scheme='scheme_b')), tmp_path / run)
        assert (tmp_path / 'a' / 'desk.csv').read_bytes() == (tmp_path / 'b' / 'desk.csv').read_bytes()

    def test_rate_report_file(self, tmp_path):
        """
        Test the JSON rate report written next to the CSV.
        """
        report = self.run(desk_scenario())
        csv_path, json_path = self.service.write_report(report, tmp_path)
        content = json.loads(json_path.read_text())
        assert content['rate']['n_steps'] == 200
        assert content['scheme'] == 'baseline'
        assert csv_path.read_text().splitlines()[0] == 'k,J,J_th,alarm,r_u_norm,r_0K_norm,mode,attack_active'


class TestSweepAndAggregate:
    """
    Unit tests for parameter sweeps and report aggregation.
    """

    def setup_method(self):
        self.service = ScenarioService()

    def test_parse_sweep_param(self):
        """
        Test the range and list forms of a sweep expression.
        """
        assert parse_sweep_param('attacks.0.amplitude=0:1:3') == ('attacks.0.amplitude', [0.0, 0.5, 1.0])
        assert parse_sweep_param('seed = 1,2') == ('seed', [1.0, 2.0])
        with pytest.raises(ScenarioError, match="sin '='"):
            parse_sweep_param('seed')
        with pytest.raises(ScenarioError, match="Rango de barrido inválido"):
            parse_sweep_param('seed=a:b:c')

    def test_set_path(self):
        """
        Test dotted paths with list indices and integer preservation.
        """
        data = desk_scenario()
        set_path(data, 'horizon', 300.0)
        set_path(data, 'reference.amplitude.0', 0.25)
        assert data['horizon'] == 300 and isinstance(data['horizon'], int)
        assert data['reference']['amplitude'] == [0.25]
        with pytest.raises(ScenarioError, match="Ruta de barrido inexistente"):
            set_path(data, 'plant.E.0', 1.0)

    def test_sweep_writes_table(self, tmp_path):
        """
        Test that a sweep runs one scenario per value and writes sweep.csv.
        """
        table = self.service.sweep(desk_scenario(), 'horizon=150,200', tmp_path, seed=4)
        assert table['n_steps'].tolist() == [150, 200]
        assert (tmp_path / 'sweep.csv').is_file()

    def test_aggregate_reports(self, tmp_path):
        """
        Test that rate reports are pooled into summary.json.
        """
        for seed in (1, 2):
            report = self.service.run_scenario(self.service.parse_scenario(desk_scenario(name=f'run{seed}'),
                                                                           seed=seed))
            self.service.write_report(report, tmp_path)
        summary = self.service.aggregate_reports(tmp_path)
        assert summary['n_runs'] == 2
        assert summary['pooled']['n_steps'] == 400
        assert (tmp_path / 'summary.json').is_file()

    def test_aggregate_empty_directory(self, tmp_path):
        """
        Test that a directory without reports is rejected.
        """
        with pytest.raises(ScenarioError, match="No hay reportes de tasas"):
            self.service.aggregate_reports(tmp_path)

    def test_verify_plant(self):
        """
        Test that every identity suite passes for the desk plant.
        """
        result = self.service.verify_plant(json.loads((SCENARIOS / 'desk_plant.json').read_text()))
        assert result['bezout']['passed']
        assert all(entry['passed'] for entry in result['lemma1'])
        assert result['switching']['passed']
        assert result['passed']
