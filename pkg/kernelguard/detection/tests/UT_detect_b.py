import numpy as np
import pytest

from core.exceptions import DesyncError, InvalidSpecError
from core.loopsim import ControllerConfig, LoopState, PlantSpec, plant_step
from core.statespace import StateSpaceSystem, simulate
from core.stats import autocorrelation
from core.synthesis import (NoiseSpec, build_gain_bank, feedback_gain, kalman_gain, observer_gain,
                            random_stable_system, scheme_filters)
from detection.attacks import AdditiveSignal, CovertAttack, EavesdropLog, replay_attack
from detection.detect_b import (MonitorNodeB, PlantNodeB, evaluate, monitor_node_step, plant_node_step,
                                reconstruct_covert)

HORIZON = 600


def desk_plant():
    return StateSpaceSystem([[0.9, 0.1], [0.0, 0.8]], [[0.0], [1.0]], [[1.0, 0.0]], [[0.0]])


def lqr_pair(plant):
    return (feedback_gain(plant.A, plant.B, np.eye(plant.n), np.eye(plant.p)),
            observer_gain(plant.A, plant.C, np.eye(plant.n), np.eye(plant.m)))


class SchemeBSetup:
    """Desk plant with the encrypted loop split over two nodes."""

    def __init__(self, seed: int = 5):
        self.plant = desk_plant()
        self.noise = NoiseSpec.isotropic(2, 1, 0.01, 0.01)
        F0, L0 = lqr_pair(self.plant)
        Q = random_stable_system(1, 1, 1, np.random.default_rng(seed), radius=0.4)
        self.cfg = ControllerConfig.build(self.plant, F0, L0, Q)
        self.kalman = kalman_gain(self.plant.A, self.plant.C, self.noise)
        self.bank = build_gain_bank(self.plant, kappa=2, seed=seed, dwell_min=50, perturbation_scale=0.5,
                                    F0=F0, L0=L0, horizon=HORIZON)
        self.V = np.ones((HORIZON, 1))

    def run(self, a_gamma=None, replay=None, seed: int = 1):
        """
        Lockstep loop; ``replay`` substitutes the uplink frames (r_0p, beta).

        Returns:
            tuple: r_u per step, measured y and the monitor's rebuilt y.
        """
        spec = PlantSpec(self.plant, self.noise)
        rng = np.random.default_rng(seed)
        state = LoopState.plant_only(spec, rng)
        plant_node = PlantNodeB(self.plant, self.bank)
        monitor = MonitorNodeB(self.cfg, self.bank, self.kalman.L_K)
        r_u, y_meas, y_rec = (np.empty((HORIZON, 1)) for _ in range(3))
        for k in range(HORIZON):
            gamma = monitor.command(self.V[k])
            if a_gamma is not None:
                gamma = gamma + a_gamma[k]
            u = plant_node.actuate(gamma)
            y_meas[k] = plant_step(spec, state, u, rng)
            r_0p, beta = plant_node.measure(y_meas[k])
            if replay is not None:
                replay.log.record('r_0p', k, r_0p)
                replay.log.record('beta', k, beta)
                r_0p = replay.substitute('r_0p', k, r_0p)
                beta = replay.substitute('beta', k, beta)
            out = monitor.observe(r_0p, beta)
            y_rec[k] = out.y_reconstructed
            frame = evaluate(monitor, monitor.filters_at(k), out.r_beta, r_0p, self.kalman.Sigma_r,
                             lam=1e6, alpha=0.05)
            r_u[k] = frame.r_u
        return r_u, y_meas, y_rec


class TestEncryptedLoop:
    """
    Unit tests for the plant and monitor nodes of the encrypted loop.
    """

    def setup_method(self):
        self.setup = SchemeBSetup()

    def test_controller_residual_vanishes_without_attack(self):
        """
        Test that r_beta equals Q_0s(r_0p) at every step of a noisy run.
        """
        r_u, _, _ = self.setup.run()
        assert self.setup.bank.switch_instants().size >= 2
        assert np.abs(r_u).max() < 1e-8

    def test_monitor_rebuilds_measured_output(self):
        """
        Test that the monitor reconstructs y from gamma and r_0p alone.
        """
        _, y_meas, y_rec = self.setup.run()
        np.testing.assert_allclose(y_rec, y_meas, atol=1e-9)

    def test_command_injection_is_exposed(self):
        """
        Test that an injection on gamma shows in r_u once a non-nominal mode is active.
        """
        a_gamma = np.zeros((HORIZON, 1))
        a_gamma[200:] = 0.5
        r_u, _, _ = self.setup.run(a_gamma=a_gamma)
        assert np.abs(r_u[:200]).max() < 1e-8
        assert np.abs(r_u[200:]).max() > 1e-3

    def test_replayed_uplink_is_exposed(self):
        """
        Test that replaying recorded (r_0p, beta) under a command injection is detected.
        """
        log = EavesdropLog(capacity=200, window=(50, 249))
        replay = replay_attack(log, window=199, replay_start=300, k0=50, signals=('r_0p', 'beta'))
        a_gamma = np.zeros((HORIZON, 1))
        a_gamma[300:500] = 2.0
        r_u, _, _ = self.setup.run(a_gamma=a_gamma, replay=replay)
        assert np.abs(r_u[:300]).max() < 1e-8
        assert np.abs(r_u[300:500]).max() > 1e-3

    def test_measure_requires_actuate(self):
        """
        Test that the plant node cannot measure without a command in flight.
        """
        node = PlantNodeB(self.setup.plant, self.setup.bank)
        with pytest.raises(InvalidSpecError, match="sin un actuate"):
            node.measure([0.0])

    def test_plant_node_step_checks_bank(self):
        """
        Test that a plant node driven with another bank raises DesyncError.
        """
        node = PlantNodeB(self.setup.plant, self.setup.bank)
        other = SchemeBSetup(seed=6).bank
        with pytest.raises(DesyncError, match="otro banco"):
            plant_node_step(node, other, [0.0], [0.0])

    def test_plant_node_step_with_callable_plant(self):
        """
        Test that the output may be produced from the applied input.
        """
        node = PlantNodeB(self.setup.plant, self.setup.bank)
        out = plant_node_step(node, self.setup.bank, [0.7], lambda u: 2.0 * u)
        np.testing.assert_allclose(out.u_applied, [0.7])
        np.testing.assert_allclose(out.r_0p, [1.4])
        np.testing.assert_allclose(out.beta, [0.0])

    def test_monitor_node_step_first_call(self):
        """
        Test that the first monitor cycle only issues gamma.
        """
        monitor = MonitorNodeB(self.setup.cfg, self.setup.bank, self.setup.kalman.L_K)
        out = monitor_node_step(monitor, monitor.filters_at(0), None, None, [1.0])
        np.testing.assert_allclose(out.gamma, [1.0])
        assert out.r_beta is None
        out = monitor_node_step(monitor, monitor.filters_at(0), [0.0], [0.0], [1.0])
        assert out.r_beta is not None
        assert monitor.k == 1

    def test_evaluate_rejects_wrong_mode(self):
        """
        Test that evaluating with another mode's filters raises DesyncError.
        """
        monitor = MonitorNodeB(self.setup.cfg, self.setup.bank, self.setup.kalman.L_K)
        with pytest.raises(DesyncError, match="Modo 2 evaluado en k=0"):
            evaluate(monitor, monitor.filters[2], [0.0], [0.0], self.setup.kalman.Sigma_r, lam=1e6, alpha=0.05)


class TestCovertReconstruction:
    """
    Unit tests for reconstruct_covert.
    """

    def setup_method(self):
        self.setup = SchemeBSetup()

    def test_recovers_covert_pair_from_kalman_residual(self):
        """
        Test that a_y and a_u are recovered from Q_K0(a_y) on a minimum-phase plant.
        """
        plant, bank, L_K = self.setup.plant, self.setup.bank, self.setup.kalman.L_K
        gen = CovertAttack(plant, AdditiveSignal([1.0], 'sine', onset=10, frequency=0.01))
        pairs = [gen.pair(k) for k in range(HORIZON)]
        a_u = np.array([p[0] for p in pairs])
        a_y = np.array([p[1] for p in pairs])
        Q_K0 = scheme_filters(plant, bank, 0, L_K).Q_K0
        result = reconstruct_covert(simulate(Q_K0, a_y), plant, bank, L_K)
        assert result.feasible
        assert result.delay == 2
        np.testing.assert_allclose(result.a_y_hat, a_y, atol=1e-8)
        np.testing.assert_allclose(result.a_u_hat[:-2], a_u[:-2], atol=1e-6)
        assert np.isnan(result.a_beta_hat[-2:]).all()
        assert np.isfinite(result.a_beta_hat[:-2]).all()

    def test_non_square_plant_only_gives_sensor_estimate(self):
        """
        Test that a plant with more outputs than inputs yields a_y only.
        """
        plant = StateSpaceSystem([[0.9, 0.1], [0.0, 0.8]], [[0.0], [1.0]], np.eye(2), np.zeros((2, 1)))
        F0, L0 = lqr_pair(plant)
        kalman = kalman_gain(plant.A, plant.C, NoiseSpec.isotropic(2, 2, 0.01, 0.01))
        bank = build_gain_bank(plant, kappa=1, seed=2, dwell_min=20, perturbation_scale=0.5,
                               F0=F0, L0=L0, horizon=50)
        result = reconstruct_covert(np.zeros((50, 2)), plant, bank, kalman.L_K)
        assert not result.feasible
        assert result.a_u_hat is None
        assert "no cuadrada" in result.reason
        assert result.a_y_hat.shape == (50, 2)


class TestEncryptedTraffic:
    """
    Statistical checks on what the plant node puts on the wire.
    """

    @pytest.mark.slow
    def test_plant_residual_is_white_with_kalman_gain(self):
        """
        Test that r_0p is white at lags 1 to 5 over 1e5 steps when L0 is the Kalman gain.
        """
        plant = desk_plant()
        noise = NoiseSpec.isotropic(2, 1, 0.01, 0.01)
        kalman = kalman_gain(plant.A, plant.C, noise)
        F0 = feedback_gain(plant.A, plant.B, np.eye(2), np.eye(1))
        n_steps = 100_000
        cfg = ControllerConfig.build(plant, F0, kalman.L_K)
        bank = build_gain_bank(plant, kappa=2, seed=8, dwell_min=50, perturbation_scale=0.5,
                               F0=F0, L0=kalman.L_K, horizon=n_steps)
        spec = PlantSpec(plant, noise)
        rng = np.random.default_rng(17)
        state = LoopState.plant_only(spec, rng)
        plant_node = PlantNodeB(plant, bank)
        monitor = MonitorNodeB(cfg, bank, kalman.L_K)
        V = 0.5 * np.sin(0.01 * np.arange(n_steps))[:, None]
        r_0p = np.empty((n_steps, 1))
        for k in range(n_steps):
            u = plant_node.actuate(monitor.command(V[k]))
            y = plant_step(spec, state, u, rng)
            r_0p[k], beta = plant_node.measure(y)
            monitor.observe(r_0p[k], beta)
        rho = autocorrelation(r_0p, lags=range(1, 6))
        assert rho.shape == (5, 1)
        assert np.abs(rho).max() < 3 / np.sqrt(n_steps)
