import numpy as np
import pytest

from core.exceptions import DesyncError, DimensionError, InvalidSpecError
from core.loopsim import ControllerConfig, LoopState, PlantSpec, plant_step, run_loop
from core.statespace import StateSpaceSystem
from core.synthesis import (NoiseSpec, build_gain_bank, feedback_gain, kalman_gain, observer_gain,
                            random_stable_system)
from detection.attacks import AdditiveSignal, covert_attack, encoder_forgery
from detection.detect_a import (DecoderStateA, EncoderStateA, decode_step, encode_step, evaluate,
                                switching_identity_errors)

HORIZON = 600


def desk_plant():
    return StateSpaceSystem([[0.9, 0.1], [0.0, 0.8]], [[0.0], [1.0]], [[1.0, 0.0]], [[0.0]])


class SchemeASetup:
    """Desk plant with a three-mode bank and a dynamic Youla parameter."""

    def __init__(self, seed: int = 3):
        self.plant = desk_plant()
        self.noise = NoiseSpec.isotropic(2, 1, 0.01, 0.01)
        F0 = feedback_gain(self.plant.A, self.plant.B, np.eye(2), np.eye(1))
        L0 = observer_gain(self.plant.A, self.plant.C, np.eye(2), np.eye(1))
        Q = random_stable_system(2, 1, 1, np.random.default_rng(seed), radius=0.5)
        self.cfg = ControllerConfig.build(self.plant, F0, L0, Q)
        self.kalman = kalman_gain(self.plant.A, self.plant.C, self.noise)
        self.bank = build_gain_bank(self.plant, kappa=2, seed=seed, dwell_min=50, perturbation_scale=0.5,
                                    F0=F0, L0=L0, horizon=HORIZON)
        self.V = np.sin(0.03 * np.arange(HORIZON))[:, None]

    def run(self, a_u=None, a_y=None, forge=None, seed: int = 0):
        """Lockstep loop; returns r_u and r_0K per step."""
        spec = PlantSpec(self.plant, self.noise)
        rng = np.random.default_rng(seed)
        state = LoopState.plant_only(spec, rng)
        encoder = EncoderStateA(self.plant)
        decoder = DecoderStateA(self.cfg, self.bank, self.kalman.L_K)
        r_u, r_0K = np.empty((HORIZON, 1)), np.empty((HORIZON, 1))
        for k in range(HORIZON):
            u = decoder.controller.command(self.V[k])
            u_applied = u + (a_u[k] if a_u is not None else 0.0)
            y = plant_step(spec, state, u_applied, rng)
            r_en = encode_step(encoder, self.bank, u_applied, y)
            y_received = y + (a_y[k] if a_y is not None else 0.0)
            if forge is not None:
                r_en = forge.forge(k, u, y_received)
            r_u[k], r_0K[k] = decode_step(decoder, decoder.filters_at(k), r_en, y_received, u, self.V[k])
        return r_u, r_0K


class TestEvaluate:
    """
    Unit tests for the chi-square statistic.
    """

    def test_statistic_combines_both_residuals(self):
        """
        Test J = lam |r_u|^2 + r_0K' Sigma_r^-1 r_0K.
        """
        frame = evaluate([0.0], [1.0], [[2.0]], lam=1e6, alpha=0.05, k=4)
        assert frame.J == pytest.approx(0.5)
        assert frame.J_th == pytest.approx(3.841458820694124, rel=1e-7)
        assert not frame.alarm
        assert frame.k == 4
        assert evaluate([1e-3], [1.0], [[2.0]], lam=1e6, alpha=0.05).J == pytest.approx(1.5)

    def test_alarm_is_strict_inequality(self):
        """
        Test that the alarm is raised only above the threshold.
        """
        J_th = evaluate([0.0], [0.0], [[1.0]], lam=1.0, alpha=0.05).J_th
        assert not evaluate([0.0], [np.sqrt(J_th) * (1 - 1e-9)], [[1.0]], lam=1.0, alpha=0.05).alarm
        assert evaluate([0.0], [np.sqrt(J_th) * (1 + 1e-9)], [[1.0]], lam=1.0, alpha=0.05).alarm

    def test_lambda_must_be_positive(self):
        """
        Test that a non-positive weight is rejected.
        """
        with pytest.raises(InvalidSpecError, match="lambda debe ser positivo"):
            evaluate([0.0], [0.0], [[1.0]], lam=0.0, alpha=0.05)

    def test_covariance_shape(self):
        """
        Test that Sigma_r must match r_0K.
        """
        with pytest.raises(DimensionError, match="Sigma_r debe ser 1x1"):
            evaluate([0.0], [0.0], np.eye(2), lam=1.0, alpha=0.05)


class TestSwitchedResidualEncoder:
    """
    Unit tests for the encoder/decoder pair.
    """

    def setup_method(self):
        self.setup = SchemeASetup()

    def test_bank_switches_within_horizon(self):
        """
        Test that the schedule used below actually switches.
        """
        assert self.setup.bank.switch_instants().size >= 2

    def test_controller_residual_vanishes_without_attack(self):
        """
        Test that r_u stays at zero across mode switches in a noisy run.
        """
        r_u, _ = self.setup.run()
        assert np.abs(r_u).max() < 1e-8

    def test_covert_pair_is_exposed_at_onset(self):
        """
        Test that a covert actuator injection shows up in r_u immediately.
        """
        gen = covert_attack(self.setup.plant, AdditiveSignal([0.5], onset=300))
        pairs = [gen.pair(k) for k in range(HORIZON)]
        a_u = np.array([p[0] for p in pairs])
        a_y = np.array([p[1] for p in pairs])
        r_u, _ = self.setup.run(a_u=a_u, a_y=a_y)
        assert np.abs(r_u[:300]).max() < 1e-8
        assert r_u[300, 0] == pytest.approx(0.5, abs=1e-8)
        frame = evaluate(r_u[300], [0.0], [[1.0]], lam=1e6, alpha=0.05)
        assert frame.alarm

    def test_omniscient_forgery_is_not_seen(self):
        """
        Test that a forger who knows the switching law reproduces r_en exactly.
        """
        forge = encoder_forgery(self.setup.plant, self.setup.bank, knowledge='omniscient')
        r_u, _ = self.setup.run(forge=forge)
        assert np.abs(r_u).max() < 1e-8

    def test_nominal_forgery_is_seen_after_a_switch(self):
        """
        Test that a forger who only knows mode 0 is exposed once the mode changes.
        """
        forge = encoder_forgery(self.setup.plant, self.setup.bank, knowledge='nominal')
        r_u, _ = self.setup.run(forge=forge)
        first_switch = int(self.setup.bank.switch_instants()[0])
        assert np.abs(r_u[:first_switch]).max() < 1e-8
        assert np.abs(r_u[first_switch:]).max() > 1e-6

    def test_decoder_rejects_wrong_mode(self):
        """
        Test that filters for another mode raise DesyncError.
        """
        decoder = DecoderStateA(self.setup.cfg, self.setup.bank, self.setup.kalman.L_K)
        decoder.controller.command([0.0])
        with pytest.raises(DesyncError, match="Modo 1 recibido en k=0"):
            decode_step(decoder, decoder.filters[1], [0.0], [0.0], [0.0], [0.0])

    def test_decoder_schedule_ends(self):
        """
        Test that asking for filters past the schedule raises DesyncError.
        """
        decoder = DecoderStateA(self.setup.cfg, self.setup.bank, self.setup.kalman.L_K)
        with pytest.raises(DesyncError, match="termina en"):
            decoder.filters_at(HORIZON)

    def test_encoder_schedule_ends(self):
        """
        Test that the encoder refuses steps beyond the schedule.
        """
        encoder = EncoderStateA(self.setup.plant)
        encoder.k = HORIZON
        with pytest.raises(InvalidSpecError, match="termina en"):
            encode_step(encoder, self.setup.bank, [0.0], [0.0])

    def test_switching_identities_on_arbitrary_streams(self):
        """
        Test both switched-residual identities on random input and output streams.
        """
        rng = np.random.default_rng(21)
        errors = switching_identity_errors(self.setup.cfg, self.setup.bank,
                                           rng.standard_normal((HORIZON, 1)), rng.standard_normal((HORIZON, 1)))
        assert errors.r_0s.shape == (HORIZON,)
        assert errors.max_error < 1e-9

    def test_switching_identities_along_random_schedules(self):
        """
        Test both switched-residual identities on noise-free closed-loop runs under ten random switching schedules.
        """
        quiet = PlantSpec(self.setup.plant, NoiseSpec(np.zeros((2, 2)), [[1e-24]], np.zeros((2, 1)),
                                                      np.zeros((2, 2))))
        V = np.sin(0.05 * np.arange(HORIZON))[:, None] + 0.5
        trace = run_loop(quiet, self.setup.cfg, V, np.random.default_rng(0), x_hat0=[0.0, 0.0])
        scale = max(1.0, np.abs(trace.u).max(), np.abs(trace.y).max())
        for seed in range(10):
            bank = build_gain_bank(self.setup.plant, kappa=2, seed=seed, dwell_min=20, perturbation_scale=0.5,
                                   F0=self.setup.cfg.F0, L0=self.setup.cfg.L0, horizon=HORIZON)
            errors = switching_identity_errors(self.setup.cfg, bank, trace.u, trace.y)
            assert bank.switch_instants().size >= 2, seed
            assert errors.max_error <= 1e-8 * scale, (seed, errors.max_error)

