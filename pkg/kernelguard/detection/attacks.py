import logging
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.exceptions import (
    DimensionError,
    InfeasibleAttackError,
    InvalidSpecError,
    UnsupportedSystemError,
)
from core.loopsim import ControllerConfig, LoopState, ObserverController, PlantSpec, plant_step
from core.statespace import RANK_TOL, StateSpaceSystem, ZeroDirection, invariant_zeros
from core.stats import RateReport, binomial_ci, chi2_threshold
from core.synthesis import GainBank, KalmanSolution
from detection.detect_a import EncoderStateA, encode_step

logger = logging.getLogger(__name__)

# canal de ataque -> señal que viaja por la red
CHANNELS = {
    'a_u': 'u',
    'a_y': 'y',
    'a_r_en': 'r_en',
    'a_gamma': 'gamma',
    'a_r0': 'r_0p',
    'a_beta': 'beta',
}
SIGNALS = tuple(CHANNELS.values())
COVERT_PAIRS = (('a_u', 'a_y'), ('a_gamma', 'a_r0'))
KINDS = ('none', 'additive', 'zero_dynamics', 'covert', 'replay', 'encoder_forgery')
SHAPES = ('step', 'impulse', 'ramp', 'sine', 'samples')
SATURATION_HORIZON = 200


class SignalGenerator:
    """Attack signal source; ``value(k)`` is queried with non-decreasing k."""

    dim: int = 0

    def value(self, k: int) -> np.ndarray:
        raise NotImplementedError


class AdditiveSignal(SignalGenerator):
    """
    Deterministic injection a(k) that starts at ``onset``.

    Args:
        amplitude (array_like): Vector scaling the shape.
        shape (str): 'step', 'impulse', 'ramp', 'sine' or 'samples'.
        onset (int): First active step.
        frequency (float): Cycles per sample for 'sine'.
        samples (array_like, optional): Rows played from ``onset`` for 'samples'.
    """

    def __init__(self, amplitude, shape: str = 'step', onset: int = 0, frequency: float = 0.0,
                 samples=None):
        if shape not in SHAPES:
            raise InvalidSpecError(f"Forma de señal desconocida: {shape}")
        self.amplitude = np.atleast_1d(np.asarray(amplitude, dtype=float))
        self.dim = self.amplitude.size
        self.shape = shape
        self.onset = onset
        self.frequency = frequency
        self.samples = None
        if shape == 'samples':
            if samples is None:
                raise InvalidSpecError("La forma 'samples' requiere muestras")
            self.samples = np.asarray(samples, dtype=float).reshape(-1, self.dim)

    def value(self, k: int) -> np.ndarray:
        t = k - self.onset
        if t < 0:
            return np.zeros(self.dim)
        if self.shape == 'step':
            return self.amplitude.copy()
        if self.shape == 'impulse':
            return self.amplitude.copy() if t == 0 else np.zeros(self.dim)
        if self.shape == 'ramp':
            return self.amplitude * t
        if self.shape == 'sine':
            return self.amplitude * np.sin(2.0 * np.pi * self.frequency * t)
        if t < self.samples.shape[0]:
            return self.amplitude * self.samples[t]
        return np.zeros(self.dim)


class ZeroDynamicsAttack(SignalGenerator):
    """
    a_u(k) = amplitude * Re(e^{i phase} g z0^(k - onset)).

    ``state_offset`` is the matching physical state kick
    amplitude * Re(e^{i phase} x0); applied at onset it makes the output
    contribution vanish exactly; it is only applied when ``match_state`` is
    set. For |z0| >= 1 the signal is silenced ``saturation_horizon`` steps
    after onset.
    """

    def __init__(self, zero: ZeroDirection, amplitude: float = 1.0, phase: float = 0.0, onset: int = 0,
                 saturation_horizon: int = SATURATION_HORIZON, match_state: bool = False):
        if not zero.has_direction:
            raise InfeasibleAttackError(f"El cero {zero.z0} no tiene dirección verificada")
        self.zero = zero
        self.amplitude = amplitude
        self.phase = phase
        self.onset = onset
        self.saturation_horizon = saturation_horizon
        self.match_state = match_state
        self.dim = zero.g.size

    @property
    def unstable(self) -> bool:
        return abs(self.zero.z0) >= 1.0

    @property
    def state_offset(self) -> np.ndarray:
        return self.amplitude * np.real(np.exp(1j * self.phase) * self.zero.x0)

    def value(self, k: int) -> np.ndarray:
        t = k - self.onset
        if t < 0 or (self.unstable and t >= self.saturation_horizon):
            return np.zeros(self.dim)
        return self.amplitude * np.real(np.exp(1j * self.phase) * self.zero.g * self.zero.z0 ** t)


def zero_dynamics_attack(plant: StateSpaceSystem, z0: Union[str, complex, ZeroDirection] = 'auto',
                         amplitude: float = 1.0, phase: float = 0.0, onset: int = 0,
                         saturation_horizon: int = SATURATION_HORIZON, match_state: bool = False,
                         tol: float = RANK_TOL) -> ZeroDynamicsAttack:
    """
    Build a zero-dynamics attack along an invariant zero of the plant.

    Args:
        plant (StateSpaceSystem): Square plant.
        z0 (str | complex | ZeroDirection): 'auto' picks the zero of largest
            modulus; a number must match one of the plant's zeros; a
            ZeroDirection is checked against the Rosenbrock pencil.
        amplitude (float): Scale of the signal (||g|| is normalized to 1).
        match_state (bool): Schedule the matched state offset at onset.

    Returns:
        ZeroDynamicsAttack: The generator, with its matched state offset.

    Raises:
        InfeasibleAttackError: If the plant has no usable finite zero.
    """
    if isinstance(z0, ZeroDirection):
        if not z0.has_direction or z0.residual(plant) > 1e3 * tol * max(1.0, np.linalg.norm(z0.g)):
            raise InfeasibleAttackError(f"La dirección dada no anula la planta en z0={z0.z0}")
        zero = z0
    else:
        try:
            zeros = [zd for zd in invariant_zeros(plant, tol=tol) if zd.has_direction]
        except UnsupportedSystemError as e:
            raise InfeasibleAttackError(f"No se pueden calcular ceros invariantes: {e}") from e
        if not zeros:
            logger.info("Ataque de dinámica cero no construible: la planta no tiene ceros finitos")
            raise InfeasibleAttackError("La planta no tiene ceros invariantes finitos")
        if isinstance(z0, str):
            if z0 != 'auto':
                raise InvalidSpecError(f"z0 debe ser 'auto' o un número, se recibió {z0}")
            zero = max(zeros, key=lambda zd: abs(zd.z0))
        else:
            gaps = [abs(zd.z0 - complex(z0)) for zd in zeros]
            j = int(np.argmin(gaps))
            if gaps[j] > 1e-6 * max(1.0, abs(complex(z0))):
                raise InfeasibleAttackError(f"z0={z0} no es un cero invariante de la planta")
            zero = zeros[j]

    scale = np.linalg.norm(zero.g)
    zero = ZeroDirection(z0=zero.z0, x0=zero.x0 / scale, g=zero.g / scale)
    if abs(zero.z0) >= 1.0:
        logger.warning("Cero inestable z0=%s: la señal se corta tras %d pasos", zero.z0, saturation_horizon)
    return ZeroDynamicsAttack(zero, amplitude=amplitude, phase=phase, onset=onset,
                              saturation_horizon=saturation_horizon, match_state=match_state)


class CovertAttack:
    """
    Covert pair from a private plant copy: x_a+ = A x_a + B a_u, x_a(0) = 0,
    a_y = -(C x_a + D a_u), so that M^ a_y + N^ a_u = 0.
    """

    def __init__(self, plant: StateSpaceSystem, inner: SignalGenerator):
        if inner.dim != plant.p:
            raise DimensionError(f"La señal interna tiene dimensión {inner.dim}, la planta {plant.p} entradas")
        self.copy = StateSpaceSystem(plant.A, plant.B, plant.C, plant.D)
        self.inner = inner
        self.k = 0
        self._last: Tuple[np.ndarray, np.ndarray] = (np.zeros(plant.p), np.zeros(plant.m))

    def pair(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        if k < self.k - 1:
            raise InvalidSpecError(f"El ataque encubierto ya avanzó hasta k={self.k - 1}")
        while self.k <= k:
            a_u = self.inner.value(self.k)
            a_y = -self.copy.step(a_u)
            self._last = (a_u, a_y)
            self.k += 1
        return self._last

    def actuator_value(self, k: int) -> np.ndarray:
        return self.pair(k)[0]

    def sensor_value(self, k: int) -> np.ndarray:
        return self.pair(k)[1]


def covert_attack(plant: StateSpaceSystem, a_u_generator: SignalGenerator) -> CovertAttack:
    return CovertAttack(plant, a_u_generator)


class EavesdropLog:
    """
    Ring buffers of tapped frames per signal.

    Args:
        capacity (int): Frames kept per signal.
        window (tuple, optional): Only steps k0 <= k <= k1 are recorded.
    """

    def __init__(self, capacity: int, window: Optional[Tuple[int, int]] = None):
        if window is not None and capacity < window[1] - window[0] + 1:
            raise InvalidSpecError(f"Capacidad {capacity} menor que la ventana de grabación {window}")
        self.capacity = capacity
        self.window = window
        self._order: Dict[str, deque] = {}
        self._frames: Dict[str, Dict[int, np.ndarray]] = {}

    def record(self, signal: str, k: int, value) -> None:
        if self.window is not None and not self.window[0] <= k <= self.window[1]:
            return
        order = self._order.setdefault(signal, deque())
        frames = self._frames.setdefault(signal, {})
        if k not in frames:
            order.append(k)
        frames[k] = np.array(value, dtype=float, copy=True)
        while len(order) > self.capacity:
            frames.pop(order.popleft())

    def get(self, signal: str, k: int) -> Optional[np.ndarray]:
        return self._frames.get(signal, {}).get(k)

    def has(self, signal: str, k0: int, k1: int) -> bool:
        frames = self._frames.get(signal, {})
        return all(k in frames for k in range(k0, k1 + 1))

    def stream(self, signal: str) -> Tuple[np.ndarray, np.ndarray]:
        """Recorded steps and values in time order."""
        frames = self._frames.get(signal, {})
        steps = np.array(sorted(frames), dtype=int)
        values = np.array([frames[k] for k in steps]) if steps.size else np.zeros((0, 0))
        return steps, values


class ReplayAttack:
    """
    Substitutes the tapped signals during [replay_start, replay_start + M] by
    the frames recorded over [k0, k0 + M], while ``a_u`` drives the actuator.
    """

    def __init__(self, log: EavesdropLog, signals: Sequence[str], k0: int, M: int, replay_start: int,
                 a_u: Optional[SignalGenerator] = None):
        if replay_start <= k0 + M:
            raise InvalidSpecError(f"replay_start={replay_start} debe ser mayor que k0 + M = {k0 + M}")
        if log.capacity < M + 1:
            raise InvalidSpecError(f"El registro guarda {log.capacity} tramas, se necesitan {M + 1}")
        unknown = set(signals) - set(SIGNALS)
        if unknown:
            raise InvalidSpecError(f"Señales desconocidas para reproducir: {sorted(unknown)}")
        self.log = log
        self.signals = tuple(signals)
        self.k0, self.M, self.replay_start = k0, M, replay_start
        self.a_u = a_u

    @property
    def offset(self) -> int:
        return self.replay_start - self.k0

    def replaying(self, k: int) -> bool:
        return self.replay_start <= k <= self.replay_start + self.M

    def substitute(self, signal: str, k: int, value: np.ndarray) -> np.ndarray:
        if signal not in self.signals or not self.replaying(k):
            return value
        recorded = self.log.get(signal, k - self.offset)
        if recorded is None:
            raise InfeasibleAttackError(f"Faltan tramas grabadas de {signal} para k={k - self.offset}")
        return recorded.copy()


def replay_attack(log: EavesdropLog, window: int, replay_start: int, k0: int,
                  signals: Sequence[str] = ('y',), a_u: Optional[SignalGenerator] = None) -> ReplayAttack:
    """
    Replay rule over a recorded window of M + 1 frames.

    Raises:
        InvalidSpecError: If replay_start <= k0 + M or the log is too small.
    """
    return ReplayAttack(log, signals, k0=k0, M=window, replay_start=replay_start, a_u=a_u)


class EncoderForgery:
    """
    Forges r_en from what the adversary sees, u as sent and y as delivered.

    ``nominal`` knows only the mode-0 pair (X_0, Y_0); ``omniscient`` also
    knows the gain bank and the switching law.
    """

    KNOWLEDGE = ('nominal', 'omniscient')

    def __init__(self, plant: StateSpaceSystem, bank: GainBank, knowledge: str = 'nominal'):
        if knowledge not in self.KNOWLEDGE:
            raise InvalidSpecError(f"Nivel de conocimiento desconocido: {knowledge}")
        self.bank = bank
        self.knowledge = knowledge
        self.encoder = EncoderStateA(plant)

    def forge(self, k: int, u_sent, y_delivered) -> np.ndarray:
        mode = self.bank.mode_at(k) if self.knowledge == 'omniscient' else 0
        return encode_step(self.encoder, self.bank, u_sent, y_delivered, mode=mode)


def encoder_forgery(plant: StateSpaceSystem, bank: GainBank, knowledge: str = 'nominal') -> EncoderForgery:
    return EncoderForgery(plant, bank, knowledge)


@dataclass(eq=False)
class AttackScenario:
    """
    One attack: its kind, the channels it touches, its generator and the
    steps [start, end] in which it modifies frames.

    A covert attack names an actuator and a sensor channel; a replay lists
    the channel it substitutes (plus a_u for the concurrent injection).
    """

    kind: str
    channels: Tuple[str, ...]
    generator: object = None
    active_window: Tuple[int, int] = (0, np.iinfo(np.int64).max)

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if self.kind not in KINDS:
            raise InvalidSpecError(f"Tipo de ataque desconocido: {self.kind}")
        unknown = [c for c in self.channels if c not in CHANNELS]
        if unknown:
            raise InvalidSpecError(f"Canales desconocidos: {unknown}")
        start, end = self.active_window
        if start < 0 or end < start:
            raise InvalidSpecError(f"Ventana activa inválida: {self.active_window}")
        if self.kind == 'covert' and tuple(sorted(self.channels)) not in {tuple(sorted(p)) for p in COVERT_PAIRS}:
            raise InvalidSpecError("Un ataque encubierto requiere el par (a_u, a_y) o (a_gamma, a_r0)")
        if self.kind in ('additive', 'zero_dynamics') and len(self.channels) != 1:
            raise InvalidSpecError(f"Un ataque {self.kind} actúa sobre un único canal")
        if self.kind == 'encoder_forgery' and self.channels != ('a_r_en',):
            raise InvalidSpecError("La falsificación del codificador solo actúa sobre a_r_en")

    @property
    def signals(self) -> Tuple[str, ...]:
        return tuple(CHANNELS[c] for c in self.channels)

    def is_active(self, k: int) -> bool:
        return self.active_window[0] <= k <= self.active_window[1]

    @property
    def state_offset(self) -> Optional[np.ndarray]:
        if self.kind == 'zero_dynamics' and self.generator.match_state:
            return self.generator.state_offset
        return None


class _Context:
    """Frames seen by the adversary during the current step."""

    def __init__(self):
        self.k = -1
        self.sent: Dict[str, np.ndarray] = {}
        self.delivered: Dict[str, np.ndarray] = {}


def perturb(scenario: AttackScenario, signal: str, k: int, value, context: Optional[_Context] = None) -> np.ndarray:
    """
    Value of ``signal`` at step k after this attack: additive channels get
    value + a(k), replayed channels get the recorded frame, a forged r_en
    replaces the original. Frames outside the active window pass unchanged.
    """
    value = np.asarray(value, dtype=float)
    kind, gen = scenario.kind, scenario.generator
    if kind == 'none':
        return value

    if kind == 'encoder_forgery':
        if signal != 'r_en':
            return value
        if context is None or 'u' not in context.sent or 'y' not in context.delivered:
            raise InvalidSpecError("La falsificación del codificador necesita u y y del mismo paso")
        forged = gen.forge(k, context.sent['u'], context.delivered['y'])
        return forged if scenario.is_active(k) else value

    if kind == 'covert':
        actuator, sensor = (c for pair in COVERT_PAIRS for c in pair if c in scenario.channels)
        if signal == CHANNELS[actuator]:
            return value + gen.actuator_value(k) if scenario.is_active(k) else value
        if signal == CHANNELS[sensor]:
            return value + gen.sensor_value(k) if scenario.is_active(k) else value
        return value

    if kind == 'replay':
        actuator = {'u': 'a_u', 'gamma': 'a_gamma'}.get(signal)
        if gen.a_u is not None and actuator in scenario.channels:
            return value + gen.a_u.value(k) if gen.replaying(k) else value
        return gen.substitute(signal, k, value)

    if signal not in scenario.signals or not scenario.is_active(k):
        return value
    return value + gen.value(k)


def inject(scenario: AttackScenario, frame, context: Optional[_Context] = None):
    """
    Modified copy of a channel frame (any dataclass with ``signal``, ``k`` and
    ``payload``); the original is never touched.
    """
    payload = perturb(scenario, frame.signal, frame.k, frame.payload, context)
    if payload is frame.payload:
        return frame
    return replace(frame, payload=np.array(payload, dtype=float))


class Adversary:
    """
    Man-in-the-middle on the network: records every frame in flight and
    applies the attacks in order.

    Raises:
        InvalidSpecError: If two attacks drive the same channel.
    """

    def __init__(self, attacks: Iterable[AttackScenario] = (), log: Optional[EavesdropLog] = None):
        self.attacks: List[AttackScenario] = list(attacks)
        used: Dict[str, int] = {}
        for attack in self.attacks:
            for channel in attack.channels:
                used[channel] = used.get(channel, 0) + 1
        clashes = sorted(c for c, n in used.items() if n > 1)
        if clashes:
            raise InvalidSpecError(f"Más de un generador por canal: {clashes}")
        self.log = log
        self.tapes = [a.generator.log for a in self.attacks if a.kind == 'replay']
        self.context = _Context()

    def _begin(self, k: int) -> None:
        if k != self.context.k:
            self.context = _Context()
            self.context.k = k

    def tap(self, signal: str, k: int, value) -> np.ndarray:
        self._begin(k)
        value = np.asarray(value, dtype=float)
        for log in ([self.log] if self.log else []) + self.tapes:
            log.record(signal, k, value)
        self.context.sent[signal] = value
        for attack in self.attacks:
            value = perturb(attack, signal, k, value, self.context)
        self.context.delivered[signal] = value
        return value

    def intercept(self, frame):
        payload = self.tap(frame.signal, frame.k, frame.payload)
        if payload is frame.payload:
            return frame
        return replace(frame, payload=np.array(payload, dtype=float))

    def state_offset(self, k: int) -> Optional[np.ndarray]:
        """Physical state kick scheduled at step k (matched zero-dynamics onsets)."""
        offsets = [a.state_offset for a in self.attacks
                   if a.state_offset is not None and a.active_window[0] == k]
        return sum(offsets) if offsets else None

    def active(self, k: int) -> bool:
        return any(a.kind != 'none' and a.is_active(k) for a in self.attacks)


@dataclass(frozen=True)
class StealthReport:
    n_runs: int
    rate: RateReport
    mean_J: float
    stealthy: bool


def verify_stealth(plant: PlantSpec, kalman: KalmanSolution, F0, make_attacks: Callable[[], Sequence[AttackScenario]],
                   horizon: int, n_runs: int, alpha: float = 0.05, seed: int = 0, onset: int = 0,
                   V=None) -> StealthReport:
    """
    Monte-Carlo alarm rate of the baseline detector under attack.

    The baseline is the Kalman-gain observer controller (L0 = L_K) with
    J = r0' Sigma_r^-1 r0 against the chi2(m) threshold. The verdict is
    stealthy iff the pooled rate over steps k >= onset lies in the 95%
    binomial interval around alpha.

    Args:
        plant (PlantSpec): Plant and noise.
        kalman (KalmanSolution): Steady-state Kalman gain and Sigma_r.
        F0 (array_like): State feedback gain.
        make_attacks (Callable): Builds fresh attack scenarios for each run.
        horizon (int): Steps per run.
        n_runs (int): Number of runs.
        onset (int): First step counted.
        V (array_like, optional): Reference v(k), zero by default.

    Returns:
        StealthReport: Pooled rate, mean J and the verdict.
    """
    model = plant.sys
    cfg = ControllerConfig.build(model, F0, kalman.L_K)
    V = np.zeros((horizon, model.p)) if V is None else np.asarray(V, dtype=float).reshape(horizon, model.p)
    J_th = chi2_threshold(alpha, model.m)
    Sigma_inv = np.linalg.inv(kalman.Sigma_r)

    n_alarms, n_steps, J_sum = 0, 0, 0.0
    for run in range(n_runs):
        rng = np.random.default_rng([seed, run])
        state = LoopState.initial(plant, cfg, rng)
        ctrl = ObserverController(cfg, state)
        adversary = Adversary(make_attacks())
        for k in range(horizon):
            offset = adversary.state_offset(k)
            if offset is not None:
                state.x = state.x + offset
            u = adversary.tap('u', k, ctrl.command(V[k]))
            y = adversary.tap('y', k, plant_step(plant, state, u, rng))
            r0 = ctrl.observe(y)
            if k >= onset:
                J = float(r0 @ Sigma_inv @ r0)
                J_sum += J
                n_alarms += J > J_th
                n_steps += 1

    rate = n_alarms / n_steps if n_steps else 0.0
    lo, hi = binomial_ci(n_alarms, n_steps)
    report = RateReport(n_steps=n_steps, n_alarms=n_alarms, rate=rate, ci_low=lo, ci_high=hi)
    stealthy = report.consistent_with(alpha)
    logger.info("Sigilo: tasa %.4f en %d pasos (%s)", rate, n_steps, "sigiloso" if stealthy else "detectado")
    return StealthReport(n_runs=n_runs, rate=report, mean_J=J_sum / max(n_steps, 1), stealthy=stealthy)


@dataclass(frozen=True, eq=False)
class MarkovEstimate:
    H: np.ndarray
    residual_rms: float


def estimate_markov_parameters(inputs, outputs, lags: int) -> MarkovEstimate:
    """
    Least-squares FIR fit y(k) = sum_i H_i u(k - i), i = 0..lags-1, from
    intercepted streams.

    Returns:
        MarkovEstimate: H with shape (lags, m, p) and the fit residual RMS.
    """
    U = np.asarray(inputs, dtype=float)
    Y = np.asarray(outputs, dtype=float)
    U = U[:, None] if U.ndim == 1 else U
    Y = Y[:, None] if Y.ndim == 1 else Y
    if U.shape[0] != Y.shape[0]:
        raise DimensionError("Los flujos de entrada y salida deben tener la misma longitud")
    K, p = U.shape
    m = Y.shape[1]
    if K <= lags * p:
        raise InvalidSpecError(f"Se necesitan más de {lags * p} muestras para {lags} retardos")
    Phi = np.hstack([U[lags - 1 - i:K - i] for i in range(lags)])
    target = Y[lags - 1:]
    theta, *_ = np.linalg.lstsq(Phi, target, rcond=None)
    residual = target - Phi @ theta
    H = theta.reshape(lags, p, m).transpose(0, 2, 1)
    return MarkovEstimate(H=H, residual_rms=float(np.sqrt(np.mean(residual ** 2))))
