"""
Plant-side endpoints and monitor-side nodes for the three detector layouts.

A step k runs as: monitor ``command`` -> downlink frames (u or gamma) ->
plant ``handle`` (physical step plus plant-side encoders) -> uplink frames
(y, r_en) or (r_0p, beta) -> monitor ``observe`` -> evaluation.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from core.exceptions import DesyncError
from core.loopsim import ControllerConfig, LoopState, ObserverController, PlantSpec, plant_step
from core.statespace import StateSpaceSystem
from core.synthesis import GainBank
from detection.detect_a import DecoderStateA, EncoderStateA, decode_step, encode_step, evaluate
from detection.detect_b import MonitorNodeB, PlantNodeB, evaluate as evaluate_b
from harness.codec import ChannelFrame

logger = logging.getLogger(__name__)

SCHEMES = ('baseline', 'scheme_a', 'scheme_b')


@dataclass(frozen=True)
class StepRecord:
    k: int
    J: float
    J_th: float
    alarm: bool
    r_u_norm: float
    r_0K_norm: float
    mode: int


def _by_signal(frames: List[ChannelFrame], expected) -> Dict[str, ChannelFrame]:
    got = {f.signal: f for f in frames}
    if [f.signal for f in frames] != list(expected):
        raise DesyncError(f"Se esperaban tramas {list(expected)}, llegaron {[f.signal for f in frames]}")
    return got


class PlantEndpoint:
    """
    Physical plant plus whatever the scheme computes next to it.

    Args:
        plant (PlantSpec): Plant and noise model.
        rng (np.random.Generator): Noise source owned by this node.
        state_offsets (dict, optional): Physical disturbances {k: dx}.
    """

    downlink = ('u',)
    uplink = ('y',)

    def __init__(self, plant: PlantSpec, rng: np.random.Generator,
                 state_offsets: Optional[Dict[int, np.ndarray]] = None):
        self.plant = plant
        self.rng = rng
        self.state = LoopState.plant_only(plant, rng)
        self.state_offsets = state_offsets or {}
        self.k = 0

    def _physical_step(self, u_applied: np.ndarray) -> np.ndarray:
        if self.k in self.state_offsets:
            self.state.x = self.state.x + self.state_offsets[self.k]
        return plant_step(self.plant, self.state, u_applied, self.rng)

    def handle(self, frames: List[ChannelFrame]) -> List[ChannelFrame]:
        frame = _by_signal(frames, self.downlink)['u']
        self._check_time(frame.k)
        y = self._physical_step(frame.payload)
        self.k += 1
        return [ChannelFrame.of('y', frame.k, y)]

    def _check_time(self, k: int) -> None:
        if k != self.k:
            raise DesyncError(f"Trama de k={k} en el paso {self.k} del nodo de planta")


class SchemeAPlantEndpoint(PlantEndpoint):
    uplink = ('y', 'r_en')

    def __init__(self, plant: PlantSpec, rng: np.random.Generator, bank: GainBank,
                 state_offsets: Optional[Dict[int, np.ndarray]] = None):
        super().__init__(plant, rng, state_offsets)
        self.bank = bank
        self.encoder = EncoderStateA(plant.sys)

    def handle(self, frames: List[ChannelFrame]) -> List[ChannelFrame]:
        frame = _by_signal(frames, self.downlink)['u']
        self._check_time(frame.k)
        y = self._physical_step(frame.payload)
        r_en = encode_step(self.encoder, self.bank, frame.payload, y)
        self.k += 1
        return [ChannelFrame.of('y', frame.k, y), ChannelFrame.of('r_en', frame.k, r_en)]


class SchemeBPlantEndpoint(PlantEndpoint):
    downlink = ('gamma',)
    uplink = ('r_0p', 'beta')

    def __init__(self, plant: PlantSpec, rng: np.random.Generator, bank: GainBank,
                 state_offsets: Optional[Dict[int, np.ndarray]] = None):
        super().__init__(plant, rng, state_offsets)
        self.node = PlantNodeB(plant.sys, bank)

    def handle(self, frames: List[ChannelFrame]) -> List[ChannelFrame]:
        frame = _by_signal(frames, self.downlink)['gamma']
        self._check_time(frame.k)
        u = self.node.actuate(frame.payload)
        y = self._physical_step(u)
        r_0p, beta = self.node.measure(y)
        self.k += 1
        return [ChannelFrame.of('r_0p', frame.k, r_0p), ChannelFrame.of('beta', frame.k, beta)]


class MonitorNode:
    """
    Baseline monitor: observer controller plus the chi2 test on Q_K0(r0).

    Args:
        cfg (ControllerConfig): Mode-0 controller.
        V (np.ndarray): Reference v(k), one row per step.
        L_K, Sigma_r: Kalman gain and innovation covariance.
        lam, alpha (float): Weight of r_u and false-alarm bound.
    """

    def __init__(self, cfg: ControllerConfig, V: np.ndarray, L_K, Sigma_r, lam: float, alpha: float):
        self.cfg = cfg
        self.V = V
        self.Sigma_r = Sigma_r
        self.lam = lam
        self.alpha = alpha
        self.controller = ObserverController(cfg)
        plant = cfg.plant
        self.Q_K0 = StateSpaceSystem(plant.A - np.atleast_2d(L_K) @ plant.C, cfg.L0 - L_K,
                                     plant.C, np.eye(plant.m))
        self.sent: Dict[str, ChannelFrame] = {}

    def mode_at(self, k: int) -> int:
        return 0

    def command(self, k: int) -> List[ChannelFrame]:
        u = self.controller.command(self.V[k])
        self.sent = {'u': ChannelFrame.of('u', k, u)}
        return [self.sent['u']]

    def observe(self, k: int, frames: List[ChannelFrame]) -> StepRecord:
        got = _by_signal(frames, ('y',))
        r0 = self.controller.observe(got['y'].payload)
        r_0K = self.Q_K0.step(r0)
        frame = evaluate(np.zeros(self.cfg.plant.p), r_0K, self.Sigma_r, self.lam, self.alpha, k=k)
        return self._record(frame, k)

    def _record(self, frame, k: int) -> StepRecord:
        return StepRecord(k=k, J=frame.J, J_th=frame.J_th, alarm=frame.alarm,
                          r_u_norm=float(np.linalg.norm(frame.r_u)),
                          r_0K_norm=float(np.linalg.norm(frame.r_0K)), mode=self.mode_at(k))


class SchemeAMonitor(MonitorNode):
    """Switched residual encoder on the plant, decoder here."""

    def __init__(self, cfg: ControllerConfig, V: np.ndarray, L_K, Sigma_r, lam: float, alpha: float,
                 bank: GainBank):
        super().__init__(cfg, V, L_K, Sigma_r, lam, alpha)
        self.bank = bank
        self.decoder = DecoderStateA(cfg, bank, L_K)
        self.controller = self.decoder.controller

    def mode_at(self, k: int) -> int:
        return self.bank.mode_at(k)

    def observe(self, k: int, frames: List[ChannelFrame]) -> StepRecord:
        got = _by_signal(frames, ('y', 'r_en'))
        r_u, r_0K = decode_step(self.decoder, self.decoder.filters_at(k), got['r_en'].payload,
                                got['y'].payload, self.sent['u'].payload, self.V[k])
        frame = evaluate(r_u, r_0K, self.Sigma_r, self.lam, self.alpha, k=k)
        return self._record(frame, k)


class SchemeBMonitor(MonitorNode):
    """Encrypted loop: only gamma goes down, only (r_0p, beta) come up."""

    def __init__(self, cfg: ControllerConfig, V: np.ndarray, L_K, Sigma_r, lam: float, alpha: float,
                 bank: GainBank):
        super().__init__(cfg, V, L_K, Sigma_r, lam, alpha)
        self.bank = bank
        self.node = MonitorNodeB(cfg, bank, L_K)
        self.y_reconstructed: List[np.ndarray] = []

    def mode_at(self, k: int) -> int:
        return self.bank.mode_at(k)

    def command(self, k: int) -> List[ChannelFrame]:
        gamma = self.node.command(self.V[k])
        self.sent = {'gamma': ChannelFrame.of('gamma', k, gamma)}
        return [self.sent['gamma']]

    def observe(self, k: int, frames: List[ChannelFrame]) -> StepRecord:
        got = _by_signal(frames, ('r_0p', 'beta'))
        r_0p = got['r_0p'].payload
        out = self.node.observe(r_0p, got['beta'].payload)
        self.y_reconstructed.append(out.y_reconstructed)
        frame = evaluate_b(self.node, self.node.filters_at(k), out.r_beta, r_0p,
                           self.Sigma_r, self.lam, self.alpha)
        return self._record(frame, k)


ADVERSARY_SIDES = ('monitor', 'plant')


class AdversaryEndpoint:
    """
    Plant endpoint with the man-in-the-middle hosted on the plant side.

    Downlink frames pass through the adversary before reaching the plant and
    uplink frames after leaving it, in the same order as on the monitor side.
    """

    def __init__(self, endpoint: PlantEndpoint, adversary):
        self.endpoint = endpoint
        self.adversary = adversary
        self.downlink = endpoint.downlink
        self.uplink = endpoint.uplink

    def handle(self, frames: List[ChannelFrame]) -> List[ChannelFrame]:
        delivered = [self.adversary.intercept(f) for f in frames]
        return [self.adversary.intercept(f) for f in self.endpoint.handle(delivered)]
