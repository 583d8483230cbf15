import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from core.exceptions import DesyncError, DimensionError, InvalidSpecError
from core.loopsim import ControllerConfig, LoopState, ObserverController
from core.statespace import StateSpaceSystem
from core.stats import chi2_threshold
from core.synthesis import GainBank, SchemeFilters, SwitchedFilter, scheme_filters

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ResidualFrame:
    """One evaluated step: alarm is raised exactly when J > J_th."""

    k: int
    r_u: np.ndarray
    r_0K: np.ndarray
    J: float
    J_th: float
    alarm: bool


def evaluate(r_u, r_0K, Sigma_r, lam: float, alpha: float, k: int = 0) -> ResidualFrame:
    """
    Test statistic J = lam * r_u' r_u + r_0K' Sigma_r^-1 r_0K against the
    (1 - alpha) quantile of chi2(m), m = dim(r_0K).

    Raises:
        InvalidSpecError: If lam is not positive.
    """
    if lam <= 0:
        raise InvalidSpecError("lambda debe ser positivo")
    r_u = np.asarray(r_u, dtype=float).reshape(-1)
    r_0K = np.asarray(r_0K, dtype=float).reshape(-1)
    Sigma_r = np.atleast_2d(np.asarray(Sigma_r, dtype=float))
    if Sigma_r.shape != (r_0K.size, r_0K.size):
        raise DimensionError(f"Sigma_r debe ser {r_0K.size}x{r_0K.size}, se recibió {Sigma_r.shape}")
    J = float(lam * r_u @ r_u + r_0K @ np.linalg.solve(Sigma_r, r_0K))
    J_th = chi2_threshold(alpha, r_0K.size)
    return ResidualFrame(k=k, r_u=r_u, r_0K=r_0K, J=J, J_th=J_th, alarm=J > J_th)


class EncoderStateA:
    """
    Plant-side switched encoder r_en = X_s u + Y_s y.

    The observer state carries over unchanged when the mode switches.
    """

    def __init__(self, plant: StateSpaceSystem):
        self.plant = plant
        self.state = np.zeros(plant.n)
        self.mode = 0
        self.k = 0

    def reset(self) -> None:
        self.state = np.zeros(self.plant.n)
        self.mode, self.k = 0, 0


def encode_step(enc: EncoderStateA, bank: GainBank, u_applied, y, mode: Optional[int] = None) -> np.ndarray:
    """
    r_en = u - F_s s;  s <- (A - L_s C) s + L_s y + (B - L_s D) u.

    Args:
        enc (EncoderStateA): Encoder advanced in place.
        bank (GainBank): Gains and switching schedule.
        u_applied (array_like): Input that reached the actuator.
        y (array_like): Measured output.
        mode (int, optional): Forces a mode instead of the schedule.

    Returns:
        np.ndarray: The encoded residual r_en(k).
    """
    if mode is None:
        if enc.k >= bank.horizon:
            raise InvalidSpecError(f"El calendario de conmutación termina en k={bank.horizon}")
        mode = bank.mode_at(enc.k)
    A, B, C, D = enc.plant.A, enc.plant.B, enc.plant.C, enc.plant.D
    F, L = bank.F[mode], bank.L[mode]
    u = np.asarray(u_applied, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)

    r_en = u - F @ enc.state
    enc.state = (A - L @ C) @ enc.state + L @ y + (B - L @ D) @ u
    enc.mode = mode
    enc.k += 1
    return r_en


class DecoderStateA:
    """
    Monitor-side decoder: the mode-0 controller plus the switched filters
    P_us and Qbar_s, and Q_K0 for the Kalman-innovation residual.

    Args:
        cfg (ControllerConfig): Mode-0 controller (shares its state with the
            monitor's command path when ``state`` is given).
        bank (GainBank): Same gains and schedule as the plant's encoder.
        L_K (array_like): Kalman gain.
        state (LoopState, optional): Controller state to share.
    """

    def __init__(self, cfg: ControllerConfig, bank: GainBank, L_K, state: Optional[LoopState] = None):
        self.cfg = cfg
        self.bank = bank
        self.controller = ObserverController(cfg, state)
        self.filters = [scheme_filters(cfg.plant, bank, i, L_K, Q=cfg.Q) for i in range(bank.kappa + 1)]
        self.P_u = SwitchedFilter.from_filters(self.filters, 'P_us')
        self.Qbar = SwitchedFilter.from_filters(self.filters, 'Qbar_s')
        self.Q_K0 = self.filters[0].Q_K0.copy()
        self.mode = 0
        self.k = 0
        self.r0 = np.zeros(cfg.plant.m)

    def filters_at(self, k: int) -> SchemeFilters:
        if k >= self.bank.horizon:
            raise DesyncError(f"El calendario del monitor termina en k={self.bank.horizon}")
        return self.filters[self.bank.mode_at(k)]


def decode_step(dec: DecoderStateA, filters: SchemeFilters, r_en_received, y_received,
                u_sent, v) -> Tuple[np.ndarray, np.ndarray]:
    """
    Monitor-side residuals for one step.

    r_0 comes from the mode-0 observer on (u_sent, y_received) and vbar_0 from
    the feed-forward filter; then
        r_u  = r_en^a - P_us(vbar_0) - Qbar_s(r_0)
        r_0K = Q_K0(r_0)

    Raises:
        DesyncError: If ``filters`` is not the mode the schedule sets at k.
    """
    expected = dec.bank.mode_at(dec.k) if dec.k < dec.bank.horizon else None
    if filters.mode != expected:
        raise DesyncError(f"Modo {filters.mode} recibido en k={dec.k}, el calendario indica {expected}")
    mode = filters.mode
    ctrl = dec.controller
    v = np.asarray(v, dtype=float).reshape(-1)
    vbar = ctrl.vbar(v)
    ctrl.state.u = np.asarray(u_sent, dtype=float).reshape(-1)
    ctrl.state.v = v
    r0 = ctrl.observe(y_received)

    r_en = np.asarray(r_en_received, dtype=float).reshape(-1)
    r_u = r_en - dec.P_u.step(vbar, mode) - dec.Qbar.step(r0, mode)
    r_0K = dec.Q_K0.step(r0)
    dec.r0 = r0
    dec.mode = mode
    dec.k += 1
    return r_u, r_0K


@dataclass(frozen=True, eq=False)
class SwitchingIdentityErrors:
    """Per-step deviations of the two switched-residual identities."""

    r_0s: np.ndarray
    r_ens: np.ndarray

    @property
    def max_error(self) -> float:
        return float(max(np.max(self.r_0s, initial=0.0), np.max(self.r_ens, initial=0.0)))


def switching_identity_errors(cfg: ControllerConfig, bank: GainBank, u, y) -> SwitchingIdentityErrors:
    """
    Check r_0s = P_0s(r_0p) and r_ens = P_us(r_en0) + Q_s(r_0p) on recorded
    streams, with every filter stepped along the bank's schedule.

    Args:
        cfg (ControllerConfig): Mode-0 controller (plant and gains).
        bank (GainBank): Gain modes and schedule; mode 0 must match cfg.
        u, y (array_like): Input and output streams (K x p, K x m).

    Returns:
        SwitchingIdentityErrors: Infinity-norm error per step of each identity.
    """
    plant = cfg.plant
    u = np.asarray(u, dtype=float).reshape(-1, plant.p)
    y = np.asarray(y, dtype=float).reshape(-1, plant.m)
    if u.shape[0] > bank.horizon:
        raise InvalidSpecError("Los flujos son más largos que el calendario de conmutación")
    filters = [scheme_filters(plant, bank, i, cfg.L0) for i in range(bank.kappa + 1)]
    P_0 = SwitchedFilter.from_filters(filters, 'P_0s')
    P_u = SwitchedFilter.from_filters(filters, 'P_us')
    Q_s = SwitchedFilter.from_filters(filters, 'Q_s')
    switched, nominal = EncoderStateA(plant), EncoderStateA(plant)

    K = u.shape[0]
    err_0, err_en = np.empty(K), np.empty(K)
    for k in range(K):
        mode = bank.mode_at(k)
        # residuos del modo activo y del modo 0 antes de actualizar
        r_0s = y[k] - plant.C @ switched.state - plant.D @ u[k]
        r_0p = y[k] - plant.C @ nominal.state - plant.D @ u[k]
        r_ens = encode_step(switched, bank, u[k], y[k], mode=mode)
        r_en0 = encode_step(nominal, bank, u[k], y[k], mode=0)
        err_0[k] = np.abs(r_0s - P_0.step(r_0p, mode)).max()
        err_en[k] = np.abs(r_ens - P_u.step(r_en0, mode) - Q_s.step(r_0p, mode)).max()
    return SwitchingIdentityErrors(r_0s=err_0, r_ens=err_en)
