import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Optional

import numpy as np

from core.exceptions import DimensionError, InvalidSpecError
from core.stats import JointNoiseSampler
from core.statespace import StateSpaceSystem, freq_response
from core.synthesis import CoprimeFactorSet, NoiseSpec, causal_q, check_pair, coprime_factors

logger = logging.getLogger(__name__)

X0_MODES = ('zero', 'sampled', 'fixed')


@dataclass(eq=False)
class PlantSpec:
    """
    Physical plant with its noise model and the way x(0) is chosen.

    Args:
        sys (StateSpaceSystem): Plant matrices (A, B, C, D).
        noise (NoiseSpec): Joint statistics of (w, v) and Pi0.
        x0_mode (str): 'zero', 'sampled' (from N(0, Pi0)) or 'fixed'.
        x0 (array_like, optional): Initial state for 'fixed'.

    Raises:
        DimensionError: If noise and plant dimensions disagree.
        InvalidSpecError: If x0_mode is unknown or 'fixed' has no x0.
    """

    sys: StateSpaceSystem
    noise: NoiseSpec
    x0_mode: str = 'zero'
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.noise.n, self.noise.m) != (self.sys.n, self.sys.m):
            raise DimensionError(f"El ruido ({self.noise.n}, {self.noise.m}) no coincide con la planta "
                                 f"(n={self.sys.n}, m={self.sys.m})")
        if self.x0_mode not in X0_MODES:
            raise InvalidSpecError(f"x0_mode desconocido: {self.x0_mode}")
        if self.x0_mode == 'fixed':
            if self.x0 is None:
                raise InvalidSpecError("x0_mode 'fixed' requiere x0")
            self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
            if self.x0.shape != (self.sys.n,):
                raise DimensionError(f"x0 debe tener longitud {self.sys.n}")

    @cached_property
    def sampler(self) -> JointNoiseSampler:
        return JointNoiseSampler(self.noise)

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        if self.x0_mode == 'fixed':
            return self.x0.copy()
        if self.x0_mode == 'sampled':
            return rng.multivariate_normal(np.zeros(self.sys.n), self.noise.Pi0, method='eigh')
        return np.zeros(self.sys.n)


@dataclass(frozen=True, eq=False)
class ControllerConfig:
    """
    Mode-0 observer-based controller with Youla parameter Q.

    ``Q`` is stored already made strictly proper (see ``causal_q``).
    """

    plant: StateSpaceSystem
    F0: np.ndarray
    L0: np.ndarray
    Q: StateSpaceSystem
    factors: CoprimeFactorSet

    @classmethod
    def build(cls, plant: StateSpaceSystem, F0, L0, Q: Optional[StateSpaceSystem] = None) -> 'ControllerConfig':
        """
        Raises:
            StabilityError: If A + B F0 or A - L0 C is not Schur, or Q is unstable.
        """
        F0 = np.atleast_2d(np.asarray(F0, dtype=float))
        L0 = np.atleast_2d(np.asarray(L0, dtype=float))
        check_pair(plant, F0, L0)
        return cls(plant=plant, F0=F0, L0=L0, Q=causal_q(Q, plant.m, plant.p),
                   factors=coprime_factors(plant, F0, L0))


@dataclass(eq=False)
class LoopState:
    """Plant state plus every controller state of one simulation."""

    x: np.ndarray
    x_hat: np.ndarray
    x_v: np.ndarray
    xi_q: np.ndarray
    xi_qv: np.ndarray
    r0: np.ndarray
    k: int = 0
    u: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, plant: PlantSpec, cfg: ControllerConfig, rng: np.random.Generator,
                x_hat0=None) -> 'LoopState':
        n, m, nq = plant.sys.n, plant.sys.m, cfg.Q.n
        x_hat = np.zeros(n) if x_hat0 is None else np.asarray(x_hat0, dtype=float).reshape(-1)
        if x_hat.shape != (n,):
            raise DimensionError(f"x_hat0 debe tener longitud {n}")
        return cls(x=plant.initial_state(rng), x_hat=x_hat.copy(), x_v=np.zeros(n),
                   xi_q=np.zeros(nq), xi_qv=np.zeros(nq), r0=np.zeros(m))

    @classmethod
    def controller_only(cls, cfg: 'ControllerConfig') -> 'LoopState':
        """Controller states for a monitor that never sees the plant (x is empty)."""
        n, m, nq = cfg.plant.n, cfg.plant.m, cfg.Q.n
        return cls(x=np.zeros(0), x_hat=np.zeros(n), x_v=np.zeros(n),
                   xi_q=np.zeros(nq), xi_qv=np.zeros(nq), r0=np.zeros(m))

    @classmethod
    def plant_only(cls, plant: PlantSpec, rng: np.random.Generator) -> 'LoopState':
        """Physical state for a plant node that hosts no controller."""
        empty = np.zeros(0)
        return cls(x=plant.initial_state(rng), x_hat=empty, x_v=empty,
                   xi_q=empty, xi_qv=empty, r0=empty)


def plant_step(spec: PlantSpec, state: LoopState, u_applied, rng: np.random.Generator) -> np.ndarray:
    """
    Advance the physical plant one sample.

    y = C x + D u + v is read from the pre-update state, then
    x <- A x + B u + w, with (w, v) drawn jointly.

    Returns:
        np.ndarray: The measured output y(k).
    """
    model = spec.sys
    u = model._check_input(u_applied)
    w, v = spec.sampler.draw(rng)
    y = model.C @ state.x + model.D @ u + v
    state.x = model.A @ state.x + model.B @ u + w
    return y


class ObserverController:
    """
    Observer-based realization of the Youla controller for mode 0.

    ``command(v)`` issues u(k) = F0 x^(k) - Q(r0)(k) + vbar(k) before the
    measurement arrives, with vbar = v - F0 x_v - Q(C x_v + D v).
    ``observe(y)`` closes the step: r0 = y - C x^ - D u and every state moves
    forward. Q is strictly proper, so u(k) never depends on y(k).
    """

    def __init__(self, cfg: ControllerConfig, state: Optional[LoopState] = None):
        self.cfg = cfg
        self.state = state if state is not None else LoopState.controller_only(cfg)
        plant = cfg.plant
        self.A, self.B, self.C, self.D = plant.A, plant.B, plant.C, plant.D

    def command(self, v) -> np.ndarray:
        s, Q = self.state, self.cfg.Q
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.shape != (self.B.shape[1],):
            raise DimensionError(f"v debe tener dimensión {self.B.shape[1]}")
        vbar = v - self.cfg.F0 @ s.x_v - Q.C @ s.xi_qv
        s.u = self.cfg.F0 @ s.x_hat - Q.C @ s.xi_q + vbar
        s.v = v
        return s.u.copy()

    def observe(self, y) -> np.ndarray:
        s, Q, L0 = self.state, self.cfg.Q, self.cfg.L0
        if s.u is None:
            raise InvalidSpecError("observe() sin un command() previo en este paso")
        y = np.asarray(y, dtype=float).reshape(-1)
        v = s.v
        r0 = y - self.C @ s.x_hat - self.D @ s.u
        yv = self.C @ s.x_v + self.D @ v

        s.x_hat = self.A @ s.x_hat + self.B @ s.u + L0 @ r0
        s.xi_q = Q.A @ s.xi_q + Q.B @ r0
        s.x_v = self.A @ s.x_v + self.B @ v - L0 @ yv
        s.xi_qv = Q.A @ s.xi_qv + Q.B @ yv
        s.r0 = r0
        s.k += 1
        s.u, s.v = None, None
        return r0

    def vbar(self, v) -> np.ndarray:
        """The feed-forward term of the next command, without side effects."""
        s = self.state
        v = np.asarray(v, dtype=float).reshape(-1)
        return v - self.cfg.F0 @ s.x_v - self.cfg.Q.C @ s.xi_qv


def controller_step(cfg: ControllerConfig, loop_state: LoopState, y_received, v) -> np.ndarray:
    """
    One controller cycle: close the command in flight with y(k), then issue
    the command for k + 1 with reference v.

    On the first call, when nothing is in flight, only the command is issued.
    """
    ctrl = ObserverController(cfg, loop_state)
    if loop_state.u is not None:
        ctrl.observe(y_received)
    return ctrl.command(v)


@dataclass(eq=False)
class LoopTrace:
    """Per-step record of a closed-loop run (one row per sample)."""

    x: np.ndarray
    u: np.ndarray
    u_applied: np.ndarray
    y: np.ndarray
    y_received: np.ndarray
    r0: np.ndarray
    v: np.ndarray

    @property
    def horizon(self) -> int:
        return self.u.shape[0]


def run_loop(plant: PlantSpec, cfg: ControllerConfig, V, rng: np.random.Generator,
             a_u=None, a_y=None, x_hat0=None,
             state_offsets: Optional[Dict[int, np.ndarray]] = None) -> LoopTrace:
    """
    Baseline closed loop with additive attacks on the actuator and sensor links.

    Args:
        plant (PlantSpec): Plant and noise.
        cfg (ControllerConfig): Mode-0 controller.
        V (array_like): Reference inputs v(k), one row per sample (K x p).
        rng (np.random.Generator): Noise source.
        a_u (array_like, optional): Actuator-link injections (K x p).
        a_y (array_like, optional): Sensor-link injections (K x m).
        x_hat0 (array_like, optional): Initial observer state.
        state_offsets (dict, optional): Physical state disturbances {k: dx}
            added to x before step k.

    Returns:
        LoopTrace: Trajectories of the run.
    """
    model = plant.sys
    V = np.asarray(V, dtype=float).reshape(-1, model.p)
    K = V.shape[0]
    a_u = np.zeros((K, model.p)) if a_u is None else np.asarray(a_u, dtype=float).reshape(K, model.p)
    a_y = np.zeros((K, model.m)) if a_y is None else np.asarray(a_y, dtype=float).reshape(K, model.m)
    state_offsets = state_offsets or {}

    state = LoopState.initial(plant, cfg, rng, x_hat0)
    ctrl = ObserverController(cfg, state)
    trace = LoopTrace(x=np.empty((K, model.n)), u=np.empty((K, model.p)), u_applied=np.empty((K, model.p)),
                      y=np.empty((K, model.m)), y_received=np.empty((K, model.m)),
                      r0=np.empty((K, model.m)), v=V.copy())
    for k in range(K):
        if k in state_offsets:
            state.x = state.x + np.asarray(state_offsets[k], dtype=float)
        trace.x[k] = state.x
        trace.u[k] = ctrl.command(V[k])
        trace.u_applied[k] = trace.u[k] + a_u[k]
        trace.y[k] = plant_step(plant, state, trace.u_applied[k], rng)
        trace.y_received[k] = trace.y[k] + a_y[k]
        trace.r0[k] = ctrl.observe(trace.y_received[k])
    return trace


@dataclass(frozen=True, eq=False)
class AuxResiduals:
    r_u: np.ndarray
    r_uc: np.ndarray
    r_yc: np.ndarray


def aux_residuals(cfg: ControllerConfig, u, y, v) -> AuxResiduals:
    """
    Controller-kernel and closed-loop residuals from recorded streams.

    r_u runs its own observer on (u - v, y):
        x_u+ = A_L x_u + B_L (u - v) + L0 y
        r_u  = (u - v - F0 x_u) + Q(y - C x_u - D (u - v))
    and vanishes whenever (u, y) obey the controller. The closed-loop pair
    rebuilds vbar from v and compares (u, y) with (M vbar, N vbar):
        x_c+ = A_F x_c + B vbar
        r_uc = u - F0 x_c - vbar,  r_yc = y - (C + D F0) x_c - D vbar

    Args:
        cfg (ControllerConfig): Controller the streams were produced with.
        u, y, v (array_like): Synchronized streams, one row per sample.

    Returns:
        AuxResiduals: r_u (K x p), r_uc (K x p), r_yc (K x m).
    """
    plant = cfg.plant
    A, B, C, D = plant.A, plant.B, plant.C, plant.D
    F0, L0, Q = cfg.F0, cfg.L0, cfg.Q
    n, m, p = plant.n, plant.m, plant.p
    u = np.asarray(u, dtype=float).reshape(-1, p)
    y = np.asarray(y, dtype=float).reshape(-1, m)
    v = np.asarray(v, dtype=float).reshape(-1, p)
    if not u.shape[0] == y.shape[0] == v.shape[0]:
        raise DimensionError("Los flujos u, y, v deben tener la misma longitud")

    A_L, B_L, A_F = A - L0 @ C, B - L0 @ D, A + B @ F0
    K = u.shape[0]
    r_u, r_uc, r_yc = np.empty((K, p)), np.empty((K, p)), np.empty((K, m))
    x_u, xi_u = np.zeros(n), np.zeros(Q.n)
    x_v, xi_v, x_c = np.zeros(n), np.zeros(Q.n), np.zeros(n)
    for k in range(K):
        du = u[k] - v[k]
        e = y[k] - C @ x_u - D @ du
        r_u[k] = du - F0 @ x_u + Q.C @ xi_u
        x_u = A_L @ x_u + B_L @ du + L0 @ y[k]
        xi_u = Q.A @ xi_u + Q.B @ e

        yv = C @ x_v + D @ v[k]
        vbar = v[k] - F0 @ x_v - Q.C @ xi_v
        r_uc[k] = u[k] - F0 @ x_c - vbar
        r_yc[k] = y[k] - (C + D @ F0) @ x_c - D @ vbar
        x_v = A_L @ x_v + B_L @ v[k]
        xi_v = Q.A @ xi_v + Q.B @ yv
        x_c = A_F @ x_c + B @ vbar
    return AuxResiduals(r_u=r_u, r_uc=r_uc, r_yc=r_yc)


def closed_loop_system(plant: StateSpaceSystem, cfg: ControllerConfig) -> StateSpaceSystem:
    """
    Noise-free map v -> [y; u] of the observer realization.

    State order is [x, x^, xi_Q, x_v, xi_Qv]; the result is block triangular,
    so its poles are those of A + B F0, A - L0 C, Q and A - L0 C again.
    """
    A, B, C, D = plant.A, plant.B, plant.C, plant.D
    F0, L0, Q = cfg.F0, cfg.L0, cfg.Q
    n, m, p, nq = plant.n, plant.m, plant.p, Q.n
    Z = np.zeros
    A_L, B_L = A - L0 @ C, B - L0 @ D

    Ku = np.hstack([Z((p, n)), F0, -Q.C, -F0, -Q.C])
    top = np.block([
        [A, Z((n, n)), Z((n, nq)), Z((n, n)), Z((n, nq))],
        [L0 @ C, A_L, Z((n, nq)), Z((n, n)), Z((n, nq))],
        [Q.B @ C, -Q.B @ C, Q.A, Z((nq, n)), Z((nq, nq))],
        [Z((n, n)), Z((n, n)), Z((n, nq)), A_L, Z((n, nq))],
        [Z((nq, n)), Z((nq, n)), Z((nq, nq)), Q.B @ C, Q.A],
    ])
    inject = np.vstack([B, B, Z((nq, p)), Z((n, p)), Z((nq, p))])
    Acl = top + inject @ Ku
    Bcl = np.vstack([B, B, Z((nq, p)), B_L, Q.B @ D])
    Cx = np.hstack([C, Z((m, 2 * n + 2 * nq))])
    Ccl = np.vstack([Cx + D @ Ku, Ku])
    Dcl = np.vstack([D, np.eye(p)])
    return StateSpaceSystem(Acl, Bcl, Ccl, Dcl)


def youla_controller(factors: CoprimeFactorSet, Q: StateSpaceSystem, z: complex) -> np.ndarray:
    """K(z) = -(X - Q N^)^-1 (Y + Q M^), so that u = K y + v."""
    X, Y = freq_response(factors.X, z), freq_response(factors.Y, z)
    Nh, Mh = freq_response(factors.Nhat, z), freq_response(factors.Mhat, z)
    Qz = freq_response(Q, z)
    return -np.linalg.solve(X - Qz @ Nh, Y + Qz @ Mh)
