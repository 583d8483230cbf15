import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np

from core.exceptions import DesyncError, InvalidSpecError, SingularityError
from core.loopsim import ControllerConfig
from core.statespace import RANK_TOL, StateSpaceSystem, invert, is_schur, simulate
from core.synthesis import GainBank, SchemeFilters, SwitchedFilter, q_k0_inverse, scheme_filters
from detection.detect_a import ResidualFrame, evaluate as evaluate_statistic

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PlantNodeOutput:
    u_applied: np.ndarray
    r_0p: np.ndarray
    beta: np.ndarray


class PlantNodeB:
    """
    Plant-side local controller of the encrypted loop.

    u = F0 x^ + gamma, r_0p = y - C x^ - D u, beta = (F0 - F_s) x^ and
    x^ <- A x^ + B u + L0 r_0p. Only gamma comes in; r_0p and beta go out.
    """

    def __init__(self, plant: StateSpaceSystem, bank: GainBank):
        self.plant = plant
        self.bank = bank
        self.x_hat = np.zeros(plant.n)
        self.mode = 0
        self.k = 0
        self._u: Optional[np.ndarray] = None

    def actuate(self, gamma_received) -> np.ndarray:
        gamma = np.asarray(gamma_received, dtype=float).reshape(-1)
        self._u = self.bank.F[0] @ self.x_hat + gamma
        return self._u.copy()

    def measure(self, y) -> Tuple[np.ndarray, np.ndarray]:
        if self._u is None:
            raise InvalidSpecError("measure() sin un actuate() previo en este paso")
        if self.k >= self.bank.horizon:
            raise InvalidSpecError(f"El calendario de conmutación termina en k={self.bank.horizon}")
        p = self.plant
        F0, L0 = self.bank.F[0], self.bank.L[0]
        self.mode = self.bank.mode_at(self.k)
        y = np.asarray(y, dtype=float).reshape(-1)

        r_0p = y - p.C @ self.x_hat - p.D @ self._u
        beta = (F0 - self.bank.F[self.mode]) @ self.x_hat
        self.x_hat = p.A @ self.x_hat + p.B @ self._u + L0 @ r_0p
        self._u = None
        self.k += 1
        return r_0p, beta


def plant_node_step(node: PlantNodeB, bank: GainBank, gamma_received,
                    y: Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]) -> PlantNodeOutput:
    """
    One plant-node step.

    Args:
        node (PlantNodeB): Node advanced in place.
        bank (GainBank): Must be the node's bank.
        gamma_received (array_like): Encoded command as delivered.
        y: Measured output, or a callable that applies u to the plant and
            returns y (needed when D != 0).

    Returns:
        PlantNodeOutput: u_applied, r_0p and beta for this step.
    """
    if bank is not node.bank:
        raise DesyncError("El nodo de planta usa otro banco de ganancias")
    u = node.actuate(gamma_received)
    y_k = y(u) if callable(y) else y
    r_0p, beta = node.measure(y_k)
    return PlantNodeOutput(u_applied=u, r_0p=r_0p, beta=beta)


@dataclass(frozen=True, eq=False)
class MonitorNodeOutput:
    gamma: np.ndarray
    r_beta: Optional[np.ndarray] = None
    y_reconstructed: Optional[np.ndarray] = None


class MonitorNodeB:
    """
    Monitor side of the encrypted loop.

    ``command(v)`` issues gamma = v - F0 x_v - Q(C x_v + D v - r_0p).
    ``observe(r_0p, beta)`` closes the step:
        r_beta = beta^a - (F0 - F_s) x_beta,  x_beta+ = A_F0 x_beta + B gamma
    and rebuilds y = (C + D F0) x_rec + D gamma + r_0p with
    x_rec+ = A_F0 x_rec + B gamma + L0 r_0p. The rebuilt y is for reports only.
    """

    def __init__(self, cfg: ControllerConfig, bank: GainBank, L_K):
        plant = cfg.plant
        self.cfg = cfg
        self.bank = bank
        n, m = plant.n, plant.m
        self.x_v = np.zeros(n)
        self.xi_q = np.zeros(cfg.Q.n)
        self.x_beta = np.zeros(n)
        self.x_rec = np.zeros(n)
        self.filters = [scheme_filters(plant, bank, i, L_K, Q=cfg.Q) for i in range(bank.kappa + 1)]
        self.Q_0 = SwitchedFilter.from_filters(self.filters, 'Q_0s')
        self.Q_K0 = self.filters[0].Q_K0.copy()
        self.mode = 0
        self.k = 0
        self.eval_k = 0
        self._gamma: Optional[np.ndarray] = None
        self._v: Optional[np.ndarray] = None

    def filters_at(self, k: int) -> SchemeFilters:
        if k >= self.bank.horizon:
            raise DesyncError(f"El calendario del monitor termina en k={self.bank.horizon}")
        return self.filters[self.bank.mode_at(k)]

    def command(self, v) -> np.ndarray:
        cfg = self.cfg
        self._v = np.asarray(v, dtype=float).reshape(-1)
        self._gamma = self._v - cfg.F0 @ self.x_v - cfg.Q.C @ self.xi_q
        return self._gamma.copy()

    def observe(self, r_0p_received, beta_received) -> MonitorNodeOutput:
        if self._gamma is None:
            raise InvalidSpecError("observe() sin un command() previo en este paso")
        plant, cfg = self.cfg.plant, self.cfg
        A, B, C, D = plant.A, plant.B, plant.C, plant.D
        F0, L0, Q = cfg.F0, cfg.L0, cfg.Q
        self.mode = self.bank.mode_at(self.k)
        r_0p = np.asarray(r_0p_received, dtype=float).reshape(-1)
        beta = np.asarray(beta_received, dtype=float).reshape(-1)
        gamma, v = self._gamma, self._v
        A_F0 = A + B @ F0

        r_beta = beta - (F0 - self.bank.F[self.mode]) @ self.x_beta
        y_rec = (C + D @ F0) @ self.x_rec + D @ gamma + r_0p

        yv = C @ self.x_v + D @ v
        self.xi_q = Q.A @ self.xi_q + Q.B @ (yv - r_0p)
        self.x_v = (A - L0 @ C) @ self.x_v + (B - L0 @ D) @ v
        self.x_beta = A_F0 @ self.x_beta + B @ gamma
        self.x_rec = A_F0 @ self.x_rec + B @ gamma + L0 @ r_0p
        self._gamma, self._v = None, None
        self.k += 1
        return MonitorNodeOutput(gamma=gamma, r_beta=r_beta, y_reconstructed=y_rec)


def monitor_node_step(node: MonitorNodeB, filters: SchemeFilters, r_0p_received, beta_received,
                      v) -> MonitorNodeOutput:
    """
    Close step k with the received (r_0p, beta) and issue gamma for k + 1.

    On the first call nothing is in flight and only gamma is returned.

    Raises:
        DesyncError: If ``filters`` is not the mode the schedule sets at k.
    """
    closed = None
    if node._gamma is not None:
        expected = node.bank.mode_at(node.k) if node.k < node.bank.horizon else None
        if filters.mode != expected:
            raise DesyncError(f"Modo {filters.mode} recibido en k={node.k}, el calendario indica {expected}")
        closed = node.observe(r_0p_received, beta_received)
    gamma = node.command(v)
    if closed is None:
        return MonitorNodeOutput(gamma=gamma)
    return MonitorNodeOutput(gamma=gamma, r_beta=closed.r_beta, y_reconstructed=closed.y_reconstructed)


def evaluate(node: MonitorNodeB, filters: SchemeFilters, r_beta, r_0p_received, Sigma_r,
             lam: float, alpha: float) -> ResidualFrame:
    """
    r_u = r_beta - Q_0s(r_0^a), r_0K = Q_K0(r_0^a), then the same statistic
    as the switched residual scheme.

    Raises:
        DesyncError: If ``filters`` is not the mode the schedule sets at this step.
    """
    k = node.eval_k
    expected = node.bank.mode_at(k) if k < node.bank.horizon else None
    if filters.mode != expected:
        raise DesyncError(f"Modo {filters.mode} evaluado en k={k}, el calendario indica {expected}")
    r_0p = np.asarray(r_0p_received, dtype=float).reshape(-1)
    r_u = np.asarray(r_beta, dtype=float).reshape(-1) - node.Q_0.step(r_0p, filters.mode)
    r_0K = node.Q_K0.step(r_0p)
    node.eval_k += 1
    return evaluate_statistic(r_u, r_0K, Sigma_r, lam, alpha, k=k)


@dataclass(frozen=True, eq=False)
class CovertReconstruction:
    """
    Estimates of a covert pair from the Kalman residual.

    ``a_u_hat`` and ``a_beta_hat`` are None when the plant cannot be inverted
    stably; their last ``delay`` rows are NaN otherwise.
    """

    a_y_hat: np.ndarray
    a_u_hat: Optional[np.ndarray] = None
    a_beta_hat: Optional[np.ndarray] = None
    feasible: bool = False
    reason: Optional[str] = None
    delay: int = 0


def _stable_inverse(N: StateSpaceSystem, w: np.ndarray, tol: float) -> Tuple[Optional[np.ndarray], int, Optional[str]]:
    """Input u with N u = w, by feedthrough or r-step delayed inversion."""
    K = w.shape[0]
    s = np.linalg.svd(N.D, compute_uv=False)
    if s[-1] > tol * max(1.0, s[0]):
        inverse = invert(N, tol)
        if not is_schur(inverse.A):
            return None, 0, "planta de fase no mínima: la inversa no es estable"
        return simulate(inverse, w), 0, None
    if s[0] > tol:
        return None, 0, "D singular pero no nula: grado relativo no uniforme"

    A, B, C = N.A, N.B, N.C
    scale = max(1.0, np.linalg.norm(C, 2) * np.linalg.norm(B, 2))
    power = np.eye(N.n)
    for r in range(1, N.n + 1):
        H = C @ power @ B
        sv = np.linalg.svd(H, compute_uv=False)
        if sv[-1] > tol * scale * max(1.0, np.linalg.norm(power, 2)):
            break
        if sv[0] > tol * scale * max(1.0, np.linalg.norm(power, 2)):
            return None, 0, f"grado relativo no uniforme (parámetro de Markov {r} singular)"
        power = power @ A
    else:
        return None, 0, "sin grado relativo finito"

    H_inv = np.linalg.inv(H)
    CA_r = C @ power @ A
    if not is_schur(A - B @ H_inv @ CA_r):
        return None, r, "planta de fase no mínima: la dinámica cero no es estable"
    u = np.full((K, N.p), np.nan)
    xi = np.zeros(N.n)
    for k in range(K - r):
        u[k] = H_inv @ (w[k + r] - CA_r @ xi)
        xi = A @ xi + B @ u[k]
    return u, r, None


def reconstruct_covert(r_0K, plant: StateSpaceSystem, bank: GainBank, L_K,
                       tol: float = RANK_TOL) -> CovertReconstruction:
    """
    Identify a covert pair (a_y, a_u) from the Kalman residual stream.

    a_y^ = Q_K0^-1(r_0K). When the plant is square and stably invertible,
    a_u^ solves N^_0 a_u^ = -M^_0 a_y^, and a_beta^ = -R_0s(a_u^) + Q_0s(a_y^)
    is the beta injection that would have hidden the pair.

    Args:
        r_0K (array_like): Residual stream (K x m).
        plant (StateSpaceSystem): Plant model.
        bank (GainBank): Gains and schedule (mode 0 is the controller).
        L_K (array_like): Kalman gain.

    Returns:
        CovertReconstruction: a_y^ always; a_u^ and a_beta^ when feasible.
    """
    F0, L0 = bank.F[0], bank.L[0]
    r_0K = np.asarray(r_0K, dtype=float).reshape(-1, plant.m)
    a_y_hat = simulate(q_k0_inverse(plant, L0, L_K), r_0K)
    if plant.m != plant.p:
        logger.info("Reconstrucción de a_u no factible: planta no cuadrada")
        return CovertReconstruction(a_y_hat=a_y_hat, reason="planta no cuadrada (m != p)")

    A_L, B_L = plant.A - L0 @ plant.C, plant.B - L0 @ plant.D
    Mhat = StateSpaceSystem(A_L, -L0, plant.C, np.eye(plant.m))
    Nhat = StateSpaceSystem(A_L, B_L, plant.C, plant.D)
    w = -simulate(Mhat, a_y_hat)
    try:
        a_u_hat, delay, reason = _stable_inverse(Nhat, w, tol)
    except SingularityError as e:
        a_u_hat, delay, reason = None, 0, str(e)
    if a_u_hat is None:
        logger.info("Reconstrucción de a_u no factible: %s", reason)
        return CovertReconstruction(a_y_hat=a_y_hat, reason=reason, delay=delay)

    K = r_0K.shape[0]
    filters = [scheme_filters(plant, bank, i, L_K) for i in range(bank.kappa + 1)]
    R_0 = SwitchedFilter.from_filters(filters, 'R_0s')
    Q_0 = SwitchedFilter.from_filters(filters, 'Q_0s')
    a_beta_hat = np.full((K, plant.p), np.nan)
    for k in range(K - delay):
        mode = bank.mode_at(k)
        a_beta_hat[k] = -R_0.step(a_u_hat[k], mode) + Q_0.step(a_y_hat[k], mode)
    return CovertReconstruction(a_y_hat=a_y_hat, a_u_hat=a_u_hat, a_beta_hat=a_beta_hat,
                                feasible=True, delay=delay)
