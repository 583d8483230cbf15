import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import (
    ConvergenceError,
    DetectabilityError,
    DimensionError,
    InvalidSpecError,
    SingularityError,
    StabilityError,
    StabilizabilityError,
)
from core.statespace import (
    StateSpaceSystem,
    compose,
    freq_response,
    spectral_radius,
)

logger = logging.getLogger(__name__)

RICCATI_TOL = 1e-11
RICCATI_MAX_ITERS = 100_000


def _psd(M: np.ndarray, tol: float = 1e-10) -> bool:
    if M.size == 0:
        return True
    if not np.allclose(M, M.T, atol=tol * max(1.0, np.abs(M).max())):
        return False
    return np.linalg.eigvalsh((M + M.T) / 2).min() >= -tol * max(1.0, np.abs(M).max())


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """
    Second-order statistics of process noise w, measurement noise v and x(0).

    Raises:
        InvalidSpecError: If a covariance is not symmetric PSD, Sigma_v is
            not positive definite or the joint matrix is indefinite.
    """

    Sigma_w: np.ndarray
    Sigma_v: np.ndarray
    S: np.ndarray
    Pi0: np.ndarray

    def __post_init__(self):
        for name in ('Sigma_w', 'Sigma_v', 'S', 'Pi0'):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        n, m = self.Sigma_w.shape[0], self.Sigma_v.shape[0]
        if self.S.shape != (n, m):
            raise InvalidSpecError(f"S debe tener forma {(n, m)}, se recibió {self.S.shape}")
        if self.Pi0.shape != (n, n):
            raise InvalidSpecError(f"Pi0 debe tener forma {(n, n)}, se recibió {self.Pi0.shape}")
        for name in ('Sigma_w', 'Sigma_v', 'Pi0'):
            if not _psd(getattr(self, name)):
                raise InvalidSpecError(f"{name} no es simétrica semidefinida positiva")
        if np.linalg.eigvalsh(self.Sigma_v).min() <= 0:
            raise InvalidSpecError("Sigma_v debe ser definida positiva")
        if not _psd(self.joint):
            raise InvalidSpecError("La covarianza conjunta [[Sigma_w, S], [S', Sigma_v]] no es semidefinida positiva")

    @classmethod
    def isotropic(cls, n: int, m: int, q: float, r: float) -> 'NoiseSpec':
        return cls(q * np.eye(n), r * np.eye(m), np.zeros((n, m)), np.zeros((n, n)))

    @property
    def n(self) -> int:
        return self.Sigma_w.shape[0]

    @property
    def m(self) -> int:
        return self.Sigma_v.shape[0]

    @property
    def joint(self) -> np.ndarray:
        return np.block([[self.Sigma_w, self.S], [self.S.T, self.Sigma_v]])


@dataclass(frozen=True, eq=False)
class KalmanSolution:
    P: np.ndarray
    L_K: np.ndarray
    Sigma_r: np.ndarray
    iterations: int = 0


def kalman_gain(A, C, noise: NoiseSpec, tol: float = RICCATI_TOL,
                max_iters: int = RICCATI_MAX_ITERS) -> KalmanSolution:
    """
    Steady-state (predictor form) Kalman gain by fixed-point iteration.

    Iterates P <- A P A' + Sigma_w - L_K Sigma_r L_K' from P = Pi0 with
    Sigma_r = C P C' + Sigma_v and L_K = (A P C' + S) Sigma_r^-1 until
    ||P_next - P||_inf <= tol * max(1, ||P||_inf).

    Args:
        A (array_like): State matrix (n x n).
        C (array_like): Output matrix (m x n).
        noise (NoiseSpec): Noise statistics.

    Returns:
        KalmanSolution: P, L_K, Sigma_r and the iteration count.

    Raises:
        ConvergenceError: If the iteration does not settle in ``max_iters``.
        DetectabilityError: If A - L_K C is not Schur.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if noise.n != A.shape[0] or noise.m != C.shape[0]:
        raise DimensionError(f"NoiseSpec ({noise.n}, {noise.m}) no coincide con A {A.shape} y C {C.shape}")

    P = noise.Pi0.copy()
    residual = np.inf
    for it in range(1, max_iters + 1):
        Sigma_r = C @ P @ C.T + noise.Sigma_v
        L_K = np.linalg.solve(Sigma_r.T, (A @ P @ C.T + noise.S).T).T
        P_next = A @ P @ A.T + noise.Sigma_w - L_K @ Sigma_r @ L_K.T
        P_next = (P_next + P_next.T) / 2
        residual = np.abs(P_next - P).max()
        P = P_next
        if residual <= tol * max(1.0, np.abs(P).max()):
            break
    else:
        raise ConvergenceError(
            f"La iteración de Riccati (Kalman) no convergió en {max_iters} pasos, residuo {residual:.3e}",
            iterations=max_iters, residual=residual)

    Sigma_r = C @ P @ C.T + noise.Sigma_v
    L_K = np.linalg.solve(Sigma_r.T, (A @ P @ C.T + noise.S).T).T
    rho = spectral_radius(A - L_K @ C).max_modulus
    if rho >= 1.0:
        raise DetectabilityError(f"A - L_K C no es Schur (radio espectral {rho:.4f}); (A, C) no detectable")
    logger.info("Kalman: %d iteraciones, residuo %.2e, rho(A-LC)=%.4f", it, residual, rho)
    return KalmanSolution(P=P, L_K=L_K, Sigma_r=(Sigma_r + Sigma_r.T) / 2, iterations=it)


def feedback_gain(A, B, Qw, Rw, tol: float = RICCATI_TOL,
                  max_iters: int = RICCATI_MAX_ITERS) -> np.ndarray:
    """
    LQR state feedback u = F x with F = -(Rw + B'PB)^-1 B'PA.

    P is the fixed point of P <- Qw + A'PA - A'PB (Rw + B'PB)^-1 B'PA,
    iterated from P = Qw.

    Returns:
        np.ndarray: F (p x n) with A + BF Schur.

    Raises:
        StabilizabilityError: If the iteration diverges or A + BF is not Schur.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Qw = np.atleast_2d(np.asarray(Qw, dtype=float))
    Rw = np.atleast_2d(np.asarray(Rw, dtype=float))
    if np.linalg.eigvalsh((Rw + Rw.T) / 2).min() <= 0:
        raise InvalidSpecError("Rw debe ser definida positiva")

    P = Qw.copy()
    residual = np.inf
    for it in range(1, max_iters + 1):
        G = Rw + B.T @ P @ B
        K = np.linalg.solve(G, B.T @ P @ A)
        P_next = Qw + A.T @ P @ A - A.T @ P @ B @ K
        P_next = (P_next + P_next.T) / 2
        residual = np.abs(P_next - P).max()
        P = P_next
        if not np.all(np.isfinite(P)):
            break
        if residual <= tol * max(1.0, np.abs(P).max()):
            break
    else:
        raise StabilizabilityError(
            f"La iteración de Riccati (LQR) no convergió en {max_iters} pasos, residuo {residual:.3e}")
    if not np.all(np.isfinite(P)):
        raise StabilizabilityError("La iteración de Riccati (LQR) divergió; (A, B) no estabilizable")

    F = -np.linalg.solve(Rw + B.T @ P @ B, B.T @ P @ A)
    rho = spectral_radius(A + B @ F).max_modulus
    if rho >= 1.0:
        raise StabilizabilityError(f"A + B F no es Schur (radio espectral {rho:.4f})")
    logger.debug("LQR: %d iteraciones, rho(A+BF)=%.4f", it, rho)
    return F


def observer_gain(A, C, Qw, Rw, **kwargs) -> np.ndarray:
    """Observer gain L with A - LC Schur, from the dual LQR problem."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    try:
        F_dual = feedback_gain(A.T, C.T, Qw, Rw, **kwargs)
    except StabilizabilityError as e:
        raise DetectabilityError(f"No se encontró ganancia de observador: {e}") from e
    return -F_dual.T


@dataclass(frozen=True, eq=False)
class GainBank:
    """
    Stabilizing gain pairs (F_i, L_i), i = 0..kappa, and the seeded switching law.

    ``schedule[k]`` is the active mode at step k; mode 0 is the controller's
    own pair. Consecutive switch instants are at least ``dwell_min`` apart.
    """

    F: Tuple[np.ndarray, ...]
    L: Tuple[np.ndarray, ...]
    seed: int
    dwell_min: int
    schedule: np.ndarray = field(repr=False)

    @property
    def kappa(self) -> int:
        return len(self.F) - 1

    @property
    def horizon(self) -> int:
        return len(self.schedule)

    def mode_at(self, k: int) -> int:
        return int(self.schedule[k])

    def switch_instants(self) -> np.ndarray:
        return np.flatnonzero(np.diff(self.schedule)) + 1

    def settled_mask(self, guard: int) -> np.ndarray:
        """True at steps at least ``guard`` samples after the last switch."""
        mask = np.ones(self.horizon, dtype=bool)
        for k in self.switch_instants():
            mask[k:k + guard] = False
        return mask


def switching_schedule(n_modes: int, horizon: int, dwell_min: int, seed: int) -> np.ndarray:
    """
    Seeded random schedule with a hard dwell-time floor.

    Every segment lasts ``dwell_min`` plus a uniform extra of up to
    ``dwell_min`` steps; the next mode is drawn among the other modes.
    The schedule starts in mode 0.
    """
    if dwell_min < 1:
        raise InvalidSpecError("dwell_min debe ser un entero positivo")
    schedule = np.zeros(horizon, dtype=int)
    if n_modes < 2:
        return schedule
    rng = np.random.default_rng([seed, 0x5C4ED])
    k, mode = 0, 0
    while k < horizon:
        length = dwell_min + int(rng.integers(0, dwell_min + 1))
        schedule[k:k + length] = mode
        k += length
        mode = int(rng.choice([i for i in range(n_modes) if i != mode]))
    return schedule


def build_gain_bank(plant: StateSpaceSystem, kappa: int, seed: int, dwell_min: int,
                    perturbation_scale: float, F0: np.ndarray, L0: np.ndarray,
                    horizon: int, max_attempts: Optional[int] = None) -> GainBank:
    """
    Extend (F0, L0) with ``kappa`` extra stabilizing pairs and a switching law.

    New pairs come from LQR and dual-LQR solves with randomly re-weighted
    matrices Qw = M M' + 1e-3 I, M = I + scale * N(0, 1) and
    Rw = exp(scale * N(0, 1)) I, so each candidate is Schur by construction.

    Args:
        plant (StateSpaceSystem): Plant (A, B, C, D).
        kappa (int): Number of extra modes (>= 1).
        seed (int): 64-bit seed for weights and schedule.
        dwell_min (int): Minimum steps between switches.
        perturbation_scale (float): Spread of the random weights.
        F0 (np.ndarray): Mode-0 feedback gain.
        L0 (np.ndarray): Mode-0 observer gain.
        horizon (int): Length of the precomputed schedule.

    Returns:
        GainBank: The kappa + 1 modes and their schedule.

    Raises:
        StabilityError: If fewer than ``kappa`` Schur pairs are found.
    """
    if kappa < 1:
        raise InvalidSpecError("kappa debe ser al menos 1")
    A, B, C = plant.A, plant.B, plant.C
    n, p, m = plant.n, plant.p, plant.m
    check_pair(plant, F0, L0)

    rng = np.random.default_rng([seed, 0xBA4C])
    max_attempts = max_attempts or 50 * kappa
    F_modes, L_modes = [np.asarray(F0, dtype=float)], [np.asarray(L0, dtype=float)]
    attempts = 0
    while len(F_modes) <= kappa and attempts < max_attempts:
        attempts += 1
        try:
            F = feedback_gain(A, B, _random_weight(rng, n, perturbation_scale),
                              np.exp(perturbation_scale * rng.standard_normal()) * np.eye(p))
            L = observer_gain(A, C, _random_weight(rng, n, perturbation_scale),
                              np.exp(perturbation_scale * rng.standard_normal()) * np.eye(m))
        except StabilityError as e:
            logger.debug("candidato descartado: %s", e)
            continue
        # descartar pares casi iguales a uno existente
        if any(np.allclose(F, Fi, atol=1e-6) and np.allclose(L, Li, atol=1e-6)
               for Fi, Li in zip(F_modes, L_modes)):
            continue
        F_modes.append(F)
        L_modes.append(L)

    if len(F_modes) <= kappa:
        raise StabilityError(f"Solo se encontraron {len(F_modes) - 1} de {kappa} modos estabilizantes "
                             f"en {attempts} intentos")

    schedule = switching_schedule(kappa + 1, horizon, dwell_min, seed)
    logger.info("Banco de ganancias: %d modos, %d conmutaciones en %d pasos",
                kappa + 1, int(np.count_nonzero(np.diff(schedule))), horizon)
    return GainBank(F=tuple(F_modes), L=tuple(L_modes), seed=seed, dwell_min=dwell_min, schedule=schedule)


def _random_weight(rng: np.random.Generator, n: int, scale: float) -> np.ndarray:
    M = np.eye(n) + scale * rng.standard_normal((n, n))
    return M @ M.T + 1e-3 * np.eye(n)


def check_pair(plant: StateSpaceSystem, F, L) -> None:
    """Raise StabilityError unless A + BF and A - LC are both Schur."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if F.shape != (plant.p, plant.n) or L.shape != (plant.n, plant.m):
        raise DimensionError(f"F {F.shape} o L {L.shape} no coinciden con la planta "
                             f"(n={plant.n}, m={plant.m}, p={plant.p})")
    rho_F = spectral_radius(plant.A + plant.B @ F).max_modulus
    rho_L = spectral_radius(plant.A - L @ plant.C).max_modulus
    if rho_F >= 1.0 or rho_L >= 1.0:
        raise StabilityError(f"Ganancias no estabilizantes: rho(A+BF)={rho_F:.4f}, rho(A-LC)={rho_L:.4f}")


@dataclass(frozen=True, eq=False)
class CoprimeFactorSet:
    Mhat: StateSpaceSystem
    Nhat: StateSpaceSystem
    M: StateSpaceSystem
    N: StateSpaceSystem
    Xhat: StateSpaceSystem
    Yhat: StateSpaceSystem
    X: StateSpaceSystem
    Y: StateSpaceSystem

    def at(self, z: complex) -> Dict[str, np.ndarray]:
        """Frequency responses of the eight factors at z."""
        return {name: freq_response(getattr(self, name), z) for name in
                ('Mhat', 'Nhat', 'M', 'N', 'Xhat', 'Yhat', 'X', 'Y')}


def coprime_factors(plant: StateSpaceSystem, F, L) -> CoprimeFactorSet:
    """
    Left and right coprime factors of G_u and the Bezout partners for (F, L).

    Raises:
        StabilityError: If A + BF or A - LC is not Schur.
    """
    check_pair(plant, F, L)
    F = np.atleast_2d(np.asarray(F, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float))
    A, B, C, D = plant.A, plant.B, plant.C, plant.D
    m, p = plant.m, plant.p
    A_F = A + B @ F
    A_L = A - L @ C
    B_L = B - L @ D
    return CoprimeFactorSet(
        Mhat=StateSpaceSystem(A_L, -L, C, np.eye(m)),
        Nhat=StateSpaceSystem(A_L, B_L, C, D),
        M=StateSpaceSystem(A_F, B, F, np.eye(p)),
        N=StateSpaceSystem(A_F, B, C + D @ F, D),
        Xhat=StateSpaceSystem(A_F, L, C + D @ F, np.eye(m)),
        Yhat=StateSpaceSystem(A_F, -L, F, np.zeros((p, m))),
        X=StateSpaceSystem(A_L, -B_L, F, np.eye(p)),
        Y=StateSpaceSystem(A_L, -L, F, np.zeros((p, m))),
    )


@dataclass(frozen=True, eq=False)
class BezoutReport:
    max_error: float
    extended_max_error: float
    n_samples: int
    passed: bool


def sample_points(n_samples: int, rng: np.random.Generator, radius: float = 2.0) -> np.ndarray:
    return radius * np.exp(2j * np.pi * rng.uniform(0.0, 1.0, n_samples))


def _at_regular_point(systems: Sequence[StateSpaceSystem], rng: np.random.Generator,
                      radius: float, max_tries: int = 100) -> Tuple[complex, List[np.ndarray]]:
    # un punto que cae sobre un polo se vuelve a muestrear
    for _ in range(max_tries):
        z = sample_points(1, rng, radius)[0]
        try:
            return z, [freq_response(s, z) for s in systems]
        except SingularityError:
            continue
    raise SingularityError(f"No se encontró un punto regular tras {max_tries} intentos")


def verify_bezout(factors: CoprimeFactorSet, n_samples: int = 32, tol: float = 1e-8,
                  Q: Optional[StateSpaceSystem] = None, seed: int = 0) -> BezoutReport:
    """
    Check the double Bezout identity and its Q-extended form on |z| = 2.

    Evaluates [X, Y; -N^, M^][M, -Y^; N, X^] and
    [X - QN^, Y + QM^; -N^, M^][M, -Y^ - MQ; N, X^ - NQ] against the identity.

    Args:
        factors (CoprimeFactorSet): Factors to check.
        n_samples (int): Number of sample points.
        tol (float): Maximum allowed deviation.
        Q (StateSpaceSystem, optional): Stable Youla parameter (p outputs,
            m inputs); zero by default.

    Returns:
        BezoutReport: Worst deviations and the verdict.
    """
    p, m = factors.M.m, factors.Mhat.m
    if Q is None:
        Q = StateSpaceSystem.zeros(p, m)
    if (Q.m, Q.p) != (p, m):
        raise DimensionError(f"Q debe ser {p}x{m}, se recibió {Q.m}x{Q.p}")
    rng = np.random.default_rng(seed)
    order = (factors.X, factors.Y, factors.Nhat, factors.Mhat,
             factors.M, factors.Yhat, factors.N, factors.Xhat, Q)
    identity = np.eye(p + m)
    worst, worst_ext = 0.0, 0.0
    for _ in range(n_samples):
        _, (X, Y, Nh, Mh, M, Yh, N, Xh, Qz) = _at_regular_point(order, rng, 2.0)
        left = np.block([[X, Y], [-Nh, Mh]])
        right = np.block([[M, -Yh], [N, Xh]])
        worst = max(worst, np.abs(left @ right - identity).max())
        left_q = np.block([[X - Qz @ Nh, Y + Qz @ Mh], [-Nh, Mh]])
        right_q = np.block([[M, -Yh - M @ Qz], [N, Xh - N @ Qz]])
        worst_ext = max(worst_ext, np.abs(left_q @ right_q - identity).max())
    passed = worst <= tol and worst_ext <= tol
    logger.info("Bezout: error %.2e, extendido %.2e (%s)", worst, worst_ext, "ok" if passed else "FALLA")
    return BezoutReport(max_error=float(worst), extended_max_error=float(worst_ext),
                        n_samples=n_samples, passed=passed)


@dataclass(frozen=True, eq=False)
class Lemma1Filters:
    R12: StateSpaceSystem
    Rbar12: StateSpaceSystem
    Q21: StateSpaceSystem
    Qbar11: StateSpaceSystem
    Qbar12: StateSpaceSystem


def lemma1_filters(plant: StateSpaceSystem, F1, L1, F2, L2) -> Lemma1Filters:
    """
    Filters relating the Bezout pairs of two gain pairs.

    With these, [X1, Y1] = R12 [X2, Y2] + Qbar11 [-N^1, M^1]
                         = R12 [X2, Y2] + Qbar12 [-N^2, M^2].
    """
    check_pair(plant, F1, L1)
    check_pair(plant, F2, L2)
    A, B, C = plant.A, plant.B, plant.C
    m, p = plant.m, plant.p
    F1, F2 = np.atleast_2d(F1), np.atleast_2d(F2)
    L1, L2 = np.atleast_2d(L1), np.atleast_2d(L2)
    A_F2 = A + B @ F2
    A_L1, A_L2 = A - L1 @ C, A - L2 @ C

    R12 = StateSpaceSystem(A_F2, B, F2 - F1, np.eye(p))
    Rbar12 = StateSpaceSystem(A_F2, L2, F1 - F2, np.zeros((p, m)))
    Q21 = StateSpaceSystem(A_L2, L1 - L2, C, np.eye(m))
    Qbar11 = compose('difference',
                     StateSpaceSystem(A_L2, L2 - L1, F1, np.zeros((p, m))),
                     compose('series', Q21, Rbar12))
    Qbar12 = compose('difference',
                     StateSpaceSystem(A_L1, L2 - L1, F1, np.zeros((p, m))),
                     Rbar12)
    return Lemma1Filters(R12=R12, Rbar12=Rbar12, Q21=Q21, Qbar11=Qbar11, Qbar12=Qbar12)


@dataclass(frozen=True, eq=False)
class Lemma1Report:
    max_error: float
    n_samples: int
    passed: bool


def verify_lemma1(plant: StateSpaceSystem, F1, L1, F2, L2, n_samples: int = 64,
                  tol: float = 1e-7, seed: int = 0) -> Lemma1Report:
    """
    Check both forms of [X1, Y1] in terms of the (F2, L2) factors on |z| = 2.

    Returns:
        Lemma1Report: Worst deviation over both forms and the verdict.
    """
    f1, f2 = coprime_factors(plant, F1, L1), coprime_factors(plant, F2, L2)
    lem = lemma1_filters(plant, F1, L1, F2, L2)
    order = (f1.X, f1.Y, f2.X, f2.Y, f1.Nhat, f1.Mhat, f2.Nhat, f2.Mhat, lem.R12, lem.Qbar11, lem.Qbar12)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        _, (X1, Y1, X2, Y2, Nh1, Mh1, Nh2, Mh2, R12, Qb11, Qb12) = _at_regular_point(order, rng, 2.0)
        lhs = np.hstack([X1, Y1])
        base = R12 @ np.hstack([X2, Y2])
        worst = max(worst,
                    np.abs(lhs - base - Qb11 @ np.hstack([-Nh1, Mh1])).max(),
                    np.abs(lhs - base - Qb12 @ np.hstack([-Nh2, Mh2])).max())
    passed = worst <= tol
    logger.info("Identidad de cambio de ganancias: error %.2e (%s)", worst, "ok" if passed else "FALLA")
    return Lemma1Report(max_error=float(worst), n_samples=n_samples, passed=passed)


@dataclass(frozen=True, eq=False)
class SchemeFilters:
    """Switched-detector filters for one mode i of the gain bank."""

    P_0s: StateSpaceSystem
    P_us: StateSpaceSystem
    Q_s: StateSpaceSystem
    Qbar_s: StateSpaceSystem
    Q_K0: StateSpaceSystem
    R_0s: StateSpaceSystem
    Q_0s: StateSpaceSystem
    mode: int


def causal_q(Q: Optional[StateSpaceSystem], m: int, p: int) -> StateSpaceSystem:
    """
    Youla parameter used inside the loop: zero if None, and with a one-step
    delay in front when Q has feedthrough, so the loop stays strictly causal.
    """
    if Q is None:
        return StateSpaceSystem.zeros(p, m)
    if (Q.m, Q.p) != (p, m):
        raise DimensionError(f"Q debe ser {p}x{m}, se recibió {Q.m}x{Q.p}")
    if spectral_radius(Q.A).max_modulus >= 1.0:
        raise StabilityError("Q debe ser estable")
    if np.any(Q.D != 0.0):
        return compose('series', StateSpaceSystem.unit_delay(m), Q)
    return Q


def scheme_filters(plant: StateSpaceSystem, bank: GainBank, mode: int, L_K,
                   Q: Optional[StateSpaceSystem] = None) -> SchemeFilters:
    """
    Realize the switched-detector filters for mode ``mode``.

    With A_Ls = A - L_s C and A_F0 = A + B F0:
      P_0s = I + C (zI - A_Ls)^-1 (L0 - Ls)
      P_us = I + (F0 - Fs)(zI - A_F0)^-1 B
      Q_s = Fs (zI - A_Ls)^-1 (L0 - Ls) - (Fs - F0)(zI - A_F0)^-1 L0
      Qbar_s = Q_s - P_us Q
      Q_K0 = I + C (zI - A + L_K C)^-1 (L0 - L_K)
      R_0s = (F0 - Fs)(zI - A_F0)^-1 B
      Q_0s = (F0 - Fs)(zI - A_F0)^-1 L0

    All modes share the same block layout, so a per-mode list of these
    realizations can be stepped as one switched filter.
    """
    if not 0 <= mode <= bank.kappa:
        raise InvalidSpecError(f"Modo {mode} fuera de rango 0..{bank.kappa}")
    A, B, C = plant.A, plant.B, plant.C
    m, p = plant.m, plant.p
    L_K = np.atleast_2d(np.asarray(L_K, dtype=float))
    F0, L0 = bank.F[0], bank.L[0]
    Fs, Ls = bank.F[mode], bank.L[mode]
    A_F0 = A + B @ F0
    A_Ls = A - Ls @ C
    Q = causal_q(Q, m, p)

    P_0s = StateSpaceSystem(A_Ls, L0 - Ls, C, np.eye(m))
    P_us = StateSpaceSystem(A_F0, B, F0 - Fs, np.eye(p))
    Q_s = compose('difference',
                  StateSpaceSystem(A_Ls, L0 - Ls, Fs, np.zeros((p, m))),
                  StateSpaceSystem(A_F0, L0, Fs - F0, np.zeros((p, m))))
    Qbar_s = compose('difference', Q_s, compose('series', Q, P_us))
    Q_K0 = StateSpaceSystem(A - L_K @ C, L0 - L_K, C, np.eye(m))
    R_0s = StateSpaceSystem(A_F0, B, F0 - Fs, np.zeros((p, p)))
    Q_0s = StateSpaceSystem(A_F0, L0, F0 - Fs, np.zeros((p, m)))
    return SchemeFilters(P_0s=P_0s, P_us=P_us, Q_s=Q_s, Qbar_s=Qbar_s, Q_K0=Q_K0,
                         R_0s=R_0s, Q_0s=Q_0s, mode=mode)


def q_k0_inverse(plant: StateSpaceSystem, L0, L_K) -> StateSpaceSystem:
    """Q_K0^-1 = I + C (zI - A + L0 C)^-1 (L_K - L0)."""
    L0 = np.atleast_2d(np.asarray(L0, dtype=float))
    L_K = np.atleast_2d(np.asarray(L_K, dtype=float))
    return StateSpaceSystem(plant.A - L0 @ plant.C, L_K - L0, plant.C, np.eye(plant.m))


class SwitchedFilter:
    """
    One state vector stepped through per-mode realizations of equal structure.

    The state carries over unchanged at switch instants.

    Args:
        realizations (Sequence[StateSpaceSystem]): One system per mode, all
            with the same (n, m, p).
    """

    def __init__(self, realizations: Sequence[StateSpaceSystem]):
        shapes = {(s.n, s.m, s.p) for s in realizations}
        if len(shapes) != 1:
            raise DimensionError(f"Las realizaciones por modo difieren en forma: {sorted(shapes)}")
        self.realizations = list(realizations)
        self.state = np.zeros(self.realizations[0].n)

    @classmethod
    def from_filters(cls, filters: Sequence[SchemeFilters], name: str) -> 'SwitchedFilter':
        return cls([getattr(f, name) for f in filters])

    @property
    def n(self) -> int:
        return self.state.shape[0]

    def step(self, u, mode: int) -> np.ndarray:
        s = self.realizations[mode]
        u = np.asarray(u, dtype=float).reshape(-1)
        y = s.C @ self.state + s.D @ u
        self.state = s.A @ self.state + s.B @ u
        return y

    def reset(self) -> None:
        self.state = np.zeros(self.n)


def random_stable_system(n: int, m: int, p: int, rng: np.random.Generator,
                         radius: float = 0.9, strictly_proper: bool = False) -> StateSpaceSystem:
    """Random real system with spectral radius ``radius`` (for property tests)."""
    A = rng.standard_normal((n, n))
    if n:
        A *= radius / max(spectral_radius(A).max_modulus, 1e-12)
    D = np.zeros((m, p)) if strictly_proper else rng.standard_normal((m, p))
    return StateSpaceSystem(A, rng.standard_normal((n, p)), rng.standard_normal((m, n)), D)
