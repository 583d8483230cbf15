import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.linalg import block_diag

from core.exceptions import (
    ConvergenceError,
    DimensionError,
    SingularityError,
    UnsupportedSystemError,
)

logger = logging.getLogger(__name__)

RANK_TOL = 1e-8


def _as_block(value, rows: Optional[int] = None, cols: Optional[int] = None) -> np.ndarray:
    """Coerce scalars, nested lists and empty inputs into a 2-D float array."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 2:
        return arr.copy()
    if arr.size == 0:
        return np.zeros((rows or 0, cols or 0))
    return np.atleast_2d(arr)


class StateSpaceSystem:
    """
    Discrete-time LTI system x(k+1) = A x(k) + B u(k), y(k) = C x(k) + D u(k).

    The output is always computed from the pre-update state. Matrices are
    frozen after construction; only ``state`` changes while stepping.

    Args:
        A (array_like): State matrix (n x n). Empty for static systems.
        B (array_like): Input matrix (n x p).
        C (array_like): Output matrix (m x n).
        D (array_like): Feedthrough matrix (m x p).
        state (array_like, optional): Initial state, zero by default.

    Raises:
        DimensionError: If the four blocks are not mutually consistent.
    """

    def __init__(self, A, B, C, D, state=None):
        D = _as_block(D)
        m, p = D.shape
        A_raw = np.asarray(A, dtype=float)
        n = 0 if A_raw.size == 0 else np.atleast_2d(A_raw).shape[0]
        A = _as_block(A, n, n)
        B = _as_block(B, n, p)
        C = _as_block(C, m, n)

        if A.shape != (n, n):
            raise DimensionError(f"A debe ser cuadrada, se recibió {A.shape}")
        if B.shape != (n, p):
            raise DimensionError(f"B tiene forma {B.shape}, se esperaba {(n, p)}")
        if C.shape != (m, n):
            raise DimensionError(f"C tiene forma {C.shape}, se esperaba {(m, n)}")

        for block in (A, B, C, D):
            block.setflags(write=False)
        self.A, self.B, self.C, self.D = A, B, C, D
        self.state = np.zeros(n)
        if state is not None:
            self.reset(state)

    @classmethod
    def static(cls, D) -> 'StateSpaceSystem':
        D = _as_block(D)
        return cls(np.zeros((0, 0)), np.zeros((0, D.shape[1])), np.zeros((D.shape[0], 0)), D)

    @classmethod
    def identity(cls, m: int) -> 'StateSpaceSystem':
        return cls.static(np.eye(m))

    @classmethod
    def zeros(cls, m: int, p: int) -> 'StateSpaceSystem':
        return cls.static(np.zeros((m, p)))

    @classmethod
    def unit_delay(cls, m: int) -> 'StateSpaceSystem':
        """y(k) = u(k-1) on m channels."""
        return cls(np.zeros((m, m)), np.eye(m), np.eye(m), np.zeros((m, m)))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.D.shape[0]

    @property
    def p(self) -> int:
        return self.D.shape[1]

    def reset(self, state=None) -> None:
        if state is None:
            self.state = np.zeros(self.n)
            return
        state = np.asarray(state, dtype=float).reshape(-1)
        if state.shape != (self.n,):
            raise DimensionError(f"El estado debe tener longitud {self.n}, se recibió {state.shape[0]}")
        self.state = state.copy()

    def copy(self) -> 'StateSpaceSystem':
        return StateSpaceSystem(self.A, self.B, self.C, self.D, state=self.state)

    def output(self, u) -> np.ndarray:
        """Output for input u without advancing the state."""
        u = self._check_input(u)
        return self.C @ self.state + self.D @ u

    def step(self, u) -> np.ndarray:
        u = self._check_input(u)
        y = self.C @ self.state + self.D @ u
        self.state = self.A @ self.state + self.B @ u
        return y

    def _check_input(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.shape != (self.p,):
            raise DimensionError(f"La entrada debe tener dimensión {self.p}, se recibió {u.shape[0]}")
        return u

    def __repr__(self) -> str:
        return f"StateSpaceSystem(n={self.n}, m={self.m}, p={self.p})"


def step(sys: StateSpaceSystem, u) -> np.ndarray:
    """Advance ``sys`` one sample and return y(k) = C x(k) + D u(k)."""
    return sys.step(u)


def simulate(sys: StateSpaceSystem, U) -> np.ndarray:
    """
    Run ``sys`` over a whole input sequence.

    Args:
        sys (StateSpaceSystem): System to drive; its state is advanced in place.
        U (array_like): Inputs, one row per sample (K x p).

    Returns:
        np.ndarray: Outputs, one row per sample (K x m).
    """
    U = np.asarray(U, dtype=float).reshape(-1, sys.p) if sys.p else np.zeros((len(U), 0))
    Y = np.empty((U.shape[0], sys.m))
    for k in range(U.shape[0]):
        Y[k] = sys.step(U[k])
    return Y


def compose(kind: str, s1: StateSpaceSystem, s2: StateSpaceSystem) -> StateSpaceSystem:
    """
    Block realization of two systems.

    ``series`` feeds the output of s1 into s2 (response s2 * s1); ``sum`` and
    ``difference`` drive both with the same input and add or subtract the
    outputs (s1 + s2, s1 - s2). The state of the result is [x1; x2].

    Raises:
        DimensionError: If the interfaces do not match for ``kind``.
        ValueError: If ``kind`` is unknown.
    """
    if kind == 'series':
        if s1.m != s2.p:
            raise DimensionError(f"Serie incompatible: salida {s1.m} contra entrada {s2.p}")
        A = np.block([
            [s1.A, np.zeros((s1.n, s2.n))],
            [s2.B @ s1.C, s2.A],
        ])
        B = np.vstack([s1.B, s2.B @ s1.D])
        C = np.hstack([s2.D @ s1.C, s2.C])
        D = s2.D @ s1.D
    elif kind in ('sum', 'difference'):
        if (s1.m, s1.p) != (s2.m, s2.p):
            raise DimensionError(f"Dimensiones distintas: {(s1.m, s1.p)} contra {(s2.m, s2.p)}")
        sign = 1.0 if kind == 'sum' else -1.0
        A = block_diag(s1.A, s2.A)
        B = np.vstack([s1.B, s2.B])
        C = np.hstack([s1.C, sign * s2.C])
        D = s1.D + sign * s2.D
    else:
        raise ValueError(f"Tipo de composición desconocido: {kind}")
    return StateSpaceSystem(A, B, C, D, state=np.concatenate([s1.state, s2.state]))


def invert(sys: StateSpaceSystem, tol: float = RANK_TOL) -> StateSpaceSystem:
    """Feedthrough inverse (A - B D^-1 C, B D^-1, -D^-1 C, D^-1)."""
    if sys.m != sys.p:
        raise UnsupportedSystemError("Solo se invierten sistemas cuadrados")
    s = np.linalg.svd(sys.D, compute_uv=False)
    if s.size == 0 or s[-1] <= tol * max(1.0, s[0]):
        raise SingularityError("D no es invertible, no hay inversa por feedthrough")
    Di = np.linalg.inv(sys.D)
    return StateSpaceSystem(sys.A - sys.B @ Di @ sys.C, sys.B @ Di, -Di @ sys.C, Di)


def freq_response(sys: StateSpaceSystem, z: complex, tol: float = RANK_TOL) -> np.ndarray:
    """
    Evaluate C (zI - A)^-1 B + D at one point.

    Raises:
        SingularityError: If z lies within ``tol`` of an eigenvalue of A.
    """
    if sys.n == 0:
        return sys.D.astype(complex)
    eigs = np.linalg.eigvals(sys.A)
    gap = np.min(np.abs(eigs - z))
    if gap <= tol * max(1.0, abs(z)):
        raise SingularityError(f"z={z} está sobre un polo (distancia {gap:.2e})")
    zI_A = z * np.eye(sys.n) - sys.A
    return sys.C @ np.linalg.solve(zI_A, sys.B.astype(complex)) + sys.D


@dataclass(frozen=True, eq=False)
class EigenResult:
    values: np.ndarray
    max_modulus: float

    @property
    def is_schur(self) -> bool:
        return self.max_modulus < 1.0


def spectral_radius(M) -> EigenResult:
    """
    Eigenvalues of a real square matrix and their largest modulus.

    Uses LAPACK's Hessenberg reduction plus shifted QR sweeps (through
    ``numpy.linalg.eigvals``).

    Raises:
        DimensionError: If M is not square.
        ConvergenceError: If the QR iteration fails to converge.
    """
    M = _as_block(M)
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"Se esperaba una matriz cuadrada, se recibió {M.shape}")
    if M.shape[0] == 0:
        return EigenResult(values=np.zeros(0, dtype=complex), max_modulus=0.0)
    try:
        values = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as e:
        raise ConvergenceError(f"La iteración QR no convergió para una matriz {M.shape}: {e}") from e
    if not np.all(np.isfinite(values)):
        raise ConvergenceError(f"Autovalores no finitos para una matriz {M.shape}")
    return EigenResult(values=values, max_modulus=float(np.max(np.abs(values))))


def is_schur(M) -> bool:
    return spectral_radius(M).is_schur


@dataclass(frozen=True, eq=False)
class ZeroDirection:
    """Finite invariant zero z0 with its input direction g and state direction x0."""

    z0: complex
    x0: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None

    @property
    def has_direction(self) -> bool:
        return self.x0 is not None

    @property
    def is_real(self) -> bool:
        return np.imag(self.z0) == 0.0

    def residual(self, sys: StateSpaceSystem) -> float:
        """Norm of [z0 I - A, -B; C, D] [x0; g]."""
        return float(np.linalg.norm(_rosenbrock(sys, self.z0) @ np.concatenate([self.x0, self.g])))


def _rosenbrock(sys: StateSpaceSystem, z: complex) -> np.ndarray:
    n = sys.n
    return np.block([
        [z * np.eye(n) - sys.A, -sys.B],
        [sys.C, sys.D],
    ]).astype(complex)


def _shifted_zero_candidates(M1: np.ndarray, M2: np.ndarray, s: float, tol: float) -> np.ndarray:
    T = np.linalg.solve(M1 - s * M2, M2)
    mu = np.linalg.eigvals(T)
    scale = max(1.0, np.linalg.norm(T, 2))
    mu = mu[np.abs(mu) > tol * scale]
    return s + 1.0 / mu


def invariant_zeros(sys: StateSpaceSystem, tol: float = RANK_TOL, seed: int = 0,
                    max_modulus: float = 1e6) -> List[ZeroDirection]:
    """
    Finite invariant zeros of a square system with their null directions.

    The Rosenbrock pencil M1 - z M2 with M1 = [A, B; C, D], M2 = diag(I, 0)
    is shift-inverted at two random shifts; ordinary eigenvalues mu of
    (M1 - s M2)^-1 M2 map to z = s + 1/mu. Infinite eigenvalues (mu ~ 0) are
    dropped and a candidate is kept only if both shifts agree on it. Each
    direction comes from the smallest singular vector of the pencil at z0.

    Args:
        sys (StateSpaceSystem): Square system (m == p).
        tol (float): Rank and null-space tolerance.
        seed (int): Seed for the shifts.
        max_modulus (float): Candidates beyond this modulus count as infinite.

    Returns:
        List[ZeroDirection]: Zeros sorted by modulus. A zero whose null vector
        does not meet ``tol`` is returned without direction.

    Raises:
        UnsupportedSystemError: Non-square system or pencil singular for every z.
    """
    if sys.m != sys.p:
        raise UnsupportedSystemError(f"Ceros invariantes solo para sistemas cuadrados ({sys.m}x{sys.p})")
    n, m = sys.n, sys.m
    if n == 0:
        return []

    M1 = np.block([[sys.A, sys.B], [sys.C, sys.D]])
    M2 = block_diag(np.eye(n), np.zeros((m, m)))
    rng = np.random.default_rng(seed)
    eigs_A = np.linalg.eigvals(sys.A)

    # 1. Rango normal del lápiz
    z_sample = complex(rng.uniform(2.0, 3.0), rng.uniform(0.5, 1.0))
    if np.linalg.matrix_rank(_rosenbrock(sys, z_sample), tol=tol * max(1.0, np.linalg.norm(M1))) < n + m:
        raise UnsupportedSystemError("El lápiz de Rosenbrock es singular para todo z")

    # 2. Dos desplazamientos independientes
    shifts = []
    while len(shifts) < 2:
        s = float(rng.uniform(-3.0, 3.0))
        if np.min(np.abs(eigs_A - s)) < 1e-3 or np.linalg.cond(M1 - s * M2) > 1e12:
            continue
        shifts.append(s)
    first = _shifted_zero_candidates(M1, M2, shifts[0], tol)
    second = list(_shifted_zero_candidates(M1, M2, shifts[1], tol))

    # 3. Solo se aceptan candidatos que coinciden en ambos desplazamientos
    zeros: List[ZeroDirection] = []
    for z in first:
        if abs(z) > max_modulus or not second:
            continue
        gaps = [abs(z - w) for w in second]
        j = int(np.argmin(gaps))
        if gaps[j] > 1e-6 * max(1.0, abs(z)):
            continue
        second.pop(j)
        zeros.append(_zero_direction(sys, z, tol))

    zeros.sort(key=lambda zd: (abs(zd.z0), np.angle(zd.z0)))
    logger.debug("ceros invariantes: %s", [zd.z0 for zd in zeros])
    return zeros


def _zero_direction(sys: StateSpaceSystem, z: complex, tol: float) -> ZeroDirection:
    if abs(z.imag) <= tol * max(1.0, abs(z)):
        z = complex(z.real, 0.0)
    _, s, Vh = np.linalg.svd(_rosenbrock(sys, z))
    v = Vh[-1].conj()
    # fase: componente dominante real positiva
    v = v * np.exp(-1j * np.angle(v[np.argmax(np.abs(v))]))
    if z.imag == 0.0:
        v = v.real.astype(complex)
        v = v / np.linalg.norm(v)
    x0, g = v[:sys.n], v[sys.n:]
    if s[-1] > tol or np.linalg.norm(g) <= tol:
        logger.warning("cero %s sin dirección verificable (sigma_min=%.2e)", z, s[-1])
        return ZeroDirection(z0=z)
    direction = ZeroDirection(z0=z, x0=x0, g=g)
    if direction.residual(sys) > tol * (np.linalg.norm(x0) + np.linalg.norm(g)):
        return ZeroDirection(z0=z)
    return direction
