import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammainc

from core.exceptions import InvalidSpecError
from core.synthesis import NoiseSpec

logger = logging.getLogger(__name__)

Z_95 = 1.959963984540054


@dataclass(frozen=True)
class ChiSquareSpec:
    """Degrees of freedom, false-alarm bound and (reporting only) noncentrality."""

    dof: int
    alpha: float
    noncentrality: float = 0.0

    def __post_init__(self):
        if self.dof < 1:
            raise InvalidSpecError("Los grados de libertad deben ser >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidSpecError("alpha debe estar en (0, 1)")
        if self.noncentrality < 0.0:
            raise InvalidSpecError("La no centralidad debe ser >= 0")

    @property
    def threshold(self) -> float:
        return chi2_threshold(self.alpha, self.dof)

    @property
    def expected_statistic(self) -> float:
        return self.dof + self.noncentrality


def chi2_cdf(x: float, m: int) -> float:
    """P(chi2(m) <= x) through the regularized lower incomplete gamma function."""
    if x <= 0.0:
        return 0.0
    return float(gammainc(m / 2.0, x / 2.0))


@lru_cache(maxsize=256)
def chi2_threshold(alpha: float, m: int, tol: float = 1e-10) -> float:
    """
    Threshold J_th with P(chi2(m) > J_th) = alpha.

    Bisection on the CDF over [0, m + 40 sqrt(2m)], widened if needed, until
    |CDF(J_th) - (1 - alpha)| <= tol or the bracket collapses.

    Args:
        alpha (float): False-alarm rate in (0, 1).
        m (int): Degrees of freedom (>= 1).

    Returns:
        float: The (1 - alpha) quantile of chi2(m).
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidSpecError("alpha debe estar en (0, 1)")
    if m < 1:
        raise InvalidSpecError("m debe ser >= 1")
    target = 1.0 - alpha
    lo, hi = 0.0, m + 40.0 * np.sqrt(2.0 * m)
    while chi2_cdf(hi, m) < target:
        hi *= 2.0
    mid = 0.5 * (lo + hi)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        cdf = chi2_cdf(mid, m)
        if abs(cdf - target) <= tol or hi - lo <= 1e-15 * max(1.0, hi):
            break
        if cdf < target:
            lo = mid
        else:
            hi = mid
    return float(mid)


def noncentrality(mean, Sigma) -> float:
    """delta = mu' Sigma^-1 mu for a residual with mean shift mu."""
    mean = np.asarray(mean, dtype=float).reshape(-1)
    return float(mean @ np.linalg.solve(np.atleast_2d(Sigma), mean))


class JointNoiseSampler:
    """
    Draws (w, v) jointly Gaussian with covariance [[Sigma_w, S], [S', Sigma_v]].

    Coordinates with zero variance are exactly zero in every draw; the rest
    use a Cholesky factor with a diagonal jitter fallback.

    Raises:
        InvalidSpecError: If the joint matrix stays indefinite after jitter.
    """

    def __init__(self, noise: NoiseSpec, max_jitter_steps: int = 8):
        joint = noise.joint
        self.n, self.m = noise.n, noise.m
        self.active = np.flatnonzero(np.diag(joint) > 0.0)
        sub = joint[np.ix_(self.active, self.active)]
        self.factor = self._cholesky(sub, max_jitter_steps)

    @staticmethod
    def _cholesky(M: np.ndarray, max_jitter_steps: int) -> np.ndarray:
        if M.size == 0:
            return M
        jitter = 0.0
        scale = np.trace(M) / M.shape[0]
        for _ in range(max_jitter_steps + 1):
            try:
                return np.linalg.cholesky(M + jitter * np.eye(M.shape[0]))
            except np.linalg.LinAlgError:
                jitter = scale * 1e-12 if jitter == 0.0 else jitter * 10.0
        raise InvalidSpecError("La covarianza conjunta no es semidefinida positiva (Cholesky falló con jitter)")

    def draw(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        sample = np.zeros(self.n + self.m)
        if self.active.size:
            sample[self.active] = self.factor @ rng.standard_normal(self.active.size)
        return sample[:self.n], sample[self.n:]


def sample_joint_noise(noise: NoiseSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """One joint draw of (w, v); see JointNoiseSampler for repeated use."""
    return JointNoiseSampler(noise).draw(rng)


def binomial_ci(n_alarms: int, n_steps: int, rate: Optional[float] = None) -> Tuple[float, float]:
    """95% normal-approximation interval with a 0.5/n continuity guard."""
    if n_steps <= 0:
        return 0.0, 1.0
    p = n_alarms / n_steps if rate is None else rate
    half = Z_95 * np.sqrt(p * (1.0 - p) / n_steps) + 0.5 / n_steps
    return max(0.0, p - half), min(1.0, p + half)


@dataclass(frozen=True)
class RateReport:
    n_steps: int
    n_alarms: int
    rate: float
    ci_low: float
    ci_high: float
    detection_delay: Optional[int] = None
    onset: Optional[int] = None

    def consistent_with(self, alpha: float) -> bool:
        """Whether the observed rate lies in the 95% binomial interval around alpha."""
        lo, hi = binomial_ci(0, self.n_steps, rate=alpha)
        return lo <= self.rate <= hi

    def to_dict(self) -> dict:
        return {
            'n_steps': self.n_steps,
            'n_alarms': self.n_alarms,
            'rate': self.rate,
            'ci': [self.ci_low, self.ci_high],
            'detection_delay': self.detection_delay,
            'onset': self.onset,
        }


def empirical_rates(alarms: Sequence[bool], onset: Optional[int] = None) -> RateReport:
    """
    False-alarm rate before ``onset`` and detection delay after it.

    Without onset every step counts toward the false-alarm rate.
    """
    alarms = np.asarray(alarms, dtype=bool)
    cut = len(alarms) if onset is None else min(max(onset, 0), len(alarms))
    pre = alarms[:cut]
    n_steps, n_alarms = int(pre.size), int(pre.sum())
    rate = n_alarms / n_steps if n_steps else 0.0
    lo, hi = binomial_ci(n_alarms, n_steps)
    delay = None
    if onset is not None:
        hits = np.flatnonzero(alarms[cut:])
        delay = int(hits[0]) if hits.size else None
    return RateReport(n_steps=n_steps, n_alarms=n_alarms, rate=rate, ci_low=lo, ci_high=hi,
                      detection_delay=delay, onset=onset)


def windowed_mean_shift(J: Sequence[float], m: int, window: int, alpha: float) -> np.ndarray:
    """
    Auxiliary alarm on the length-``window`` moving average of J.

    For i.i.d. chi2(m) samples the window sum is chi2(window * m), so the
    average is compared with that quantile divided by ``window``. The first
    ``window - 1`` steps never alarm.
    """
    J = np.asarray(J, dtype=float)
    alarms = np.zeros(J.size, dtype=bool)
    if J.size < window:
        return alarms
    threshold = chi2_threshold(alpha, window * m) / window
    csum = np.cumsum(np.concatenate([[0.0], J]))
    means = (csum[window:] - csum[:-window]) / window
    alarms[window - 1:] = means > threshold
    return alarms


def autocorrelation(x, lags: Sequence[int]) -> np.ndarray:
    """Sample autocorrelation per channel; rows follow ``lags``, columns channels."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    x = x - x.mean(axis=0)
    var = (x * x).sum(axis=0)
    # Canal constante: autocorrelación nula
    scale = np.where(var > 0, var, 1.0)
    return np.array([np.where(var > 0, (x[lag:] * x[:len(x) - lag]).sum(axis=0) / scale, 0.0) for lag in lags])
