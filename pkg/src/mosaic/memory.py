"""Long-memory analysis of embedding trajectories.

Periodogram at Fourier frequencies, log-periodogram regression estimate of
the memory parameter d, an augmented Dickey-Fuller style unit-root test for
stationarity, a fractionally-integrated-noise simulator used as calibration
oracle, and the per-user classification that drives the training filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import fftconvolve

from .errors import DegeneratePeriodogram, FrequencyOutOfRange, TooShort

ADF_CRITICAL_5PCT = -2.86  # constant-only regression, asymptotic 5% point

VERDICT_NON_STATIONARY = "NonStationary"
VERDICT_SHORT_MEMORY = "StationaryShortMemory"
VERDICT_LRD = "StationaryLRD"
VERDICT_TOO_SHORT = "TooShort"


@dataclass
class MemoryEstimate:
    d_hat: float
    m: int  # number of Fourier frequencies used
    std_error: float  # pi / sqrt(24 m)


@dataclass
class ComponentResult:
    stationary: bool
    estimate: Optional[MemoryEstimate] = None
    degenerate: bool = False


@dataclass
class MemoryReport:
    user: int
    components: list  # ComponentResult per embedding dimension
    verdict: str

    def to_record(self) -> dict:
        return {
            "user": int(self.user),
            "verdict": self.verdict,
            "components": [
                {
                    "stationary": bool(c.stationary),
                    "d_hat": None if c.estimate is None else c.estimate.d_hat,
                    "std_error": None if c.estimate is None else c.estimate.std_error,
                }
                for c in self.components
            ],
        }


@dataclass
class MemoryConfig:
    min_length: int = 32
    level: float = 0.05  # significance of the unit-root test (5% table value)
    m_rule: str = "sqrt"  # bandwidth rule: floor(sqrt(N))

    def bandwidth(self, n: int) -> int:
        if self.m_rule != "sqrt":
            raise ValueError(f"unknown bandwidth rule {self.m_rule!r}")
        return int(math.isqrt(n))


def periodogram(x: np.ndarray, ks) -> dict:
    """Periodogram I(lambda_k) = (1/N) |sum_t X_t e^{i t lambda_k}|^2.

    Evaluated directly (O(N * len(ks))) at the requested Fourier frequencies
    lambda_k = 2 pi k / N, after mean-centering the series. Valid indices are
    1 <= k <= floor((N-1)/2).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    ks = np.asarray(sorted(int(k) for k in ks), dtype=int)
    k_max = (n - 1) // 2
    if len(ks) and (ks[0] < 1 or ks[-1] > k_max):
        raise FrequencyOutOfRange(f"indices must lie in 1..{k_max} for N={n}")
    xc = x - x.mean()
    # one real FFT gives every ordinate; the phase convention (t starting at
    # 0 or 1) cancels in the modulus
    spec = np.abs(np.fft.rfft(xc)) ** 2 / n
    return {int(k): float(spec[k]) for k in ks}


def gph_estimate(x: np.ndarray, m: int) -> MemoryEstimate:
    """Log-periodogram regression estimate of the memory parameter.

        d_hat(m) = sum_k (Y_k - Ybar) log I(lambda_k) / sum_k (Y_k - Ybar)^2

    with Y_k = -2 log|1 - e^{i lambda_k}| over k = 1..m, and standard error
    pi / sqrt(24 m). The estimate is returned unclamped.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if m < 2 or m > (n - 1) // 2:
        raise TooShort(f"need 2 <= m <= floor((N-1)/2); got m={m}, N={n}")
    I = periodogram(x, range(1, m + 1))
    vals = np.array([I[k] for k in range(1, m + 1)])
    if np.any(vals <= 0.0):
        raise DegeneratePeriodogram("zero periodogram ordinate in the regression band")
    lam = 2.0 * np.pi * np.arange(1, m + 1) / n
    Y = -2.0 * np.log(np.abs(1.0 - np.exp(1j * lam)))
    Yc = Y - Y.mean()
    d_hat = float(Yc @ np.log(vals) / (Yc @ Yc))
    return MemoryEstimate(d_hat=d_hat, m=m, std_error=float(np.pi / math.sqrt(24.0 * m)))


def _adf_lag_order(n: int) -> int:
    p = int(12.0 * (n / 100.0) ** 0.25)
    return min(p, n // 4)


def stationarity_test(x: np.ndarray, level: float = 0.05) -> bool:
    """Unit-root test of the series; True means stationary.

    Fits dx_t = a + rho * x_{t-1} + sum_j phi_j dx_{t-j} + e_t with lag order
    floor(12 (N/100)^(1/4)) capped at N/4 and compares the t-statistic of rho
    to the 5% critical value. The null is non-stationarity, so rejection
    (t below the critical value) classifies the series as stationary. A
    singular design (e.g. a constant series) is stationary by convention.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 32:
        raise TooShort(f"unit-root test needs N >= 32, got {n}")
    if level != 0.05:
        raise ValueError("only the tabulated 5% level is supported")
    p = _adf_lag_order(n)
    dx = np.diff(x)
    # rows t = p+1 .. n-1 of the differenced series
    y = dx[p:]
    nobs = len(y)
    cols = [np.ones(nobs), x[p:-1]]
    for j in range(1, p + 1):
        cols.append(dx[p - j : p - j + nobs])
    X = np.column_stack(cols)
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        return True  # degenerate design: constant-like series, no unit root
    resid = y - X @ beta
    dof = nobs - X.shape[1]
    if dof <= 0:
        raise TooShort("not enough observations after lag augmentation")
    s2 = resid @ resid / dof
    xtx_inv = np.linalg.inv(X.T @ X)
    se_rho = math.sqrt(s2 * xtx_inv[1, 1])
    if se_rho == 0.0:
        return True
    t_stat = beta[1] / se_rho
    return bool(t_stat < ADF_CRITICAL_5PCT)


def simulate_arfima(n: int, d: float, sigma: float = 1.0, seed: int = 0) -> np.ndarray:
    """Fractionally integrated noise via the truncated MA(infinity) form.

    X_t = sum_{j=0}^J psi_j eps_{t-j} with psi_0 = 1 and
    psi_j = psi_{j-1} (j - 1 + d) / j, burn-in J = max(1000, n).
    """
    if not -0.5 < d < 0.5:
        raise ValueError("memory parameter must lie in (-0.5, 0.5)")
    if n < 1:
        raise ValueError("series length must be >= 1")
    J = max(1000, n)
    j = np.arange(1, J + 1)
    psi = np.concatenate([[1.0], np.cumprod((j - 1 + d) / j)])
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, sigma, size=n + J)
    full = fftconvolve(eps, psi)
    return full[J : J + n]


def classify_user(user: int, snapshots: np.ndarray, cfg: MemoryConfig = MemoryConfig()) -> MemoryReport:
    """Classify one user's embedding trajectory.

    Each of the k component series is tested marginally: the stationarity
    gate first, then the memory estimate with bandwidth floor(sqrt(N)). The
    verdict is StationaryLRD only when every component is stationary and
    every d_hat lies strictly inside (0, 1/2).
    """
    snapshots = np.atleast_2d(np.asarray(snapshots, dtype=float))
    n, k = snapshots.shape
    if n < cfg.min_length:
        return MemoryReport(user=user, components=[], verdict=VERDICT_TOO_SHORT)

    components = []
    any_nonstationary = False
    all_lrd = True
    m = max(2, cfg.bandwidth(n))
    for c in range(k):
        series = snapshots[:, c]
        try:
            stationary = stationarity_test(series, cfg.level)
        except TooShort:
            return MemoryReport(user=user, components=[], verdict=VERDICT_TOO_SHORT)
        if not stationary:
            any_nonstationary = True
            all_lrd = False
            components.append(ComponentResult(stationary=False))
            continue
        try:
            est = gph_estimate(series, m)
        except DegeneratePeriodogram:
            components.append(ComponentResult(stationary=True, degenerate=True))
            all_lrd = False
            continue
        components.append(ComponentResult(stationary=True, estimate=est))
        if not 0.0 < est.d_hat < 0.5:
            all_lrd = False

    if any_nonstationary:
        verdict = VERDICT_NON_STATIONARY
    elif all_lrd:
        verdict = VERDICT_LRD
    else:
        verdict = VERDICT_SHORT_MEMORY
    return MemoryReport(user=user, components=components, verdict=verdict)
