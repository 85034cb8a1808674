"""Renyi-DP accounting for subsampled Gaussian mechanisms.

Two subsampling schemes are supported: "uniform" (fixed-size subset
without replacement, replace-one adjacency, sum sensitivity 2L) and
"poisson" (independent inclusion, add-remove adjacency, sum sensitivity
L). For each scheme there is a cheap closed-form per-round bound, valid
under explicit side conditions, and a tighter numeric bound at integer
orders evaluated in log space. Calibration inverts the composed closed
forms: given (epsilon, delta, tau, T, L) it returns the smallest noise
std that makes T rounds (epsilon, delta)-DP, minimizing over the budget
split lambda between the RDP term and the delta conversion term.

Noise conventions: `nu` arguments to the rdp_* functions are already in
sensitivity units (noise std divided by the sum sensitivity). The
calibration functions take and return raw sum-space noise and divide by
the mechanism's sensitivity internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln, logsumexp

__all__ = [
    "Mechanism",
    "rdp_gaussian",
    "rdp_uniform_closed",
    "rdp_poisson_closed",
    "rdp_uniform_numeric",
    "rdp_poisson_numeric",
    "compose",
    "rdp_to_dp",
    "Calibration",
    "noise_lower_bound",
    "calibrate_noise",
    "BudgetResult",
    "budget_from_noise",
    "MaxRounds",
    "max_rounds",
    "delta_from_clients",
]

SCHEMES = ("uniform", "poisson")

# (closed-form coefficient, floor on nu^2 in sensitivity units)
_CLOSED = {"uniform": (3.5, 2.0 / 3.0), "poisson": (2.0, 5.0 / 9.0)}


@dataclass(frozen=True)
class Mechanism:
    """One round of private aggregation, repeated `rounds` times."""

    kind: str
    tau: float
    clip: float
    rounds: int

    def __post_init__(self) -> None:
        assert self.kind in SCHEMES, f"unknown scheme {self.kind!r}"
        assert 0.0 < self.tau <= 1.0, "sampling ratio must be in (0, 1]"
        assert self.clip > 0.0, "clipping radius must be positive"
        assert self.rounds >= 1, "need at least one round"

    @property
    def sensitivity(self) -> float:
        """l2 sensitivity of the pre-noise sum of clipped updates."""
        return 2.0 * self.clip if self.kind == "uniform" else self.clip


def rdp_gaussian(alpha: float, nu: float) -> float:
    """RDP of the full-batch Gaussian mechanism at order alpha."""
    assert alpha > 1.0 and nu > 0.0
    return alpha / (2.0 * nu * nu)


def _closed_form(alpha: float, tau: float, nu: float, kind: str) -> float | None:
    assert alpha > 1.0, "order must exceed 1"
    assert 0.0 < tau <= 1.0 and nu > 0.0
    coef, floor = _CLOSED[kind]
    sq = nu * nu
    if sq < floor:
        return None
    # The side condition needs alpha*tau*(1+nu^2) < 1 to leave any room.
    rhs = (2.0 / 3.0) * sq * math.log(1.0 / (alpha * tau * (1.0 + sq)))
    if alpha - 1.0 > rhs:
        return None
    return coef * tau * tau * alpha / sq


def rdp_uniform_closed(alpha: float, tau: float, nu: float) -> float | None:
    """Closed-form per-round RDP under fixed-size subsampling.

    Returns None when the validity conditions (nu^2 >= 2/3 and the
    alpha bound) fail; the closed form is not a sound bound there.
    """
    return _closed_form(alpha, tau, nu, "uniform")


def rdp_poisson_closed(alpha: float, tau: float, nu: float) -> float | None:
    """Closed-form per-round RDP under Poisson subsampling (floor 5/9)."""
    return _closed_form(alpha, tau, nu, "poisson")


def _log_comb(n: int, k: np.ndarray | int) -> np.ndarray | float:
    return gammaln(n + 1) - gammaln(np.asarray(k) + 1) - gammaln(n - np.asarray(k) + 1)


def _log_expm1(x: float) -> float:
    # log(e^x - 1) without overflow; for x > ~700 the -e^{-x} correction
    # underflows to zero anyway.
    assert x > 0.0
    if x > 700.0:
        return x
    return x + math.log1p(-math.exp(-x))


def rdp_uniform_numeric(alpha: int, tau: float, nu: float) -> float:
    """Order-by-order RDP bound for fixed-size subsampling, integer alpha.

    Sums alpha-1 binomial moment terms in log space; dominated by the
    closed form wherever the latter is feasible. Returns +inf if the
    exponent overflows (nu astronomically small).
    """
    assert isinstance(alpha, (int, np.integer)) and alpha >= 2, "integer order >= 2"
    assert 0.0 < tau <= 1.0 and nu > 0.0
    x = 1.0 / (nu * nu)
    try:
        log_j2 = min(math.log(4.0) + _log_expm1(x), math.log(2.0) + x)
    except OverflowError:
        return math.inf
    log_tau = math.log(tau)
    terms = [0.0, 2.0 * log_tau + float(_log_comb(alpha, 2)) + log_j2]
    for j in range(3, alpha + 1):
        terms.append(
            j * log_tau
            + float(_log_comb(alpha, j))
            + math.log(2.0)
            + 0.5 * (j - 1) * j * x
        )
    return float(logsumexp(terms)) / (alpha - 1)


def rdp_poisson_numeric(alpha: int, tau: float, nu: float) -> float:
    """Order-by-order RDP bound for Poisson subsampling, integer alpha.

    At tau = 1 every (1-tau) factor but the top term vanishes and the
    bound collapses to the full-batch Gaussian value alpha/(2 nu^2).
    """
    assert isinstance(alpha, (int, np.integer)) and alpha >= 2, "integer order >= 2"
    assert 0.0 < tau <= 1.0 and nu > 0.0
    x = 1.0 / (nu * nu)
    log_tau = math.log(tau)
    terms = []
    if tau < 1.0:
        log_keep = math.log1p(-tau)
        terms.append(math.log(alpha * tau - tau + 1.0) + (alpha - 1) * log_keep)
        for j in range(2, alpha):
            terms.append(
                float(_log_comb(alpha, j))
                + (alpha - j) * log_keep
                + j * log_tau
                + 0.5 * (j - 1) * j * x
            )
    terms.append(alpha * log_tau + 0.5 * (alpha - 1) * alpha * x)
    return float(logsumexp(terms)) / (alpha - 1)


def compose(rho: float, rounds: int) -> float:
    """RDP of `rounds` independent repetitions at a fixed order."""
    assert rounds >= 0
    return rho * rounds


def rdp_to_dp(alpha: float, rho: float, delta: float) -> float:
    """Convert (alpha, rho)-RDP to epsilon at the given delta."""
    assert alpha > 1.0 and 0.0 < delta < 1.0 and rho >= 0.0
    return rho + math.log(1.0 / delta) / (alpha - 1.0)


class Calibration(NamedTuple):
    nu: float
    lam: float
    alpha: float
    feasible: bool


def _candidate_grid(
    mech: Mechanism, epsilon: float, delta: float, lams: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-lambda noise candidates and their closed-form feasibility."""
    log_inv_delta = math.log(1.0 / delta)
    budget = log_inv_delta / (1.0 - lams)
    alphas = budget / epsilon + 1.0
    coef = 14.0 if mech.kind == "uniform" else 2.0
    nus = (mech.tau * mech.clip / epsilon) * np.sqrt(
        (coef * mech.rounds / lams) * (budget + epsilon)
    )
    scaled_sq = np.square(nus / mech.sensitivity)
    _, floor = _CLOSED[mech.kind]
    with np.errstate(divide="ignore"):
        rhs = (2.0 / 3.0) * scaled_sq * np.log(
            1.0 / (alphas * mech.tau * (1.0 + scaled_sq))
        )
    ok = (scaled_sq >= floor) & (alphas - 1.0 <= rhs)
    return nus, alphas, ok


def noise_lower_bound(
    mech: Mechanism, epsilon: float, delta: float, lam: float
) -> Calibration:
    """Smallest sound noise at one fixed budget split lambda."""
    assert epsilon > 0.0 and 0.0 < delta < 1.0 and 0.0 < lam < 1.0
    lams = np.array([lam])
    nus, alphas, ok = _candidate_grid(mech, epsilon, delta, lams)
    return Calibration(float(nus[0]), lam, float(alphas[0]), bool(ok[0]))


def calibrate_noise(
    mech: Mechanism, epsilon: float, delta: float, grid: int = 999
) -> Calibration:
    """Grid-search lambda in (0, 1) for the smallest feasible noise.

    Uses `grid` equispaced interior points; ties break toward the
    smallest lambda. Returns feasible=False (nu = nan) when no split
    satisfies the side conditions.
    """
    assert epsilon > 0.0 and 0.0 < delta < 1.0 and grid >= 1
    lams = np.arange(1, grid + 1) / (grid + 1)
    nus, alphas, ok = _candidate_grid(mech, epsilon, delta, lams)
    if not ok.any():
        return Calibration(math.nan, math.nan, math.nan, False)
    idx = int(np.argmin(np.where(ok, nus, np.inf)))
    return Calibration(float(nus[idx]), float(lams[idx]), float(alphas[idx]), True)


class BudgetResult(NamedTuple):
    epsilon: float
    feasible: bool


def budget_from_noise(
    mech: Mechanism,
    nu: float,
    delta: float,
    grid: int = 999,
    eps_lo: float = 1e-6,
    eps_hi: float = 1e4,
) -> BudgetResult:
    """Invert calibrate_noise: the epsilon whose calibrated noise is `nu`.

    The calibrated noise decreases in epsilon on the feasible band, so a
    log-grid scan brackets the target and bisection finishes the job.
    Infeasible when `nu` is below the feasibility floor or outside the
    achievable range.
    """
    assert nu > 0.0 and 0.0 < delta < 1.0

    def required(eps: float) -> float | None:
        cal = calibrate_noise(mech, eps, delta, grid)
        return cal.nu if cal.feasible else None

    scan = np.geomspace(eps_lo, eps_hi, 241)
    pts = [(e, required(float(e))) for e in scan]
    pts = [(e, r) for e, r in pts if r is not None]
    lo = hi = None
    for (e0, r0), (e1, r1) in zip(pts, pts[1:]):
        if r0 >= nu >= r1:
            lo, hi = e0, e1
            break
    if lo is None:
        return BudgetResult(math.nan, False)
    for _ in range(200):
        if hi - lo <= 1e-12 * lo:
            break
        mid = 0.5 * (lo + hi)
        r = required(mid)
        if r is None or r > nu:
            lo = mid
        else:
            hi = mid
    return BudgetResult(0.5 * (lo + hi), True)


class MaxRounds(NamedTuple):
    rounds: int
    feasible: bool


def max_rounds(
    nu1: float, tau: float, epsilon: float, delta: float, lam: float
) -> MaxRounds:
    """Largest round count that stays (epsilon, delta)-DP at fixed noise.

    `nu1` is the noise std in clip units (raw noise = nu1 * L) under
    uniform subsampling. Side conditions are checked at nu1 itself;
    when they fail the answer is (0, False) rather than an unsound T.
    """
    assert nu1 > 0.0 and 0.0 < tau <= 1.0
    assert epsilon > 0.0 and 0.0 < delta < 1.0 and 0.0 < lam < 1.0
    budget = math.log(1.0 / delta) / (1.0 - lam)
    alpha = budget / epsilon + 1.0
    sq = nu1 * nu1
    rhs = (sq / 6.0) * math.log(1.0 / (tau * alpha * (1.0 + sq / 4.0)))
    if nu1 < 8.0 / 3.0 or alpha - 1.0 > rhs:
        return MaxRounds(0, False)
    bound = lam * epsilon * epsilon * sq / (14.0 * tau * tau * (budget + epsilon))
    return MaxRounds(int(math.floor(bound)), True)


def delta_from_clients(n_clients: int) -> float:
    """Default failure probability 1 / N^1.1 for N participating clients."""
    assert n_clients >= 2
    return float(n_clients) ** -1.1
