"""Dataset-averaged learning-curve theory.

Given a kernel spectrum ``lambda_k`` and target coefficients ``y_k``, the
mean predictor over random P-point datasets acts as a diagonal spectral
filter (the Equivalent Kernel).  At finite P the bare ridge ``kappa2`` is
replaced by a self-consistent effective ridge, and dataset-to-dataset
fluctuations of the mean predictor are captured by a single amplitude D.

Per mode, with v_k = (P/kappa_eff^2 + 1/lambda_k)^{-1}:

    learnability_k = lambda_k / (lambda_k + kappa_eff^2 / P)
    <f_k>          = learnability_k * y_k
    Cov_same-draw  = v_k + v_k^2 * (P/kappa_eff^4) * D
    Cov_cross-draw =       v_k^2 * (P/kappa_eff^4) * D

D solves a linear equation whose source is the squared *discrepancy* of
the averaged predictor, sum_k ((kappa_eff^2/P) / (lambda_k +
kappa_eff^2/P) * y_k)^2.  (The published display of this equation carries
the low-pass filter in the source; the self-consistency that defines D —
and the Monte-Carlo oracle — require the high-pass discrepancy filter
used here.)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: spectra are truncated once the remaining tail is this small vs the trace
TAIL_TRUNCATION_RTOL = 1e-12


@dataclass
class LearningCurvePrediction:
    P: int
    kappa_eff2: float
    D: float
    learnability: np.ndarray
    mean_mode: np.ndarray
    variance_per_mode: np.ndarray
    bias: float
    variance: float

    @property
    def total(self) -> float:
        return self.bias + self.variance


@dataclass
class RGFlowResult:
    kappa_rg2: float
    cutoff_index: int  # number of modes kept (indices 0..cutoff-1 survive)
    trajectory: list  # (modes remaining, ridge) pairs, tail inward
    epsilon: float
    absorbed_target: float  # sum of y_k^2 over integrated-out modes


def truncate_spectrum(lam: np.ndarray, y: np.ndarray | None = None):
    """Drop the tail once its sum is < TAIL_TRUNCATION_RTOL * trace."""
    lam = np.asarray(lam, dtype=float)
    tail = np.cumsum(lam[::-1])[::-1]
    keep = tail > TAIL_TRUNCATION_RTOL * tail[0] if lam.size else np.zeros(0, bool)
    m = int(np.sum(keep))
    if y is None:
        return lam[:m]
    return lam[:m], np.asarray(y, dtype=float)[:m]


def ek_predict(lam, y_k, P: int, kappa2: float) -> LearningCurvePrediction:
    """Equivalent-Kernel prediction at ridge ``kappa2`` (no self-consistency).

    f_k = lambda_k/(lambda_k + kappa2/P) y_k;
    V = (kappa2/P) sum_k lambda_k/(lambda_k + kappa2/P);
    B = sum_k (kappa2/P)^2/(lambda_k + kappa2/P)^2 y_k^2.
    """
    if P <= 0:
        raise ValueError("P must be positive")
    if kappa2 <= 0:
        raise ValueError(
            "EK needs a positive ridge; solve an effective or RG ridge first"
        )
    lam = np.asarray(lam, dtype=float)
    y_k = np.asarray(y_k, dtype=float)
    kp = kappa2 / P
    learn = lam / (lam + kp)
    mean_mode = learn * y_k
    v = _mode_variance(lam, P, kappa2)
    bias = float(np.sum((kp / (lam + kp)) ** 2 * y_k**2))
    variance = float(np.sum(v))
    return LearningCurvePrediction(
        P=P,
        kappa_eff2=kappa2,
        D=0.0,
        learnability=learn,
        mean_mode=mean_mode,
        variance_per_mode=v,
        bias=bias,
        variance=variance,
    )


def effective_ridge_solve(lam, P: int, kappa2: float, rtol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Self-consistent ridge: kappa_eff^2 = kappa2 + sum_k (P/kappa_eff^2 + 1/lambda_k)^{-1}.

    Damped fixed-point iteration started from the all-unlearnable upper
    bound kappa2 + sum lambda, with a bisection fallback on the bracket
    [kappa2, kappa2 + tr K] (the residual is monotone there).
    """
    lam = np.asarray(lam, dtype=float)
    lam = lam[lam > 0]
    if P <= 0:
        raise ValueError("P must be positive")
    if kappa2 < 0:
        raise ValueError("kappa2 must be non-negative")
    tr = float(lam.sum())
    if lam.size == 0 or tr == 0.0:
        return kappa2

    def rhs(k2: float) -> float:
        return kappa2 + float(np.sum(1.0 / (P / k2 + 1.0 / lam)))

    hi = kappa2 + tr
    if kappa2 == 0.0:
        # ridgeless: a positive solution exists only if enough modes stay
        # unlearnable; otherwise the fixed point collapses to 0
        k2 = hi
        for _ in range(max_iter):
            nxt = 0.5 * k2 + 0.5 * rhs(k2)
            if abs(nxt - k2) <= rtol * max(nxt, 1e-300):
                return _polish(rhs, nxt, rtol)
            k2 = nxt
            if k2 < 1e-300:
                return 0.0
        return _polish(rhs, k2, rtol)

    k2 = hi
    for _ in range(max_iter):
        nxt = 0.5 * k2 + 0.5 * rhs(k2)
        if abs(nxt - k2) <= rtol * nxt:
            return _polish(rhs, nxt, rtol)
        k2 = nxt
    # bisection fallback on g(x) = x - rhs(x), increasing in x
    lo, hi = kappa2, kappa2 + tr
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid - rhs(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _polish(rhs, k2: float, rtol: float, rounds: int = 60) -> float:
    for _ in range(rounds):
        nxt = rhs(k2)
        if abs(nxt - k2) <= 0.01 * rtol * max(nxt, 1e-300):
            return nxt
        k2 = 0.5 * (k2 + nxt)
    return k2


def _mode_variance(lam: np.ndarray, P: int, kappa_eff2: float) -> np.ndarray:
    """v_k = (P/kappa_eff^2 + 1/lambda_k)^{-1}, with v = 0 for null modes."""
    with np.errstate(divide="ignore"):
        return np.where(
            lam > 0, 1.0 / (P / kappa_eff2 + 1.0 / np.where(lam > 0, lam, 1.0)), 0.0
        )


def solve_D(lam, y_k, P: int, kappa_eff2: float) -> float:
    """Across-dataset variance amplitude of the mean predictor.

    (1 - sum_k v_k^2 P/kappa_eff^4) D = sum_k ((kappa_eff^2/P)/(lambda_k
    + kappa_eff^2/P) y_k)^2, with v_k = (P/kappa_eff^2 + 1/lambda_k)^{-1}.
    The prefactor must come out positive for a consistent spectrum/ridge
    pairing.
    """
    lam = np.asarray(lam, dtype=float)
    y_k = np.asarray(y_k, dtype=float)
    v = _mode_variance(lam, P, kappa_eff2)
    prefactor = 1.0 - float(np.sum(v**2)) * P / kappa_eff2**2
    if prefactor <= 0:
        raise ValueError(f"non-positive D prefactor {prefactor:.3e}: invalid spectrum/ridge pairing")
    kp = kappa_eff2 / P
    source = float(np.sum((kp / (lam + kp)) ** 2 * y_k**2))
    return source / prefactor


def mode_covariance(lam, P: int, kappa_eff2: float, D: float):
    """(same-seed diagonal term, cross-dataset term) per mode."""
    lam = np.asarray(lam, dtype=float)
    v = _mode_variance(lam, P, kappa_eff2)
    cross = v**2 * (P / kappa_eff2**2) * D
    return v, cross


def learning_curve(lam, y_k, P: int, kappa2: float) -> LearningCurvePrediction:
    """Full effective-ridge prediction: EK at kappa_eff^2 plus D fluctuations."""
    lam, y_k = truncate_spectrum(lam, y_k)
    kappa_eff2 = effective_ridge_solve(lam, P, kappa2)
    if kappa_eff2 <= 0:
        raise ValueError("effective ridge collapsed to 0; spectrum fully learnable at this P")
    pred = ek_predict(lam, y_k, P, kappa_eff2)
    D = solve_D(lam, y_k, P, kappa_eff2)
    v, cross = mode_covariance(lam, P, kappa_eff2, D)
    pred.D = D
    pred.variance_per_mode = v + cross
    pred.variance = float(np.sum(pred.variance_per_mode))
    return pred


def perturbative_ek_correction_deep_linear(delta_star, lam, y_k, P: int, kappa2: float, u1: float, N: float):
    """1/N multiplicative correction to the EK discrepancy of a deep linear net.

    <f - y> = delta_star * [1 + (3 u1 / 6N) sum_k y_k^2 lambda_k /
    (lambda_k + kappa2/P)^2].
    """
    if N <= 0:
        raise ValueError("N must be positive")
    lam = np.asarray(lam, dtype=float)
    y_k = np.asarray(y_k, dtype=float)
    kp = kappa2 / P
    factor = 1.0 + (3.0 * u1 / (6.0 * N)) * float(np.sum(y_k**2 * lam / (lam + kp) ** 2))
    return np.asarray(delta_star) * factor


def rg_flow(lam, y_k, P: int, kappa2: float, epsilon: float = 0.01) -> RGFlowResult:
    """Integrate out unlearnable tail modes, each adding lambda to the ridge.

    A mode at index L is unlearnable when P lambda_L / kappa_RG^2(L) <=
    epsilon, where kappa_RG^2(L) = kappa2 plus the spectrum tail from L
    down.  The cutoff is the topmost such crossing; everything below it
    is absorbed into the ridge.  (On a truncated spectrum the ratio
    re-crosses epsilon near the truncation edge because the tail sum is
    incomplete there; those artifacts are ignored.)  Target mass y_L^2 of
    absorbed modes is recorded but, the flow renormalizing only the
    identity coefficient, never fed back into the ridge.
    """
    lam = np.asarray(lam, dtype=float)
    y_k = np.asarray(y_k, dtype=float)
    if lam.size == 0:
        raise ValueError("empty spectrum")
    if not (0.0 < epsilon < 1.0):
        raise ValueError("epsilon must lie in (0, 1)")
    m = lam.size
    # ridge seen by mode idx once everything from idx down is absorbed
    tail = kappa2 + np.cumsum(lam[::-1])[::-1]
    ratio = P * lam / np.where(tail > 0, tail, np.inf)
    # cutoff = topmost learnability crossing: the first mode (scanning from
    # the largest eigenvalue) already unlearnable under the ridge built
    # from itself and everything below it; deeper re-crossings caused by
    # truncating the spectrum are ignored
    unlearnable = np.nonzero(ratio <= epsilon)[0]
    cutoff = int(unlearnable[0]) if unlearnable.size else m
    absorbed = float(np.sum(y_k[cutoff:] ** 2))
    ridge = float(kappa2 + np.sum(lam[cutoff:]))
    trajectory = [(m, float(kappa2))]
    running = float(kappa2)
    for idx in range(m - 1, cutoff - 1, -1):
        running += lam[idx]
        trajectory.append((idx, running))
    # exact identity by construction: ridge = kappa2 + tail sum
    return RGFlowResult(
        kappa_rg2=ridge,
        cutoff_index=cutoff,
        trajectory=trajectory,
        epsilon=epsilon,
        absorbed_target=absorbed,
    )


def scaling_exponent(alpha: float, regime: str) -> float:
    """Predicted learning-curve exponent for lambda_k ~ k^{-1-alpha}."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if regime == "ek":
        return alpha / (1.0 + alpha)
    if regime == "ridgeless":
        return alpha
    raise ValueError("regime must be 'ek' or 'ridgeless'")


def learnability_threshold(q: int, d_in: int, kappa_eff2: float, norm_ratio: float = 1.0) -> float:
    """Sample count where degree-q harmonic targets start being learned.

    P_* = kappa_eff^2 * d_in^q * norm_ratio.
    """
    if q < 0:
        raise ValueError("q must be non-negative")
    return kappa_eff2 * float(d_in) ** q * norm_ratio
