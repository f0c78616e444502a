"""Finite-width feature-learning solvers for 2-layer networks.

Three self-consistent effects on top of the GP limit:

* kernel scaling — the whole kernel is divided by Q = 1 + C_MF/N, where
  C_MF solves a scalar consistency equation coupling back into the
  effective ridge and D of the scaled spectrum;
* kernel adaptation — the input-weight covariance becomes
  Sigma = c_perp I + (c_star - c_perp) w* w*^T, amplifying the teacher
  direction (c_perp = 1/S stays at its lazy value);
* on-data equivalence — the same scaling written directly on the train
  Gram, solved jointly for the discrepancy vector t and scalar Qbar.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import curves
from .kernels import _as_matrix

ERF_OVERLAP = 4.0 / (3.0 * np.pi)


@dataclass
class KernelScalingSolution:
    C_MF: float
    Q: float
    kappa_eff2: float
    D: float
    converged: bool
    residual: float
    learnability: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class AdaptationSolution:
    c_perp: float
    c_star: float
    lambda_star: float
    lambda_perp: float
    residual: float
    quadratic_root: float
    all_roots: tuple = ()
    norm_check_ok: bool = True

    @property
    def amplification(self) -> float:
        return self.lambda_star / self.lambda_perp


@dataclass(frozen=True)
class TransferPlan:
    scale: float
    N: float
    kappa2: float
    gamma: float
    P: float


def _scaling_rhs(lam, y_k, P, kappa2, Q, N):
    """Target side of the C_MF consistency equation at kernel lambda/Q."""
    lam_s = lam / Q
    kappa_eff2 = curves.effective_ridge_solve(lam_s, P, kappa2)
    if kappa_eff2 <= 0:
        raise ValueError("effective ridge collapsed during kernel scaling")
    D = curves.solve_D(lam_s, y_k, P, kappa_eff2)
    kp = kappa_eff2 / P
    learn = lam_s / (lam_s + kp)
    term_d = (P / kappa_eff2**2) * lam_s / (P * lam_s / kappa_eff2 + 1.0) ** 2 * D
    term_y = y_k**2 * lam_s / (lam_s + kp) ** 2
    rhs = float(np.sum(learn - term_d - term_y))
    return rhs, kappa_eff2, D, learn


def kernel_scaling_solve(
    lam,
    y_k,
    P: int,
    kappa2: float,
    N: float,
    damping: float = 0.3,
    rtol: float = 1e-8,
    max_iter: int = 2000,
) -> KernelScalingSolution:
    """Solve C_MF/(1 + C_MF/N) = sum_k [l_k - D-term_k - y-term_k] at lambda/Q.

    Outer damped iteration on C_MF; the effective ridge and D are
    re-solved on the scaled spectrum inside every step.
    """
    if N <= 0:
        raise ValueError("N must be positive")
    lam = np.asarray(lam, dtype=float)
    y_k = np.asarray(y_k, dtype=float)
    C = 0.0
    residual = np.inf
    out = (kappa2, 0.0, np.zeros_like(lam))
    for _ in range(max_iter):
        Q = 1.0 + C / N
        if Q <= 0:
            raise ValueError("kernel scaling diverged to Q <= 0")
        rhs, kappa_eff2, D, learn = _scaling_rhs(lam, y_k, P, kappa2, Q, N)
        out = (kappa_eff2, D, learn)
        if rhs >= N:
            raise ValueError("consistency target exceeds width N; no finite C_MF")
        C_new = rhs / (1.0 - rhs / N)
        residual = abs(C_new - C) / max(abs(C_new), 1.0)
        C = (1.0 - damping) * C + damping * C_new
        if residual < rtol:
            C = C_new
            break
    Q = 1.0 + C / N
    return KernelScalingSolution(
        C_MF=C,
        Q=Q,
        kappa_eff2=out[0],
        D=out[1],
        converged=residual < rtol,
        residual=residual,
        learnability=out[2],
    )


def kernel_scaling_ridgeless_q(Y: float, N: float, X: float = 0.0) -> float:
    """Closed-form Q in the ridgeless limit.

    With the learnability sum X and target terms Y evaluated at GP
    values, Q solves Y Q^2 + (N - X) Q - N = 0 (positive branch); the
    commonly quoted form drops X: (Y/N) Q^2 + Q - 1 = 0.
    """
    if Y == 0:
        return N / (N - X)
    disc = (N - X) ** 2 + 4.0 * Y * N
    return (-(N - X) + np.sqrt(disc)) / (2.0 * Y)


def adaptation_solve_linear(
    S: int,
    N_w: int,
    C: int,
    chi: float,
    P: int,
    kappa_eff2: float,
    w_star_norm: float = 1.0,
    a_star_norm: float = 1.0,
    target_coeff: float = 1.0,
) -> AdaptationSolution:
    """Input-weight covariance order parameters of the 2-layer linear CNN.

    c_perp = 1/S exactly; c_star solves

        1/c_star = S - target_coeff * (chi/(C N_w)) * (c_star/N_w + kappa_eff2/P)^{-2}.

    The smallest positive root (continuously connected to the lazy
    chi -> 0 limit) is returned; all bracketed roots are reported.
    ``target_coeff`` rescales the target drive (used by the Erf variant).
    """
    if min(S, N_w, C, P) <= 0 or chi < 0 or kappa_eff2 <= 0:
        raise ValueError("sizes must be positive, chi >= 0, kappa_eff2 > 0")
    c_perp = 1.0 / S
    A = target_coeff * chi / (C * N_w) * a_star_norm**2

    def resid(c: float) -> float:
        return 1.0 / c - S + A / (c * w_star_norm**2 / N_w + kappa_eff2 / P) ** 2

    # scan for sign changes on a log grid from just below the lazy value
    # outward (the root always sits at c >= c_perp; equality iff A = 0)
    grid = np.concatenate(
        [[c_perp * (1 - 1e-9)], np.geomspace(c_perp * (1 + 1e-6), 1e4 * max(c_perp, 1.0), 400)]
    )
    vals = np.array([resid(c) for c in grid])
    roots = []
    for i in range(len(grid) - 1):
        if vals[i] == 0.0:
            roots.append(float(grid[i]))
        elif vals[i] * vals[i + 1] < 0:
            roots.append(float(brentq(resid, grid[i], grid[i + 1], xtol=1e-15, rtol=1e-14)))
    if not roots:
        raise ValueError(
            f"no positive root of the c_star equation; residuals at bracket ends "
            f"{vals[0]:.3e}, {vals[-1]:.3e}"
        )
    c_star = max(min(roots), c_perp)
    quad = (c_perp + np.sqrt(c_perp**2 + 4.0 * target_coeff * chi * N_w / (C * S))) / 2.0
    lam_star = c_star * w_star_norm**2 / N_w
    lam_perp = c_perp / N_w
    return AdaptationSolution(
        c_perp=c_perp,
        c_star=c_star,
        lambda_star=lam_star,
        lambda_perp=lam_perp,
        residual=abs(resid(c_star)),
        quadratic_root=quad,
        all_roots=tuple(sorted(roots)),
    )


def adaptation_solve_erf(
    S: int,
    N_w: int,
    C: int,
    chi: float,
    P: int,
    kappa_eff2: float,
) -> AdaptationSolution:
    """Erf-network adaptation: same fixed point, target drive reduced.

    The teacher enters through the Erf/linear overlap integral
    E[erf(w.x)(v.x)] = (2/sqrt(pi)) (w.v)/sqrt(1+2|w|^2); the drive term
    contains its square, which at unit norms is 4/(3 pi) ~ 0.42 — the
    only change relative to the linear fixed point.  Higher-harmonic
    feedback channels are excluded.
    """
    sol = adaptation_solve_linear(
        S, N_w, C, chi, P, kappa_eff2, target_coeff=ERF_OVERLAP
    )
    # mean-field norm replacement is only trustworthy while no single
    # direction dominates tr Sigma
    tr_sigma = S * sol.c_perp + (sol.c_star - sol.c_perp)
    sol.norm_check_ok = bool(sol.c_star < 0.5 * tr_sigma)
    return sol


def erf_linear_overlap(w_norm2: float = 1.0, wv: float = 1.0) -> float:
    """E_{x ~ N(0, I)}[ erf(w.x) (v.x) ] = (2/sqrt(pi)) (w.v)/sqrt(1+2|w|^2)."""
    return (2.0 / np.sqrt(np.pi)) * wv / np.sqrt(1.0 + 2.0 * w_norm2)


def predicted_learnability(sol: AdaptationSolution, P: int, kappa_eff2: float) -> float:
    """Teacher-mode learnability lambda_* / (lambda_* + kappa_eff^2 / P)."""
    return sol.lambda_star / (sol.lambda_star + kappa_eff2 / P)


def ondata_adaptation_fixed_point(
    K,
    y,
    chi: float,
    N: float,
    kappa2: float,
    damping: float = 0.5,
    rtol: float = 1e-12,
    max_iter: int = 100_000,
):
    """Joint fixed point t = [Qbar K + (kappa2/P) I]^{-1} y,
    Qbar = [1 - (chi/N) t^T K t]^{-1}, by damped alternating updates."""
    K = _as_matrix(K)
    y = np.asarray(y, dtype=float)
    P = y.shape[0]
    Qbar = 1.0
    t = np.linalg.solve(K + (kappa2 / P) * np.eye(P), y)
    for _ in range(max_iter):
        t_new = np.linalg.solve(Qbar * K + (kappa2 / P) * np.eye(P), y)
        t = (1.0 - damping) * t + damping * t_new
        denom = 1.0 - (chi / N) * float(t @ K @ t)
        if denom <= 0:
            raise ValueError("Qbar pole crossed: 1 - (chi/N) t'Kt <= 0 (diverging feature drive)")
        Qbar_new = 1.0 / denom
        r1 = np.linalg.norm((Qbar_new * K + (kappa2 / P) * np.eye(P)) @ t - y)
        r2 = abs(Qbar_new - Qbar)
        Qbar = (1.0 - damping) * Qbar + damping * Qbar_new
        if r1 < rtol * max(np.linalg.norm(y), 1e-300) and r2 < rtol * Qbar_new:
            Qbar = Qbar_new
            break
    return t, Qbar


def ondata_pre_woodbury_residual(K, y, t, chi: float, N: float, kappa2: float) -> float:
    """Residual of the un-reduced form t = [[K^{-1} - (chi/N) t t^T]^{-1} + (kappa2/P) I]^{-1} y."""
    K = _as_matrix(K)
    y = np.asarray(y, dtype=float)
    P = y.shape[0]
    inner = np.linalg.inv(np.linalg.inv(K) - (chi / N) * np.outer(t, t))
    lhs = (inner + (kappa2 / P) * np.eye(P)) @ t
    return float(np.linalg.norm(lhs - y) / max(np.linalg.norm(y), 1e-300))


def transfer_rescale(N: float, kappa2: float, gamma: float, P: float, scale: float) -> TransferPlan:
    """Hyperparameter-transfer map: N -> s N, kappa2 -> kappa2/s,
    gamma -> gamma/s, P -> s^2 P (keeps N^2/P fixed)."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    return TransferPlan(
        scale=scale, N=scale * N, kappa2=kappa2 / scale, gamma=gamma / scale, P=scale**2 * P
    )
