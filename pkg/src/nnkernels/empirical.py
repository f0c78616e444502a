"""Ground-truth oracles: Langevin-trained finite networks and MC averages.

The Langevin sampler targets the Gibbs weight posterior

    p(theta) ∝ exp( -(chi/T) * [ (1/2) sum_mu (f_theta(x_mu) - y_mu)^2 ]
                    - (1/2) |theta|^2 ),

i.e. unnormalised MSE at temperature T/chi plus the unit-normal prior of
the NTK parametrization (equivalently weight decay gamma = T/(2 sigma^2)
in the conventional scaling).  Its infinite-width mean predictor is GPR
with the NNGP kernel and ridge T (chi cancels between kernel and noise).

All randomness is counter-based (Philox) and keyed by explicit seeds so
ensembles reproduce bit for bit and are invariant to seed ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf as _erf

from .gpr import gpr_predict
from .kernels import NetworkSpec, ntk_kernel_2layer
from .spectral import DataMeasure


@dataclass(frozen=True)
class TrainingConfig:
    step_size: float
    temperature: float
    steps: int
    burn_in: int
    thin: int = 1
    seeds: tuple = (0,)

    def __post_init__(self) -> None:
        if self.burn_in >= self.steps:
            raise ValueError("burn_in must be < steps")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.step_size <= 0 or self.temperature < 0:
            raise ValueError("step_size > 0 and temperature >= 0 required")


@dataclass
class EnsembleStats:
    mean: np.ndarray
    variance: np.ndarray
    per_seed_means: np.ndarray  # (n_seeds, n_test)
    loss_trace: np.ndarray  # (n_seeds, n_recorded)
    equilibrated: bool
    split_half_gap: float


def _activation(name: str):
    if name == "linear":
        return (lambda z: z), (lambda z: np.ones_like(z))
    if name == "erf":
        return _erf, (lambda z: (2.0 / math.sqrt(math.pi)) * np.exp(-(z**2)))
    if name == "relu":
        return (lambda z: np.maximum(z, 0.0)), (lambda z: (z > 0).astype(float))
    raise ValueError(f"unsupported activation {name!r}")


def suggest_step_size(spec: NetworkSpec, X: np.ndarray, safety: float = 0.05) -> float:
    """Step size with eta * lambda_max(NTK Gram) below the stability margin."""
    Theta = ntk_kernel_2layer(spec, X).entries
    lam_max = float(np.linalg.eigvalsh(Theta)[-1])
    return safety / max(lam_max, 1e-12)


def langevin_train(
    spec: NetworkSpec,
    X: np.ndarray,
    y: np.ndarray,
    X_test: np.ndarray,
    cfg: TrainingConfig,
) -> EnsembleStats:
    """Euler-Maruyama Langevin sampling of a finite 2-layer network ensemble.

    theta <- theta - eta * grad U + sqrt(2 (T/chi) eta) xi, with
    U = (1/2) sum (f - y)^2 + (T/(2 chi)) |theta|^2; each listed seed
    runs an independent chain initialised from the prior.
    """
    if spec.depth != 2:
        raise ValueError("Langevin oracle implemented for depth-2 networks")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    X_test = np.asarray(X_test, dtype=float)
    P, d = X.shape
    Nw, S, C = spec.patch_count, spec.patch_size, spec.channels
    sigma, dsigma = _activation(spec.activation)
    c_in = math.sqrt(spec.weight_var / spec._input_divisor)
    c_out = math.sqrt(spec.readout_var / (spec.chi * Nw * C))
    T_eff = cfg.temperature / spec.chi
    eta = cfg.step_size
    noise_sd = math.sqrt(2.0 * T_eff * eta)

    Xp = X.reshape(P, Nw, S)
    Xp_test = X_test.reshape(X_test.shape[0], Nw, S)
    n_seeds = len(cfg.seeds)

    rngs = [
        np.random.Generator(np.random.Philox(key=np.array([s, 0], dtype=np.uint64)))
        for s in cfg.seeds
    ]
    W = np.stack([r.standard_normal((C, S)) for r in rngs])  # (k, C, S)
    a = np.stack([r.standard_normal((Nw, C)) for r in rngs])  # (k, Nw, C)

    def forward(Wk, ak, Xpat):
        u = c_in * np.einsum("kcs,nis->kcin", Wk, Xpat)
        return c_out * np.einsum("kic,kcin->kn", ak, sigma(u)), u

    n_rec = (cfg.steps - cfg.burn_in + cfg.thin - 1) // cfg.thin
    sum_f = np.zeros((n_seeds, X_test.shape[0]))
    sum_f2 = np.zeros_like(sum_f)
    half_marker = np.zeros((2, n_seeds, X_test.shape[0]))
    half_counts = np.zeros(2)
    losses = np.zeros((n_seeds, n_rec))
    recorded = 0

    f0, _ = forward(W, a, Xp)
    loss0 = float(np.mean(np.sum((f0 - y) ** 2, axis=1)))

    for step in range(cfg.steps):
        u = c_in * np.einsum("kcs,nis->kcin", W, Xp)
        act = sigma(u)
        f = c_out * np.einsum("kic,kcin->kn", a, act)
        r = f - y[None, :]
        # gradients of the unnormalised MSE
        grad_a = c_out * np.einsum("kn,kcin->kic", r, act)
        ra = np.einsum("kn,kic->kcin", r, a) * dsigma(u)
        grad_W = c_out * c_in * np.einsum("kcin,nis->kcs", ra, Xp)
        for k, rng in enumerate(rngs):
            W[k] += -eta * (grad_W[k] + T_eff * W[k]) + noise_sd * rng.standard_normal((C, S))
            a[k] += -eta * (grad_a[k] + T_eff * a[k]) + noise_sd * rng.standard_normal((Nw, C))
        loss_now = float(np.mean(np.sum(r**2, axis=1)))
        if not np.isfinite(loss_now) or loss_now > 1e6 * max(loss0, 1.0):
            raise RuntimeError(
                f"Langevin divergence at step {step}: loss {loss_now:.3e} "
                f"(initial {loss0:.3e}); reduce the step size"
            )
        if step >= cfg.burn_in and (step - cfg.burn_in) % cfg.thin == 0:
            ftest, _ = forward(W, a, Xp_test)
            sum_f += ftest
            sum_f2 += ftest**2
            half = 0 if recorded < n_rec // 2 else 1
            half_marker[half] += ftest
            half_counts[half] += 1
            losses[:, recorded] = np.sum(r**2, axis=1)
            recorded += 1

    per_seed_means = sum_f / recorded
    # order-independent reduction: average in sorted-seed order
    order = np.argsort(np.asarray(cfg.seeds, dtype=np.uint64), kind="stable")
    mean = per_seed_means[order].mean(axis=0)
    second = (sum_f2 / recorded)[order].mean(axis=0)
    variance = np.clip(second - mean**2, 0.0, None)

    halves = half_marker / np.maximum(half_counts, 1)[:, None, None]
    gap = float(np.max(np.abs(halves[0].mean(axis=0) - halves[1].mean(axis=0))))
    sd = float(np.sqrt(np.mean(variance) / max(n_seeds * recorded / 2, 1)))
    return EnsembleStats(
        mean=mean,
        variance=variance,
        per_seed_means=per_seed_means,
        loss_trace=losses[:, :recorded],
        equilibrated=gap <= max(3.0 * sd, 1e-12) or cfg.temperature == 0,
        split_half_gap=gap,
    )


@dataclass
class DatasetAveragedGPR:
    mean_coefficients: np.ndarray  # dataset-averaged mode coefficients
    bias: float  # integrated (mean - y)^2
    type_i_variance: float  # mean within-draw posterior variance
    type_ii_variance: float  # across-draw variance of the mean predictor
    per_draw_loss_mean: float  # <int (f_D - y)^2> = bias + type (ii)
    draws: int

    @property
    def total(self) -> float:
        return self.per_draw_loss_mean + self.type_i_variance


def dataset_averaged_gpr_mc(
    lam,
    y_k,
    P: int,
    kappa2: float,
    draws: int,
    seed: int,
) -> DatasetAveragedGPR:
    """Quenched dataset average of GPR in the Gaussian-feature model.

    Each draw samples P points as i.i.d. standard-normal feature vectors
    over the given spectrum (K = Phi diag(lam) Phi^T), runs exact GPR,
    and records the predictor in mode space where test-measure integrals
    are exact sums.
    """
    if draws < 2:
        raise ValueError("need at least two dataset draws")
    lam = np.asarray(lam, dtype=float)
    y_k = np.asarray(y_k, dtype=float)
    M = lam.size
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    sum_c = np.zeros(M)
    sum_c2 = np.zeros(M)
    loss_sum = 0.0
    post_var_sum = 0.0
    tr_lam = float(lam.sum())
    eyeP = np.eye(P)
    for _ in range(draws):
        Phi = rng.standard_normal((P, M))
        PhiL = Phi * lam
        K = PhiL @ Phi.T
        y_D = Phi @ y_k
        A = K + kappa2 * eyeP
        c = PhiL.T @ np.linalg.solve(A, y_D)
        sum_c += c
        sum_c2 += c**2
        loss_sum += float(np.sum((c - y_k) ** 2))
        post_var_sum += tr_lam - float(np.einsum("mp,pm->", PhiL.T @ np.linalg.inv(A), PhiL))
    mean_c = sum_c / draws
    var_c = sum_c2 / draws - mean_c**2
    return DatasetAveragedGPR(
        mean_coefficients=mean_c,
        bias=float(np.sum((mean_c - y_k) ** 2)),
        type_i_variance=post_var_sum / draws,
        type_ii_variance=float(np.sum(np.clip(var_c, 0.0, None))),
        per_draw_loss_mean=loss_sum / draws,
        draws=draws,
    )


def make_synthetic(kind: str, d: int, n: int, seed: int, scale: float = 1.0) -> DataMeasure:
    """Synthetic input measures with uniform weights.

    gaussian_iid draws N(0, I_d / d) (so |x|^2 ~ 1); hypersphere_uniform
    projects Gaussians onto |x| = 1.  ``scale`` multiplies the points
    (e.g. sqrt(d) recovers unit-variance entries).
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    Z = rng.standard_normal((n, d))
    if kind == "gaussian_iid":
        X = Z / math.sqrt(d)
    elif kind == "hypersphere_uniform":
        X = Z / np.linalg.norm(Z, axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    return DataMeasure(scale * X, np.full(n, 1.0 / n))


def make_target(
    kind: str,
    X: np.ndarray,
    w_star: np.ndarray,
    a_star: np.ndarray | None = None,
    patch_count: int = 1,
    cubic_coeff: float = 0.1,
) -> np.ndarray:
    """Teacher functions: single-index linear, per-patch linear, or cubic.

    cubic uses the third Hermite polynomial, y = z + c (z^3 - 3 z) with
    z = w* . x.
    """
    X = np.asarray(X, dtype=float)
    w_star = np.asarray(w_star, dtype=float)
    if kind == "single_index_linear":
        return X @ w_star
    if kind == "patch_linear":
        n, d = X.shape
        S = d // patch_count
        if a_star is None:
            raise ValueError("patch_linear needs per-patch readout a_star")
        a_star = np.asarray(a_star, dtype=float)
        Xp = X.reshape(n, patch_count, S)
        return np.einsum("i,nis,s->n", a_star, Xp, w_star)
    if kind == "cubic_single_index":
        z = X @ w_star
        return z + cubic_coeff * (z**3 - 3.0 * z)
    raise ValueError(f"unknown target kind {kind!r}")


def learnability(f: np.ndarray, y: np.ndarray, weights: np.ndarray) -> float:
    """Weighted overlap sum w f y / sum w y^2 — fraction of target captured."""
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    denom = float(w @ y**2)
    if denom == 0:
        raise ValueError("target is identically zero")
    return float(w @ (f * y)) / denom
