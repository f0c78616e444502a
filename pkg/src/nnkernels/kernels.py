"""NNGP / NTK kernel construction for fully connected and patch-CNN networks.

Conventions
-----------
Networks are written in the "NTK parametrization": every trainable weight
is a standard normal at initialization and the layer variances enter as
explicit scale factors in the forward pass,

    f(x) = sqrt(sigma_a^2 / (chi * N_w * C)) * sum_{i,c} a_{ic}
           * act( sqrt(sigma_w^2 / S) * w_c . x_i ),

where ``x_i`` are the ``N_w`` non-overlapping patches of size ``S``
(``N_w = 1`` recovers the fully connected case, ``S = d``).  The factor
``chi`` is the mean-field output down-scaling.

The input-layer Gram matrix is per-patch ``x_i . x'_i / S`` averaged over
patches, so inputs normalised to ``|x|^2 ~ d`` give unit kernel diagonal.
The divisor is configurable (``input_scale``) because both ``1/S`` and
``1/d`` conventions appear in the literature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("linear", "erf", "relu")

_ASIN_CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture plus variance conventions for one network family."""

    depth: int
    input_dim: int
    patch_count: int = 1
    activation: str = "erf"
    weight_var: float = 1.0
    readout_var: float = 1.0
    chi: float = 1.0
    channels: int = 1
    bias_var: float = 0.0
    input_scale: str = "patch"  # "patch": 1/S per patch; "dim": 1/d

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.input_dim < 1 or self.patch_count < 1:
            raise ValueError("input_dim and patch_count must be positive")
        if self.input_dim % self.patch_count != 0:
            raise ValueError("patch_count must divide input_dim")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.activation!r}")
        if min(self.weight_var, self.readout_var, self.chi) <= 0:
            raise ValueError("variances and chi must be positive")
        if self.channels < 1:
            raise ValueError("channels must be positive")
        if self.input_scale not in ("patch", "dim"):
            raise ValueError("input_scale must be 'patch' or 'dim'")

    @property
    def patch_size(self) -> int:
        return self.input_dim // self.patch_count

    @property
    def _input_divisor(self) -> float:
        return float(self.patch_size if self.input_scale == "patch" else self.input_dim)


@dataclass
class KernelMatrix:
    """Symmetric PSD Gram matrix on a point set."""

    entries: np.ndarray
    clipped_eigenvalue: float = 0.0

    def __post_init__(self) -> None:
        A = np.asarray(self.entries, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("kernel matrix must be square")
        scale = np.max(np.abs(A)) or 1.0
        if np.max(np.abs(A - A.T)) > 1e-12 * scale:
            raise ValueError("kernel matrix is not symmetric")
        self.entries = 0.5 * (A + A.T)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def _as_matrix(K) -> np.ndarray:
    return K.entries if isinstance(K, KernelMatrix) else np.asarray(K, dtype=float)


def _clamped_asin(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    bad = np.max(np.abs(x)) - 1.0
    if bad > _ASIN_CLAMP_TOL:
        raise FloatingPointError(f"asin argument out of range by {bad:.3e}")
    return np.arcsin(np.clip(x, -1.0, 1.0))


def pair_expectation(activation: str, H: np.ndarray) -> np.ndarray:
    """E[act(u) act(v)] for (u, v) jointly Gaussian with covariance ``H``.

    ``H`` is a full covariance matrix over points; the diagonal supplies
    the marginal variances.  Closed forms: linear is the identity, erf is
    the arcsine kernel, relu the first arc-cosine kernel.
    """
    H = np.asarray(H, dtype=float)
    if activation == "linear":
        return H.copy()
    h = np.diag(H)
    if activation == "erf":
        denom = np.sqrt(np.outer(1.0 + 2.0 * h, 1.0 + 2.0 * h))
        return (2.0 / np.pi) * _clamped_asin(2.0 * H / denom)
    if activation == "relu":
        norm = np.sqrt(np.outer(h, h))
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = np.where(norm > 0, H / np.where(norm > 0, norm, 1.0), 0.0)
        theta = np.arccos(np.clip(rho, -1.0, 1.0))
        return (norm / (2.0 * np.pi)) * (np.sin(theta) + (np.pi - theta) * np.cos(theta))
    raise ValueError(f"unsupported activation {activation!r}")


def derivative_pair_expectation(activation: str, H: np.ndarray) -> np.ndarray:
    """E[act'(u) act'(v)] under the same joint Gaussian as above."""
    H = np.asarray(H, dtype=float)
    if activation == "linear":
        return np.ones_like(H)
    h = np.diag(H)
    if activation == "erf":
        # act'(z) = (2/sqrt(pi)) exp(-z^2); the expectation is a 2-d
        # Gaussian integral, (4/pi) / sqrt(det(I + 2 H_2x2)).
        det = np.outer(1.0 + 2.0 * h, 1.0 + 2.0 * h) - 4.0 * H**2
        return (4.0 / np.pi) / np.sqrt(det)
    if activation == "relu":
        norm = np.sqrt(np.outer(h, h))
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = np.where(norm > 0, H / np.where(norm > 0, norm, 1.0), 0.0)
        theta = np.arccos(np.clip(rho, -1.0, 1.0))
        return (np.pi - theta) / (2.0 * np.pi)
    raise ValueError(f"unsupported activation {activation!r}")


def patch_gram(X: np.ndarray, spec: NetworkSpec) -> np.ndarray:
    """Input-layer kernel: per-patch Gram averaged over patches."""
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("inputs must be finite")
    n, d = X.shape
    if d != spec.input_dim:
        raise ValueError("input dimension mismatch")
    Xp = X.reshape(n, spec.patch_count, spec.patch_size)
    G = np.einsum("mis,nis->mn", Xp, Xp) / (spec.patch_count * spec._input_divisor)
    return 0.5 * (G + G.T)


def nngp_kernel(spec: NetworkSpec, X: np.ndarray) -> KernelMatrix:
    """NNGP kernel of the infinite-width network via the layer recursion.

    ``K0`` is the input Gram; each hidden layer maps the running kernel
    through the activation's Gaussian pair expectation at preactivation
    covariance ``sigma_w^2 * K``; the readout multiplies by
    ``sigma_a^2 / chi``.  For a CNN the independent readout weights kill
    cross-patch terms, so the pair expectation acts on each per-patch
    Gram and the result is averaged over patches (for a linear
    activation this coincides with activating the patch-averaged Gram).
    """
    if spec.patch_count > 1:
        if spec.depth != 2:
            raise ValueError("CNN NNGP implemented for depth 2 only")
        X = np.asarray(X, dtype=float)
        if not np.all(np.isfinite(X)):
            raise ValueError("inputs must be finite")
        n, d = X.shape
        if d != spec.input_dim:
            raise ValueError("input dimension mismatch")
        Xp = X.reshape(n, spec.patch_count, spec.patch_size)
        K = np.zeros((n, n))
        for i in range(spec.patch_count):
            Gi = Xp[:, i, :] @ Xp[:, i, :].T / spec._input_divisor
            K += pair_expectation(spec.activation, spec.weight_var * Gi + spec.bias_var)
        return KernelMatrix((spec.readout_var / spec.chi) * K / spec.patch_count)
    G = patch_gram(X, spec)
    for _ in range(spec.depth - 1):
        G = pair_expectation(spec.activation, spec.weight_var * G + spec.bias_var)
    return KernelMatrix((spec.readout_var / spec.chi) * G)


def ntk_kernel_2layer(spec: NetworkSpec, X: np.ndarray) -> KernelMatrix:
    """Neural Tangent Kernel of a 2-layer network at initialization.

    Theta = Phi + sigma_w^2 * Phi' ∘ Kx where Phi / Phi' are the
    activation and activation-derivative pair expectations at the first
    layer, and Kx is the input Gram; equals the initialization-averaged
    gradient Gram sum over both weight layers.  CNN patches enter
    per patch, averaged at the readout.
    """
    if spec.depth != 2:
        raise ValueError("NTK closed form implemented for depth 2 only")
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    Xp = X.reshape(n, spec.patch_count, spec.patch_size)
    Theta = np.zeros((n, n))
    for i in range(spec.patch_count):
        Kxi = Xp[:, i, :] @ Xp[:, i, :].T / spec._input_divisor
        H = spec.weight_var * Kxi + spec.bias_var
        Phi = pair_expectation(spec.activation, H)
        dPhi = derivative_pair_expectation(spec.activation, H)
        Theta += Phi + spec.weight_var * dPhi * Kxi
    return KernelMatrix((spec.readout_var / spec.chi) * Theta / spec.patch_count)


def adapted_kernel_erf(Sigma: np.ndarray, X: np.ndarray, patch_count: int = 1) -> KernelMatrix:
    """Erf kernel with an adapted input-weight covariance ``Sigma``.

    K(x, x') = (2 / (pi * N_w)) * sum_i asin[ 2 x_i' Sigma x'_i /
               sqrt((1 + 2 x_i' Sigma x_i)(1 + 2 x'_i' Sigma x'_i)) ],

    the Erf-Erf Gaussian expectation with preactivation covariance
    x_i' Sigma x'_i; Sigma = sigma_w^2 I / S recovers the lazy NNGP
    kernel.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    if np.max(np.abs(Sigma - Sigma.T)) > 1e-10 * (np.max(np.abs(Sigma)) or 1.0):
        raise ValueError("Sigma must be symmetric")
    evals = np.linalg.eigvalsh(Sigma)
    if evals.size and evals[0] < -1e-10 * max(evals[-1], 1.0):
        raise ValueError("Sigma must be positive semi-definite")
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if d % patch_count != 0:
        raise ValueError("patch_count must divide input dimension")
    S = d // patch_count
    if Sigma.shape != (S, S):
        raise ValueError("Sigma must be patch_size x patch_size")
    Xp = X.reshape(n, patch_count, S)
    K = np.zeros((n, n))
    for i in range(patch_count):
        Xi = Xp[:, i, :]
        A = Xi @ Sigma @ Xi.T
        diag = np.diag(A)
        denom = np.sqrt(np.outer(1.0 + 2.0 * diag, 1.0 + 2.0 * diag))
        K += (2.0 / np.pi) * _clamped_asin(np.clip(2.0 * A / denom, -1.0, 1.0))
    return KernelMatrix(K / patch_count)


def _forward(spec: NetworkSpec, X: np.ndarray, rng: np.random.Generator, n_samples: int) -> np.ndarray:
    """Outputs of ``n_samples`` random networks; shape (n_samples, n_points)."""
    n, d = X.shape
    C = spec.channels
    if spec.activation == "linear":
        sigma = lambda z: z
    elif spec.activation == "erf":
        from scipy.special import erf as _erf

        sigma = _erf
    else:
        sigma = lambda z: np.maximum(z, 0.0)

    if spec.depth == 2:
        Nw, S = spec.patch_count, spec.patch_size
        Xp = X.reshape(n, Nw, S)
        W = rng.standard_normal((n_samples * C, S))
        U = np.sqrt(spec.weight_var / spec._input_divisor) * np.einsum(
            "ks,nis->kin", W, Xp
        )  # (n_samples*C, Nw, n)
        Hact = sigma(U).reshape(n_samples, C, Nw, n)
        a = rng.standard_normal((n_samples, Nw, C))
        f = np.einsum("bic,bcin->bn", a, Hact)
        return math.sqrt(spec.readout_var / (spec.chi * Nw * C)) * f

    if spec.patch_count != 1:
        raise ValueError("depth > 2 Monte Carlo supports fully connected nets only")
    h = np.broadcast_to(X, (n_samples, n, d))
    width_in = d
    div = spec._input_divisor
    for _ in range(spec.depth - 1):
        W = rng.standard_normal((n_samples, width_in, C))
        h = sigma(np.sqrt(spec.weight_var / div) * np.einsum("bnd,bdc->bnc", h, W))
        width_in, div = C, C
    a = rng.standard_normal((n_samples, C))
    f = np.einsum("bnc,bc->bn", h, a)
    return math.sqrt(spec.readout_var / (spec.chi * C)) * f


def empirical_kernel_mc(
    spec: NetworkSpec,
    X: np.ndarray,
    samples: int,
    seed: int,
    block_size: int = 1 << 13,
) -> KernelMatrix:
    """Monte-Carlo estimate of the output covariance over weight draws.

    Each block of samples gets its own counter-based RNG stream keyed by
    ``(seed, block index)``, so the result is independent of how blocks
    are scheduled.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    M = np.zeros((n, n))
    done = 0
    block = 0
    while done < samples:
        b = min(block_size, samples - done)
        key = np.array([seed & 0xFFFFFFFFFFFFFFFF, block], dtype=np.uint64)
        rng = np.random.Generator(np.random.Philox(key=key))
        f = _forward(spec, X, rng, b)
        M += f.T @ f
        done += b
        block += 1
    return KernelMatrix(M / samples)


def wick_moment(mu: np.ndarray, Sigma: np.ndarray, indices) -> float:
    """Gaussian moment E[w_{i1} ... w_{ik}] by the Wick–Isserlis expansion.

    Sums over every split of the index list into singletons (taking the
    mean) and pairs (taking the covariance).  ``indices`` are 0-based
    positions into ``mu`` / ``Sigma``.  Length is capped at 8 because the
    number of terms grows factorially.
    """
    idx = list(indices)
    if len(idx) > 8:
        raise ValueError("moment order capped at 8")
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    evals = np.linalg.eigvalsh(0.5 * (Sigma + Sigma.T))
    if evals.size and evals[0] < -1e-10 * max(evals[-1], 1.0):
        raise ValueError("Sigma must be positive semi-definite")

    def rec(rest: tuple) -> float:
        if not rest:
            return 1.0
        i0, tail = rest[0], rest[1:]
        total = mu[i0] * rec(tail)
        for j in range(len(tail)):
            total += Sigma[i0, tail[j]] * rec(tail[:j] + tail[j + 1 :])
        return total

    return float(rec(tuple(idx)))
