"""Kernel independence diagnostics (biased HSIC and a permutation test)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BandwidthError, DataError
from .numkit import make_rng

MEDIAN_SUBSAMPLE = 2000


@dataclass(frozen=True)
class Kernel:
    kind: str = "rbf"
    bandwidth: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("rbf", "delta"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise BandwidthError("bandwidth must be positive")

    def describe(self) -> dict:
        return {"kind": self.kind, "bandwidth": self.bandwidth}


RBF = Kernel("rbf")
DELTA = Kernel("delta")


def _as_2d(samples) -> np.ndarray:
    a = np.asarray(samples, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def _sq_dists(a: np.ndarray) -> np.ndarray:
    sq = (a * a).sum(1)
    d = sq[:, None] + sq[None, :] - 2.0 * a @ a.T
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def median_bandwidth(samples, seed: int = 0, cap: int = MEDIAN_SUBSAMPLE) -> float:
    """Median pairwise Euclidean distance, on a seeded subsample of at most ``cap`` rows."""
    a = _as_2d(samples)
    if a.shape[0] > cap:
        a = a[np.sort(make_rng(seed).choice(a.shape[0], cap, replace=False))]
    d = np.sqrt(_sq_dists(a)[np.triu_indices(a.shape[0], 1)])
    sigma = float(np.median(d))
    if not sigma > 0:
        raise BandwidthError("median pairwise distance is zero; rbf bandwidth undefined")
    return sigma


def resolve_kernel(samples, kernel: Kernel, seed: int = 0) -> Kernel:
    if kernel.kind == "rbf" and kernel.bandwidth is None:
        return Kernel("rbf", median_bandwidth(samples, seed))
    return kernel


def gram_matrix(samples, kernel: Kernel = RBF, seed: int = 0) -> np.ndarray:
    """rbf: exp(-|a_i - a_j|^2 / (2 sigma^2)); delta: 1 where the labels are equal."""
    if kernel.kind == "delta":
        lab = np.asarray(samples)
        if lab.ndim > 1:
            lab = lab.reshape(lab.shape[0], -1)
            eq = np.all(lab[:, None, :] == lab[None, :, :], axis=-1)
        else:
            eq = lab[:, None] == lab[None, :]
        if eq.shape[0] < 2:
            raise DataError("need at least 2 samples")
        return eq.astype(np.float64)
    a = _as_2d(samples)
    if a.shape[0] < 2:
        raise DataError("need at least 2 samples")
    sigma = resolve_kernel(a, kernel, seed).bandwidth
    return np.exp(-_sq_dists(a) / (2.0 * sigma * sigma))


def center(k: np.ndarray) -> np.ndarray:
    """H K H with H = I - 11^T/n."""
    return k - k.mean(0, keepdims=True) - k.mean(1, keepdims=True) + k.mean()


def hsic_from_grams(ka: np.ndarray, kb: np.ndarray) -> float:
    n = ka.shape[0]
    # tr(Ka H Kb H) = sum((H Ka H) * Kb) for symmetric Kb
    return float((center(ka) * kb).sum() / (n - 1) ** 2)


def hsic(samples_a, samples_b, kernel_a: Kernel = RBF, kernel_b: Kernel = RBF, seed: int = 0) -> float:
    """Biased empirical HSIC, (n-1)^-2 tr(K_a H K_b H)."""
    na, nb = len(samples_a), len(samples_b)
    if na != nb:
        raise DataError(f"sample counts differ: {na} vs {nb}")
    return hsic_from_grams(gram_matrix(samples_a, kernel_a, seed), gram_matrix(samples_b, kernel_b, seed))


def _category_codes(samples) -> np.ndarray:
    lab = np.asarray(samples)
    lab = lab.reshape(lab.shape[0], -1) if lab.ndim > 1 else lab[:, None]
    return np.unique(lab, axis=0, return_inverse=True)[1].ravel()


@dataclass
class HsicResult:
    statistic: float
    p_value: float
    n: int
    n_perm: int
    seed: int
    kernel_a: Kernel
    kernel_b: Kernel
    null_quantiles: dict

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n": self.n,
            "n_perm": self.n_perm,
            "seed": self.seed,
            "kernel_a": self.kernel_a.describe(),
            "kernel_b": self.kernel_b.describe(),
            "null_quantiles": self.null_quantiles,
        }


def hsic_permutation_test(
    samples_a,
    samples_b,
    kernel_a: Kernel = RBF,
    kernel_b: Kernel = RBF,
    n_perm: int = 199,
    seed: int = 0,
) -> HsicResult:
    """Permutation p-value (1 + #{null >= observed}) / (n_perm + 1); ``samples_b`` is permuted."""
    if n_perm < 99:
        raise ValueError("n_perm must be at least 99")
    if len(samples_a) != len(samples_b):
        raise DataError("sample counts differ")
    kernel_a = resolve_kernel(samples_a, kernel_a, seed) if kernel_a.kind == "rbf" else kernel_a
    kernel_b = resolve_kernel(samples_b, kernel_b, seed) if kernel_b.kind == "rbf" else kernel_b
    kac = center(gram_matrix(samples_a, kernel_a))
    kb = gram_matrix(samples_b, kernel_b)
    n = kb.shape[0]
    scale = 1.0 / (n - 1) ** 2
    observed = float((kac * kb).sum() * scale)
    rng = make_rng(seed)
    null = np.empty(n_perm)
    codes = _category_codes(samples_b) if kernel_b.kind == "delta" else None
    for i in range(n_perm):
        perm = rng.permutation(n)
        if codes is None:
            null[i] = (kac * kb[np.ix_(perm, perm)]).sum() * scale
        else:
            # K_b = B B^T for one-hot B, so sum(kac * K_b[perm, perm]) = sum(B_p * (kac @ B_p))
            lab = codes[perm]
            onehot = np.zeros((n, codes.max() + 1))
            onehot[np.arange(n), lab] = 1.0
            null[i] = (kac @ onehot)[np.arange(n), lab].sum() * scale
    p = (1 + int((null >= observed).sum())) / (n_perm + 1)
    q = np.quantile(null, [0.5, 0.95, 0.99])
    return HsicResult(
        observed, p, n, n_perm, seed, kernel_a, kernel_b,
        {"q50": float(q[0]), "q95": float(q[1]), "q99": float(q[2])},
    )
