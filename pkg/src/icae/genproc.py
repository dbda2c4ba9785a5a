"""Synthetic ground-truth processes x = f(s, c) with oracle access.

Content ``s`` is a discrete category drawn from a strictly descending
prior, the condition ``c`` is a discrete category drawn uniformly and
independently. Both are embedded through lookup tables, concatenated and
pushed through an invertible mixing map.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, DataError, NotInImageError
from .numkit import make_rng

MIXINGS = ("affine", "smooth")


def geometric_prior(k: int, ratio: float = 0.8) -> np.ndarray:
    p = ratio ** np.arange(k, dtype=np.float64)
    return p / p.sum()


def lu_invertible(w: np.ndarray, pivot_tol: float = 1e-10) -> bool:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, _ = scipy.linalg.lu_factor(w, check_finite=True)
    return bool(np.all(np.abs(np.diag(lu)) > pivot_tol))


def min_pairwise_distance(rows: np.ndarray) -> float:
    if len(rows) < 2:
        return np.inf
    diff = rows[:, None, :] - rows[None, :, :]
    d = np.sqrt((diff**2).sum(-1))
    return float(d[np.triu_indices(len(rows), 1)].min())


@dataclass(frozen=True)
class GenerativeSpec:
    prior: np.ndarray
    content_table: np.ndarray
    cond_table: np.ndarray
    W: np.ndarray
    b: np.ndarray
    mixing: str = "affine"
    alpha: float = 0.0
    sep_min: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.mixing not in MIXINGS:
            raise ConfigurationError(f"mixing must be one of {MIXINGS}, got {self.mixing!r}")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigurationError("alpha must lie in [0, 1)")
        if abs(self.prior.sum() - 1.0) > 1e-12 or np.any(self.prior <= 0):
            raise ConfigurationError("prior must be positive and sum to 1")
        if self.content_table.shape[0] != len(self.prior):
            raise ConfigurationError("content_table needs one row per content category")
        d = self.d_u + self.d_c
        if self.W.shape != (d, d) or self.b.shape != (d,):
            raise ConfigurationError(f"W must be {d}x{d} and b of length {d}")
        if not lu_invertible(self.W):
            raise ConfigurationError("mixing matrix W is not invertible")

    @property
    def k_s(self) -> int:
        return len(self.prior)

    @property
    def k_c(self) -> int:
        return self.cond_table.shape[0]

    @property
    def d_u(self) -> int:
        return self.content_table.shape[1]

    @property
    def d_c(self) -> int:
        return self.cond_table.shape[1]

    @property
    def d_x(self) -> int:
        return self.d_u + self.d_c

    @property
    def gap_min(self) -> float:
        p = np.sort(self.prior)
        return float(np.diff(p).min())

    def to_bytes(self) -> bytes:
        parts = [self.mixing.encode(), np.float64(self.alpha).tobytes()]
        for a in (self.prior, self.content_table, self.cond_table, self.W, self.b):
            parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return b"|".join(parts)


def make_spec(
    k_s: int,
    k_c: int,
    d_u: int,
    d_c: int,
    mixing: str = "affine",
    seed: int = 0,
    *,
    alpha: float = 0.5,
    ratio: float = 0.8,
    sep_min: float = 0.5,
    content_scale: float = 1.0,
    cond_scale: float = 0.5,
    offset_scale: float = 0.1,
    max_attempts: int = 1000,
) -> GenerativeSpec:
    """Sample a random generative process.

    The mixing matrix is a random orthogonal matrix (Haar via QR), so the
    data stay on unit scale. Condition embeddings are drawn at a smaller
    scale than content embeddings; ``alpha`` only matters for the smooth
    family.
    """
    if k_s < 2 or k_c < 2:
        raise ConfigurationError("k_s and k_c must both be at least 2")
    if d_u < 1 or d_c < 1:
        raise ConfigurationError("d_u and d_c must be at least 1")
    if mixing not in MIXINGS:
        raise ConfigurationError(f"mixing must be one of {MIXINGS}, got {mixing!r}")
    if not 0.0 < ratio < 1.0:
        raise ConfigurationError("geometric ratio must lie in (0, 1)")
    rng = make_rng(seed)
    prior = geometric_prior(k_s, ratio)

    def table(k, d, scale):
        for _ in range(max_attempts):
            t = rng.normal(0.0, scale, size=(k, d))
            if min_pairwise_distance(t) >= sep_min:
                return t
        raise ConfigurationError(
            f"could not separate {k} embeddings in {d} dims by {sep_min} "
            f"after {max_attempts} attempts"
        )

    content = table(k_s, d_u, content_scale)
    cond = table(k_c, d_c, cond_scale)
    d = d_u + d_c
    for _ in range(max_attempts):
        q, r = np.linalg.qr(rng.normal(size=(d, d)))
        w = q * np.sign(np.diag(r))
        if lu_invertible(w):
            break
    else:  # pragma: no cover - orthogonal matrices are always invertible
        raise ConfigurationError("failed to draw an invertible mixing matrix")
    b = rng.normal(0.0, offset_scale, size=d)
    return GenerativeSpec(
        prior, content, cond, w, b, mixing=mixing,
        alpha=alpha if mixing == "smooth" else 0.0, sep_min=sep_min, seed=seed,
    )


def _g(spec: GenerativeSpec, t):
    return t + spec.alpha * np.tanh(t)


def f_apply(spec: GenerativeSpec, s, c) -> np.ndarray:
    """x = f(s, c); vectorized over matching integer arrays."""
    s_arr = np.asarray(s)
    c_arr = np.asarray(c)
    if np.any(s_arr < 0) or np.any(s_arr >= spec.k_s):
        raise IndexError(f"content index out of range [0, {spec.k_s})")
    if np.any(c_arr < 0) or np.any(c_arr >= spec.k_c):
        raise IndexError(f"condition index out of range [0, {spec.k_c})")
    s_arr, c_arr = np.broadcast_arrays(s_arr, c_arr)
    z = np.concatenate([spec.content_table[s_arr], spec.cond_table[c_arr]], axis=-1)
    t = z @ spec.W.T + spec.b
    if spec.mixing == "smooth":
        t = _g(spec, t)
    return t


def _g_inverse(spec: GenerativeSpec, y, max_iter=50, tol=1e-12):
    t = y / (1.0 + spec.alpha)
    for _ in range(max_iter):
        th = np.tanh(t)
        r = t + spec.alpha * th - y
        if np.all(np.abs(r) <= tol * np.maximum(1.0, np.abs(y))):
            return t
        t = t - r / (1.0 + spec.alpha * (1.0 - th * th))
    r = t + spec.alpha * np.tanh(t) - y
    if np.all(np.abs(r) <= tol * np.maximum(1.0, np.abs(y))):
        return t
    raise NotInImageError("Newton inversion of the smooth nonlinearity did not converge")


def f_invert(spec: GenerativeSpec, x, return_residual: bool = False):
    """Recover (s, c) from x by undoing the mixing and snapping to table rows.

    Works on a single vector or on a batch. With ``return_residual`` the
    largest snapping distance is returned as a third value.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != spec.d_x:
        raise DataError(f"x has width {xb.shape[1]}, spec expects {spec.d_x}")
    t = _g_inverse(spec, xb) if spec.mixing == "smooth" else xb
    z = np.linalg.solve(spec.W, (t - spec.b).T).T
    u, v = z[:, : spec.d_u], z[:, spec.d_u :]
    du = np.sqrt(((u[:, None, :] - spec.content_table[None]) ** 2).sum(-1))
    dv = np.sqrt(((v[:, None, :] - spec.cond_table[None]) ** 2).sum(-1))
    s = du.argmin(1)
    c = dv.argmin(1)
    resid = np.maximum(du[np.arange(len(s)), s], dv[np.arange(len(c)), c])
    worst = float(resid.max())
    if worst > spec.sep_min / 2:
        raise NotInImageError(
            f"point lies {worst:.3g} from the nearest table row (limit {spec.sep_min / 2:.3g})"
        )
    if single:
        s, c = int(s[0]), int(c[0])
    return (s, c, worst) if return_residual else (s, c)


@dataclass
class FrameDataset:
    """Frames ``x`` with condition vectors ``c`` and optional integer labels."""

    x: np.ndarray
    c: np.ndarray
    cond_id: Optional[np.ndarray] = None
    true_s: Optional[np.ndarray] = None
    proxy_s: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.c = np.atleast_2d(np.asarray(self.c, dtype=np.float64))
        n = self.x.shape[0]
        if self.c.shape[0] != n:
            raise DataError(f"{n} frames but {self.c.shape[0]} condition vectors")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.c))):
            raise DataError("dataset contains non-finite values")
        for name in ("cond_id", "true_s", "proxy_s"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.int64).reshape(-1)
                if v.shape[0] != n:
                    raise DataError(f"{name} has {v.shape[0]} entries for {n} frames")
                if np.any(v < 0):
                    raise DataError(f"{name} contains negative labels")
                setattr(self, name, v)

    def __len__(self):
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    @property
    def d_c(self) -> int:
        return self.c.shape[1]

    def with_proxy(self, proxy_s) -> "FrameDataset":
        return replace(self, proxy_s=np.asarray(proxy_s, dtype=np.int64))

    def subset(self, idx) -> "FrameDataset":
        pick = lambda v: None if v is None else v[idx]  # noqa: E731
        return FrameDataset(
            self.x[idx], self.c[idx], pick(self.cond_id), pick(self.true_s), pick(self.proxy_s)
        )


@dataclass
class ParallelPairs:
    """Source/target frames sharing the same content, under different conditions."""

    x_src: np.ndarray
    x_tgt: np.ndarray
    c_src: np.ndarray
    c_tgt: np.ndarray
    shared_s: np.ndarray
    cond_src: np.ndarray = field(default=None)
    cond_tgt: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.shared_s)

    def as_datasets(self) -> tuple[FrameDataset, FrameDataset]:
        src = FrameDataset(self.x_src, self.c_src, self.cond_src, self.shared_s)
        tgt = FrameDataset(self.x_tgt, self.c_tgt, self.cond_tgt, self.shared_s)
        return src, tgt

    @classmethod
    def from_datasets(cls, src: FrameDataset, tgt: FrameDataset) -> "ParallelPairs":
        if len(src) != len(tgt):
            raise DataError("source and target sets differ in length")
        if src.true_s is None or tgt.true_s is None or np.any(src.true_s != tgt.true_s):
            raise DataError("parallel pairs must carry identical true_s on both sides")
        return cls(src.x, tgt.x, src.c, tgt.c, src.true_s, src.cond_id, tgt.cond_id)

    def subset(self, idx) -> "ParallelPairs":
        pick = lambda v: None if v is None else v[idx]  # noqa: E731
        return ParallelPairs(
            self.x_src[idx], self.x_tgt[idx], self.c_src[idx], self.c_tgt[idx],
            self.shared_s[idx], pick(self.cond_src), pick(self.cond_tgt),
        )


def sample_dataset(spec: GenerativeSpec, n: int, seed: int, n_pairs: int = 0):
    """Draw ``n`` frames with s ~ prior and c ~ uniform, independently.

    Returns ``(dataset, pairs)``; ``pairs`` is None unless ``n_pairs > 0``.
    """
    if n < 1:
        raise ConfigurationError("n must be at least 1")
    rng = make_rng(seed)
    s = rng.choice(spec.k_s, size=n, p=spec.prior)
    c = rng.integers(0, spec.k_c, size=n)
    ds = FrameDataset(f_apply(spec, s, c), spec.cond_table[c], cond_id=c, true_s=s)
    pairs = None
    if n_pairs > 0:
        ps = rng.choice(spec.k_s, size=n_pairs, p=spec.prior)
        c_src = rng.integers(0, spec.k_c, size=n_pairs)
        c_tgt = (c_src + rng.integers(1, spec.k_c, size=n_pairs)) % spec.k_c
        pairs = ParallelPairs(
            f_apply(spec, ps, c_src), f_apply(spec, ps, c_tgt),
            spec.cond_table[c_src], spec.cond_table[c_tgt], ps, c_src, c_tgt,
        )
    return ds, pairs
