"""Empirical checks of the conversion guarantees on synthetic ground truth.

All measurements use squared Euclidean norms except ``epsilon``, the
largest reconstruction residual norm, which enters the conversion bound
squared: ``bound = 2 * (lipschitz_hat * epsilon_prime + epsilon**2)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import DataError, EstimationError
from .genproc import FrameDataset, GenerativeSpec, ParallelPairs, f_apply, f_invert
from .model import LabelScale, convert
from .numkit import make_rng


class OracleModel:
    """Perfect model built from the generating process.

    The encoder returns a strictly increasing relabeling T of the true
    content; the decoder evaluates f(T^-1(s_hat), c). Conditions are given
    as embedding vectors and snapped to the nearest table row.
    """

    d_latent = 1

    def __init__(self, spec: GenerativeSpec, relabel: Optional[LabelScale] = None):
        self.spec = spec
        self.relabel = relabel or LabelScale.for_units(spec.k_s)

    @property
    def gap(self) -> float:
        return float(self.relabel.scale)

    def encode(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        s, _ = f_invert(self.spec, np.atleast_2d(x))
        out = self.relabel(s)[:, None]
        return out[0] if x.ndim == 1 else out

    def _cond_ids(self, c) -> np.ndarray:
        c = np.atleast_2d(np.asarray(c, dtype=np.float64))
        d = ((c[:, None, :] - self.spec.cond_table[None]) ** 2).sum(-1)
        return d.argmin(1)

    def decode(self, s_hat, c) -> np.ndarray:
        s_hat = np.asarray(s_hat, dtype=np.float64)
        single = s_hat.ndim == 1 and np.asarray(c).ndim == 1
        s_hat = np.atleast_2d(s_hat)[:, 0]
        s = np.clip(np.rint(self.relabel.inverse(s_hat)), 0, self.spec.k_s - 1).astype(int)
        out = f_apply(self.spec, s, self._cond_ids(c))
        return out[0] if single else out


def _latent(model, x) -> np.ndarray:
    return np.atleast_2d(model.encode(x)).reshape(len(x), -1)


@dataclass
class ReconstructionReport:
    epsilon: float
    epsilon_sq: float
    residuals: np.ndarray


def measure_reconstruction(model, ds: FrameDataset) -> ReconstructionReport:
    """Largest reconstruction residual over a dataset, as a norm and squared."""
    if ds is None or len(ds) == 0:
        raise DataError("empty evaluation set")
    resid = ((convert(model, ds.x, ds.c) - ds.x) ** 2).sum(1)
    worst = float(resid.max())
    return ReconstructionReport(float(np.sqrt(worst)), worst, resid)


def measure_latent_discrepancy(model, pairs: ParallelPairs) -> float:
    """max over pairs of |e(x_src) - e(x_tgt)|^2."""
    if pairs is None or len(pairs) == 0:
        raise DataError("no parallel pairs")
    d = ((_latent(model, pairs.x_src) - _latent(model, pairs.x_tgt)) ** 2).sum(1)
    return float(d.max())


def estimate_lipschitz(
    model,
    latent_samples,
    conditions,
    n_pairs: int = 2000,
    seed: int = 0,
    denom_floor: float = 1e-10,
    include_pairs=None,
) -> float:
    """Sampled squared-norm Lipschitz constant of the decoder in its latent input.

    For every condition, ``n_pairs`` random latent pairs are drawn from
    ``latent_samples``. ``include_pairs`` is an optional ``(s1, s2, c)``
    triple of aligned arrays that is always evaluated as well. Pairs closer
    than ``denom_floor`` (squared) are skipped.
    """
    lat = np.asarray(latent_samples, dtype=np.float64)
    lat = lat.reshape(len(lat), -1)
    conds = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
    if len(lat) < 2:
        raise EstimationError("need at least 2 latent samples")
    rng = make_rng(seed)
    best = -1.0
    for c in conds:
        if n_pairs <= 0:
            break
        i = rng.integers(0, len(lat), size=n_pairs)
        j = rng.integers(0, len(lat), size=n_pairs)
        best = max(best, _max_ratio(model, lat[i], lat[j], np.repeat(c[None], n_pairs, 0), denom_floor))
    if include_pairs is not None:
        s1, s2, cc = include_pairs
        s1 = np.asarray(s1, dtype=np.float64).reshape(len(s1), -1)
        s2 = np.asarray(s2, dtype=np.float64).reshape(len(s2), -1)
        best = max(best, _max_ratio(model, s1, s2, np.atleast_2d(cc), denom_floor))
    if best < 0:
        raise EstimationError("every sampled latent pair was degenerate")
    return best


def _max_ratio(model, s1, s2, c, floor) -> float:
    den = ((s1 - s2) ** 2).sum(1)
    keep = den >= floor
    if not np.any(keep):
        return -1.0
    num = ((model.decode(s1[keep], c[keep]) - model.decode(s2[keep], c[keep])) ** 2).sum(1)
    return float((num / den[keep]).max())


@dataclass
class ErrorBoundReport:
    epsilon: float
    epsilon_sq: float
    epsilon_prime: float
    lipschitz_hat: float
    conv_errors: np.ndarray
    recon_errors: np.ndarray
    bound: float
    holds_fraction: float
    n_pairs: int
    seed: int

    def to_dict(self) -> dict:
        ce = self.conv_errors
        return {
            "epsilon": self.epsilon,
            "epsilon_sq": self.epsilon_sq,
            "epsilon_prime": self.epsilon_prime,
            "lipschitz_hat": self.lipschitz_hat,
            "bound": self.bound,
            "holds_fraction": self.holds_fraction,
            "n_pairs": self.n_pairs,
            "seed": self.seed,
            "conv_error_max": float(ce.max()),
            "conv_error_median": float(np.median(ce)),
            "recon_error_median": float(np.median(self.recon_errors)),
        }


def error_bound(lipschitz_hat: float, epsilon_prime: float, epsilon: float) -> float:
    return 2.0 * (lipschitz_hat * epsilon_prime + epsilon**2)


def check_error_bound(model, pairs: ParallelPairs, seed: int = 0, n_lipschitz_pairs: int = 2000,
                      denom_floor: float = 1e-10) -> ErrorBoundReport:
    """Measure epsilon, epsilon', L and per-pair conversion errors, then test the bound.

    Reconstruction is measured on the target side of each pair and the
    Lipschitz pair set contains every (e(x_tgt), e(x_src), c_tgt) triple,
    so the bound is evaluated on exactly the pairs it covers.
    """
    if pairs is None or len(pairs) == 0:
        raise DataError("no parallel pairs")
    _, tgt = pairs.as_datasets()
    rec = measure_reconstruction(model, tgt)
    eps_prime = measure_latent_discrepancy(model, pairs)
    z_src = _latent(model, pairs.x_src)
    z_tgt = _latent(model, pairs.x_tgt)
    lat_pool = np.concatenate([z_src, z_tgt])
    conds = np.unique(np.concatenate([pairs.c_src, pairs.c_tgt]), axis=0)
    try:
        lip = estimate_lipschitz(
            model, lat_pool, conds, n_lipschitz_pairs, seed, denom_floor,
            include_pairs=(z_tgt, z_src, pairs.c_tgt),
        )
    except EstimationError:
        # every latent coincides: the decoder is never probed off-diagonal
        lip = 0.0
    conv = ((pairs.x_tgt - model.decode(z_src, pairs.c_tgt)) ** 2).sum(1)
    bound = error_bound(lip, eps_prime, rec.epsilon)
    holds = float(np.mean(conv <= bound))
    return ErrorBoundReport(
        rec.epsilon, rec.epsilon_sq, eps_prime, lip, conv, rec.residuals, bound, holds,
        len(pairs), seed,
    )


@dataclass
class InjectivityReport:
    min_margin: float
    margin_tol: float
    ref_cond: int
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _pairwise_min(z: np.ndarray) -> float:
    d = np.sqrt(((z[:, None, :] - z[None, :, :]) ** 2).sum(-1))
    return float(d[np.triu_indices(len(z), 1)].min())


def check_injectivity(model, spec: GenerativeSpec, ref_cond: int = 0, margin_tol: float = 1e-6) -> InjectivityReport:
    """Distinct contents under one fixed condition must get distinct latents."""
    s = np.arange(spec.k_s)
    z = _latent(model, f_apply(spec, s, np.full_like(s, ref_cond)))
    margin = _pairwise_min(z)
    return InjectivityReport(margin, margin_tol, int(ref_cond), bool(margin > margin_tol))


@dataclass
class TConsistencyReport:
    latent_table: np.ndarray
    cross_cond_spread: np.ndarray
    inter_s_gap: np.ndarray
    spread_ratio: float
    threshold: float
    flagged: bool

    def to_dict(self) -> dict:
        return {
            "latent_table": self.latent_table.tolist(),
            "cross_cond_spread": self.cross_cond_spread.tolist(),
            "inter_s_gap": self.inter_s_gap.tolist(),
            "spread_ratio": self.spread_ratio,
            "threshold": self.threshold,
            "flagged": self.flagged,
        }


def check_t_consistency(model, spec: GenerativeSpec, threshold: float = 0.25) -> TConsistencyReport:
    """Compare the per-condition content maps T^c(s) = e(f(s, c)).

    Spread is the largest distance between T^c1(s) and T^c2(s) over
    condition pairs; gap is the distance from the condition-averaged T(s)
    to the nearest other category's average.
    """
    if spec.k_s < 2:
        raise DataError("need at least 2 content categories")
    s, c = np.meshgrid(np.arange(spec.k_s), np.arange(spec.k_c), indexing="ij")
    z = _latent(model, f_apply(spec, s.ravel(), c.ravel()))
    table = z.reshape(spec.k_s, spec.k_c, -1)
    diff = np.sqrt(((table[:, :, None, :] - table[:, None, :, :]) ** 2).sum(-1))
    spread = diff.reshape(spec.k_s, -1).max(1)
    mean = table.mean(1)
    dm = np.sqrt(((mean[:, None, :] - mean[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(dm, np.inf)
    gap = dm.min(1)
    med_spread, med_gap = float(np.median(spread)), float(np.median(gap))
    if med_gap > 0:
        ratio = med_spread / med_gap
    else:
        ratio = 0.0 if med_spread == 0 else float("inf")
    return TConsistencyReport(table, spread, gap, ratio, threshold, bool(ratio > threshold))


def silhouette(z: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette coefficient with Euclidean distances."""
    z = np.asarray(z, dtype=np.float64).reshape(len(z), -1)
    labels = np.asarray(labels)
    d = np.sqrt(((z[:, None, :] - z[None, :, :]) ** 2).sum(-1))
    uniq = np.unique(labels)
    scores = np.zeros(len(z))
    for i in range(len(z)):
        own = labels == labels[i]
        if own.sum() < 2:
            continue
        a = d[i, own].sum() / (own.sum() - 1)
        b = min(d[i, labels == u].mean() for u in uniq if u != labels[i])
        scores[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(scores.mean())
