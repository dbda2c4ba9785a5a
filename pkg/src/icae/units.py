"""Discrete proxy units from k-means, and the prior asymmetry audit."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import ConfigurationError, DataError, ShapeError
from .genproc import FrameDataset
from .numkit import make_rng

_CHUNK = 4096


def squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # Direct differences rather than the |a|^2 - 2ab + |b|^2 expansion so that
    # exact ties stay exact.
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(-1)


def kmeans_assign(centroids, points) -> np.ndarray:
    """Index of the nearest centroid for each point; ties go to the lowest index."""
    centroids = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != centroids.shape[1]:
        raise ShapeError(f"points have width {points.shape[1]}, centroids {centroids.shape[1]}")
    labels = np.empty(points.shape[0], dtype=np.int64)
    for lo in range(0, points.shape[0], _CHUNK):
        labels[lo : lo + _CHUNK] = squared_distances(points[lo : lo + _CHUNK], centroids).argmin(1)
    return labels


def inertia(points: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    return float(((points - centroids[labels]) ** 2).sum())


def kmeans_plusplus(points: np.ndarray, k: int, rng) -> np.ndarray:
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    closest = squared_distances(points, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers.append(points[idx])
        closest = np.minimum(closest, squared_distances(points, points[idx][None])[:, 0])
    return np.array(centers)


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int
    inertia_trace: list = field(default_factory=list)
    converged: bool = False


def kmeans_fit(points, k: int, seed: int = 0, max_iters: int = 100, tol: float = 1e-6) -> KMeansResult:
    """k-means++ seeding followed by Lloyd iterations.

    Stops when no centroid moves by more than ``tol``. An empty cluster is
    re-seeded at the point farthest from its current centroid.
    ``inertia_trace[i]`` is the within-cluster sum of squares after the
    i-th assignment step.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if k < 1 or points.shape[0] < k:
        raise ConfigurationError(f"need at least k={k} points, got {points.shape[0]}")
    rng = make_rng(seed)
    centroids = kmeans_plusplus(points, k, rng)
    trace = []
    converged = False
    it = 0
    labels = kmeans_assign(centroids, points)
    for it in range(1, max_iters + 1):
        trace.append(inertia(points, centroids, labels))
        new = np.empty_like(centroids)
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j]:
                new[j] = points[labels == j].mean(0)
            else:
                new[j] = centroids[j]
        for j in np.flatnonzero(counts == 0):
            far = ((points - new[labels]) ** 2).sum(1).argmax()
            new[j] = points[far]
            labels[far] = j
        shift = np.sqrt(((new - centroids) ** 2).sum(1)).max()
        centroids = new
        labels = kmeans_assign(centroids, points)
        if shift < tol:
            converged = True
            break
    final = inertia(points, centroids, labels)
    trace.append(final)
    return KMeansResult(centroids, labels, final, it, trace, converged)


def sqrt_l1_distance(prior: np.ndarray) -> np.ndarray:
    """D_ij = |p_i - p_j|^(1/2)."""
    p = np.asarray(prior, dtype=np.float64)
    return np.sqrt(np.abs(p[:, None] - p[None, :]))


@dataclass
class UnitModel:
    centroids: np.ndarray
    ref_cond: int
    prior_hist: np.ndarray

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def d_x(self) -> int:
        return self.centroids.shape[1]

    @property
    def dist_matrix(self) -> np.ndarray:
        return sqrt_l1_distance(self.prior_hist)

    def assign(self, points) -> np.ndarray:
        return kmeans_assign(self.centroids, points)


def pca_order(centroids: np.ndarray) -> np.ndarray:
    """Permutation sorting centroids along their leading principal axis.

    The axis sign is fixed so that its largest-magnitude entry is positive.
    """
    centered = centroids - centroids.mean(0)
    if centroids.shape[0] < 2 or not np.any(centered):
        return np.arange(centroids.shape[0])
    axis = np.linalg.svd(centered, full_matrices=False)[2][0]
    axis = axis * np.sign(axis[np.abs(axis).argmax()])
    return np.argsort(centered @ axis, kind="stable")


def choose_ref_cond(cond_id: np.ndarray) -> int:
    """Condition with the most records (lowest id on ties)."""
    return int(np.bincount(cond_id).argmax())


def build_proxy(
    ds: FrameDataset,
    k: int = 100,
    ref_cond: Union[int, str, None] = "most",
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-6,
    label_order: str = "pca",
) -> tuple[UnitModel, FrameDataset]:
    """Fit centroids on one condition's frames and label every frame.

    ``ref_cond`` is either an explicit condition id or ``"most"`` (the
    condition with the most records). With ``label_order="pca"`` the units
    are renumbered by their centroid's projection on the leading principal
    axis; ``"kmeans"`` keeps the clustering's own numbering.
    """
    if ds.cond_id is None:
        raise DataError("dataset has no cond_id column; cannot select a reference condition")
    if ref_cond is None or ref_cond == "most":
        ref = choose_ref_cond(ds.cond_id)
    else:
        ref = int(ref_cond)
    subset = ds.x[ds.cond_id == ref]
    if subset.shape[0] < k:
        raise ConfigurationError(
            f"reference condition {ref} has {subset.shape[0]} records, fewer than k={k}"
        )
    fit = kmeans_fit(subset, k, seed=seed, max_iters=max_iters, tol=tol)
    centroids = fit.centroids
    if label_order == "pca":
        centroids = centroids[pca_order(centroids)]
    elif label_order != "kmeans":
        raise ConfigurationError(f"unknown label_order {label_order!r}")
    labels = kmeans_assign(centroids, ds.x)
    prior = np.bincount(labels, minlength=k) / float(ds.n)
    return UnitModel(centroids, ref, prior), ds.with_proxy(labels)


@dataclass
class AsymmetryReport:
    min_off_diagonal: float
    diagonal_zero: bool
    passed: bool
    gap_tol: float
    near_ties: list

    def to_dict(self) -> dict:
        return {
            "min_off_diagonal": self.min_off_diagonal,
            "diagonal_zero": self.diagonal_zero,
            "passed": self.passed,
            "gap_tol": self.gap_tol,
            "near_ties": self.near_ties,
        }


def asymmetry_check(model: UnitModel, gap_tol: float = 1e-3) -> AsymmetryReport:
    """Pass iff D has an exactly zero diagonal and every off-diagonal entry exceeds gap_tol."""
    d = model.dist_matrix
    k = d.shape[0]
    off = d[~np.eye(k, dtype=bool)]
    min_off = float(off.min()) if off.size else float("inf")
    diag_zero = bool(np.all(np.diag(d) == 0.0))
    iu = np.triu_indices(k, 1)
    ties = [[int(i), int(j)] for i, j in zip(*iu) if d[i, j] <= gap_tol]
    return AsymmetryReport(min_off, diag_zero, bool(diag_zero and min_off > gap_tol), gap_tol, ties)
