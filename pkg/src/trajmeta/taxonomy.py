"""Trajectory-type taxonomy over configuration-level features.

Pipeline: z-score each feature (population std), PCA by eigendecomposition
of the covariance of the standardized matrix, k-means++ seeding followed by
Lloyd iterations in the projected space.  Component signs are fixed so the
largest-magnitude loading of each component is positive.  Cluster indices
are renumbered by first appearance in input order, so equivalent partitions
get identical labels regardless of seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .features import FEATURE_NAMES, ConfigFeatureSummary
from .rng import substream

log = logging.getLogger(__name__)

N_COMPONENTS = 3
TOL = 1e-8
MAX_ITER = 500
N_INIT = 10


@dataclass
class TaxonomyModel:
    feature_order: list[str]
    means: np.ndarray
    stds: np.ndarray
    components: np.ndarray
    centroids: np.ndarray
    k: int
    seed: int
    silhouette: float
    explained_variance: np.ndarray
    labels: list[int] = field(default_factory=list)
    dropped_features: list[str] = field(default_factory=list)
    inertia: float = 0.0

    def to_json(self) -> dict:
        return {
            "feature_order": list(self.feature_order),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "components": self.components.tolist(),
            "centroids": self.centroids.tolist(),
            "k": self.k,
            "seed": self.seed,
            "silhouette": self.silhouette,
            "explained_variance": self.explained_variance.tolist(),
            "labels": list(self.labels),
            "dropped_features": list(self.dropped_features),
            "inertia": self.inertia,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TaxonomyModel":
        try:
            m = cls(
                feature_order=list(d["feature_order"]),
                means=np.asarray(d["means"], float),
                stds=np.asarray(d["stds"], float),
                components=np.asarray(d["components"], float),
                centroids=np.asarray(d["centroids"], float),
                k=int(d["k"]),
                seed=int(d["seed"]),
                silhouette=float(d["silhouette"]),
                explained_variance=np.asarray(d["explained_variance"], float),
                labels=[int(x) for x in d.get("labels", [])],
                dropped_features=list(d.get("dropped_features", [])),
                inertia=float(d.get("inertia", 0.0)),
            )
        except KeyError as exc:
            raise ValueError(f"taxonomy model missing field {exc.args[0]}") from None
        p = len(m.feature_order)
        if m.means.shape != (p,) or m.stds.shape != (p,) or m.components.shape[1:] != (p,):
            raise ValueError("taxonomy model arrays do not match feature_order")
        if m.centroids.shape != (m.k, m.components.shape[0]):
            raise ValueError("taxonomy model centroids do not match k and components")
        return m

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TaxonomyModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def project(self, x: np.ndarray) -> np.ndarray:
        return ((np.asarray(x, float) - self.means) / self.stds) @ self.components.T


def standardize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    return (x - means) / np.where(stds > 0, stds, 1.0), means, stds


def pca(z: np.ndarray, n_components: int = N_COMPONENTS) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(components, eigenvalues, explained fractions)``, all eigenvalues returned descending."""
    cov = np.cov(z, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(-vals, kind="stable")
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    for j in range(vecs.shape[1]):
        if vecs[np.argmax(np.abs(vecs[:, j])), j] < 0:
            vecs[:, j] = -vecs[:, j]
    total = vals.sum()
    frac = vals / total if total > 0 else np.zeros_like(vals)
    m = min(n_components, vecs.shape[1])
    return vecs[:, :m].T.copy(), vals, frac[:m].copy()


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [int(rng.integers(n))]
    d2 = ((x - x[centers[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            nxt = int(rng.integers(n))
        else:
            nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        centers.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[centers].copy()


def _lloyd(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    k = len(centroids)
    for _ in range(MAX_ITER):
        d = cdist(x, centroids, "sqeuclidean")
        labels = np.argmin(d, axis=1)
        new = centroids.copy()
        for j in range(k):
            members = x[labels == j]
            if len(members):
                new[j] = members.mean(axis=0)
            else:
                # empty cluster takes the point farthest from its centroid
                far = int(np.argmax(d[np.arange(len(x)), labels]))
                new[j] = x[far]
        shift = float(np.max(np.sqrt(((new - centroids) ** 2).sum(axis=1))))
        centroids = new
        if shift <= TOL:
            break
    d = cdist(x, centroids, "sqeuclidean")
    labels = np.argmin(d, axis=1)
    inertia = float(d[np.arange(len(x)), labels].sum())
    return labels, centroids, inertia


def _canonical(labels: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order: list[int] = []
    for lab in labels:
        if lab not in order:
            order.append(int(lab))
    order += [j for j in range(len(centroids)) if j not in order]
    remap = np.empty(len(centroids), dtype=int)
    remap[order] = np.arange(len(order))
    return remap[labels], centroids[order]


def kmeans(x: np.ndarray, k: int, seed: int, n_init: int = N_INIT) -> tuple[np.ndarray, np.ndarray, float]:
    """Best of ``n_init`` k-means++ starts by inertia; earlier starts win ties."""
    best = None
    for i in range(n_init):
        labels, centroids, inertia = _lloyd(x, _kmeanspp(x, k, substream(seed, "kmeans", i)))
        if best is None or inertia < best[2] - 1e-12:
            best = (labels, centroids, inertia)
    labels, centroids = _canonical(best[0], best[1])
    return labels, centroids, best[2]


def silhouette(x: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette; points in singleton clusters score 0."""
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2 or len(uniq) >= len(x):
        return 0.0
    d = cdist(x, x)
    s = np.zeros(len(x))
    for i in range(len(x)):
        own = labels == labels[i]
        if own.sum() <= 1:
            continue
        a = d[i, own].sum() / (own.sum() - 1)
        b = min(d[i, labels == c].mean() for c in uniq if c != labels[i])
        m = max(a, b)
        s[i] = (b - a) / m if m > 0 else 0.0
    return float(s.mean())


def _matrix(summaries: Sequence[ConfigFeatureSummary], names: Sequence[str]) -> np.ndarray:
    return np.array([s.vector(names) for s in summaries], float).reshape(len(summaries), len(names))


def fit_matrix(x: np.ndarray, names: Sequence[str], k: int = 5, seed: int = 0,
               n_components: int = N_COMPONENTS) -> TaxonomyModel:
    x = np.asarray(x, float)
    if k < 2:
        raise ValueError("k must be at least 2")
    if len(x) < k:
        raise ValueError(f"need at least k={k} configurations, got {len(x)}")
    stds = x.std(axis=0)
    keep = stds > 0
    dropped = [n for n, ok in zip(names, keep) if not ok]
    if dropped:
        log.warning("dropping constant feature(s): %s", ", ".join(dropped))
    if not keep.any():
        raise ValueError("every feature is constant")
    x = x[:, keep]
    names = [n for n, ok in zip(names, keep) if ok]
    z, means, stds = standardize(x)
    components, _, explained = pca(z, n_components)
    proj = z @ components.T
    if len(np.unique(proj.round(12), axis=0)) < k:
        raise ValueError(f"fewer than k={k} distinct configurations in the projected space")
    labels, centroids, inertia = kmeans(proj, k, seed)
    return TaxonomyModel(
        feature_order=list(names), means=means, stds=stds, components=components,
        centroids=centroids, k=k, seed=seed, silhouette=silhouette(proj, labels),
        explained_variance=explained, labels=[int(v) + 1 for v in labels],
        dropped_features=dropped, inertia=inertia,
    )


def fit_taxonomy(summaries: Sequence[ConfigFeatureSummary], k: int = 5, seed: int = 0,
                 names: Sequence[str] = FEATURE_NAMES) -> TaxonomyModel:
    """Fit the taxonomy; ``labels`` are 1-based types in input order."""
    return fit_matrix(_matrix(summaries, names), names, k, seed)


def assign_vector(model: TaxonomyModel, x) -> tuple[int, float]:
    p = model.project(np.asarray(x, float).reshape(1, -1))
    d = np.sqrt(((model.centroids - p) ** 2).sum(axis=1))
    j = int(np.argmin(d))  # first minimum: ties go to the lower index
    return j + 1, float(d[j])


def assign_type(model: TaxonomyModel, summary: ConfigFeatureSummary) -> tuple[int, float]:
    """Nearest-centroid type in ``1..k`` and its Euclidean distance in PCA space."""
    return assign_vector(model, summary.vector(model.feature_order))


def sweep(summaries: Sequence[ConfigFeatureSummary], ks: Sequence[int] = (4, 5, 6),
          seed: int = 0) -> list[tuple[int, float]]:
    x = _matrix(summaries, FEATURE_NAMES)
    return [(k, fit_matrix(x, FEATURE_NAMES, k, seed).silhouette) for k in ks]
