"""K-means clustering with silhouette-based model selection.

Two layers: a numeric, sklearn-style :class:`KMeans` estimator over plain
arrays, and the ID-aware :class:`ClusterModel` produced from an
:class:`~crisisimg.embedding.EmbeddingMatrix`. All distance accumulation
runs in float64 regardless of input dtype; everything is deterministic
given the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .base import BaseEstimator
from .embedding import EmbeddingMatrix, load_embeddings, save_embeddings
from .errors import InvariantViolation
from .validation import check_array

__all__ = [
    "ClusterModel",
    "KMeans",
    "KSearchResult",
    "cluster_embeddings",
    "load_model",
    "save_model",
    "search_k",
    "silhouette_score",
]

# full pairwise silhouette up to this many points; uniform subsample above
SILHOUETTE_MAX_POINTS = 20_000
_BLOCK = 1024


def _pairwise_sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of X and rows of C."""
    d2 = (
        np.einsum("ij,ij->i", X, X)[:, None]
        - 2.0 * (X @ C.T)
        + np.einsum("ij,ij->i", C, C)[None, :]
    )
    return np.maximum(d2, 0.0, out=d2)


def _kmeanspp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: subsequent centers drawn proportionally to the
    squared distance from the nearest already-chosen center."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    centers[0] = X[int(rng.integers(n))]
    closest = _pairwise_sq_dists(X, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total > 0.0:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))  # all remaining points coincide
        centers[j] = X[idx]
        np.minimum(closest, _pairwise_sq_dists(X, centers[j : j + 1])[:, 0], out=closest)
    return centers


def _repair_empty(labels: np.ndarray, point_d2: np.ndarray, k: int) -> bool:
    """Reassign the point farthest from its centroid to each empty cluster."""
    changed = False
    counts = np.bincount(labels, minlength=k)
    stealable = point_d2.copy()
    for empty in np.flatnonzero(counts == 0):
        donor = int(np.argmax(stealable))
        counts[labels[donor]] -= 1
        labels[donor] = empty
        counts[empty] += 1
        stealable[donor] = -1.0  # a stolen point cannot move again
        changed = True
    return changed


def _lloyd(
    X: np.ndarray,
    centers: np.ndarray,
    max_iter: int,
    tol: float,
) -> tuple[np.ndarray, np.ndarray, float, int]:
    """Lloyd iterations; returns (labels, exact-mean centers, inertia, n_iter)."""
    k = centers.shape[0]
    prev_inertia = np.inf
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = _pairwise_sq_dists(X, centers)
        labels = d2.argmin(axis=1)
        point_d2 = d2[np.arange(X.shape[0]), labels]
        inertia = float(point_d2.sum())
        if inertia > prev_inertia * (1.0 + 1e-12) + 1e-9:
            raise InvariantViolation(
                f"inertia increased across Lloyd iterations: "
                f"{prev_inertia} -> {inertia}"
            )
        prev_inertia = inertia
        _repair_empty(labels, point_d2, k)
        new_centers = np.zeros_like(centers)
        np.add.at(new_centers, labels, X)
        counts = np.bincount(labels, minlength=k).astype(np.float64)
        new_centers /= counts[:, None]
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if shift < tol:
            break
    # final exact bookkeeping: centers are the means of the final partition
    d2 = _pairwise_sq_dists(X, centers)
    labels = d2.argmin(axis=1)
    point_d2 = d2[np.arange(X.shape[0]), labels]
    _repair_empty(labels, point_d2, k)
    centers = np.zeros_like(centers)
    np.add.at(centers, labels, X)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    centers /= counts[:, None]
    inertia = float(
        ((X - centers[labels]) ** 2).sum()
    )
    return labels, centers, inertia, n_iter


class KMeans(BaseEstimator):
    """Lloyd's algorithm with k-means++ seeding and empty-cluster repair.

    Deterministic given (X, parameters, random_state). ``n_init`` restarts
    are run from independently derived seeds and the lowest-inertia fit is
    kept. Assignment uses squared Euclidean distance; accumulation is
    float64.

    Attributes after fit: ``cluster_centers_``, ``labels_``, ``inertia_``,
    ``n_iter_``.
    """

    def __init__(
        self,
        n_clusters: int = 8,
        n_init: int = 8,
        max_iter: int = 300,
        tol: float = 1e-6,
        random_state: int = 0,
    ):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X) -> "KMeans":
        X = check_array(X, dtype=np.float64)
        n = X.shape[0]
        if self.n_clusters < 1:
            raise ValueError(f"n_clusters must be >= 1, got {self.n_clusters}")
        if n < self.n_clusters:
            raise ValueError(
                f"n_samples={n} must be >= n_clusters={self.n_clusters}"
            )
        if self.tol < 0:
            raise ValueError(f"tol must be >= 0, got {self.tol}")
        best = None
        root = np.random.SeedSequence(self.random_state)
        for child in root.spawn(max(1, self.n_init)):
            rng = np.random.Generator(np.random.PCG64(child))
            centers = _kmeanspp_init(X, self.n_clusters, rng)
            labels, centers, inertia, n_iter = _lloyd(
                X, centers, self.max_iter, self.tol
            )
            if best is None or inertia < best[2]:
                best = (labels, centers, inertia, n_iter)
        self.labels_, self.cluster_centers_, self.inertia_, self.n_iter_ = best
        return self

    def predict(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float64)
        return _pairwise_sq_dists(X, self.cluster_centers_).argmin(axis=1)

    def fit_predict(self, X) -> np.ndarray:
        return self.fit(X).labels_


def silhouette_score(
    X,
    labels,
    *,
    max_points: int = SILHOUETTE_MAX_POINTS,
    sample_seed: int = 0,
) -> float:
    """Mean silhouette s = (b - a) / max(a, b) with Euclidean distances.

    a is the mean intra-cluster distance excluding self; b the smallest
    mean distance to any other cluster. Singleton clusters contribute 0,
    as does a point with a = b = 0 (coincident degenerate case). Above
    ``max_points`` rows a fixed-seed uniform subsample is scored instead.
    """
    X = check_array(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != X.shape[0]:
        raise ValueError("labels must align with rows of X")
    uniq = np.unique(labels)
    if uniq.shape[0] < 2:
        raise ValueError("silhouette undefined for fewer than 2 clusters")
    if X.shape[0] < 3:
        raise ValueError("silhouette needs at least 3 points")
    if X.shape[0] > max_points:
        rng = np.random.default_rng(sample_seed)
        keep = np.sort(rng.choice(X.shape[0], size=max_points, replace=False))
        X = X[keep]
        labels = labels[keep]
        uniq = np.unique(labels)
        if uniq.shape[0] < 2:  # subsample lost a cluster; extremely lopsided data
            raise ValueError("silhouette subsample retained fewer than 2 clusters")

    remap = {int(c): i for i, c in enumerate(uniq)}
    lab = np.asarray([remap[int(c)] for c in labels], dtype=np.int64)
    k = uniq.shape[0]
    n = X.shape[0]
    counts = np.bincount(lab, minlength=k).astype(np.float64)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), lab] = 1.0

    scores = np.empty(n)
    sq_norms = np.einsum("ij,ij->i", X, X)
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        block = X[start:stop]
        d2 = (
            sq_norms[start:stop][:, None]
            - 2.0 * (block @ X.T)
            + sq_norms[None, :]
        )
        dist = np.sqrt(np.maximum(d2, 0.0))
        dist[np.arange(stop - start), np.arange(start, stop)] = 0.0
        cluster_sums = dist @ onehot  # (b, k)
        for i in range(stop - start):
            ci = lab[start + i]
            if counts[ci] <= 1:
                scores[start + i] = 0.0
                continue
            a = cluster_sums[i, ci] / (counts[ci] - 1.0)
            others = [
                cluster_sums[i, j] / counts[j] for j in range(k) if j != ci
            ]
            b = min(others)
            denom = max(a, b)
            scores[start + i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


# ---------------------------------------------------------------------------
# ID-aware model over embedding matrices
# ---------------------------------------------------------------------------


@dataclass
class ClusterModel:
    """Clustering of an embedding matrix with stable image IDs.

    ``assignments`` maps image id -> cluster index. Indices start as
    0..k-1 out of k-means; the refinement loop may retire an index when a
    cluster splits and append fresh ones, so live indices are whatever
    appears in ``assignments``. ``centroids`` maps each live index to its
    float64 centroid; ``lineage`` maps a split-born index to its parent;
    ``themes`` maps index -> theme name once a merge has named clusters.
    """

    assignments: dict[str, int]
    centroids: dict[int, np.ndarray]
    inertia: float
    silhouette: float | None
    seed: int
    lineage: dict[int, int] = field(default_factory=dict)
    themes: dict[int, str] | None = None

    @property
    def k(self) -> int:
        return len(self.cluster_indices())

    def cluster_indices(self) -> list[int]:
        return sorted(set(self.assignments.values()))

    def members(self, cluster_index: int) -> list[str]:
        ids = [i for i, c in self.assignments.items() if c == cluster_index]
        if not ids:
            raise KeyError(f"unknown or empty cluster {cluster_index}")
        return sorted(ids)

    def sizes(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for c in self.assignments.values():
            out[c] = out.get(c, 0) + 1
        return dict(sorted(out.items()))

    def theme_of(self, cluster_index: int) -> str:
        if self.themes is None:
            raise ValueError("model has no theme names yet (run a merge)")
        return self.themes[cluster_index]

    def check_partition(self, expected_ids) -> None:
        """Assert the model covers exactly the given image ids, once each."""
        have = set(self.assignments)
        want = set(expected_ids)
        if have != want:
            lost = sorted(want - have)[:5]
            extra = sorted(have - want)[:5]
            raise InvariantViolation(
                f"cluster partition broken (lost {lost}, extra {extra})"
            )

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "assignments": dict(sorted(self.assignments.items())),
            "inertia": self.inertia,
            "silhouette": self.silhouette,
            "seed": self.seed,
            "lineage": {str(k): v for k, v in sorted(self.lineage.items())},
            "themes": (
                None
                if self.themes is None
                else {str(k): v for k, v in sorted(self.themes.items())}
            ),
        }


def cluster_embeddings(
    matrix: EmbeddingMatrix,
    k: int,
    *,
    seed: int = 0,
    restarts: int = 8,
    max_iter: int = 300,
    tol: float = 1e-6,
    compute_silhouette: bool = True,
) -> ClusterModel:
    """Fit k-means on an embedding matrix and wrap the result with IDs."""
    est = KMeans(
        n_clusters=k, n_init=restarts, max_iter=max_iter, tol=tol, random_state=seed
    ).fit(matrix.values)
    sil = None
    if compute_silhouette and k >= 2 and matrix.n >= 3:
        sil = silhouette_score(matrix.values, est.labels_)
    return ClusterModel(
        assignments={i: int(c) for i, c in zip(matrix.ids, est.labels_)},
        centroids={j: est.cluster_centers_[j].copy() for j in range(k)},
        inertia=est.inertia_,
        silhouette=sil,
        seed=seed,
    )


@dataclass
class KSearchResult:
    candidates: list[tuple[int, float]]
    chosen_k: int

    @property
    def chosen_silhouette(self) -> float:
        return dict(self.candidates)[self.chosen_k]

    def to_dict(self) -> dict:
        return {
            "candidates": [[k, s] for k, s in self.candidates],
            "chosen_k": self.chosen_k,
        }


def search_k(
    matrix: EmbeddingMatrix,
    k_min: int,
    k_max: int,
    *,
    seed: int = 0,
    restarts: int = 8,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> tuple[KSearchResult, ClusterModel]:
    """Silhouette-maximizing K over [k_min, k_max]; ties go to smallest K.

    Each candidate K keeps the best of ``restarts`` k-means fits by
    inertia before scoring.
    """
    if not (2 <= k_min <= k_max <= matrix.n):
        raise ValueError(
            f"need 2 <= k_min <= k_max <= n, got k_min={k_min}, "
            f"k_max={k_max}, n={matrix.n}"
        )
    candidates: list[tuple[int, float]] = []
    best_model: ClusterModel | None = None
    for k in range(k_min, k_max + 1):
        k_seed = int(np.random.SeedSequence((seed, k)).generate_state(1)[0])
        model = cluster_embeddings(
            matrix, k, seed=k_seed, restarts=restarts, max_iter=max_iter, tol=tol
        )
        candidates.append((k, float(model.silhouette)))
        if best_model is None or model.silhouette > best_model.silhouette:
            best_model = model
    chosen_k = best_model.k
    return KSearchResult(candidates, chosen_k), best_model


def save_model(model: ClusterModel, json_path, centroids_path) -> None:
    """JSON assignments plus a CEMB centroid block (ids = cluster indices)."""
    doc = model.to_dict()
    doc["centroids_file"] = str(Path(centroids_path).name)
    Path(json_path).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    indices = model.cluster_indices()
    values = np.stack([model.centroids[j] for j in indices]).astype(np.float32)
    save_embeddings(
        EmbeddingMatrix([str(j) for j in indices], values, backend_tag="centroids"),
        centroids_path,
    )


def load_model(json_path, centroids_path) -> ClusterModel:
    doc = json.loads(Path(json_path).read_text(encoding="utf-8"))
    cent = load_embeddings(centroids_path)
    centroids = {
        int(cid): cent.values[i].astype(np.float64)
        for i, cid in enumerate(cent.ids)
    }
    themes = doc.get("themes")
    return ClusterModel(
        assignments={i: int(c) for i, c in doc["assignments"].items()},
        centroids=centroids,
        inertia=float(doc["inertia"]),
        silhouette=None if doc["silhouette"] is None else float(doc["silhouette"]),
        seed=int(doc["seed"]),
        lineage={int(k): int(v) for k, v in doc.get("lineage", {}).items()},
        themes=None if themes is None else {int(k): v for k, v in themes.items()},
    )
