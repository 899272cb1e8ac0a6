from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from crisisimg.cluster import ClusterModel
from crisisimg.embedding import EmbeddingMatrix

DATA = Path(__file__).parent / "data"
MINICORPUS = DATA / "minicorpus"


@pytest.fixture(scope="session")
def minicorpus_dir() -> Path:
    return MINICORPUS


def make_blobs(
    centers: np.ndarray,
    per_blob: int,
    *,
    scale: float = 0.05,
    seed: int = 0,
    prefix: str = "img",
) -> tuple[EmbeddingMatrix, dict[str, int]]:
    """Well-separated Gaussian blobs with ids and ground-truth blob index."""
    rng = np.random.default_rng(seed)
    ids, rows, truth = [], [], {}
    counter = 0
    for b, center in enumerate(np.atleast_2d(centers)):
        block = center + rng.normal(scale=scale, size=(per_blob, len(center)))
        for r in range(per_blob):
            image_id = f"{prefix}{counter:04d}"
            counter += 1
            ids.append(image_id)
            rows.append(block[r])
            truth[image_id] = b
    return EmbeddingMatrix(ids, np.asarray(rows, dtype=np.float32)), truth


def manual_model(assignments: dict[str, int], dim: int = 4) -> ClusterModel:
    """ClusterModel with placeholder centroids, for protocol-level tests."""
    centroids = {j: np.zeros(dim) for j in sorted(set(assignments.values()))}
    return ClusterModel(
        assignments=dict(assignments),
        centroids=centroids,
        inertia=0.0,
        silhouette=None,
        seed=0,
    )


@pytest.fixture
def mixed_cluster_fixture():
    """Three initial clusters where one mixes two ground-truth themes
    40%/40%/20% (20 theme-A images, 20 theme-B images, and 10 more theme-B
    images in a separate lump), so its label prevalences are exactly
    A=0.40 / B=0.60."""
    centers = {
        "pureA": np.zeros(8),
        "pureB": np.full(8, 15.0),
        "mixA": np.full(8, 30.0),
        "mixB": np.full(8, 45.0),
        "mixB2": np.full(8, 47.0),
    }
    rng = np.random.default_rng(11)
    ids, rows, truth, assign = [], [], {}, {}

    def add(prefix, n, center, theme, cluster):
        block = center + rng.normal(scale=0.05, size=(n, 8))
        for t in range(n):
            image_id = f"{prefix}{t:03d}"
            ids.append(image_id)
            rows.append(block[t])
            truth[image_id] = theme
            assign[image_id] = cluster

    add("a", 60, centers["pureA"], "A", 0)
    add("b", 55, centers["pureB"], "B", 1)
    add("ma", 20, centers["mixA"], "A", 2)
    add("mb", 20, centers["mixB"], "B", 2)
    add("mc", 10, centers["mixB2"], "B", 2)
    matrix = EmbeddingMatrix(ids, np.asarray(rows, dtype=np.float32))
    model = manual_model(assign, dim=8)
    return matrix, model, truth
