"""Crisis-corpus analytics: image theme clustering with human-in-the-loop
split/merge refinement, post-text labeling, and cross-modal statistics.

The package is organized around the analysis pipeline:

- :mod:`crisisimg.corpus` ingests and filters the post/image corpus,
- :mod:`crisisimg.embedding` loads or extracts image feature vectors,
- :mod:`crisisimg.cluster` groups images (K-means + silhouette model search),
- :mod:`crisisimg.refine` runs the consistency-guided split/merge loop,
- :mod:`crisisimg.textmodel` labels post text (themes and emotions),
- :mod:`crisisimg.stats` computes contingency/ANOVA/kappa statistics,
- :mod:`crisisimg.cli` orchestrates everything into report artifacts,
- :mod:`crisisimg.service` exposes refinement runs to human coders over HTTP.
"""

__version__ = "0.1.0"

from .errors import (
    CrisisImgError,
    DegenerateSplitError,
    EmbeddingFormatError,
    InvariantViolation,
    NeedsLabelsError,
)

__all__ = [
    "CrisisImgError",
    "DegenerateSplitError",
    "EmbeddingFormatError",
    "InvariantViolation",
    "NeedsLabelsError",
    "__version__",
]
