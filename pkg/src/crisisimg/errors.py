"""Exception types shared across the package."""

from __future__ import annotations


class CrisisImgError(Exception):
    """Base class for all package-specific errors."""


class CorpusError(CrisisImgError):
    """Malformed or inconsistent corpus input."""


class DuplicatePostError(CorpusError):
    def __init__(self, post_id: str):
        super().__init__(f"duplicate post_id: {post_id!r}")
        self.post_id = post_id


class DuplicateImageError(CorpusError):
    def __init__(self, image_id: str):
        super().__init__(f"duplicate image_id: {image_id!r}")
        self.image_id = image_id


class EmbeddingFormatError(CrisisImgError):
    """Embedding file violates the CEMB/CSV contract."""


class BackendUnavailableError(CrisisImgError):
    """Feature-extraction backend cannot run in this environment."""


class NeedsLabelsError(CrisisImgError):
    """An operation required adjudicated labels that are not available yet."""


class DegenerateSplitError(CrisisImgError):
    """Cluster is inconsistent but has fewer than two significant themes.

    Carries the operator options so callers (CLI, HTTP service) can surface
    a machine-readable choice.
    """

    OPTIONS = ("force_split_2", "enlarge_sample", "accept")

    def __init__(self, cluster_index: int, significant_themes: list[str]):
        super().__init__(
            f"cluster {cluster_index} is inconsistent but has "
            f"{len(significant_themes)} significant theme(s); "
            f"options: {', '.join(self.OPTIONS)}"
        )
        self.cluster_index = cluster_index
        self.significant_themes = significant_themes


class InvariantViolation(CrisisImgError):
    """Internal consistency check failed; maps to CLI exit code 70."""


class ConfigError(CrisisImgError):
    """Invalid configuration value; maps to CLI exit code 64."""


class MissingStageError(CrisisImgError):
    """A pipeline stage was run before its prerequisites; CLI exit code 2."""

    def __init__(self, stage: str, missing: str):
        super().__init__(f"stage '{stage}' requires stage '{missing}' to run first")
        self.stage = stage
        self.missing = missing
