"""Post/image corpus: JSONL ingestion, validation, filtering, persistence,
and descriptive engagement statistics.

Input is one JSON object per line with exactly these fields: ``post_id,
user_id, created_at (ISO-8601), text, hashtags (array), likes, comments,
shares, is_original (bool), images (array of {image_id, source,
animated})``. Unknown fields are ignored with a warning; malformed lines
are rejected (with line number and reason) without aborting the run;
duplicate IDs abort.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CorpusError, DuplicateImageError, DuplicatePostError

logger = logging.getLogger(__name__)

ENGAGEMENT_INDEXES = ("likes", "comments", "shares")

_POST_FIELDS = {
    "post_id",
    "user_id",
    "created_at",
    "text",
    "hashtags",
    "likes",
    "comments",
    "shares",
    "is_original",
    "images",
}
_IMAGE_FIELDS = {"image_id", "source", "animated"}


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    post_id: str
    source: str
    animated: bool


@dataclass(frozen=True)
class Post:
    post_id: str
    user_id: str
    created_at: datetime  # aware, UTC
    text: str
    hashtags: tuple[str, ...]
    likes: int
    comments: int
    shares: int
    is_original: bool
    image_ids: tuple[str, ...]


@dataclass
class CorpusSummary:
    n_posts: int
    n_original_posts: int
    n_distinct_users: int
    n_posts_with_images: int
    n_images: int
    n_static_images: int
    n_rejected: int
    engagement_means: dict[str, float]
    engagement_sds: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "n_posts": self.n_posts,
            "n_original_posts": self.n_original_posts,
            "n_distinct_users": self.n_distinct_users,
            "n_posts_with_images": self.n_posts_with_images,
            "n_images": self.n_images,
            "n_static_images": self.n_static_images,
            "n_rejected": self.n_rejected,
            "engagement_means": dict(sorted(self.engagement_means.items())),
            "engagement_sds": dict(sorted(self.engagement_sds.items())),
        }


def _parse_timestamp(raw: str) -> datetime:
    text = raw.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _require(obj: dict, key: str, kinds, line_no: int):
    if key not in obj:
        raise CorpusError(f"line {line_no}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, kinds):
        raise CorpusError(
            f"line {line_no}: field {key!r} has type {type(value).__name__}"
        )
    return value


def _parse_post(obj: dict, line_no: int) -> tuple[Post, list[ImageRecord]]:
    if not isinstance(obj, dict):
        raise CorpusError(f"line {line_no}: not a JSON object")
    unknown = set(obj) - _POST_FIELDS
    for key in sorted(unknown):
        logger.warning("line %d: ignoring unknown field %r", line_no, key)

    post_id = _require(obj, "post_id", str, line_no)
    if not post_id:
        raise CorpusError(f"line {line_no}: empty post_id")
    user_id = _require(obj, "user_id", str, line_no)
    try:
        created_at = _parse_timestamp(_require(obj, "created_at", str, line_no))
    except ValueError as exc:
        raise CorpusError(f"line {line_no}: bad created_at: {exc}") from exc
    text = _require(obj, "text", str, line_no)
    hashtags = _require(obj, "hashtags", list, line_no)
    if not all(isinstance(h, str) for h in hashtags):
        raise CorpusError(f"line {line_no}: hashtags must be strings")
    counts = {}
    for key in ENGAGEMENT_INDEXES:
        value = _require(obj, key, int, line_no)
        if isinstance(value, bool) or value < 0:
            raise CorpusError(f"line {line_no}: field {key!r} must be a non-negative integer")
        counts[key] = value
    is_original = _require(obj, "is_original", bool, line_no)

    images_raw = _require(obj, "images", list, line_no)
    images = []
    for pos, img in enumerate(images_raw):
        if not isinstance(img, dict):
            raise CorpusError(f"line {line_no}: images[{pos}] is not an object")
        for key in sorted(set(img) - _IMAGE_FIELDS):
            logger.warning(
                "line %d: ignoring unknown image field %r", line_no, key
            )
        image_id = _require(img, "image_id", str, line_no)
        if not image_id:
            raise CorpusError(f"line {line_no}: empty image_id")
        source = _require(img, "source", str, line_no)
        animated = _require(img, "animated", bool, line_no)
        images.append(
            ImageRecord(image_id=image_id, post_id=post_id, source=source,
                        animated=animated)
        )

    post = Post(
        post_id=post_id,
        user_id=user_id,
        created_at=created_at,
        text=text,
        hashtags=tuple(hashtags),
        likes=counts["likes"],
        comments=counts["comments"],
        shares=counts["shares"],
        is_original=is_original,
        image_ids=tuple(img.image_id for img in images),
    )
    return post, images


class Corpus:
    """Immutable-after-ingest snapshot of posts and their image records."""

    def __init__(self) -> None:
        self.posts: dict[str, Post] = {}
        self.images: dict[str, ImageRecord] = {}

    def __len__(self) -> int:
        return len(self.posts)

    def add(self, post: Post, images: Sequence[ImageRecord]) -> None:
        if post.post_id in self.posts:
            raise DuplicatePostError(post.post_id)
        for img in images:
            if img.image_id in self.images:
                raise DuplicateImageError(img.image_id)
        self.posts[post.post_id] = post
        for img in images:
            self.images[img.image_id] = img

    def replace(self, post: Post, images: Sequence[ImageRecord]) -> None:
        """Append-replace semantics used when re-ingesting into a store."""
        old = self.posts.pop(post.post_id, None)
        if old is not None:
            for image_id in old.image_ids:
                self.images.pop(image_id, None)
        self.add(post, images)

    def post_images(self, post_id: str) -> list[ImageRecord]:
        return [self.images[i] for i in self.posts[post_id].image_ids]

    def static_images(self, post_id: str) -> list[ImageRecord]:
        return [img for img in self.post_images(post_id) if not img.animated]

    def summary(self, n_rejected: int = 0) -> CorpusSummary:
        posts = list(self.posts.values())
        originals = [p for p in posts if p.is_original]
        n_static = sum(1 for img in self.images.values() if not img.animated)
        means: dict[str, float] = {}
        sds: dict[str, float] = {}
        # engagement described over the analysis set (original posts)
        for index in ENGAGEMENT_INDEXES:
            values = np.array([getattr(p, index) for p in originals], dtype=np.float64)
            means[index] = float(values.mean()) if values.size else 0.0
            sds[index] = float(values.std()) if values.size else 0.0
        return CorpusSummary(
            n_posts=len(posts),
            n_original_posts=len(originals),
            n_distinct_users=len({p.user_id for p in posts}),
            n_posts_with_images=sum(1 for p in originals if p.image_ids),
            n_images=len(self.images),
            n_static_images=n_static,
            n_rejected=n_rejected,
            engagement_means=means,
            engagement_sds=sds,
        )

    def to_jsonl(self) -> str:
        """Normalized JSONL (sorted by post_id), the store's source of record."""
        lines = []
        for post_id in sorted(self.posts):
            post = self.posts[post_id]
            lines.append(
                json.dumps(
                    {
                        "post_id": post.post_id,
                        "user_id": post.user_id,
                        "created_at": post.created_at.isoformat(),
                        "text": post.text,
                        "hashtags": list(post.hashtags),
                        "likes": post.likes,
                        "comments": post.comments,
                        "shares": post.shares,
                        "is_original": post.is_original,
                        "images": [
                            {
                                "image_id": img.image_id,
                                "source": img.source,
                                "animated": img.animated,
                            }
                            for img in self.post_images(post_id)
                        ],
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
            )
        return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class IngestResult:
    corpus: Corpus
    summary: CorpusSummary
    rejected: list[dict] = field(default_factory=list)  # {"line": int, "reason": str}


def ingest_posts(path, *, into: Corpus | None = None, replace: bool = False) -> IngestResult:
    """Ingest a corpus-JSONL file.

    Malformed lines are rejected and reported with their line number; the
    run continues. Duplicate post/image IDs within the input raise. With
    ``into``/``replace`` the records land in an existing corpus,
    replacing same-ID posts instead of duplicating them.
    """
    path = Path(path)
    corpus = into if into is not None else Corpus()
    seen_posts: set[str] = set()
    seen_images: set[str] = set()
    rejected: list[dict] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                rejected.append({"line": line_no, "reason": f"invalid JSON: {exc.msg}"})
                continue
            try:
                post, images = _parse_post(obj, line_no)
            except CorpusError as exc:
                rejected.append({"line": line_no, "reason": str(exc)})
                continue
            if post.post_id in seen_posts:
                raise DuplicatePostError(post.post_id)
            seen_posts.add(post.post_id)
            for img in images:
                if img.image_id in seen_images:
                    raise DuplicateImageError(img.image_id)
                seen_images.add(img.image_id)
            if replace:
                corpus.replace(post, images)
            else:
                corpus.add(post, images)
    return IngestResult(corpus, corpus.summary(n_rejected=len(rejected)), rejected)


class CorpusStore:
    """Single-directory corpus store: normalized posts.jsonl as the source
    of record plus derived summary/rejects. Re-ingesting replaces records
    with matching post IDs (append-replace), never duplicates them."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.posts_path = self.directory / "posts.jsonl"
        self.summary_path = self.directory / "summary.json"
        self.rejected_path = self.directory / "rejected.jsonl"

    def exists(self) -> bool:
        return self.posts_path.exists()

    def load(self) -> Corpus:
        return ingest_posts(self.posts_path).corpus

    def ingest(self, path) -> IngestResult:
        self.directory.mkdir(parents=True, exist_ok=True)
        corpus = self.load() if self.exists() else Corpus()
        result = ingest_posts(path, into=corpus, replace=True)
        self.posts_path.write_text(result.corpus.to_jsonl(), encoding="utf-8")
        self.summary_path.write_text(
            json.dumps(result.summary.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        with open(self.rejected_path, "w", encoding="utf-8") as fh:
            for record in result.rejected:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        return result


# ---------------------------------------------------------------------------
# Analysis-set filtering and descriptive statistics
# ---------------------------------------------------------------------------


def filter_analysis_set(corpus: Corpus) -> set[str]:
    """Original posts only; may be empty."""
    return {p.post_id for p in corpus.posts.values() if p.is_original}


def clusterable_images(corpus: Corpus, post_ids: Iterable[str]) -> list[str]:
    """Static images belonging to the given posts (the clustering universe)."""
    out = []
    for post_id in sorted(post_ids):
        out.extend(img.image_id for img in corpus.static_images(post_id))
    return out


@dataclass(frozen=True)
class EngagementRow:
    group: str
    index: str
    n: int
    mean: float
    sd: float


def engagement_summary(
    corpus: Corpus,
    post_ids: Iterable[str],
    grouping: str,
    *,
    themes: Mapping[str, str] | None = None,
) -> list[EngagementRow]:
    """Mean and population standard deviation per engagement index.

    Groupings: ``with-images`` / ``without-images`` (the two sides of the
    has-image partition) or ``by-visual-theme`` (requires a post->theme
    mapping; unthemed posts are skipped). Single-post groups report sd=0.
    """
    ids = sorted(post_ids)
    groups: dict[str, list[str]] = {}
    if grouping == "with-images":
        groups["with-images"] = [i for i in ids if corpus.posts[i].image_ids]
    elif grouping == "without-images":
        groups["without-images"] = [i for i in ids if not corpus.posts[i].image_ids]
    elif grouping == "by-visual-theme":
        if themes is None:
            raise ValueError("by-visual-theme grouping needs a themes mapping")
        for i in ids:
            theme = themes.get(i)
            if theme is not None:
                groups.setdefault(str(theme), []).append(i)
    else:
        raise ValueError(f"unknown grouping {grouping!r}")

    rows = []
    for group in sorted(groups):
        members = groups[group]
        if not members:
            continue
        for index in ENGAGEMENT_INDEXES:
            values = np.array(
                [getattr(corpus.posts[i], index) for i in members], dtype=np.float64
            )
            rows.append(
                EngagementRow(
                    group=group,
                    index=index,
                    n=len(members),
                    mean=float(values.mean()),
                    sd=float(values.std()),  # population sd; 0 for n=1
                )
            )
    return rows


def dominant_visual_theme(
    corpus: Corpus, post_id: str, assignment: Mapping[str, int]
) -> int | None:
    """Most frequent cluster index among a post's static images.

    Returns None for posts with no static images. Ties break to the
    lowest cluster index (canonical theme order is ascending final-cluster
    index), which makes the result independent of image order.
    """
    static = corpus.static_images(post_id)
    if not static:
        return None
    counts: dict[int, int] = {}
    for img in static:
        if img.image_id not in assignment:
            raise KeyError(f"image {img.image_id!r} missing from assignment")
        cluster = int(assignment[img.image_id])
        counts[cluster] = counts.get(cluster, 0) + 1
    return min(counts, key=lambda c: (-counts[c], c))
