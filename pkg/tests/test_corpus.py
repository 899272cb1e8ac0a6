from __future__ import annotations

import json
import logging

import pytest

from crisisimg.corpus import (
    Corpus,
    CorpusStore,
    clusterable_images,
    dominant_visual_theme,
    engagement_summary,
    filter_analysis_set,
    ingest_posts,
)
from crisisimg.errors import DuplicateImageError, DuplicatePostError


def post_line(post_id, *, user="u1", created="2021-12-10T10:00:00+08:00",
              likes=0, comments=0, shares=0, original=True, images=()):
    return json.dumps(
        {
            "post_id": post_id,
            "user_id": user,
            "created_at": created,
            "text": f"text of {post_id}",
            "hashtags": ["XianEpidemic"],
            "likes": likes,
            "comments": comments,
            "shares": shares,
            "is_original": original,
            "images": [
                {"image_id": iid, "source": f"images/{iid}.png", "animated": anim}
                for iid, anim in images
            ],
        }
    )


def write_jsonl(tmp_path, lines, name="posts.jsonl"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def test_bundled_fixture_counts(minicorpus_dir):
    result = ingest_posts(minicorpus_dir / "posts.jsonl")
    s = result.summary
    assert s.n_posts == 60
    assert s.n_original_posts == 57
    assert s.n_images == 40
    assert s.n_static_images == 38
    assert s.n_distinct_users == 45
    assert s.n_rejected == 0
    assert result.rejected == []
    analysis = filter_analysis_set(result.corpus)
    assert len(analysis) == 57
    assert len(clusterable_images(result.corpus, analysis)) == 38


def test_empty_file(tmp_path):
    path = write_jsonl(tmp_path, [])
    result = ingest_posts(path)
    s = result.summary
    assert (s.n_posts, s.n_images, s.n_rejected) == (0, 0, 0)
    assert s.engagement_means["likes"] == 0.0


def test_malformed_lines_rejected_with_line_numbers(tmp_path):
    path = write_jsonl(
        tmp_path,
        [
            post_line("p1"),
            "{ not json",
            post_line("p2"),
            json.dumps({"post_id": "p3"}),  # missing fields
            post_line("p4", likes=-1),  # negative engagement
        ],
    )
    result = ingest_posts(path)
    assert result.summary.n_posts == 2
    assert [r["line"] for r in result.rejected] == [2, 4, 5]
    assert "likes" in result.rejected[2]["reason"]


def test_duplicate_post_id_is_error_naming_id(tmp_path):
    path = write_jsonl(tmp_path, [post_line("dup"), post_line("dup")])
    with pytest.raises(DuplicatePostError, match="dup"):
        ingest_posts(path)


def test_duplicate_image_id_is_error(tmp_path):
    path = write_jsonl(
        tmp_path,
        [
            post_line("p1", images=[("imgX", False)]),
            post_line("p2", images=[("imgX", False)]),
        ],
    )
    with pytest.raises(DuplicateImageError, match="imgX"):
        ingest_posts(path)


def test_unknown_fields_ignored_with_warning(tmp_path, caplog):
    obj = json.loads(post_line("p1"))
    obj["surprise"] = 1
    path = write_jsonl(tmp_path, [json.dumps(obj)])
    with caplog.at_level(logging.WARNING, logger="crisisimg.corpus"):
        result = ingest_posts(path)
    assert result.summary.n_posts == 1
    assert any("surprise" in rec.message for rec in caplog.records)


def test_timestamps_normalized_to_utc(tmp_path):
    path = write_jsonl(
        tmp_path, [post_line("p1", created="2021-12-10T08:00:00+08:00")]
    )
    post = ingest_posts(path).corpus.posts["p1"]
    assert post.created_at.isoformat() == "2021-12-10T00:00:00+00:00"
    path_z = write_jsonl(tmp_path, [post_line("pz", created="2021-12-10T08:00:00Z")],
                         name="z.jsonl")
    post_z = ingest_posts(path_z).corpus.posts["pz"]
    assert post_z.created_at.isoformat() == "2021-12-10T08:00:00+00:00"


def test_store_reingest_replaces_not_duplicates(tmp_path, minicorpus_dir):
    store = CorpusStore(tmp_path / "store")
    first = store.ingest(minicorpus_dir / "posts.jsonl")
    second = store.ingest(minicorpus_dir / "posts.jsonl")
    assert first.summary.to_dict() == second.summary.to_dict()
    assert second.summary.n_posts == 60
    # normalized source of record is byte-stable
    assert store.posts_path.read_bytes() == store.posts_path.read_bytes()


def test_store_reingest_updates_changed_record(tmp_path):
    store = CorpusStore(tmp_path / "store")
    store.ingest(write_jsonl(tmp_path, [post_line("p1", likes=1)], name="a.jsonl"))
    store.ingest(write_jsonl(tmp_path, [post_line("p1", likes=99)], name="b.jsonl"))
    corpus = store.load()
    assert len(corpus.posts) == 1
    assert corpus.posts["p1"].likes == 99


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------


def test_filter_returns_exactly_originals(tmp_path):
    path = write_jsonl(
        tmp_path,
        [post_line("a"), post_line("b", original=False), post_line("c")],
    )
    corpus = ingest_posts(path).corpus
    assert filter_analysis_set(corpus) == {"a", "c"}


def test_filter_no_originals(tmp_path):
    path = write_jsonl(tmp_path, [post_line("a", original=False)])
    assert filter_analysis_set(ingest_posts(path).corpus) == set()


def test_filter_is_idempotent_and_identity_when_all_original(tmp_path):
    path = write_jsonl(tmp_path, [post_line("a"), post_line("b")])
    corpus = ingest_posts(path).corpus
    selected = filter_analysis_set(corpus)
    assert selected == set(corpus.posts)
    trimmed = Corpus()
    for pid in selected:
        trimmed.add(corpus.posts[pid], corpus.post_images(pid))
    assert filter_analysis_set(trimmed) == selected


def test_clusterable_excludes_animated(tmp_path):
    path = write_jsonl(
        tmp_path,
        [post_line("p1", images=[("s1", False), ("g1", True)])],
    )
    corpus = ingest_posts(path).corpus
    assert clusterable_images(corpus, {"p1"}) == ["s1"]


# ---------------------------------------------------------------------------
# Engagement summaries
# ---------------------------------------------------------------------------


def three_post_corpus(tmp_path, likes):
    lines = [
        post_line(f"p{i}", likes=n,
                  images=[(f"i{i}", False)] if i == 0 else ())
        for i, n in enumerate(likes)
    ]
    return ingest_posts(write_jsonl(tmp_path, lines)).corpus


def test_engagement_constant_group(tmp_path):
    corpus = three_post_corpus(tmp_path, [10, 10, 10])
    rows = engagement_summary(corpus, corpus.posts, "without-images")
    likes = next(r for r in rows if r.index == "likes")
    assert (likes.n, likes.mean, likes.sd) == (2, 10.0, 0.0)


def test_engagement_population_sd(tmp_path):
    corpus = three_post_corpus(tmp_path, [0, 10])
    rows = engagement_summary(corpus, ["p0", "p1"], "by-visual-theme",
                              themes={"p0": "T", "p1": "T"})
    likes = next(r for r in rows if r.index == "likes")
    assert (likes.mean, likes.sd) == (5.0, 5.0)  # population sd, not sample


def test_engagement_partition_property(minicorpus_dir):
    corpus = ingest_posts(minicorpus_dir / "posts.jsonl").corpus
    analysis = filter_analysis_set(corpus)
    with_rows = engagement_summary(corpus, analysis, "with-images")
    without_rows = engagement_summary(corpus, analysis, "without-images")
    n_with = with_rows[0].n
    n_without = without_rows[0].n
    assert n_with + n_without == len(analysis)


def test_engagement_mean_bounded_by_extremes(minicorpus_dir):
    corpus = ingest_posts(minicorpus_dir / "posts.jsonl").corpus
    analysis = sorted(filter_analysis_set(corpus))
    for row in engagement_summary(corpus, analysis, "with-images"):
        values = [
            getattr(corpus.posts[i], row.index)
            for i in analysis
            if corpus.posts[i].image_ids
        ]
        assert min(values) <= row.mean <= max(values)


def test_engagement_unknown_grouping(tmp_path):
    corpus = three_post_corpus(tmp_path, [1, 2])
    with pytest.raises(ValueError, match="grouping"):
        engagement_summary(corpus, corpus.posts, "by-constellation")


# ---------------------------------------------------------------------------
# Dominant visual theme
# ---------------------------------------------------------------------------


def theme_corpus(tmp_path, images):
    path = write_jsonl(tmp_path, [post_line("p1", images=images)])
    return ingest_posts(path).corpus


def test_dominant_theme_strict_majority(tmp_path):
    corpus = theme_corpus(
        tmp_path, [("a", False), ("b", False), ("c", False)]
    )
    assignment = {"a": 0, "b": 0, "c": 3}
    assert dominant_visual_theme(corpus, "p1", assignment) == 0


def test_dominant_theme_none_without_static_images(tmp_path):
    corpus = theme_corpus(tmp_path, [("g", True)])
    assert dominant_visual_theme(corpus, "p1", {}) is None
    empty = theme_corpus(tmp_path, [])
    assert dominant_visual_theme(empty, "p1", {}) is None


def test_dominant_theme_tie_breaks_to_lowest_index(tmp_path):
    corpus = theme_corpus(tmp_path, [("a", False), ("b", False)])
    assert dominant_visual_theme(corpus, "p1", {"a": 4, "b": 2}) == 2


def test_dominant_theme_permutation_invariant(tmp_path):
    corpus = theme_corpus(
        tmp_path, [("a", False), ("b", False), ("c", False)]
    )
    assignment = {"a": 1, "b": 2, "c": 1}
    reversed_corpus = theme_corpus(
        tmp_path, [("c", False), ("b", False), ("a", False)]
    )
    assert dominant_visual_theme(corpus, "p1", assignment) == dominant_visual_theme(
        reversed_corpus, "p1", assignment
    )


def test_dominant_theme_missing_image_names_it(tmp_path):
    corpus = theme_corpus(tmp_path, [("a", False), ("b", False)])
    with pytest.raises(KeyError, match="'b'"):
        dominant_visual_theme(corpus, "p1", {"a": 0})
