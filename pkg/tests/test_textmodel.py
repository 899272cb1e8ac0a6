from __future__ import annotations

import numpy as np
import pytest

from crisisimg.textmodel import (
    CharNgramClassifier,
    EmotionType,
    InfoTheme,
    LabeledExample,
    evaluate,
    ingest_predictions,
    load_classifier,
    train_baseline,
)


KEYWORDS = {
    "class0": ["lockdown", "notice", "policy"],
    "class1": ["grateful", "thanks", "nurse"],
    "class2": ["noodles", "dinner", "cook"],
    "class3": ["park", "street", "walk"],
}
FILLER = ["the", "a", "of", "day", "city", "we", "see", "time", "go", "now"]


def keyword_dataset(n, seed=0):
    """Synthetic classed texts with class-specific keywords."""
    rng = np.random.default_rng(seed)
    classes = sorted(KEYWORDS)
    texts, labels = [], []
    for _ in range(n):
        cls = classes[int(rng.integers(len(classes)))]
        words = [KEYWORDS[cls][int(rng.integers(3))] for _ in range(int(rng.integers(1, 4)))]
        words += [FILLER[int(rng.integers(len(FILLER)))] for _ in range(int(rng.integers(4, 10)))]
        rng.shuffle(words)
        texts.append(" ".join(words))
        labels.append(cls)
    return texts, labels


# ---------------------------------------------------------------------------
# Enumerations
# ---------------------------------------------------------------------------


def test_label_enumerations_spelled_exactly():
    assert [m.value for m in InfoTheme] == [
        "SituationalInformation", "AttitudeDisclosure", "LifeRecording",
        "LatestPolicies",
    ]
    assert [m.value for m in EmotionType] == [
        "Hopeful", "Appreciative", "Neutral", "Annoyed", "Anxious",
    ]


# ---------------------------------------------------------------------------
# Baseline classifier
# ---------------------------------------------------------------------------


def test_trivially_separable_classes():
    texts = ["aaaaaa"] * 10 + ["bbbbbb"] * 10
    labels = ["A"] * 10 + ["B"] * 10
    clf = CharNgramClassifier().fit(texts, labels)
    assert clf.predict("aaa") == "A"
    assert clf.predict("bbbb") == "B"
    held = {"1": clf.predict("aaaaa"), "2": clf.predict("bbb")}
    assert evaluate(held, {"1": "A", "2": "B"}).micro_f1 == 1.0


def test_single_class_training_set_rejected():
    with pytest.raises(ValueError, match="2 classes"):
        CharNgramClassifier().fit(["aa", "ab"], ["A", "A"])


def test_empty_training_text_rejected():
    with pytest.raises(ValueError):
        CharNgramClassifier().fit(["aa", ""], ["A", "B"])


def test_empty_text_predicts_prior_majority():
    texts = ["xxxx"] * 7 + ["yyyy"] * 3
    labels = ["X"] * 7 + ["Y"] * 3
    clf = CharNgramClassifier().fit(texts, labels)
    assert clf.predict("") == "X"


def test_training_examples_repredicted():
    texts = ["aaaa", "bbbb", "aaab", "bbba"]
    labels = ["A", "B", "A", "B"]
    clf = CharNgramClassifier().fit(texts, labels)
    assert clf.predict_many(texts) == labels


def test_keyword_fixture_micro_f1_at_least_090():
    texts, labels = keyword_dataset(1200, seed=0)
    clf = CharNgramClassifier().fit(texts[:1000], labels[:1000])
    preds = {str(i): clf.predict(texts[1000 + i]) for i in range(200)}
    gold = {str(i): labels[1000 + i] for i in range(200)}
    report = evaluate(preds, gold)
    assert report.n == 200
    assert report.micro_f1 >= 0.9


def test_keyword_class_maps_to_its_class():
    texts, labels = keyword_dataset(1000, seed=1)
    clf = CharNgramClassifier().fit(texts, labels)
    assert clf.predict("noodles dinner cook") == "class2"


def test_training_is_deterministic():
    texts, labels = keyword_dataset(600, seed=2)
    reports = []
    for _ in range(2):
        clf = CharNgramClassifier(seed=0).fit(texts[:500], labels[:500])
        preds = {str(i): clf.predict(texts[500 + i]) for i in range(100)}
        gold = {str(i): labels[500 + i] for i in range(100)}
        reports.append(evaluate(preds, gold))
    assert reports[0].micro_f1 == reports[1].micro_f1
    assert np.array_equal(reports[0].confusion, reports[1].confusion)


def test_bundle_save_load_roundtrip(tmp_path):
    texts, labels = keyword_dataset(300, seed=3)
    clf = CharNgramClassifier().fit(texts, labels)
    clf.save(tmp_path / "bundle")
    loaded = load_classifier(tmp_path / "bundle")
    probes, _ = keyword_dataset(50, seed=4)
    assert loaded.predict_many(probes) == clf.predict_many(probes)


def test_train_baseline_uses_train_split_and_validates_labels():
    examples = [
        LabeledExample("p1", "lockdown notice", "SituationalInformation", "train"),
        LabeledExample("p2", "thanks nurse", "AttitudeDisclosure", "train"),
        LabeledExample("p3", "ignored", "LifeRecording", "test"),
    ]
    clf = train_baseline(examples, task="info_theme")
    assert sorted(clf.classes_) == ["AttitudeDisclosure", "SituationalInformation"]
    bad = examples + [LabeledExample("p4", "x", "NotATheme", "train")]
    with pytest.raises(ValueError, match="NotATheme"):
        train_baseline(bad, task="info_theme")
    leaky = examples + [
        LabeledExample("p1", "lockdown notice", "SituationalInformation", "test")
    ]
    with pytest.raises(ValueError, match="more than one split"):
        train_baseline(leaky, task="info_theme")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def test_evaluate_perfect_and_all_wrong():
    gold = {f"p{i}": "A" if i % 2 else "B" for i in range(10)}
    assert evaluate(dict(gold), gold).micro_f1 == 1.0
    flipped = {k: ("B" if v == "A" else "A") for k, v in gold.items()}
    assert evaluate(flipped, gold).micro_f1 == 0.0


def test_evaluate_eight_of_ten():
    gold = {f"p{i}": "A" for i in range(10)}
    preds = {f"p{i}": ("A" if i < 8 else "B") for i in range(10)}
    report = evaluate(preds, gold)
    assert abs(report.micro_f1 - 0.8) < 1e-15


def test_evaluate_id_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        evaluate({"a": "X"}, {"b": "X"})


def test_micro_f1_equals_accuracy_on_random_sets():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(1, 60))
        k = int(rng.integers(2, 6))
        gold = {f"p{i}": f"c{rng.integers(k)}" for i in range(n)}
        preds = {f"p{i}": f"c{rng.integers(k)}" for i in range(n)}
        report = evaluate(preds, gold)
        accuracy = sum(1 for i in gold if gold[i] == preds[i]) / n
        assert abs(report.micro_f1 - accuracy) < 1e-15
        assert report.confusion.sum() == n


def test_confusion_marginals():
    rng = np.random.default_rng(13)
    gold = {f"p{i}": f"c{rng.integers(3)}" for i in range(80)}
    preds = {f"p{i}": f"c{rng.integers(3)}" for i in range(80)}
    report = evaluate(preds, gold)
    for row, label in zip(report.confusion, report.labels):
        assert row.sum() == sum(1 for v in gold.values() if v == label)
    for col, label in zip(report.confusion.T, report.labels):
        assert col.sum() == sum(1 for v in preds.values() if v == label)


# ---------------------------------------------------------------------------
# Prediction ingestion
# ---------------------------------------------------------------------------


def write_csv(tmp_path, rows, name="preds.csv"):
    path = tmp_path / name
    lines = ["post_id,label"] + [f"{p},{l}" for p, l in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_ingest_full_coverage(tmp_path):
    post_ids = [f"p{i}" for i in range(4)]
    path = write_csv(tmp_path, [(p, "Hopeful") for p in post_ids])
    result = ingest_predictions(path, "emotion", post_ids)
    assert result.coverage == 1.0
    assert result.rejected == []


def test_ingest_unknown_label_rejects_row_keeps_rest(tmp_path):
    post_ids = ["p0", "p1", "p2"]
    path = write_csv(
        tmp_path,
        [("p0", "Hopeful"), ("p1", "Euphoric"), ("p2", "Anxious")],
    )
    result = ingest_predictions(path, "emotion", post_ids)
    assert result.labels == {"p0": "Hopeful", "p2": "Anxious"}
    assert len(result.rejected) == 1 and "Euphoric" in result.rejected[0]["reason"]


def test_ingest_unknown_post_warn_skip_count(tmp_path, caplog):
    path = write_csv(tmp_path, [("p0", "Hopeful"), ("ghost", "Hopeful")])
    import logging

    with caplog.at_level(logging.WARNING, logger="crisisimg.textmodel"):
        result = ingest_predictions(path, "emotion", ["p0"])
    assert result.n_unknown_posts == 1
    assert result.labels == {"p0": "Hopeful"}


def test_ingest_coverage_fraction(tmp_path, minicorpus_dir):
    from crisisimg.corpus import filter_analysis_set, ingest_posts

    corpus = ingest_posts(minicorpus_dir / "posts.jsonl").corpus
    analysis = filter_analysis_set(corpus)
    result = ingest_predictions(
        minicorpus_dir / "info_predictions.csv", "info_theme", analysis
    )
    assert len(analysis) == 57 and len(result.labels) == 50
    assert abs(result.coverage - 50 / 57) < 1e-12  # ~0.877


def test_ingest_requires_exact_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,label\np0,Hopeful\n")
    with pytest.raises(ValueError, match="header"):
        ingest_predictions(path, "emotion", ["p0"])
