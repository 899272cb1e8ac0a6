"""Post-text labeling: information themes and emotion types.

The heavy-duty classifier is expected to come from outside (predictions
ingested as CSV); the built-in baseline is a deterministic multinomial
naive Bayes over TF-IDF-weighted character 1..3-grams. Character n-grams
keep the baseline usable on Chinese text without a word segmenter.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .base import BaseEstimator

logger = logging.getLogger(__name__)

__all__ = [
    "CharNgramClassifier",
    "EmotionType",
    "EvalReport",
    "InfoTheme",
    "LabeledExample",
    "PredictionIngest",
    "TASKS",
    "evaluate",
    "ingest_predictions",
    "load_classifier",
    "train_baseline",
]


class InfoTheme(str, Enum):
    """Single information-theme label per post."""

    SITUATIONAL_INFORMATION = "SituationalInformation"
    ATTITUDE_DISCLOSURE = "AttitudeDisclosure"
    LIFE_RECORDING = "LifeRecording"
    LATEST_POLICIES = "LatestPolicies"


class EmotionType(str, Enum):
    """Single emotion label per post (two positive, one neutral, two negative)."""

    HOPEFUL = "Hopeful"
    APPRECIATIVE = "Appreciative"
    NEUTRAL = "Neutral"
    ANNOYED = "Annoyed"
    ANXIOUS = "Anxious"


TASKS: dict[str, type[Enum]] = {
    "info_theme": InfoTheme,
    "emotion": EmotionType,
}


@dataclass(frozen=True)
class LabeledExample:
    post_id: str
    text: str
    label: str
    split: str = "train"  # "train" | "test"


def _ngrams(text: str, lo: int, hi: int) -> Counter:
    grams: Counter = Counter()
    for n in range(lo, hi + 1):
        for i in range(len(text) - n + 1):
            grams[text[i : i + n]] += 1
    return grams


class CharNgramClassifier(BaseEstimator):
    """Multinomial naive Bayes over TF-IDF-weighted character n-grams.

    Fully deterministic given the training data: the vocabulary is sorted,
    ties between classes break toward the earlier class in sorted order,
    and no randomness is consumed (the ``seed`` parameter exists only to
    honor the deterministic-given-a-seed contract). A text with no known
    n-grams (e.g. the empty string) falls back to the prior-majority
    class.
    """

    def __init__(
        self,
        ngram_min: int = 1,
        ngram_max: int = 3,
        alpha: float = 1.0,
        seed: int = 0,
    ):
        self.ngram_min = ngram_min
        self.ngram_max = ngram_max
        self.alpha = alpha
        self.seed = seed

    def fit(self, texts: Sequence[str], labels: Sequence[str]) -> "CharNgramClassifier":
        if len(texts) != len(labels):
            raise ValueError("texts and labels must align")
        if not texts:
            raise ValueError("empty training set")
        if any(not t for t in texts):
            raise ValueError("training texts must be non-empty")
        classes = sorted(set(labels))
        if len(classes) < 2:
            raise ValueError(
                f"training set must contain at least 2 classes, got {classes}"
            )
        self.classes_ = classes
        class_index = {c: i for i, c in enumerate(classes)}

        doc_grams = [_ngrams(t, self.ngram_min, self.ngram_max) for t in texts]
        df: Counter = Counter()
        for grams in doc_grams:
            df.update(grams.keys())
        vocab = sorted(df)
        self.vocabulary_ = {g: i for i, g in enumerate(vocab)}
        n_docs = len(texts)
        self.idf_ = np.array(
            [np.log((1.0 + n_docs) / (1.0 + df[g])) + 1.0 for g in vocab]
        )

        mass = np.zeros((len(classes), len(vocab)))
        prior_counts = np.zeros(len(classes))
        for grams, label in zip(doc_grams, labels):
            c = class_index[label]
            prior_counts[c] += 1.0
            for gram, count in grams.items():
                col = self.vocabulary_[gram]
                mass[c, col] += count * self.idf_[col]
        smoothed = mass + self.alpha
        self.feature_log_prob_ = np.log(smoothed / smoothed.sum(axis=1, keepdims=True))
        self.class_log_prior_ = np.log(prior_counts / prior_counts.sum())
        return self

    def _scores(self, text: str) -> np.ndarray:
        scores = self.class_log_prior_.copy()
        grams = _ngrams(text, self.ngram_min, self.ngram_max)
        for gram, count in grams.items():
            col = self.vocabulary_.get(gram)
            if col is not None:
                scores += count * self.idf_[col] * self.feature_log_prob_[:, col]
        return scores

    def predict(self, text: str) -> str:
        scores = self._scores(text)
        return self.classes_[int(np.argmax(scores))]  # argmax ties -> earliest class

    def predict_many(self, texts: Iterable[str]) -> list[str]:
        return [self.predict(t) for t in texts]

    # -- bundle serialization (versioned JSON + binary) --------------------

    BUNDLE_VERSION = 1

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "format_version": self.BUNDLE_VERSION,
            "classes": self.classes_,
            "params": self.get_params(),
        }
        (directory / "meta.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        (directory / "vocab.json").write_text(
            json.dumps(sorted(self.vocabulary_, key=self.vocabulary_.get),
                       ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        np.savez(
            directory / "weights.npz",
            idf=self.idf_,
            feature_log_prob=self.feature_log_prob_,
            class_log_prior=self.class_log_prior_,
        )


def load_classifier(directory) -> CharNgramClassifier:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
    if meta.get("format_version") != CharNgramClassifier.BUNDLE_VERSION:
        raise ValueError(f"unsupported classifier bundle version {meta.get('format_version')}")
    clf = CharNgramClassifier(**meta["params"])
    clf.classes_ = list(meta["classes"])
    vocab = json.loads((directory / "vocab.json").read_text(encoding="utf-8"))
    clf.vocabulary_ = {g: i for i, g in enumerate(vocab)}
    weights = np.load(directory / "weights.npz")
    clf.idf_ = weights["idf"]
    clf.feature_log_prob_ = weights["feature_log_prob"]
    clf.class_log_prior_ = weights["class_log_prior"]
    return clf


def train_baseline(
    examples: Sequence[LabeledExample],
    task: str | None = None,
    **hyperparams,
) -> CharNgramClassifier:
    """Fit the baseline on the train split of the given examples.

    With a ``task`` name ("info_theme" / "emotion") labels are checked
    against the task's enumeration.
    """
    seen: dict[str, str] = {}
    for e in examples:
        if seen.setdefault(e.post_id, e.split) != e.split:
            raise ValueError(f"post {e.post_id} appears in more than one split")
    train = [e for e in examples if e.split == "train"]
    if task is not None:
        allowed = {m.value for m in TASKS[task]}
        bad = sorted({e.label for e in train} - allowed)
        if bad:
            raise ValueError(f"labels outside the {task} enumeration: {bad}")
    return CharNgramClassifier(**hyperparams).fit(
        [e.text for e in train], [e.label for e in train]
    )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    micro_f1: float
    labels: list[str]
    confusion: np.ndarray  # rows = gold, columns = predicted
    n: int

    def to_dict(self) -> dict:
        return {
            "micro_f1": self.micro_f1,
            "labels": self.labels,
            "confusion": self.confusion.tolist(),
            "n": self.n,
        }


def evaluate(
    predictions: Mapping[str, str],
    gold: Mapping[str, str],
    *,
    label_order: Sequence[str] | None = None,
) -> EvalReport:
    """Micro-F1 and confusion matrix over aligned ID sets.

    Micro-F1 is computed from micro-aggregated TP/FP/FN (for single-label
    data this equals accuracy, which the tests assert as a property).
    """
    if set(predictions) != set(gold):
        only_p = sorted(set(predictions) - set(gold))[:3]
        only_g = sorted(set(gold) - set(predictions))[:3]
        raise ValueError(
            f"prediction/gold ID mismatch (only predicted: {only_p}, "
            f"only gold: {only_g})"
        )
    if not gold:
        raise ValueError("empty evaluation set")
    seen = sorted(set(gold.values()) | set(predictions.values()))
    if label_order is not None:
        labels = [l for l in label_order if l in seen]
        labels += [l for l in seen if l not in labels]
    else:
        labels = seen
    index = {l: i for i, l in enumerate(labels)}
    confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for item in gold:
        confusion[index[gold[item]], index[predictions[item]]] += 1
    tp = np.diag(confusion).sum()
    fp = confusion.sum() - tp  # every wrong prediction is one FP and one FN
    fn = fp
    micro_f1 = float(2.0 * tp / (2.0 * tp + fp + fn)) if confusion.sum() else 0.0
    return EvalReport(
        micro_f1=micro_f1, labels=labels, confusion=confusion, n=int(confusion.sum())
    )


# ---------------------------------------------------------------------------
# External prediction ingestion
# ---------------------------------------------------------------------------


@dataclass
class PredictionIngest:
    labels: dict[str, str]
    coverage: float
    rejected: list[dict] = field(default_factory=list)
    n_unknown_posts: int = 0

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "n_labeled": len(self.labels),
            "n_rejected": len(self.rejected),
            "n_unknown_posts": self.n_unknown_posts,
        }


def ingest_predictions(path, task: str, post_ids: Iterable[str]) -> PredictionIngest:
    """Attach externally produced ``post_id,label`` CSV predictions.

    Rows with a label outside the task enumeration are rejected (counted,
    run continues); rows for unknown posts are warned about and skipped.
    Coverage is the labeled fraction of ``post_ids``.
    """
    allowed = {m.value for m in TASKS[task]}
    universe = set(post_ids)
    labels: dict[str, str] = {}
    rejected: list[dict] = []
    unknown = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["post_id", "label"]:
            raise ValueError(
                f"{path}: expected header 'post_id,label', got {header}"
            )
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 2:
                rejected.append(
                    {"line": line_no, "reason": f"expected 2 fields, got {len(row)}"}
                )
                continue
            post_id, label = row
            if label not in allowed:
                rejected.append(
                    {"line": line_no, "reason": f"unknown {task} label {label!r}"}
                )
                continue
            if post_id not in universe:
                logger.warning("line %d: unknown post_id %r, skipped", line_no, post_id)
                unknown += 1
                continue
            labels[post_id] = label
    coverage = len(labels) / len(universe) if universe else 0.0
    return PredictionIngest(
        labels=labels, coverage=coverage, rejected=rejected, n_unknown_posts=unknown
    )
