"""Consistency-guided split/merge refinement of an image clustering.

The loop mirrors the manual workflow it automates: sample each cluster,
collect human theme labels (two coders plus consensus adjudication),
measure within-cluster consistency, split clusters without a dominant
theme into one sub-cluster per significant theme, and merge clusters that
share a dominant theme. Thresholds are strict: a prevalence equal to the
dominance threshold does not make a cluster consistent, and one equal to
the significance threshold does not make a theme significant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .cluster import ClusterModel, KMeans
from .embedding import EmbeddingMatrix
from .errors import CrisisImgError, DegenerateSplitError, InvariantViolation, NeedsLabelsError
from .stats import average_within_cluster_consistency

__all__ = [
    "AnnotationLabel",
    "ConsistencyReport",
    "LabelStore",
    "LabelsPending",
    "OracleLabelProvider",
    "RefineAction",
    "RefineConfig",
    "RefineRound",
    "RefineRun",
    "RefineState",
    "SUGGESTED_THEMES",
    "evaluate_clustering",
    "measure_consistency",
    "measure_model_consistency",
    "merge_clusters",
    "run_refinement",
    "sample_cluster",
    "split_cluster",
]

# suggested labeling vocabulary; themes stay free strings throughout
SUGGESTED_THEMES = (
    "Posters",
    "TextImages",
    "IndoorObjects",
    "OutdoorScenes",
    "People",
    "Food",
)

_SPLIT_SALT = 104729  # separates split RNG streams from sampling streams
_SPLIT_RESTARTS = 8


class LabelsPending(CrisisImgError):
    """The label provider cannot answer yet; checkpoint and resume later."""


@dataclass
class RefineConfig:
    sample_size: int = 50
    dominance_threshold: float = 0.60
    significance_threshold: float = 0.20
    max_rounds: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sample_size < 1:
            raise ValueError(f"sample_size must be >= 1, got {self.sample_size}")
        if not (0.0 < self.dominance_threshold <= 1.0):
            raise ValueError(
                f"dominance_threshold must be in (0, 1], got {self.dominance_threshold}"
            )
        if not (0.0 < self.significance_threshold <= 1.0):
            raise ValueError(
                "significance_threshold must be in (0, 1], "
                f"got {self.significance_threshold}"
            )
        if self.significance_threshold > self.dominance_threshold:
            raise ValueError(
                "significance_threshold must not exceed dominance_threshold"
            )
        if self.max_rounds < 1:
            raise ValueError(f"max_rounds must be >= 1, got {self.max_rounds}")

    def to_dict(self) -> dict:
        return {
            "sample_size": self.sample_size,
            "dominance_threshold": self.dominance_threshold,
            "significance_threshold": self.significance_threshold,
            "max_rounds": self.max_rounds,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class AnnotationLabel:
    image_id: str
    cluster_index: int
    coder_id: str
    theme: str
    round_index: int = 0


@dataclass
class ConsistencyReport:
    cluster_index: int
    sample_n: int
    prevalences: dict[str, float]
    dominant_theme: str
    consistent: bool
    significant_themes: list[str]

    def to_dict(self) -> dict:
        return {
            "cluster_index": self.cluster_index,
            "sample_n": self.sample_n,
            "prevalences": dict(sorted(self.prevalences.items())),
            "dominant_theme": self.dominant_theme,
            "consistent": self.consistent,
            "significant_themes": list(self.significant_themes),
        }


# ---------------------------------------------------------------------------
# Sampling and consistency
# ---------------------------------------------------------------------------


def _sample_rng(config: RefineConfig, round_index: int, cluster_index: int):
    seq = np.random.SeedSequence((config.seed, round_index, cluster_index))
    return np.random.Generator(np.random.PCG64(seq))


def sample_cluster(
    model: ClusterModel,
    cluster_index: int,
    config: RefineConfig,
    round_index: int = 0,
    *,
    sample_size: int | None = None,
) -> list[str]:
    """Uniform sample without replacement, deterministic per (seed, round).

    Implemented as a prefix of a seeded permutation, so enlarging the
    sample size keeps the earlier draw as a subset (labels already
    collected stay valid).
    """
    members = model.members(cluster_index)  # sorted; KeyError if unknown
    size = config.sample_size if sample_size is None else sample_size
    rng = _sample_rng(config, round_index, cluster_index)
    order = rng.permutation(len(members))
    return [members[i] for i in order[: min(size, len(members))]]


def measure_consistency(
    labels: Mapping[str, str],
    cluster_index: int,
    config: RefineConfig,
) -> ConsistencyReport:
    """Theme prevalences and the strict dominance/significance verdicts.

    ``labels`` maps each sampled image to its adjudicated theme. An empty
    mapping raises :class:`NeedsLabelsError` (callers translate this into
    a needs_labels status rather than a crash).
    """
    if not labels:
        raise NeedsLabelsError(f"cluster {cluster_index} has no adjudicated labels")
    n = len(labels)
    counts: dict[str, int] = {}
    for theme in labels.values():
        if not theme:
            raise ValueError("empty theme label")
        counts[theme] = counts.get(theme, 0) + 1
    prevalences = {t: c / n for t, c in counts.items()}
    dominant = min(prevalences, key=lambda t: (-prevalences[t], t))
    significant = sorted(
        (t for t, p in prevalences.items() if p > config.significance_threshold),
        key=lambda t: (-prevalences[t], t),
    )
    return ConsistencyReport(
        cluster_index=cluster_index,
        sample_n=n,
        prevalences=prevalences,
        dominant_theme=dominant,
        consistent=prevalences[dominant] > config.dominance_threshold,
        significant_themes=significant,
    )


# ---------------------------------------------------------------------------
# Split and merge
# ---------------------------------------------------------------------------


def split_cluster(
    matrix: EmbeddingMatrix,
    model: ClusterModel,
    cluster_index: int,
    report: ConsistencyReport,
    config: RefineConfig,
    *,
    round_index: int = 0,
    force_k: int | None = None,
) -> tuple[ClusterModel, list[int]]:
    """Split one inconsistent cluster into one sub-cluster per significant
    theme (k = |T_s|) by re-running k-means on its members only.

    Returns the updated model and the fresh sub-cluster indices; the
    parent index is retired and recorded as the children's lineage.
    Raises :class:`DegenerateSplitError` when fewer than two significant
    themes exist and no ``force_k`` is given.
    """
    if report.consistent:
        raise ValueError(f"cluster {cluster_index} is consistent; nothing to split")
    k = force_k if force_k is not None else len(report.significant_themes)
    if k < 2:
        raise DegenerateSplitError(cluster_index, report.significant_themes)
    members = model.members(cluster_index)
    if len(members) < k:
        raise ValueError(
            f"cluster {cluster_index} has {len(members)} members, cannot split into {k}"
        )
    sub = matrix.subset(members)
    seed = int(
        np.random.SeedSequence(
            (config.seed, _SPLIT_SALT, round_index, cluster_index)
        ).generate_state(1)[0]
    )
    est = KMeans(n_clusters=k, n_init=_SPLIT_RESTARTS, random_state=seed).fit(sub.values)

    next_index = max(model.cluster_indices()) + 1
    children = list(range(next_index, next_index + k))
    assignments = dict(model.assignments)
    for image_id, sub_label in zip(sub.ids, est.labels_):
        assignments[image_id] = children[int(sub_label)]
    centroids = {j: c for j, c in model.centroids.items() if j != cluster_index}
    for offset, child in enumerate(children):
        centroids[child] = est.cluster_centers_[offset].copy()
    lineage = dict(model.lineage)
    for child in children:
        lineage[child] = cluster_index

    new_model = ClusterModel(
        assignments=assignments,
        centroids=centroids,
        inertia=model.inertia,
        silhouette=None,
        seed=model.seed,
        lineage=lineage,
        themes=None,
    )
    new_model.check_partition(model.assignments)
    if set(new_model.cluster_indices()) & {cluster_index}:
        raise InvariantViolation(f"split left parent cluster {cluster_index} alive")
    return new_model, children


@dataclass
class RefineAction:
    kind: str  # "split" | "merge" | "keep"
    cluster: int | None = None
    children: list[int] | None = None
    theme: str | None = None
    members: list[int] | None = None
    merged_into: int | None = None
    note: str | None = None

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for name in ("cluster", "children", "theme", "members", "merged_into", "note"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out


def merge_clusters(
    model: ClusterModel,
    reports: Mapping[int, ConsistencyReport],
    matrix: EmbeddingMatrix | None = None,
) -> tuple[ClusterModel, list[RefineAction]]:
    """Unite clusters sharing a dominant theme and re-index canonically.

    Every live cluster must carry a consistent report. Final indices are
    assigned by descending merged size, ties broken lexicographically by
    theme; the final theme set is exactly the distinct dominant themes.
    With ``matrix`` given, centroids and inertia are recomputed exactly;
    otherwise centroids are size-weighted means of the parts.
    """
    live = model.cluster_indices()
    missing = [j for j in live if j not in reports]
    if missing:
        raise NeedsLabelsError(f"clusters without reports: {missing}")
    inconsistent = [j for j in live if not reports[j].consistent]
    if inconsistent:
        raise ValueError(f"cannot merge while clusters are inconsistent: {inconsistent}")

    sizes = model.sizes()
    groups: dict[str, list[int]] = {}
    for j in live:
        groups.setdefault(reports[j].dominant_theme, []).append(j)
    order = sorted(
        groups.items(), key=lambda kv: (-sum(sizes[j] for j in kv[1]), kv[0])
    )

    index_map: dict[int, int] = {}
    themes: dict[int, str] = {}
    actions: list[RefineAction] = []
    for new_index, (theme, old_indices) in enumerate(order):
        themes[new_index] = theme
        for j in old_indices:
            index_map[j] = new_index
        if len(old_indices) > 1:
            actions.append(
                RefineAction(
                    kind="merge",
                    theme=theme,
                    members=sorted(old_indices),
                    merged_into=new_index,
                )
            )
        else:
            actions.append(
                RefineAction(kind="keep", cluster=old_indices[0], theme=theme,
                             merged_into=new_index)
            )

    assignments = {i: index_map[c] for i, c in model.assignments.items()}
    if matrix is not None:
        sub = matrix.subset(assignments)
        values = sub.values.astype(np.float64)
        labels = np.asarray([assignments[i] for i in sub.ids])
        centroids = {}
        inertia = 0.0
        for j in range(len(order)):
            rows = values[labels == j]
            centroids[j] = rows.mean(axis=0)
            inertia += float(((rows - centroids[j]) ** 2).sum())
    else:
        centroids = {}
        for new_index, (_, old_indices) in enumerate(order):
            weights = np.array([sizes[j] for j in old_indices], dtype=np.float64)
            stacked = np.stack([model.centroids[j] for j in old_indices])
            centroids[new_index] = (stacked * weights[:, None]).sum(axis=0) / weights.sum()
        inertia = model.inertia

    merged = ClusterModel(
        assignments=assignments,
        centroids=centroids,
        inertia=inertia,
        silhouette=None,
        seed=model.seed,
        lineage={},
        themes=themes,
    )
    merged.check_partition(model.assignments)
    return merged, actions


# ---------------------------------------------------------------------------
# The full loop
# ---------------------------------------------------------------------------


class LabelProvider(Protocol):
    def label(
        self, round_index: int, cluster_index: int, image_ids: Sequence[str]
    ) -> Mapping[str, str]:
        """Adjudicated theme per sampled image; raise LabelsPending to pause."""


class OracleLabelProvider:
    """Answers from a fixed image->theme ground truth (tests, batch CLI)."""

    def __init__(self, truth: Mapping[str, str]):
        self.truth = dict(truth)

    def label(self, round_index, cluster_index, image_ids):
        missing = [i for i in image_ids if i not in self.truth]
        if missing:
            raise LabelsPending(f"oracle lacks labels for {missing[:5]}")
        return {i: self.truth[i] for i in image_ids}


@dataclass
class RefineRound:
    round_index: int
    cluster_sizes: dict[int, int]
    reports: dict[int, ConsistencyReport]
    actions: list[RefineAction]
    average_consistency: float

    def to_dict(self) -> dict:
        return {
            "round_index": self.round_index,
            "cluster_sizes": {str(k): v for k, v in sorted(self.cluster_sizes.items())},
            "reports": {str(k): r.to_dict() for k, r in sorted(self.reports.items())},
            "actions": [a.to_dict() for a in self.actions],
            "average_consistency": self.average_consistency,
        }


@dataclass
class RefineRun:
    rounds: list[RefineRound]
    final_model: ClusterModel
    status: str  # "converged" | "max_rounds" | "needs_labels"

    @property
    def average_consistency(self) -> float:
        if not self.rounds:
            raise NeedsLabelsError("no completed measurement round")
        return self.rounds[-1].average_consistency


def _measure_round(
    model: ClusterModel,
    provider: LabelProvider,
    config: RefineConfig,
    round_index: int,
) -> dict[int, ConsistencyReport]:
    reports: dict[int, ConsistencyReport] = {}
    for j in model.cluster_indices():
        ids = sample_cluster(model, j, config, round_index)
        answered = provider.label(round_index, j, ids)
        missing = [i for i in ids if i not in answered]
        if missing:
            raise LabelsPending(
                f"round {round_index} cluster {j}: unanswered samples {missing[:5]}"
            )
        reports[j] = measure_consistency({i: answered[i] for i in ids}, j, config)
    return reports


def measure_model_consistency(
    model: ClusterModel,
    provider: LabelProvider,
    config: RefineConfig,
    round_index: int = 0,
) -> tuple[dict[int, ConsistencyReport], float]:
    """One sampling+labeling+measurement pass with no split/merge (the
    "without refinement" row of the evaluation table)."""
    reports = _measure_round(model, provider, config, round_index)
    return reports, average_within_cluster_consistency(list(reports.values()))


def run_refinement(
    matrix: EmbeddingMatrix,
    model: ClusterModel,
    provider: LabelProvider,
    config: RefineConfig,
    *,
    degenerate_policy: str = "force_split_2",
) -> RefineRun:
    """Run sampling/labeling/splitting/merging until every cluster is
    consistent or ``max_rounds`` is exhausted.

    ``degenerate_policy`` resolves inconsistent clusters with fewer than
    two significant themes in non-interactive runs: ``force_split_2``
    (default, preserves progress), ``accept`` (treat as consistent), or
    ``enlarge_sample`` (double the sample once, then force if still
    degenerate). The live partition is asserted after every action.
    """
    if degenerate_policy not in DegenerateSplitError.OPTIONS:
        raise ValueError(f"unknown degenerate_policy {degenerate_policy!r}")
    universe = list(model.assignments)
    current = model
    rounds: list[RefineRound] = []
    status = "max_rounds"
    for round_index in range(config.max_rounds):
        try:
            reports = _measure_round(current, provider, config, round_index)
        except (LabelsPending, NeedsLabelsError):
            status = "needs_labels"
            break
        avg = average_within_cluster_consistency(list(reports.values()))
        accepted: set[int] = set()
        actions: list[RefineAction] = []

        def effective(j: int) -> bool:
            return reports[j].consistent or j in accepted

        pending_split = [j for j in current.cluster_indices() if not effective(j)]
        # resolve degenerate clusters first so the merge precondition is sound
        for j in list(pending_split):
            rep = reports[j]
            if len(rep.significant_themes) >= 2:
                continue
            if degenerate_policy == "accept":
                accepted.add(j)
                pending_split.remove(j)
                actions.append(
                    RefineAction(kind="keep", cluster=j, note="accepted_degenerate")
                )
            elif degenerate_policy == "enlarge_sample":
                size = min(config.sample_size * 2, len(current.members(j)))
                ids = sample_cluster(current, j, config, round_index, sample_size=size)
                answered = provider.label(round_index, j, ids)
                rep = measure_consistency({i: answered[i] for i in ids}, j, config)
                reports[j] = rep
                if rep.consistent:
                    pending_split.remove(j)

        if not pending_split:
            if accepted:
                merged, merge_actions = _merge_with_accepted(
                    current, reports, accepted, matrix
                )
            else:
                merged, merge_actions = merge_clusters(current, reports, matrix)
            actions.extend(merge_actions)
            merged.check_partition(universe)
            rounds.append(
                RefineRound(round_index, current.sizes(), reports, actions, avg)
            )
            current = merged
            status = "converged"
            break

        next_model = current
        for j in current.cluster_indices():
            if j not in pending_split:
                if not any(a.kind == "keep" and a.cluster == j for a in actions):
                    actions.append(RefineAction(kind="keep", cluster=j))
                continue
            rep = reports[j]
            note = None
            force_k = None
            if len(rep.significant_themes) < 2:
                force_k = 2  # force_split_2 policy, or enlarge_sample still degenerate
                note = "forced_k2"
            next_model, children = split_cluster(
                matrix, next_model, j, rep, config,
                round_index=round_index, force_k=force_k,
            )
            actions.append(
                RefineAction(kind="split", cluster=j, children=children, note=note)
            )
        next_model.check_partition(universe)
        rounds.append(RefineRound(round_index, current.sizes(), reports, actions, avg))
        current = next_model

    return RefineRun(rounds=rounds, final_model=current, status=status)


def _merge_with_accepted(
    model: ClusterModel,
    reports: Mapping[int, ConsistencyReport],
    accepted: set[int],
    matrix: EmbeddingMatrix | None,
) -> tuple[ClusterModel, list[RefineAction]]:
    """Merge treating operator-accepted degenerate clusters as consistent."""
    patched = {}
    for j, rep in reports.items():
        if j in accepted and not rep.consistent:
            patched[j] = ConsistencyReport(
                cluster_index=rep.cluster_index,
                sample_n=rep.sample_n,
                prevalences=rep.prevalences,
                dominant_theme=rep.dominant_theme,
                consistent=True,
                significant_themes=rep.significant_themes,
            )
        else:
            patched[j] = rep
    return merge_clusters(model, patched, matrix)


# ---------------------------------------------------------------------------
# Evaluation against gold labels
# ---------------------------------------------------------------------------


@dataclass
class ClusteringEvaluation:
    recall_per_cluster: dict[int, float]
    average_recall: float
    kappa: float | None

    def to_dict(self) -> dict:
        return {
            "recall_per_cluster": {
                str(k): v for k, v in sorted(self.recall_per_cluster.items())
            },
            "average_recall": self.average_recall,
            "kappa": self.kappa,
        }


def evaluate_clustering(
    model: ClusterModel,
    gold: Mapping[str, str],
    coder_labels: tuple[Mapping[str, str], Mapping[str, str]] | None = None,
) -> ClusteringEvaluation:
    """Per-cluster recall of the assigned theme against gold labels.

    Recall of a cluster is the fraction of its gold-labeled members whose
    gold theme equals the cluster's theme; the average is unweighted over
    clusters. Inter-coder kappa is computed by the stats module over the
    items both coders labeled, when raw coder labels are supplied.
    """
    if not gold:
        raise ValueError("empty gold label set")
    if model.themes is None:
        raise ValueError("model has no theme names; merge before evaluating")
    recalls: dict[int, float] = {}
    for j in model.cluster_indices():
        members = [i for i in model.members(j) if i in gold]
        if not members:
            raise ValueError(f"gold labels cover no sample of cluster {j}")
        theme = model.themes[j]
        hits = sum(1 for i in members if gold[i] == theme)
        recalls[j] = hits / len(members)
    kappa = None
    if coder_labels is not None:
        from .stats import cohens_kappa

        a, b = coder_labels
        shared = sorted(set(a) & set(b))
        if shared:
            kappa = cohens_kappa([a[i] for i in shared], [b[i] for i in shared]).kappa
    return ClusteringEvaluation(
        recall_per_cluster=recalls,
        average_recall=float(sum(recalls.values()) / len(recalls)),
        kappa=kappa,
    )


# ---------------------------------------------------------------------------
# Two-coder label store and resumable state
# ---------------------------------------------------------------------------


class LabelStore:
    """Raw two-coder labels plus adjudications, keyed by round.

    Agreement between the two coders auto-adjudicates an image;
    disagreement queues it for an explicit adjudication label. Labels on
    an adjudicated image are rejected (adjudications are immutable).
    """

    def __init__(self) -> None:
        # round -> image -> coder -> theme
        self._raw: dict[int, dict[str, dict[str, str]]] = {}
        self._adjudicated: dict[int, dict[str, str]] = {}

    def coders(self, round_index: int) -> list[str]:
        seen: set[str] = set()
        for labels in self._raw.get(round_index, {}).values():
            seen.update(labels)
        return sorted(seen)

    def add_label(
        self, round_index: int, image_id: str, coder_id: str, theme: str
    ) -> None:
        if not theme or not theme.strip():
            raise ValueError("theme must be non-empty")
        if not coder_id or not coder_id.strip():
            raise ValueError("coder_id must be non-empty")
        if image_id in self._adjudicated.get(round_index, {}):
            raise PermissionError(f"image {image_id!r} is already adjudicated")
        existing = self.coders(round_index)
        if coder_id not in existing and len(existing) >= 2:
            raise ValueError(
                f"two-coder workflow: coders {existing} already active this round"
            )
        per_image = self._raw.setdefault(round_index, {}).setdefault(image_id, {})
        per_image[coder_id] = theme
        if len(per_image) == 2:
            themes = set(per_image.values())
            if len(themes) == 1:
                self._adjudicated.setdefault(round_index, {})[image_id] = themes.pop()

    def adjudicate(self, round_index: int, image_id: str, theme: str) -> None:
        if not theme or not theme.strip():
            raise ValueError("theme must be non-empty")
        if image_id in self._adjudicated.get(round_index, {}):
            raise PermissionError(f"image {image_id!r} is already adjudicated")
        pending = {p["image_id"] for p in self.pending(round_index)}
        if image_id not in pending:
            raise KeyError(f"image {image_id!r} is not queued for adjudication")
        self._adjudicated.setdefault(round_index, {})[image_id] = theme

    def pending(self, round_index: int) -> list[dict]:
        """Disagreements awaiting an adjudication label."""
        out = []
        done = self._adjudicated.get(round_index, {})
        for image_id, labels in sorted(self._raw.get(round_index, {}).items()):
            if image_id in done:
                continue
            if len(labels) == 2 and len(set(labels.values())) == 2:
                out.append({"image_id": image_id, "labels": dict(sorted(labels.items()))})
        return out

    def adjudicated_labels(self, round_index: int) -> dict[str, str]:
        return dict(self._adjudicated.get(round_index, {}))

    def raw_labels(self, round_index: int) -> dict[str, dict[str, str]]:
        return {
            img: dict(labels)
            for img, labels in self._raw.get(round_index, {}).items()
        }

    def double_labeled(self, round_index: int) -> tuple[dict[str, str], dict[str, str]]:
        """Per-coder label maps restricted to images both coders labeled."""
        coders = self.coders(round_index)
        if len(coders) != 2:
            return {}, {}
        a_id, b_id = coders
        a: dict[str, str] = {}
        b: dict[str, str] = {}
        for image_id, labels in self._raw.get(round_index, {}).items():
            if a_id in labels and b_id in labels:
                a[image_id] = labels[a_id]
                b[image_id] = labels[b_id]
        return a, b

    def to_dict(self) -> dict:
        return {
            "raw": {
                str(r): {img: dict(l) for img, l in sorted(per.items())}
                for r, per in sorted(self._raw.items())
            },
            "adjudicated": {
                str(r): dict(sorted(per.items()))
                for r, per in sorted(self._adjudicated.items())
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LabelStore":
        store = cls()
        store._raw = {
            int(r): {img: dict(l) for img, l in per.items()}
            for r, per in doc.get("raw", {}).items()
        }
        store._adjudicated = {
            int(r): dict(per) for r, per in doc.get("adjudicated", {}).items()
        }
        return store


@dataclass
class RefineState:
    """Checkpointable state of one interactive refinement run.

    Holds everything needed to resume bit-identically: the config, the
    live model, the round counter, the label store, per-cluster sample
    size overrides, the round history, and a reference to the embedding
    matrix file.
    """

    config: RefineConfig
    model: ClusterModel
    round_index: int = 0
    store: LabelStore = field(default_factory=LabelStore)
    history: list[RefineRound] = field(default_factory=list)
    status: str = "labeling"  # labeling | converged | max_rounds
    matrix_path: str | None = None
    sample_overrides: dict[int, int] = field(default_factory=dict)
    session_open: bool = False  # one labeling session per round

    def samples(self) -> dict[int, list[str]]:
        """Current round's per-cluster samples (derived, deterministic)."""
        out = {}
        for j in self.model.cluster_indices():
            out[j] = sample_cluster(
                self.model,
                j,
                self.config,
                self.round_index,
                sample_size=self.sample_overrides.get(j),
            )
        return out

    def sampled_images(self) -> set[str]:
        return {i for ids in self.samples().values() for i in ids}

    def ready(self) -> bool:
        if self.status != "labeling":
            return False
        adjudicated = self.store.adjudicated_labels(self.round_index)
        return all(i in adjudicated for i in self.sampled_images())

    def reports(self) -> dict[int, ConsistencyReport]:
        """Consistency over adjudicated labels collected so far, per cluster
        (clusters with no adjudicated sampled image yet are omitted)."""
        adjudicated = self.store.adjudicated_labels(self.round_index)
        out: dict[int, ConsistencyReport] = {}
        for j, ids in self.samples().items():
            got = {i: adjudicated[i] for i in ids if i in adjudicated}
            if got:
                out[j] = measure_consistency(got, j, self.config)
        return out

    def execute_round(
        self,
        matrix: EmbeddingMatrix,
        *,
        on_degenerate: str | None = None,
    ) -> RefineRound:
        """Run one split/merge round over the fully adjudicated sample.

        Raises NeedsLabelsError when the sample is not fully adjudicated
        and DegenerateSplitError when a degenerate cluster needs an
        operator decision and no ``on_degenerate`` option was given.
        """
        if self.status != "labeling":
            raise PermissionError(f"run is {self.status}; no further rounds")
        adjudicated = self.store.adjudicated_labels(self.round_index)
        samples = self.samples()
        missing = [
            i for ids in samples.values() for i in ids if i not in adjudicated
        ]
        if missing:
            raise NeedsLabelsError(
                f"{len(missing)} sampled image(s) lack adjudicated labels"
            )
        reports = {
            j: measure_consistency({i: adjudicated[i] for i in ids}, j, self.config)
            for j, ids in samples.items()
        }
        avg = average_within_cluster_consistency(list(reports.values()))
        universe = list(self.model.assignments)

        inconsistent = [
            j for j in self.model.cluster_indices() if not reports[j].consistent
        ]
        degenerate = [
            j for j in inconsistent if len(reports[j].significant_themes) < 2
        ]
        accepted: set[int] = set()
        if degenerate:
            if on_degenerate is None:
                raise DegenerateSplitError(
                    degenerate[0], reports[degenerate[0]].significant_themes
                )
            if on_degenerate == "enlarge_sample":
                for j in degenerate:
                    size = min(
                        self.sample_overrides.get(j, self.config.sample_size) * 2,
                        len(self.model.members(j)),
                    )
                    self.sample_overrides[j] = size
                raise NeedsLabelsError(
                    f"samples enlarged for clusters {degenerate}; more labels needed"
                )
            if on_degenerate == "accept":
                accepted.update(degenerate)
                inconsistent = [j for j in inconsistent if j not in degenerate]
            elif on_degenerate != "force_split_2":
                raise ValueError(f"unknown degenerate option {on_degenerate!r}")

        actions: list[RefineAction] = []
        if not inconsistent:
            if accepted:
                merged, merge_actions = _merge_with_accepted(
                    self.model, reports, accepted, matrix
                )
            else:
                merged, merge_actions = merge_clusters(self.model, reports, matrix)
            merged.check_partition(universe)
            actions.extend(merge_actions)
            round_rec = RefineRound(
                self.round_index, self.model.sizes(), reports, actions, avg
            )
            self.history.append(round_rec)
            self.model = merged
            self.status = "converged"
            self.round_index += 1
            self.sample_overrides = {}
            return round_rec

        next_model = self.model
        for j in self.model.cluster_indices():
            rep = reports[j]
            if rep.consistent:
                actions.append(RefineAction(kind="keep", cluster=j))
                continue
            if j in accepted:
                actions.append(
                    RefineAction(kind="keep", cluster=j, note="accepted_degenerate")
                )
                continue
            force_k = 2 if len(rep.significant_themes) < 2 else None
            next_model, children = split_cluster(
                matrix, next_model, j, rep, self.config,
                round_index=self.round_index,
                force_k=force_k,
            )
            actions.append(
                RefineAction(
                    kind="split", cluster=j, children=children,
                    note="forced_k2" if force_k else None,
                )
            )
        next_model.check_partition(universe)
        round_rec = RefineRound(
            self.round_index, self.model.sizes(), reports, actions, avg
        )
        self.history.append(round_rec)
        self.model = next_model
        self.round_index += 1
        self.sample_overrides = {}
        if self.round_index >= self.config.max_rounds:
            self.status = "max_rounds"
        return round_rec

    # -- checkpointing ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "model": _model_to_dict(self.model),
            "round_index": self.round_index,
            "store": self.store.to_dict(),
            "history": [r.to_dict() for r in self.history],
            "status": self.status,
            "matrix_path": self.matrix_path,
            "sample_overrides": {
                str(k): v for k, v in sorted(self.sample_overrides.items())
            },
            "session_open": self.session_open,
        }

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def from_dict(cls, doc: dict) -> "RefineState":
        return cls(
            config=RefineConfig(**doc["config"]),
            model=_model_from_dict(doc["model"]),
            round_index=int(doc["round_index"]),
            store=LabelStore.from_dict(doc["store"]),
            history=[_round_from_dict(r) for r in doc["history"]],
            status=doc["status"],
            matrix_path=doc.get("matrix_path"),
            sample_overrides={
                int(k): int(v)
                for k, v in doc.get("sample_overrides", {}).items()
            },
            session_open=bool(doc.get("session_open", False)),
        )

    @classmethod
    def load(cls, path) -> "RefineState":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _model_to_dict(model: ClusterModel) -> dict:
    doc = model.to_dict()
    doc["centroids"] = {
        str(j): [float(x) for x in model.centroids[j]]
        for j in model.cluster_indices()
    }
    return doc


def _model_from_dict(doc: dict) -> ClusterModel:
    themes = doc.get("themes")
    return ClusterModel(
        assignments={i: int(c) for i, c in doc["assignments"].items()},
        centroids={
            int(j): np.asarray(vals, dtype=np.float64)
            for j, vals in doc["centroids"].items()
        },
        inertia=float(doc["inertia"]),
        silhouette=None if doc.get("silhouette") is None else float(doc["silhouette"]),
        seed=int(doc["seed"]),
        lineage={int(k): int(v) for k, v in doc.get("lineage", {}).items()},
        themes=None if themes is None else {int(k): v for k, v in themes.items()},
    )


def _round_from_dict(doc: dict) -> RefineRound:
    return RefineRound(
        round_index=int(doc["round_index"]),
        cluster_sizes={int(k): int(v) for k, v in doc["cluster_sizes"].items()},
        reports={
            int(k): ConsistencyReport(
                cluster_index=int(r["cluster_index"]),
                sample_n=int(r["sample_n"]),
                prevalences={t: float(p) for t, p in r["prevalences"].items()},
                dominant_theme=r["dominant_theme"],
                consistent=bool(r["consistent"]),
                significant_themes=list(r["significant_themes"]),
            )
            for k, r in doc["reports"].items()
        },
        actions=[
            RefineAction(
                kind=a["kind"],
                cluster=a.get("cluster"),
                children=a.get("children"),
                theme=a.get("theme"),
                members=a.get("members"),
                merged_into=a.get("merged_into"),
                note=a.get("note"),
            )
            for a in doc["actions"]
        ],
        average_consistency=float(doc["average_consistency"]),
    )
