"""Pipeline command-line interface.

Stages write their artifacts into a run directory and record them (with
content hashes) in ``manifest.json``; re-running a completed stage with
identical inputs and parameters is a no-op. All artifacts are written
atomically (temp file + rename) and all randomness flows from the single
run seed, so a finished run is byte-reproducible.

Exit codes: 0 success, 2 missing prerequisite stage, 64 invalid
configuration, 70 internal invariant violation, 1 other errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import cluster as cluster_mod
from . import corpus as corpus_mod
from . import embedding as embedding_mod
from . import refine as refine_mod
from . import stats as stats_mod
from . import textmodel
from .errors import ConfigError, CrisisImgError, InvariantViolation, MissingStageError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_MISSING_STAGE = 2
EXIT_BAD_CONFIG = 64
EXIT_INVARIANT = 70

NO_IMAGE = "no-image"

# every constant the analysis protocol fixes has a config key and default
DEFAULT_CONFIG: dict[str, dict[str, str]] = {
    "run": {
        "seed": "0",
        "tz_offset_hours": "8",
    },
    "embed": {
        "backend": "pixelstats",
        "grid": "8",
        "normalize": "false",
        "onnx_model": "",
        "onnx_input": "input",
        "onnx_output": "output",
        "onnx_dim": "1280",
        "onnx_scale": "0.00392156862745098",
    },
    "cluster": {
        "k_min": "5",
        "k_max": "20",
        "restarts": "8",
        "max_iter": "300",
        "tol": "1e-6",
    },
    "refine": {
        "sample_size": "50",
        "dominance_threshold": "0.60",
        "significance_threshold": "0.20",
        "max_rounds": "4",
        "degenerate_policy": "force_split_2",
        "split_merge": "true",
    },
}

STAGE_ORDER = ["ingest", "embed", "cluster", "refine", "classify", "stats", "report"]
STAGE_PREREQS = {
    "ingest": [],
    "embed": ["ingest"],
    "cluster": ["embed"],
    "refine": ["cluster"],
    "classify": ["ingest"],
    "stats": ["classify", "cluster"],
    "report": ["stats"],
}


# ---------------------------------------------------------------------------
# Config and manifest plumbing
# ---------------------------------------------------------------------------


def load_config(path: str | None, overrides: dict[str, str] | None = None) -> dict:
    """Defaults <- config file <- flag overrides ("section.key" -> value)."""
    cfg = {section: dict(values) for section, values in DEFAULT_CONFIG.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in cfg:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                if key not in cfg[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                cfg[section][key] = value
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in cfg or key not in cfg[section]:
            raise ConfigError(f"unknown config key {dotted}")
        cfg[section][key] = str(value)
    return cfg


def _cfg_int(cfg: dict, section: str, key: str) -> int:
    try:
        return int(cfg[section][key])
    except ValueError as exc:
        raise ConfigError(f"{section}.{key} must be an integer: {exc}") from exc


def _cfg_float(cfg: dict, section: str, key: str) -> float:
    try:
        return float(cfg[section][key])
    except ValueError as exc:
        raise ConfigError(f"{section}.{key} must be a number: {exc}") from exc


def _cfg_bool(cfg: dict, section: str, key: str) -> bool:
    raw = cfg[section][key].strip().lower()
    if raw in ("1", "true", "yes", "on"):
        return True
    if raw in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{section}.{key} must be a boolean, got {raw!r}")


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


class RunManifest:
    """Stage ledger for one run directory."""

    def __init__(self, run_dir: Path, config: dict):
        self.run_dir = Path(run_dir)
        self.config = config
        snapshot = json.dumps(config, sort_keys=True)
        self.run_id = hashlib.sha256(snapshot.encode("utf-8")).hexdigest()[:12]
        self.stages: dict[str, dict] = {}

    @property
    def path(self) -> Path:
        return self.run_dir / "manifest.json"

    @classmethod
    def open(cls, run_dir, config: dict) -> "RunManifest":
        manifest = cls(Path(run_dir), config)
        if manifest.path.exists():
            doc = json.loads(manifest.path.read_text(encoding="utf-8"))
            stored = doc.get("config", {})
            if stored != config:
                changed = [
                    f"{s}.{k}"
                    for s in set(stored) | set(config)
                    for k in set(stored.get(s, {})) | set(config.get(s, {}))
                    if stored.get(s, {}).get(k) != config.get(s, {}).get(k)
                ]
                raise ConfigError(
                    f"run directory was created with a different config "
                    f"(changed: {sorted(changed)}); use a fresh --run-dir"
                )
            manifest.stages = doc.get("stages", {})
        return manifest

    def save(self) -> None:
        write_json(
            self.path,
            {"run_id": self.run_id, "config": self.config, "stages": self.stages},
        )

    def require(self, stage: str) -> None:
        for needed in STAGE_PREREQS[stage]:
            if needed not in self.stages:
                raise MissingStageError(stage, needed)

    def stage_output(self, stage: str, name: str) -> Path:
        outputs = self.stages.get(stage, {}).get("outputs", {})
        if name not in outputs:
            raise MissingStageError("current", stage)
        return self.run_dir / name

    def up_to_date(self, stage: str, params: dict, inputs: dict[str, str]) -> bool:
        record = self.stages.get(stage)
        if record is None:
            return False
        if record.get("params") != params or record.get("inputs") != inputs:
            return False
        for rel, digest in record.get("outputs", {}).items():
            path = self.run_dir / rel
            if not path.exists() or file_sha256(path) != digest:
                return False
        return True

    def record(self, stage: str, params: dict, inputs: dict[str, str],
               output_paths: list[Path], info: dict | None = None) -> None:
        # staleness of later stages is detected via their recorded input hashes
        outputs = {
            str(p.relative_to(self.run_dir)).replace(os.sep, "/"): file_sha256(p)
            for p in output_paths
        }
        record = {"params": params, "inputs": inputs, "outputs": outputs}
        if info:
            record["info"] = info  # descriptive only; not part of no-op checks
        self.stages[stage] = record
        self.save()


def hash_inputs(paths: dict[str, Path]) -> dict[str, str]:
    return {name: file_sha256(path) for name, path in sorted(paths.items())}


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def cmd_ingest(manifest: RunManifest, cfg: dict, posts_path: str) -> None:
    manifest.require("ingest")
    posts_path = Path(posts_path)
    if not posts_path.exists():
        raise CrisisImgError(f"posts file not found: {posts_path}")
    params = {"posts": str(posts_path)}
    inputs = hash_inputs({"posts": posts_path})
    if manifest.up_to_date("ingest", params, inputs):
        print("ingest: up to date")
        return
    store_dir = manifest.run_dir / "corpus"
    store = corpus_mod.CorpusStore(store_dir)
    result = store.ingest(posts_path)
    print(
        f"ingest: {result.summary.n_posts} posts "
        f"({result.summary.n_original_posts} original), "
        f"{result.summary.n_images} images "
        f"({result.summary.n_static_images} static), "
        f"{len(result.rejected)} rejected"
    )
    manifest.record(
        "ingest", params, inputs,
        [store.posts_path, store.summary_path, store.rejected_path],
    )


def _load_corpus(manifest: RunManifest) -> corpus_mod.Corpus:
    store = corpus_mod.CorpusStore(manifest.run_dir / "corpus")
    if not store.exists():
        raise MissingStageError("current", "ingest")
    return store.load()


def cmd_embed(
    manifest: RunManifest,
    cfg: dict,
    *,
    images_root: str | None = None,
    embeddings: str | None = None,
) -> None:
    manifest.require("embed")
    if (images_root is None) == (embeddings is None):
        raise ConfigError("embed needs exactly one of --images-root or --embeddings")
    params = {
        "backend": cfg["embed"]["backend"],
        "grid": cfg["embed"]["grid"],
        "normalize": cfg["embed"]["normalize"],
        "images_root": images_root,
        "embeddings": embeddings,
    }
    external = {"corpus": manifest.run_dir / "corpus" / "posts.jsonl"}
    if embeddings is not None:
        external["embeddings"] = Path(embeddings)
    inputs = hash_inputs(external)
    if manifest.up_to_date("embed", params, inputs):
        print("embed: up to date")
        return

    corpus = _load_corpus(manifest)
    analysis = corpus_mod.filter_analysis_set(corpus)
    wanted = corpus_mod.clusterable_images(corpus, analysis)
    if embeddings is not None:
        matrix = embedding_mod.load_embeddings(embeddings).subset(wanted)
    else:
        matrix = _extract_matrix(cfg, corpus, wanted, Path(images_root))
    if _cfg_bool(cfg, "embed", "normalize"):
        matrix = embedding_mod.normalize_rows(matrix)
    out = manifest.run_dir / "embeddings.cemb"
    tmp = out.with_name(out.name + ".tmp")
    embedding_mod.save_embeddings(matrix, tmp)
    os.replace(tmp, out)
    print(f"embed: {matrix.n} x {matrix.dim} [{matrix.backend_tag}]")
    manifest.record(
        "embed", params, inputs, [out], info={"backend_tag": matrix.backend_tag}
    )


def _extract_matrix(cfg, corpus, wanted, root: Path):
    name = cfg["embed"]["backend"]
    if name == "pixelstats":
        backend = embedding_mod.make_backend(
            "pixelstats", grid=_cfg_int(cfg, "embed", "grid")
        )
    elif name == "onnx":
        if not cfg["embed"]["onnx_model"]:
            raise ConfigError("embed.onnx_model is required for the onnx backend")
        backend = embedding_mod.make_backend(
            "onnx",
            model_path=cfg["embed"]["onnx_model"],
            input_name=cfg["embed"]["onnx_input"],
            output_name=cfg["embed"]["onnx_output"],
            output_dim=_cfg_int(cfg, "embed", "onnx_dim"),
            scale=_cfg_float(cfg, "embed", "onnx_scale"),
        )
    else:
        raise ConfigError(f"unknown embed.backend {name!r}")
    items = []
    for image_id in sorted(wanted):
        source = Path(corpus.images[image_id].source)
        path = source if source.is_absolute() else root / source
        if not path.exists():
            raise CrisisImgError(f"image file not found: {path}")
        items.append((image_id, path.read_bytes()))
    return embedding_mod.extract_many(backend, items)


def cmd_cluster(manifest: RunManifest, cfg: dict, *, k: int | None = None) -> None:
    manifest.require("cluster")
    params = {
        "k": k,
        "k_min": cfg["cluster"]["k_min"],
        "k_max": cfg["cluster"]["k_max"],
        "restarts": cfg["cluster"]["restarts"],
        "max_iter": cfg["cluster"]["max_iter"],
        "tol": cfg["cluster"]["tol"],
        "seed": cfg["run"]["seed"],
    }
    inputs = hash_inputs({"embeddings": manifest.run_dir / "embeddings.cemb"})
    if manifest.up_to_date("cluster", params, inputs):
        print("cluster: up to date")
        return
    matrix = embedding_mod.load_embeddings(manifest.run_dir / "embeddings.cemb")
    seed = _cfg_int(cfg, "run", "seed")
    restarts = _cfg_int(cfg, "cluster", "restarts")
    max_iter = _cfg_int(cfg, "cluster", "max_iter")
    tol = _cfg_float(cfg, "cluster", "tol")
    if k is not None:
        model = cluster_mod.cluster_embeddings(
            matrix, k, seed=seed, restarts=restarts, max_iter=max_iter, tol=tol
        )
        search = cluster_mod.KSearchResult([(k, float(model.silhouette or 0.0))], k)
    else:
        k_min = _cfg_int(cfg, "cluster", "k_min")
        k_max = _cfg_int(cfg, "cluster", "k_max")
        k_max = min(k_max, matrix.n)
        k_min = min(k_min, k_max)
        search, model = cluster_mod.search_k(
            matrix, k_min, k_max, seed=seed, restarts=restarts,
            max_iter=max_iter, tol=tol,
        )
    out_dir = manifest.run_dir / "cluster"
    out_dir.mkdir(parents=True, exist_ok=True)
    model_json = out_dir / "model.json"
    centroids = out_dir / "centroids.cemb"
    ksearch = out_dir / "ksearch.json"
    cluster_mod.save_model(model, model_json, centroids)
    write_json(ksearch, search.to_dict())
    print(f"cluster: k={model.k} silhouette={model.silhouette}")
    manifest.record("cluster", params, inputs, [model_json, centroids, ksearch])


def _read_theme_labels(path) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["image_id", "theme"]:
            raise CrisisImgError(
                f"{path}: expected header 'image_id,theme', got {header}"
            )
        return {row[0]: row[1] for row in reader if row}


def cmd_refine(manifest: RunManifest, cfg: dict, *, labels: str) -> None:
    manifest.require("refine")
    labels_path = Path(labels)
    if not labels_path.exists():
        raise CrisisImgError(f"labels file not found: {labels_path}")
    params = {
        "sample_size": cfg["refine"]["sample_size"],
        "dominance_threshold": cfg["refine"]["dominance_threshold"],
        "significance_threshold": cfg["refine"]["significance_threshold"],
        "max_rounds": cfg["refine"]["max_rounds"],
        "degenerate_policy": cfg["refine"]["degenerate_policy"],
        "split_merge": cfg["refine"]["split_merge"],
        "seed": cfg["run"]["seed"],
    }
    inputs = hash_inputs(
        {
            "embeddings": manifest.run_dir / "embeddings.cemb",
            "model": manifest.run_dir / "cluster" / "model.json",
            "labels": labels_path,
        }
    )
    if manifest.up_to_date("refine", params, inputs):
        print("refine: up to date")
        return
    matrix = embedding_mod.load_embeddings(manifest.run_dir / "embeddings.cemb")
    model = cluster_mod.load_model(
        manifest.run_dir / "cluster" / "model.json",
        manifest.run_dir / "cluster" / "centroids.cemb",
    )
    config = refine_mod.RefineConfig(
        sample_size=_cfg_int(cfg, "refine", "sample_size"),
        dominance_threshold=_cfg_float(cfg, "refine", "dominance_threshold"),
        significance_threshold=_cfg_float(cfg, "refine", "significance_threshold"),
        max_rounds=_cfg_int(cfg, "refine", "max_rounds"),
        seed=_cfg_int(cfg, "run", "seed"),
    )
    provider = refine_mod.OracleLabelProvider(_read_theme_labels(labels_path))
    if _cfg_bool(cfg, "refine", "split_merge"):
        run = refine_mod.run_refinement(
            matrix, model, provider, config,
            degenerate_policy=cfg["refine"]["degenerate_policy"],
        )
    else:
        reports, avg = refine_mod.measure_model_consistency(model, provider, config)
        themed = cluster_mod.ClusterModel(
            assignments=dict(model.assignments),
            centroids=dict(model.centroids),
            inertia=model.inertia,
            silhouette=model.silhouette,
            seed=model.seed,
            lineage=dict(model.lineage),
            themes={j: reports[j].dominant_theme for j in model.cluster_indices()},
        )
        run = refine_mod.RefineRun(
            rounds=[
                refine_mod.RefineRound(0, model.sizes(), reports, [], avg)
            ],
            final_model=themed,
            status="measured",
        )
    out_dir = manifest.run_dir / "refine"
    out_dir.mkdir(parents=True, exist_ok=True)
    run_json = out_dir / "run.json"
    final_json = out_dir / "final_model.json"
    final_centroids = out_dir / "final_centroids.cemb"
    write_json(
        run_json,
        {
            "status": run.status,
            "config": config.to_dict(),
            "rounds": [r.to_dict() for r in run.rounds],
        },
    )
    cluster_mod.save_model(run.final_model, final_json, final_centroids)
    print(
        f"refine: status={run.status} rounds={len(run.rounds)} "
        f"consistency={run.rounds[-1].average_consistency if run.rounds else 'n/a'}"
    )
    manifest.record("refine", params, inputs, [run_json, final_json, final_centroids])


def cmd_classify(
    manifest: RunManifest,
    cfg: dict,
    *,
    info_predictions: str | None = None,
    emotion_predictions: str | None = None,
    train_info: str | None = None,
    train_emotion: str | None = None,
) -> None:
    manifest.require("classify")
    sources = {
        "info_theme": (info_predictions, train_info),
        "emotion": (emotion_predictions, train_emotion),
    }
    for task, (pred, train) in sources.items():
        if pred is None and train is None:
            raise ConfigError(
                f"classify needs --{task.replace('_', '-')}-predictions or a "
                f"training file for task {task}"
            )
        if pred is not None and train is not None:
            raise ConfigError(f"task {task}: give either predictions or training data")
    params = {
        "info_predictions": info_predictions,
        "emotion_predictions": emotion_predictions,
        "train_info": train_info,
        "train_emotion": train_emotion,
    }
    external = {"corpus": manifest.run_dir / "corpus" / "posts.jsonl"}
    for name, value in (
        ("info_predictions", info_predictions),
        ("emotion_predictions", emotion_predictions),
        ("train_info", train_info),
        ("train_emotion", train_emotion),
    ):
        if value is not None:
            external[name] = Path(value)
    inputs = hash_inputs(external)
    if manifest.up_to_date("classify", params, inputs):
        print("classify: up to date")
        return

    corpus = _load_corpus(manifest)
    analysis = sorted(corpus_mod.filter_analysis_set(corpus))
    out_dir = manifest.run_dir / "labels"
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    coverage_doc = {}
    for task, (pred, train) in sources.items():
        if pred is not None:
            ingest = textmodel.ingest_predictions(pred, task, analysis)
            labels = ingest.labels
            coverage_doc[task] = ingest.to_dict()
        else:
            examples = _read_examples(train)
            clf = textmodel.train_baseline(examples, task)
            bundle = manifest.run_dir / "models" / task
            clf.save(bundle)
            labels = {
                post_id: clf.predict(corpus.posts[post_id].text)
                for post_id in analysis
            }
            coverage_doc[task] = {"coverage": 1.0, "n_labeled": len(labels),
                                  "n_rejected": 0, "n_unknown_posts": 0}
        out = out_dir / f"{task}.csv"
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["post_id", "label"])
        for post_id in sorted(labels):
            writer.writerow([post_id, labels[post_id]])
        atomic_write_text(out, buf.getvalue())
        outputs.append(out)
        print(f"classify[{task}]: coverage={coverage_doc[task]['coverage']:.4f}")
    coverage_path = out_dir / "coverage.json"
    write_json(coverage_path, coverage_doc)
    outputs.append(coverage_path)
    manifest.record("classify", params, inputs, outputs)


def _read_examples(path) -> list[textmodel.LabeledExample]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["post_id", "text", "label", "split"]:
            raise CrisisImgError(
                f"{path}: expected header 'post_id,text,label,split', got {header}"
            )
        return [
            textmodel.LabeledExample(post_id=r[0], text=r[1], label=r[2], split=r[3])
            for r in reader
            if r
        ]


def _read_label_csv(path) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)  # header
        return {row[0]: row[1] for row in reader if row}


def _themed_model(manifest: RunManifest) -> cluster_mod.ClusterModel:
    """The refined model when available, else the raw clustering with
    placeholder theme names per cluster index."""
    refined = manifest.run_dir / "refine" / "final_model.json"
    if refined.exists():
        return cluster_mod.load_model(
            refined, manifest.run_dir / "refine" / "final_centroids.cemb"
        )
    model = cluster_mod.load_model(
        manifest.run_dir / "cluster" / "model.json",
        manifest.run_dir / "cluster" / "centroids.cemb",
    )
    model.themes = {j: f"cluster-{j}" for j in model.cluster_indices()}
    return model


def _post_visual_themes(
    corpus: corpus_mod.Corpus, analysis: list[str], model: cluster_mod.ClusterModel
) -> dict[str, str]:
    """Per-post image type: dominant visual theme, or "no-image"."""
    assignment = model.assignments
    out: dict[str, str] = {}
    for post_id in analysis:
        dominant = corpus_mod.dominant_visual_theme(corpus, post_id, assignment)
        out[post_id] = NO_IMAGE if dominant is None else model.theme_of(dominant)
    return out


def cmd_stats(manifest: RunManifest, cfg: dict) -> None:
    manifest.require("stats")
    params = {"tz_offset_hours": cfg["run"]["tz_offset_hours"]}
    input_paths = {
        "corpus": manifest.run_dir / "corpus" / "posts.jsonl",
        "info": manifest.run_dir / "labels" / "info_theme.csv",
        "emotion": manifest.run_dir / "labels" / "emotion.csv",
        "model": manifest.run_dir / "cluster" / "model.json",
    }
    if (manifest.run_dir / "refine" / "final_model.json").exists():
        input_paths["refined"] = manifest.run_dir / "refine" / "final_model.json"
    inputs = hash_inputs(input_paths)
    if manifest.up_to_date("stats", params, inputs):
        print("stats: up to date")
        return

    corpus = _load_corpus(manifest)
    analysis = sorted(corpus_mod.filter_analysis_set(corpus))
    model = _themed_model(manifest)
    visual = _post_visual_themes(corpus, analysis, model)
    info_labels = _read_label_csv(manifest.run_dir / "labels" / "info_theme.csv")
    emotion_labels = _read_label_csv(manifest.run_dir / "labels" / "emotion.csv")

    # canonical theme order: ascending final cluster index, then "no-image"
    theme_names: list[str] = []
    for j in sorted(model.cluster_indices()):
        name = model.theme_of(j)
        if name not in theme_names:
            theme_names.append(name)
    row_order = theme_names + [NO_IMAGE]
    info_table = stats_mod.cross_tabulate(
        analysis, visual, info_labels,
        row_order=row_order,
        col_order=[m.value for m in textmodel.InfoTheme],
    )
    emotion_table = stats_mod.cross_tabulate(
        analysis, visual, emotion_labels,
        row_order=row_order,
        col_order=[m.value for m in textmodel.EmotionType],
    )

    tests: dict = {"coverage": {
        "info_theme_excluded": info_table.n_excluded,
        "emotion_excluded": emotion_table.n_excluded,
    }}
    for name, table in (("info_theme", info_table), ("emotion", emotion_table)):
        try:
            result = stats_mod.chi_square(table)
            tests[f"chi_square_{name}"] = {
                "statistic": result.statistic,
                "df": result.df,
                "p_value": result.p_value,
            }
        except ValueError as exc:
            tests[f"chi_square_{name}"] = {"error": str(exc)}

    # engagement across visual themes (image-bearing posts only)
    theme_groups: dict[str, list[str]] = {}
    for post_id in analysis:
        theme = visual[post_id]
        if theme != NO_IMAGE:
            theme_groups.setdefault(theme, []).append(post_id)
    anova: dict = {}
    if len(theme_groups) >= 2:
        for index in corpus_mod.ENGAGEMENT_INDEXES:
            groups = [
                [getattr(corpus.posts[i], index) for i in members]
                for _, members in sorted(theme_groups.items())
            ]
            try:
                result = stats_mod.one_way_anova(groups)
                anova[index] = result.to_dict()
            except ValueError as exc:
                anova[index] = {"error": str(exc)}
    tests["anova_engagement_by_theme"] = anova

    out_dir = manifest.run_dir / "stats"
    out_dir.mkdir(parents=True, exist_ok=True)
    info_path = out_dir / "info_table.json"
    emotion_path = out_dir / "emotion_table.json"
    tests_path = out_dir / "tests.json"
    visual_path = out_dir / "post_visual_themes.csv"
    write_json(info_path, info_table.to_dict())
    write_json(emotion_path, emotion_table.to_dict())
    write_json(tests_path, tests)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["post_id", "visual_theme"])
    for post_id in analysis:
        writer.writerow([post_id, visual[post_id]])
    atomic_write_text(visual_path, buf.getvalue())
    print(
        "stats: chi-square info p="
        f"{tests['chi_square_info_theme'].get('p_value', 'n/a')}, emotion p="
        f"{tests['chi_square_emotion'].get('p_value', 'n/a')}"
    )
    manifest.record(
        "stats", params, inputs, [info_path, emotion_path, tests_path, visual_path]
    )


def cmd_report(manifest: RunManifest, cfg: dict) -> None:
    manifest.require("report")
    params = {"tz_offset_hours": cfg["run"]["tz_offset_hours"]}
    input_paths = {
        "corpus": manifest.run_dir / "corpus" / "posts.jsonl",
        "info_table": manifest.run_dir / "stats" / "info_table.json",
        "emotion_table": manifest.run_dir / "stats" / "emotion_table.json",
        "tests": manifest.run_dir / "stats" / "tests.json",
        "visual": manifest.run_dir / "stats" / "post_visual_themes.csv",
        "info": manifest.run_dir / "labels" / "info_theme.csv",
        "emotion": manifest.run_dir / "labels" / "emotion.csv",
    }
    refine_json = manifest.run_dir / "refine" / "run.json"
    if refine_json.exists():
        input_paths["refine"] = refine_json
    inputs = hash_inputs(input_paths)
    if manifest.up_to_date("report", params, inputs):
        print("report: up to date")
        return

    corpus = _load_corpus(manifest)
    analysis = sorted(corpus_mod.filter_analysis_set(corpus))
    visual = _read_label_csv(manifest.run_dir / "stats" / "post_visual_themes.csv")
    info_labels = _read_label_csv(manifest.run_dir / "labels" / "info_theme.csv")
    emotion_labels = _read_label_csv(manifest.run_dir / "labels" / "emotion.csv")
    tz = _cfg_float(cfg, "run", "tz_offset_hours")

    report_dir = manifest.run_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    outputs = []

    # engagement.csv: has-image partition plus per-visual-theme groups
    engagement_rows = []
    for grouping in ("with-images", "without-images"):
        engagement_rows.extend(
            corpus_mod.engagement_summary(corpus, analysis, grouping)
        )
    themed = {i: t for i, t in visual.items() if t != NO_IMAGE}
    engagement_rows.extend(
        corpus_mod.engagement_summary(
            corpus, analysis, "by-visual-theme", themes=themed
        )
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["group", "index", "n", "mean", "sd"])
    for row in engagement_rows:
        writer.writerow([row.group, row.index, row.n, repr(row.mean), repr(row.sd)])
    engagement_path = report_dir / "engagement.csv"
    atomic_write_text(engagement_path, buf.getvalue())
    outputs.append(engagement_path)

    # distribution tables in the figure layout
    for name, table_json in (
        ("info_by_image_type.csv", "info_table.json"),
        ("emotion_by_image_type.csv", "emotion_table.json"),
    ):
        doc = json.loads(
            (manifest.run_dir / "stats" / table_json).read_text(encoding="utf-8")
        )
        table = stats_mod.ContingencyTable(
            doc["row_labels"], doc["col_labels"], np.asarray(doc["counts"]),
            n_excluded=doc["n_excluded"],
        )
        path = report_dir / name
        tmp = path.with_name(path.name + ".tmp")
        stats_mod.write_contingency_csv(table, tmp)
        os.replace(tmp, path)
        outputs.append(path)

    # temporal.csv: volume plus per-category stacked daily counts
    timestamps = [corpus.posts[i].created_at for i in analysis]
    volume = stats_mod.temporal_series(timestamps, tz_offset_hours=tz)
    info_series = _category_series(corpus, info_labels, tz)
    emotion_series = _category_series(corpus, emotion_labels, tz)
    info_cats = [m.value for m in textmodel.InfoTheme]
    emotion_cats = [m.value for m in textmodel.EmotionType]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["date", "volume"]
        + [f"info:{c}" for c in info_cats]
        + [f"emotion:{c}" for c in emotion_cats]
    )
    for i, day in enumerate(volume.dates):
        row = [day.isoformat(), volume.counts["volume"][i]]
        row += [_series_count(info_series, c, day) for c in info_cats]
        row += [_series_count(emotion_series, c, day) for c in emotion_cats]
        writer.writerow(row)
    temporal_path = report_dir / "temporal.csv"
    atomic_write_text(temporal_path, buf.getvalue())
    outputs.append(temporal_path)

    # tests.json passthrough
    tests_path = report_dir / "tests.json"
    atomic_write_text(
        tests_path,
        (manifest.run_dir / "stats" / "tests.json").read_text(encoding="utf-8"),
    )
    outputs.append(tests_path)

    # consistency.csv: the model-performance table for this run
    consistency_path = report_dir / "consistency.csv"
    rows = _consistency_rows(manifest)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["feature_backend", "clustering_method", "split_merge",
         "avg_within_cluster_consistency"]
    )
    for row in rows:
        writer.writerow(row)
    atomic_write_text(consistency_path, buf.getvalue())
    outputs.append(consistency_path)

    print(f"report: {len(outputs)} artifact(s) in {report_dir}")
    manifest.record("report", params, inputs, outputs)


def _category_series(
    corpus: corpus_mod.Corpus, labels: dict[str, str], tz: float
) -> stats_mod.TemporalSeries | None:
    if not labels:
        return None
    ids = sorted(labels)
    return stats_mod.temporal_series(
        [corpus.posts[i].created_at for i in ids],
        [labels[i] for i in ids],
        tz_offset_hours=tz,
    )


def _series_count(series: stats_mod.TemporalSeries | None, category: str, day) -> int:
    if series is None or category not in series.counts:
        return 0
    try:
        idx = series.dates.index(day)
    except ValueError:
        return 0
    return series.counts[category][idx]


def _consistency_rows(manifest: RunManifest) -> list[list]:
    refine_json = manifest.run_dir / "refine" / "run.json"
    if not refine_json.exists():
        return []
    doc = json.loads(refine_json.read_text(encoding="utf-8"))
    backend = (
        manifest.stages.get("embed", {}).get("info", {}).get("backend_tag")
        or "precomputed"
    )
    rounds = doc.get("rounds", [])
    rows: list[list] = []
    if rounds:
        rows.append(
            [backend, "kmeans", "No", repr(rounds[0]["average_consistency"])]
        )
        if doc.get("status") != "measured":
            rows.append(
                [backend, "kmeans", "Yes", repr(rounds[-1]["average_consistency"])]
            )
    return rows


def cmd_eval_consistency(run_dirs: list[str], output: str | None) -> None:
    rows: list[list] = []
    for run_dir in run_dirs:
        manifest_path = Path(run_dir) / "manifest.json"
        if not manifest_path.exists():
            raise CrisisImgError(f"no manifest in {run_dir}")
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
        mock = RunManifest(Path(run_dir), doc.get("config", {}))
        mock.stages = doc.get("stages", {})
        rows.extend(_consistency_rows(mock))
    header = ["feature_backend", "clustering_method", "split_merge",
              "avg_within_cluster_consistency"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    if output:
        atomic_write_text(output, buf.getvalue())
        print(f"eval-consistency: {len(rows)} row(s) -> {output}")
    else:
        sys.stdout.write(buf.getvalue())


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crisisimg",
        description="Crisis-corpus image/text analysis pipeline",
    )
    parser.add_argument("--run-dir", help="run directory (stage artifacts + manifest)")
    parser.add_argument("--config", help="INI config file (key=value sections)")
    parser.add_argument("--seed", type=int, help="override [run] seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest a corpus JSONL file")
    p.add_argument("--posts", required=True)

    p = sub.add_parser("embed", help="extract or import image embeddings")
    p.add_argument("--images-root", help="directory image sources resolve against")
    p.add_argument("--embeddings", help="precomputed CEMB/CSV embedding file")

    p = sub.add_parser("cluster", help="cluster embeddings (silhouette K search)")
    p.add_argument("--k", type=int, help="fixed K (skips the search)")

    p = sub.add_parser("refine", help="consistency-guided split/merge refinement")
    p.add_argument("--labels", required=True,
                   help="oracle labels CSV (image_id,theme)")

    p = sub.add_parser("classify", help="attach text labels (external or baseline)")
    p.add_argument("--info-predictions")
    p.add_argument("--emotion-predictions")
    p.add_argument("--train-info", help="labeled examples CSV (post_id,text,label,split)")
    p.add_argument("--train-emotion")

    sub.add_parser("stats", help="cross-modal statistics")
    sub.add_parser("report", help="emit the report/ artifact directory")

    p = sub.add_parser("eval-consistency", help="model-performance table across runs")
    p.add_argument("--runs", required=True, help="comma-separated run dirs")
    p.add_argument("-o", "--output", help="output CSV (default: stdout)")

    p = sub.add_parser("serve", help="start the annotation HTTP service")
    p.add_argument("--runs-dir", required=True)
    p.add_argument("--images-root")
    p.add_argument("--token", default=os.environ.get("CRISISIMG_TOKEN", ""))
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--ui-dir", help="coder console directory to mount at /ui")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "eval-consistency":
            cmd_eval_consistency(args.runs.split(","), args.output)
            return EXIT_OK
        if args.command == "serve":
            from .service import create_app
            import uvicorn

            app = create_app(
                runs_dir=args.runs_dir,
                token=args.token,
                images_root=args.images_root,
                static_dir=args.ui_dir,
            )
            uvicorn.run(app, host=args.host, port=args.port)
            return EXIT_OK

        if not args.run_dir:
            raise ConfigError(f"command {args.command!r} requires --run-dir")
        overrides = {}
        if args.seed is not None:
            overrides["run.seed"] = str(args.seed)
        cfg = load_config(args.config, overrides)
        run_dir = Path(args.run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest.open(run_dir, cfg)
        manifest.save()

        if args.command == "ingest":
            cmd_ingest(manifest, cfg, args.posts)
        elif args.command == "embed":
            cmd_embed(manifest, cfg, images_root=args.images_root,
                      embeddings=args.embeddings)
        elif args.command == "cluster":
            cmd_cluster(manifest, cfg, k=args.k)
        elif args.command == "refine":
            cmd_refine(manifest, cfg, labels=args.labels)
        elif args.command == "classify":
            cmd_classify(
                manifest, cfg,
                info_predictions=args.info_predictions,
                emotion_predictions=args.emotion_predictions,
                train_info=args.train_info,
                train_emotion=args.train_emotion,
            )
        elif args.command == "stats":
            cmd_stats(manifest, cfg)
        elif args.command == "report":
            cmd_report(manifest, cfg)
        else:  # pragma: no cover
            parser.error(f"unknown command {args.command}")
        return EXIT_OK
    except MissingStageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_STAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (InvariantViolation, AssertionError) as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except CrisisImgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
