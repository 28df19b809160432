"""End-to-end runs: ingest, per-user embedding and mixture fit, scoring, evaluation.

A run directory holds every intermediate artifact::

    sequences.csv            user-day token strings (no labels)
    users.csv                per-user diagnostics
    embeddings/<hash>.json   skip-gram table per user
    summaries/<hash>.csv     day vectors per user
    models/<hash>.json       fitted mixture per user
    scored.csv               scores, ratios, flags and labels
    metrics.json, roc.csv    evaluation at the configured threshold
    manifest.json            relative paths of the above

``<hash>`` is the first 16 hex digits of the SHA-256 of the user id.  Labels
are read only by the evaluation stage.  Per-user seeds are derived from the
run seed and the user id, so a user's artifacts do not depend on which other
users are present.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from collections.abc import Iterator, Sequence
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from datetime import date
from pathlib import Path

import numpy as np

from .detection import (
    DEFAULT_THRESHOLD,
    ScoredDay,
    anomaly_ratios,
    flag_anomalies,
    read_scored,
    score_user_days,
    write_scored,
)
from .embedding import EmbeddingConfig, read_summaries, summarize_all, summary_matrix, train_skipgram, write_summaries
from .errors import ConfigError, SchemaError, StageError
from .evaluation import ConfusionMatrix, Metrics, RocCurve, confusion, metrics, roc_curve, write_roc, write_roc_header
from .ingest import by_user, ingest_directory, read_labels, read_sequences, write_sequences
from .mixture import FitConfig, fit_bgmm, fit_gmm_em, load_model, save_model
from .synthgen import SynthConfig, generate_org

log = logging.getLogger(__name__)


def parse_variant(variant: str) -> int | None:
    """``"bgmm"`` gives ``None``; ``"gmm-fixed-K"`` gives ``K``."""
    if variant == "bgmm":
        return None
    prefix = "gmm-fixed-"
    if variant.startswith(prefix) and variant[len(prefix) :].isdigit() and int(variant[len(prefix) :]) >= 1:
        return int(variant[len(prefix) :])
    raise ConfigError(f"model variant must be 'bgmm' or 'gmm-fixed-K' with K >= 1, got {variant!r}")


@dataclass(frozen=True)
class RunConfig:
    output_dir: Path
    input_dir: Path | None = None
    labels: Path | None = None
    synth: SynthConfig | None = None
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    threshold: float = DEFAULT_THRESHOLD
    variant: str = "bgmm"
    seeds: tuple[int, ...] = (0,)
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if (self.input_dir is None) == (self.synth is None):
            raise ConfigError("give exactly one input source: input_dir or synth")
        if self.synth is not None and self.labels is not None:
            raise ConfigError("labels come from the generator when synth is the source")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if any(not 0 <= s < 2**64 for s in self.seeds):
            raise ConfigError("seeds must be 64-bit unsigned integers")
        if math.isnan(self.threshold):
            raise ConfigError("threshold must not be NaN")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        parse_variant(self.variant)


@dataclass(frozen=True)
class RunResult:
    seed: int
    run_dir: Path
    manifest: dict
    scored: list[ScoredDay]
    matrix: ConfusionMatrix | None
    metrics: Metrics | None
    roc: RocCurve | None


def user_hash(user_id: str) -> str:
    return hashlib.sha256(user_id.encode("utf-8")).hexdigest()[:16]


def user_seed(seed: int, user_id: str, stream: int) -> int:
    """Deterministic 32-bit seed for one user and purpose, independent of other users."""
    entropy = [seed, int(user_hash(user_id), 16), stream]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


@contextmanager
def _stage(name: str, user: str | None = None) -> Iterator[None]:
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, user, exc) from exc


@contextmanager
def _timed(name: str) -> Iterator[None]:
    start = time.perf_counter()
    yield
    log.info("stage %s finished in %.2fs", name, time.perf_counter() - start)


# -- stages -----------------------------------------------------------------


def ingest_stage(input_dir: Path, run_dir: Path) -> Path:
    """Parse the domain CSVs into ``sequences.csv``; labels are not attached."""
    with _stage("ingest"), _timed("ingest"):
        sequences = ingest_directory(input_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        path = run_dir / "sequences.csv"
        write_sequences(path, sequences)
    log.info("ingested %d user-days for %d users", len(sequences), len({s.user_id for s in sequences}))
    return path


def _train_user(args: tuple) -> dict:
    user, seqs, run_dir, embedding, fit, fixed_k, seed = args
    h = user_hash(user)
    with _stage("embedding", user):
        table = train_skipgram(seqs, replace(embedding, seed=user_seed(seed, user, 0)))
        table.save(run_dir / "embeddings" / f"{h}.json")
        summaries = summarize_all(seqs, table)
        write_summaries(run_dir / "summaries" / f"{h}.csv", summaries)
    with _stage("fit", user):
        X = summary_matrix(summaries)
        cfg = fit.replace(seed=user_seed(seed, user, 1))
        if fixed_k is None:
            model, report = fit_bgmm(X, cfg)
        else:
            # short histories cannot hold K components; EM needs at least K points
            cfg = cfg.replace(k=min(fixed_k, X.shape[0]))
            model, report = fit_gmm_em(X, cfg)
        save_model(run_dir / "models" / f"{h}.json", model, user=user, config=cfg, report=report)
    return {
        "user": user,
        "hash": h,
        "days": len(seqs),
        "k": model.k,
        "effective_k": report.effective_k,
        "iterations": report.iterations,
        "converged": report.converged,
    }


def train_stage(
    sequences_path: Path, run_dir: Path, embedding: EmbeddingConfig, fit: FitConfig, variant: str, seed: int, workers: int = 1
) -> list[dict]:
    """Embed and fit every user; returns per-user diagnostics in user order."""
    fixed_k = parse_variant(variant)
    with _stage("train"):
        users = by_user(read_sequences(sequences_path))
        for sub in ("embeddings", "summaries", "models"):
            (run_dir / sub).mkdir(parents=True, exist_ok=True)
    jobs = [(u, users[u], run_dir, embedding, fit, fixed_k, seed) for u in sorted(users)]
    with _timed("train"):
        if workers == 1:
            rows = [_train_user(job) for job in jobs]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(_train_user, jobs))
    return rows


def score_stage(run_dir: Path, users: Sequence[str]) -> tuple[list[ScoredDay], dict[str, dict]]:
    """Score every user's days from persisted summaries and models; ratios set, flags unset."""
    scored: list[ScoredDay] = []
    diagnostics = {}
    with _timed("score"):
        for user in users:
            h = user_hash(user)
            with _stage("score", user):
                summaries = read_summaries(run_dir / "summaries" / f"{h}.csv")
                _, model, _ = load_model(run_dir / "models" / f"{h}.json")
                days = score_user_days(summaries, model)
                ratios, fallback = anomaly_ratios(np.array([d.log_likelihood for d in days]))
                if fallback:
                    log.warning("user %s: mean score near zero; using rank-based ratios", user)
                scored.extend(replace(d, ratio=float(r)) for d, r in zip(days, ratios))
                diagnostics[user] = {"mean_log_likelihood": float(np.mean([d.log_likelihood for d in days])), "rank_fallback": fallback}
    return scored, diagnostics


def evaluation_fields(threshold: float, labels_path: Path | None) -> dict:
    return {
        "threshold": threshold,
        "labels": str(Path(labels_path).resolve()) if labels_path is not None else None,
        "scored": "scored.csv",
        "metrics": "metrics.json",
        "roc": "roc.csv",
    }


def attach_labels(scored: Sequence[ScoredDay], labels: set[tuple[str, date]]) -> list[ScoredDay]:
    return [replace(s, label=(s.user_id, s.day) in labels) for s in scored]


def evaluate_stage(
    scored: Sequence[ScoredDay], labels_path: Path | None, threshold: float, seed: int, run_dir: Path
) -> tuple[list[ScoredDay], ConfusionMatrix | None, Metrics | None, RocCurve | None]:
    """Flag, attach labels, and write ``scored.csv``, ``metrics.json`` and ``roc.csv``."""
    with _stage("evaluate"), _timed("evaluate"):
        flagged = flag_anomalies(scored, threshold)
        matrix = rates = roc = None
        if labels_path is not None:
            flagged = attach_labels(flagged, read_labels(labels_path))
            matrix = confusion(flagged)
            rates = metrics(matrix)
            if 0 < matrix.tp + matrix.fn < matrix.total:
                roc = roc_curve(flagged)
            else:
                log.warning("labels hold a single class; ROC and AUC are undefined")
        if roc is not None:
            write_roc(run_dir / "roc.csv", roc)
        else:
            write_roc_header(run_dir / "roc.csv")
        write_scored(run_dir / "scored.csv", flagged)
        write_metrics(run_dir / "metrics.json", matrix, rates, roc, threshold, seed)
    return flagged, matrix, rates, roc


def metrics_payload(
    matrix: ConfusionMatrix | None, rates: Metrics | None, roc: RocCurve | None, threshold: float, seed: int
) -> dict:
    counts = asdict(matrix) if matrix is not None else dict.fromkeys(("tp", "fp", "tn", "fn"))
    values = rates.as_dict() if rates is not None else dict.fromkeys(("fpr", "recall", "tnr", "accuracy"))
    return {
        **counts,
        **values,
        "auc": roc.auc if roc is not None else None,
        "threshold": threshold,
        "seed": seed,
    }


def write_metrics(
    path: Path, matrix: ConfusionMatrix | None, rates: Metrics | None, roc: RocCurve | None, threshold: float, seed: int
) -> None:
    path.write_text(json.dumps(metrics_payload(matrix, rates, roc, threshold, seed), indent=2) + "\n", encoding="utf-8")


USER_FIELDS = ["user", "hash", "days", "k", "effective_k", "iterations", "converged", "mean_log_likelihood", "rank_fallback"]


def write_user_diagnostics(path: Path, rows: Sequence[dict]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=USER_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in USER_FIELDS})


def read_user_diagnostics(path: Path) -> list[dict]:
    """Rows of ``users.csv`` as strings; writing them back reproduces the file."""
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != USER_FIELDS:
            raise SchemaError(",".join(USER_FIELDS), path)
        return list(reader)


def artifact_fields(rows: Sequence[dict]) -> dict:
    """Manifest entries for the per-user artifacts of ``rows``."""
    return {
        "users": "users.csv",
        "embeddings": sorted(f"embeddings/{r['hash']}.json" for r in rows),
        "summaries": sorted(f"summaries/{r['hash']}.csv" for r in rows),
        "models": sorted(f"models/{r['hash']}.json" for r in rows),
    }


def update_manifest(run_dir: Path, **fields: object) -> dict:
    """Merge ``fields`` into ``manifest.json`` (created if absent) and return the result.

    Each stage records what it produced, so a run assembled stage by stage
    ends with the same manifest as a single ``run``.
    """
    path = run_dir / "manifest.json"
    manifest = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    manifest.update(fields)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


# -- orchestration ----------------------------------------------------------


def run_dir_for(config: RunConfig, index: int) -> Path:
    return config.output_dir / f"run-{index:03d}-seed-{config.seeds[index]}"


def run_one(config: RunConfig, index: int) -> RunResult:
    seed = config.seeds[index]
    run_dir = run_dir_for(config, index)
    run_dir.mkdir(parents=True, exist_ok=True)
    if config.synth is not None:
        org = run_dir / "org"
        with _stage("synth"), _timed("synth"):
            generate_org(replace(config.synth, seed=seed), org)
        input_dir, labels_path = org, org / "labels.csv"
    else:
        input_dir, labels_path = config.input_dir, config.labels

    sequences_path = ingest_stage(Path(input_dir), run_dir)
    rows = train_stage(sequences_path, run_dir, config.embedding, config.fit, config.variant, seed, config.workers)
    scored, diagnostics = score_stage(run_dir, [r["user"] for r in rows])
    for r in rows:
        r.update(diagnostics[r["user"]])
    write_user_diagnostics(run_dir / "users.csv", rows)
    scored, matrix, rates, roc = evaluate_stage(scored, labels_path, config.threshold, seed, run_dir)

    manifest = update_manifest(
        run_dir,
        source="synth" if config.synth is not None else str(Path(input_dir).resolve()),
        sequences="sequences.csv",
        seed=seed,
        variant=config.variant,
        **artifact_fields(rows),
        **evaluation_fields(config.threshold, labels_path),
    )
    return RunResult(seed, run_dir, manifest, scored, matrix, rates, roc)


def run(config: RunConfig) -> list[RunResult]:
    """Execute one full run per seed, in order."""
    config.output_dir.mkdir(parents=True, exist_ok=True)
    return [run_one(config, i) for i in range(len(config.seeds))]


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    matrix: ConfusionMatrix
    metrics: Metrics


def sweep_thresholds(
    run_dir: str | Path, thresholds: Sequence[float] | None = None, labels_path: str | Path | None = None
) -> list[SweepPoint]:
    """Re-flag a finished run at each threshold without refitting.

    ``thresholds`` defaults to every distinct ratio in the run plus ``-inf``,
    the full ROC.  Writes ``sweep.csv`` (one metrics row per threshold) and
    rewrites ``roc.csv`` from the labels used, so both files always agree.
    """
    run_dir = Path(run_dir)
    with _stage("sweep"), _timed("sweep"):
        scored = read_scored(run_dir / "scored.csv")
        if labels_path is not None:
            scored = attach_labels(scored, read_labels(labels_path))
        matrix = confusion(scored)  # fails early on unlabeled days
        if 0 < matrix.tp + matrix.fn < matrix.total:
            write_roc(run_dir / "roc.csv", roc_curve(scored))
        else:
            log.warning("labels hold a single class; ROC and AUC are undefined")
            write_roc_header(run_dir / "roc.csv")
        if thresholds is None:
            ratios = sorted({s.ratio for s in scored if s.ratio is not None}, reverse=True)
            thresholds = [*ratios, -math.inf]
        points = []
        for t in thresholds:
            m = confusion(flag_anomalies(scored, float(t)))
            points.append(SweepPoint(float(t), m, metrics(m)))
        with (run_dir / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "tp", "fp", "tn", "fn", "fpr", "recall", "tnr", "accuracy"])
            for p in points:
                rates = ["" if v is None else repr(v) for v in p.metrics.as_dict().values()]
                w.writerow([repr(p.threshold), p.matrix.tp, p.matrix.fp, p.matrix.tn, p.matrix.fn, *rates])
    return points
