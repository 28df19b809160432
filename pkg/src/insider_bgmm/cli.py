"""Command-line entry point: ``insider-bgmm <command> [options]``.

Every option can also come from a flat ``key = value`` file passed with
``--config``; keys are option names with dashes or underscores.  Options
given on the command line override the file.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from . import __version__
from .detection import DEFAULT_THRESHOLD, read_scored, write_scored
from .embedding import EmbeddingConfig
from .errors import ConfigError, InsiderBGMMError
from .evaluation import stability_report
from .ingest import read_labels
from .mixture import FitConfig
from .pipeline import (
    RunConfig,
    artifact_fields,
    evaluate_stage,
    evaluation_fields,
    ingest_stage,
    parse_variant,
    read_user_diagnostics,
    run,
    score_stage,
    sweep_thresholds,
    train_stage,
    update_manifest,
    write_user_diagnostics,
)
from .synthgen import SynthConfig, generate_org

log = logging.getLogger("insider_bgmm")


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"3"``, ``"1,5,9"`` or ranges such as ``"0-99"``, combinable with commas."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            if sep:
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return tuple(seeds)


def parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


# -- option groups ----------------------------------------------------------


def _add_synth(p: argparse.ArgumentParser) -> None:
    d = SynthConfig()
    g = p.add_argument_group("synthetic organization")
    g.add_argument("--n-users", type=int, default=d.n_users)
    g.add_argument("--n-days", type=int, default=d.n_days)
    g.add_argument("--behaviors-per-user", type=int, default=d.behaviors_per_user)
    g.add_argument("--anomaly-users", type=int, default=d.anomaly_users)
    g.add_argument("--anomaly-days-per-user", type=int, default=d.anomaly_days_per_user)
    g.add_argument("--separation", type=float, default=d.separation, help="anomaly and regime shift, in Poisson sds")
    g.add_argument("--base-rate", type=float, default=d.base_rate, help="mean daily count per body token type")


def _add_embedding(p: argparse.ArgumentParser) -> None:
    d = EmbeddingConfig()
    g = p.add_argument_group("skip-gram")
    g.add_argument("--dim", type=int, default=d.dim)
    g.add_argument("--window", type=int, default=d.window)
    g.add_argument("--negatives", type=int, default=d.negatives)
    g.add_argument("--epochs", type=int, default=d.epochs)
    g.add_argument("--learning-rate", type=float, default=d.learning_rate)
    g.add_argument("--min-learning-rate", type=float, default=d.min_learning_rate)


def _add_fit(p: argparse.ArgumentParser) -> None:
    d = FitConfig()
    g = p.add_argument_group("mixture fit")
    g.add_argument("--variant", default="bgmm", help="bgmm or gmm-fixed-K (default %(default)s)")
    g.add_argument("--k-max", type=int, default=d.k, help="truncation level for bgmm (default %(default)s)")
    g.add_argument("--reg-covar", type=float, default=d.reg_covar)
    g.add_argument("--tol", type=float, default=d.tol, help="per-sample objective change")
    g.add_argument("--max-iter", type=int, default=d.max_iter)
    g.add_argument("--weight-concentration", type=_optional_float, default=None, help="stick prior gamma (default 1/k_max)")
    g.add_argument("--n-init", type=int, default=d.n_init)
    g.add_argument("--weight-floor", type=float, default=d.weight_floor)
    g.add_argument("--mean-precision-prior", type=float, default=d.mean_precision_prior)
    g.add_argument("--degrees-of-freedom-prior", type=_optional_float, default=None, help="default D")
    g.add_argument("--covariance-prior", choices=("within", "total"), default=d.covariance_prior)
    g.add_argument("--merge-moves", type=_bool, default=d.merge_moves)
    g.add_argument("--workers", type=int, default=1, help="processes for per-user training; 1 is bitwise deterministic")


def _add_threshold(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, help="flag ratio > threshold (default %(default)s)")


def _embedding_config(a: argparse.Namespace) -> EmbeddingConfig:
    return EmbeddingConfig(a.dim, a.window, a.negatives, a.epochs, a.learning_rate, a.min_learning_rate)


def _fit_config(a: argparse.Namespace) -> FitConfig:
    return FitConfig(
        k=a.k_max,
        reg_covar=a.reg_covar,
        tol=a.tol,
        max_iter=a.max_iter,
        weight_concentration=a.weight_concentration,
        n_init=a.n_init,
        weight_floor=a.weight_floor,
        mean_precision_prior=a.mean_precision_prior,
        degrees_of_freedom_prior=a.degrees_of_freedom_prior,
        covariance_prior=a.covariance_prior,
        merge_moves=a.merge_moves,
    )


def _synth_config(a: argparse.Namespace, seed: int = 0) -> SynthConfig:
    return SynthConfig(
        n_users=a.n_users,
        n_days=a.n_days,
        behaviors_per_user=a.behaviors_per_user,
        anomaly_users=a.anomaly_users,
        anomaly_days_per_user=a.anomaly_days_per_user,
        seed=seed,
        separation=a.separation,
        base_rate=a.base_rate,
    )


# -- commands ---------------------------------------------------------------


def cmd_synth(a: argparse.Namespace) -> int:
    manifest = generate_org(_synth_config(a, a.seed), a.out)
    log.info("wrote %d events over %d user-days (%d positive) to %s", manifest["events"], manifest["active_days"], manifest["positive_days"], a.out)
    return 0


def cmd_ingest(a: argparse.Namespace) -> int:
    run_dir = Path(a.run_dir)
    ingest_stage(Path(a.input), run_dir)
    update_manifest(run_dir, source=str(Path(a.input).resolve()), sequences="sequences.csv")
    return 0


def cmd_train(a: argparse.Namespace) -> int:
    run_dir = Path(a.run_dir)
    rows = train_stage(run_dir / "sequences.csv", run_dir, _embedding_config(a), _fit_config(a), a.variant, a.seed, a.workers)
    write_user_diagnostics(run_dir / "users.csv", rows)
    update_manifest(run_dir, seed=a.seed, variant=a.variant, **artifact_fields(rows))
    return 0


def cmd_score(a: argparse.Namespace) -> int:
    run_dir = Path(a.run_dir)
    rows = read_user_diagnostics(run_dir / "users.csv")
    scored, diagnostics = score_stage(run_dir, [r["user"] for r in rows])
    for r in rows:
        r.update(diagnostics[r["user"]])
    write_user_diagnostics(run_dir / "users.csv", rows)
    write_scored(run_dir / "scored.csv", scored)
    return 0


def cmd_evaluate(a: argparse.Namespace) -> int:
    run_dir = Path(a.run_dir)
    labels = Path(a.labels) if a.labels else None
    scored = read_scored(run_dir / "scored.csv")
    _, _, rates, roc = evaluate_stage(scored, labels, a.threshold, a.seed, run_dir)
    update_manifest(run_dir, **evaluation_fields(a.threshold, labels))
    if rates is not None:
        auc = f"{roc.auc:.4f}" if roc is not None else "undefined"
        log.info("threshold %g: %s auc=%s", a.threshold, _fmt_rates(rates.as_dict()), auc)
    return 0


def _fmt_rates(values: dict) -> str:
    return " ".join(f"{k}={'undefined' if v is None else f'{v:.4f}'}" for k, v in values.items())


def cmd_run(a: argparse.Namespace) -> int:
    if (a.input is None) == (not a.synth):
        raise ConfigError("give exactly one input source: --input DIR or --synth")
    config = RunConfig(
        output_dir=Path(a.output),
        input_dir=Path(a.input) if a.input else None,
        labels=Path(a.labels) if a.labels else None,
        synth=_synth_config(a) if a.synth else None,
        embedding=_embedding_config(a),
        fit=_fit_config(a),
        threshold=a.threshold,
        variant=a.variant,
        seeds=a.seeds,
        workers=a.workers,
    )
    results = run(config)
    for r in results:
        if r.metrics is not None:
            auc = f"{r.roc.auc:.4f}" if r.roc is not None else "undefined"
            log.info("seed %d: %s auc=%s", r.seed, _fmt_rates(r.metrics.as_dict()), auc)
    if len(results) > 1:
        per_run = [
            {**r.metrics.as_dict(), "auc": r.roc.auc if r.roc is not None else None} for r in results if r.metrics is not None
        ]
        if per_run:
            for name, s in stability_report(per_run).items():
                if s.n:
                    log.info("%s over %d runs: mean %.4f min %.4f max %.4f sd %.4f", name, s.n, s.mean, s.min, s.max, s.stddev)
    return 0


def cmd_sweep(a: argparse.Namespace) -> int:
    thresholds: Sequence[float] | None = a.thresholds
    if a.grid is not None:
        lo, hi, n = a.grid
        if int(n) < 2:
            raise ConfigError("--grid needs at least 2 points")
        step = (hi - lo) / (int(n) - 1)
        thresholds = [lo + i * step for i in range(int(n))]
    labels = Path(a.labels) if a.labels else None
    if labels is not None:
        read_labels(labels)  # validate before touching the run directory
    points = sweep_thresholds(a.run_dir, thresholds, labels)
    log.info("swept %d thresholds; wrote sweep.csv and roc.csv in %s", len(points), a.run_dir)
    return 0


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value file supplying option defaults")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")

    parser = argparse.ArgumentParser(prog="insider-bgmm", description="Per-user insider-threat day detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a seeded synthetic organization")
    p.add_argument("--out", required=True, help="directory for the domain CSVs and ground truth")
    p.add_argument("--seed", type=int, default=0)
    _add_synth(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="parse domain CSVs into user-day sequences")
    p.add_argument("--input", required=True, help="directory holding logon/device/http/email/file .csv")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common], help="fit per-user embeddings and mixtures")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_embedding(p)
    _add_fit(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", parents=[common], help="score days from persisted models")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", parents=[common], help="flag days and compute metrics")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--labels", help="user,day sidecar of malicious days; omit to flag only")
    p.add_argument("--seed", type=int, default=0, help="recorded in metrics.json")
    _add_threshold(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", parents=[common], help="every stage, once per seed")
    p.add_argument("--output", required=True, help="parent directory for run-NNN-seed-S directories")
    p.add_argument("--input", help="directory of domain CSVs")
    p.add_argument("--labels", help="user,day sidecar for --input")
    p.add_argument("--synth", type=_bool, nargs="?", const=True, default=False, help="use the synthetic generator as the source")
    p.add_argument("--seeds", type=parse_seeds, default=(0,), help="e.g. 0-99 or 1,5,9 (default 0)")
    _add_threshold(p)
    _add_synth(p)
    _add_embedding(p)
    _add_fit(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="re-flag a finished run over many thresholds")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--labels", help="override the labels stored in scored.csv")
    how = p.add_mutually_exclusive_group()
    how.add_argument("--thresholds", type=parse_floats, help="comma-separated list (default: every distinct ratio)")
    how.add_argument("--grid", type=float, nargs=3, metavar=("LO", "HI", "N"), help="N evenly spaced thresholds")
    p.set_defaults(func=cmd_sweep)
    return parser


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:  # noqa: SLF001 - argparse exposes no public accessor
        if isinstance(action, argparse._SubParsersAction) and name in action.choices:
            return action.choices[name]
    raise KeyError(name)


def read_config_file(path: Path) -> dict[str, str]:
    """Flat ``key = value`` pairs; ``#`` and ``;`` start comment lines."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=", ":"))
    cp.optionxform = str
    try:
        cp.read_string("[config]\n" + path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return {k.strip().replace("-", "_"): v.strip() for k, v in cp["config"].items()}


def apply_config_file(sub: argparse.ArgumentParser, path: Path) -> None:
    """Install file values as defaults of ``sub``, converted by each option's type."""
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}  # noqa: SLF001
    defaults = {}
    for key, raw in read_config_file(path).items():
        action = actions.get(key)
        if action is None:
            raise ConfigError(f"{path}: unknown key {key!r} for this command")
        if isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
            value: object = _bool(raw)
        elif action.nargs is not None and action.nargs not in ("?",):
            value = [action.type(t) if action.type else t for t in raw.split()]
        else:
            value = action.type(raw) if action.type else raw
        if action.choices is not None and value not in action.choices:
            raise ConfigError(f"{path}: {key} must be one of {sorted(action.choices)}")
        defaults[key] = value
    # a required option supplied by the file no longer has to appear on the command line
    for key in defaults:
        actions[key].required = False
    sub.set_defaults(**defaults)


def _setup_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    try:
        if known.config is not None and known.command is not None:
            apply_config_file(_subparser(parser, known.command), known.config)
    except (ConfigError, KeyError, OSError, ValueError, argparse.ArgumentTypeError) as exc:
        parser.error(f"config file: {exc}")
    args = parser.parse_args(argv)
    _setup_logging(args.verbose, args.quiet)
    try:
        if getattr(args, "variant", None) is not None:
            parse_variant(args.variant)
        return args.func(args)
    except (InsiderBGMMError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
