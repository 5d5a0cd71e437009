"""Command-line entry point: ``mfrec {sweep,train,cluster,recommend,eval}``."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from . import clustering, evaluation, persistence, recommender
from .ratings import FillStrategy, RatingError, RatingScale, build_matrix, load_ratings

log = logging.getLogger("mfrec")


class ConfigError(ValueError):
    """Bad flags or config file (exit status 2)."""


@dataclass
class RunConfig:
    dataset: str | None = None
    format: str = "tsv"
    scale: str = "1:5"
    fraction: float = 0.2
    seed: int = 0
    algorithms: list = field(default_factory=lambda: ["nmf", "svd_t", "svd_i"])
    fills: list = field(default_factory=lambda: ["user_mean"])
    components: list = field(default_factory=lambda: list(range(2, 31)))
    nmf_max_iterations: int = 1000
    nmf_rel_tolerance: float = 1e-6
    svd_i_threshold: float = 1e-4
    svd_i_max_iterations: int = 50
    sgd_alpha: float = 0.005
    sgd_lambda: float = 0.02
    sgd_epochs: int = 50
    kmeans_k: int = 10
    kmeans_restarts: int = 10
    kmeans_max_iterations: int = 300
    min_support: int = 3
    duplicate_policy: str = "error"
    on_out_of_range: str = "error"
    workers: int = 1
    timing: bool = False
    out: str = "out"

    def rating_scale(self) -> RatingScale:
        return RatingScale.parse(self.scale)

    def fill_strategies(self) -> list[FillStrategy]:
        return [FillStrategy.parse(f) for f in self.fills]

    def sweep_settings(self) -> evaluation.SweepSettings:
        return evaluation.SweepSettings(
            nmf_max_iterations=self.nmf_max_iterations,
            nmf_rel_tolerance=self.nmf_rel_tolerance,
            svd_i_threshold=self.svd_i_threshold,
            svd_i_max_iterations=self.svd_i_max_iterations,
            sgd_alpha=self.sgd_alpha, sgd_lambda=self.sgd_lambda, sgd_epochs=self.sgd_epochs)

    def validate(self) -> None:
        checks = [
            (self.dataset is not None, "no dataset given (--dataset or config 'dataset')"),
            (self.dataset is None or Path(self.dataset).is_file(),
             f"dataset {self.dataset!r} does not exist"),
            (self.format in ("tsv", "csv"), f"format must be tsv or csv, got {self.format!r}"),
            (0.0 <= self.fraction < 1.0, "fraction must lie in [0, 1)"),
            (bool(self.algorithms), "at least one algorithm is required"),
            (all(a in evaluation.ALGORITHMS for a in self.algorithms),
             f"algorithms must be among {', '.join(evaluation.ALGORITHMS)}"),
            (bool(self.fills), "at least one fill is required"),
            (bool(self.components) and all(c >= 1 for c in self.components),
             "components must be positive integers"),
            (self.nmf_max_iterations >= 1, "nmf_max_iterations must be >= 1"),
            (self.nmf_rel_tolerance >= 0, "nmf_rel_tolerance must be >= 0"),
            (self.svd_i_threshold > 0, "svd_i_threshold must be > 0"),
            (self.svd_i_max_iterations >= 1, "svd_i_max_iterations must be >= 1"),
            (self.sgd_alpha >= 0 and self.sgd_lambda >= 0, "sgd_alpha/sgd_lambda must be >= 0"),
            (self.sgd_epochs >= 0, "sgd_epochs must be >= 0"),
            (self.kmeans_k >= 1, "kmeans_k must be >= 1"),
            (self.kmeans_restarts >= 1, "kmeans_restarts must be >= 1"),
            (self.kmeans_max_iterations >= 1, "kmeans_max_iterations must be >= 1"),
            (self.min_support >= 0, "min_support must be >= 0"),
            (self.duplicate_policy in ("error", "mean", "last"), "bad duplicate_policy"),
            (self.on_out_of_range in ("error", "clamp"), "bad on_out_of_range"),
            (self.workers >= 1, "workers must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        try:
            self.rating_scale()
            self.fill_strategies()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name, value):
    default = _FIELDS[name].default
    if name == "scale" and isinstance(value, (list, tuple)) and len(value) == 2:
        return f"{value[0]}:{value[1]}"
    if name in ("algorithms", "fills"):
        if isinstance(value, str):
            value = value.split(",")
        return [str(v).strip() for v in value if str(v).strip()]
    if name == "components":
        return parse_components(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config field {name!r} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"config field {name!r} must be an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config field {name!r} must be a number")
        return float(value)
    return value


def parse_components(value) -> list[int]:
    """Accept ``15``, ``"5,10,15"``, ``"2-30"``, ``"2..30"`` or a JSON list of those."""
    items = value if isinstance(value, (list, tuple)) else [value]
    out = []
    for item in items:
        if isinstance(item, int) and not isinstance(item, bool):
            out.append(item)
            continue
        for part in str(item).split(","):
            part = part.strip()
            if not part:
                continue
            sep = ".." if ".." in part else ("-" if "-" in part[1:] else None)
            try:
                if sep:
                    lo, hi = (int(x) for x in part.split(sep))
                    if lo > hi:
                        raise ValueError
                    out.extend(range(lo, hi + 1))
                else:
                    out.append(int(part))
            except ValueError:
                raise ConfigError(f"bad component count {part!r}") from None
    return sorted(set(out))


def load_config(path: str | None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a flat JSON object")
    unknown = sorted(set(doc) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
    for name, value in doc.items():
        setattr(cfg, name, _coerce(name, value))
    # Relative dataset paths in a config file are relative to that file.
    if cfg.dataset and not os.path.isabs(cfg.dataset):
        cfg.dataset = str(Path(path).parent / cfg.dataset)
    return cfg


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}\n{self.format_usage().rstrip()}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON run configuration")
    common.add_argument("--dataset", help="ratings file")
    common.add_argument("--format", choices=("tsv", "csv"))
    common.add_argument("--scale", help="rating scale as MIN:MAX (default 1:5)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--fraction", type=float, help="test fraction of the train/test split")
    common.add_argument("--duplicate-policy", dest="duplicate_policy",
                        choices=("error", "mean", "last"))
    common.add_argument("--on-out-of-range", dest="on_out_of_range", choices=("error", "clamp"))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="mfrec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sweep", parents=[common], help="RMSE/MAE over algorithms x fills x components")
    p.add_argument("--algorithms", nargs="+")
    p.add_argument("--fills", nargs="+")
    p.add_argument("--components", nargs="+")
    p.add_argument("--workers", type=int)
    p.add_argument("--timing", action="store_true", default=None,
                   help="record wall-clock seconds (makes the CSV non-reproducible)")
    _add_hyper_flags(p)

    p = sub.add_parser("train", parents=[common], help="fit one model on the training split")
    p.add_argument("--algorithm", choices=evaluation.ALGORITHMS)
    p.add_argument("--fill")
    p.add_argument("--components", type=int)
    _add_hyper_flags(p)

    p = sub.add_parser("cluster", parents=[common], help="K-Means over a model's user features")
    p.add_argument("--model", required=True)
    p.add_argument("--k", dest="kmeans_k", type=int)
    p.add_argument("--restarts", dest="kmeans_restarts", type=int)
    p.add_argument("--max-iterations", dest="kmeans_max_iterations", type=int)

    p = sub.add_parser("recommend", parents=[common], help="top-N items for one user")
    p.add_argument("--model", required=True)
    p.add_argument("--user", required=True, help="raw user id")
    p.add_argument("-n", "--n", type=int, default=10)
    p.add_argument("--include-seen", action="store_true")
    p.add_argument("--clusters", help="cluster CSV; ranks by cluster mean ratings instead")
    p.add_argument("--min-support", dest="min_support", type=int)

    p = sub.add_parser("eval", parents=[common], help="score a model on the test split")
    p.add_argument("--model", required=True)
    return parser


def _add_hyper_flags(p):
    p.add_argument("--nmf-max-iterations", dest="nmf_max_iterations", type=int)
    p.add_argument("--nmf-rel-tolerance", dest="nmf_rel_tolerance", type=float)
    p.add_argument("--svd-i-threshold", dest="svd_i_threshold", type=float)
    p.add_argument("--svd-i-max-iterations", dest="svd_i_max_iterations", type=int)
    p.add_argument("--sgd-alpha", dest="sgd_alpha", type=float)
    p.add_argument("--sgd-lambda", dest="sgd_lambda", type=float)
    p.add_argument("--sgd-epochs", dest="sgd_epochs", type=int)


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    for name in _FIELDS:
        value = getattr(args, name, None)
        if value is None:
            continue
        if name in ("algorithms", "fills"):
            value = ",".join(value)
        setattr(cfg, name, _coerce(name, value))
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _load_dataset(cfg: RunConfig):
    raw = Path(cfg.dataset).read_bytes()
    triples = load_ratings(raw, cfg.format, cfg.rating_scale(), cfg.on_out_of_range)
    m = build_matrix(triples, cfg.duplicate_policy, cfg.rating_scale())
    log.info("loaded %d ratings: %d users x %d items", m.nnz, m.n_users, m.n_items)
    return m, "sha256:" + hashlib.sha256(raw).hexdigest()


def _write_outputs(out_dir, files: dict[str, str]) -> None:
    """Write every file or none: stage into temporaries, then rename."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.")
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, out / name))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)


def _load_model_for(cfg, path, m):
    mf = persistence.load_model(path)
    model = mf.model
    if (model.n_users, model.n_items) != m.shape:
        raise RatingError(f"model is {model.n_users}x{model.n_items} but the dataset is "
                          f"{m.n_users}x{m.n_items}")
    if mf.user_ids is not None and tuple(mf.user_ids) != tuple(m.user_ids):
        raise RatingError("model user ids do not match the dataset")
    if mf.item_ids is not None and tuple(mf.item_ids) != tuple(m.item_ids):
        raise RatingError("model item ids do not match the dataset")
    return mf


def cmd_sweep(args, cfg):
    m, digest = _load_dataset(cfg)
    report = evaluation.run_sweep(
        m, cfg.algorithms, cfg.fill_strategies(), cfg.components, cfg.fraction, cfg.seed,
        settings=cfg.sweep_settings(), dataset_digest=digest, workers=cfg.workers,
        timing=cfg.timing)
    _write_outputs(cfg.out, {"sweep.csv": report.to_csv(),
                             "provenance.json": report.provenance_json()})
    for row in report.rows:
        if row.error:
            log.warning("%s/%s/%d failed: %s", row.algorithm, row.fill, row.components, row.error)
    return 0


def cmd_train(args, cfg):
    algorithm = args.algorithm or cfg.algorithms[0]
    fill = FillStrategy.parse(args.fill) if args.fill else cfg.fill_strategies()[0]
    r = args.components if args.components is not None else cfg.components[0]
    m, digest = _load_dataset(cfg)
    split = evaluation.split_ratings(m, cfg.fraction, cfg.seed)
    seed = evaluation.combination_seed(cfg.seed, algorithm, fill.name, r)
    model, info = evaluation.fit_model(algorithm, split.train, fill, r, seed,
                                       cfg.sweep_settings())
    extra = {"algorithm": algorithm, "split_seed": cfg.seed, "fraction": cfg.fraction,
             "dataset_digest": digest, **info}
    text = persistence.dumps_model(model, scale=m.scale, user_ids=m.user_ids,
                                   item_ids=m.item_ids, extra=extra)
    _write_outputs(cfg.out, {"model.json": text})
    return 0


def cmd_cluster(args, cfg):
    m, _ = _load_dataset(cfg)
    mf = _load_model_for(cfg, args.model, m)
    features = clustering.user_latent_features(mf.model)
    if cfg.kmeans_k > len(features):
        raise ConfigError(f"--k {cfg.kmeans_k} exceeds the {len(features)} users")
    cm = clustering.kmeans_fit(features, cfg.kmeans_k, cfg.seed, cfg.kmeans_max_iterations,
                               cfg.kmeans_restarts)
    _write_outputs(cfg.out, {"clusters.csv": clustering.clusters_csv(cm, m.user_ids)})
    log.info("k=%d inertia=%.6f iterations=%d", cm.k, cm.inertia, cm.iterations)
    return 0


def cmd_recommend(args, cfg):
    if args.n < 0:
        raise ConfigError("-n must be >= 0")
    m, _ = _load_dataset(cfg)
    mf = _load_model_for(cfg, args.model, m)
    if args.clusters:
        labels = clustering.read_clusters_csv(Path(args.clusters).read_text(encoding="utf-8"),
                                              m.user_index)
        recs = recommender.cluster_top_n(labels, m, args.user, args.n, cfg.min_support)
    else:
        recs = recommender.top_n(mf.model, m, args.user, args.n,
                                 exclude_seen=not args.include_seen, scale=m.scale)
    _write_outputs(cfg.out, {"recommendations.csv": recommender.recommendations_csv(recs)})
    return 0


def cmd_eval(args, cfg):
    m, _ = _load_dataset(cfg)
    mf = _load_model_for(cfg, args.model, m)
    split = evaluation.split_ratings(m, cfg.fraction, cfg.seed)
    metrics = evaluation.evaluate_model(mf.model, split, m.scale)
    json.dump({"kind": mf.model.kind, "components": mf.model.components,
               "n_test": split.n_test, "rmse": metrics.rmse, "mae": metrics.mae},
              sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    return 0


COMMANDS = {"sweep": cmd_sweep, "train": cmd_train, "cluster": cmd_cluster,
            "recommend": cmd_recommend, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RatingError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
