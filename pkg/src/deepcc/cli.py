"""Command-line entry point for reproducible experiment runs.

Subcommands: pretrain, gen-constraints, train, evaluate, negative-ratio.
Configuration is a flat key/value text file (``key = value`` per line,
``#`` comments) and any key can be overridden on the command line with
``--key value``. Exit codes: 0 success, 2 usage or input error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .autoencoder import SdaeConfig, encode, pretrain_sdae, reconstruction_loss
from .checkpoint import load_checkpoint, save_checkpoint
from .clustering import hard_assign, soft_assign
from .constraint_gen import (
    OntologyGraph,
    TripletGenConfig,
    close_constraints,
    difficulty_from_weak_learner,
    inject_noise,
    pairwise_from_labels,
    triplets_from_embedding,
    triplets_from_ontology,
)
from .constraint_losses import ConstraintSet, read_constraints, write_constraints
from .data_io import Dataset, load_csv, load_idx, load_labels
from .errors import NumericError
from .metrics import accuracy, negative_ratio, nmi
from .numerics import make_rng
from .trainer import TrainConfig, TrainReport, initialize, run_training, run_training_multi

DEFAULT_DIMS = "500,500,2000,10"


class RunConfig:
    """Flat key/value configuration with typed accessors."""

    def __init__(self, values: dict[str, str]):
        self.values = dict(values)

    @classmethod
    def load(cls, path: str | None, overrides: list[str]) -> "RunConfig":
        values: dict[str, str] = {}
        if path is not None:
            with open(path, "r") as f:
                for lineno, line in enumerate(f, start=1):
                    text = line.strip()
                    if not text or text.startswith("#"):
                        continue
                    if "=" not in text:
                        raise ValueError(f"{path}: line {lineno} is not 'key = value'")
                    key, _, value = text.partition("=")
                    values[key.strip()] = value.strip()
        if len(overrides) % 2 != 0:
            raise ValueError("overrides must come in '--key value' pairs")
        for i in range(0, len(overrides), 2):
            key = overrides[i]
            if not key.startswith("--"):
                raise ValueError(f"expected an override key, got {key!r}")
            values[key[2:]] = overrides[i + 1]
        return cls(values)

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.values.get(key, default)

    def require(self, key: str) -> str:
        if key not in self.values:
            raise ValueError(f"missing required configuration key {key!r}")
        return self.values[key]

    def get_int(self, key: str, default: int | None = None) -> int | None:
        raw = self.values.get(key)
        return default if raw is None else int(raw)

    def get_float(self, key: str, default: float | None = None) -> float | None:
        raw = self.values.get(key)
        return default if raw is None else float(raw)

    def get_bool(self, key: str, default: bool = False) -> bool:
        raw = self.values.get(key)
        if raw is None:
            return default
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"configuration key {key!r} has non-boolean value {raw!r}")

    def get_int_list(self, key: str, default: str) -> list[int]:
        raw = self.values.get(key, default)
        return [int(part) for part in raw.split(",") if part.strip()]


def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise ValueError(f"{what} file not found: {path}")
    return path


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _load_dataset(cfg: RunConfig) -> Dataset:
    path = _require_file(cfg.require("data.path"), "data")
    fmt = cfg.get("data.format", "csv")
    if fmt == "idx":
        labels_path = cfg.get("data.labels_path")
        if labels_path is not None:
            _require_file(labels_path, "labels")
        return load_idx(path, labels_path)
    if fmt == "csv":
        return load_csv(path, has_labels=cfg.get_bool("data.has_labels", False))
    raise ValueError(f"unknown data.format {fmt!r}; expected 'idx' or 'csv'")


def _sdae_config(cfg: RunConfig, input_dim: int) -> SdaeConfig:
    dims = [input_dim] + cfg.get_int_list("arch.dims", DEFAULT_DIMS)
    return SdaeConfig(
        dims=dims,
        corruption_rate=cfg.get_float("pretrain.corruption_rate", 0.2),
        layerwise_epochs=cfg.get_int("pretrain.layerwise_epochs", 50),
        finetune_epochs=cfg.get_int("pretrain.finetune_epochs", 100),
        learning_rate=cfg.get_float("train.learning_rate", 0.001),
        batch_size=cfg.get_int("pretrain.batch_size", 256),
    )


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        k=int(cfg.require("train.k")),
        max_epochs=cfg.get_int("train.max_epochs", 100),
        batch_size=cfg.get_int("train.batch_size", 256),
        learning_rate=cfg.get_float("train.learning_rate", 0.001),
        lambda_ml=cfg.get_float("train.lambda_ml", 0.1),
        triplet_margin=cfg.get_float("train.triplet_margin", 0.1),
        constraint_batch_size=cfg.get_int("train.constraint_batch_size", 256),
        convergence_tol=cfg.get_float("train.convergence_tol", 0.001),
        init_mode=cfg.get("train.init_mode", "ae+kmeans"),
        clustering_loss_enabled=cfg.get_bool("train.clustering_loss", True),
        horn_tau=cfg.get_float("constraints.horn_tau", 0.5),
        seed=cfg.get_int("seed", 0),
    )


def _input_digests(cfg: RunConfig) -> dict[str, str]:
    digests = {}
    for key in ("data.path", "data.labels_path", "constraints.path",
                "constraints.pairwise_path", "constraints.triplet_path",
                "ontology.path", "ontology.classmap_path", "train.pretrained_path"):
        path = cfg.get(key)
        if path and os.path.isfile(path):
            digests[path] = _sha256(path)
    return digests


def _write_manifest(path: str, command: str, cfg: RunConfig) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": cfg.get_int("seed", 0),
        "config": dict(sorted(cfg.values.items())),
        "inputs": _input_digests(cfg),
    }
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_metrics(path: str, entries: dict) -> None:
    with open(path, "w") as f:
        for key, value in entries.items():
            f.write(f"{key} = {_format_value(value)}\n")


def cmd_pretrain(cfg: RunConfig) -> int:
    dataset = _load_dataset(cfg)
    sdae = _sdae_config(cfg, dataset.dim)
    seed = cfg.get_int("seed", 0)
    out_dir = cfg.require("output.dir")
    os.makedirs(out_dir, exist_ok=True)
    model = pretrain_sdae(dataset, sdae, make_rng(seed))
    path = os.path.join(out_dir, f"sdae-seed{seed}.npz")
    save_checkpoint(path, model, extra_meta={"dims": sdae.dims, "seed": seed})
    _write_manifest(path + ".manifest.json", "pretrain", cfg)
    loss, _, _ = reconstruction_loss(model, dataset.features)
    print(f"pretrained {len(sdae.dims) - 1}-layer encoder on {dataset.n} instances")
    print(f"reconstruction_loss = {_format_value(loss)}")
    print(f"checkpoint = {path}")
    return 0


def _gen_pairwise(cfg: RunConfig, dataset: Dataset, rng) -> ConstraintSet:
    count = cfg.get_int("gen.count", 1000)
    ml, cl = pairwise_from_labels(dataset.labels, count, rng)
    if cfg.get_bool("gen.close", False):
        ml, cl = close_constraints(ml, cl)
    degree = cfg.get_float("noise.degree", 0.0)
    if degree > 0.0:
        ml, cl = inject_noise(ml, cl, dataset.labels, degree, rng)
    return ConstraintSet(must_links=ml, cannot_links=cl)


def cmd_gen_constraints(cfg: RunConfig) -> int:
    dataset = _load_dataset(cfg)
    if dataset.labels is None:
        raise ValueError("constraint generation requires labels")
    mode = cfg.get("gen.mode", "pairwise")
    seed = cfg.get_int("seed", 0)
    rng = make_rng(seed)
    out_dir = cfg.require("output.dir")

    if mode == "pairwise":
        constraints = _gen_pairwise(cfg, dataset, rng)
    elif mode == "difficulty":
        k = cfg.get_int("gen.k", None) or cfg.get_int("train.k", None)
        if k is None:
            raise ValueError("difficulty mode requires gen.k or train.k")
        scores = difficulty_from_weak_learner(dataset, k, rng)
        constraints = ConstraintSet(difficulty=scores)
    elif mode == "triplet-embedding":
        ckpt_path = _require_file(cfg.require("gen.embedding_checkpoint"), "checkpoint")
        model = load_checkpoint(ckpt_path)["autoencoder"]
        Z = encode(model, dataset.features)
        constraints = ConstraintSet(triplets=triplets_from_embedding(Z, cfg.get_int("gen.count", 1000), rng))
    elif mode == "triplet-ontology":
        graph = OntologyGraph.from_files(
            _require_file(cfg.require("ontology.path"), "ontology"),
            _require_file(cfg.require("ontology.classmap_path"), "class map"),
        )
        gen_cfg = TripletGenConfig(
            theta_p=cfg.get_float("gen.theta_p", 0.5),
            theta_n=cfg.get_float("gen.theta_n", 0.3),
            count=cfg.get_int("gen.count", 1000),
            seed=seed,
        )
        pool = None
        pool_size = cfg.get_int("gen.pool_size", None)
        if pool_size is not None:
            pool = rng.choice(dataset.n, size=pool_size, replace=False)
        constraints = ConstraintSet(
            triplets=triplets_from_ontology(dataset.labels, graph, gen_cfg, rng, pool=pool))
    else:
        raise ValueError(f"unknown gen.mode {mode!r}")

    os.makedirs(out_dir, exist_ok=True)
    out_path = cfg.get("gen.out") or os.path.join(out_dir, f"constraints-{mode}-seed{seed}.txt")
    write_constraints(out_path, constraints)
    _write_manifest(out_path + ".manifest.json", "gen-constraints", cfg)
    n_records = (len(constraints.must_links) + len(constraints.cannot_links)
                 + len(constraints.triplets)
                 + (int(np.count_nonzero(constraints.difficulty)) if constraints.difficulty is not None else 0))
    print(f"wrote {n_records} constraint records to {out_path}")
    return 0


def _load_constraint_file(cfg: RunConfig, path: str, n: int) -> ConstraintSet:
    mode = cfg.get("constraints.cardinality_mode", "equal")
    lower = cfg.get_float("constraints.cardinality_lower", None)
    upper = cfg.get_float("constraints.cardinality_upper", None)
    return read_constraints(path, n, cardinality_mode=mode, lower=lower, upper=upper)


def _filter_types(constraints: ConstraintSet, cfg: RunConfig, k: int) -> ConstraintSet:
    raw = cfg.get("constraints.types")
    if raw is None:
        return constraints
    enabled = {part.strip() for part in raw.split(",") if part.strip()}
    known = {"pairwise", "triplet", "difficulty", "global_size", "cardinality"}
    unknown = enabled - known
    if unknown:
        raise ValueError(f"unknown constraint types: {sorted(unknown)}")
    if "pairwise" in enabled and not constraints.has_pairwise:
        raise ValueError("constraints.types enables pairwise but no ML/CL records were given")
    if "triplet" in enabled and not constraints.has_triplets:
        raise ValueError("constraints.types enables triplet but no TRI records were given")
    if "difficulty" in enabled and constraints.difficulty is None:
        raise ValueError("constraints.types enables difficulty but no DIF records were given")
    if "cardinality" in enabled and constraints.cardinality is None:
        raise ValueError("constraints.types enables cardinality but no PSV records were given")
    return ConstraintSet(
        must_links=constraints.must_links if "pairwise" in enabled else [],
        cannot_links=constraints.cannot_links if "pairwise" in enabled else [],
        triplets=constraints.triplets if "triplet" in enabled else [],
        difficulty=constraints.difficulty if "difficulty" in enabled else None,
        global_size="global_size" in enabled,
        cardinality=constraints.cardinality if "cardinality" in enabled else None,
        horn_rules=constraints.horn_rules,
    )


def _init_models(cfg: RunConfig, dataset: Dataset, config: TrainConfig, sdae: SdaeConfig):
    pretrained = None
    if config.init_mode.startswith("ae"):
        ckpt = cfg.get("train.pretrained_path")
        if ckpt is None:
            raise ValueError(f"init_mode {config.init_mode!r} requires train.pretrained_path")
        pretrained = load_checkpoint(_require_file(ckpt, "checkpoint"))["autoencoder"]
    rng = make_rng(config.seed)
    return initialize(dataset, config, sdae, rng, pretrained=pretrained)


def _write_run_artifacts(run_dir: str, cfg: RunConfig, dataset: Dataset,
                         models, report: TrainReport) -> dict:
    model, clusters = models
    Z = encode(model, dataset.features)
    labels = hard_assign(soft_assign(clusters, Z))

    embeddings_path = os.path.join(run_dir, "embeddings.csv")
    with open(embeddings_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"z{i}" for i in range(Z.shape[1])])
        for row in Z:
            writer.writerow([repr(v) for v in row])

    assignments_path = os.path.join(run_dir, "assignments.csv")
    with open(assignments_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "cluster"])
        for i, c in enumerate(labels):
            writer.writerow([i, int(c)])

    entries: dict = {}
    if report.final_acc is not None:
        entries["acc"] = report.final_acc
        entries["nmi"] = report.final_nmi
    entries["epochs_run"] = report.epochs_run
    entries["converged"] = report.converged
    _write_metrics(os.path.join(run_dir, "metrics.txt"), entries)

    with open(os.path.join(run_dir, "loss_traces.json"), "w") as f:
        json.dump({"traces": report.loss_traces, "label_changes": report.label_changes},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    return entries


def cmd_train(cfg: RunConfig) -> int:
    dataset = _load_dataset(cfg)
    config = _train_config(cfg)
    sdae = _sdae_config(cfg, dataset.dim)
    models = _init_models(cfg, dataset, config, sdae)

    pairwise_path = cfg.get("constraints.pairwise_path")
    triplet_path = cfg.get("constraints.triplet_path")
    single_path = cfg.get("constraints.path")
    run_dir = os.path.join(cfg.require("output.dir"), f"run-{config.seed}")
    os.makedirs(run_dir, exist_ok=True)
    checkpoint_every = cfg.get_int("train.checkpoint_every", 0)

    if pairwise_path and triplet_path:
        algorithm = "pairwise+triplet"
        pairwise = _load_constraint_file(cfg, _require_file(pairwise_path, "constraints"), dataset.n)
        triplets = _load_constraint_file(cfg, _require_file(triplet_path, "constraints"), dataset.n)
        models, report = run_training_multi(
            dataset, pairwise, triplets, config, models=models,
            checkpoint_every=checkpoint_every or None, checkpoint_dir=run_dir)
    else:
        algorithm = "single-branch"
        constraints = ConstraintSet()
        if single_path:
            constraints = _filter_types(
                _load_constraint_file(cfg, _require_file(single_path, "constraints"), dataset.n),
                cfg, config.k)
        elif cfg.get("constraints.types"):
            constraints = _filter_types(constraints, cfg, config.k)
        models, report = run_training(
            dataset, constraints, config, models=models,
            checkpoint_every=checkpoint_every or None, checkpoint_dir=run_dir)

    save_checkpoint(os.path.join(run_dir, "checkpoint.npz"), models[0], models[1],
                    extra_meta={"seed": config.seed, "epochs_run": report.epochs_run})
    cfg.values.setdefault("train.algorithm", algorithm)
    _write_manifest(os.path.join(run_dir, "manifest.json"), "train", cfg)
    entries = _write_run_artifacts(run_dir, cfg, dataset, models, report)
    for key, value in entries.items():
        print(f"{key} = {_format_value(value)}")
    print(f"artifacts = {run_dir}")
    return 0


def _load_int_file(path: str) -> np.ndarray:
    """Accept either a bare one-integer-per-line file or an assignments CSV."""
    with open(path, "r") as f:
        first = f.readline()
    if "," in first:
        values = []
        with open(path, "r", newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            col = len(header) - 1
            for record in reader:
                values.append(int(record[col]))
        return np.asarray(values, dtype=np.int64)
    return load_labels(path)


def cmd_evaluate(labels_path: str, assignments_path: str, out: str | None) -> int:
    labels = _load_int_file(_require_file(labels_path, "labels"))
    assignments = _load_int_file(_require_file(assignments_path, "assignments"))
    if labels.shape[0] != assignments.shape[0]:
        raise ValueError(
            f"length mismatch: {labels.shape[0]} labels vs {assignments.shape[0]} assignments")
    entries = {"acc": accuracy(labels, assignments), "nmi": nmi(labels, assignments)}
    out = out or assignments_path + ".metrics.txt"
    _write_metrics(out, entries)
    for key, value in entries.items():
        print(f"{key} = {_format_value(value)}")
    return 0


def cmd_negative_ratio(cfg: RunConfig, n_sets: int) -> int:
    if n_sets < 2:
        raise ValueError("need at least 2 constraint sets")
    dataset = _load_dataset(cfg)
    if dataset.labels is None:
        raise ValueError("the paired-run harness requires labels")
    config = _train_config(cfg)
    sdae = _sdae_config(cfg, dataset.dim)
    count = cfg.get_int("gen.count", 3600)
    out_dir = cfg.require("output.dir")

    pretrained = None
    if config.init_mode.startswith("ae"):
        ckpt = cfg.get("train.pretrained_path")
        if ckpt is None:
            raise ValueError(f"init_mode {config.init_mode!r} requires train.pretrained_path")
        pretrained = load_checkpoint(_require_file(ckpt, "checkpoint"))["autoencoder"]

    os.makedirs(out_dir, exist_ok=True)
    per_set = []
    acc_pairs = []
    for i in range(n_sets):
        set_seed = config.seed + i
        set_config = dataclasses.replace(config, seed=set_seed)
        rng = make_rng(set_seed)
        models = initialize(dataset, set_config, sdae, rng, pretrained=pretrained)
        ml, cl = pairwise_from_labels(dataset.labels, count, rng)
        constraints = ConstraintSet(must_links=ml, cannot_links=cl)
        _, report_c = run_training(dataset, constraints, set_config, models=models)
        _, report_u = run_training(dataset, None, set_config, models=models)
        acc_pairs.append((report_c.final_acc, report_u.final_acc))
        per_set.append({
            "seed": set_seed,
            "constrained": {"acc": report_c.final_acc, "nmi": report_c.final_nmi},
            "unconstrained": {"acc": report_u.final_acc, "nmi": report_u.final_nmi},
        })
        print(f"set {i}: constrained acc {report_c.final_acc:.4f} "
              f"vs unconstrained acc {report_u.final_acc:.4f}")

    ratio = negative_ratio(acc_pairs)
    summary = {
        "sets": per_set,
        "negative_ratio": ratio,
        "constrained_acc_mean": float(np.mean([p[0] for p in acc_pairs])),
        "constrained_acc_std": float(np.std([p[0] for p in acc_pairs])),
        "unconstrained_acc_mean": float(np.mean([p[1] for p in acc_pairs])),
        "unconstrained_acc_std": float(np.std([p[1] for p in acc_pairs])),
    }
    report_path = os.path.join(out_dir, f"negative-ratio-seed{config.seed}.json")
    with open(report_path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"negative_ratio = {_format_value(ratio)}")
    print(f"report = {report_path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepcc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("pretrain", "gen-constraints", "train", "negative-ratio"):
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", default=None, help="key/value config file")
        if name == "negative-ratio":
            p.add_argument("--sets", type=int, default=2, help="number of constraint sets")
    evaluate = sub.add_parser("evaluate")
    evaluate.add_argument("labels", help="true labels (one integer per line)")
    evaluate.add_argument("assignments", help="cluster assignments (bare ints or CSV)")
    evaluate.add_argument("--out", default=None, help="metrics output path")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
        if args.command == "evaluate":
            if rest:
                raise ValueError(f"unrecognized arguments: {rest}")
            return cmd_evaluate(args.labels, args.assignments, args.out)
        cfg = RunConfig.load(args.config, rest)
        if args.command == "pretrain":
            return cmd_pretrain(cfg)
        if args.command == "gen-constraints":
            return cmd_gen_constraints(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "negative-ratio":
            return cmd_negative_ratio(cfg, args.sets)
        raise ValueError(f"unknown command {args.command!r}")
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
