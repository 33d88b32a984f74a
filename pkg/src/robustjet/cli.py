"""``robustjet`` command line.

Subcommands: synth, gen, train, train-ensemble, attack, eval, report.
Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or configuration error.
Each run writes ``<output>.manifest.json`` (``manifest.json`` inside the output
directory for train-ensemble and report).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from . import attack as attackmod
from . import augment, evaluate, plotting, synth
from . import rng as rngmod
from . import train as trainmod
from .data import (
    DataError,
    SchemaMismatchError,
    default_schema,
    is_binary_path,
    load_dataset,
    load_schema_file,
    open_writer,
    write_binary,
    write_csv,
)
from .empirical import fit
from .model import ModelParams, ModelError

log = logging.getLogger("robustjet")


class UsageError(Exception):
    """Bad arguments or configuration; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


@contextmanager
def phase(name):
    t0 = time.perf_counter()
    yield
    log.info("%s: %.2fs", name, time.perf_counter() - t0)


def _split_paths(value: str) -> list[str]:
    return [p for p in value.split(",") if p]


def _schema(args):
    return load_schema_file(args.schema) if getattr(args, "schema", None) else default_schema()


def _load_models(spec: str) -> list[ModelParams]:
    return [ModelParams.load(p) for p in _split_paths(spec)]


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(path, args, t0, *, seeds, inputs, outputs, rows, report=None) -> None:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "workers", "verbose", "argv")}
    digest = hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()
    doc = {
        "command": args.command,
        "argv": args.argv,
        "version": __version__,
        "config": config,
        "config_hash": digest,
        "seeds": seeds,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "row_counts": rows,
        "wall_time_seconds": round(time.perf_counter() - t0, 3),
    }
    if report is not None:
        doc["report"] = report
    _write_json(path, doc)


def manifest_path(out) -> Path:
    out = Path(out)
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


# -- subcommands -------------------------------------------------------------


def cmd_synth(args, t0):
    cfg = synth.SynthConfig(n=args.n, seed=args.seed, separation=args.separation)
    with phase("synth"):
        ds = synth.make_synthetic(cfg)
    fmt = args.format or ("ards" if is_binary_path(args.out) else "csv")
    with phase("write"):
        (write_binary if fmt == "ards" else write_csv)(ds, args.out)
    _write_manifest(manifest_path(args.out), args, t0, seeds=[args.seed], inputs=[], outputs=[args.out],
                    rows={"output": ds.n}, report={"synth_config": cfg.to_json()})


def cmd_gen(args, t0):
    schema = _schema(args)
    if args.preset:
        cfg = augment.preset(args.preset, args.split, seed=args.seed)
        overrides = {k: v for k, v in (("n_bins", args.n_bins), ("n_vars", args.n_vars),
                                       ("variants_per_sample", args.variants)) if v is not None}
        if overrides:
            cfg = augment.GenConfig(**{**cfg.to_json(), **overrides})
    else:
        if args.n_bins is None or args.n_vars is None:
            raise UsageError("either --preset or both --n-bins and --n-vars are required")
        cfg = augment.GenConfig(n_bins=args.n_bins, n_vars=args.n_vars,
                                variants_per_sample=args.variants or augment.VARIANTS_PER_SAMPLE,
                                seed=args.seed)
    with phase("load source"):
        src = load_dataset(args.source, schema)
    if src.n == 0:
        raise UsageError(f"source {args.source} is empty")
    with phase("fit histograms"):
        em = fit(src, cfg.n_bins)
    with phase("generate"), open_writer(args.out, schema, args.format) as sink:
        count = augment.generate(src, cfg, sink.write, em=em, workers=args.workers)
    report = {
        "gen_config": cfg.to_json(),
        "source_rows": src.n,
        "generated_rows": count,
        "feature_ranges": {name: [float(em.lo[f]), float(em.hi[f])] for f, name in enumerate(schema.names)},
    }
    _write_manifest(manifest_path(args.out), args, t0, seeds=[cfg.seed], inputs=[args.source],
                    outputs=[args.out], rows={"source": src.n, "output": count}, report=report)


def _train_config(args) -> trainmod.TrainConfig:
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
            cfg = trainmod.TrainConfig.from_json(doc)
        except (OSError, ValueError, TypeError) as exc:
            raise UsageError(f"cannot read train config {args.config}: {exc}") from exc
    else:
        cfg = trainmod.TrainConfig()
    overrides = {k: getattr(args, k) for k in ("epochs", "seed", "batch_size", "learning_rate")
                 if getattr(args, k, None) is not None}
    if overrides:
        cfg = trainmod.TrainConfig(**{**cfg.__dict__, **overrides})
    return cfg


def cmd_train(args, t0):
    cfg = _train_config(args)
    paths = _split_paths(args.data)
    with phase("train"):
        params, report = trainmod.train_run(paths, cfg, args.input_dropout, workers=args.workers,
                                            schema=_schema(args))
    params.save(args.out)
    _write_manifest(manifest_path(args.out), args, t0, seeds=[cfg.seed], inputs=paths, outputs=[args.out],
                    rows={"trained": report.rows},
                    report={**report.to_json(), "train_config": cfg.to_json()})


def cmd_train_ensemble(args, t0):
    cfg = _train_config(args)
    datasets: dict[str, list[str]] = {}
    if args.spec:
        try:
            doc = json.loads(Path(args.spec).read_text(encoding="utf-8"))
            spec = trainmod.EnsembleSpec.from_json(doc)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"cannot read ensemble spec {args.spec}: {exc}") from exc
        base = Path(args.spec).parent
        for k, v in doc.get("datasets", {}).items():
            paths = _split_paths(v) if isinstance(v, str) else list(v)
            datasets[k] = [str(p if Path(p).is_absolute() else base / p) for p in paths]
    else:
        spec = trainmod.EnsembleSpec.reference_preset(args.seed or 0)
    for item in args.dataset or []:
        if "=" not in item:
            raise UsageError(f"--dataset expects ID=PATH[,PATH...], got {item!r}")
        k, v = item.split("=", 1)
        datasets[k] = _split_paths(v)
    missing = sorted({m.dataset_id for m in spec.members} - set(datasets))
    if missing:
        raise UsageError(f"no data given for dataset ids {missing}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs, reports = [], []
    for k, member in enumerate(spec.members):
        member_cfg = trainmod.TrainConfig(**{**cfg.__dict__, "seed": member.seed})
        with phase(f"train member {k}"):
            params, rep = trainmod.train_run(datasets[member.dataset_id], member_cfg, member.input_dropout,
                                             workers=args.workers, schema=_schema(args))
        path = out / f"member_{k}.json"
        params.save(path)
        outputs.append(path)
        reports.append({**rep.to_json(), "dataset_id": member.dataset_id})
    inputs = sorted({p for ps in datasets.values() for p in ps})
    _write_manifest(out / "manifest.json", args, t0, seeds=[m.seed for m in spec.members], inputs=inputs,
                    outputs=outputs, rows={f"member_{k}": r["rows"] for k, r in enumerate(reports)},
                    report={"spec": spec.to_json(), "members": reports, "train_config": cfg.to_json()})


def cmd_attack(args, t0):
    models = _load_models(args.model)
    ds = load_dataset(args.data, models[0].schema)
    cfg = attackmod.AttackConfig(n_bins=args.n_bins, n_vars=args.n_vars, max_tries=args.max_tries, seed=args.seed)
    victim = evaluate.ensemble_victim(models, args.averaging)
    with phase("attack"):
        adv, rate, report = attackmod.build_adversarial_set(victim, ds, cfg, workers=args.workers)
    with open_writer(args.out, adv.schema) as sink:
        sink.write(adv.X, adv.y)
    _write_manifest(manifest_path(args.out), args, t0, seeds=[args.seed],
                    inputs=[args.data] + _split_paths(args.model), outputs=[args.out],
                    rows={"input": ds.n, "output": adv.n}, report=report.to_json())


def cmd_eval(args, t0):
    models = _load_models(args.model)
    schema = models[0].schema
    clean = load_dataset(args.clean, schema)
    adv = load_dataset(args.adv, schema)
    rate = None
    if args.attack_manifest:
        rate = json.loads(Path(args.attack_manifest).read_text())["report"]["success_rate"]
    with phase("evaluate"):
        metrics = evaluate.evaluate(models, clean, adv, mode=args.averaging, attack_success_rate=rate)
    Path(args.out).write_text(metrics.dumps(), encoding="utf-8")
    _write_manifest(manifest_path(args.out), args, t0, seeds=[], inputs=[args.clean, args.adv] + _split_paths(args.model),
                    outputs=[args.out], rows={"clean": clean.n, "adv": adv.n}, report=metrics.to_json())
    print(metrics.dumps(), end="")


SUMMARY_FIELDS = ("run", "clean_acc", "adv_acc", "mixed_score", "n_clean", "n_adv", "attack_success_rate")


def cmd_report(args, t0):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    rows, labels = [], []
    for p in args.metrics or []:
        m = json.loads(Path(p).read_text())
        labels.append(Path(p).stem)
        rows.append(m)
    summary = out / "summary.csv"
    with open(summary, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_FIELDS)
        for label, m in zip(labels, rows):
            w.writerow([label] + [m.get(k, "") for k in SUMMARY_FIELDS[1:]])
    outputs.append(summary)
    if rows:
        path = out / "accuracy.png"
        plotting.save(plotting.accuracy_bars(rows, labels), path)
        outputs.append(path)
    losses = {}
    for p in args.train_manifest or []:
        rep = json.loads(Path(p).read_text()).get("report", {})
        if "losses" in rep:
            losses[Path(p).name.split(".")[0]] = rep["losses"]
        for k, mem in enumerate(rep.get("members", [])):
            losses[f"member_{k}"] = mem["losses"]
    if losses:
        path = out / "loss.png"
        plotting.save(plotting.loss_curve(losses), path)
        outputs.append(path)
    for p in args.attack_manifest or []:
        rep = json.loads(Path(p).read_text())["report"]
        path = out / f"{Path(p).name.split('.')[0]}_tries.png"
        plotting.save(plotting.tries_histogram(rep["tries_histogram"], rep["config"]["max_tries"]), path)
        outputs.append(path)
    inputs = list(args.metrics or []) + list(args.train_manifest or []) + list(args.attack_manifest or [])
    _write_manifest(out / "manifest.json", args, t0, seeds=[], inputs=inputs, outputs=outputs,
                    rows={"runs": len(rows)})
    for p in outputs:
        print(p)


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="robustjet", description="Histogram-resampling augmentation, robust training and RDSA evaluation.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, workers=True):
        sp.add_argument("--schema", help="schema override file (one 'name,PT|ETA|PHI' per line)")
        if workers:
            sp.add_argument("--workers", type=int, default=rngmod.default_workers(),
                            help="worker threads (default $ROBUSTJET_WORKERS or 1); output does not depend on it")

    s = sub.add_parser("synth", help="write a synthetic jet-like dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--separation", type=float, default=synth.DEFAULT_SEPARATION)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("csv", "ards"))
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("gen", help="antiRDSA augmentation of a source dataset")
    common(s)
    s.add_argument("--source", required=True)
    s.add_argument("--preset", choices=("DataGen1", "DataGen2"))
    s.add_argument("--split", choices=("train", "val", "test"), default="train")
    s.add_argument("--n-bins", type=int)
    s.add_argument("--n-vars", type=int)
    s.add_argument("--variants", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("csv", "ards"))
    s.set_defaults(func=cmd_gen)

    def train_flags(sp):
        common(sp)
        sp.add_argument("--config", help="TrainConfig JSON")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--learning-rate", type=float)
        sp.add_argument("--out", required=True)

    s = sub.add_parser("train", help="train one model")
    train_flags(s)
    s.add_argument("--data", required=True, help="comma-separated CSV/ARDS files")
    s.add_argument("--input-dropout", type=float, default=0.0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("train-ensemble", help="train the 2+2 ensemble (or a spec file's members)")
    train_flags(s)
    s.add_argument("--spec", help="JSON: {members: [{input_dropout, dataset_id, seed}], datasets: {id: paths}}")
    s.add_argument("--dataset", action="append", metavar="ID=PATHS", help="data for a dataset id (repeatable)")
    s.set_defaults(func=cmd_train_ensemble)

    s = sub.add_parser("attack", help="build an RDSA adversarial set against a model or ensemble")
    common(s)
    s.add_argument("--model", required=True, help="comma-separated model files")
    s.add_argument("--data", required=True)
    s.add_argument("--n-vars", type=int, default=5)
    s.add_argument("--n-bins", type=int, default=100)
    s.add_argument("--max-tries", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--averaging", choices=(evaluate.PROB, evaluate.LOGIT), default=evaluate.PROB)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("eval", help="clean/adversarial accuracy and mixed score")
    common(s)
    s.add_argument("--model", required=True)
    s.add_argument("--clean", required=True)
    s.add_argument("--adv", required=True)
    s.add_argument("--attack-manifest", help="attack manifest to copy the success rate from")
    s.add_argument("--averaging", choices=(evaluate.PROB, evaluate.LOGIT), default=evaluate.PROB)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="summary CSV and figures from metrics and manifests")
    s.add_argument("--metrics", nargs="*", help="metrics.json files from eval")
    s.add_argument("--train-manifest", nargs="*")
    s.add_argument("--attack-manifest", nargs="*")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"robustjet: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    args.argv = list(sys.argv[1:] if argv is None else argv)
    t0 = time.perf_counter()
    try:
        args.func(args, t0)
    except (UsageError, SchemaMismatchError, ModelError, KeyError, ValueError) as exc:
        print(f"robustjet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError, augment.GenerationError) as exc:
        print(f"robustjet {args.command}: failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
