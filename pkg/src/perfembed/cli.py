"""Command-line pipeline: corpus generation, profiling, training, database
construction, transfer tuning and evaluation reports.

Every subcommand writes its artifacts under ``--out`` together with a JSON
summary (``<command>_summary.json``, format ``perfembed-summary v1``).
Output is deterministic given the inputs and seeds.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .corpus import DEFAULT_COUNTS, SPLITS, generate_dataset, label_dataset, load_corpus
from .experiments import (MATMUL_LIMITS, prediction_correlations, samples, similarity_report, spmm_experiment,
                          spmm_instances)
from .model import ModelConfig, ModelError, TrainConfig, load_model, save_model, train
from .similarity import export_embeddings
from .simprof import DESK_MACHINE, MachineConfig
from .transform import SCHEDULE_ONLY, SpaceLimits
from .tuning import DatabaseError, build_database, db_load, db_save, transfer_tune

log = logging.getLogger("perfembed")

SUMMARY_FORMAT = "perfembed-summary v1"
LIMIT_PRESETS = {"default": SpaceLimits(), "matmul": MATMUL_LIMITS, "schedule": SCHEDULE_ONLY}


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}")
    return p


def _machine(args, default: MachineConfig = DESK_MACHINE) -> MachineConfig:
    if args.machine is None:
        return default
    return MachineConfig.load(_require(args.machine, "machine config"))


def parse_limits(text: str) -> SpaceLimits:
    """``key = value`` lines; tuple fields take comma-separated integers."""
    d: dict = {}
    fields = SpaceLimits().to_dict()
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep or key not in fields:
            raise CliError(f"bad limits line {raw!r}")
        if isinstance(fields[key], list):
            d[key] = tuple(int(v) for v in value.split(",") if v.strip())
        elif isinstance(fields[key], bool):
            if value.lower() not in ("true", "false"):
                raise CliError(f"{key} must be true or false")
            d[key] = value.lower() == "true"
        else:
            d[key] = int(value)
    return SpaceLimits(**d)


def _limits(spec: str) -> SpaceLimits:
    if spec in LIMIT_PRESETS:
        return LIMIT_PRESETS[spec]
    return parse_limits(_require(spec, "limits file").read_text(encoding="utf-8"))


def _entries(args, labeled: bool = True):
    root = _require(args.corpus, "corpus")
    entries = load_corpus(root, splits=(args.split,))
    kinds = getattr(args, "kinds", None)
    if kinds:
        entries = [e for e in entries if e.kind in kinds.split(",")]
    if not entries:
        raise CliError(f"no {args.split} entries in corpus {root}")
    if labeled and entries[0].profile is None:
        raise CliError(f"corpus {root} is not labeled; run `perfembed profile` first")
    return entries


def _model(path):
    return load_model(_require(path, "model file"))


def _write_summary(out: Path, command: str, data: dict) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{command}_summary.json"
    body = {"format": SUMMARY_FORMAT, "command": command, "version": __version__, **data}
    path.write_text(json.dumps(body, indent=1, sort_keys=True, default=float) + "\n", encoding="utf-8")
    return path


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        if not rows:
            return
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> dict:
    counts = {"train": args.train, "val": args.val, "test": args.test}
    manifest = generate_dataset(args.out, counts, seed=args.seed, threads=args.threads)
    summary = {"corpus": str(manifest.parent), "seed": args.seed, "counts": counts}
    _write_summary(Path(args.out), "gen", summary)
    return summary


def cmd_profile(args) -> dict:
    root = _require(args.corpus, "corpus")
    machine = _machine(args)
    labels = label_dataset(root, machine)
    n = len(load_corpus(root))
    summary = {"corpus": str(root), "labels": str(labels), "entries": n, "machine": machine.to_dict()}
    _write_summary(Path(args.out or root), "profile", summary)
    return summary


def cmd_train(args) -> dict:
    root = _require(args.corpus, "corpus")
    entries = load_corpus(root, splits=("train", "val"))
    if not entries or entries[0].profile is None:
        raise CliError(f"corpus {root} is not labeled; run `perfembed profile` first")
    cfg = ModelConfig(embed_dim=args.embed_dim, gnn_layers=args.layers, attention_heads=args.heads,
                      mlp_hidden=args.mlp_hidden, seed=args.seed)
    model = train(samples(entries), TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size,
                                                seed=args.seed), cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.npz")
    summary = {"model": str(out / "model.npz"), "fingerprint": model.fingerprint(), "config": cfg.to_dict(),
               "history": model.history}
    _write_summary(out, "train", summary)
    return summary


def cmd_dbbuild(args) -> dict:
    entries = _entries(args)
    model = _model(args.model)
    limits = _limits(args.limits)
    machine = _machine(args)
    db, results = build_database([(e.id, e.nest, e.inputs) for e in entries], model, machine, limits)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    db_save(db, out / "db.npz")
    rows = [{"id": e.id, "kind": e.kind, **results[e.id].to_dict()} for e in entries]
    for r in rows:
        r["sequence"] = " ; ".join(r["sequence"])
    _write_csv(out / "bruteforce.csv", rows)
    summary = {"db": str(out / "db.npz"), "fingerprint": model.fingerprint(), "entries": len(db),
               "limits": limits.to_dict(), "total_space_size": sum(r["space_size"] for r in rows),
               "nests": rows}
    _write_summary(out, "dbbuild", summary)
    return summary


def _bruteforce_rows(args) -> dict:
    path = Path(args.bruteforce) if args.bruteforce else Path(args.db).parent / "dbbuild_summary.json"
    if not path.exists():
        if args.bruteforce:
            raise CliError(f"brute-force summary not found: {path}")
        return {}
    return {r["id"]: r for r in json.loads(path.read_text(encoding="utf-8"))["nests"]}


def cmd_tune(args) -> dict:
    model = _model(args.model)
    db = db_load(_require(args.db, "database"), model.fingerprint())
    if not db.entries:
        raise DatabaseError(f"empty database: {args.db}")
    entries = _entries(args, labeled=False)
    machine = _machine(args)
    bf = _bruteforce_rows(args)
    out = Path(args.out)
    (out / "tune").mkdir(parents=True, exist_ok=True)
    rows = []
    for e in entries:
        rep = transfer_tune(e.nest, e.inputs, db, model, machine, args.k,
                            target_id=None if args.include_self else e.id)
        d = rep.to_dict()
        row = {"id": e.id, "kind": e.kind, "baseline_cost": rep.baseline_cost, "transfer_cost": rep.best_cost,
               "evaluations": rep.evaluations, "profiles": rep.profiles, "speedup": rep.speedup,
               "sequence": " ; ".join(d["sequence"])}
        if e.id in bf:
            b = bf[e.id]
            row.update(space_size=b["space_size"], bruteforce_cost=b["best_cost"],
                       within_tolerance=rep.best_cost <= (1 + args.tolerance) * b["best_cost"],
                       ratio=b["space_size"] / rep.evaluations)
            d["bruteforce"] = b
        (out / "tune" / f"{e.id}.json").write_text(json.dumps(d, indent=1, sort_keys=True) + "\n",
                                                   encoding="utf-8")
        rows.append(row)
    _write_csv(out / "tune.csv", rows)
    summary = {"k": args.k, "nests": rows, "regressions": sum(r["transfer_cost"] > r["baseline_cost"] for r in rows)}
    if bf:
        summary["within_tolerance"] = sum(bool(r.get("within_tolerance")) for r in rows)
        summary["tolerance"] = args.tolerance
        ratios = [r["ratio"] for r in rows if "ratio" in r]
        summary["min_ratio"] = min(ratios) if ratios else None
    _write_summary(out, "tune", summary)
    return summary


def cmd_eval(args) -> dict:
    entries = _entries(args)
    model = _model(args.model)
    machine = _machine(args)
    rep = similarity_report(model, entries, machine, args.k)
    corr = prediction_correlations(model, samples(entries)[args.split])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "similarity.csv", rep["rows"])
    _write_csv(out / "correlations.csv", [{"target": t, "pearson": r} for t, r in corr.items()])
    export_embeddings(out / "embeddings.csv", rep["ids"], rep["embeddings"], {"kind": [e.kind for e in entries]})
    summary = {"k": args.k, "similarity": rep["rows"], "correlations": corr,
               "targets_at_0.6": sum(r >= 0.6 for r in corr.values())}
    _write_summary(out, "eval", summary)
    return summary


def cmd_spmm(args) -> dict:
    model = _model(args.model)
    machine = _machine(args, MachineConfig())
    kw = {"K": args.dense_cols, "threads": machine.threads}
    tr = spmm_instances(args.train_uniform, args.train_powerlaw, args.seed, **kw)
    te = spmm_instances(args.test_uniform, args.test_powerlaw, args.seed + 1, **kw)
    rows = spmm_experiment(model, tr, te, machine)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "spmm.csv", rows)
    summary = {"seed": args.seed, "dense_cols": args.dense_cols, "correct": sum(r["correct"] for r in rows),
               "total": len(rows), "instances": rows}
    _write_summary(out, "spmm", summary)
    return summary


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perfembed", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    def add(name, fn, help):
        sp = sub.add_parser(name, help=help, description=help)
        sp.set_defaults(fn=fn)
        return sp

    def machine(sp):
        sp.add_argument("--machine", help="machine config file (key = value lines or JSON); default: desk machine")

    def corpus(sp, split="test"):
        sp.add_argument("--corpus", required=True, help="corpus directory")
        sp.add_argument("--split", default=split, choices=SPLITS, help="default: %(default)s")

    g = add("gen", cmd_gen, "generate a synthetic corpus")
    g.add_argument("--out", required=True, help="corpus directory to create")
    g.add_argument("--seed", type=int, default=0, help="default: %(default)s")
    g.add_argument("--threads", type=int, default=4, help="threads of the canonical schedule")
    for split in SPLITS:
        g.add_argument(f"--{split}", type=int, default=DEFAULT_COUNTS[split], help=f"{split} nests")

    pr = add("profile", cmd_profile, "label a corpus by simulation")
    pr.add_argument("--corpus", required=True)
    pr.add_argument("--out", help="summary directory (default: the corpus)")
    machine(pr)

    t = add("train", cmd_train, "train the embedding model on the train/val splits")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0, help="default: %(default)s")
    t.add_argument("--epochs", type=int, default=20, help="default: %(default)s")
    t.add_argument("--lr", type=float, default=1e-3, help="default: %(default)s")
    t.add_argument("--batch-size", type=int, default=4, help="default: %(default)s")
    t.add_argument("--embed-dim", type=int, default=128, help="default: %(default)s")
    t.add_argument("--layers", type=int, default=3, help="default: %(default)s")
    t.add_argument("--heads", type=int, default=4, help="default: %(default)s")
    t.add_argument("--mlp-hidden", type=int, default=128, help="default: %(default)s")

    d = add("dbbuild", cmd_dbbuild, "brute-force tune a split and store the improvements")
    corpus(d)
    d.add_argument("--model", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--limits", default="default",
                   help=f"preset ({', '.join(LIMIT_PRESETS)}) or key = value limits file")
    d.add_argument("--kinds", help="comma-separated kernel kinds to keep")
    machine(d)

    tu = add("tune", cmd_tune, "transfer tune every nest of a split (leave-one-out)")
    corpus(tu)
    tu.add_argument("--model", required=True)
    tu.add_argument("--db", required=True)
    tu.add_argument("--out", required=True)
    tu.add_argument("--k", type=int, default=5, help="default: %(default)s")
    tu.add_argument("--kinds", help="comma-separated kernel kinds to keep")
    tu.add_argument("--bruteforce", help="dbbuild summary for the comparison (default: next to --db)")
    tu.add_argument("--tolerance", type=float, default=0.10, help="default: %(default)s")
    tu.add_argument("--include-self", action="store_true", help="do not exclude the nest's own entry")
    machine(tu)

    e = add("eval", cmd_eval, "similarity CoV report, prediction correlations and embedding export")
    corpus(e)
    e.add_argument("--model", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--k", type=int, default=3, help="default: %(default)s")
    machine(e)

    s = add("spmm", cmd_spmm, "static vs dynamic schedule decision for synthetic SpMM by 1-NN lookup")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=1, help="train seed; the test set uses seed + 1")
    s.add_argument("--dense-cols", type=int, default=512, help="columns of the dense operand")
    s.add_argument("--train-uniform", type=int, default=10, help="default: %(default)s")
    s.add_argument("--train-powerlaw", type=int, default=10, help="default: %(default)s")
    s.add_argument("--test-uniform", type=int, default=5, help="default: %(default)s")
    s.add_argument("--test-powerlaw", type=int, default=5, help="default: %(default)s")
    s.add_argument("--machine", help="machine config file; default: the large-cache default machine")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = args.fn(args)
    except (CliError, DatabaseError, ModelError, ValueError, OSError) as exc:
        print(f"perfembed {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({k: v for k, v in summary.items() if not isinstance(v, (list, dict))}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
