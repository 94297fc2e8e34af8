"""Operator command line.

Subcommands:

* ``simulate``: run a plan file of simulated-annotator experiments and
  write per-trial curve files, an aggregate table and plot-data CSVs.
* ``train-predictor``: leave-one-dataset-out training of the stopping
  forest over a curve corpus, a report table (MSE in 1e-4 units, AUC, P,
  R, F1, test F1, err, instances) with fixed-step baseline rows, and a
  deployable forest trained on the full corpus.
* ``serve``: run the REST service.
* ``ingest``: validate a dataset file, optionally cap or unbalance it,
  write canonical record-lines and print label statistics.

Exit codes: 0 ok, 1 runtime failure, 2 usage/config error. Every command
is deterministic given its inputs and seeds.

Plan files are record-lines; each line is one plan:

    {"name": "demo", "dataset": {"kind": "synthetic", "labels": 5, ...},
     "model_kind": "lt", "strategy": "margin", "batch_k": 16,
     "budget": 256, "trials": 10, "pool_cap": 20000, "seed": 1}

A file-backed dataset instead uses {"kind": "files", "train": ...,
"test": ..., "format": "jsonl", "label_set": ..., "encoder_dim": 256}.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import corpus as _corpus
from . import perfpred, simulate
from .encoder import HashedNgramEncoder
from .errors import LabelLoopError, ValidationError
from .fsl import TrainConfig


def _load_plan_file(path: str) -> list[dict]:
    plans = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"plan line {lineno}: invalid JSON ({exc.msg})")
            if not isinstance(doc, dict) or "name" not in doc or "dataset" not in doc:
                raise ValidationError(f"plan line {lineno}: needs 'name' and 'dataset'")
            plans.append(doc)
    if not plans:
        raise ValidationError("plan file is empty")
    return plans


def _dataset_from_spec(doc: dict) -> simulate.Dataset:
    kind = doc.get("kind", "synthetic")
    if kind == "synthetic":
        fields = {k: doc[k] for k in (
            "clusters", "dim", "labels", "size", "test_size", "noise",
            "separation", "anchor_noise", "skew", "seed") if k in doc}
        return simulate.synth_dataset(simulate.SynthSpec(**fields),
                                      name=doc.get("name", "synthetic"))
    if kind == "files":
        fmt = doc.get("format", "record-lines")
        train, derived = _corpus.ingest(doc["train"], fmt)
        test, _ = _corpus.ingest(doc["test"], fmt)
        if "label_set" in doc:
            label_set = _corpus.load_label_set(doc["label_set"])
        elif derived is not None:
            label_set = derived
        else:
            raise ValidationError("file dataset needs a label_set file or labeled training data")
        encoder = HashedNgramEncoder(dim=int(doc.get("encoder_dim", 256)))
        return simulate.Dataset(name=doc.get("name", os.path.basename(doc["train"])),
                                train=train, test=test, label_set=label_set, encoder=encoder)
    raise ValidationError(f"unknown dataset kind {kind!r}")


def _plan_from_doc(doc: dict, args) -> simulate.ExperimentPlan:
    train_overrides = doc.get("train_config", {})
    return simulate.ExperimentPlan(
        name=doc["name"],
        model_kind=doc.get("model_kind", "lt"),
        strategy=doc.get("strategy", "random"),
        batch_k=int(args.batch_k or doc.get("batch_k", 16)),
        budget=int(args.budget or doc.get("budget", 256)),
        trials=int(doc.get("trials", 10)),
        pool_cap=int(args.pool_cap or doc.get("pool_cap", 20000)),
        seed=int(args.seed if args.seed is not None else doc.get("seed", 0)),
        randomize_2k=bool(doc.get("randomize_2k", True)),
        train_config=TrainConfig(**train_overrides),
    )


def _run_one_trial(payload):
    plan_doc, dataset_doc, trial, args_dict = payload
    ns = argparse.Namespace(**args_dict)
    dataset = _dataset_from_spec(dataset_doc)
    plan = _plan_from_doc(plan_doc, ns)
    curve = simulate.run_trial(dataset, plan, trial)
    return plan_doc["name"], trial, curve, len(dataset.label_set)


def cmd_simulate(args) -> int:
    plans = _load_plan_file(args.plan)
    os.makedirs(args.out, exist_ok=True)
    curves_dir = os.path.join(args.out, "curves")
    plots_dir = os.path.join(args.out, "plots")
    os.makedirs(curves_dir, exist_ok=True)
    os.makedirs(plots_dir, exist_ok=True)

    args_dict = {"batch_k": args.batch_k, "budget": args.budget,
                 "pool_cap": args.pool_cap, "seed": args.seed}
    tasks = []
    for doc in plans:
        plan = _plan_from_doc(doc, args)  # validates eagerly (usage errors -> exit 2)
        for trial in range(plan.trials):
            tasks.append((doc, doc["dataset"], trial, args_dict))

    results = []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one_trial, tasks))
    else:
        results = [_run_one_trial(t) for t in tasks]

    all_curves = []
    for name, trial, curve, n_labels in results:
        all_curves.append(curve)
        rows = simulate.curve_to_rows(curve, n_labels)
        path = os.path.join(curves_dir, f"{name}__t{trial}.jsonl")
        with open(path, "w", encoding="utf-8") as fh:
            perfpred.write_curve_rows(rows, fh)
        if curve.truncated:
            print(f"warning: {name} trial {trial} truncated (pool exhausted)", file=sys.stderr)

    agg = simulate.aggregate(all_curves)
    with open(os.path.join(args.out, "aggregate.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["plan", "n_train", "mean_macro_f1", "std_macro_f1"])
        for row in agg:
            writer.writerow([row.plan, row.n_train, f"{row.mean_f1:.6f}", f"{row.std_f1:.6f}"])
    by_plan: dict[str, list] = {}
    for row in agg:
        by_plan.setdefault(row.plan, []).append(row)
    for plan_name, rows in by_plan.items():
        with open(os.path.join(plots_dir, f"{plan_name}.csv"), "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n_train", "mean", "std"])
            for row in rows:
                writer.writerow([row.n_train, f"{row.mean_f1:.6f}", f"{row.std_f1:.6f}"])
    print(f"wrote {len(results)} curve files and {len(by_plan)} aggregate plans to {args.out}")
    return 0


def _report_line(name: str, report: perfpred.PredictorReport) -> list[str]:
    fmt = lambda v: "nan" if v != v else f"{v:.4f}"
    return [name, f"{report.mse_bp:.1f}", fmt(report.auc), fmt(report.precision),
            fmt(report.recall), fmt(report.f1), fmt(report.stop_norm_f1),
            fmt(report.stop_err), fmt(report.stop_instances),
            f"{report.n_stopped}/{report.n_runs}"]


def cmd_train_predictor(args) -> int:
    rows = []
    for path in args.corpus:
        with open(path, "r", encoding="utf-8") as fh:
            rows.extend(perfpred.read_curve_rows(fh))
    if not rows:
        raise ValidationError("empty curve corpus")
    config = perfpred.ForestConfig(n_trees=args.trees)
    rule = perfpred.StoppingRule(tau=args.tau)
    models, spec = perfpred.leave_one_out_train(rows, config, seed=args.seed or 0,
                                                history=args.history)
    evals = perfpred.corpus_to_run_evals(rows, models, spec)
    forest_report = perfpred.evaluate_predictor(evals, rule, no_stop_policy="final")

    header = ["model", "mse_bp", "auc", "precision", "recall", "f1",
              "norm_f1_at_stop", "err", "instances", "stopped"]
    lines = [_report_line("forest(all)", forest_report)]
    if forest_report.stop_instances == forest_report.stop_instances:  # not NaN
        # fixed-step baselines on the corpus grid, anchored at the forest's
        # mean stop count
        diffs = sorted({b.n_train - a.n_train
                        for _, rr in perfpred.group_runs(rows).items()
                        for a, b in zip(rr, rr[1:]) if b.n_train > a.n_train})
        step = diffs[0] if diffs else 16
        anchor = max(step, step * round(forest_report.stop_instances / step))
        for i in (anchor - step, anchor, anchor + step):
            if i <= 0:
                continue
            base_report = perfpred.evaluate_predictor(perfpred.fixed_step_runs(evals, i), rule)
            lines.append(_report_line(f"baseline {i}", base_report))

    out_report = args.report or os.path.join(os.path.dirname(args.out) or ".", "report.csv")
    with open(out_report, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(lines)
    widths = [max(len(str(r[i])) for r in [header] + lines) for i in range(len(header))]
    for row in [header] + lines:
        print("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))

    deploy = perfpred.fit_full_corpus(rows, config, seed=args.seed or 0, history=args.history)
    perfpred.forest_save(deploy, args.out)
    print(f"saved deployable forest to {args.out}; report to {out_report}")
    return 0


def cmd_serve(args) -> int:
    from .service import ServiceConfig, main_serve

    config = ServiceConfig(
        data_dir=args.data_dir, encoder_dim=args.encoder_dim,
        vectors_path=args.vectors, forest_model_path=args.forest_model, tau=args.tau,
    )
    main_serve(config, host=args.host, port=args.port)
    return 0


def cmd_ingest(args) -> int:
    pool, derived = _corpus.ingest(args.input, args.format)
    label_set = _corpus.load_label_set(args.labels) if args.labels else derived
    if args.unbalance_base is not None:
        if label_set is None:
            raise ValidationError("unbalancing requires a labeled pool")
        pool = _corpus.make_unbalanced(pool, label_set,
                                       _corpus.UnbalanceSpec(decay_base=args.unbalance_base,
                                                             seed=args.seed or 0))
    if args.cap is not None:
        pool = _corpus.cap_pool(pool, args.cap, seed=args.seed or 0)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for inst in pool:
                doc = {"id": inst.id, "text": inst.text}
                if inst.gold_label is not None:
                    doc["label"] = inst.gold_label
                fh.write(json.dumps(doc, sort_keys=True) + "\n")
    print(f"instances: {len(pool)}")
    if label_set is not None and all(i.gold_label is not None for i in pool):
        stats = _corpus.compute_stats(pool, label_set)
        print(f"labels: {len(label_set)}")
        print(f"uniformness: {stats.uniformness:.4f}")
        for name in label_set.names:
            print(f"  {name}: {stats.frequencies[name]:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labelloop",
                                     description="active few-shot labeling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run simulated-annotator experiments")
    sim.add_argument("plan", help="record-lines plan file")
    sim.add_argument("--out", default="simulate-out", help="output directory")
    sim.add_argument("--jobs", type=int, default=1, help="parallel trials")
    sim.add_argument("--seed", type=int, default=None, help="override plan seeds")
    sim.add_argument("--budget", type=int, default=None, help="override plan budgets")
    sim.add_argument("--batch-k", type=int, default=None, dest="batch_k")
    sim.add_argument("--pool-cap", type=int, default=None, dest="pool_cap")
    sim.set_defaults(func=cmd_simulate)

    tp = sub.add_parser("train-predictor", help="train and evaluate the stopping forest")
    tp.add_argument("corpus", nargs="+", help="curve-corpus record-lines files")
    tp.add_argument("--out", default="forest.json", help="deployable forest path")
    tp.add_argument("--report", default=None, help="report CSV path")
    tp.add_argument("--tau", type=float, default=0.95)
    tp.add_argument("--history", type=int, default=5)
    tp.add_argument("--trees", type=int, default=200)
    tp.add_argument("--seed", type=int, default=0)
    tp.set_defaults(func=cmd_train_predictor)

    srv = sub.add_parser("serve", help="run the REST annotation service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8080)
    srv.add_argument("--data-dir", default="labelloop-data", dest="data_dir")
    srv.add_argument("--encoder-dim", type=int, default=256, dest="encoder_dim")
    srv.add_argument("--vectors", default=None, help="precomputed vector file")
    srv.add_argument("--forest-model", default=None, dest="forest_model")
    srv.add_argument("--tau", type=float, default=0.95)
    srv.set_defaults(func=cmd_serve)

    ing = sub.add_parser("ingest", help="validate and convert a dataset file")
    ing.add_argument("input")
    ing.add_argument("--format", default="record-lines",
                     choices=["record-lines", "jsonl", "delimited-table", "csv"])
    ing.add_argument("--labels", default=None, help="label-set record-lines file")
    ing.add_argument("--out", default=None, help="write canonical record-lines here")
    ing.add_argument("--cap", type=int, default=None)
    ing.add_argument("--unbalance-base", type=float, default=None, dest="unbalance_base")
    ing.add_argument("--seed", type=int, default=None)
    ing.set_defaults(func=cmd_ingest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LabelLoopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
