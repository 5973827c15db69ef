#!/usr/bin/env python3
"""Full-archive benchmark: base vs decorrelated ensembles of sizes 2..5.

This is the long-running protocol (five independent runs per dataset,
1500 epochs per model by default) and is NOT part of the test suite. On
the complete 128-dataset archive it takes GPU-free days; use --datasets
and --epochs to scope it down.

For every dataset and run it trains five plain members and, sharing the
first seed's member as the fixed reference, four decorrelated members.
Size-s ensembles reuse the first s members of each chain. Outputs:

  results.csv          accuracy table (datasets x 8 ensemble variants)
  mcm_report.json      pairwise comparison statistics over that table
  mcm_matrix.csv       plot-ready pairwise grid
  fid_comparison.json  per-dataset FID(ref, plain) vs FID(ref, deco) for
                       the 2-model configurations, with a paired Wilcoxon
                       p-value across datasets

Checkpoints land under <out>/models/ and are reused on restart, so the
script is resumable.
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from decolite.data import load_dataset, resolve_data_root
from decolite.diversity import feature_statistics, fid
from decolite.evaluation import (ResultsTable, ensemble_predict, accuracy,
                                 format_p_value, mcm, wilcoxon_signed_rank)
from decolite.model import load_model, save_model
from decolite.training import TrainConfig, train_base, train_decorrelated

SIZES = (2, 3, 4, 5)


def _train_or_load(path, kind, ds, cfg, prev):
    if path.is_file():
        return load_model(path)
    model, _ = (train_base(ds, cfg) if kind == "base"
                else train_decorrelated(ds, cfg, prev))
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, path)
    return model


def run_dataset(name, root, out, cfg, n_runs):
    train_ds, test_ds = load_dataset(root, name)
    acc = {f"{prefix}LITETime-{s}": [] for s in SIZES for prefix in ("", "Deco-")}
    fid_plain, fid_deco = [], []
    for run in range(n_runs):
        seeds = [run * 100 + k for k in range(5)]
        base_models, deco_models = [], []
        for i, seed in enumerate(seeds):
            run_cfg = replace(cfg, seed=seed)
            mdir = out / "models" / name / f"run{run}"
            base_models.append(_train_or_load(mdir / f"base{i}.ckpt", "base",
                                              train_ds, run_cfg, None))
            if i == 0:
                deco_models.append(base_models[0])  # shared reference
            else:
                deco_models.append(_train_or_load(mdir / f"deco{i}.ckpt", "deco",
                                                  train_ds, run_cfg,
                                                  deco_models.copy()))
        for s in SIZES:
            for prefix, chain in (("", base_models), ("Deco-", deco_models)):
                probs = ensemble_predict(chain[:s], test_ds.X)
                acc[f"{prefix}LITETime-{s}"].append(
                    accuracy(probs.argmax(axis=1), test_ds.y))
        ref_stats = feature_statistics(base_models[0], test_ds.X, "ref")
        fid_plain.append(fid(ref_stats, feature_statistics(base_models[1], test_ds.X, "b")))
        fid_deco.append(fid(ref_stats, feature_statistics(deco_models[1], test_ds.X, "d")))
    return ({k: float(np.mean(v)) for k, v in acc.items()},
            float(np.mean(fid_plain)), float(np.mean(fid_deco)))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-root", help="archive root (or DECO_DATA_ROOT)")
    ap.add_argument("--out", default="benchmark", help="output directory")
    ap.add_argument("--datasets", default="all",
                    help="'all', a comma list, or @file with one name per line")
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=1500)
    ap.add_argument("--alpha", type=float, default=0.5)
    args = ap.parse_args(argv)

    root = resolve_data_root(args.data_root)
    if root is None:
        ap.error("need --data-root or DECO_DATA_ROOT")
    if args.datasets == "all":
        names = sorted(p.name for p in root.iterdir()
                       if (p / f"{p.name}_TRAIN.tsv").is_file())
    elif args.datasets.startswith("@"):
        names = [ln.strip() for ln in Path(args.datasets[1:]).read_text().splitlines()
                 if ln.strip()]
    else:
        names = [n for n in args.datasets.split(",") if n]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig(epochs=args.epochs, alpha=args.alpha)

    rows, fid_pairs = {}, {}
    for i, name in enumerate(names):
        print(f"[{i + 1}/{len(names)}] {name}", flush=True)
        try:
            accs, f_plain, f_deco = run_dataset(name, root, out, cfg, args.runs)
        except Exception as exc:  # noqa: BLE001
            print(f"  skipped ({type(exc).__name__}: {exc})", file=sys.stderr)
            continue
        rows[name] = accs
        fid_pairs[name] = {"plain": f_plain, "deco": f_deco}
        best = max(accs, key=accs.get)
        print(f"  best {best} = {accs[best]:.4f}")

    classifiers = [f"{p}LITETime-{s}" for s in SIZES for p in ("", "Deco-")]
    table = ResultsTable(
        classifiers, list(rows),
        np.array([[rows[d][c] for d in rows] for c in classifiers]))
    table.to_csv(out / "results.csv")
    report = mcm(table)
    report.to_json(out / "mcm_report.json")
    report.matrix_csv(out / "mcm_matrix.csv")

    plain_vec = np.array([v["plain"] for v in fid_pairs.values()])
    deco_vec = np.array([v["deco"] for v in fid_pairs.values()])
    wres = wilcoxon_signed_rank(deco_vec, plain_vec) if len(plain_vec) > 1 else None
    with open(out / "fid_comparison.json", "w", encoding="utf-8") as fh:
        json.dump({
            "per_dataset": fid_pairs,
            "deco_higher": int((deco_vec > plain_vec).sum()),
            "plain_higher": int((plain_vec > deco_vec).sum()),
            "equal": int((plain_vec == deco_vec).sum()),
            "wilcoxon_p": None if wres is None else wres.p_value,
            "wilcoxon_p_display": None if wres is None else format_p_value(wres.p_value),
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")

    print("\nmean accuracy ranking:")
    for name, macc in zip(report.classifiers, report.mean_accuracy):
        print(f"  {name:18s} {macc:.4f}")
    if wres is not None:
        print(f"FID shift (decorrelated vs plain) Wilcoxon p: "
              f"{format_p_value(wres.p_value)}")


if __name__ == "__main__":
    main()
