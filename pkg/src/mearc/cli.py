"""Command-line entry points for the workbench.

Subcommands: grow, run, ablate-window, cross-day, shuffle-baseline,
export-states, embed, report. Global flags select the config file, root
seed, output run directory and worker count.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import culture as culture_mod
from . import dsp
from . import harness
from . import readout as readout_mod
from .config import WorkbenchConfig, load_config, save_config
from .seeds import derive_seed


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mearc",
        description="Reservoir-computing workbench on a simulated 64x64 electrode array")
    parser.add_argument("--config", help="JSON config file (sections per module)")
    parser.add_argument("--seed", type=int, help="root seed (overrides config)")
    parser.add_argument("--out", help="run directory for outputs")
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallel session workers (results are identical to serial)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("grow", help="grow one culture and print connectivity stats")

    p_run = sub.add_parser("run", help="run one experiment family end to end")
    p_run.add_argument("--family", required=True, choices=harness.FAMILIES)
    p_run.add_argument("--substrate", default="both", choices=("culture", "ar", "both"))
    p_run.add_argument("--save-events", action="store_true",
                       help="export per-session spike-event JSONL files")
    p_run.add_argument("--mnist-images", help="IDX image file (mnist family)")
    p_run.add_argument("--mnist-labels", help="IDX label file (mnist family)")
    p_run.add_argument("--mnist-subset", type=int, help="subset size (default 200)")

    p_abl = sub.add_parser("ablate-window", help="accuracy vs post-stimulus window")
    p_abl.add_argument("--family", required=True, choices=harness.FAMILIES)
    p_abl.add_argument("--w-list", default="5,10,20,30,40,50",
                       help="comma-separated window lengths in ms")
    p_abl.add_argument("--mnist-images")
    p_abl.add_argument("--mnist-labels")

    p_xd = sub.add_parser("cross-day", help="train on day 1, test on later days")
    p_xd.add_argument("--family", required=True, choices=harness.FAMILIES)
    p_xd.add_argument("--mnist-images")
    p_xd.add_argument("--mnist-labels")

    p_shf = sub.add_parser("shuffle-baseline",
                           help="chance level of an exported state CSV")
    p_shf.add_argument("states_csv")

    p_exp = sub.add_parser("export-states", help="run sessions and export state CSVs only")
    p_exp.add_argument("--family", required=True, choices=harness.FAMILIES)
    p_exp.add_argument("--mnist-images")
    p_exp.add_argument("--mnist-labels")

    p_emb = sub.add_parser("embed", help="2-D PCA embedding of an exported state CSV")
    p_emb.add_argument("states_csv")
    p_emb.add_argument("--dims", type=int, default=2)

    p_rep = sub.add_parser("report", help="summarize a run directory's report.json")
    p_rep.add_argument("run_dir")
    return parser


def _resolve_config(args) -> WorkbenchConfig:
    cfg = load_config(args.config) if args.config else WorkbenchConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    proto = cfg.protocol
    updates = {}
    if getattr(args, "mnist_images", None):
        updates["mnist_images_path"] = args.mnist_images
    if getattr(args, "mnist_labels", None):
        updates["mnist_labels_path"] = args.mnist_labels
    if getattr(args, "mnist_subset", None):
        updates["mnist_subset"] = args.mnist_subset
    if updates:
        cfg = dataclasses.replace(cfg, protocol=dataclasses.replace(proto, **updates))
    cfg.validate()
    return cfg


def _require_out(args) -> str:
    if not args.out:
        raise SystemExit("this command needs --out <run-dir>")
    return args.out


def cmd_grow(args) -> int:
    cfg = _resolve_config(args)
    ccfg = dataclasses.replace(cfg.culture, seed=derive_seed(cfg.seed, "culture", 0))
    culture = culture_mod.grow_culture(ccfg)
    deg = culture.out_degrees()
    print(f"grew culture: {ccfg.n_neurons} neurons, "
          f"{int(culture.is_inhibitory.sum())} inhibitory")
    print(f"out-degree mean {deg.mean():.2f} (target {ccfg.mean_out_degree}), "
          f"min {deg.min()}, max {deg.max()}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        save_config(os.path.join(args.out, "config.json"), cfg)
        print(f"config echoed to {args.out}/config.json")
    return 0


def cmd_run(args, export_only: bool = False) -> int:
    cfg = _resolve_config(args)
    out = _require_out(args)
    substrate = "culture" if export_only else args.substrate
    run = harness.run_family(args.family, cfg, substrate=substrate, jobs=args.jobs,
                             out_dir=out, evaluate=not export_only,
                             save_events=bool(getattr(args, "save_events", False)))
    overall = {name: sub["overall"] for name, sub in run.report["substrates"].items()}
    for name, agg in sorted(overall.items()):
        print(f"{args.family} / {name}: accuracy {agg['mean']:.3f} "
              f"+- {agg['std']:.3f} over {agg['n']} sessions")
    print(f"outputs in {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    out = _require_out(args)
    W_list = [float(w) for w in args.w_list.split(",") if w.strip()]
    needed = max(W_list) + 10.0
    if cfg.protocol.post_ms < needed:
        cfg = dataclasses.replace(
            cfg, protocol=dataclasses.replace(cfg.protocol, post_ms=needed))
        print(f"raised protocol.post_ms to {needed} ms to cover the sweep")
    report = harness.ablate_window(args.family, cfg, W_list=W_list,
                                   jobs=args.jobs, out_dir=out)
    for point in report["curve"]:
        print(f"W={point['W_ms']:>5.1f} ms: accuracy {point['mean']:.3f} "
              f"+- {point['sem']:.3f} (SEM, n={point['n']})")
    return 0


def cmd_cross_day(args) -> int:
    cfg = _resolve_config(args)
    out = _require_out(args)
    report = harness.cross_day_eval(args.family, cfg, jobs=args.jobs, out_dir=out)
    print(f"day-1 within-day accuracy {report['train_day_cv']['mean']['mean']:.3f}")
    for day, entry in sorted(report["transfer"].items()):
        print(f"day {int(day) + 1}: transfer {entry['accuracy']['mean']:.3f} "
              f"+- {entry['accuracy']['std']:.3f}, "
              f"shuffle {entry['shuffle']['mean']:.3f}")
    return 0


def cmd_shuffle_baseline(args) -> int:
    cfg = _resolve_config(args)
    ds = harness.load_dataset_csv(args.states_csv)
    shuffled = readout_mod.shuffle_baseline(ds, seed=derive_seed(cfg.seed, "shuffle-cli"))
    cv = readout_mod.cross_validate(shuffled, k=cfg.readout.k_folds,
                                    seed=derive_seed(cfg.seed, "cv", "shuffle-cli"),
                                    **cfg.readout.train_kwargs())
    n_classes = len(shuffled.classes())
    print(f"shuffle baseline: accuracy {cv.mean:.3f} +- {cv.std:.3f} "
          f"(chance 1/{n_classes} = {1.0 / n_classes:.3f})")
    return 0


def cmd_embed(args) -> int:
    ds = harness.load_dataset_csv(args.states_csv)
    coords = harness.pca_embed(ds.features, dims=args.dims)
    out_path = (os.path.join(args.out, "embedding.csv") if args.out
                else os.path.splitext(args.states_csv)[0] + f".pca{args.dims}.csv")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as f:
        f.write("label," + ",".join(f"pc{i + 1}" for i in range(args.dims)) + "\n")
        for label, row in zip(ds.labels, coords):
            f.write(str(label) + "," + ",".join(f"{x:.10g}" for x in row) + "\n")
    var = np.var(coords, axis=0)
    print(f"embedded {len(ds)} states -> {out_path}")
    print("component variances: " + ", ".join(f"{v:.4g}" for v in var))
    return 0


def cmd_report(args) -> int:
    path = os.path.join(args.run_dir, "report.json")
    with open(path, encoding="utf-8") as f:
        report = json.load(f)
    print(f"experiment: {report.get('experiment')}")
    if "substrates" in report:
        for name, sub in sorted(report["substrates"].items()):
            agg = sub["overall"]
            print(f"  {name}: {agg['mean']:.3f} +- {agg['std']:.3f} (n={agg['n']})")
            for day, dagg in sorted(sub["per_day"].items()):
                print(f"    day {int(day) + 1}: {dagg['mean']:.3f} +- {dagg['std']:.3f}")
    if "curve" in report:
        for point in report["curve"]:
            print(f"  W={point['W_ms']} ms: {point['mean']:.3f} +- {point['sem']:.3f} (SEM)")
    if "transfer" in report:
        for day, entry in sorted(report["transfer"].items()):
            print(f"  day {int(day) + 1} transfer: {entry['accuracy']['mean']:.3f}, "
                  f"shuffle {entry['shuffle']['mean']:.3f}")
    if "timing" in report:
        print(f"  wall time: {report['timing'].get('wall_s')} s")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "grow": cmd_grow,
        "run": cmd_run,
        "ablate-window": cmd_ablate,
        "cross-day": cmd_cross_day,
        "shuffle-baseline": cmd_shuffle_baseline,
        "export-states": lambda a: cmd_run(a, export_only=True),
        "embed": cmd_embed,
        "report": cmd_report,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
