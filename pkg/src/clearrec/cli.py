"""Command line interface: ``clearrec {synth,train,eval,project,diagnose,sweep}``.

Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numerical
abort during training.
"""
import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import config as runcfg
from . import matrixio
from .data import k_core, load_interactions, read_manifest, save_interactions, write_manifest
from .diagnostics import DEFAULT_DIRECTIONS, diagnose, pca2
from .evaluation import rank_and_score, split_dataset
from .exceptions import ConfigError, FormatError, InvalidInputError, NumericalAbort
from .redundancy import RedundancyConfig, fit_projectors, project_features
from .synthetic import SyntheticSpec, generate_synthetic
from .training import embeddings, load_checkpoint, save_checkpoint, train

logger = logging.getLogger("clearrec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

PAPER_LAMBDAS = (0.3, 0.5, 0.7, 0.9)
PAPER_RANKS = (2, 4, 8, 16, 20)


def _dump_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


# -- data ------------------------------------------------------------------

def load_run_data(data_doc):
    """Load interactions and features named by the ``data`` config section
    and split them. Returns ``(dataset, raw_v, raw_t, input_hash)``."""
    base = Path(data_doc.get("dir", "."))
    inter_path = Path(data_doc.get("interactions") or base / "interactions.tsv")
    v_path = Path(data_doc.get("visual") or base / "raw_v.clrf")
    t_path = Path(data_doc.get("textual") or base / "raw_t.clrf")
    item_order = None
    manifest_path = base / "manifest.json"
    if "interactions" not in data_doc and manifest_path.exists():
        item_order = read_manifest(manifest_path).get("item_ids")

    raw = load_interactions(inter_path, item_order=item_order)
    raw_v = matrixio.load_matrix(v_path)
    raw_t = matrixio.load_matrix(t_path)
    if raw_v.shape[0] != raw_t.shape[0]:
        raise InvalidInputError(f"feature row counts differ: {raw_v.shape[0]} vs {raw_t.shape[0]}")
    if raw.num_items != raw_v.shape[0]:
        raise InvalidInputError(
            f"{raw.num_items} items in interactions but {raw_v.shape[0]} feature rows"
        )
    if data_doc.get("five_core"):
        raw, kept = k_core(raw, 5)
        raw_v, raw_t = raw_v[kept], raw_t[kept]
    data = split_dataset(raw, data_doc.get("split_ratios", (0.8, 0.1, 0.1)),
                         data_doc.get("split_seed", 0))
    digest = matrixio.content_hash(raw_v, raw_t, raw.pairs)
    return data, raw_v, raw_t, digest


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args):
    spec = SyntheticSpec(
        num_users=args.users,
        num_items=args.items,
        raw_dim_v=args.dim_v,
        raw_dim_t=args.dim_t,
        shared_rank=args.shared_rank,
        specific_rank=args.specific_rank,
        shared_strength=args.shared_strength,
        preference_source=args.preference_source,
        shared_weight=args.shared_weight,
        interactions_per_user=args.interactions_per_user,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raw_v, raw_t, inter = generate_synthetic(spec)
    matrixio.save_matrix(out / "raw_v.clrf", raw_v)
    matrixio.save_matrix(out / "raw_t.clrf", raw_t)
    save_interactions(out / "interactions.tsv", inter.pairs, inter.user_ids, inter.item_ids)
    checksums = {
        name: matrixio.sha256_file(out / name)
        for name in ("raw_v.clrf", "raw_t.clrf", "interactions.tsv")
    }
    write_manifest(out / "manifest.json", "synthetic", inter.report(), checksums,
                   extra={"spec": spec.to_dict(), "item_ids": inter.item_ids})
    print(json.dumps({"out": str(out), **inter.report()}))
    return EXIT_OK


def _overrides(args):
    doc = {"data": {}, "train": {}, "redundancy": {}}
    if getattr(args, "data", None):
        doc["data"]["dir"] = args.data
    if getattr(args, "out", None):
        doc["output_dir"] = args.out
    for flag, key in (("seed", "seed"), ("epochs", "max_epochs"), ("lr", "lr"), ("d", "d"),
                      ("layers", "layers"), ("batch_size", "batch_size"),
                      ("patience", "early_stop_patience")):
        val = getattr(args, flag, None)
        if val is not None:
            doc["train"][key] = val
    for flag, key in (("rank", "rank_k"), ("lam", "strength_lambda"),
                      ("tau", "refresh_interval_tau"), ("rank_mode", "rank_mode"),
                      ("energy_threshold", "energy_threshold")):
        val = getattr(args, flag, None)
        if val is not None:
            doc["redundancy"][key] = val
    if getattr(args, "center", False):
        doc["redundancy"]["center_before_project"] = True
    if getattr(args, "no_projection", False):
        doc["redundancy"]["enabled"] = False
    return {k: v for k, v in doc.items() if v != {}}


def _resolved_from_args(args):
    base = runcfg.load_config(args.config) if args.config else runcfg.default_config()
    return runcfg.resolve(runcfg.merge(base, _overrides(args)))


def run_training(doc, out_dir, write_outputs=True):
    """Train per a resolved run config. Returns a summary dict."""
    data, raw_v, raw_t, digest = load_run_data(doc["data"])
    cfg = runcfg.train_config(doc)
    out = Path(out_dir)
    header = {"record": "header", "config": doc, "input_hash": digest}

    log_fh = None
    if write_outputs:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "log.jsonl", "w", encoding="utf-8")
        log_fh.write(json.dumps(header) + "\n")

    def on_epoch(entry):
        if log_fh is not None:
            log_fh.write(json.dumps(entry) + "\n")
            log_fh.flush()

    try:
        result = train(data, raw_v, raw_t, cfg, on_epoch=on_epoch)
    except NumericalAbort as exc:
        if write_outputs:
            _dump_json(out / "abort.json", {"error": str(exc), **exc.dump})
        raise
    finally:
        if log_fh is not None:
            log_fh.close()

    ue, ie = embeddings(result.state, result.pair, data, raw_v, raw_t, cfg)
    ks = doc.get("eval_ks", [10, 20])
    report = rank_and_score(ue, ie, data, ks=ks, split="test")
    summary = {
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.log),
        "val_recall": result.best_val,
        "report": report,
        "result": result,
        "data": (data, raw_v, raw_t),
    }
    if write_outputs:
        _dump_json(out / "eval_test.json", report.to_dict())
        save_checkpoint(out / "checkpoint.clrz", result, extra={
            "run_config": doc, "input_hash": digest, "eval_test": report.to_dict(),
        })
        diag = doc.get("diagnostics", {})
        if diag.get("enabled"):
            _write_diagnostics(result.state, result.pair, cfg.redundancy, raw_v, raw_t,
                               out / "diagnostics", diag.get("ks", [5, 10, 20]),
                               diag.get("n_directions", DEFAULT_DIRECTIONS), diag.get("seed", 0))
    return summary


def cmd_train(args):
    doc = _resolved_from_args(args)
    out = Path(doc["output_dir"])
    summary = run_training(doc, out)
    print(json.dumps({
        "output_dir": str(out),
        "best_epoch": summary["best_epoch"],
        "test": summary["report"].to_dict()["metrics"],
    }))
    return EXIT_OK


def evaluate_checkpoint(checkpoint, data_dir=None, split="test", ks=None):
    state, pair, cfg, manifest = load_checkpoint(checkpoint)
    run_doc = manifest.get("extra", {}).get("run_config")
    if run_doc is None:
        raise FormatError(f"{checkpoint}: no run configuration recorded")
    data_doc = dict(run_doc["data"])
    if data_dir is not None:
        data_doc = {k: v for k, v in data_doc.items() if k not in ("interactions", "visual", "textual")}
        data_doc["dir"] = str(data_dir)
    data, raw_v, raw_t, _ = load_run_data(data_doc)
    ue, ie = embeddings(state, pair, data, raw_v, raw_t, cfg)
    return rank_and_score(ue, ie, data, ks=ks or run_doc.get("eval_ks", [10, 20]), split=split)


def cmd_eval(args):
    report = evaluate_checkpoint(args.checkpoint, args.data, args.split, args.ks)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_project(args):
    v = matrixio.load_matrix(args.visual)
    t = matrixio.load_matrix(args.textual)
    cfg = RedundancyConfig(
        rank_k=args.rank, strength_lambda=args.lam, rank_mode=args.rank_mode,
        energy_threshold=args.energy_threshold, center_before_project=args.center,
    )
    pair = fit_projectors(v, t, cfg)
    pv, pt = project_features(v, t, pair, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    matrixio.save_matrix(out / "projected_v.clrf", pv)
    matrixio.save_matrix(out / "projected_t.clrf", pt)
    matrixio.save_matrix(out / "projector_v.clrf", pair.visual.matrix)
    matrixio.save_matrix(out / "projector_t.clrf", pair.textual.matrix)
    doc = {
        "rank_k": pair.rank,
        "strength_lambda": pair.strength,
        "center_before_project": cfg.center_before_project,
        "spectrum": [float(x) for x in pair.spectrum],
        "input_hash": matrixio.content_hash(v, t),
    }
    _dump_json(out / "spectrum.json", doc)
    print(json.dumps({"out": str(out), "rank_k": pair.rank, "strength_lambda": pair.strength}))
    return EXIT_OK


def _write_diagnostics(state, pair, red_cfg, raw_v, raw_t, out, ks, n_dir, seed):
    from .training import forward_encoded

    v, t = forward_encoded(raw_v, raw_t, state)
    if pair is None:
        pair = fit_projectors(v, t, RedundancyConfig(rank_k=0, strength_lambda=0.0))
    report = diagnose(v, t, pair, red_cfg, ks=ks, n_directions=n_dir, seed=seed)
    report.write(out)
    _export_2d(out, v, t, *project_features(v, t, pair, red_cfg))
    return report


def _export_2d(out, v, t, pv, pt):
    with open(Path(out) / "embedding_2d.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item", "modality", "stage", "x", "y"])
        for stage, (a, b) in (("before", (v, t)), ("after", (pv, pt))):
            for modality, x in (("visual", a), ("textual", b)):
                for i, (px, py) in enumerate(pca2(x)):
                    w.writerow([i, modality, stage, repr(float(px)), repr(float(py))])


def cmd_diagnose(args):
    out = Path(args.out)
    ks = args.ks or [5, 10, 20]
    if args.checkpoint:
        state, pair, cfg, manifest = load_checkpoint(args.checkpoint)
        run_doc = manifest.get("extra", {}).get("run_config", {})
        data_doc = dict(run_doc.get("data", {}))
        if args.data:
            data_doc = {"dir": args.data}
        _, raw_v, raw_t, _ = load_run_data(data_doc)
        report = _write_diagnostics(state, pair, cfg.redundancy, raw_v, raw_t, out, ks,
                                    args.directions, args.seed)
    elif args.visual and args.textual:
        v = matrixio.load_matrix(args.visual)
        t = matrixio.load_matrix(args.textual)
        cfg = RedundancyConfig(rank_k=args.rank, strength_lambda=args.lam,
                               center_before_project=args.center)
        pair = fit_projectors(v, t, cfg)
        report = diagnose(v, t, pair, cfg, ks=ks, n_directions=args.directions, seed=args.seed)
        report.write(out)
        _export_2d(out, v, t, *project_features(v, t, pair, cfg))
    else:
        raise ConfigError("diagnose needs --checkpoint or both --visual and --textual")
    print(json.dumps({"out": str(out), "frobenius_ratio": report.frobenius_ratio,
                      "swd_before": report.swd_before, "swd_after": report.swd_after}))
    return EXIT_OK


SWEEP_FIELDS = ["lambda", "k", "best_epoch", "epochs_run", "val_recall"]


def run_sweep(doc, lambdas, ranks):
    """Train once per (lambda, k) cell; returns result rows in grid order."""
    rows = []
    for lam in lambdas:
        for k in ranks:
            cell = runcfg.resolve(runcfg.merge(doc, {
                "redundancy": {"strength_lambda": float(lam), "rank_k": int(k)},
            }))
            summary = run_training(cell, doc.get("output_dir", "."), write_outputs=False)
            row = {"lambda": float(lam), "k": int(k), "best_epoch": summary["best_epoch"],
                   "epochs_run": summary["epochs_run"], "val_recall": summary["val_recall"]}
            for kk, m in sorted(summary["report"].metrics.items()):
                row[f"test_recall@{kk}"] = m["recall"]
                row[f"test_ndcg@{kk}"] = m["ndcg"]
            rows.append(row)
    return rows


def cmd_sweep(args):
    doc = _resolved_from_args(args)
    lambdas = args.lambdas or list(PAPER_LAMBDAS)
    ranks = args.ranks or list(PAPER_RANKS)
    rows = run_sweep(doc, lambdas, ranks)
    out = Path(doc["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    print(json.dumps({"out": str(path), "rows": len(rows)}))
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def _add_run_flags(p):
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--data", help="dataset directory (interactions.tsv, raw_v.clrf, raw_t.clrf)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--d", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--tau", type=int)
    p.add_argument("--rank-mode", choices=["fixed", "dynamic_ratio"])
    p.add_argument("--energy-threshold", type=float)
    p.add_argument("--center", action="store_true")
    p.add_argument("--no-projection", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="clearrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic planted-redundancy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--items", type=int, default=800)
    p.add_argument("--dim-v", type=int, default=64)
    p.add_argument("--dim-t", type=int, default=48)
    p.add_argument("--shared-rank", type=int, default=4)
    p.add_argument("--specific-rank", type=int, default=8)
    p.add_argument("--shared-strength", type=float, default=3.0)
    p.add_argument("--preference-source", choices=["specific_only", "mixed"], default="specific_only")
    p.add_argument("--shared-weight", type=float, default=0.0)
    p.add_argument("--interactions-per-user", type=int, default=20)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the recommender")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset directory; defaults to the one recorded in the checkpoint")
    p.add_argument("--split", choices=["val", "test"], default="test")
    p.add_argument("--ks", type=int, nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("project", help="fit and apply projectors to a pair of feature matrices")
    p.add_argument("--visual", required=True)
    p.add_argument("--textual", required=True)
    p.add_argument("--rank", "-k", type=int, required=True)
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--rank-mode", choices=["fixed", "dynamic_ratio"], default="fixed")
    p.add_argument("--energy-threshold", type=float, default=0.5)
    p.add_argument("--center", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("diagnose", help="redundancy diagnostics report")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--visual")
    p.add_argument("--textual")
    p.add_argument("--rank", "-k", type=int, default=4)
    p.add_argument("--lam", type=float, default=0.9)
    p.add_argument("--center", action="store_true")
    p.add_argument("--ks", type=int, nargs="+")
    p.add_argument("--directions", type=int, default=DEFAULT_DIRECTIONS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sweep", help="grid over projection strength and rank")
    _add_run_flags(p)
    p.add_argument("--lambdas", type=float, nargs="+")
    p.add_argument("--ranks", type=int, nargs="+")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, InvalidInputError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # remaining ClearError subclasses (rank/strength) come from bad flags
        print(f"invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
