"""Command line experiment driver.

Every command reads a JSON config (missing keys take the defaults in
``DEFAULTS``), applies ``--seed``, ``--out`` and ``--set key=value``
overrides, and writes all artifacts under the output directory. Exit
status is 0 on success, 1 for usage or configuration problems and 2 for
runtime or numerical failures.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import metrics as M
from .align import AnchorFrame, RansacConfig
from .dataset import TOY_KINDS, Dataset, generate_toy, load_csv, save_csv, train_test_split
from .errors import (ConfigError, ParseError, PreconditionError, SizeError, SpecAlignError)
from .graph import GraphConfig, build_graph
from .net import Mlp
from .spectral import MAX_DENSE_NODES, dump_embedding, embed
from .trainer import JointConfig, TrainConfig, infer, train, train_joint

log = logging.getLogger("specalign")

CHECKPOINT_FORMAT = "specalign-checkpoint"
CHECKPOINT_VERSION = 1

# default toy noise levels (isotropic std of the perturbation)
TOY_NOISE = {"three_moons": 0.02, "two_circles": 0.02, "gaussian_blobs": 0.3}

DEFAULTS = {
    "seed": 0,
    "out": "runs/default",
    "dataset": {
        "kind": "three_moons",  # a toy kind, ignored when "path" is set
        "n": 9000,
        "noise": None,          # None: TOY_NOISE[kind]
        "n_blobs": 3,
        "path": None,           # CSV to ingest instead of generating a toy
        "test_fraction": 0.2,
    },
    "graph": asdict(GraphConfig()),
    "train": {
        "K": None,              # None: number of classes
        "m": 256,
        "l": 30,
        "iterations": 1000,
        "lr": 1e-3,
        "hidden": [256, 256, 256, 256],
        "skip_trivial": False,
        "diffusion_time": 0.0,
        "stratified": True,
        "standardize_inputs": True,
        "output_scale": None,   # None: 1 / sqrt(m)
        "min_eigengap": 0.5,
        "eval_every": 0,
        "ransac": None,         # or {"iterations", "inlier_tol", "min_inliers"}
    },
    "metrics": {
        "eval_nodes": 1000,
        "kmeans_restarts": 10,
        "probe_steps": 500,
        "probe_lr": 0.05,
    },
    "analytic": {
        "nodes": 2000,
        "K": None,              # None: number of classes
        "skip_trivial": False,
        "diffusion_time": 0.0,
    },
    "joint": {
        "K": None,              # None: number of classes minus one
        "m": 256,
        "l": 30,
        "k_neighbors": 15,      # replaces graph.k_neighbors for joint runs
        "feature_iters": 1500,
        "spectral_period": 10,
        "margin": 1.0,
        "feature_lr": 1e-3,
        "spectral_lr": 1e-3,
        "feature_hidden": [64, 64],
        "feature_dim": 8,
        "spectral_hidden": [256, 256, 256, 256],
        "pair_batch": 256,
        "skip_trivial": True,
        "diffusion_time": 0.0,
        "min_eigengap": 0.5,
        "max_tg_condition": 10.0,
        "eval_every": 3,
        "eval_nodes": None,     # None: m
        "ransac": None,
    },
}

# blocks whose value may be null or a free-form dict
FREE_KEYS = {("train", "ransac"), ("joint", "ransac")}


# ---------------------------------------------------------------- config


def _merge(base, update, path=()):
    out = copy.deepcopy(base)
    for key, val in update.items():
        where = ".".join(path + (key,))
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and path + (key,) not in FREE_KEYS:
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], val, path + (key,))
        else:
            out[key] = copy.deepcopy(val)
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> dict:
    """Set a dotted key, e.g. ``train.iterations=50``; values are parsed as JSON."""
    key, sep, value = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    parts = key.split(".")
    nested = _parse_value(value)
    for p in reversed(parts):
        nested = {p: nested}
    return _merge(cfg, nested)


def load_config(path=None, overrides=(), seed=None, out=None) -> dict:
    """Defaults, then the JSON file, then ``--set`` overrides, then flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = _merge(cfg, user)
    for assignment in overrides:
        cfg = apply_override(cfg, assignment)
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = str(out)
    validate_config(cfg)
    return cfg


def _expected_classes(cfg) -> int | None:
    d = cfg["dataset"]
    if d["path"] is not None:
        return None
    return {"three_moons": 3, "two_circles": 2}.get(d["kind"], d["n_blobs"])


def validate_config(cfg: dict) -> None:
    """Re-check the cross-field constraints of every block."""
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {cfg['seed']!r}")
    d = cfg["dataset"]
    if d["path"] is None and d["kind"] not in TOY_KINDS:
        raise ConfigError(f"unknown toy kind {d['kind']!r}; expected one of {TOY_KINDS}")
    if not 0.0 < d["test_fraction"] < 1.0:
        raise ConfigError("dataset.test_fraction must be in (0, 1)")
    graph_config(cfg)
    C = _expected_classes(cfg)
    n_train = None
    if C is not None:
        n_train = d["n"] - int(round(d["test_fraction"] * d["n"]))
    try:
        train_config(cfg, C or 2).validate(n_train)
        if C is not None and C >= 2:
            joint_config(cfg, C).validate(n_train)
    except TypeError as exc:
        raise ConfigError(f"malformed train or joint block: {exc}") from None
    a = cfg["analytic"]
    if not 1 <= a["nodes"] <= MAX_DENSE_NODES:
        raise ConfigError(f"analytic.nodes must be in [1, {MAX_DENSE_NODES}], "
                          f"got {a['nodes']}")
    m = cfg["metrics"]
    if m["eval_nodes"] < 2 or m["kmeans_restarts"] < 1 or m["probe_steps"] < 0:
        raise ConfigError("metrics block: need eval_nodes >= 2, kmeans_restarts >= 1, "
                          "probe_steps >= 0")


def graph_config(cfg) -> GraphConfig:
    try:
        return GraphConfig(**cfg["graph"])
    except TypeError as exc:
        raise ConfigError(f"graph block: {exc}") from None


def _ransac(block):
    if block is None:
        return None
    try:
        return RansacConfig(**block)
    except (TypeError, PreconditionError) as exc:
        raise ConfigError(f"ransac block: {exc}") from None


def _widths(value, key):
    if not isinstance(value, list) or not all(
            isinstance(w, int) and not isinstance(w, bool) and w > 0 for w in value):
        raise ConfigError(f"{key} must be a list of positive integers, got {value!r}")
    return tuple(value)


def train_config(cfg, n_classes: int) -> TrainConfig:
    t = dict(cfg["train"])
    t["K"] = n_classes if t["K"] is None else t["K"]
    t["hidden"] = _widths(t["hidden"], "train.hidden")
    t["ransac"] = _ransac(t["ransac"])
    return TrainConfig(graph=graph_config(cfg), seed=cfg["seed"], **t)


def joint_config(cfg, n_classes: int) -> JointConfig:
    j = dict(cfg["joint"])
    j["K"] = n_classes - 1 if j["K"] is None else j["K"]
    j["feature_hidden"] = _widths(j["feature_hidden"], "joint.feature_hidden")
    j["spectral_hidden"] = _widths(j["spectral_hidden"], "joint.spectral_hidden")
    j["ransac"] = _ransac(j["ransac"])
    g = GraphConfig(**{**cfg["graph"], "k_neighbors": j.pop("k_neighbors")})
    return JointConfig(graph=g, seed=cfg["seed"], **j)


# ------------------------------------------------------------- artifacts


def _write_json(path, obj, indent=2):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=indent, sort_keys=True)
        fh.write("\n")


def _write_jsonl(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v
                        for v in row])


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _make_dataset(cfg) -> Dataset:
    d = cfg["dataset"]
    if d["path"] is not None:
        return load_csv(d["path"])
    noise = TOY_NOISE[d["kind"]] if d["noise"] is None else d["noise"]
    return generate_toy(d["kind"], d["n"], noise, seed=cfg["seed"], n_blobs=d["n_blobs"])


def load_split(cfg):
    """``(full, train, test)`` datasets from the files written by ``generate``."""
    out = Path(cfg["out"])
    csv_path, split_path = out / "dataset.csv", out / "split.json"
    if not csv_path.exists() or not split_path.exists():
        raise PreconditionError(f"no dataset under {out}; run the generate command first")
    ds = load_csv(csv_path)
    with open(split_path) as fh:
        split = json.load(fh)
    train_rows = np.array(split["train"], dtype=np.int64)
    test_rows = np.array(split["test"], dtype=np.int64)
    if train_rows.size + test_rows.size != ds.n:
        raise ParseError(f"{split_path} does not partition the {ds.n} rows of {csv_path}")
    return ds, ds.subset(train_rows), ds.subset(test_rows)


def _n_classes(ds) -> int:
    if ds.labels is None:
        raise PreconditionError("this command needs a labelled dataset")
    return ds.n_classes


def _plots(cfg) -> bool:
    return not cfg.get("_no_plots", False)


# -------------------------------------------------------------- commands


def cmd_generate(cfg) -> dict:
    """Write ``dataset.csv`` and the seeded train/test ``split.json``."""
    out = _out_dir(cfg)
    ds = _make_dataset(cfg)
    train_rows, test_rows = train_test_split(ds, cfg["dataset"]["test_fraction"], cfg["seed"])
    save_csv(ds, out / "dataset.csv")
    _write_json(out / "split.json", {"seed": cfg["seed"],
                                      "test_fraction": cfg["dataset"]["test_fraction"],
                                      "train": train_rows.tolist(),
                                      "test": test_rows.tolist()}, indent=None)
    if _plots(cfg):
        from .plotting import plot_points
        plot_points(ds.features, ds.labels, out / "dataset.png", title="dataset")
    summary = {"n": ds.n, "d": ds.d, "classes": ds.n_classes,
               "train": int(train_rows.size), "test": int(test_rows.size)}
    print(f"wrote {ds.n} rows ({ds.d} features, {ds.n_classes} classes) to "
          f"{out / 'dataset.csv'}; split {train_rows.size}/{test_rows.size}")
    return summary


def evaluate_model(model: Mlp, frame: AnchorFrame | None, train_ds: Dataset, test_ds: Dataset,
                   cfg) -> M.MetricsReport:
    """All metrics of the model on the test split.

    d_G and the orthogonality defect use a seeded ``metrics.eval_nodes``
    subsample of the test split, compared with the analytic embedding of
    that subsample's own graph; clustering uses every test node.
    """
    mc = cfg["metrics"]
    seed = cfg["seed"]
    K = model.out_width
    tcfg = train_config(cfg, K)
    Y = infer(model, test_ds.features)
    size = min(mc["eval_nodes"], test_ds.n)
    sub = np.sort(np.random.default_rng(seed).choice(test_ds.n, size, replace=False))
    report = M.MetricsReport(metadata={"split": "test", "test_nodes": test_ds.n,
                                       "subgraph_nodes": int(size), "K": K})
    U = embed(build_graph(test_ds.features[sub], tcfg.graph), K, tcfg.graph.laplacian_kind,
              tcfg.skip_trivial, tcfg.diffusion_time)
    try:
        report.grassmann = M.grassmann_distance(Y[sub], U.coords)
        report.orth_defect = M.orthogonality_defect(Y[sub])
    except SpecAlignError as exc:
        report.metadata["subspace_error"] = str(exc)
    if test_ds.labels is not None:
        C = test_ds.n_classes
        pred = M.kmeans(Y, C, restarts=mc["kmeans_restarts"], seed=seed)
        report.nmi = M.nmi(test_ds.labels, pred)
        report.acc = M.acc(test_ds.labels, pred)
        if train_ds.labels is not None and mc["probe_steps"] > 0:
            probe = M.ProbeConfig(mc["probe_steps"], mc["probe_lr"], seed)
            report.probe_accuracy = M.linear_probe_accuracy(
                infer(model, train_ds.features), train_ds.labels, Y, test_ds.labels, probe)
    if frame is not None:
        A = infer(model, train_ds.features[frame.anchor_ids])
        report.metadata["anchor_rmse"] = float(
            np.sqrt(np.mean(np.sum((A - frame.ref_coords) ** 2, axis=1))))
    return report


def save_checkpoint(path, model: Mlp, frame: AnchorFrame, cfg, train_ds: Dataset) -> None:
    _write_json(path, {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": _public(cfg),
        "model": model.to_dict(optimizer=True),
        "frame": frame.to_dict(),
        "anchor_node_ids": train_ds.ids[frame.anchor_ids].tolist(),
    }, indent=None)


def load_checkpoint(path):
    """``(model, frame, checkpoint_dict)``."""
    try:
        with open(path) as fh:
            ck = json.load(fh)
    except FileNotFoundError:
        raise PreconditionError(f"no checkpoint at {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(ck, dict) or ck.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"{path} is not a checkpoint file")
    if ck.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {ck.get('version')!r}")
    return Mlp.from_dict(ck["model"]), AnchorFrame.from_dict(ck["frame"]), ck


def _public(cfg) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def cmd_train(cfg) -> M.MetricsReport:
    """Train on the train split; write checkpoint, history and test report."""
    out = _out_dir(cfg)
    _, train_ds, test_ds = load_split(cfg)
    K = cfg["train"]["K"] if cfg["train"]["K"] is not None else _n_classes(train_ds)
    tcfg = train_config(cfg, K)
    eval_ds = test_ds if test_ds.labels is not None else None
    state = train(train_ds, tcfg, eval_ds=eval_ds)
    save_checkpoint(out / "checkpoint.json", state.model, state.frame, cfg, train_ds)
    _write_jsonl(out / "history.jsonl", state.history)
    _write_csv(out / "loss.csv", ["iter", "loss", "align_rmse"],
               [(r["iter"], r["loss"], r["align_rmse"]) for r in state.history])
    report = evaluate_model(state.model, state.frame, train_ds, test_ds, cfg)
    report.metadata["iterations"] = len(state.history)
    _write_json(out / "report.json", report.to_dict())
    Y = infer(state.model, test_ds.features)
    _dump_coords(out / "test_embedding.csv", test_ds, Y)
    if _plots(cfg):
        from .plotting import plot_points, plot_training_loss
        plot_training_loss(state.history, out / "loss.png")
        plot_points(Y, test_ds.labels, out / "test_embedding.png", title="model output, test")
    print(report.table())
    return report


def _dump_coords(path, ds, Y):
    header = ["node_id"] + [f"c{j}" for j in range(Y.shape[1])]
    rows = []
    for i in range(ds.n):
        row = [int(ds.ids[i])] + [float(v) for v in Y[i]]
        if ds.labels is not None:
            row.append(int(ds.labels[i]))
        rows.append(row)
    _write_csv(path, header + (["label"] if ds.labels is not None else []), rows)


def cmd_analytic(cfg) -> M.MetricsReport:
    """Analytic embedding of a seeded subsample of the whole dataset."""
    out = _out_dir(cfg)
    ds, _, _ = load_split(cfg)
    a = cfg["analytic"]
    size = a["nodes"]
    if size > ds.n:
        raise ConfigError(f"analytic.nodes={size} exceeds the {ds.n} rows of the dataset")
    rows = np.sort(np.random.default_rng(cfg["seed"]).choice(ds.n, size, replace=False))
    sub = ds.subset(rows)
    K = a["K"] if a["K"] is not None else _n_classes(ds)
    gcfg = graph_config(cfg)
    emb = embed(build_graph(sub.features, gcfg, node_ids=sub.ids), K, gcfg.laplacian_kind,
                a["skip_trivial"], a["diffusion_time"])
    dump_embedding(emb, out / "analytic_embedding.csv", out / "analytic_embedding.json")
    report = M.MetricsReport(metadata={"nodes": size, "K": K, "eigengap": emb.eigengap})
    labels = ds.labels[rows] if ds.labels is not None else None
    if labels is not None:
        pred = M.kmeans(emb.coords, ds.n_classes, restarts=cfg["metrics"]["kmeans_restarts"],
                        seed=cfg["seed"])
        report.nmi = M.nmi(labels, pred)
        report.acc = M.acc(labels, pred)
        report.orth_defect = M.orthogonality_defect(emb.coords)
    _write_json(out / "analytic_report.json", report.to_dict())
    if _plots(cfg):
        from .plotting import plot_points
        plot_points(emb.coords, labels, out / "analytic_embedding.png",
                    title="analytic embedding")
    print(report.table())
    return report


def cmd_eval(cfg, checkpoint=None) -> M.MetricsReport:
    """Metrics of a saved model on the test split of the configured dataset."""
    out = _out_dir(cfg)
    model, frame, _ = load_checkpoint(checkpoint or out / "checkpoint.json")
    want_K = cfg["train"]["K"]
    if want_K is not None and want_K != model.out_width:
        raise ConfigError(f"config asks for K={want_K} but the checkpoint outputs "
                          f"K={model.out_width}")
    _, train_ds, test_ds = load_split(cfg)
    if train_ds.d != model.in_width:
        raise SizeError(f"dataset has {train_ds.d} features, checkpoint expects "
                        f"{model.in_width}")
    if frame.anchor_ids.max() >= train_ds.n:
        raise SizeError("checkpoint anchors lie outside the train split")
    report = evaluate_model(model, frame, train_ds, test_ds, cfg)
    report.metadata["iterations"] = model.step_count
    _write_json(out / "eval_report.json", report.to_dict())
    print(report.table())
    return report


CURVE_COLUMNS = ("spectral_step", "iter", "feature_loss", "spectral_loss", "target_ms",
                 "frame_rolled", "tg_deviation", "align_rmse", "nmi_analytic", "acc_analytic",
                 "nmi_train", "acc_train", "nmi_val", "acc_val")


def curve_rows(history) -> list:
    """Joint-run history flattened to one dict per spectral step."""
    rows = []
    for rec in history:
        flat = {k: v for k, v in rec.items() if k != "metrics"}
        flat.update(rec.get("metrics", {}))
        rows.append({k: flat.get(k) for k in CURVE_COLUMNS})
    return rows


def tail_summary(rows, fraction=0.2) -> dict:
    """Statistics over the last ``fraction`` of spectral steps.

    NMI values are averaged over the evaluated steps; the spectral loss is
    summarized by its median, which is insensitive to single hard batches.
    """
    if not rows:
        return {}
    start = rows[-1]["spectral_step"] * (1.0 - fraction)
    tail = [r for r in rows if r["spectral_step"] > start]
    out = {"steps": len(tail),
           "spectral_loss": float(np.median([r["spectral_loss"] for r in tail])),
           "relative_spectral_loss": float(np.median(
               [r["spectral_loss"] / r["target_ms"] for r in tail]))}
    for key in ("nmi_analytic", "nmi_train", "nmi_val"):
        vals = [r[key] for r in tail if r[key] is not None]
        out[key] = float(np.mean(vals)) if vals else None
    return out


def _run_joint(cfg, jcfg, train_ds, test_ds, out, stem):
    res = train_joint(train_ds, jcfg, val_ds=test_ds)
    rows = curve_rows(res.history)
    _write_jsonl(out / f"{stem}_history.jsonl", res.history)
    _write_csv(out / f"{stem}_curves.csv", CURVE_COLUMNS,
               [[r[k] for k in CURVE_COLUMNS] for r in rows])
    return rows


def cmd_feature_change(cfg, ablate=False) -> dict:
    """Joint feature/spectral training, optionally paired with the ablation."""
    out = _out_dir(cfg)
    _, train_ds, test_ds = load_split(cfg)
    if test_ds.labels is None or train_ds.labels is None:
        raise PreconditionError("the feature-change experiment needs labels on both splits")
    jcfg = joint_config(cfg, _n_classes(train_ds))
    rows = _run_joint(cfg, jcfg, train_ds, test_ds, out, "joint")
    summary = {"aligned": tail_summary(rows)}
    ablated = None
    if ablate:
        ablated = _run_joint(cfg, replace(jcfg, align_features=False), train_ds, test_ds,
                             out, "joint_ablated")
        summary["ablated"] = tail_summary(ablated)
        a, b = summary["aligned"], summary["ablated"]
        summary["spectral_loss_ratio"] = b["spectral_loss"] / a["spectral_loss"]
    _write_json(out / "feature_change_report.json", summary)
    if _plots(cfg):
        from .plotting import plot_joint_curves
        plot_joint_curves(rows, out / "joint_curves.png", ablated)
    _print_summary(summary)
    return summary


def _print_summary(summary):
    print(f"{'run':<10}{'loss (median)':>16}{'rel. loss':>12}{'nmi val':>10}"
          f"{'nmi analytic':>14}")
    for name in ("aligned", "ablated"):
        if name not in summary:
            continue
        s = summary[name]
        nv = "-" if s.get("nmi_val") is None else f"{s['nmi_val']:.4f}"
        na = "-" if s.get("nmi_analytic") is None else f"{s['nmi_analytic']:.4f}"
        print(f"{name:<10}{s['spectral_loss']:>16.6g}{s['relative_spectral_loss']:>12.4g}"
              f"{nv:>10}{na:>14}")
    if "spectral_loss_ratio" in summary:
        print(f"ablated / aligned spectral loss: {summary['spectral_loss_ratio']:.3g}")


# ------------------------------------------------------------------ main


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON experiment config")
    common.add_argument("--seed", type=int, metavar="N", help="override the config seed")
    common.add_argument("--out", metavar="DIR", help="override the output directory")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a dotted config key (repeatable)")
    common.add_argument("--threads", type=int, default=1, metavar="N",
                        help="BLAS threads (default 1, which keeps runs byte-reproducible)")
    common.add_argument("--no-plots", action="store_true", help="skip PNG rendering")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    p = _Parser(prog="specalign", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="write dataset CSV and split")
    sub.add_parser("train", parents=[common], help="batch-aligned training")
    sub.add_parser("analytic", parents=[common], help="analytic embedding of a subsample")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", metavar="PATH",
                    help="checkpoint file (default: OUT/checkpoint.json)")
    fc = sub.add_parser("feature-change", parents=[common],
                        help="joint feature and spectral training")
    fc.add_argument("--ablate", action="store_true",
                    help="also run with feature re-registration disabled")
    return p


USAGE_ERRORS = (ConfigError, SizeError, ParseError, PreconditionError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides, args.seed, args.out)
        cfg["_no_plots"] = args.no_plots
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        with threadpool_limits(limits=args.threads):
            if args.command == "generate":
                cmd_generate(cfg)
            elif args.command == "train":
                cmd_train(cfg)
            elif args.command == "analytic":
                cmd_analytic(cfg)
            elif args.command == "eval":
                cmd_eval(cfg, args.checkpoint)
            else:
                cmd_feature_change(cfg, args.ablate)
    except USAGE_ERRORS as exc:
        print(f"specalign {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (SpecAlignError, OSError, FloatingPointError) as exc:
        print(f"specalign {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
