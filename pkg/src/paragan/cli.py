"""Command-line entry point.

Every command works inside a run directory ``$PARAGAN_RUNS_DIR/<name>``
(default ``./runs/<name>``), writes ``config.json`` and ``manifest.json``
there, and exits 0 on success, 1 on usage / configuration errors and 2 on
runtime failures.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import __version__
from .checkpoint import atomic_write_text
from .config import ConfigError, RunConfig, load_config, parse_value

log = logging.getLogger("paragan")

COMMANDS = ("gen-data", "train-aux", "train-paragan", "train-downstream", "sweep-alpha",
            "explain", "report")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def runs_root(arg: str | None = None) -> Path:
    return Path(arg or os.environ.get("PARAGAN_RUNS_DIR", "runs"))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="paragan", description="ParaGAN training, augmentation and explanation.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.add_argument("--name", help="run name (default: the command name)")
        sp.add_argument("--runs-dir", help="run root (default: $PARAGAN_RUNS_DIR or ./runs)")
        return sp

    sp = add("gen-data", "generate the toy shapes dataset")
    sp.add_argument("--out", help="dataset directory (default: <run>/data)")
    sp = add("train-aux", "train the hinge-loss auxiliary classifier")
    sp.add_argument("--data")
    sp = add("train-paragan", "train the distance-conditioned cycle GAN")
    sp.add_argument("--data")
    sp.add_argument("--aux-ckpt")
    sp = add("train-downstream", "train the downstream classifier over cfg.seeds")
    sp.add_argument("--data")
    sp.add_argument("--paragan-ckpt")
    sp.add_argument("--alpha", type=float)
    sp = add("sweep-alpha", "downstream training for several synthetic-loss weights")
    sp.add_argument("--data")
    sp.add_argument("--paragan-ckpt")
    sp.add_argument("--alphas", default="0.2,0.4,0.6,0.8,1.0")
    sp = add("explain", "class-difference maps, Grad-CAM and embedding export")
    sp.add_argument("--data")
    sp.add_argument("--paragan-ckpt")
    sp.add_argument("--clf-ckpt", help="downstream classifier (default: the auxiliary one)")
    sp.add_argument("--split", default="test")
    sp.add_argument("--max-maps", type=int, default=16)
    add("report", "regenerate report tables from run artifacts")
    return p


def _require(args, *keys) -> None:
    for k in keys:
        if getattr(args, k.replace("-", "_")) is None:
            raise UsageError(f"{args.command}: missing required option --{k}")


def _merged_config(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        overrides[k] = parse_value(k, v)
    if getattr(args, "alpha", None) is not None:
        overrides["alpha"] = args.alpha
    if args.config:
        return load_config(args.config, overrides)
    return RunConfig.from_dict(overrides)


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dataset_checksums(data_root) -> dict:
    if data_root is None:
        return {}
    man = Path(data_root) / "manifest.json"
    if not man.exists():
        return {"root": str(data_root)}
    return {"root": str(data_root), "manifest_sha256": _sha256_file(man)}


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _method_name(augmented: bool, ca: bool) -> str:
    if augmented:
        return "CA + ParaGAN" if ca else "ParaGAN"
    return "Conventional Augmentation (CA)" if ca else "Original"


def render_reports(run_dir: Path) -> list[Path]:
    """Rebuild ``reports/*.csv`` and ``reports/summary.txt`` from the
    result JSON files in ``run_dir/results`` (no retraining)."""
    from .downstream import (ALPHA_SWEEP_COLUMNS, TABLE1_COLUMNS, DownstreamResult, alpha_row,
                             table1_row, write_csv)

    results_dir = run_dir / "results"
    out: list[Path] = []
    lines = []
    table_rows = []
    for path in sorted(results_dir.glob("downstream_*.json")):
        d = json.loads(path.read_text())
        res = DownstreamResult.from_dict(d["result"])
        table_rows.append(table1_row(d["method"], res))
    if table_rows:
        out.append(write_csv(run_dir / "reports" / "table1.csv", TABLE1_COLUMNS, table_rows))
        lines.append("method | alpha | ACC | AUC")
        lines += [f"{r['method']} | {r['alpha']} | {r['acc']} | {r['auc']}" for r in table_rows]
    sweep = results_dir / "alpha_sweep.json"
    if sweep.exists():
        rows = [alpha_row(DownstreamResult.from_dict(d)) for d in json.loads(sweep.read_text())]
        out.append(write_csv(run_dir / "reports" / "alpha_sweep.csv", ALPHA_SWEEP_COLUMNS, rows))
        lines.append("")
        lines.append("alpha | ACC | AUC")
        lines += [f"{r['alpha']} | {r['acc']} | {r['auc']}" for r in rows]
    cdm = run_dir / "cdm_summary.json"
    if cdm.exists():
        s = json.loads(cdm.read_text())
        lines.append("")
        lines.append(f"CDM hole-mass fraction (Y, {s['split']}): {s.get('cdm_hole_fraction')}")
        lines.append(f"Grad-CAM hole-mass fraction (Y, {s['split']}): {s.get('gradcam_hole_fraction')}")
    if lines:
        summary = run_dir / "reports" / "summary.txt"
        summary.parent.mkdir(parents=True, exist_ok=True)
        summary.write_text("\n".join(lines) + "\n")
        out.append(summary)
    return out


def _cmd_gen_data(args, cfg, run_dir):
    from .dataset import generate_shapes_dataset, shape_spec_from_config

    out = Path(args.out) if args.out else run_dir / "data"
    generate_shapes_dataset(shape_spec_from_config(cfg), out)
    return out, [out / "manifest.json"]


def _cmd_train_aux(args, cfg, run_dir):
    from .dataset import load_split
    from .hyperplane import train_aux_classifier

    _require(args, "data")
    clf = train_aux_classifier(load_split(args.data, "train", cfg.channels),
                               load_split(args.data, "val", cfg.channels), cfg)
    ckpt = run_dir / "aux.ckpt"
    clf.save(ckpt, cfg.config_hash)
    return args.data, [ckpt, ckpt.with_suffix(".json")]


def _cmd_train_paragan(args, cfg, run_dir):
    from .trainer import train_paragan

    _require(args, "aux-ckpt", "data")
    ckpt, history = train_paragan(args.data, args.aux_ckpt, cfg, run_dir)
    return args.data, [ckpt, history]


def _cmd_train_downstream(args, cfg, run_dir):
    from .downstream import train_downstream
    from .hyperplane import HyperplaneClassifier

    _require(args, "data")
    net, res = train_downstream(args.data, args.paragan_ckpt, cfg.alpha, cfg)
    method = _method_name(res.augmented, cfg.ca)
    tag = f"{'aug' if res.augmented else 'real'}_{'ca' if cfg.ca else 'noca'}_a{cfg.alpha:g}"
    path = run_dir / "results" / f"downstream_{tag}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, json.dumps({"method": method, "result": res.to_dict()}, indent=1))
    clf_ckpt = run_dir / f"classifier_{tag}.ckpt"
    HyperplaneClassifier(net, cfg.image_size).save(clf_ckpt, cfg.config_hash)
    return args.data, [path, clf_ckpt, *render_reports(run_dir)]


def _parse_alphas(text: str) -> list[float]:
    try:
        alphas = [float(a) for a in text.split(",") if a.strip()]
    except ValueError:
        raise UsageError(f"--alphas must be a comma-separated list of numbers, got {text!r}") from None
    if not alphas:
        raise UsageError("--alphas is empty")
    return alphas


def _cmd_sweep_alpha(args, cfg, run_dir):
    from .downstream import sweep_alpha

    _require(args, "data", "paragan-ckpt")
    alphas = _parse_alphas(args.alphas)
    results = sweep_alpha(args.data, args.paragan_ckpt, alphas, cfg)
    path = run_dir / "results" / "alpha_sweep.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, json.dumps([r.to_dict() for r in results], indent=1))
    return args.data, [path, *render_reports(run_dir)]


def _cmd_explain(args, cfg, run_dir):
    from .dataset import hole_mask, load_manifest, load_split
    from .explain import (class_difference_map, export_embeddings, grad_cam,
                          mask_mass_fraction)
    from .hyperplane import HyperplaneClassifier
    from .trainer import ModelBundle

    _require(args, "data", "paragan-ckpt")
    bundle = ModelBundle.load(args.paragan_ckpt)
    clf = HyperplaneClassifier.load(args.clf_ckpt) if args.clf_ckpt else bundle.c_aux
    samples = load_split(args.data, args.split, cfg.channels)
    try:
        records = {r["path"]: r for r in load_manifest(args.data)["files"]}
    except Exception:
        records = {}
    maps_dir = run_dir / "heatmaps"
    artifacts = []
    cdm_fracs, cam_fracs = [], []
    for i, s in enumerate(samples):
        cdm = class_difference_map(bundle, s)
        cam = grad_cam(clf, s.image, s.name)
        if i < args.max_maps or (s.domain == "Y" and len(cdm_fracs) < args.max_maps):
            stem = s.name.replace("/", "_").rsplit(".", 1)[0]
            artifacts.append(cdm.save(maps_dir / f"{stem}_cdm.png"))
            artifacts.append(cam.save(maps_dir / f"{stem}_gradcam.png"))
        rec = records.get(s.name)
        if s.domain == "Y" and rec is not None:
            mask = hole_mask(rec, cfg.image_size, dilation=HOLE_DILATION)
            cdm_fracs.append(mask_mass_fraction(cdm.values, mask))
            cam_fracs.append(mask_mass_fraction(cam.values, mask))
    rng = np.random.default_rng(cfg.seed)
    from .downstream import DistanceSampler, augment_batch

    sampler = DistanceSampler.from_samples(bundle.c_aux, samples)
    synthetics = augment_batch(bundle, samples, sampler, rng).synthetic
    emb = export_embeddings(clf, samples, synthetics).to_csv(run_dir / "embeddings.csv")
    summary = {
        "split": args.split,
        "n_y_with_masks": len(cdm_fracs),
        "hole_dilation": HOLE_DILATION,
        "cdm_hole_fraction": float(np.mean(cdm_fracs)) if cdm_fracs else None,
        "gradcam_hole_fraction": float(np.mean(cam_fracs)) if cam_fracs else None,
    }
    path = run_dir / "cdm_summary.json"
    atomic_write_text(path, json.dumps(summary, indent=1))
    return args.data, [path, emb, *artifacts, *render_reports(run_dir)]


HOLE_DILATION = 2.0


def _cmd_report(args, cfg, run_dir):
    return None, render_reports(run_dir)


HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train-aux": _cmd_train_aux,
    "train-paragan": _cmd_train_paragan,
    "train-downstream": _cmd_train_downstream,
    "sweep-alpha": _cmd_sweep_alpha,
    "explain": _cmd_explain,
    "report": _cmd_report,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("no command given")
        cfg = _merged_config(args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return 1

    run_dir = runs_root(args.runs_dir) / (args.name or args.command)
    if args.command == "report" and not run_dir.is_dir():
        print(f"error: run directory {run_dir} does not exist", file=sys.stderr)
        return 2
    run_dir.mkdir(parents=True, exist_ok=True)
    started = _now()
    try:
        with FileLock(str(run_dir / ".lock"), timeout=0):
            if args.command != "report":
                atomic_write_text(run_dir / "config.json", json.dumps(
                    {"config": cfg.to_dict(), "config_hash": cfg.config_hash}, indent=1, sort_keys=True))
            data_root, artifacts = HANDLERS[args.command](args, cfg, run_dir)
            manifest = {
                "command": args.command,
                "argv": list(argv) if argv is not None else sys.argv[1:],
                "config_hash": cfg.config_hash,
                "dataset": _dataset_checksums(data_root),
                "seeds": {"seed": cfg.seed, "data_seed": cfg.data_seed, "seeds": cfg.seeds},
                "started": started,
                "finished": _now(),
                "artifacts": sorted({str(a) for a in artifacts if Path(a).exists()}),
                "version": __version__,
            }
            atomic_write_text(run_dir / "manifest.json", json.dumps(manifest, indent=1))
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Timeout:
        print(f"error: run directory {run_dir} is locked by another process", file=sys.stderr)
        return 2
    except Exception as e:
        log.debug("command failed", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    logging.basicConfig(level=os.environ.get("PARAGAN_LOG", "WARNING"),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    sys.exit(run())
