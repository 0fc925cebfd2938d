"""``pixcue`` command-line entry point."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .formats import FormatError, atomic_write, load_image, load_mask, load_probabilities, save_mask, save_probabilities, save_pgm
from .forward_model import NoiseSpec, simulate_acquisition
from .harness import EXPERIMENTS, Run, build_dataset, load_config, obtain_checkpoint, run_experiments
from .quantizer import expectation_image
from .recon_net import forward
from .uncertainty import (
    McConfig,
    error_map,
    exact_variance_map,
    fast_variance_map,
    mc_dropout_variance,
    mc_mean_distribution_variance,
)

log = logging.getLogger("pixcue")

METHODS = ("pixcue-exact", "pixcue-fast", "mc", "mc-meandist")


class CheckFailed(RuntimeError):
    pass


def _path(cfg: dict, key: str, override, base: Path | None, required: bool = True) -> Path | None:
    value = override if override is not None else cfg.get(key)
    if value is None:
        if required:
            raise ValueError(f"missing input {key!r} (set it in the config or pass --{key.replace('_', '-')})")
        return None
    p = Path(value)
    if override is None and base is not None and not p.is_absolute():
        p = base / p
    if not p.exists():
        raise FileNotFoundError(f"{key}: {p} does not exist")
    return p


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args, cfg) -> int:
    run = Run(args.out, "simulate", cfg)
    data = build_dataset(cfg)
    sigma = float(cfg.get("noise_sigma", 0.0))
    save_mask(run.path("mask.mask"), data.mask)
    for i, (spec, img) in enumerate(zip(data.specs, data.images)):
        run.image(f"phantom_{i:03d}.pxi", np.real(img), complex_valued=False)
        noise = NoiseSpec(sigma, data.seeds[i]) if sigma > 0 else None
        run.image(f"kspace_{i:03d}.pxi", simulate_acquisition(img, data.mask, noise), complex_valued=True)
    run.json("phantoms.json", [s.to_dict() for s in data.specs])
    if args.check:
        for i, img in enumerate(data.images):
            if not np.allclose(load_image(args.out / f"phantom_{i:03d}.pxi"), np.real(img), atol=1e-6):
                raise CheckFailed(f"phantom {i} did not survive the round trip")
    run.finish()
    print(f"wrote {len(data.images)} phantoms to {args.out}")
    return 0


def cmd_train(args, cfg) -> int:
    run = Run(args.out, "train", cfg)
    data = run.timed("dataset", build_dataset, cfg)
    ckpt = run.timed("train", obtain_checkpoint, {**cfg, "checkpoint": None}, data)
    save_checkpoint(ckpt, run.path("checkpoint.pxc"))
    rows = [{"epoch": e, "train_loss": t, "val_loss": v} for e, (t, v) in enumerate(zip(ckpt.train_history, ckpt.val_history))]
    run.csv("loss_history.csv", ["epoch", "train_loss", "val_loss"], rows)
    run.extra["best_epoch"] = ckpt.best_epoch
    run.extra["best_val_loss"] = ckpt.best_val_loss
    if args.check and ckpt.best_val_loss != min(ckpt.val_history):
        raise CheckFailed("best validation loss is not the minimum of the history")
    run.finish()
    print(f"best validation loss {ckpt.best_val_loss:.4f} at epoch {ckpt.best_epoch}")
    return 0


def _network_inputs(args, cfg):
    ckpt = load_checkpoint(_path(cfg, "checkpoint", args.checkpoint, args.config_dir))
    kspace = load_image(_path(cfg, "kspace", args.kspace, args.config_dir)).astype(np.complex128)
    mask = load_mask(_path(cfg, "mask", args.mask, args.config_dir))
    return ckpt, kspace, mask


def cmd_reconstruct(args, cfg) -> int:
    run = Run(args.out, "reconstruct", cfg)
    ckpt, kspace, mask = _network_inputs(args, cfg)
    p = run.timed("forward", forward, kspace, mask, ckpt.net)
    run.image("recon.pxi", expectation_image(p), complex_valued=False)
    save_probabilities(run.path("probabilities.pxp"), p)
    if args.check:
        sums = load_probabilities(args.out / "probabilities.pxp").astype(np.float64).sum(axis=-1)
        if np.max(np.abs(sums - 1)) > 1e-5:
            raise CheckFailed("stored probabilities do not sum to one")
    run.finish()
    print(f"wrote recon.pxi and probabilities.pxp to {args.out}")
    return 0


def cmd_uncertainty(args, cfg) -> int:
    method = args.method or cfg.get("method", "pixcue-exact")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    run = Run(args.out, f"uncertainty {method}", cfg)
    if method.startswith("pixcue"):
        prob_path = _path(cfg, "probabilities", args.probabilities, args.config_dir, required=False)
        if prob_path is not None:
            p = load_probabilities(prob_path).astype(np.float64)
        else:
            ckpt, kspace, mask = _network_inputs(args, cfg)
            p = forward(kspace, mask, ckpt.net)
        fn = exact_variance_map if method == "pixcue-exact" else fast_variance_map
        u = run.timed(method, fn, p)
        recon = expectation_image(p)
    else:
        ckpt, kspace, mask = _network_inputs(args, cfg)
        mc = cfg.get("mc", {})
        mcc = McConfig(int(mc.get("passes", 50)), float(mc.get("dropout_fraction", 0.2)), int(mc.get("seed", cfg["seed"])))
        fn = mc_dropout_variance if method == "mc" else mc_mean_distribution_variance
        u = run.timed(method, fn, kspace, mask, ckpt.net, mcc)
        recon = expectation_image(forward(kspace, mask, ckpt.net))
    run.image("uncertainty.pxi", u, complex_valued=False)
    ref_path = _path(cfg, "reference", args.reference, args.config_dir, required=False)
    if ref_path is not None:
        err = error_map(recon, np.abs(load_image(ref_path)))
        r, c = np.indices(u.shape)
        rows = [
            {"row": int(a), "col": int(b), "uncertainty": float(x), "abs_error": float(y)}
            for a, b, x, y in zip(r.ravel(), c.ravel(), u.ravel(), err.ravel())
        ]
        run.csv("pairs.csv", ["row", "col", "uncertainty", "abs_error"], rows)
    if args.check and not (np.all(np.isfinite(u)) and np.all(u >= 0)):
        raise CheckFailed("uncertainty map has negative or non-finite values")
    run.finish()
    print(f"{method}: mean uncertainty {float(np.mean(u)):.6g}")
    return 0


def cmd_experiment(args, cfg) -> int:
    ids = args.ids or cfg.get("experiment") or list(EXPERIMENTS)
    if isinstance(ids, str):
        ids = [ids]
    if ids == ["all"]:
        ids = list(EXPERIMENTS)
    summary, ok = run_experiments(list(ids), cfg, args.out)
    for e, s in summary.items():
        for name, c in s["checks"].items():
            print(f"{'PASS' if c['passed'] else 'FAIL'} {e}.{name}: {c['rule']} (value {c['value']})")
    if args.check and not ok:
        return 1
    return 0


def summarize_report(report_dir: Path) -> tuple[str, list[Path], list[Path]]:
    if not report_dir.is_dir():
        raise FileNotFoundError(f"report directory {report_dir} does not exist")
    csvs = sorted(report_dir.rglob("*.csv"))
    maps = sorted(p for p in report_dir.rglob("*.pxi"))
    if not csvs and not maps:
        raise ValueError(f"{report_dir} contains no report outputs")
    lines = [f"report: {report_dir}", f"csv files: {len(csvs)}"]
    for p in csvs:
        with open(p, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, [])
            n = sum(1 for _ in reader)
        lines.append(f"  {p.relative_to(report_dir)}: {n} rows; columns {', '.join(header)}")
    for p in sorted(report_dir.rglob("summary.json")):
        checks = json.loads(p.read_text()).get("checks", {})
        for name, c in checks.items():
            lines.append(f"  {'PASS' if c['passed'] else 'FAIL'} {p.parent.relative_to(report_dir) / name}: {c['rule']}")
    lines.append(f"maps: {len(maps)}")
    return "\n".join(lines) + "\n", csvs, maps


def cmd_report(args, cfg) -> int:
    target = args.report_dir
    if target is None:
        raise ValueError("report needs the report directory as an argument")
    text, _, maps = summarize_report(Path(target))
    print(text, end="")
    if args.out is not None:
        run = Run(args.out, "report", cfg)
        atomic_write(run.path("report.txt"), text)
        for p in maps:
            img = load_image(p)
            if np.iscomplexobj(img):
                continue
            rel = p.relative_to(Path(target)).with_suffix(".pgm")
            save_pgm(run.path(str(rel)), img)
        run.finish()
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "uncertainty": cmd_uncertainty,
    "experiment": cmd_experiment,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pixcue", description=__doc__)
    parser.add_argument("--version", action="version", version=f"pixcue {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", type=Path, required=out_required, help="output directory")
        p.add_argument("--check", action="store_true", help="exit nonzero when a check fails")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("simulate", help="generate phantoms, k-space and a mask"))
    common(sub.add_parser("train", help="train a checkpoint"))
    helps = {
        "reconstruct": "reconstruct k-space into an image and class probabilities",
        "uncertainty": "compute an uncertainty map",
    }
    for name, text in helps.items():
        p = common(sub.add_parser(name, help=text))
        p.add_argument("--checkpoint", help=".pxc checkpoint")
        p.add_argument("--kspace", help="undersampled k-space (.pxi)")
        p.add_argument("--mask", help="sampling mask (.mask)")
        if name == "uncertainty":
            p.add_argument("--method", choices=METHODS)
            p.add_argument("--probabilities", help="probability volume (.pxp) for the pixcue methods")
            p.add_argument("--reference", help="reference image (.pxi); also writes pairs.csv")
    p = common(sub.add_parser("experiment", help="run exp1..exp6 (or all)"))
    p.add_argument("ids", nargs="*", help="experiment ids; default all")
    p = common(sub.add_parser("report", help="summarize a report directory"), out_required=False)
    p.add_argument("report_dir", nargs="?")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    torch.set_num_threads(1)
    for attr in ("checkpoint", "kspace", "mask", "probabilities", "reference", "method", "ids", "report_dir"):
        if not hasattr(args, attr):
            setattr(args, attr, None)
    args.config_dir = args.config.parent if args.config is not None else None
    try:
        cfg = load_config(args.config, args.seed)
        return COMMANDS[args.command](args, cfg)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
