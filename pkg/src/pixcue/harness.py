"""Configuration, dataset assembly, run manifests and the six experiments.

Every experiment works on the same synthetic phantom set: ``count`` random
phantoms cycling through the contrast profiles, split into training and
validation sets by the training config's seed. Experiments evaluate the
validation phantoms only.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import platform
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .analysis import exponential_fit, foreground_mask, linear_fit, nmse, pearson, psnr, sample_joint, ssim
from .checkpoint import load_checkpoint, save_checkpoint
from .formats import atomic_write, save_image, save_json
from .forward_model import (
    RNG_ALGORITHM,
    NoiseSpec,
    PhantomSpec,
    SamplingMask,
    add_complex_noise,
    dft2_unitary,
    generate_phantom,
    make_mask,
    random_anomaly,
    random_phantom_spec,
    undersample,
    zero_filled,
)
from .quantizer import expectation_image
from .recon_net import PixCueNet, forward
from .training import Checkpoint, TrainingConfig, split_indices, train
from .uncertainty import (
    McConfig,
    error_map,
    exact_variance_map,
    fast_variance_map,
    mc_dropout_variance,
    mc_mean_distribution_variance,
)

log = logging.getLogger(__name__)

EXPERIMENTS = ("exp1", "exp2", "exp3", "exp4", "exp5", "exp6")

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "size": 64,
    "phantoms": {"count": 50, "profiles": ["t1", "t2", "flair", "pd"], "texture": 0.15},
    "mask": {"kind": "random", "accel": 4, "center_fraction": 0.08, "seed": 0},
    "stress_mask": {"kind": "random", "accel": 6, "center_fraction": 0.06, "seed": 0},
    "noise_sigmas": [0.0, 0.005, 0.01, 0.02],
    "noise_pairs": 2,
    "training": {"learning_rate": 1e-3, "epochs": 30},
    "checkpoint": None,
    "mc": {"passes": 50, "dropout_fraction": 0.2},
    "mc_checkpoint": None,
    "anomaly": {"cases": 10, "intensity": 0.95, "area_fraction": 0.012},
    "joint_samples": 100,
    "foreground_threshold": 0.05,
}

METRIC_COLUMNS = [
    "id",
    "contrast_profile",
    "accel",
    "noise_sigma",
    "nmse",
    "psnr_db",
    "ssim",
    "mean_uncertainty_pixcue_exact",
    "mean_uncertainty_pixcue_fast",
    "mean_uncertainty_mc",
]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(raw: dict | None = None, seed: int | None = None, defaults: dict = DEFAULT_CONFIG) -> dict:
    """Overlay ``raw`` on the defaults; ``seed`` (from the CLI) replaces the master seed."""
    cfg = _merge(defaults, raw or {})
    if seed is not None:
        cfg["seed"] = int(seed)
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ValueError(f"seed must be a non-negative integer, got {cfg['seed']!r}")
    return cfg


def load_config(path, seed: int | None = None) -> dict:
    raw = {} if path is None else json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError("config file must hold a JSON object")
    return resolve_config(raw, seed)


def training_config(cfg: dict, **overrides) -> TrainingConfig:
    d = {"seed": cfg["seed"], **cfg.get("training", {}), **overrides}
    return TrainingConfig.from_dict(d)


def mc_config(cfg: dict, image_seed: int = 0) -> McConfig:
    mc = cfg["mc"]
    return McConfig(int(mc["passes"]), float(mc["dropout_fraction"]), int(mc.get("seed", cfg["seed"])) + image_seed)


def mask_from(spec: dict, n: int) -> SamplingMask:
    return make_mask(spec["kind"], n, float(spec["accel"]), float(spec["center_fraction"]), int(spec.get("seed", 0)))


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    specs: list[PhantomSpec]
    seeds: list[int]
    images: list[np.ndarray]
    mask: SamplingMask
    train_idx: list[int]
    val_idx: list[int]

    def profile(self, i: int) -> str:
        return self.specs[i].contrast_profile


def phantom_seed(master: int, index: int) -> int:
    return master * 100_000 + index


def build_specs(cfg: dict) -> tuple[list[PhantomSpec], list[int]]:
    """Explicit ``phantoms.specs`` if given, otherwise seeded random phantoms."""
    ph = cfg["phantoms"]
    if "specs" in ph:
        specs = [PhantomSpec.from_dict(d) for d in ph["specs"]]
        return specs, [phantom_seed(cfg["seed"], i) for i in range(len(specs))]
    profiles = ph["profiles"]
    seeds = [phantom_seed(cfg["seed"], i) for i in range(int(ph["count"]))]
    specs = [
        random_phantom_spec(cfg["size"], s, profiles[i % len(profiles)], float(ph.get("texture", 0.15)))
        for i, s in enumerate(seeds)
    ]
    return specs, seeds


def build_dataset(cfg: dict) -> Dataset:
    specs, seeds = build_specs(cfg)
    images = [generate_phantom(s, seed) for s, seed in zip(specs, seeds)]
    tc = training_config(cfg)
    tr, val = split_indices(len(images), tc.validation_fraction, tc.seed)
    return Dataset(specs, seeds, images, mask_from(cfg["mask"], cfg["size"]), tr, val)


# ---------------------------------------------------------------------------
# run bookkeeping
# ---------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Tracks emitted files and timings; writes the manifest last."""

    def __init__(self, out_dir, command: str, cfg: dict):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.files: list[Path] = []
        self.timings: dict[str, float] = {}
        self.extra: dict = {}
        self._t0 = time.perf_counter()

    def path(self, rel: str) -> Path:
        p = self.out / rel
        if p not in self.files:
            self.files.append(p)
        return p

    def image(self, rel: str, arr, complex_valued: bool | None = None) -> Path:
        return save_image(self.path(rel), arr, complex_valued)

    def json(self, rel: str, obj) -> Path:
        return save_json(self.path(rel), obj)

    def csv(self, rel: str, columns: list[str], rows: list[dict]) -> Path:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in columns})
        return atomic_write(self.path(rel), buf.getvalue())

    def timed(self, name: str, fn: Callable, *args, **kwargs):
        t = time.perf_counter()
        result = fn(*args, **kwargs)
        self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t
        return result

    def finish(self) -> Path:
        self.timings["total_seconds"] = time.perf_counter() - self._t0
        manifest = {
            "tool": "pixcue",
            "version": __version__,
            "command": self.command,
            "config": self.cfg,
            "seeds": {"master": self.cfg.get("seed"), "rng": RNG_ALGORITHM},
            "python": platform.python_version(),
            "files": {str(p.relative_to(self.out)): sha256_file(p) for p in self.files},
            "timings": self.timings,
            **self.extra,
        }
        return save_json(self.out / "manifest.json", manifest)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return v


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def obtain_checkpoint(cfg: dict, data: Dataset, key: str = "checkpoint", **overrides) -> Checkpoint:
    """Load ``cfg[key]`` when set, otherwise train on ``data`` with ``overrides``."""
    if cfg.get(key):
        return load_checkpoint(cfg[key])
    tc = training_config(cfg, **overrides)
    log.info("training %s (%d samples, %d epochs)", key, len(data.images), tc.epochs)
    return train([(img, data.mask) for img in data.images], tc, mask_spec=dict(cfg["mask"]))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def noise_seed(master: int, index: int, rep: int) -> int:
    return master * 1_000_000 + index * 100 + rep


def acquisitions(image: np.ndarray, mask: SamplingMask, sigma: float, seeds: list[int]) -> list[np.ndarray]:
    """Undersampled k-space realizations.

    With noise, each seed contributes an antithetic pair (k + z, k - z); the
    pair mean cancels the first-order effect of the particular draw. The same
    seeds at different sigmas give proportional draws.
    """
    k = dft2_unitary(image)
    if sigma == 0:
        return [undersample(k, mask)]
    out = []
    for s in seeds:
        z = add_complex_noise(np.zeros_like(k), NoiseSpec(sigma, s))
        out += [undersample(k + z, mask), undersample(k - z, mask)]
    return out


@dataclass
class Evaluation:
    recon: np.ndarray
    probs: np.ndarray
    u_exact: np.ndarray
    u_fast: np.ndarray
    reference: np.ndarray
    foreground: np.ndarray
    metrics: dict

    def row(self, **ids) -> dict:
        return {**ids, **self.metrics, "mean_uncertainty_mc": ""}


def evaluate(net: PixCueNet, image, mask: SamplingMask, sigma: float, seeds: list[int], fg_threshold: float) -> Evaluation:
    """Metrics and mean foreground uncertainties averaged over realizations.

    The returned maps come from the first realization.
    """
    reference = np.abs(image)
    fg = foreground_mask(reference, fg_threshold)
    acc = {k: [] for k in ("nmse", "psnr_db", "ssim", "mean_uncertainty_pixcue_exact", "mean_uncertainty_pixcue_fast")}
    first = None
    for k in acquisitions(image, mask, sigma, seeds):
        p = forward(k, mask, net)
        recon = expectation_image(p)
        ue, uf = exact_variance_map(p), fast_variance_map(p)
        acc["nmse"].append(nmse(recon, reference))
        acc["psnr_db"].append(psnr(recon, reference))
        acc["ssim"].append(ssim(recon, reference))
        acc["mean_uncertainty_pixcue_exact"].append(float(ue[fg].mean()))
        acc["mean_uncertainty_pixcue_fast"].append(float(uf[fg].mean()))
        if first is None:
            first = (recon, p, ue, uf)
    metrics = {k: float(np.mean(v)) for k, v in acc.items()}
    return Evaluation(first[0], first[1], first[2], first[3], reference, fg, metrics)


def _check(value, passed: bool, rule: str) -> dict:
    return {"value": value, "rule": rule, "passed": bool(passed)}


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass
class Context:
    cfg: dict
    data: Dataset
    run: Run
    checkpoint: Checkpoint | None = None
    mc_checkpoint: Checkpoint | None = None

    @property
    def net(self) -> PixCueNet:
        if self.checkpoint is None:
            self.checkpoint = self.run.timed(
                "train_standard", obtain_checkpoint, self.cfg, self.data, "checkpoint", dropout_fraction=0.0
            )
        return self.checkpoint.net

    @property
    def mc_net(self) -> PixCueNet:
        if self.mc_checkpoint is None:
            frac = float(self.cfg["mc"]["dropout_fraction"])
            self.mc_checkpoint = self.run.timed(
                "train_mc", obtain_checkpoint, self.cfg, self.data, "mc_checkpoint", dropout_fraction=frac
            )
        return self.mc_checkpoint.net

    @property
    def fg_threshold(self) -> float:
        return float(self.cfg["foreground_threshold"])

    def seeds_for(self, index: int) -> list[int]:
        return [noise_seed(self.cfg["seed"], index, r) for r in range(int(self.cfg["noise_pairs"]))]

    def ids(self, i: int, mask: SamplingMask, sigma: float) -> dict:
        return {"id": i, "contrast_profile": self.data.profile(i), "accel": mask.acceleration, "noise_sigma": sigma}


def exp1(ctx: Context, prefix: str) -> dict:
    """Reconstruction at the training mask; uncertainty vs absolute error."""
    run, data, net = ctx.run, ctx.data, ctx.net
    rows, corr = [], []
    nmse_zf = []
    for i in data.val_idx:
        ev = run.timed("evaluate", evaluate, net, data.images[i], data.mask, 0.0, [], ctx.fg_threshold)
        err = error_map(ev.recon, ev.reference)
        r = pearson(ev.u_exact[ev.foreground], err[ev.foreground])
        zf = np.abs(zero_filled(undersample(dft2_unitary(data.images[i]), data.mask)))
        nmse_zf.append(nmse(zf, ev.reference))
        rows.append(ev.row(**ctx.ids(i, data.mask, 0.0)))
        corr.append({"id": i, "pearson_uncertainty_error": r, "nmse_zero_filled": nmse_zf[-1], "nmse": ev.metrics["nmse"]})
        run.image(f"{prefix}recon_{i:03d}.pxi", ev.recon)
        run.image(f"{prefix}uncertainty_exact_{i:03d}.pxi", ev.u_exact)
        run.image(f"{prefix}uncertainty_fast_{i:03d}.pxi", ev.u_fast)
        run.image(f"{prefix}error_{i:03d}.pxi", err)
    run.csv(f"{prefix}metrics.csv", METRIC_COLUMNS, rows)
    run.csv(f"{prefix}correspondence.csv", ["id", "pearson_uncertainty_error", "nmse", "nmse_zero_filled"], corr)
    mean_nmse = float(np.mean([r["nmse"] for r in rows]))
    mean_zf = float(np.mean(nmse_zf))
    mean_r = float(np.mean([c["pearson_uncertainty_error"] for c in corr]))
    return {
        "mean_nmse": mean_nmse,
        "mean_nmse_zero_filled": mean_zf,
        "mean_pearson_uncertainty_error": mean_r,
        "checks": {
            "recon_beats_zero_filled": _check([mean_nmse, mean_zf], mean_nmse < mean_zf, "mean NMSE recon < zero-filled"),
            "uncertainty_tracks_error": _check(mean_r, mean_r > 0.3, "mean foreground Pearson r > 0.3"),
        },
    }


def exp2(ctx: Context, prefix: str) -> dict:
    """Noise sweep on the training mask."""
    run, data, net = ctx.run, ctx.data, ctx.net
    sigmas = [float(s) for s in ctx.cfg["noise_sigmas"]]
    rows = []
    for i in data.val_idx:
        for s in sigmas:
            ev = run.timed("evaluate", evaluate, net, data.images[i], data.mask, s, ctx.seeds_for(i), ctx.fg_threshold)
            rows.append(ev.row(**ctx.ids(i, data.mask, s)))
            if i == data.val_idx[0]:
                run.image(f"{prefix}uncertainty_exact_{i:03d}_sigma{s:g}.pxi", ev.u_exact)
    run.csv(f"{prefix}metrics.csv", METRIC_COLUMNS, rows)
    means = [float(np.mean([r["mean_uncertainty_pixcue_exact"] for r in rows if r["noise_sigma"] == s])) for s in sigmas]
    ok = all(b >= a for a, b in zip(means, means[1:]))
    return {
        "noise_sigmas": sigmas,
        "mean_uncertainty_by_sigma": means,
        "checks": {"uncertainty_non_decreasing_in_noise": _check(means, ok, "non-decreasing across sigmas")},
    }


def exp3(ctx: Context, prefix: str) -> dict:
    """Training mask versus a sparser mask with a smaller centre."""
    run, data, net = ctx.run, ctx.data, ctx.net
    stress = mask_from(ctx.cfg["stress_mask"], ctx.cfg["size"])
    rows = []
    by_mask = {"train": [], "stress": []}
    for i in data.val_idx:
        for name, m in (("train", data.mask), ("stress", stress)):
            ev = run.timed("evaluate", evaluate, net, data.images[i], m, 0.0, [], ctx.fg_threshold)
            rows.append(ev.row(**ctx.ids(i, m, 0.0)))
            by_mask[name].append(ev.metrics["mean_uncertainty_pixcue_exact"])
            if name == "stress":
                run.image(f"{prefix}recon_{i:03d}.pxi", ev.recon)
                run.image(f"{prefix}uncertainty_exact_{i:03d}.pxi", ev.u_exact)
                run.image(f"{prefix}error_{i:03d}.pxi", error_map(ev.recon, ev.reference))
    run.csv(f"{prefix}metrics.csv", METRIC_COLUMNS, rows)
    a, b = float(np.mean(by_mask["train"])), float(np.mean(by_mask["stress"]))
    return {
        "train_mask_accel": data.mask.acceleration,
        "stress_mask_accel": stress.acceleration,
        "mean_uncertainty_train_mask": a,
        "mean_uncertainty_stress_mask": b,
        "checks": {"uncertainty_rises_with_acceleration": _check([a, b], b > a, "stress mask mean > training mask mean")},
    }


def exp4(ctx: Context, prefix: str) -> dict:
    """Withheld synthetic anomaly: uncertainty inside versus the rest of the tissue."""
    run, data, net, cfg = ctx.run, ctx.data, ctx.net, ctx.cfg
    an_cfg = cfg["anomaly"]
    cases = data.val_idx[: int(an_cfg["cases"])]
    rows, metric_rows = [], []
    for t, i in enumerate(cases):
        anomaly = random_anomaly(
            data.specs[i], cfg["seed"] * 1000 + 100 + t, float(an_cfg["intensity"]), float(an_cfg["area_fraction"])
        )
        image = generate_phantom(dataclasses.replace(data.specs[i], anomaly=anomaly), data.seeds[i])
        ev = run.timed("evaluate", evaluate, net, image, data.mask, 0.0, [], ctx.fg_threshold)
        inside = anomaly.inside(cfg["size"])
        outside = ev.foreground & ~inside
        u_in, u_out = float(ev.u_exact[inside].mean()), float(ev.u_exact[outside].mean())
        rows.append({"id": i, "contrast_profile": data.profile(i), "mean_inside": u_in, "mean_outside": u_out,
                     "exceeds": int(u_in > u_out)})
        metric_rows.append(ev.row(**ctx.ids(i, data.mask, 0.0)))
        run.image(f"{prefix}phantom_{i:03d}.pxi", np.real(image))
        run.image(f"{prefix}recon_{i:03d}.pxi", ev.recon)
        run.image(f"{prefix}uncertainty_exact_{i:03d}.pxi", ev.u_exact)
        run.image(f"{prefix}error_{i:03d}.pxi", error_map(ev.recon, ev.reference))
    run.csv(f"{prefix}anomaly.csv", ["id", "contrast_profile", "mean_inside", "mean_outside", "exceeds"], rows)
    run.csv(f"{prefix}metrics.csv", METRIC_COLUMNS, metric_rows)
    wins = sum(r["exceeds"] for r in rows)
    need = math.ceil(0.8 * len(rows))
    return {
        "cases": len(rows),
        "cases_exceeding": wins,
        "checks": {"anomaly_more_uncertain": _check(wins, wins >= need, f">= {need} of {len(rows)} cases")},
    }


def exp5(ctx: Context, prefix: str) -> dict:
    """PixCUE versus MC dropout on one validation image, on the dropout-trained network."""
    run, data, cfg = ctx.run, ctx.data, ctx.cfg
    net = ctx.mc_net
    i = data.val_idx[0]
    mc = mc_config(cfg, i)
    y_u = undersample(dft2_unitary(data.images[i]), data.mask)
    reference = np.abs(data.images[i])
    fg = foreground_mask(reference, ctx.fg_threshold)

    t0 = time.perf_counter()
    p = forward(y_u, data.mask, net)
    u_pix = exact_variance_map(p)
    t_pix = time.perf_counter() - t0
    t0 = time.perf_counter()
    u_mean = mc_mean_distribution_variance(y_u, data.mask, net, mc)
    t_mean = time.perf_counter() - t0
    t0 = time.perf_counter()
    u_passvar = mc_dropout_variance(y_u, data.mask, net, mc)
    t_passvar = time.perf_counter() - t0

    n = int(cfg["joint_samples"])
    joint = sample_joint(u_pix, u_mean, n, cfg["seed"] + i, fg)
    rr, cc = joint[:, 0].astype(int), joint[:, 1].astype(int)
    rows = [
        {"row": int(r), "col": int(c), "pixcue_exact": float(a), "mc_meandist": float(b), "mc_passvar": float(u_passvar[r, c])}
        for r, c, a, b in zip(rr, cc, joint[:, 2], joint[:, 3])
    ]
    run.csv(f"{prefix}joint.csv", ["row", "col", "pixcue_exact", "mc_meandist", "mc_passvar"], rows)
    run.image(f"{prefix}uncertainty_pixcue_{i:03d}.pxi", u_pix)
    run.image(f"{prefix}uncertainty_mc_meandist_{i:03d}.pxi", u_mean)
    run.image(f"{prefix}uncertainty_mc_passvar_{i:03d}.pxi", u_passvar)
    recon = expectation_image(p)
    run.csv(
        f"{prefix}metrics.csv",
        METRIC_COLUMNS,
        [{**ctx.ids(i, data.mask, 0.0), "nmse": nmse(recon, reference), "psnr_db": psnr(recon, reference),
          "ssim": ssim(recon, reference), "mean_uncertainty_pixcue_exact": float(u_pix[fg].mean()),
          "mean_uncertainty_pixcue_fast": float(fast_variance_map(p)[fg].mean()),
          "mean_uncertainty_mc": float(u_mean[fg].mean())}],
    )
    r_mean = pearson(joint[:, 2], joint[:, 3])
    r_passvar = pearson(joint[:, 2], [row["mc_passvar"] for row in rows])
    ratio = t_mean / t_pix
    run.extra["mc_runtime"] = {
        "pixcue_seconds": t_pix,
        "mc_meandist_seconds": t_mean,
        "mc_passvar_seconds": t_passvar,
        "ratio_mc_meandist_to_pixcue": ratio,
        "ratio_mc_passvar_to_pixcue": t_passvar / t_pix,
        "passes": mc.passes,
    }
    mc_ckpt = ctx.mc_checkpoint
    return {
        "image_id": i,
        "mc": dataclasses.asdict(mc),
        "model": {
            "trained_with_dropout": mc_ckpt.config.dropout_fraction,
            "source": cfg.get("mc_checkpoint") or "trained in this run",
        },
        "pearson_pixcue_vs_mc_meandist": r_mean,
        "pearson_pixcue_vs_mc_passvar": r_passvar,
        "runtime_ratio_mc_to_pixcue": ratio,
        "checks": {
            "pixcue_matches_mc": _check(r_mean, r_mean > 0.3, "Pearson r over sampled pixels > 0.3"),
            "mc_slower_than_pixcue": _check(ratio, ratio > 1, "MC runtime / PixCUE runtime > 1"),
        },
    }


FIT_METRICS = ("nmse", "psnr_db", "ssim")
SWEEP_COLUMNS = ["accel", "noise_sigma", "images", "nmse", "psnr_db", "ssim", "mean_uncertainty_pixcue_exact"]


def fit_all(x, rows: list[dict]) -> list[dict]:
    """One linear and one exponential fit of each metric against ``x``."""
    fits = []
    for metric in FIT_METRICS:
        y = np.array([r[metric] for r in rows], dtype=float)
        for name, fn in (("linear", linear_fit), ("exponential", exponential_fit)):
            try:
                fits.append({"metric": metric, **fn(x, y).to_dict()})
            except ValueError as exc:
                fits.append({"metric": metric, "model": name, "error": str(exc)})
    return fits


def exp6(ctx: Context, prefix: str) -> dict:
    """Mean uncertainty against NMSE, PSNR and SSIM over a noise/acceleration sweep.

    The sweep points are the (mask, sigma) conditions, each averaged over the
    validation images. Fits over the individual (image, condition) rows,
    pooled and per contrast profile, are written alongside.
    """
    run, data, net = ctx.run, ctx.data, ctx.net
    stress = mask_from(ctx.cfg["stress_mask"], ctx.cfg["size"])
    rows = []
    sweep = []
    for m in (data.mask, stress):
        for s in ctx.cfg["noise_sigmas"]:
            cond = []
            for i in data.val_idx:
                ev = run.timed("evaluate", evaluate, net, data.images[i], m, float(s), ctx.seeds_for(i), ctx.fg_threshold)
                cond.append(ev.row(**ctx.ids(i, m, float(s))))
            rows += cond
            sweep.append({
                "accel": m.acceleration,
                "noise_sigma": float(s),
                "images": len(cond),
                **{k: float(np.mean([r[k] for r in cond])) for k in SWEEP_COLUMNS[3:]},
            })
    run.csv(f"{prefix}metrics.csv", METRIC_COLUMNS, rows)
    run.csv(f"{prefix}sweep.csv", SWEEP_COLUMNS, sweep)

    fits = fit_all(np.array([r["mean_uncertainty_pixcue_exact"] for r in sweep]), sweep)
    run.json(f"{prefix}fits.json", fits)
    per_image = {"pooled": fit_all(np.array([r["mean_uncertainty_pixcue_exact"] for r in rows]), rows)}
    for profile in sorted({r["contrast_profile"] for r in rows}):
        sub = [r for r in rows if r["contrast_profile"] == profile]
        per_image[profile] = fit_all(np.array([r["mean_uncertainty_pixcue_exact"] for r in sub]), sub)
    run.json(f"{prefix}fits_per_image.json", per_image)

    def nmse_linear(fs):
        return next(f for f in fs if f["metric"] == "nmse" and f["model"] == "linear")

    main_fit = nmse_linear(fits)
    slope = main_fit.get("slope", float("nan"))
    return {
        "sweep_points": len(sweep),
        "image_points": len(rows),
        "fits": fits,
        "pooled_image_nmse_linear": nmse_linear(per_image["pooled"]),
        "checks": {
            "nmse_rises_with_uncertainty": _check(
                {"slope": slope, "r_squared": main_fit.get("r_squared")},
                slope > 0,
                "linear NMSE-vs-mean-uncertainty slope over sweep conditions > 0",
            )
        },
    }


ROUTINES: dict[str, Callable[[Context, str], dict]] = {
    "exp1": exp1,
    "exp2": exp2,
    "exp3": exp3,
    "exp4": exp4,
    "exp5": exp5,
    "exp6": exp6,
}


def run_experiments(ids: list[str], cfg: dict, out_dir) -> tuple[dict, bool]:
    """Run the listed experiments sharing one dataset and checkpoint.

    With one id, outputs go directly into ``out_dir``; with several, each
    experiment writes into its own subdirectory. Returns the summary and
    whether every check passed.
    """
    unknown = [e for e in ids if e not in ROUTINES]
    if unknown or not ids:
        raise ValueError(f"unknown experiment id(s): {unknown or ids}; expected some of {list(EXPERIMENTS)}")
    run = Run(out_dir, "experiment " + ",".join(ids), cfg)
    data = run.timed("dataset", build_dataset, cfg)
    ctx = Context(cfg, data, run)
    summary = {}
    for e in ids:
        prefix = "" if len(ids) == 1 else f"{e}/"
        log.info("running %s", e)
        summary[e] = run.timed(e, ROUTINES[e], ctx, prefix)
        run.json(f"{prefix}summary.json", summary[e])
    if ctx.checkpoint is not None and not cfg.get("checkpoint"):
        save_checkpoint(ctx.checkpoint, run.path("checkpoint.pxc"))
    if ctx.mc_checkpoint is not None and not cfg.get("mc_checkpoint"):
        save_checkpoint(ctx.mc_checkpoint, run.path("checkpoint_mc.pxc"))
    checks = {f"{e}.{name}": c for e, s in summary.items() for name, c in s["checks"].items()}
    run.extra["checks"] = checks
    run.extra["split"] = {"train": data.train_idx, "validation": data.val_idx}
    run.finish()
    return summary, all(c["passed"] for c in checks.values())
