"""Command-line workflows: simulate, reconstruct, train, eval, report.

Every command reads one JSON run-config (``--config``); the remaining flags
override single fields of it.  Failures exit non-zero and print a JSON object
``{"error": ..., "message": ...}`` on stderr.
"""

import argparse
import copy
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_io import (
    build_dataset,
    generate_mask,
    load_dataset,
    load_frames,
    moving_rectangles,
    prepare_video,
    read_tensor,
    write_dataset,
    write_tensor,
)
from .denoise import DenoiserSpec
from .metrics import QualityReport, aggregate_reports, video_report
from .operator import SciOperator
from .solvers import NoiseSchedule, SolverConfig, named_schedule, reconstruct
from .unfold import TrainableSchedule, TrainConfig, train

NAMED_SCHEDULES = ("step", "exponential", "constant")
SOLVER_FLAGS = {"admm": "admm", "gap": "gap", "gap-accel": "gap_accelerated"}
DENOISER_FLAGS = {"gaussian-blend": "gaussian_blend", "haar": "haar_soft_threshold"}


class UsageError(Exception):
    pass


class MissingFilesError(Exception):
    def __init__(self, missing):
        super().__init__("missing input files: " + ", ".join(missing))
        self.missing = missing


DEFAULT_CONFIG = {
    "seed": 0,
    "out": "out",
    "solver": {"variant": "admm", "rho": 0.01, "iterations": 60},
    "denoiser": {"kind": "gaussian_blend", "radius": 2, "kappa": 1.0},
    "schedule": "step",
    "data": {
        "videos": [],
        "synthetic": None,
        "mask": None,
        "mask_density": 0.5,
        "noise_std": 0.01,
        "height": 256,
        "width": 256,
        "n_frames": 8,
        "manifest": None,
    },
    "train": {"epochs": 10, "minibatch": 5, "lr": 0.01, "shuffle": True, "segment": None},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in out:
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


@dataclass
class RunConfig:
    """Effective settings of one run, after defaults and flag overrides."""

    solver: SolverConfig
    denoiser: DenoiserSpec
    schedule: str
    data: dict
    train: dict
    seed: int = 0
    out: str = "out"
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, d):
        d = _merge(DEFAULT_CONFIG, d)
        try:
            solver = SolverConfig(d["solver"]["variant"], float(d["solver"]["rho"]),
                                  int(d["solver"]["iterations"]), True)
            denoiser = DenoiserSpec(**d["denoiser"])
        except (TypeError, ValueError) as exc:
            raise UsageError(str(exc)) from exc
        return cls(solver=solver, denoiser=denoiser, schedule=str(d["schedule"]), data=d["data"],
                   train=d["train"], seed=int(d["seed"]), out=str(d["out"]), raw=d)

    def to_dict(self):
        return {
            "seed": self.seed,
            "out": self.out,
            "solver": {"variant": self.solver.variant, "rho": self.solver.rho,
                       "iterations": self.solver.iterations},
            "denoiser": self.denoiser.to_dict(),
            "schedule": self.schedule,
            "data": copy.deepcopy(self.data),
            "train": copy.deepcopy(self.train),
        }

    def train_config(self):
        t = self.train
        return TrainConfig(epochs=int(t["epochs"]), minibatch=int(t["minibatch"]), K=self.solver.iterations,
                           rho=self.solver.rho, variant=self.solver.variant, seed=self.seed,
                           lr=float(t["lr"]), shuffle=bool(t["shuffle"]), segment=t["segment"])

    def noise_schedule(self):
        K = self.solver.iterations
        if self.schedule in NAMED_SCHEDULES:
            return named_schedule(self.schedule, K)
        if not os.path.exists(self.schedule):
            raise UsageError(f"schedule file {self.schedule!r} not found")
        sched = TrainableSchedule.from_json(self.schedule).to_schedule()
        if len(sched) != K:
            raise UsageError(f"schedule file has {len(sched)} entries but iterations = {K}")
        return sched


def load_config(args):
    """Config file contents with command-line overrides applied."""
    raw = {}
    if args.config:
        if not os.path.exists(args.config):
            raise UsageError(f"config file {args.config!r} not found")
        with open(args.config) as fh:
            raw = json.load(fh)
    raw = _merge(DEFAULT_CONFIG, raw)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    if args.schedule is not None:
        raw["schedule"] = args.schedule
    if args.solver is not None:
        raw["solver"]["variant"] = SOLVER_FLAGS[args.solver]
    if args.denoiser is not None:
        raw["denoiser"]["kind"] = DENOISER_FLAGS[args.denoiser]
    if getattr(args, "manifest", None):
        raw["data"]["manifest"] = args.manifest
    return RunConfig.from_dict(raw)


def _threads():
    env = os.environ.get("SCI_UNFOLD_THREADS")
    return max(1, int(env)) if env else 1


def _manifest_path(cfg):
    path = cfg.data.get("manifest") or os.path.join(cfg.out, "manifest.json")
    if not os.path.exists(path):
        raise UsageError(f"dataset manifest {path!r} not found (run simulate first or set data.manifest)")
    return path


# --- commands ----------------------------------------------------------------

def cmd_simulate(cfg):
    """Prepare cubes, build the mask and simulated measurements, write a dataset."""
    d = cfg.data
    cubes = []
    for src in d.get("videos") or []:
        if not os.path.exists(src):
            raise UsageError(f"video source {src!r} not found")
        if os.path.isdir(src):
            cubes.extend(prepare_video(load_frames(src), d["height"], d["width"], d["n_frames"]))
        else:
            cubes.append(read_tensor(src).astype(np.float64))
    if d.get("synthetic"):
        syn = d["synthetic"]
        cubes.extend(moving_rectangles(int(syn["count"]), tuple(syn.get("shape", (32, 32, 8))),
                                       seed=int(syn.get("seed", cfg.seed))))
    if not cubes:
        raise UsageError("no input videos: set data.videos or data.synthetic")
    shape = cubes[0].shape
    if any(c.shape != shape for c in cubes):
        raise UsageError("all video cubes must share one shape")
    if d.get("mask"):
        if not os.path.exists(d["mask"]):
            raise UsageError(f"mask file {d['mask']!r} not found")
        mask = read_tensor(d["mask"]).astype(np.float64)
        if mask.shape != shape:
            raise UsageError(f"mask shape {mask.shape} does not match video shape {shape}")
    else:
        mask = generate_mask(shape, float(d["mask_density"]), seed=cfg.seed)
    samples = build_dataset(cubes, mask, float(d["noise_std"]), seed=cfg.seed)
    return {"manifest": str(write_dataset(samples, mask, cfg.out, d["noise_std"], cfg.seed)),
            "samples": len(samples)}


def _solve_one(sample, op, cfg, sched, meta, out):
    x, trace = reconstruct(sample.y, op, cfg.denoiser, sched, cfg.solver, sample.truth)
    write_tensor(out / f"{sample.name}_recon.sci", x)
    trace.to_csv(out / f"{sample.name}_trace.csv")
    result = {"name": sample.name, "recon": str(out / f"{sample.name}_recon.sci")}
    if sample.truth is not None:
        report = video_report(x, sample.truth)
        report.name = sample.name
        report.metadata = meta
        report.to_json(out / f"{sample.name}_report.json")
        report.to_csv(out / f"{sample.name}_report.csv")
        result["mean_psnr"] = report.mean_psnr
    return result


def cmd_reconstruct(cfg):
    """Reconstruct every sample; write cubes, per-iteration traces, and quality reports."""
    sched = cfg.noise_schedule()
    mask, samples, _ = load_dataset(_manifest_path(cfg))
    op = SciOperator(mask)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"solver": cfg.solver.variant, "rho": cfg.solver.rho, "iterations": cfg.solver.iterations,
            "denoiser": cfg.denoiser.to_dict(), "schedule": cfg.schedule, "sigma": sched.tolist()}
    with ThreadPoolExecutor(_threads()) as pool:
        results = list(pool.map(lambda s: _solve_one(s, op, cfg, sched, meta, out), samples))
    return {"samples": results}


def cmd_train(cfg):
    """Learn the noise schedule; write ``schedule.json`` and ``loss_log.csv``."""
    mask, samples, _ = load_dataset(_manifest_path(cfg))
    samples = [s for s in samples if s.truth is not None]
    if not samples:
        raise UsageError("training needs samples with ground truth")
    params, log = train(samples, SciOperator(mask), cfg.denoiser, cfg.train_config(), workers=_threads())
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    params.to_json(out / "schedule.json")
    log.to_csv(out / "loss_log.csv")
    return {"schedule": str(out / "schedule.json"), "loss_log": str(out / "loss_log.csv"),
            "initial_loss": log.initial_loss, "final_loss": log.epoch_losses[-1]}


def cmd_eval(cfg):
    """Score existing ``*_recon.sci`` cubes in the output directory against ground truth."""
    _, samples, _ = load_dataset(_manifest_path(cfg))
    out = Path(cfg.out)
    missing = [str(out / f"{s.name}_recon.sci") for s in samples
               if s.truth is not None and not (out / f"{s.name}_recon.sci").exists()]
    if missing:
        raise MissingFilesError(missing)
    results = []
    for s in samples:
        if s.truth is None:
            continue
        report = video_report(read_tensor(out / f"{s.name}_recon.sci").astype(np.float64), s.truth)
        report.name = s.name
        report.to_json(out / f"{s.name}_report.json")
        report.to_csv(out / f"{s.name}_report.csv")
        results.append({"name": s.name, "mean_psnr": report.mean_psnr, "mean_ssim": report.mean_ssim})
    return {"samples": results}


def cmd_report(cfg, inputs):
    """Aggregate per-video report JSON files into ``table.csv`` (rows + average)."""
    if not inputs:
        raise UsageError("report needs at least one report JSON file")
    missing = [p for p in inputs if not os.path.exists(p)]
    if missing:
        raise MissingFilesError(missing)
    reports = [QualityReport.from_json(p) for p in inputs]
    names = [r.name or Path(p).stem for r, p in zip(reports, inputs)]
    rows = aggregate_reports(reports, names)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "table.csv", "w") as fh:
        fh.write("video,psnr,ssim\n")
        for name, p, s in rows:
            fh.write(f"{name},{p!r},{s!r}\n")
    return {"table": str(out / "table.csv"), "rows": len(rows)}


# --- entry point -------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="sciunfold", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "reconstruct", "train", "eval", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="run-config JSON file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--schedule", help="step | exponential | constant | path to schedule JSON")
        p.add_argument("--solver", choices=sorted(SOLVER_FLAGS))
        p.add_argument("--denoiser", choices=sorted(DENOISER_FLAGS))
        p.add_argument("--manifest", help="dataset manifest (defaults to OUT/manifest.json)")
        if name == "report":
            p.add_argument("inputs", nargs="*", help="per-video report JSON files")
    return parser


def _fail(kind, message, code, **extra):
    json.dump({"error": kind, "message": message, **extra}, sys.stderr)
    sys.stderr.write("\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code:
            return _fail("UsageError", "invalid command line", 2)
        return 0
    try:
        cfg = load_config(args)
        if args.command == "report":
            result = cmd_report(cfg, args.inputs)
        else:
            result = {"simulate": cmd_simulate, "reconstruct": cmd_reconstruct, "train": cmd_train,
                      "eval": cmd_eval}[args.command](cfg)
    except UsageError as exc:
        return _fail("UsageError", str(exc), 2)
    except MissingFilesError as exc:
        return _fail("MissingFiles", str(exc), 1, missing=exc.missing)
    except Exception as exc:  # noqa: BLE001 - every failure is reported as JSON
        return _fail(type(exc).__name__, str(exc), 1)
    json.dump(result, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
