"""Experiment orchestration behind the command-line entry point.

Each ``cmd_*`` function performs one command end to end and returns the
values it wrote, so the pipeline can be driven from Python as well.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .checkpoint import Checkpoint, CheckpointMismatch
from .config import ExperimentConfig, config_hash
from .data import Dataset, generate, train_test_split
from .errors import UsageError
from .prior import compute_k, train_prior
from .sampler import (generate_direct, generate_prior_only, generate_v1, generate_v2, generate_v3,
                      sweep_restore_points)
from .schedule import NoiseSchedule, build_schedule
from .scorer import FeatureProjector, score_samples
from .trainer import train_loop

log = logging.getLogger(__name__)

LOCK_NAME = ".lock"


def fmt_float(value: float) -> str:
    return f"{value:.9g}"


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt_float(v) if isinstance(v, float) else v for v in row])


@contextmanager
def output_lock(out_dir):
    """Exclusive lock file in ``out_dir``; raises ``OSError`` if missing or already locked."""
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise FileNotFoundError(f"output directory {out_dir} does not exist")
    path = out_dir / LOCK_NAME
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OSError(f"output directory {out_dir} is locked by another process ({path})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out_dir
    finally:
        path.unlink(missing_ok=True)


@dataclass
class Experiment:
    config: ExperimentConfig
    schedule: NoiseSchedule
    train: Dataset
    test: Dataset
    projector: FeatureProjector

    @classmethod
    def prepare(cls, config: ExperimentConfig) -> "Experiment":
        data = generate(config.data)
        train, test = train_test_split(data, config.seed)
        projector = FeatureProjector.create(int(np.prod(data.x.shape[1:])),
                                            config.scorer.feature_dim, config.projector_seed)
        return cls(config, build_schedule(config.schedule), train, test, projector)

    def eval_batch(self, size: int) -> Dataset:
        if size < 2 or size > len(self.test):
            raise UsageError(f"eval size must lie in 2..{len(self.test)}, got {size}")
        return self.test[:size]


def _write_manifest(out_dir: Path, updates: dict) -> None:
    path = out_dir / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest.update(updates)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _fit_prior(exp: Experiment):
    p = exp.config.prior
    prior = train_prior(exp.train, p.epochs, exp.config.prior_seed, p.width, p.depth,
                        p.batch_size, p.lr)
    return prior, compute_k(exp.train, prior, exp.schedule)


def cmd_train_prior(config: ExperimentConfig, out_dir) -> dict:
    """Train the prior, pick k, write ``prior.ckpt`` and the manifest."""
    with output_lock(out_dir) as out:
        exp = Experiment.prepare(config)
        prior, bridge = _fit_prior(exp)
        path = out / "prior.ckpt"
        ckpt_io.save(Checkpoint(config_hash(config), "prior", 0, prior=prior, bridge=bridge), path)
        _write_manifest(out, {"config_hash": config_hash(config).hex(), "k": bridge.k,
                              "ratio": bridge.ratio})
    return {"path": path, "k": bridge.k, "ratio": bridge.ratio}


def _checkpoint_mode(mode: str, consistency: bool) -> str:
    return mode if consistency else "direct"


def cmd_train_cm(config: ExperimentConfig, out_dir, mode: str, prior_path=None) -> dict:
    """Train the consistency denoiser; write ``cm_<mode>.ckpt`` and ``metrics_<mode>.csv``."""
    tconf = config.trainer_config(mode)
    with output_lock(out_dir) as out:
        prior = bridge = None
        if mode == "v1":
            if prior_path is not None:
                log.warning("mode v1 ignores the prior checkpoint %s", prior_path)
        else:
            prior_path = Path(prior_path) if prior_path is not None else out / "prior.ckpt"
            if not prior_path.exists():
                raise UsageError(f"mode {mode} needs a prior checkpoint (looked for {prior_path})")
            pc = ckpt_io.load(prior_path, config_hash(config))
            if pc.prior is None or pc.bridge is None:
                raise CheckpointMismatch(f"{prior_path} holds no trained prior")
            prior, bridge = pc.prior, pc.bridge
        exp = Experiment.prepare(config)
        state, metrics = train_loop(tconf, exp.train, exp.schedule, prior, bridge, exp.projector)
        tag = _checkpoint_mode(mode, tconf.consistency)
        ckpt = Checkpoint(config_hash(config), tag, state.step, prior=prior,
                          denoiser=state.denoiser, bridge=bridge, scorer=state.scorer)
        path = out / f"cm_{tag}.ckpt"
        ckpt_io.save(ckpt, path)
        metrics_path = out / f"metrics_{tag}.csv"
        write_csv(metrics_path, ["step", "loss_mean", "op", "entropy"],
                  [(m.step, m.loss_mean, m.op, m.entropy) for m in metrics])
        if state.scorer is not None:
            _write_manifest(out, {"op": state.scorer.op})
    return {"path": path, "metrics_path": metrics_path, "state": state, "metrics": metrics}


def generate_mode(ckpt: Checkpoint, mode: str, cond: np.ndarray, schedule: NoiseSchedule, seed: int):
    if not ckpt.supports(mode):
        raise CheckpointMismatch(f"checkpoint trained as {ckpt.mode!r} cannot generate in mode {mode!r}")
    rng = np.random.default_rng(seed)
    if mode == "v1":
        return generate_v1(ckpt.denoiser, cond, schedule, rng)
    if mode == "v2":
        return generate_v2(ckpt.denoiser, ckpt.prior, ckpt.bridge, cond, schedule, rng)
    if mode == "v3":
        return generate_v3(ckpt.denoiser, ckpt.prior, ckpt.scorer, cond, schedule, rng)
    if mode == "direct":
        return generate_direct(ckpt.denoiser, ckpt.prior, cond, schedule)
    return generate_prior_only(ckpt.prior, cond)


def _available_modes(ckpt: Checkpoint) -> list[str]:
    if ckpt.mode == "direct":
        return ["prior", "direct"]
    return [m for m in ("prior", "v1", "v2", "v3") if ckpt.supports(m)]


def cmd_eval(config: ExperimentConfig, checkpoint_path, modes, eval_size: int, seed: int,
             out_dir=None) -> list[dict]:
    """NFE and Frechet score per mode on the first ``eval_size`` held-out items.

    ``modes`` may be ``"all"``. The CSV leaves out throughput, which is
    wall-clock dependent; it is returned and printed instead.
    """
    ckpt = ckpt_io.load(checkpoint_path, config_hash(config))
    exp = Experiment.prepare(config)
    batch = exp.eval_batch(eval_size)
    modes = _available_modes(ckpt) if modes == "all" else list(modes)
    rows = []
    for mode in modes:
        out, report = generate_mode(ckpt, mode, batch.cond, exp.schedule, seed)
        rows.append({"mode": mode, "nfe": report.nfe,
                     "frechet": score_samples(exp.projector, out, batch.x),
                     "samples_per_second": report.samples_per_second})
    if out_dir is not None:
        with output_lock(out_dir) as out:
            write_csv(out / "eval.csv", ["mode", "nfe", "frechet"],
                      [(r["mode"], r["nfe"], r["frechet"]) for r in rows])
    return rows


def cmd_sweep(config: ExperimentConfig, checkpoint_path, indices=None, seed: int = 0,
              eval_size: int | None = None, out_dir=None) -> list[tuple[int, float, float]]:
    """Frechet score of one-step restoration from each index (default ``2..k``)."""
    ckpt = ckpt_io.load(checkpoint_path, config_hash(config))
    if not ckpt.supports("v2"):
        raise CheckpointMismatch(f"checkpoint trained as {ckpt.mode!r} has no prior-based restoration")
    exp = Experiment.prepare(config)
    batch = exp.eval_batch(eval_size or min(config.scorer.eval_batch, len(exp.test)))
    if indices is None:
        indices = range(2, ckpt.bridge.k + 1)
    rows = sweep_restore_points(ckpt.denoiser, ckpt.prior, exp.schedule, batch, indices,
                                exp.projector, seed)
    if out_dir is not None:
        with output_lock(out_dir) as out:
            write_csv(out / "sweep.csv", ["index", "t_n", "score"], rows)
    return rows


ABLATIONS = (
    ("baseline", True, True, 7.0),
    ("no_importance", False, True, 7.0),
    ("no_consistency", False, False, None),
    ("rho_4", True, True, 4.0),
)


def cmd_ablate(config: ExperimentConfig, out_dir, eval_size: int | None = None) -> list[dict]:
    """Train and score the four ablation settings; deltas are ``baseline - score``.

    A negative delta means the setting scores worse than the baseline.
    """
    with output_lock(out_dir) as out:
        base = Experiment.prepare(config)
        prior, _ = _fit_prior(base)
        batch = base.eval_batch(eval_size or min(config.scorer.eval_batch, len(base.test)))
        rows = []
        for name, importance, consistency, rho in ABLATIONS:
            cfg = config.with_overrides("trainer", importance=importance, consistency=consistency)
            if rho is not None:
                cfg = cfg.with_overrides("schedule", rho=rho)
            schedule = build_schedule(cfg.schedule)
            bridge = compute_k(base.train, prior, schedule)
            tconf = cfg.trainer_config("v3")
            state, _ = train_loop(tconf, base.train, schedule, prior, bridge, base.projector)
            ckpt = Checkpoint(config_hash(cfg), _checkpoint_mode("v3", consistency), state.step,
                              prior=prior, denoiser=state.denoiser, bridge=bridge, scorer=state.scorer)
            mode = "v3" if consistency else "direct"
            generated, report = generate_mode(ckpt, mode, batch.cond, schedule, config.seed)
            rows.append({"name": name, "importance": importance, "consistency": consistency,
                         "rho": "-" if rho is None else rho, "nfe": report.nfe,
                         "restore_index": state.restore_index(tconf) if consistency else 0,
                         "frechet": score_samples(base.projector, generated, batch.x)})
        baseline = rows[0]["frechet"]
        for row in rows:
            row["delta"] = baseline - row["frechet"]
        write_csv(out / "ablation.csv",
                  ["name", "importance", "consistency", "rho", "nfe", "restore_index", "frechet", "delta"],
                  [(r["name"], str(r["importance"]).lower(), str(r["consistency"]).lower(),
                    r["rho"] if isinstance(r["rho"], str) else fmt_float(r["rho"]), r["nfe"],
                    r["restore_index"], r["frechet"], r["delta"]) for r in rows])
    return rows


def write_pgm(path, patch: np.ndarray) -> None:
    """8-bit binary PGM, mapping ``[-1, 1]`` to ``0..255``."""
    img = np.clip(np.round((np.clip(patch, -1.0, 1.0) + 1.0) * 127.5), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def cmd_sample(config: ExperimentConfig, checkpoint_path, mode: str, count: int, seed: int,
               out_dir, fmt: str = "csv") -> list[Path]:
    """Generate ``count`` patches for held-out conditions, one file per sample."""
    if fmt not in ("csv", "pgm"):
        raise UsageError(f"unknown sample format {fmt!r}")
    ckpt = ckpt_io.load(checkpoint_path, config_hash(config))
    exp = Experiment.prepare(config)
    batch = exp.test[:count]
    if len(batch) < count or count < 1:
        raise UsageError(f"count must lie in 1..{len(exp.test)}")
    out_patches, _ = generate_mode(ckpt, mode, batch.cond, exp.schedule, seed)
    paths = []
    with output_lock(out_dir) as out:
        folder = out / "samples"
        folder.mkdir(exist_ok=True)
        for i, patch in enumerate(out_patches):
            path = folder / f"sample_{i:04d}.{fmt}"
            grid = np.atleast_2d(patch)
            if fmt == "pgm":
                write_pgm(path, grid)
            else:
                with open(path, "w", newline="", encoding="utf-8") as fh:
                    writer = csv.writer(fh, lineterminator="\n")
                    writer.writerow([f"col{j}" for j in range(grid.shape[1])])
                    for row in grid:
                        writer.writerow([fmt_float(float(v)) for v in row])
            paths.append(path)
    return paths

