"""Experiment orchestration: single runs, ablations, sweeps, and replays.

Each run cell writes its own directory under the output root::

    <out>/<run_id>/
        manifest.txt   resolved config + content hash (exact replay input)
        metrics.csv    deterministic per-epoch / per-slot metric rows
        timings.csv    wall-clock rows (excluded from determinism checks)
        checkpoint.npz final networks and optimizer state (trained modes)

plus a ``summary.csv`` at the root aggregating means over seeds.
"""

from __future__ import annotations

import os
import traceback
from dataclasses import replace

import numpy as np

from .config import (FullConfig, apply_sweep_value, config_from_manifest,
                     manifest_text, parse_manifest)
from .env import MigrationEnv
from .errors import DivergenceError
from .learner import Trainer, evaluate_policy, train
from .metrics import (MetricRow, ensure_dir, read_metrics, write_metrics,
                      write_summary)

#: Ablation suite: the full learner plus each piece switched off.
ABLATION_MODES = ("full", "no-confidence", "no-consistency", "plain-diffusion")


def random_policy(observation, rng, action_dim: int) -> np.ndarray:
    """Uniform action baseline; ignores the observation by design."""
    return rng.uniform(0.0, 1.0, size=action_dim)


def run_id_for(mode: str, seed: int, sweep_axis=None, sweep_value=None) -> str:
    parts = [mode]
    if sweep_axis is not None:
        parts.append(f"{sweep_axis}={sweep_value}")
    parts.append(f"seed{seed}")
    return "_".join(parts).replace("/", "-")


def run_cell(cfg: FullConfig, mode: str, seed: int, out_dir: str,
             sweep_axis=None, sweep_value=None) -> dict:
    """Execute one (mode, seed, sweep value) cell and write its artifacts.

    A training divergence is recorded (with a diagnostic checkpoint when
    possible) instead of raised, so remaining cells keep running.
    """
    run_id = run_id_for(mode, seed, sweep_axis, sweep_value)
    cell_dir = os.path.join(out_dir, run_id)
    ensure_dir(cell_dir)
    with open(os.path.join(cell_dir, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write(manifest_text(cfg, mode, seed, sweep_axis, sweep_value))

    rows: list[MetricRow] = []
    timing_rows: list[MetricRow] = []
    env = MigrationEnv(cfg.world, cfg.trust)
    status = {"run_id": run_id, "mode": mode, "seed": seed, "ok": True,
              "error": None}

    def add(index, metric, value):
        rows.append(MetricRow(run_id, mode, seed, index, metric, value))

    try:
        if mode == "random":
            _run_random_cell(cfg, env, seed, add)
        else:
            _run_training_cell(cfg, env, mode, seed, cell_dir, add, timing_rows,
                               run_id)
    except DivergenceError as exc:
        status["ok"] = False
        status["error"] = str(exc)
        add(0, "diverged", 1.0)
        with open(os.path.join(cell_dir, "failure.txt"), "w", encoding="utf-8") as fh:
            fh.write(f"{exc}\n\n{traceback.format_exc()}")

    write_metrics(os.path.join(cell_dir, "metrics.csv"), rows)
    write_metrics(os.path.join(cell_dir, "timings.csv"), timing_rows)
    status["rows"] = rows
    return status


def _run_training_cell(cfg, env, mode, seed, cell_dir, add, timing_rows,
                       run_id) -> None:
    trainer_cfg = replace(cfg.trainer, mode=mode)
    trainer = Trainer(env.observation_dim, env.action_dim, trainer_cfg,
                      np.random.default_rng(np.random.SeedSequence(seed)))
    log = train(env, trainer, trainer_cfg.epochs, seed,
                trainer_cfg.grad_steps_per_epoch,
                eval_episodes=trainer_cfg.eval_episodes)
    for entry in log:
        epoch = entry["epoch"]
        for metric in ("train_reward", "test_reward", "critic_loss",
                       "actor_objective", "mean_confidence",
                       "consistency_grad_norm", "fallback_count",
                       "optimizer_steps"):
            add(epoch, metric, entry[metric])
        timing_rows.append(MetricRow(run_id, mode, seed, epoch, "wall_time",
                                     entry["wall_time"]))
    if log:
        final = float(np.mean([e["test_reward"] for e in log[-min(20, len(log)):]]))
        add(len(log) - 1, "final_test_reward", final)
    trainer.save(os.path.join(cell_dir, "checkpoint.npz"),
                 extra={"seed": seed, "epochs": len(log)})
    if cfg.experiment.trace_reputation:
        _trace_reputation(cfg, env, seed, add)


def _run_random_cell(cfg, env, seed, add) -> None:
    """Evaluate the uniform baseline under the trained modes' protocol:
    same held-out evaluation seed set, one measurement per epoch index."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    root = np.random.SeedSequence(seed)
    _, eval_ss = root.spawn(2)
    eval_seeds = eval_ss.generate_state(cfg.trainer.eval_episodes)
    per_epoch = []
    for epoch in range(max(cfg.trainer.epochs, 1)):
        mean_reward = evaluate_policy(
            env, lambda o: random_policy(o, rng, env.action_dim), eval_seeds)
        add(epoch, "test_reward", mean_reward)
        add(epoch, "optimizer_steps", 0)
        per_epoch.append(mean_reward)
    final = float(np.mean(per_epoch[-min(20, len(per_epoch)):]))
    add(len(per_epoch) - 1, "final_test_reward", final)
    if cfg.experiment.trace_reputation:
        _trace_reputation(cfg, env, seed, add)


def _trace_reputation(cfg, env, seed, add) -> None:
    """Log the full per-slot reputation matrix of one rollout."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xB0A)))
    obs = env.reset(seed)
    done = False
    slot = 0
    while not done:
        obs, _, done, _ = env.step(random_policy(obs, rng, env.action_dim))
        rep = env.trust.reputation_matrix()
        for u in range(env.num_vehicles):
            for s in range(env.num_rsus):
                add(slot, f"reputation.u{u}.s{s}", rep[u, s])
        slot += 1


def run_experiment(cfg: FullConfig, out_dir: str | None = None) -> list[dict]:
    """Run every (mode, seed, sweep value) cell the config asks for."""
    cfg.validate()
    out = out_dir or cfg.experiment.out_dir
    ensure_dir(out)
    axis = cfg.experiment.sweep_axis
    values = cfg.experiment.sweep_values if axis else [None]
    statuses = []
    all_rows = []
    for value in values:
        cell_cfg = apply_sweep_value(cfg, axis, value) if axis else cfg
        for seed in cfg.experiment.seeds:
            status = run_cell(cell_cfg, cfg.experiment.mode, int(seed), out,
                              sweep_axis=axis, sweep_value=value)
            statuses.append(status)
            all_rows.extend(status.pop("rows"))
    write_summary(os.path.join(out, "summary.csv"), all_rows)
    return statuses


def run_ablation(cfg: FullConfig, out_dir: str | None = None) -> list[dict]:
    """Train every ablation mode over the configured seeds."""
    cfg.validate()
    out = out_dir or cfg.experiment.out_dir
    ensure_dir(out)
    statuses = []
    all_rows = []
    for mode in ABLATION_MODES:
        for seed in cfg.experiment.seeds:
            status = run_cell(cfg, mode, int(seed), out)
            statuses.append(status)
            all_rows.extend(status.pop("rows"))
    write_summary(os.path.join(out, "summary.csv"), all_rows)
    return statuses


def replay_run(manifest_path: str, out_dir: str) -> dict:
    """Re-execute the run a manifest describes and diff its metric files."""
    with open(manifest_path, "r", encoding="utf-8") as fh:
        entries = parse_manifest(fh.read())
    cfg = config_from_manifest(entries)
    mode = entries["run.mode"]
    seed = int(entries["run.seed"])
    axis = entries.get("run.sweep_axis")
    value = entries.get("run.sweep_value")
    status = run_cell(cfg, mode, seed, out_dir, sweep_axis=axis,
                      sweep_value=value)
    original_dir = os.path.dirname(os.path.abspath(manifest_path))
    original = os.path.join(original_dir, "metrics.csv")
    fresh = os.path.join(out_dir, status["run_id"], "metrics.csv")
    if os.path.exists(original):
        with open(original, "rb") as fa, open(fresh, "rb") as fb:
            status["identical"] = fa.read() == fb.read()
    else:
        status["identical"] = None
    return status


def load_run_metrics(out_dir: str, run_id: str):
    return read_metrics(os.path.join(out_dir, run_id, "metrics.csv"))
