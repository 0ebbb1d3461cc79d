"""Experiment orchestration: cached stage 1, per-seed stage 2, reports.

A run writes into its output directory: the resolved configuration
echo, per-seed metric and usage CSVs, student and adaptor checkpoints,
and a summary table with per-seed rows plus mean and std aggregates.
Nothing written depends on wall time, so identical configurations
produce byte-identical files.

Teacher pretraining is cached under a key derived from everything stage
1 depends on, so unrelated stage-2 settings (mode, fractions, policies)
reuse the same pretrained teachers.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os

import numpy as np

from .baselines import train_with_mode
from .config import format_config, load_config, override
from .data import generate
from .distill import pretrain_teacher
from .metrics import (fmt, summary_stats, write_metrics_csv, write_usage_csv,
                      write_usage_curve_csv)
from .models import build_pair, load_checkpoint, save_checkpoint

SUMMARY_HEADER = "run,mode,seed,top1,top5,mimicry_kl"


def teacher_cache_key(cfg, seed):
    """Everything stage 1 depends on, hashed."""
    payload = repr((
        dataclasses.asdict(cfg.dataset),
        dataclasses.asdict(cfg.teacher),
        dataclasses.asdict(cfg.optimizer),
        cfg.run.teacher_epochs,
        cfg.run.teacher_floor,
        int(seed),
    ))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def get_teacher(cfg, dataset, seed):
    """Load the cached pretrained teacher for this trial, or train it."""
    os.makedirs(cfg.run.cache_dir, exist_ok=True)
    path = os.path.join(cfg.run.cache_dir, f"teacher-{teacher_cache_key(cfg, seed)}.ckpt")
    teacher, _, _ = build_pair(cfg, seed)
    if os.path.exists(path):
        teacher.load_state(load_checkpoint(path))
        teacher.set_frozen(True)
        return teacher
    stage1_seed = int(np.random.SeedSequence([int(seed), 0x7EAC]).generate_state(1)[0])
    pretrain_teacher(dataset, teacher, cfg.optimizer, cfg.run.teacher_epochs,
                     floor=cfg.run.teacher_floor, seed=stage1_seed)
    save_checkpoint(path, teacher.state_arrays())
    return teacher


def run(cfg):
    """Both stages for every seed; returns the summary aggregates."""
    out = cfg.run.out
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "resolved.cfg"), "w") as fh:
        fh.write(format_config(cfg))

    dataset = generate(cfg.dataset)
    per_seed = []
    for seed in cfg.run.seeds:
        teacher = get_teacher(cfg, dataset, seed)
        result = train_with_mode(dataset, teacher, cfg, seed)
        write_metrics_csv(os.path.join(out, f"metrics_seed{seed}.csv"), result.records)
        if result.usage:
            write_usage_csv(os.path.join(out, f"usage_seed{seed}.csv"), result.usage)
            write_usage_curve_csv(os.path.join(out, f"usage_curve_seed{seed}.csv"),
                                  result.usage)
        state = result.student.state_arrays()
        state.update(result.adaptor.state_arrays())
        save_checkpoint(os.path.join(out, f"student_seed{seed}.ckpt"), state)
        per_seed.append({"seed": seed, "top1": result.top1, "top5": result.top5,
                         "mimicry_kl": result.mimicry})

    mode = cfg.run.mode
    mean1, std1 = summary_stats([r["top1"] for r in per_seed])
    mean5, std5 = summary_stats([r["top5"] for r in per_seed])
    meank, stdk = summary_stats([r["mimicry_kl"] for r in per_seed])
    with open(os.path.join(out, "summary.csv"), "w") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for r in per_seed:
            fh.write(f"{mode}-seed{r['seed']},{mode},{r['seed']},"
                     f"{fmt(r['top1'])},{fmt(r['top5'])},{fmt(r['mimicry_kl'])}\n")
        fh.write(f"{mode},{mode},mean,{fmt(mean1)},{fmt(mean5)},{fmt(meank)}\n")
        fh.write(f"{mode},{mode},std,{fmt(std1)},{fmt(std5)},{fmt(stdk)}\n")

    return {"out": out, "mode": mode, "per_seed": per_seed,
            "mean_top1": mean1, "std_top1": std1,
            "mean_top5": mean5, "std_top5": std5,
            "mean_mimicry": meank, "std_mimicry": stdk}


def read_summary(run_dir):
    """Per-seed rows of a finished run's summary table."""
    path = os.path.join(run_dir, "summary.csv")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no summary.csv under {run_dir}")
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != SUMMARY_HEADER:
            raise ValueError(f"unexpected summary header in {path}: {header!r}")
        for line in fh:
            run_id, mode, seed, top1, top5, kl = line.strip().split(",")
            if seed in ("mean", "std"):
                continue
            rows.append({"run": run_id, "mode": mode, "seed": int(seed),
                         "top1": float(top1), "top5": float(top5),
                         "mimicry_kl": float(kl)})
    return rows


def compare(run_dirs):
    """Aligned per-mode table over finished runs of one dataset.

    Refuses to mix runs whose dataset parameters (seed included) differ;
    aggregates are recomputed from the per-seed rows.
    """
    if len(run_dirs) < 2:
        raise ValueError("compare: needs at least two run directories")
    loaded = []
    for d in run_dirs:
        cfg_path = os.path.join(d, "resolved.cfg")
        if not os.path.exists(cfg_path):
            raise FileNotFoundError(f"no resolved.cfg under {d}")
        loaded.append((d, load_config(cfg_path), read_summary(d)))
    reference = loaded[0][1].dataset
    for d, cfg, _ in loaded[1:]:
        if cfg.dataset != reference:
            raise ValueError(
                f"compare: {d} ran on different dataset parameters "
                f"(seed {cfg.dataset.seed} vs {reference.seed})")
    table = []
    for d, cfg, rows in loaded:
        m1, s1 = summary_stats([r["top1"] for r in rows])
        m5, s5 = summary_stats([r["top5"] for r in rows])
        mk, sk = summary_stats([r["mimicry_kl"] for r in rows])
        table.append({"dir": d, "mode": cfg.run.mode, "seeds": len(rows),
                      "top1_mean": m1, "top1_std": s1,
                      "top5_mean": m5, "top5_std": s5,
                      "mimicry_mean": mk, "mimicry_std": sk})
    return table


def compare_markdown(table):
    lines = ["| mode | seeds | top1 | top5 | mimicry KL |",
             "| --- | --- | --- | --- | --- |"]
    for row in table:
        lines.append(
            f"| {row['mode']} | {row['seeds']} "
            f"| {100 * row['top1_mean']:.2f} ± {100 * row['top1_std']:.2f} "
            f"| {100 * row['top5_mean']:.2f} ± {100 * row['top5_std']:.2f} "
            f"| {row['mimicry_mean']:.4f} ± {row['mimicry_std']:.4f} |")
    return "\n".join(lines)


def write_compare_csv(path, table):
    cols = ("mode", "seeds", "top1_mean", "top1_std", "top5_mean", "top5_std",
            "mimicry_mean", "mimicry_std")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in table:
            fh.write(",".join(
                row[c] if c == "mode" else fmt(row[c]) for c in cols) + "\n")


SWEEP_FRACTIONS = (0.25, 0.5, 0.75, 1.0)
SWEEP_SLACK = 0.002  # fraction units; 0.2 accuracy points


def sweep(cfg, fractions=SWEEP_FRACTIONS):
    """Train at each unlabeled fraction and check the accuracy trend.

    Entries run sequentially in config order (each is internally
    single threaded); results land under the run's output directory as
    ``sweep.csv`` plus a trend report. Returns (rows, trend_ok).
    """
    out = cfg.run.out
    os.makedirs(out, exist_ok=True)
    rows = []
    for fraction in fractions:
        sub = override(cfg, unlabeled_fraction=float(fraction),
                       out=os.path.join(out, f"fraction_{int(round(100 * fraction))}"))
        summary = run(sub)
        rows.append({"fraction": float(fraction),
                     "mean_top1": summary["mean_top1"],
                     "std_top1": summary["std_top1"]})
    rows.sort(key=lambda r: r["fraction"])
    trend_ok = all(rows[i + 1]["mean_top1"] >= rows[i]["mean_top1"] - SWEEP_SLACK
                   for i in range(len(rows) - 1))
    with open(os.path.join(out, "sweep.csv"), "w") as fh:
        fh.write("fraction,mean_top1,std_top1\n")
        for r in rows:
            fh.write(f"{fmt(r['fraction'])},{fmt(r['mean_top1'])},{fmt(r['std_top1'])}\n")
    with open(os.path.join(out, "sweep_report.txt"), "w") as fh:
        fh.write(f"policy: {cfg.run.selection_policy}\n")
        fh.write("fractions: " + ", ".join(fmt(r["fraction"]) for r in rows) + "\n")
        fh.write("mean top1 (%): "
                 + ", ".join(f"{100 * r['mean_top1']:.2f}" for r in rows) + "\n")
        fh.write(f"trend nondecreasing within 0.2 points: {'yes' if trend_ok else 'no'}\n")
    return rows, trend_ok
