"""Scaled-down end-to-end comparison of pretrain + finetune against direct training.

Runs the full pipeline at 32x32 and reports mean per-component W1 and mean
density over the held-out designs.  Usable as a script:

    python tests/e2e_ordering.py OUT_DIR
"""

import json
import sys
import time

import numpy as np

from gust.homogenize import COMPONENTS
from gust.pipeline import Manifest, load_config, read_metrics_raw, run_stage

E2E_OVERRIDES = {
    "resolution": 32,
    "nominals": {"pretrain": 200, "finetune": 10, "eval": 5},
    "pretrain_data": {"sigma": 3.0, "variants": 10},
    "finetune_data": {"sigma": 6.0, "variants": 32},
    "truth_samples": 500,
    "sampling": {"samples": 500, "batch_size": 250},
    "schedule": {"T": 100, "beta_start": 0.001, "beta_end": 0.2},
    "denoiser": {"levels": 3, "base_channels": 16, "channel_mults": [1, 2, 2],
                 "attention_levels": [3], "time_embed_dim": 32, "spade_hidden": 16},
    "pretrain": {"iterations": 12000, "batch_size": 16, "decay_every": 2000},
    "finetune": {"iterations": 4000, "batch_size": 16, "decay_every": 800},
    "freeze": "first_last_blocks",
    "baselines": {"methods": ["dt"]},
    "metrics": {"k": 5, "perplexity": 10.0, "embedding": "tsne"},
}

STAGES = ("synth", "pretrain", "finetune", "sample", "baseline", "homogenize", "evaluate")


def run_e2e(out, seed=0):
    cfg = load_config(profile="desk", seed=seed, overrides=E2E_OVERRIDES)
    man = Manifest.open(out, cfg)
    start = time.perf_counter()
    for stage in STAGES:
        run_stage(stage, cfg, man)
    rows = read_metrics_raw(man.output_path("evaluate", "metrics"))
    result = {"seconds": time.perf_counter() - start,
              "stage_seconds": {s: man.stages[s]["seconds"] for s in STAGES}}
    for method in ("gust", "dt"):
        w1 = {c: float(np.mean([r["value"] for r in rows
                                if r["method"] == method and r["metric"] == f"W1_{c}"]))
              for c in COMPONENTS}
        result[method] = {
            "W1": w1,
            "W1_mean": float(np.mean(list(w1.values()))),
            "density": float(np.mean([r["value"] for r in rows
                                      if r["method"] == method and r["metric"] == "density"])),
            "coverage": float(np.mean([r["value"] for r in rows
                                       if r["method"] == method and r["metric"] == "coverage"])),
        }
    return result


if __name__ == "__main__":
    print(json.dumps(run_e2e(sys.argv[1]), indent=1))
