"""End-to-end demo at small scale: simulate a dataset, train both levels,
compare the learned policy with the baselines, and sweep the revenue
weight. Finishes in a couple of minutes on a laptop CPU.

Usage: python3 scripts/run_demo.py [OUT_DIR]
"""

import json
import sys
from pathlib import Path

from recads.cli import main

PROFILE = {
    "env": {"n_items": 120, "n_ads": 20, "t_max": 8, "history_cap": 12,
            "seed": 11},
    "data": {"sessions": 300},
    "train": {"epochs": 2, "update_every": 4, "log_interval": 25,
              "towers": [32], "state_hidden": 24, "prefix_hidden": 16,
              "seed": 0},
    "eval": {"sessions": 100, "seed": 900},
}


def run(*argv):
    code = main([str(a) for a in argv])
    if code != 0:
        sys.exit(code)
    print()


def demo(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg = out / "demo_config.json"
    cfg.write_text(json.dumps(PROFILE, indent=1))

    run("gen-data", "--config", cfg, "--out", out / "data")
    run("train", "--config", cfg, "--data", out / "data",
        "--out", out / "model", "--no-resume")
    for policy, name in (("ram", "eval_ram"), ("random", "eval_random"),
                         ("greedy", "eval_greedy")):
        args = ["eval", "--config", cfg, "--data", out / "data",
                "--policy", policy, "--out", out / name]
        if policy == "ram":
            args += ["--model", out / "model"]
        run(*args)
    run("sweep", "--config", cfg, "--data", out / "data",
        "--model", out / "model", "--param", "alpha",
        "--values", "0,0.5,1,2", "--out", out / "sweep_alpha")
    print(f"artifacts under {out}/")


if __name__ == "__main__":
    demo(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo_out"))
