"""Full sensitivity experiment: train both bidding rules over several
seeds on one fixed dataset, then sweep alpha (RAM-l) and top-N (RAM-n)
at evaluation time. Expect roughly half an hour on a desktop CPU.

Usage: python3 scripts/run_sensitivity.py [OUT_DIR]
"""

import json
import sys
from pathlib import Path

from recads.cli import main

SEEDS = (0, 1, 2)

PROFILE = {
    "env": {"t_max": 12, "history_cap": 12, "seed": 101},
    "data": {"sessions": 2000},
    "train": {"epochs": 1, "update_every": 3, "log_interval": 100,
              "towers": [64], "state_hidden": 48, "prefix_hidden": 32},
    "eval": {"sessions": 500, "seed": 7700},
}


def run(*argv):
    code = main([str(a) for a in argv])
    if code != 0:
        sys.exit(code)
    print()


def experiment(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg = out / "config.json"
    cfg.write_text(json.dumps(PROFILE, indent=1))
    run("gen-data", "--config", cfg, "--out", out / "data")

    for bidding in ("ram-l", "ram-n"):
        param, values = (("alpha", "0,0.5,1,2") if bidding == "ram-l"
                         else ("top_n", "1,2,4,all"))
        for seed in SEEDS:
            model = out / f"model_{bidding}_s{seed}"
            run("train", "--config", cfg, "--data", out / "data",
                "--out", model, "--bidding", bidding, "--seed", seed,
                "--no-resume")
            run("sweep", "--config", cfg, "--data", out / "data",
                "--model", model, "--param", param, "--values", values,
                "--out", out / f"sweep_{bidding}_s{seed}")

    for policy in ("random", "greedy"):
        run("eval", "--config", cfg, "--data", out / "data",
            "--policy", policy, "--out", out / f"eval_{policy}")
    print(f"artifacts under {out}/")


if __name__ == "__main__":
    experiment(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("sensitivity_out"))
