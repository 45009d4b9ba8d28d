"""The whole pipeline through the command-line interface.

Simulates a cohort to CSV, fits a model from a JSON config, evaluates it on
a held-out CSV, and dumps the interpretation reports, all inside a temporary
directory. The same four commands are available as ``kernelaj <command>``
from a shell.
"""

import json
import pathlib
import tempfile

from kernelaj.cli import main

workdir = pathlib.Path(tempfile.mkdtemp(prefix="kernelaj_demo_"))
print("working in", workdir)

sim_cfg = {"n": 1200, "p": 4, "w1": [0.6, 0.6, 0.0, 0.0],
           "w2": [0.0, 0.0, 0.6, 0.6], "censoring_rate": 0.4, "seed": 1}
(workdir / "sim.json").write_text(json.dumps(sim_cfg))
main(["simulate", "--config", str(workdir / "sim.json"),
      "--out", str(workdir / "train.csv")])

sim_cfg["seed"] = 2
sim_cfg["n"] = 400
(workdir / "sim_test.json").write_text(json.dumps(sim_cfg))
main(["simulate", "--config", str(workdir / "sim_test.json"),
      "--out", str(workdir / "test.csv")])

fit_cfg = {
    "seed": 0,
    "output_dir": str(workdir / "out"),
    "data": {
        "train": str(workdir / "train.csv"),
        "time_column": "time",
        "event_column": "event",
        "schema": {f"x{j}": "continuous" for j in range(1, 5)},
        "valid_fraction": 0.2,
    },
    "embedding": {"num_layers": 2, "hidden_units": 16, "embed_dim": 4,
                  "init_seed": 0},
    "training": {"learning_rate": 0.1, "batch_size": 256, "max_epochs": 25,
                 "patience": 6, "num_time_steps": 32,
                 "early_stop_criterion": "ibs", "seed": 0},
    "clustering": {"epsilon": 0.5, "min_kernel_weight": 0.01},
    "sft": {"enabled": True, "learning_rate": 0.01, "max_epochs": 15,
            "patience": 5},
}
(workdir / "fit.json").write_text(json.dumps(fit_cfg))
main(["fit", "--config", str(workdir / "fit.json")])

main(["evaluate", "--model", str(workdir / "out" / "model.json"),
      "--data", str(workdir / "test.csv"), "--out", str(workdir / "eval")])
print("\nmetrics.csv:")
print((workdir / "eval" / "metrics.csv").read_text())

main(["explain", "--model", str(workdir / "out" / "model.json"),
      "--clusters", "--out", str(workdir / "reports")])
main(["explain", "--model", str(workdir / "out" / "model.json"),
      "--data", str(workdir / "test.csv"), "--out", str(workdir / "reports")])
print("reports:", sorted(p.name for p in (workdir / "reports").iterdir()))
