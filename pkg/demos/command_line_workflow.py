"""
The command-line workflow
=========================

The ``hagnet`` command drives generation, k-fold training, checkpoint
evaluation, grid search and reporting. Here we call its ``main`` in-process
inside a scratch directory, exactly as the shell would.
"""

import tempfile
from pathlib import Path

from hagnet.cli import main

work = Path(tempfile.mkdtemp(prefix="hagnet-demo-"))
data = work / "degree.jsonl"
main(["generate", "--task", "degree_threshold", "--n", "120", "--seed", "0", "--out", str(data)])

small = ["--set", "hidden_dim=12", "--set", "embed_dim=12", "--set", "num_agg_layers=2"]
main(["train", "--config", "cfg2", "--dataset", str(data), "--folds", "3", "--epochs", "5",
      "--optimizer", "adam", "--lr", "1e-3", "--out", str(work / "cfg2")] + small)
main(["train", "--config", "sage", "--dataset", str(data), "--folds", "3", "--epochs", "5",
      "--set", "num_layers=2", "--set", "hidden_dim=12", "--set", "embed_dim=12",
      "--out", str(work / "sage")])

# a bad config is rejected before training, with every problem listed; exit status 2
status = main(["train", "--config", "cfg2", "--dataset", str(data), "--set", "num_agg_layers=0",
               "--set", "combine=mul", "--out", str(work / "bad")])
print("exit status for the bad config:", status)

main(["eval", "--checkpoint", str(work / "cfg2" / "fold0.ckpt"), "--dataset", str(data)])
main(["report", str(work / "cfg2"), str(work / "sage"), "--out", str(work / "report")])
print("artifacts in", work)
