"""
Command line round trip
=======================

The same pipeline through the ``bgslf`` command: synthesize data, train from a
JSON config, score a checkpoint against the baseline and export the graphs.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path


def run(*args):
    cmd = [sys.executable, "-m", "bgslf", *args]
    print("$ bgslf", " ".join(args))
    done = subprocess.run(cmd, capture_output=True, text=True)
    print(done.stdout.rstrip())
    if done.stderr:
        print(done.stderr.rstrip())
    print("exit", done.returncode, "\n")
    return done


work = Path(tempfile.mkdtemp(prefix="bgslf_demo_"))
run("synth", "--out", str(work / "syn.bin"), "--nodes", "6", "--steps", "800", "--seed", "3")

(work / "run.json").write_text(json.dumps({
    "data": "syn.bin", "period": 40, "hidden": 16, "epochs": 3, "out_dir": "run",
}))
run("train", "--config", str(work / "run.json"))
run("eval", "--checkpoint", str(work / "run" / "checkpoint.bgck"), "--data", str(work / "syn.bin"),
    "--baseline", "ha", "--selection-out", str(work / "selection.json"))
run("export-graphs", "--checkpoint", str(work / "run" / "checkpoint.bgck"), "--out", str(work / "graphs"))

# a typo in the config is rejected before any work is done
(work / "typo.json").write_text(json.dumps({"data": "syn.bin", "perios": 40}))
run("train", "--config", str(work / "typo.json"))
print("files:", sorted(str(p.relative_to(work)) for p in work.rglob("*") if p.is_file()))
