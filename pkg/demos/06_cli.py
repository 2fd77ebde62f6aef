"""
The same pipeline from the command line
=======================================

Every subcommand writes its outputs plus a resolved config next to them.
Shown through ``manlab.cli.main`` so it runs without a shell; the commands
are identical with the installed ``manlab`` script.
"""

import tempfile
from pathlib import Path

from manlab.cli import main

work = Path(tempfile.mkdtemp())
syn = ["--dataset", "synthetic"]


def run(*argv):
    print("$ manlab", " ".join(argv))
    assert main(list(argv)) == 0


run("train-classifier", *syn, "--arch", "vggS", "--epochs", "1", "--out", str(work / "vgg.ckpt"))
run("train-man", *syn, "--attacked", str(work / "vgg.ckpt"), "--alpha", "1", "--iters", "100",
    "--out", str(work / "man.ckpt"))
run("attack-eval", *syn, "--generator", str(work / "man.ckpt"), "--victims", str(work / "vgg.ckpt"),
    "--delta", "0.5", "--out-dir", str(work / "eval"))
print((work / "eval" / "report.csv").read_text())
run("ablate-epsilon", *syn, "--generator", str(work / "man.ckpt"), "--victim", str(work / "vgg.ckpt"),
    "--samples", "50", "--out", str(work / "eps.csv"))
print((work / "eps.csv").read_text())
run("dump-samples", *syn, "--generator", str(work / "man.ckpt"), "--count", "2", "--delta", "0.5",
    "--out-dir", str(work / "samples"))
print(sorted(p.name for p in (work / "samples").glob("*.ppm"))[:4], "...")
