"""
The command-line pipeline
=========================

Everything in the library is also reachable as a pipeline of small
commands connected by files, so experiments can run from a shell or a
job scheduler. This demo shells out to the installed `periscope`
entry point: synthesize a corpus, partition it, extract descriptors,
score all pairs, and evaluate, checking on the artifacts as they
appear.
"""

import json
import subprocess
import sys
from pathlib import Path
from tempfile import TemporaryDirectory


def run(*args):
    print("$ periscope", " ".join(str(a) for a in args))
    result = subprocess.run(
        [sys.executable, "-m", "periscope.cli", *map(str, args)],
        capture_output=True,
        text=True,
        check=True,
    )
    if result.stdout:
        print(result.stdout, end="")
    return result


with TemporaryDirectory() as tmp:
    tmp = Path(tmp)

    # A 30-identity corpus written as PNGs plus a manifest CSV.
    run("synth", "--identities", 30, "--per-id", 4, "--noise", 0.15,
        "--side", 96, "--seed", 5, "--out", tmp / "corpus")

    # Open-World split: first 15 identities train, the rest test.
    # Each split becomes a partition JSON and a binary pair file.
    run("partition", "--manifest", tmp / "corpus" / "manifest.csv",
        "--protocol", "OW", "--ow-train-identities", 15, "--out-dir", tmp)
    sidecar = json.loads((tmp / "test.pairs.json").read_text())
    print(f"  test pairs: {sidecar['genuine_count']} genuine,"
          f" {sidecar['impostor_count']} impostor")

    # Block-histogram features for every sample in the manifest.
    run("extract", "--manifest", tmp / "corpus" / "manifest.csv",
        "--descriptor", "lbph", "--out", tmp / "lbph.feat")

    # Score the test partition's pairs; scores land in a binary file
    # whose header records the descriptor and pair counts.
    run("score", "--features", tmp / "lbph.feat", "--pairs", tmp / "test.pairs",
        "--out", tmp / "test.scores", "--workers", 2, "--partition-id", "OW-test")

    # eval prints the EER as a percentage with two decimals, and can
    # also dump the full threshold/FAR/FRR curve as CSV.
    result = run("eval", "--scores", tmp / "test.scores",
                 "--curve-out", tmp / "curve.csv")
    print(f"  EER on held-out identities: {result.stdout.strip()}%")
    header = (tmp / "curve.csv").read_text().splitlines()[0]
    print(f"  curve columns: {header}")
