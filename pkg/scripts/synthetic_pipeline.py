"""End-to-end run on a synthetic corpus through the command-line entry points.

Writes a corpus, trains one variant, scores the held-out test subjects and
exports the prototype projections:

    python3 scripts/synthetic_pipeline.py --workdir /tmp/psnd --variant p2d-mv --iters 1500
"""
import argparse
import sys
from pathlib import Path

from protosound import cli
from protosound.model import VARIANTS


def run(workdir: Path, variant: str, iters: int, per_class: int, seed: int) -> int:
    corpus, run_dir = workdir / "corpus", workdir / "run"
    steps = [
        ["synth", str(corpus), "--per-class", str(per_class), "--seed", str(seed),
         "--subjects", "10", "--test-subjects", "2", "--force"],
        ["-v", "train", "--corpus", str(corpus), "--out", str(run_dir), "--variant", variant,
         "--iters", str(iters), "--channels", "8", "16", "32", "64", "--seed", str(seed),
         "--checkpoint-every", str(max(1, iters // 4)), "--progress", str(max(1, iters // 10)), "--force"],
        ["eval", str(run_dir / "final.ckpt"), "--corpus", str(corpus), "--split", "test",
         "--out", str(workdir / "eval"), "--force"],
        ["project", str(run_dir / "final.ckpt"), "--corpus", str(corpus), "--split", "test",
         "--out", str(workdir / "projection"), "--force"],
    ]
    for argv in steps:
        print("$ protosound " + " ".join(argv), flush=True)
        code = cli.main(argv)
        if code != 0:
            return code
    return 0


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--workdir", type=Path, required=True)
    ap.add_argument("--variant", choices=VARIANTS, default="p2d-ev")
    ap.add_argument("--iters", type=int, default=1000)
    ap.add_argument("--per-class", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    sys.exit(run(args.workdir, args.variant, args.iters, args.per_class, args.seed))


if __name__ == "__main__":
    main()
