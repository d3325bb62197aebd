"""Memorisation check: train the tiny network on a small synthetic set.

Every variant should reach a train UAR close to 1; anything well below it
points at a broken gradient or a wiring error rather than a modelling issue.

    python3 scripts/overfit.py --variants p2d-ev p1d --iters 2000
"""
import argparse
import json
import logging
import time

from protosound.dataset import synth_records
from protosound.metrics import metrics
from protosound.model import VARIANTS
from protosound.train import TrainConfig, evaluate, train

TINY_CHANNELS = (8, 16, 32, 64)


def run(variant: str, iters: int, per_class: int, seed: int, batch: int = 16) -> dict:
    records = synth_records(per_class, seed=seed)
    cfg = TrainConfig(variant=variant, block_channels=TINY_CHANNELS, max_iter=iters,
                      batch=batch, seed=seed, checkpoint_every=iters + 1)
    t0 = time.time()
    result = train(records, [], cfg, progress_every=max(1, iters // 10))
    scores = metrics(evaluate(result.model, records))
    return {"variant": variant, "seconds": round(time.time() - t0, 1),
            "final_nll": result.history[-1]["nll"], **scores}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=VARIANTS)
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--per-class", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    for v in args.variants:
        print(json.dumps(run(v, args.iters, args.per_class, args.seed)), flush=True)


if __name__ == "__main__":
    main()
