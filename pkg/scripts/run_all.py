"""Run the shipped experiment configs one after another and print a summary.

    python scripts/run_all.py                      # everything except full MNIST
    python scripts/run_all.py adding100 gradcheck  # a subset
    python scripts/run_all.py --out runs/all --seed 3
"""
import argparse
import json
import math
import time
from pathlib import Path

from indrnn.config import load_config
from indrnn.experiments import run
from indrnn.tasks import stdlib_corpus

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
DEFAULT = ["gradcheck", "equiv", "bench", "adding100", "adding500", "adding500_vanilla",
           "pixels8", "gradflow", "charlm50", "charlm100"]
GAMMAS = (1.0, 2.0, 10.0, math.inf)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("names", nargs="*", default=DEFAULT, help="config names (without .cfg)")
    ap.add_argument("--out", default="runs/all")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--gamma-sweep", action="store_true", help="also run pixels8 at gamma 1, 2, 10, inf")
    args = ap.parse_args()
    jobs = [(n, {}) for n in args.names]
    if args.gamma_sweep:
        jobs += [("pixels8", {"gamma": g}) for g in GAMMAS]
    summary = {}
    for name, over in jobs:
        if args.seed is not None:
            over = dict(over, seed=args.seed)
        cfg = load_config(CONFIGS / f"{name}.cfg", **over)
        if cfg.task == "charlm" and not Path(cfg.corpus).exists():
            Path(cfg.corpus).parent.mkdir(parents=True, exist_ok=True)
            Path(cfg.corpus).write_bytes(stdlib_corpus())
        tag = name + "".join(f"-{k}{v:g}" if isinstance(v, float) else f"-{k}{v}" for k, v in over.items())
        t0 = time.perf_counter()
        res = run(cfg, Path(args.out) / tag)
        wall = time.perf_counter() - t0
        summary[tag] = {"status": res.status, "wall_s": round(wall, 1),
                        **{k: v for k, v in res.report.items() if isinstance(v, (int, float, str, bool))}}
        print(f"{tag}: status {res.status} in {wall:.0f} s")
    Path(args.out).mkdir(parents=True, exist_ok=True)
    with open(Path(args.out) / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=str)
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))


if __name__ == "__main__":
    main()
