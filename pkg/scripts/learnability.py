"""Fully labeled synthetic corpus: encoder model vs TF-IDF baseline.

    python3 scripts/learnability.py --seed 0 --out runs/learnability
"""

import argparse
from pathlib import Path

from mtst import config as C
from mtst import runner


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/learnability")
    args = ap.parse_args()
    cfg = C.with_values(C.preset("synthetic-fast"), seed=args.seed)
    out = Path(args.out)
    model = runner.run_train(cfg, out / "model")
    base = runner.run_baseline(cfg, out / "baseline")
    for name, res in (("model", model), ("baseline", base)):
        rep = res["reports"]["test"]
        print(f"{name:9s} multi F1 {rep.multi['f1_macro']:.4f}  main acc {rep.main['accuracy']:.4f}")


if __name__ == "__main__":
    main()
