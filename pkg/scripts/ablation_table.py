"""Ablation table on the synthetic corpus (one row per setting).

    python3 scripts/ablation_table.py --seed 0 --out runs/ablation
"""

import argparse

from mtst import config as C
from mtst import runner


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--preset", default="synthetic")
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()
    rows, _ = runner.run_ablate(C.with_values(C.preset(args.preset), seed=args.seed), args.out)
    for r in rows:
        f1 = r.get("f1_macro")
        print(f"{r['setting']:22s} acc {r['accuracy']:.4f}  mcc {r['mcc']:.4f}  "
              f"multi F1 {'-' if f1 is None else f'{f1:.4f}'}")


if __name__ == "__main__":
    main()
