"""Self-training gain over the no-self-training ablation across seeds.

    python3 scripts/efficacy.py --seeds 0 1 2 3 4 --out runs/efficacy
    python3 scripts/efficacy.py --set selftrain.from_scratch=false --control

The synthetic preset retrains from a fresh init each round, so the
ablation already matches the final model's training budget. With
``from_scratch=false`` each round continues from the previous weights;
``--control`` then adds a matched-compute run (the same number of
continued-training stages on the gold pool only) to separate what the
pseudo-labels add from what the extra epochs add.
"""

import argparse
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from mtst import config as C
from mtst import runner
from mtst.metrics import write_csv
from mtst.model import init_model
from mtst.selftrain import tau_schedule
from mtst.trainer import evaluate, train


def control_f1(cfg, seed):
    """Initial training then T continued-training stages without pseudo-labels."""
    cfg = runner.resolve(C.with_values(cfg, seed=seed))
    split, schema = runner.load_split(cfg)
    _, fz, mc = runner.build(cfg, split, schema)
    params = init_model(mc, seed)
    params, _ = train(split.labeled, split.validation, params, mc, cfg.train, fz)
    for t in range(1, len(tau_schedule(cfg.selftrain)) + 1):
        params, _ = train(split.labeled, split.validation, params, mc,
                          replace(cfg.train, seed=cfg.train.seed + t), fz)
    return evaluate(params, mc, fz, split.test, cfg.eval.threshold).multi["f1_macro"]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--preset", default="synthetic")
    ap.add_argument("--out", default="runs/efficacy")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--control", action="store_true")
    args = ap.parse_args()

    base = C.apply_overrides(C.preset(args.preset), args.set)
    out = Path(args.out)
    rows = []
    for seed in args.seeds:
        t0 = time.time()
        cfg = C.with_values(base, seed=seed)
        full = runner.run_selftrain(cfg, out / f"seed{seed}" / "full")
        ablated = runner.run_selftrain(C.ablation(cfg, "without_self_training"),
                                       out / f"seed{seed}" / "without_self_training")
        row = {"seed": seed,
               "full_f1": full["reports"]["test"].multi["f1_macro"],
               "no_st_f1": ablated["reports"]["test"].multi["f1_macro"],
               "accepted": "|".join(map(str, full["summary"]["accepted"])),
               "pseudo_acc": "|".join(f"{a:.3f}" for a in full["summary"]["pseudo_label_accuracy"] if a is not None)}
        row["gain"] = row["full_f1"] - row["no_st_f1"]
        if args.control:
            row["control_f1"] = control_f1(base, seed)
        row["seconds"] = round(time.time() - t0, 1)
        print(row, flush=True)
        rows.append(row)
    write_csv(out / "efficacy.csv", rows)
    gains = np.array([r["gain"] for r in rows])
    print(f"mean gain {gains.mean():+.4f} (std {gains.std():.4f}) over {len(rows)} seeds")


if __name__ == "__main__":
    main()
