#!/usr/bin/env python3
"""Train architecture variants over several seeds on the separable desk
cohort and print the resulting mean-AUC ladder, best variant first."""

import argparse

from neurocircuit.cv import compare_variants
from neurocircuit.model import VARIANTS, desk_dims, pipeline_for
from neurocircuit.presets import desk_preset
from neurocircuit.synth import generate_cohort, synth_preset


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS),
                    choices=list(VARIANTS), help="variants to compare")
    ap.add_argument("--seeds", nargs="+", type=int, default=[1, 2, 3, 4, 5],
                    help="one training per variant per seed")
    ap.add_argument("--jobs", type=int, default=1,
                    help="parallel training processes")
    args = ap.parse_args()

    cohort = generate_cohort(synth_preset("desk-strong"))
    table = compare_variants(cohort, desk_dims(), pipeline_for("desk"),
                             desk_preset().train, tuple(args.variants),
                             seeds=tuple(args.seeds), jobs=args.jobs)
    width = max(len(v) for v in table)
    ranked = sorted(table.items(), key=lambda kv: -kv[1]["mean_auc"])
    for variant, stats in ranked:
        per_seed = " ".join(f"{a:.3f}" for a in stats["auc_per_seed"])
        print(f"{variant:<{width}}  mean_auc={stats['mean_auc']:.4f}  "
              f"per_seed=[{per_seed}]")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
