"""Which features can a SCADA detector drop?

Works on the gas-pipeline command-injection surrogate.  It first removes
constant and near-duplicate columns, ranks the rest by information gain, and
then compares dropping the weakest features first against dropping the
strongest first.  Pass a path to the real CSV to use it instead.

    python demos/feature_reduction.py [ics-command-injection.csv]
"""

import sys

from hoids.data import load_csv
from hoids.experiments import reduction_sweep
from hoids.featsel import prune_correlated, rank_features
from hoids.optimizer import QNConfig
from hoids.synthetic import ics_command_injection

if len(sys.argv) > 1:
    ds = load_csv(sys.argv[1], "ics-multi")
    ds = ds.select_columns([n for n in ds.names if n != "address"])
else:
    ds = ics_command_injection(seed=0, with_address=False)

pruned, report = prune_correlated(ds)
print(f"{ds.m} features -> {pruned.m} after pruning")
print("  constant:", ", ".join(report.constant) or "none")

ranking = rank_features(pruned, base=2)
print(f"\nlabel entropy {ranking.label_entropy:.4f} bits; information gain:")
for j in ranking.order:
    print(f"  {ranking.names[j]:<28} {ranking.gains[j]:.4f}")

# 3x5 CV keeps the demo quick; `hoids cv` defaults to 10x10
cfg = QNConfig(max_iters=200)
print(f"\n{'order':<9}{'k':>3}{'recall':>9}{'precision':>11}")
for order in ("low-ig", "high-ig"):
    for row in reduction_sweep(pruned, order, repeats=3, folds=5, cfg=cfg,
                               counts=[pruned.m, 4, 3]):
        r, p = row.result.mean_r, row.result.mean_p
        print(f"{order:<9}{row.n_features:>3}{r:>9.4f}"
              f"{'n/a' if p is None else f'{p:.4f}':>11}")
