"""A three-level deployment, run in one process with a virtual clock.

Each level gets its own pipeline:

* the control centre runs a multinomial model on every feature;
* substations use the top four features by information gain;
* field devices use a binary normal/abnormal model on PCA components.

Two clients per level replay disjoint slices of the surrogate traffic.  The
server pushes every 30 virtual seconds and retrains every 60 from the
bootstrap data plus the operator-labelled records it receives.

    python demos/hierarchy.py
"""

import numpy as np

from hoids.runtime import ClientSpec, LevelConfig, Scenario, ServerConfig, simulate
from hoids.synthetic import ics_command_injection

ds = ics_command_injection(seed=1, with_address=False)
rng = np.random.default_rng(0)
order = rng.permutation(ds.n)
bootstrap, replay = ds.subset(order[:8000]), ds.subset(order[8000:14000])

pipelines = {"control-centre": "full+multi", "substation": "ig:4+multi",
             "field": "pca:0.95+binary"}
cfg = ServerConfig(levels={lv: LevelConfig(p, push_period=30, retrain_period=60)
                           for lv, p in pipelines.items()}, max_iters=200)

parts = np.array_split(np.arange(replay.n), 6)
clients = [ClientSpec(f"{lv[:4]}-{i}", lv, replay.subset(parts[2 * n + i]))
           for n, lv in enumerate(pipelines) for i in range(2)]
scenario = Scenario(cfg, {lv: bootstrap for lv in pipelines}, clients, tick=1.0,
                    records_per_tick=25)

report = simulate(scenario)
print(report.summary())
for lv, packet in sorted(report.principles.items()):
    print(f"{lv:<15} {packet.principle_id}  {type(packet.model).__name__}  "
          f"inputs: {', '.join(packet.feature_list)}")
