"""Recon for the desk-scale convergence grid: generate the master dataset,
probe per-epoch training cost at N=2000 for both families, then run one full
DeepONet N=2000 cell to see where the held-out error lands."""
import os
import resource
import time

import numpy as np

from tdcrop.dataset import generate_dataset, load_dataset, save_dataset, split_dataset
from tdcrop.eval import StudyConfig, evaluate_model, _cell_schedule, _nested_subset
from tdcrop.neuralops import init_model
from tdcrop.training import TrainConfig, train

MASTER = "/root/pkg/studies/master_2500.tdcrds"
os.makedirs("/root/pkg/studies", exist_ok=True)

t0 = time.perf_counter()
if os.path.exists(MASTER):
    master = load_dataset(MASTER)
else:
    master = generate_dataset(2500, seed=42)
    save_dataset(master, MASTER)
print(f"master ready ({time.perf_counter()-t0:.0f}s, "
      f"failures={master.manifest['failure_count']})", flush=True)
master = split_dataset(master, 0.2, seed=0)
sub2000 = _nested_subset(master, 2000)

for kind in ("deeponet", "fno"):
    t0 = time.perf_counter()
    train(init_model(kind, seed=0), sub2000,
          TrainConfig(max_epochs=3, batch_size=256, seed=0, window=10,
                      schedule=_cell_schedule(2000)))
    dt = (time.perf_counter() - t0) / 3
    rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1e6
    print(f"{kind} N=2000 bs256: {dt:.2f}s/epoch, peak RSS {rss:.2f} GB", flush=True)

t0 = time.perf_counter()
model = init_model("deeponet", seed=0)
res = train(model, sub2000,
            TrainConfig(max_epochs=2000, batch_size=256, seed=0,
                        schedule=_cell_schedule(2000)))
dt = time.perf_counter() - t0
marks = [res.records[i].rel_l2 for i in range(0, len(res.records),
                                              max(1, len(res.records) // 10))]
rep = evaluate_model(model, master, subset="test")
print(f"deeponet N=2000 cell: stopped {res.stopped_epoch} ({res.reason}) "
      f"{dt:.0f}s train_rel={res.records[-1].rel_l2:.4f} "
      f"TEST={rep.mean_error:.4f} marks={' '.join(f'{m:.3f}' for m in marks)}",
      flush=True)
print("DONE", flush=True)
