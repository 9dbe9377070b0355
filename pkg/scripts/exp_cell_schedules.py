"""Pick stable cell schedules for the study grid. The draft schedule
(peak 3e-3, warmup 0.3) diverged for DeepONet at N=2000/bs256 once lr passed
~2.4e-3, so probe cooler peaks: truncated runs with the plateau stop disabled,
train-rel marks every 50 epochs, plus a held-out check at the probe end."""
import time

from tdcrop.dataset import load_dataset, split_dataset
from tdcrop.eval import _nested_subset, evaluate_model
from tdcrop.neuralops import init_model
from tdcrop.training import LrSchedule, TrainConfig, train

master = split_dataset(load_dataset("/root/pkg/studies/master_2500.tdcrds"),
                       0.2, seed=0)
SUB = _nested_subset(master, 2000)


def probe(kind, sched, epochs, seed=0):
    t0 = time.perf_counter()
    model = init_model(kind, seed=seed)
    cfg = TrainConfig(max_epochs=epochs, batch_size=256, seed=seed,
                      window=epochs, schedule=sched)
    try:
        res = train(model, SUB, cfg)
    except Exception as exc:
        print(f"{kind} peak{sched.peak} w{sched.warmup_fraction} "
              f"h{sched.horizon} -> ABORT {type(exc).__name__}: {exc}",
              flush=True)
        return
    dt = time.perf_counter() - t0
    marks = " ".join(f"{r.rel_l2:.3f}" for r in res.records[::50])
    test = evaluate_model(model, master, subset="test").mean_error
    print(f"{kind} peak{sched.peak} w{sched.warmup_fraction} h{sched.horizon} "
          f"-> train={res.records[-1].rel_l2:.4f} TEST={test:.4f} {dt:.0f}s "
          f"marks={marks}", flush=True)


# DeepONet: horizon 2000, probe the first 600 epochs (warmup + early anneal)
probe("deeponet", LrSchedule(1e-4, 0.10, 1.2e-3, 1e-5, 1, 0.7, 2000), 600)
probe("deeponet", LrSchedule(1e-4, 0.10, 8e-4, 1e-5, 1, 0.7, 2000), 600)
probe("deeponet", LrSchedule(1e-4, 0.15, 1.5e-3, 1e-5, 1, 0.7, 2000), 600)
# FNO: horizon 1000, probe the first 350 epochs
probe("fno", LrSchedule(1e-4, 0.10, 3e-3, 1e-5, 1, 0.7, 1000), 350)
probe("fno", LrSchedule(1e-4, 0.10, 2e-3, 1e-5, 1, 0.7, 1000), 350)
probe("fno", LrSchedule(1e-4, 0.10, 1.2e-3, 1e-5, 1, 0.7, 1000), 350)
print("PROBES DONE", flush=True)
