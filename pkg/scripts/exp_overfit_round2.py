"""Round 2: N=8 memorization inside budgets (DON 5000 ep, FNO 1500 ep).
Lever: step count and dwell time at low learning rates (bs 2, low peaks,
warm restarts)."""
import time

from tdcrop.dataset import generate_dataset
from tdcrop.neuralops import init_model
from tdcrop.training import LrSchedule, TrainConfig, train

ds = generate_dataset(8, seed=200)


def run(kind, model_seed, epochs, bs, sched, train_seed=4):
    cfg = TrainConfig(max_epochs=epochs, batch_size=bs, seed=train_seed,
                      window=epochs, schedule=sched)
    t0 = time.perf_counter()
    res = train(init_model(kind, seed=model_seed), ds, cfg)
    dt = time.perf_counter() - t0
    marks = [res.records[i].rel_l2 for i in range(0, epochs, max(1, epochs // 8))]
    print(f"{kind} ms{model_seed} ep{epochs} bs{bs} peak{sched.peak} "
          f"w{sched.warmup_fraction} end{sched.end} cyc{sched.cycles} "
          f"-> final={res.records[-1].rel_l2:.5f}  {dt:.0f}s  "
          f"marks={' '.join(f'{m:.4f}' for m in marks)}", flush=True)


# FNO budget 1500
run("fno", 5, 1500, 2, LrSchedule(1e-4, 0.2, 3e-3, 1e-5, 1, 0.7, 1500))
run("fno", 5, 1500, 2, LrSchedule(1e-4, 0.1, 1e-3, 1e-5, 1, 0.7, 1500))
run("fno", 5, 1500, 4, LrSchedule(1e-4, 0.2, 3e-3, 3e-6, 1, 0.7, 1500))
run("fno", 3, 1500, 2, LrSchedule(1e-4, 0.2, 3e-3, 1e-5, 1, 0.7, 1500))

# DeepONet budget 5000
run("deeponet", 5, 5000, 4, LrSchedule(1e-4, 0.1, 5e-4, 1e-5, 1, 0.7, 5000))
run("deeponet", 5, 5000, 2, LrSchedule(1e-4, 0.25, 1e-3, 1e-5, 1, 0.7, 5000))
run("deeponet", 5, 5000, 2, LrSchedule(1e-4, 0.1, 5e-4, 1e-5, 1, 0.7, 5000))
run("deeponet", 5, 5000, 4, LrSchedule(1e-4, 0.2, 1e-3, 1e-5, 2, 0.5, 5000))
print("DONE", flush=True)
