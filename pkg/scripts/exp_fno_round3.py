"""Round 3: FNO N=8 memorization within 1500 epochs. Levers: warmup length,
anneal depth, peak height, batch size, model seed. One 3000-epoch diagnostic
shows where the current best config would cross 1%."""
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
    first_below = next((r.epoch for r in res.records if r.rel_l2 < 0.01), None)
    print(f"{kind} ms{model_seed} ep{epochs} bs{bs} peak{sched.peak} "
          f"w{sched.warmup_fraction} end{sched.end} cyc{sched.cycles} "
          f"-> final={res.records[-1].rel_l2:.5f} cross1%={first_below} {dt:.0f}s "
          f"marks={' '.join(f'{m:.4f}' for m in marks)}", flush=True)


run("fno", 5, 1500, 4, LrSchedule(1e-4, 0.05, 3e-3, 1e-6, 1, 0.7, 1500))
run("fno", 5, 1500, 4, LrSchedule(1e-4, 0.1, 5e-3, 1e-6, 1, 0.7, 1500))
run("fno", 5, 1500, 4, LrSchedule(1e-4, 0.1, 3e-3, 1e-6, 2, 0.5, 1500))
run("fno", 7, 1500, 4, LrSchedule(1e-4, 0.2, 3e-3, 3e-6, 1, 0.7, 1500))
run("fno", 11, 1500, 4, LrSchedule(1e-4, 0.2, 3e-3, 3e-6, 1, 0.7, 1500))
run("fno", 5, 1500, 8, LrSchedule(1e-4, 0.1, 3e-3, 1e-6, 1, 0.7, 1500))
run("fno", 5, 1500, 4, LrSchedule(1e-4, 0.05, 2e-3, 1e-6, 1, 0.7, 1500))
run("fno", 1, 1500, 4, LrSchedule(1e-4, 0.1, 3e-3, 1e-6, 1, 0.7, 1500))
# diagnostic: same shape, double budget - where does 1% fall?
run("fno", 5, 3000, 4, LrSchedule(1e-4, 0.1, 3e-3, 1e-6, 1, 0.7, 3000))
print("DONE", flush=True)
