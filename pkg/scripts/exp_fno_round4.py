"""Round 4: FNO N=8 within 1500 epochs. Push the peak lr higher (progress is
lr-bound) and vary dataset/training seeds at the round-3 best shape."""
import time

from tdcrop.dataset import generate_dataset
from tdcrop.neuralops import init_model
from tdcrop.training import LrSchedule, TrainConfig, train

DS = {s: generate_dataset(8, seed=s) for s in (200, 100, 300, 7)}


def run(ds_seed, model_seed, bs, sched, train_seed=4, epochs=1500):
    cfg = TrainConfig(max_epochs=epochs, batch_size=bs, seed=train_seed,
                      window=epochs, schedule=sched)
    t0 = time.perf_counter()
    res = train(init_model("fno", seed=model_seed), DS[ds_seed], cfg)
    dt = time.perf_counter() - t0
    first_below = next((r.epoch for r in res.records if r.rel_l2 < 0.01), None)
    print(f"ds{ds_seed} ms{model_seed} ts{train_seed} bs{bs} "
          f"peak{sched.peak} w{sched.warmup_fraction} end{sched.end} "
          f"-> final={res.records[-1].rel_l2:.5f} cross1%={first_below} {dt:.0f}s",
          flush=True)


run(200, 5, 4, LrSchedule(1e-4, 0.1, 6e-3, 1e-6, 1, 0.7, 1500))
run(200, 5, 4, LrSchedule(1e-4, 0.1, 8e-3, 1e-6, 1, 0.7, 1500))
run(200, 5, 4, LrSchedule(1e-4, 0.15, 1e-2, 1e-6, 1, 0.7, 1500))
run(200, 5, 4, LrSchedule(1e-4, 0.05, 5e-3, 1e-6, 1, 0.7, 1500))
run(200, 5, 2, LrSchedule(1e-4, 0.1, 5e-3, 1e-6, 1, 0.7, 1500))
run(200, 5, 4, LrSchedule(1e-4, 0.1, 5e-3, 1e-6, 1, 0.7, 1500), train_seed=0)
run(200, 5, 4, LrSchedule(1e-4, 0.1, 5e-3, 1e-6, 1, 0.7, 1500), train_seed=9)
run(100, 5, 4, LrSchedule(1e-4, 0.1, 5e-3, 1e-6, 1, 0.7, 1500))
run(300, 5, 4, LrSchedule(1e-4, 0.1, 5e-3, 1e-6, 1, 0.7, 1500))
run(7, 5, 4, LrSchedule(1e-4, 0.1, 5e-3, 1e-6, 1, 0.7, 1500))
print("DONE", flush=True)
