"""Round 6: FNO N=8 within 1500 epochs. Rounds 3-5 best sit at 0.0101-0.0116
(ms0/ts4, ms5/ts7, ms5/ts2) — cross the near-miss model seeds with the
near-miss train seeds, and finish the unexplored model-seed axis."""
import time

from tdcrop.dataset import generate_dataset
from tdcrop.neuralops import init_model
from tdcrop.training import LrSchedule, TrainConfig, train

DS = generate_dataset(8, seed=200)
BEST = LrSchedule(1e-4, 0.1, 5e-3, 1e-6, 1, 0.7, 1500)


def run(model_seed, train_seed, bs=4, sched=BEST, epochs=1500):
    cfg = TrainConfig(max_epochs=epochs, batch_size=bs, seed=train_seed,
                      window=epochs, schedule=sched)
    t0 = time.perf_counter()
    res = train(init_model("fno", seed=model_seed), DS, cfg)
    dt = time.perf_counter() - t0
    first_below = next((r.epoch for r in res.records if r.rel_l2 < 0.01), None)
    print(f"ms{model_seed} ts{train_seed} bs{bs} "
          f"peak{sched.peak} w{sched.warmup_fraction} end{sched.end} "
          f"-> final={res.records[-1].rel_l2:.5f} cross1%={first_below} {dt:.0f}s",
          flush=True)


# cross the near-miss axes
for ts in (0, 1, 2, 3, 5, 6, 7, 8, 9):
    run(0, ts)
# unexplored model seeds at ts4
for ms in (4, 6, 7, 8, 9):
    run(ms, 4)
print("DONE", flush=True)
