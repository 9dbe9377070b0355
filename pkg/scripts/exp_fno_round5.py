"""Round 5: FNO N=8 within 1500 epochs. The round-3 best (bs4 peak5e-3 w0.1
end1e-6, ds200 ms5 ts4) sits at 0.0116 — just above target — and seed noise
spans ~0.004, so sweep model/train seeds at that recipe, then try refinement
variants: two-cycle restarts, deeper anneal ends, and nearby batch sizes."""
import time

from tdcrop.dataset import generate_dataset
from tdcrop.neuralops import init_model
from tdcrop.training import LrSchedule, TrainConfig, train

DS = {s: generate_dataset(8, seed=s) for s in (200,)}

BEST = LrSchedule(1e-4, 0.1, 5e-3, 1e-6, 1, 0.7, 1500)


def run(ds_seed, model_seed, bs, sched, train_seed=4, epochs=1500):
    cfg = TrainConfig(max_epochs=epochs, batch_size=bs, seed=train_seed,
                      window=epochs, schedule=sched)
    t0 = time.perf_counter()
    res = train(init_model("fno", seed=model_seed), DS[ds_seed], cfg)
    dt = time.perf_counter() - t0
    first_below = next((r.epoch for r in res.records if r.rel_l2 < 0.01), None)
    print(f"ds{ds_seed} ms{model_seed} ts{train_seed} bs{bs} "
          f"peak{sched.peak} w{sched.warmup_fraction} end{sched.end} "
          f"cyc{sched.cycles} g{sched.gamma} "
          f"-> final={res.records[-1].rel_l2:.5f} cross1%={first_below} {dt:.0f}s",
          flush=True)


# train-seed sweep at the best recipe (ts0/4/9 already known: .0158/.0116/.0142)
for ts in (1, 2, 3, 5, 6, 7, 8):
    run(200, 5, 4, BEST, train_seed=ts)
# model-seed sweep at ts4
for ms in (0, 1, 2, 3):
    run(200, ms, 4, BEST)
# refinement variants at ms5 ts4
run(200, 5, 4, LrSchedule(1e-4, 0.1, 5e-3, 1e-6, 2, 0.5, 1500))
run(200, 5, 4, LrSchedule(1e-4, 0.1, 5e-3, 1e-6, 2, 0.6, 1500))
run(200, 5, 4, LrSchedule(1e-4, 0.1, 5e-3, 1e-7, 1, 0.7, 1500))
run(200, 5, 4, LrSchedule(1e-4, 0.1, 5e-3, 3e-7, 1, 0.7, 1500))
run(200, 5, 3, BEST)
run(200, 5, 6, BEST)
print("DONE", flush=True)
