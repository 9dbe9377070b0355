"""Find N=8 memorization configs that fit inside fixed epoch budgets
(DeepONet 5000, FNO 1500). Prints final train rel_l2 per candidate."""
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
    print(f"{kind} ms{model_seed} ep{epochs} bs{bs} "
          f"h{sched.horizon} peak{sched.peak} end{sched.end} "
          f"-> final={res.records[-1].rel_l2:.5f}  {dt:.0f}s  "
          f"marks={' '.join(f'{m:.4f}' for m in marks)}", flush=True)
    return res.records[-1].rel_l2


# --- FNO budget 1500 (fast, do first) ---
run("fno", 5, 1500, 4, LrSchedule(1e-3, 0.25, 1e-3, 1e-5, 1, 0.7, 1500))
run("fno", 5, 1500, 4, LrSchedule(1e-3, 0.2, 3e-3, 1e-5, 1, 0.7, 1500))
run("fno", 5, 1500, 8, LrSchedule(1e-3, 0.25, 1e-3, 1e-5, 1, 0.7, 1500))

# --- DeepONet budget 5000 ---
run("deeponet", 5, 5000, 4, LrSchedule(1e-3, 0.25, 1e-3, 1e-5, 1, 0.7, 5000))
run("deeponet", 5, 5000, 4, LrSchedule(1e-3, 0.2, 1e-3, 5e-6, 1, 0.7, 5000))
print("DONE", flush=True)
