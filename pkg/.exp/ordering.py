import numpy as np, json, time, sys
from pathlib import Path
from relightkit.scene import make_dataset
from relightkit.training import TrainConfig, train, TrainingData, load_bundle
from relightkit.evalbench import run_ablation, format_report, mse
from relightkit.training import predict_shadow_image, direct_shadow_image

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1200
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
out = Path(sys.argv[3]) if len(sys.argv) > 3 else Path("/root/pkg/.exp/run1")
out.mkdir(parents=True, exist_ok=True)
data_dir = Path("/root/pkg/.exp/run1/data")
if not (data_dir/"manifest.json").exists():
    make_dataset(24, 3, data_dir, seed=0, viewpoints=1, width=32, height=32)
cks = {}
for method in ("our","2d","p2p"):
    t0=time.time()
    cfg = TrainConfig(steps=steps, z=16, f=8, method=method, seed=seed,
                      eval_every=max(steps//4,1), checkpoint_every=steps)
    cks[method] = train(data_dir, cfg, out/f"{method}_s{seed}")
    print(method, "trained in", round(time.time()-t0,1), "s", flush=True)

report, rows = run_ablation(data_dir, cks, tau_sweep="0.003:0.1:8")
print(format_report(report), flush=True)

# per-image our vs direct win rate
data = TrainingData(data_dir, 0.2)
b,_ = load_bundle(cks["our"])
tau = report["tau"]
wins = 0; tot = 0
for i in data.test_idx:
    v = data.view(i)
    gt = v["lights"][1]["shadow"]
    o = mse(predict_shadow_image(b, v, 0, 1), gt)
    d = mse(direct_shadow_image(v, 1, 16, tau), gt)
    wins += o < d; tot += 1
print("our<direct win rate:", wins, "/", tot, flush=True)
m = report["methods"]
print("our<2d shadow:", m["our"]["shadow_mse"] < m["2d"]["shadow_mse"],
      "our<=p2p relight:", m["our"]["relight_mse"] <= m["p2p"]["relight_mse"], flush=True)
