import numpy as np, time, itertools, json
from subbit.arch import make_preset
from subbit.data import synthetic_dataset
from subbit.optim import TrainConfig
from subbit.train import QuantSpec, train

def run(noise, classes, size, ntr, epochs, batch, tau, seeds=(1,2,3)):
    arch = make_preset("tiny3")
    # patch input geometry
    arch.in_size = size
    arch.in_channels = 1
    arch.classes = classes
    arch.layers[-1].c_out = classes
    res = {}
    for mode in ("snn", "vanilla"):
        accs, flips = [], []
        for seed in seeds:
            data = synthetic_dataset(seed, ntr, 400, classes=classes, channels=1, size=size, noise=noise)
            cfg = TrainConfig(epochs=epochs, batch_size=batch)
            rec, net, _ = train(arch, data, cfg, QuantSpec(mode=mode, tau=tau), seed=seed, snapshot_subsets=False)
            accs.append(rec.final_val_acc)
            flips.append(sum(e["flips"] for e in rec.epochs))
        res[mode] = (float(np.mean(accs)), accs, flips)
    return res

t0 = time.time()
for noise, classes, size, ntr, epochs, batch in [
    (2.0, 6, 10, 800, 40, 32),
    (2.5, 6, 10, 800, 40, 32),
    (2.0, 8, 10, 1000, 40, 32),
]:
    r = run(noise, classes, size, ntr, epochs, batch, tau=5)
    print(json.dumps({"noise": noise, "classes": classes, "size": size, "ntr": ntr,
                      "epochs": epochs, "snn": r["snn"], "vanilla": r["vanilla"],
                      "elapsed": round(time.time()-t0,1)}))
