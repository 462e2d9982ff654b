import numpy as np, json, time
from subbit.arch import make_preset
from subbit.data import synthetic_dataset
from subbit.optim import TrainConfig
from subbit.train import QuantSpec, train
from subbit.kernelspace import SamplingStrategy

def arch8():
    arch = make_preset("tiny3")
    arch.in_size = 10; arch.classes = 8; arch.layers[-1].c_out = 8
    return arch

def data_for(seed):
    return synthetic_dataset(seed, 1000, 400, classes=8, channels=1, size=10, noise=2.0)

cfg = TrainConfig(epochs=40, batch_size=32)
seeds = (1, 2, 3)
t0 = time.time()

# (a) BNN reference band
accs = []
for s in seeds:
    rec, _, _ = train(arch8(), data_for(s), cfg, QuantSpec(mode="bnn"), seed=s, snapshot_subsets=False)
    accs.append(rec.final_val_acc)
print(json.dumps({"bnn_band": accs, "mean": float(np.mean(accs)), "t": round(time.time()-t0)}))

# (c) layer-specific vs shared at tau 1 and 3, vanilla mode
for tau in (1, 3):
    res = {}
    for strat, name in [(SamplingStrategy.RANDOM_LAYER_SPECIFIC, "specific"),
                        (SamplingStrategy.RANDOM_LAYER_SHARED, "shared")]:
        a = []
        for s in seeds:
            rec, _, _ = train(arch8(), data_for(s), cfg,
                              QuantSpec(mode="vanilla", tau=tau, strategy=strat),
                              seed=s, snapshot_subsets=False)
            a.append(rec.final_val_acc)
        res[name] = (float(np.mean(a)), a)
    print(json.dumps({"tau": tau, **res, "t": round(time.time()-t0)}))
