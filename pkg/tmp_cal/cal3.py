import numpy as np, json, time
from subbit.arch import make_preset
from subbit.data import synthetic_dataset
from subbit.optim import TrainConfig
from subbit.train import QuantSpec, train
from subbit.kernelspace import SamplingStrategy

def arch_v(widths, size, classes):
    arch = make_preset("tiny3")
    arch.in_size = size; arch.classes = classes; arch.layers[-1].c_out = classes
    # adjust channel widths: conv specs in order stem,q1,q2,q3
    convs = [l for l in arch.layers if l.kind == "conv"]
    bns = [l for l in arch.layers if l.kind == "bn"]
    c_prev = widths[0]
    convs[0].c_out = widths[0]; bns[0].c_out = widths[0]
    for i, c in enumerate(widths[1:], start=1):
        convs[i].c_in = c_prev; convs[i].c_out = c; bns[i].c_out = c
        c_prev = c
    arch.layers[-1].c_in = widths[-1]
    return arch

cfg = TrainConfig(epochs=40, batch_size=32)
seeds = list(range(1, 13))
t0 = time.time()
for tau in (1, 3):
    res = {}
    for strat, name in [(SamplingStrategy.RANDOM_LAYER_SPECIFIC, "specific"),
                        (SamplingStrategy.RANDOM_LAYER_SHARED, "shared")]:
        a = []
        for s in seeds:
            arch = arch_v([16, 32, 32, 64], 10, 8)
            data = synthetic_dataset(s, 1000, 400, classes=8, channels=1, size=10, noise=2.0)
            rec, _, _ = train(arch, data, cfg, QuantSpec(mode="vanilla", tau=tau, strategy=strat),
                              seed=s, snapshot_subsets=False)
            a.append(round(rec.final_val_acc, 4))
        res[name] = (round(float(np.mean(a)), 4), round(float(np.std(a)), 4), a)
    print(json.dumps({"tau": tau, **res, "t": round(time.time()-t0)}), flush=True)
