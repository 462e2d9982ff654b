import numpy as np, json, time
from subbit.arch import ArchitectureSpec, LayerSpec
from subbit.data import synthetic_dataset
from subbit.optim import TrainConfig
from subbit.train import QuantSpec, train
from subbit.kernelspace import SamplingStrategy

def tiny3r(width=32, size=10, classes=8):
    L = []
    L += [LayerSpec("conv", c_in=1, c_out=width, k=3, stride=1, pad=1),
          LayerSpec("bn", c_out=width), LayerSpec("act", fn="relu")]
    for i in range(3):
        L += [LayerSpec("res_save"),
              LayerSpec("conv", c_in=width, c_out=width, k=3, stride=1, pad=1, quantize=True),
              LayerSpec("bn", c_out=width),
              LayerSpec("res_add"),
              LayerSpec("act", fn="relu")]
        if i == 0:
            L.append(LayerSpec("avgpool", k=2))
    L += [LayerSpec("gap"), LayerSpec("flatten"), LayerSpec("fc", c_in=width, c_out=classes)]
    return ArchitectureSpec("tiny3r", 1, size, classes, L)

cfg = TrainConfig(epochs=40, batch_size=32)
seeds = list(range(1, 13))
t0 = time.time()
for tau in (1, 3):
    res = {}
    for strat, name in [(SamplingStrategy.RANDOM_LAYER_SPECIFIC, "specific"),
                        (SamplingStrategy.RANDOM_LAYER_SHARED, "shared")]:
        a = []
        for s in seeds:
            data = synthetic_dataset(s, 1000, 400, classes=8, channels=1, size=10, noise=2.0)
            rec, _, _ = train(tiny3r(), data, cfg, QuantSpec(mode="vanilla", tau=tau, strategy=strat),
                              seed=s, snapshot_subsets=False)
            a.append(round(rec.final_val_acc, 4))
        res[name] = (round(float(np.mean(a)), 4), round(float(np.std(a)), 4), a)
    print(json.dumps({"tau": tau, **res, "t": round(time.time()-t0)}), flush=True)
