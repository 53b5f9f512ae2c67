"""Walkthrough: train a structured latent tracker on a regime-switching stream.

Run with ``python3 demos/regime_switch_walkthrough.py``. Takes one to two
minutes on one core. Prints the uncertainty decomposition around the first regime
switch inside the evaluation segment.
"""

import numpy as np

from latenttrack import experiment, metrics
from latenttrack.config import ExperimentConfig

# desk-scale schedule used by the acceptance suite
cfg = ExperimentConfig(model="lt_structured", synth_length=5000, window=64, lr=1e-2, warmup_stateful=165,
                       epochs=6, k_eval=50, seeds=[0])
stream = experiment.load_data(cfg)
print("stream:", len(stream), "steps, train split", stream.split, "switch points", stream.manifest["switch_points"])

model = experiment.build_model(cfg, stream.x_dim, seed=0)
print("parameters:", model.count_params())

model, log = experiment.train_model(cfg, model, stream, seed=0)
# per-step training NLL by epoch (the ELBO mixes in a KL weight that ramps up)
for e in range(cfg.epochs):
    nll = [r.nll for r in log.records if r.epoch == e]
    print("epoch %d: mean training NLL %.3f" % (e, np.mean(nll)))

series = experiment.evaluate_model(cfg, model, stream, seed=0)
print("NLL summary:", {k: round(v, 3) for k, v in metrics.temporal_summary(series.nll).items()})

# look at the variance split around the next switch after the split point
switch = next(s for s in stream.manifest["switch_points"] if s > stream.split) - stream.split
print("\n  t   nll    var_alea  var_epi")
for t in range(switch - 3, switch + 8):
    print("%4d %6.2f %9.4f %8.4f" % (t, series.nll[t], series.var_alea[t], series.var_epi[t]))
