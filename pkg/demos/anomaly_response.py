"""How each model reacts to a single injected outlier.

Trains every model kind briefly on the anomaly stream and prints NLL and
total variance in a window around the spike.
"""

import numpy as np

from latenttrack import experiment
from latenttrack.config import MODEL_KINDS, ExperimentConfig

for kind in MODEL_KINDS:
    cfg = ExperimentConfig(model=kind, synth_kind="anomaly_spike", synth_length=1500, window=64, lr=1e-2,
                           warmup_stateful=40, warmup_static=40, epochs=2, k_eval=50, seeds=[0])
    stream = experiment.load_data(cfg)
    model = experiment.build_model(cfg, stream.x_dim, 0)
    model, _ = experiment.train_model(cfg, model, stream, 0)
    s = experiment.evaluate_model(cfg, model, stream, 0)
    i = stream.manifest["anomaly_index"] - stream.split
    print(kind)
    print("  nll     ", np.array2string(s.nll[i - 2 : i + 4], precision=2))
    print("  var_tot ", np.array2string(s.var_tot[i - 2 : i + 4], precision=3))
