"""Remaining-useful-life regression on synthetic run-to-failure trajectories.

Run with ``python3 demos/rul_degradation.py``.
"""
# %%
import numpy as np

from fcstg import FCSTGNN, ModelConfig, TrainConfig, evaluate, train
from fcstg.data import dataset_from, synth_rul
from fcstg.training import metric_nasa_score, metric_rmse

manifest, splits = synth_rul(seed=0, N=4, L=30, samples=1000, max_rul=60.0)
ds = dataset_from(manifest, splits)
print(manifest.generator["trajectories"], "trajectories,", manifest.splits)

# %%
# A constant guess at the train mean is the bar to beat.
y_train = ds.split("train")[1]
x_test, y_test = ds.split("test")
guess = np.full(len(y_test), y_train.mean())
print(f"mean predictor: rmse {metric_rmse(guess, y_test):.2f}, "
      f"nasa {metric_nasa_score(guess, y_test):.1f}")

# %%
model = FCSTGNN(ModelConfig(head="regression"), manifest.N, manifest.L, rng=0,
                max_rul=manifest.max_rul)
train(model, ds.split("train"), ds.split("val"), TrainConfig(seed=0))
report = evaluate(model, x_test, y_test)
print(f"fc-stgnn:       rmse {report.rmse:.2f}, nasa {report.nasa_score:.1f}")

# %%
# The NASA score punishes late predictions harder than early ones, so its
# ranking can disagree with RMSE near the end of life.
pred = model.predict(x_test).data
late = pred > y_test
print(f"{late.mean():.0%} of test predictions are late")
