"""Look inside one window's graph: softmax scores, decay and row sums.

Run with ``python3 demos/adjacency_inspection.py``.
"""
# %%
import numpy as np

from fcstg import FCSTGNN, ModelConfig
from fcstg.data import dataset_from, synth_dedt

np.set_printoptions(precision=3, suppress=True, linewidth=120)
manifest, splits = synth_dedt(seed=1, N=4, L=24, per_class=20, f=6)
ds = dataset_from(manifest, splits)
model = FCSTGNN(ModelConfig(delta=0.5), manifest.N, manifest.L, rng=0)
print("windows:", model.plan.windows)

# %%
# Nodes are ordered (patch, sensor).  With M=2 and N=4 each window graph has
# 8 nodes: the first four are patch t, the last four patch t+1.
x = ds.split("train")[0][:1]
post, pre = model.adjacency(x, branch=0, return_pre_decay=True)
pre, post = pre.data[0, 0], post.data[0, 0]
print("pre-decay rows sum to", pre.sum(axis=1))
print(pre)

# %%
# Decay scales the off-diagonal (cross-patch) blocks by delta=0.5 and leaves
# the within-patch blocks alone.  Rows are not renormalised afterwards.
print(post)
print("post-decay row sums:", post.sum(axis=1))
print("cross block ratio:", np.unique(np.round(post[:4, 4:] / pre[:4, 4:], 12)))
