"""
Learning a graph set and picking one per batch
==============================================

The graph learner reads the training series as daily (here: per-period)
segments of first differences and emits R adjacency matrices.  Each batch
then uses the matrix most aligned with its own node correlation.
"""

import numpy as np

from bgslf import data as dp
from bgslf import synth
from bgslf.graph import MGN, SsuConfig, mgn_forward, sparsity_report
from bgslf.selection import select_graph

series, w_true = synth.diffusion_series(6, 600, seed=1)
ds = dp.zscore_fit_apply(dp.from_array(series))
print("splits:", ds.splits)

# z-score, difference, cut into periods: (S, N, D, P)
seg = dp.graph_segments(ds, period=40)
print("segment tensor:", seg.values.shape, "=", seg.count, "segments of", seg.period, "steps")

s, n, d, p = seg.values.shape
mgn = MGN(s, n, d * p, num_graphs=2, hidden=16, rng=np.random.default_rng(0), dtype=np.float64)
graphs = mgn_forward(seg, mgn.params, "ssu", SsuConfig(alpha=1.0, eps=0.05)).data
print("graph set:", graphs.shape, " range", graphs.min().round(3), graphs.max().round(3))
for r, a in enumerate(graphs):
    print(f"graph {r}: fraction of entries below 0.05 = {sparsity_report(a, 0.05):.2f}")

# selection: cosine between X^T X of the collapsed batch and every candidate
batch = next(dp.window(ds, split="train", batch_size=16))
res = select_graph(batch.inputs, graphs)
print("scores", np.round(res.scores, 4), "-> graph", res.index)

# a candidate proportional to the batch correlation always wins
stacked = np.concatenate([graphs, 3.0 * res.correlation[None]])
print("with X^T X appended ->", select_graph(batch.inputs, stacked).index)
