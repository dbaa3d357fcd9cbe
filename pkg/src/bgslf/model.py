from __future__ import annotations

import numpy as np

from .config import TrainConfig
from .dcgru import Seq2Seq
from .graph import MGN, SsuConfig, mgn_forward
from .selection import SelectionResult, select_graph
from .tensor import Tensor, relu


class BGSLF:
    """Graph learner plus forecaster sharing one parameter dictionary.

    ``segments`` is the cached (S, N, D, P) graph-learner input; it is a buffer,
    not a trainable parameter.
    """

    def __init__(self, cfg: TrainConfig, segments: np.ndarray, num_features: int | None = None):
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype)
        self.segments = np.asarray(segments, dtype=dtype)
        s, n, d, p = self.segments.shape
        self.num_nodes = n
        self.num_features = num_features or d
        rng = np.random.default_rng(cfg.seed)
        self.mgn = MGN(s, n, d * p, cfg.num_graphs, cfg.mgn_hidden, cfg.kernel_width, rng, dtype)
        self.seq = Seq2Seq(self.num_features, cfg.hidden, rng, dtype)
        self.params: dict[str, Tensor] = {**self.mgn.params, **self.seq.params}
        self.ssu_cfg = SsuConfig(cfg.alpha, cfg.eps, cfg.redefine_grad, cfg.ssu_leak)

    def graph_set(self) -> Tensor:
        a = mgn_forward(self.segments, self.params, self.cfg.activation, self.ssu_cfg)
        if self.cfg.activation == "tanh":
            # diffusion needs non-negative weights
            a = relu(a)
        return a

    def forward(self, inputs, targets=None, teacher_forcing_ratio: float = 0.0,
                rng=None, graphs: Tensor | None = None) -> tuple[Tensor, SelectionResult]:
        graphs = self.graph_set() if graphs is None else graphs
        sel = select_graph(inputs, graphs.data)
        pred = self.seq(inputs, graphs[sel.index], self.cfg.output_len, targets, teacher_forcing_ratio, rng)
        return pred, sel

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if k not in state:
                raise KeyError(f"missing parameter {k!r}")
            if state[k].shape != p.shape:
                raise ValueError(f"parameter {k!r}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)


def count_parameters(model) -> int:
    params = model.params if hasattr(model, "params") else model
    return int(sum(p.size for p in params.values()))
