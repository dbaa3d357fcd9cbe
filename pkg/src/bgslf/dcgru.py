"""One-step diffusion convolution, the DCGRU cell and the encoder-decoder forecaster."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _shape_error, concat, linear, matmul, sigmoid, swap_last, tanh

DEGREE_FLOOR = 1e-8


@dataclass(frozen=True)
class DegreeNormPair:
    out_norm: np.ndarray  # D_O^-1 A
    in_norm: np.ndarray   # D_I^-1 A, taken as row-normalized A^T


def _row_normalize_np(a: np.ndarray) -> np.ndarray:
    deg = a.sum(axis=1, keepdims=True)
    live = deg >= DEGREE_FLOOR
    return np.where(live, a / np.where(live, deg, 1.0), 0.0)


def degree_normalize(a) -> DegreeNormPair:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {a.shape}")
    if np.any(a < 0):
        raise ValueError("adjacency has negative entries")
    return DegreeNormPair(_row_normalize_np(a), _row_normalize_np(a.T))


def row_normalize(a: Tensor) -> Tensor:
    """Differentiable row normalization; rows with degree below 1e-8 become zero."""
    ad = a.data
    if ad.ndim != 2:
        raise _shape_error("row_normalize", ad.shape)
    if np.any(ad < 0):
        raise ValueError("adjacency has negative entries")
    deg = ad.sum(axis=1, keepdims=True)
    live = deg >= DEGREE_FLOOR
    safe = np.where(live, deg, 1.0)
    out = np.where(live, ad / safe, 0.0).astype(ad.dtype, copy=False)

    def backward(g):
        inner = np.sum(g * out, axis=1, keepdims=True)
        return (np.where(live, (g - inner) / safe, 0.0).astype(ad.dtype, copy=False),)

    return Tensor._result(out, (a,), backward, "row_normalize")


def supports(a: Tensor) -> tuple[Tensor, Tensor]:
    """(D_O^-1 A, D_I^-1 A) as tensors on the tape."""
    return row_normalize(a), row_normalize(swap_last(a))


def diffusion_conv(x: Tensor, a, w0: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    """X w0 + (D_O^-1 A X) w1 + (D_I^-1 A X) w2 for X of shape (N, F) or (B, N, F)."""
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=x.dtype))
    if a.shape[-1] != x.shape[-2]:
        raise _shape_error("diffusion_conv", a.shape, x.shape)
    if not (w0.shape == w1.shape == w2.shape) or w0.shape[0] != x.shape[-1]:
        raise _shape_error("diffusion_conv weights", x.shape, w0.shape, w1.shape, w2.shape)
    a_out, a_in = supports(a)
    return matmul(x, w0) + matmul(matmul(a_out, x), w1) + matmul(matmul(a_in, x), w2)


GATES = ("r", "u", "c")


class DCGRUCell:
    """GRU whose gate transforms are one-step diffusion convolutions.

    Parameters are stored per gate as ``w0``, ``w1``, ``w2`` (input width x hidden)
    and ``b`` (hidden,).
    """

    def __init__(self, prefix: str, input_dim: int, hidden: int, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_dim = input_dim
        self.hidden = hidden
        width = input_dim + hidden
        bound = 1.0 / np.sqrt(3 * width)
        self.params: dict[str, Tensor] = {}
        for q in GATES:
            for k in range(3):
                name = f"{prefix}.{q}.w{k}"
                self.params[name] = Tensor(rng.uniform(-bound, bound, (width, hidden)).astype(dtype),
                                           requires_grad=True, name=name)
            # reset/update biases start at 1 so early steps lean on the carried state
            init = 1.0 if q in ("r", "u") else 0.0
            name = f"{prefix}.{q}.b"
            self.params[name] = Tensor(np.full(hidden, init, dtype=dtype), requires_grad=True, name=name)
        self.prefix = prefix

    def gate(self, q: str) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        p = self.params
        return tuple(p[f"{self.prefix}.{q}.{k}"] for k in ("w0", "w1", "w2", "b"))

    def stacked(self):
        """Weights rearranged so one matmul evaluates all three diffusion terms.

        [Z, Ao Z, Ai Z] @ [w0; w1; w2] equals Z w0 + Ao Z w1 + Ai Z w2.  The reset and
        update gates share inputs, so their stacks sit side by side.
        """
        r0, r1, r2, rb = self.gate("r")
        u0, u1, u2, ub = self.gate("u")
        c0, c1, c2, cb = self.gate("c")
        w_ru = concat([concat([r0, r1, r2], 0), concat([u0, u1, u2], 0)], 1)
        b_ru = concat([rb, ub], 0)
        w_c = concat([c0, c1, c2], 0)
        return w_ru, b_ru, w_c, cb

    def __call__(self, x: Tensor, h: Tensor, graph_supports, stacked=None) -> Tensor:
        return dcgru_cell(x, h, graph_supports, self, stacked)


def _diffuse(z: Tensor, a_out: Tensor, a_in: Tensor) -> Tensor:
    return concat([z, matmul(a_out, z), matmul(a_in, z)], -1)


def dcgru_cell(x: Tensor, h: Tensor, graph_supports, cell: DCGRUCell, stacked=None) -> Tensor:
    """One recurrent step.  ``graph_supports`` is an adjacency tensor or a (D_O^-1 A, D_I^-1 A) pair."""
    if isinstance(graph_supports, tuple):
        a_out, a_in = graph_supports
    else:
        a_out, a_in = supports(graph_supports if isinstance(graph_supports, Tensor)
                               else Tensor(np.asarray(graph_supports, dtype=h.dtype)))
    if x.shape[:-1] != h.shape[:-1] or x.shape[-1] + h.shape[-1] != cell.input_dim + cell.hidden:
        raise _shape_error("dcgru_cell", x.shape, h.shape)
    w_ru, b_ru, w_c, b_c = stacked if stacked is not None else cell.stacked()
    hid = cell.hidden
    ru = sigmoid(linear(_diffuse(concat([x, h], -1), a_out, a_in), w_ru, b_ru))
    r = ru[..., :hid]
    u = ru[..., hid:]
    c = tanh(linear(_diffuse(concat([x, r * h], -1), a_out, a_in), w_c, b_c))
    return u * h + (1.0 - u) * c


class Seq2Seq:
    """Encoder and decoder DCGRU cells plus a per-node affine read-out (hidden -> D)."""

    def __init__(self, num_features: int, hidden: int = 64, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.num_features = num_features
        self.hidden = hidden
        self.encoder = DCGRUCell("encoder", num_features, hidden, rng, dtype)
        self.decoder = DCGRUCell("decoder", num_features, hidden, rng, dtype)
        bound = 1.0 / np.sqrt(hidden)
        self.params: dict[str, Tensor] = {**self.encoder.params, **self.decoder.params}
        self.params["proj.weight"] = Tensor(rng.uniform(-bound, bound, (hidden, num_features)).astype(dtype),
                                            requires_grad=True, name="proj.weight")
        self.params["proj.bias"] = Tensor(np.zeros(num_features, dtype=dtype), requires_grad=True,
                                          name="proj.bias")

    def __call__(self, inputs, adjacency, output_len: int = 12, targets=None,
                 teacher_forcing_ratio: float = 0.0, rng=None) -> Tensor:
        return seq2seq_forward(self, inputs, adjacency, output_len, targets, teacher_forcing_ratio, rng)


def seq2seq_forward(model: Seq2Seq, inputs, adjacency, output_len: int = 12, targets=None,
                    teacher_forcing_ratio: float = 0.0, rng=None) -> Tensor:
    """Encode (B, T_in, N, D) inputs, then decode ``output_len`` steps -> (B, T_out, N, D).

    The decoder starts from a zero input and feeds back its own projections; with
    probability ``teacher_forcing_ratio`` it is fed the ground-truth step instead.
    """
    dtype = model.params["proj.weight"].dtype
    x = np.asarray(inputs, dtype=dtype)
    bsz, t_in, n, d = x.shape
    adj = adjacency if isinstance(adjacency, Tensor) else Tensor(np.asarray(adjacency, dtype=dtype))
    sup = supports(adj)
    h = Tensor(np.zeros((bsz, n, model.hidden), dtype=dtype))
    enc_w = model.encoder.stacked()
    for t in range(t_in):
        h = dcgru_cell(Tensor(x[:, t]), h, sup, model.encoder, enc_w)
    dec_w = model.decoder.stacked()
    w_out, b_out = model.params["proj.weight"], model.params["proj.bias"]
    step_in = Tensor(np.zeros((bsz, n, d), dtype=dtype))
    outs = []
    for t in range(output_len):
        h = dcgru_cell(step_in, h, sup, model.decoder, dec_w)
        y = linear(h, w_out, b_out)
        outs.append(y.reshape(bsz, 1, n, d))
        step_in = y
        if targets is not None and teacher_forcing_ratio > 0 and rng is not None:
            if rng.random() < teacher_forcing_ratio:
                step_in = Tensor(np.asarray(targets, dtype=dtype)[:, t])
    return concat(outs, 1)
