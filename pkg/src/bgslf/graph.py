"""Graph learner: multi-graph generation network followed by the smooth sparse unit.

The smooth sparse unit maps a pre-activation matrix ``G`` to an adjacency matrix
``A = a*f(G) / (a*f(G) + f(1 - G))`` with ``f(x) = exp(-1/x)`` for ``x > 0``.
It is exactly 0 for ``G <= 0`` and exactly 1 for ``G >= 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import numpy as np

from .tensor import Tensor, conv2d, custom_unary, linear, relu, sigmoid, tanh

_BUMP_FLOOR = 1e-12


def f_bump(x):
    """exp(-1/x) for x > 0, 0 otherwise (vectorized)."""
    x = np.asarray(x, dtype=np.float64)
    pos = x >= _BUMP_FLOOR
    safe = np.where(pos, x, 1.0)
    out = np.where(pos, np.exp(-1.0 / safe), 0.0)
    return out if out.ndim else float(out)


def ssu_forward(g, alpha: float = 1.0):
    """Smooth sparse activation, elementwise."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    g = np.asarray(g, dtype=np.float64)
    num = alpha * f_bump(g)
    den = num + f_bump(1.0 - g)
    # den > 0 everywhere: at least one of g, 1-g is >= 0.5
    out = num / den
    return out if np.ndim(out) else float(out)


def ssu_derivative(x, alpha: float = 1.0):
    """Exact derivative of :func:`ssu_forward`.

    With a = alpha*f(x) and b = f(1-x) the quotient rule and f'(x) = f(x)/x**2
    give phi' = phi * (1 - phi) * (1/x**2 + 1/(1-x)**2) on (0, 1), zero elsewhere.
    """
    x = np.asarray(x, dtype=np.float64)
    inside = (x > 0) & (x < 1)
    xs = np.where(inside, x, 0.5)
    phi = ssu_forward(xs, alpha)
    d = phi * (1.0 - phi) * (1.0 / xs**2 + 1.0 / (1.0 - xs) ** 2)
    out = np.where(inside, d, 0.0)
    return out if out.ndim else float(out)


def g_ratio(x):
    """f(1-x)/f(x) = exp(1/x - 1/(1-x)), strictly decreasing on (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    return np.exp(1.0 / x - 1.0 / (1.0 - x))


def _g_inverse(target: float, tol: float = 1e-12) -> float:
    # solve 1/x - 1/(1-x) = log(target) by bisection; the left side is decreasing
    log_t = np.log(target)
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if 1.0 / mid - 1.0 / (1.0 - mid) > log_t:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def thresholds(alpha: float, eps: float) -> tuple[float, float]:
    """Return (sup, inf): phi < eps exactly on (0, sup), phi > 1 - eps exactly on (inf, 1)."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not 0 < eps <= 0.5:
        raise ValueError(f"eps must lie in (0, 0.5], got {eps}")
    sup = _g_inverse(alpha * (1.0 / eps - 1.0))
    inf = _g_inverse(alpha * (1.0 / (1.0 - eps) - 1.0))
    return sup, inf


def ssu_grad(x, alpha: float, sup: float, inf: float, leak: float = 0.0):
    """Redefined SSU derivative used during training.

    1 on (0, sup) and (inf, 1), the exact derivative on [sup, inf], and ``leak``
    (0 by default) outside (0, 1).
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.where((x <= 0) | (x >= 1), leak, ssu_derivative(x, alpha))
    out = np.where(((x > 0) & (x < sup)) | ((x > inf) & (x < 1)), 1.0, out)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SsuConfig:
    alpha: float = 1.0
    eps: float = 0.05
    redefine_grad: bool = True
    leak: float = 0.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0 < self.eps <= 0.5:
            raise ValueError(f"eps must lie in (0, 0.5], got {self.eps}")

    @property
    def bounds(self) -> tuple[float, float]:
        return thresholds(self.alpha, self.eps)


def ssu(g: Tensor, cfg: SsuConfig = SsuConfig()) -> Tensor:
    """Differentiable SSU; the backward rule is the redefined one unless disabled."""
    fwd = partial(ssu_forward, alpha=cfg.alpha)
    if cfg.redefine_grad:
        sup, inf = cfg.bounds
        grad = partial(ssu_grad, alpha=cfg.alpha, sup=sup, inf=inf, leak=cfg.leak)
    else:
        grad = partial(ssu_derivative, alpha=cfg.alpha)
    return custom_unary(g, fwd, grad, op="ssu")


ACTIVATIONS = ("ssu", "sigmoid", "tanh")


def activate(g: Tensor, activation: str = "ssu", cfg: SsuConfig = SsuConfig()) -> Tensor:
    if activation == "ssu":
        return ssu(g, cfg)
    if activation == "sigmoid":
        return sigmoid(g)
    if activation == "tanh":
        return tanh(g)
    raise ValueError(f"unknown activation {activation!r}; choose from {ACTIVATIONS}")


def sparsity_report(a, eps: float) -> float:
    a = np.asarray(a)
    return float(np.count_nonzero(a < eps)) / a.size


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class MGN:
    """Conv (S -> R channels, kernel 1 x kw) then two per-node dense layers producing (R, N, N).

    ``segments`` enters as (S, N, D, P) and is viewed as S channels of an N x (D*P) image.
    """

    def __init__(self, num_segments: int, num_nodes: int, in_width: int, num_graphs: int = 2,
                 hidden: int = 16, kernel_width: int = 3, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.num_segments = num_segments
        self.num_nodes = num_nodes
        self.in_width = in_width
        self.num_graphs = num_graphs
        fan_conv = num_segments * kernel_width
        self.params = {
            "mgn.conv.weight": _uniform(rng, fan_conv, (num_graphs, num_segments, 1, kernel_width), dtype),
            "mgn.conv.bias": _uniform(rng, fan_conv, (num_graphs,), dtype),
            "mgn.fc1.weight": _uniform(rng, in_width, (in_width, hidden), dtype),
            "mgn.fc1.bias": _uniform(rng, in_width, (hidden,), dtype),
            "mgn.fc2.weight": _uniform(rng, hidden, (hidden, num_nodes), dtype),
            "mgn.fc2.bias": _uniform(rng, hidden, (num_nodes,), dtype),
        }
        for name, p in self.params.items():
            p.name = name

    def __call__(self, segments) -> Tensor:
        return mgn_preactivation(segments, self.params)


def mgn_preactivation(segments, params: dict[str, Tensor]) -> Tensor:
    """Pre-activation graph stack G of shape (R, N, N)."""
    seg = segments.values if hasattr(segments, "values") else np.asarray(segments)
    if seg.ndim != 4:
        raise ValueError(f"segments must be (S, N, D, P), got shape {seg.shape}")
    s, n, d, p = seg.shape
    w = params["mgn.conv.weight"]
    if w.shape[1] != s:
        raise ValueError(f"conv expects {w.shape[1]} input channels, segments have {s}")
    if params["mgn.fc1.weight"].shape[0] != d * p:
        raise ValueError(f"fc1 expects width {params['mgn.fc1.weight'].shape[0]}, segments give {d * p}")
    if params["mgn.fc2.weight"].shape[1] != n:
        raise ValueError(f"fc2 emits {params['mgn.fc2.weight'].shape[1]} columns for {n} nodes")
    x = Tensor(seg.reshape(s, n, d * p).astype(w.dtype, copy=False))
    h = relu(conv2d(x, w, params["mgn.conv.bias"]))               # (R, N, D*P)
    h = relu(linear(h, params["mgn.fc1.weight"], params["mgn.fc1.bias"]))
    return linear(h, params["mgn.fc2.weight"], params["mgn.fc2.bias"])  # (R, N, N)


def mgn_forward(segments, params: dict[str, Tensor], activation: str = "ssu",
                cfg: SsuConfig = SsuConfig()) -> Tensor:
    """Graph set A of shape (R, N, N) with entries in [0, 1] (in [-1, 1] for tanh)."""
    return activate(mgn_preactivation(segments, params), activation, cfg)


@dataclass(frozen=True)
class GraphSet:
    matrices: np.ndarray  # (R, N, N)
    epoch: int | None = None

    def __len__(self) -> int:
        return self.matrices.shape[0]
