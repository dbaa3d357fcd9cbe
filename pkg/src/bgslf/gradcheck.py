"""Finite-difference verification suite for the tensor engine, the SSU and the full model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import data as dp
from . import tensor as T
from .config import TrainConfig
from .dcgru import row_normalize
from .graph import ssu_derivative, ssu_forward, ssu_grad, thresholds
from .metrics import masked_mae_loss
from .model import BGSLF


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    note: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tol)

    def line(self) -> str:
        status = "ok  " if self.passed else "FAIL"
        note = f"  ({self.note})" if self.note else ""
        return f"{status} {self.name:<32} max_rel_err={self.error:.3e}  tol={self.tol:.0e}{note}"


# fixed operands for the op checks
_fixed_rng = np.random.default_rng(1234)
_FIXED_3x4 = _fixed_rng.standard_normal((3, 4))
_FIXED_3x8 = _fixed_rng.standard_normal((3, 8))
_FIXED_3x3 = _fixed_rng.standard_normal((3, 3))
_FIXED_b = _fixed_rng.standard_normal((2, 3, 2))


def _away_from_zero(rng, shape, low=0.1, high=1.5):
    return rng.uniform(low, high, shape) * rng.choice([-1.0, 1.0], shape)


def tensor_op_checks(rng=None, tol: float = 1e-6) -> list[CheckResult]:
    rng = rng if rng is not None else np.random.default_rng(0)
    fdc = T.finite_diff_check
    b = rng.standard_normal((3, 4))
    w = rng.standard_normal((4, 2))
    pos = rng.uniform(0.5, 2.0, (3, 4))
    cases = {
        "add": (lambda x: T.tsum(x + b), rng.standard_normal((3, 4))),
        "add_leading_broadcast": (lambda x: T.tsum(T.Tensor(_FIXED_3x4) + x), rng.standard_normal(4)),
        "sub": (lambda x: T.tsum((b - x) * x), rng.standard_normal((3, 4))),
        "mul": (lambda x: T.tsum(x * x * b), rng.standard_normal((3, 4))),
        "div": (lambda x: T.tsum(b / x), pos),
        "matmul": (lambda x: T.tsum(T.matmul(x, w) * T.matmul(x, w)), rng.standard_normal((3, 4))),
        "matmul_batched": (lambda x: T.tsum(T.tanh(T.matmul(x, T.Tensor(_FIXED_b)))),
                           rng.standard_normal((3, 3))),
        "sigmoid": (lambda x: T.tsum(T.sigmoid(x) * b), rng.standard_normal((3, 4))),
        "tanh": (lambda x: T.tsum(T.tanh(x) * b), rng.standard_normal((3, 4))),
        "relu": (lambda x: T.tsum(T.relu(x) * b), _away_from_zero(rng, (3, 4))),
        "exp": (lambda x: T.tsum(T.exp(x) * b), rng.standard_normal((3, 4))),
        "abs": (lambda x: T.tsum(T.tabs(x) * b), _away_from_zero(rng, (3, 4))),
        "concat_transpose": (lambda x: T.tsum(T.concat([x, T.transpose(x).reshape(3, 4)], 1)
                                               * T.Tensor(_FIXED_3x8)), rng.standard_normal((3, 4))),
        "sum_mean_axes": (lambda x: T.tsum(T.mean(x * x, axis=0) * T.Tensor(b[0])) + T.tsum(x, axis=1).sum(),
                          rng.standard_normal((3, 4))),
        "take": (lambda x: T.tsum(x[1] * x[1:, 2:].sum()), rng.standard_normal((3, 4))),
        "linear": (lambda x: T.tsum(T.sigmoid(T.linear(x, T.Tensor(w), T.Tensor(w[0])))),
                   rng.standard_normal((3, 4))),
        "row_normalize": (lambda x: T.tsum(row_normalize(x) * T.Tensor(_FIXED_3x3)),
                          rng.uniform(0.1, 1.0, (3, 3))),
    }
    out = []
    for name, (fn, x) in cases.items():
        out.append(CheckResult(f"op:{name}", fdc(fn, x), tol))
    return out


def conv_checks(rng=None, tol: float = 1e-5) -> list[CheckResult]:
    rng = rng if rng is not None else np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 5, 6))
    k = rng.standard_normal((4, 3, 3, 3))
    bias = rng.standard_normal(4)
    probe = rng.standard_normal((2, 4, 5, 6))

    def wrt_input(xt):
        return T.tsum(T.conv2d(xt, T.Tensor(k), T.Tensor(bias)) * T.Tensor(probe))

    def wrt_kernel(kt):
        return T.tsum(T.conv2d(T.Tensor(x), kt, T.Tensor(bias)) * T.Tensor(probe))

    def wrt_bias(bt):
        return T.tsum(T.conv2d(T.Tensor(x), T.Tensor(k), bt) * T.Tensor(probe))

    return [
        CheckResult("op:conv2d_input", T.finite_diff_check(wrt_input, x), tol),
        CheckResult("op:conv2d_kernel", T.finite_diff_check(wrt_kernel, k), tol),
        CheckResult("op:conv2d_bias", T.finite_diff_check(wrt_bias, bias), tol),
    ]


def ssu_analytic_check(alphas=(0.25, 1.0, 4.0), eps: float = 0.05, tol: float = 1e-6,
                       points: int = 2000, h: float = 1e-6) -> list[CheckResult]:
    out = []
    for a in alphas:
        sup, inf = thresholds(a, eps)
        x = np.linspace(sup + 1e-3, inf - 1e-3, points)
        numeric = (ssu_forward(x + h, a) - ssu_forward(x - h, a)) / (2 * h)
        err = np.max(np.abs(ssu_derivative(x, a) - numeric) / np.maximum(1.0, np.abs(numeric)))
        out.append(CheckResult(f"ssu:analytic(alpha={a:g})", float(err), tol,
                               f"sup={sup:.6f} inf={inf:.6f} eps={eps:g}"))
    return out


def ssu_redefined_check(alphas=(0.25, 1.0, 4.0), eps: float = 0.05, points: int = 1000) -> list[CheckResult]:
    out = []
    for a in alphas:
        sup, inf = thresholds(a, eps)
        lo = np.linspace(0, sup, points + 2)[1:-1]
        hi = np.linspace(inf, 1, points + 2)[1:-1]
        g = ssu_grad(np.concatenate([lo, hi]), a, sup, inf)
        # exact bitwise comparison: report the count of entries that are not 1.0
        bad = int(np.count_nonzero(g != 1.0))
        out.append(CheckResult(f"ssu:redefined(alpha={a:g})", float(bad), 0.5,
                               f"entries != 1.0 on (0,{sup:.4f}) U ({inf:.4f},1)"))
    return out


def micro_model(seed: int = 0, num_nodes: int = 4, num_graphs: int = 2, period: int = 4,
                hidden: int = 5, steps: int = 40, batch: int = 3, window: int = 3):
    """A float64 model and batch small enough for per-coordinate finite differences."""
    rng = np.random.default_rng(seed)
    series = np.cumsum(rng.standard_normal((steps, num_nodes)), axis=0)
    ds = dp.zscore_fit_apply(dp.from_array(series))
    cfg = TrainConfig(period=period, num_graphs=num_graphs, hidden=hidden, mgn_hidden=4,
                      input_len=window, output_len=window, dtype="float64",
                      redefine_grad=False, seed=seed)
    seg = dp.graph_segments(ds, period)
    model = BGSLF(cfg, seg.values)
    b = dp.gather(ds, np.arange(batch), window, window)
    return model, b


def whole_model_check(tol: float = 1e-4, seed: int = 0, h: float = 1e-6) -> list[CheckResult]:
    model, batch = micro_model(seed)

    def loss_fn():
        pred, _ = model.forward(batch.inputs)
        return masked_mae_loss(pred, batch.targets, batch.mask)

    report = T.param_grad_check(loss_fn, model.params, h)
    worst = max(report.values())
    name = max(report, key=report.get)
    return [CheckResult("model:all_parameters", worst, tol,
                        f"{len(report)} tensors, worst {name}; SSU exact derivative")]


def run_suite() -> list[CheckResult]:
    return (tensor_op_checks() + conv_checks() + ssu_analytic_check()
            + ssu_redefined_check() + whole_model_check())
