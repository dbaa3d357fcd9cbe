"""Acceptance gate: one test per criterion, each at its stated tolerance and time budget.

Every test records a PASS/FAIL line that pytest prints in an "acceptance criteria"
section of the terminal summary.
"""

import dataclasses
import math
import time
from pathlib import Path

import numpy as np
import pytest
from test_dcgru import brute_diffusion

from bgslf import checkpoint as ck
from bgslf import cli, gradcheck, synth
from bgslf import data as dp
from bgslf.config import TrainConfig
from bgslf.dcgru import diffusion_conv
from bgslf.graph import sparsity_report, ssu_forward, ssu_grad, thresholds
from bgslf.metrics import masked_mae, masked_mape, masked_rmse
from bgslf.model import BGSLF, count_parameters
from bgslf.optim import lr_at
from bgslf.selection import collapse, cosine_frobenius, select_graph
from bgslf.tensor import Tensor
from bgslf.training import evaluate, evaluate_model, historical_average, train

README = Path(__file__).resolve().parents[1] / "README.md"


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def test_1_ssu_closed_form(acceptance):
    with Timer() as t:
        checks = {}
        rng = np.random.default_rng(1)
        lo = rng.uniform(-5, 0, 1000)
        hi = rng.uniform(1, 5, 1000)
        checks["zero for x<=0"] = all(ssu_forward(np.append(lo, 0.0), a).max() == 0.0 for a in (0.1, 1, 10))
        checks["one for x>=1"] = all(ssu_forward(np.append(hi, 1.0), a).min() == 1.0 for a in (0.1, 1, 10))
        checks["phi(0.5;1)=0.5"] = abs(ssu_forward(0.5, 1.0) - 0.5) < 1e-12
        checks["phi(0.5;3)=0.75"] = abs(ssu_forward(0.5, 3.0) - 0.75) < 1e-12
        x = np.linspace(-0.5, 1.5, 10_000)
        worst = max(np.max(np.abs(ssu_forward(x, a) + ssu_forward(1 - x, 1 / a) - 1)) for a in (0.1, 0.5, 1, 3, 10))
        checks["reflection identity"] = worst < 1e-12
    ok = all(checks.values()) and t.seconds < 1
    acceptance("1 SSU closed form", ok, f"identity err {worst:.1e}, {t.seconds:.2f}s")
    assert ok, checks


def test_2_thresholds(acceptance):
    with Timer() as t:
        sup, inf = thresholds(1.0, 0.5)
        errs = [abs(sup - 0.5), abs(inf - 0.5)]
        for a in (0.25, 1.0, 4.0):
            for eps in (0.05, 0.1):
                s, i = thresholds(a, eps)
                errs += [abs(ssu_forward(s, a) - eps), abs(ssu_forward(i, a) - (1 - eps))]
        monotone = all(
            thresholds(a, eps)[0] > thresholds(b, eps)[0]
            for eps in (0.05, 0.1) for a, b in [(0.25, 1.0), (1.0, 4.0)]
        )
    ok = max(errs) < 1e-9 and monotone and t.seconds < 1
    acceptance("2 thresholds", ok, f"max err {max(errs):.1e}, sup decreasing in alpha: {monotone}, {t.seconds:.2f}s")
    assert ok


def test_3_sparsity_control(acceptance):
    with Timer() as t:
        g = np.random.default_rng(2024).uniform(0, 1, 10_000)
        low = sparsity_report(ssu_forward(g, 0.1), 0.1)
        high = sparsity_report(ssu_forward(g, 10.0), 0.1)
    ok = low > high and t.seconds < 1
    acceptance("3 sparsity control", ok, f"below 0.1: alpha=0.1 -> {low:.4f}, alpha=10 -> {high:.4f}")
    assert ok


def test_4_gradient_checks(acceptance):
    with Timer() as t:
        ops = gradcheck.tensor_op_checks() + gradcheck.conv_checks()
        ssu_a = gradcheck.ssu_analytic_check()
        model = gradcheck.whole_model_check()
        redefined = []
        for a in (0.25, 1.0, 4.0):
            sup, inf = thresholds(a, 0.05)
            x = np.concatenate([np.linspace(0, sup, 5002)[1:-1], np.linspace(inf, 1, 5002)[1:-1]])
            redefined.append(bool(np.all(ssu_grad(x, a, sup, inf) == 1.0)))
    parts = {
        "a": max(r.error for r in ops) < 1e-6,
        "b": max(r.error for r in ssu_a) < 1e-6,
        "c": model[0].error < 1e-4,
        "d": all(redefined),
    }
    ok = all(parts.values()) and t.seconds < 30
    acceptance("4 gradient checks", ok,
               f"ops {max(r.error for r in ops):.1e}, ssu {max(r.error for r in ssu_a):.1e}, "
               f"model {model[0].error:.1e}, redefined==1: {all(redefined)}, {t.seconds:.1f}s")
    assert ok, parts


def test_5_diffusion_oracle(acceptance):
    with Timer() as t:
        rng = np.random.default_rng(55)
        worst = 0.0
        for _ in range(20):
            n = int(rng.integers(1, 6))
            f_in, f_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            a = rng.uniform(size=(n, n)) * (rng.uniform(size=(n, n)) < 0.6)
            x = rng.standard_normal((n, f_in))
            w = [rng.standard_normal((f_in, f_out)) for _ in range(3)]
            got = diffusion_conv(Tensor(x), Tensor(a), *map(Tensor, w)).data
            worst = max(worst, float(np.max(np.abs(got - brute_diffusion(x, a, *w)))))
        x = rng.standard_normal((4, 3))
        w = [rng.standard_normal((3, 2)) for _ in range(3)]
        ident = diffusion_conv(Tensor(x), Tensor(np.eye(4)), *map(Tensor, w)).data
        collapse_ok = np.array_equal(ident, x @ w[0] + x @ w[1] + x @ w[2])
        chain = np.diag(np.ones(4), 1) + np.diag(np.ones(4), -1)
        x5 = rng.standard_normal((5, 3))
        x5b = x5.copy()
        x5b[4] += 7.0
        f = diffusion_conv(Tensor(x5), Tensor(chain), *map(Tensor, w)).data
        g = diffusion_conv(Tensor(x5b), Tensor(chain), *map(Tensor, w)).data
        local_ok = np.array_equal(f[:3], g[:3])
    ok = worst < 1e-10 and collapse_ok and local_ok and t.seconds < 1
    acceptance("5 diffusion oracle", ok,
               f"max err {worst:.1e}, identity exact: {collapse_ok}, non-neighbor unchanged: {local_ok}")
    assert ok


def test_6_selection(acceptance):
    with Timer() as t:
        rng = np.random.default_rng(66)
        invariant, multiple, ties = True, True, True
        for _ in range(50):
            x = rng.standard_normal((4, 12, 5, 2))
            graphs = rng.uniform(size=(3, 5, 5))
            base = select_graph(x, graphs).index
            invariant &= all(select_graph(c * x, graphs).index == base for c in (1e-3, 0.5, 7.0, 1e3))
            xx = collapse(x).T @ collapse(x)
            slot = int(rng.integers(0, 4))
            stack = np.insert(graphs, slot, rng.uniform(0.1, 10) * xx, axis=0)
            multiple &= select_graph(x, stack).index == slot
            r = int(rng.integers(0, 3))
            dup = np.insert(graphs, r + 1, graphs[r], axis=0)
            ties &= select_graph(x, dup).index == (base if base <= r else base + 1)
        cos_ok = abs(cosine_frobenius(np.eye(2), np.ones((2, 2))) - 1 / math.sqrt(2)) < 1e-12
    ok = invariant and multiple and ties and cos_ok and t.seconds < 1
    acceptance("6 selection", ok,
               f"scale-invariant {invariant}, multiple-of-XtX wins {multiple}, tie-break {ties}, cos {cos_ok}")
    assert ok


def test_7_metrics_and_schedule(acceptance):
    with Timer() as t:
        metric_ok = (
            masked_mae([1, 2, 4], [1, 4, 0], [True, True, False]) == 1.0
            and masked_mae([1, 2], [1, 2]) == 0.0
            and masked_rmse([1, 2], [1, 4]) == math.sqrt(2)
            and masked_mape([2], [1]) == 100.0
            and masked_mape([2, 5], [1, 0]) == 100.0
        )
        lrs = (lr_at(0), lr_at(6), lr_at(18))
        # 3e-3 * 0.1 is one ulp away from the literal 3e-4
        lr_ok = lrs[0] == 3e-3 and math.isclose(lrs[1], 3e-4, rel_tol=1e-15) and lrs[2] == 3e-5
        ds = dp.from_array(np.random.default_rng(7).uniform(1, 5, (600, 3)))
        ha = historical_average(ds, 24)
        ha_ok = ha[3] == ha[6] == ha[12]
    ok = metric_ok and lr_ok and ha_ok and t.seconds < 1
    acceptance("7 metrics/schedule", ok, f"metrics {metric_ok}, lr {lrs}, HA constant {ha_ok}")
    assert ok


@pytest.fixture(scope="module")
def desk_data(tmp_path_factory):
    path = tmp_path_factory.mktemp("desk") / "diffusion.bin"
    assert cli.main(["--quiet", "--seed", "7", "synth", "--out", str(path), "--nodes", "8",
                     "--steps", "2000", "--dynamics", "diffusion"]) == 0
    return dp.zscore_fit_apply(dp.load(path))


DESK_CFG = TrainConfig(period=50, num_graphs=2, hidden=16, epochs=30, seed=0)


@pytest.fixture(scope="module")
def desk_run(desk_data):
    start = time.perf_counter()
    res = train(DESK_CFG, desk_data)
    return res, time.perf_counter() - start


@pytest.mark.slow
def test_8a_training_loss_halves(acceptance, desk_run):
    res, seconds = desk_run
    first, last = res.history[0].train_mae, res.history[-1].train_mae
    ok = last < 0.5 * first
    acceptance("8a final train loss < 0.5 x first epoch", ok,
               f"first {first:.4f}, final {last:.4f}, ratio {last / first:.3f} ({seconds:.0f}s)")
    assert ok


@pytest.mark.slow
def test_8b_beats_historical_average(acceptance, desk_data, desk_run):
    res, _ = desk_run
    table, _ = evaluate_model(res.model, desk_data, horizons=(3,), split="valid")
    ha = historical_average(desk_data, DESK_CFG.period, horizons=(3,), split="valid")
    ok = table[3]["mae"] < ha[3]["mae"]
    acceptance("8b valid MAE@3 beats HA", ok, f"model {table[3]['mae']:.5f}, HA {ha[3]['mae']:.5f}")
    assert ok


@pytest.mark.slow
def test_8c_overfit_small_task(acceptance, desk_data):
    # 32 windows, one full batch per step, constant rate, 500 steps
    cfg = dataclasses.replace(DESK_CFG, train_windows=32, batch_size=32, epochs=500, decay_every=10**6)
    start = time.perf_counter()
    res = train(cfg, desk_data, max_steps=500)
    seconds = time.perf_counter() - start
    # losses are in normalized units, so the bound 0.05 x std becomes 0.05
    final = res.step_losses[-1]
    ok = len(res.step_losses) == 500 and final < 0.05
    acceptance("8c overfit 32 windows in 500 steps", ok,
               f"final train MAE {final:.4f} x std (target < 0.05), best {min(res.step_losses):.4f} ({seconds:.0f}s)")
    assert ok


def test_9_determinism_and_persistence(acceptance, tmp_path):
    series, _ = synth.diffusion_series(5, 500, seed=9)
    ds = dp.zscore_fit_apply(dp.from_array(series))
    cfg = TrainConfig(period=25, hidden=8, mgn_hidden=4, batch_size=32, epochs=3, seed=4, deterministic=True)
    a = train(cfg, ds)
    b = train(cfg, ds)
    same_losses = a.step_losses == b.step_losses and [e.train_mae for e in a.history] == [e.train_mae for e in b.history]
    before, _ = evaluate(a.checkpoint, ds)
    path = tmp_path / "a.bgck"
    ck.save(path, a.checkpoint)
    after, _ = evaluate(ck.load(path), ds)
    ok = same_losses and before == after
    acceptance("9 determinism/persistence", ok,
               f"{len(a.step_losses)} step losses bit-identical: {same_losses}, metrics after reload identical: {before == after}")
    assert ok


def test_10_scale_statement(acceptance):
    seg = np.zeros((83, 207, 1, 288), dtype=np.float32)
    n = count_parameters(BGSLF(TrainConfig(), seg))
    text = README.read_text(encoding="utf-8") if README.exists() else ""
    documented = "## Full-scale runs" in text and "not reproduced" in text
    ok = n < 1_000_000 and documented
    acceptance("10 scale statement", ok, f"{n:,} parameters at N=207; full-run recipe documented: {documented}")
    assert ok
