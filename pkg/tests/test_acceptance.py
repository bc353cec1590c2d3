"""End-to-end acceptance gate: one test per criterion, each reporting a verdict line."""

import time
from pathlib import Path

import numpy as np
import pytest

from dfedsim.config import ExperimentConfig, parse_config
from dfedsim.simulator import Simulation, format_csv
from dfedsim.topology import KINDS, build_graph, contraction_check, metropolis_weights
from dfedsim.verify import (
    auxiliary_residuals,
    auxiliary_run,
    check_gradient,
    check_local_delta,
    check_dual_mixture,
    check_sam_radius,
    sam_reduction_states,
    spectral_ordering,
)
from tests.conftest import ACCEPTANCE_LINES

HETEROGENEITY_CFG = Path(__file__).resolve().parents[1] / "configs" / "heterogeneity.cfg"
SEEDS = (0, 1, 2)
_runs: dict = {}


def report(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def heterogeneity_run(algorithm: str, seed: int):
    key = (algorithm, seed)
    if key not in _runs:
        cfg = parse_config(HETEROGENEITY_CFG).with_overrides(algorithm=algorithm, seed=seed)
        _runs[key] = Simulation(cfg).run()
    return _runs[key]


def test_criterion_1_local_delta_closed_form():
    start = time.perf_counter()
    residual = check_local_delta(n_configs=100)
    seconds = time.perf_counter() - start
    report(1, residual < 1e-10 and seconds < 5, f"max rel residual {residual:.2e} (< 1e-10), {seconds:.2f}s (< 5s)")


def test_criterion_2_dual_mixture():
    residual = check_dual_mixture(n_configs=100)
    report(2, residual < 1e-10, f"max rel residual {residual:.2e} (< 1e-10)")


def test_criterion_3_auxiliary_sequence():
    mean_res, w_res = auxiliary_residuals(auxiliary_run(rounds=10, m=8))
    worst = max(mean_res + w_res)
    ok = len(mean_res) == len(w_res) == 10 and worst < 1e-8
    report(3, ok, f"10 rounds, worst per-round residual {worst:.2e} (< 1e-8)")


def test_criterion_4_mixing_contraction():
    worst = -np.inf
    for kind in KINDS:
        for m in (4, 9, 16, 25):
            w = metropolis_weights(build_graph(kind, m, k=min(3, m - 1), seed=m))
            for _, norm, bound in contraction_check(w, 20, slack=np.inf):
                worst = max(worst, norm - bound)
    report(4, worst <= 1e-10, f"max(||W^t - P|| - psi^t) = {worst:.2e} (<= 1e-10), 5 kinds x 4 sizes x t<=20")


def test_criterion_5_spectral_ordering():
    p = spectral_ordering(16)
    ok = p["ring"] > p["grid"] > p["exponential"] > p["full"] == 0.0
    report(5, ok, "psi ring={ring:.4f} > grid={grid:.4f} > exponential={exponential:.4f} > full={full!r}".format(**p))


def test_criterion_6_gradients():
    errs = {name: check_gradient(name, draws=20) for name in ("quadratic", "logistic", "mlp")}
    ok = max(errs.values()) < 1e-5
    report(6, ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + " (< 1e-5)")


def test_criterion_7_sam_reduction_and_radius():
    plain, sam = sam_reduction_states(rounds=20)
    identical = all(np.array_equal(a.x, b.x) and np.array_equal(a.g_hat, b.g_hat) for a, b in zip(plain, sam))
    radius = check_sam_radius()
    report(7, identical and radius < 1e-12, f"20-round bit-identical={identical}, radius error {radius:.1e} (< 1e-12)")


def test_criterion_8_quadratic_convergence():
    cfg = ExperimentConfig(
        algorithm="dfedadmm", model="quadratic", dataset="quadratic", heterogeneity=0.0, clients=16,
        topology="ring", time_varying="false", K=5, eta_l=0.05, lam=0.1, dim=10, samples_per_client=50,
        batch_size=0, rounds=200, eval_every=1,
    )  # fmt: skip
    start = time.perf_counter()
    metrics = Simulation(cfg).run()
    seconds = time.perf_counter() - start
    first = next((m.round for m in metrics if m.grad_norm_sq < 1e-8), None)
    ok = first is not None and seconds < 30
    report(8, ok, f"||grad f(xbar)||^2 < 1e-8 first at round {first}, final {metrics[-1].grad_norm_sq:.1e}, {seconds:.1f}s (< 30s)")


@pytest.mark.slow
def test_criterion_9_directional_heterogeneity():
    start = time.perf_counter()
    consensus_wins = accuracy_wins = 0
    rows = []
    for seed in SEEDS:
        admm = heterogeneity_run("dfedadmm", seed)[-1]
        avg = heterogeneity_run("dfedavg", seed)[-1]
        sam = heterogeneity_run("dfedadmm_sam", seed)[-1]
        consensus_wins += admm.consensus_err < avg.consensus_err
        accuracy_wins += sam.test_acc >= admm.test_acc
        rows.append(
            f"seed {seed}: cons admm {admm.consensus_err:.2e} vs avg {avg.consensus_err:.2e}, "
            f"acc sam {sam.test_acc:.3f} vs admm {admm.test_acc:.3f}"
        )
    seconds = time.perf_counter() - start
    for row in rows:
        print(row)
    ok = consensus_wins >= 2 and accuracy_wins >= 2 and seconds < 300
    report(
        9, ok, f"consensus ADMM<DFedAvg {consensus_wins}/3, acc SAM>=ADMM {accuracy_wins}/3, {seconds:.0f}s (< 300s)"
    )


@pytest.mark.slow
def test_criterion_10_determinism():
    cfg = parse_config(HETEROGENEITY_CFG)
    first = format_csv(heterogeneity_run(cfg.algorithm, cfg.seed))
    second = format_csv(Simulation(cfg).run())
    pooled = format_csv(Simulation(cfg.with_overrides(threads=4)).run())
    ok = first == second == pooled
    report(10, ok, f"two runs identical={first == second}, threads=4 identical={first == pooled}, {len(first)} bytes")
