"""Numerical identity checks behind the ``verify`` subcommand.

Each check computes the same quantity along two independent paths (the
iterative algorithm and a closed form, or an implementation and a brute
force oracle) and reports the largest residual seen.
"""

from __future__ import annotations

import time
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from dfedsim.baselines import dfedavg_local
from dfedsim.config import ExperimentConfig
from dfedsim.data import gen_quadratic, gen_synthetic_classification
from dfedsim.dfedadmm import (
    AdmmHyper,
    ClientState,
    auxiliary_w,
    closed_form_delta,
    dual_mixture_oracle,
    dual_update,
    gamma_weights,
    local_train,
    mix,
    outbound_model,
    sam_ascent,
)
from dfedsim.model import LogisticModel, MlpModel, QuadraticModel, finite_diff_grad, relative_error
from dfedsim.simulator import Simulation
from dfedsim.topology import KINDS, build_graph, contraction_check, metropolis_weights

__all__ = ["CheckResult", "VerifyReport", "CHECKS", "run_verify"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    residual: float
    tolerance: float
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.residual < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28} residual={self.residual:.3e}  tol={self.tolerance:.0e}  ({self.seconds:.2f}s)"


@dataclass(frozen=True)
class VerifyReport:
    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / (1.0 + np.linalg.norm(a)))


def identity_sweep(n_configs: int = 100, seed: int = 0):
    """Yield ``(trace, gamma_weights, g_hat_prev, lam, x_K)`` for random local runs.

    d in {3, 10}, K in 1..8, eta_l / lam in (0, 1]; gradients come from
    full-batch least squares so the recorded trace is deterministic.
    Both the plain and the SAM local solver are exercised.
    """
    rng = np.random.default_rng(seed)
    for c in range(n_configs):
        d = int(rng.choice([3, 10]))
        K = int(rng.integers(1, 9))
        lam = float(rng.uniform(0.05, 1.0))
        ratio = 1.0 - float(rng.uniform(0.0, 1.0))  # in (0, 1]
        eta = ratio * lam
        problem = gen_quadratic(1, d, 3 * d, heterogeneity=1.0, seed=int(rng.integers(2**31)))
        data, part = problem.as_dataset()
        state = ClientState(rng.standard_normal(d), rng.standard_normal(d), c)
        variant = "admm_sam" if c % 2 else "admm"
        hyper = AdmmHyper(eta, lam, rho=0.05 if variant == "admm_sam" else 0.0, K=K)
        x_k, trace = local_train(state, QuadraticModel(d), data, part.shards[0], hyper, None, variant)
        yield trace, gamma_weights(eta, lam, K), state.g_hat, lam, x_k


def check_local_delta(n_configs: int = 100, seed: int = 0) -> float:
    worst = 0.0
    for trace, gw, g_prev, lam, x_k in identity_sweep(n_configs, seed):
        worst = max(worst, _rel(x_k - trace.anchor, closed_form_delta(trace, gw, g_prev, lam)))
    return worst


def check_dual_mixture(n_configs: int = 100, seed: int = 0) -> float:
    worst = 0.0
    for trace, gw, g_prev, lam, x_k in identity_sweep(n_configs, seed):
        worst = max(worst, _rel(dual_update(g_prev, x_k, trace.anchor, lam), dual_mixture_oracle(trace, gw, g_prev)))
    return worst


def check_outbound_roundtrip(n_configs: int = 50, seed: int = 1) -> float:
    worst = 0.0
    for trace, gw, g_prev, lam, x_k in identity_sweep(n_configs, seed):
        z = outbound_model(x_k, g_prev, lam)
        worst = max(worst, _rel(z, trace.anchor + closed_form_delta(trace, gw, g_prev, lam) - lam * g_prev))
    return worst


def check_gamma_sum(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(200):
        lam = float(rng.uniform(0.01, 1.0))
        gw = gamma_weights(lam * float(rng.uniform(1e-3, 1.0)), lam, int(rng.integers(1, 30)))
        worst = max(worst, abs(float(np.sum(gw.gamma_k)) - gw.gamma))
    return worst


def auxiliary_run(rounds: int = 10, m: int = 8, seed: int = 0) -> Simulation:
    """Deterministic DFedADMM run (ring, full-batch least squares) with traces kept."""
    cfg = ExperimentConfig(
        algorithm="dfedadmm", model="quadratic", dataset="quadratic", heterogeneity=1.0, dim=5,
        samples_per_client=20, clients=m, topology="ring", K=5, eta_l=0.05, lam=0.1, decay=1.0,
        batch_size=0, rounds=rounds, init="per_client", seed=seed,
    )  # fmt: skip
    sim = Simulation(cfg, keep_records=True)
    sim.run()
    return sim


def auxiliary_residuals(sim: Simulation) -> tuple[list[float], list[float]]:
    """Per-round residuals of the mean-evolution and auxiliary-sequence identities."""
    lam = sim.cfg.lam
    mean_res, w_res = [], []
    xbars = [sim.records[0].x_before.mean(axis=0)] + [r.x_after.mean(axis=0) for r in sim.records]
    gamma = sim.records[0].gamma.gamma
    # no history before round 0; the zero initial dual makes xbar^{-1} = xbar^0 consistent
    ws = [auxiliary_w(xbars[t], xbars[t - 1] if t else xbars[0], gamma) for t in range(len(xbars))]
    for t, rec in enumerate(sim.records):
        gw = rec.gamma
        weights = gw.gamma_k / gw.gamma
        pure = np.mean([sum(a * g for a, g in zip(weights, tr.grads)) for tr in rec.traces], axis=0)
        dual = np.mean([tr.g_hat_prev for tr in rec.traces], axis=0)
        predicted_mean = -lam * (gw.gamma * pure + (1.0 - gw.gamma) * dual)
        mean_res.append(float(np.max(np.abs((xbars[t + 1] - xbars[t]) - predicted_mean))))
        w_res.append(float(np.max(np.abs((ws[t + 1] - ws[t]) - (-lam * pure)))))
    return mean_res, w_res


def check_mean_evolution() -> float:
    return max(auxiliary_residuals(auxiliary_run())[0])


def check_w_sequence() -> float:
    return max(auxiliary_residuals(auxiliary_run())[1])


def check_contraction(t_max: int = 20) -> float:
    """Largest ``||W^t - P|| - psi^t`` over topologies and sizes (negative means slack)."""
    worst = -np.inf
    for kind in KINDS:
        for m in (4, 9, 16, 25):
            w = metropolis_weights(build_graph(kind, m, k=min(3, m - 1), seed=m))
            for _, norm, bound in contraction_check(w, t_max, slack=np.inf):
                worst = max(worst, norm - bound)
    return float(worst)


def spectral_ordering(m: int = 16) -> dict[str, float]:
    return {kind: metropolis_weights(build_graph(kind, m)).psi for kind in ("ring", "grid", "exponential", "full")}


def check_spectral_ordering() -> float:
    """0 when ring > grid > exponential > full == 0 holds, else 1."""
    p = spectral_ordering()
    return 0.0 if p["ring"] > p["grid"] > p["exponential"] > p["full"] == 0.0 else 1.0


def check_mix_mean(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for kind in KINDS:
        w = metropolis_weights(build_graph(kind, 8, k=3, seed=seed))
        z = rng.standard_normal((8, 6))
        worst = max(worst, float(np.max(np.abs(mix(w, z).mean(axis=0) - z.mean(axis=0)))))
    return worst


def _grad_fixtures():
    q = gen_quadratic(2, 6, 15, heterogeneity=1.0, seed=3)
    qdata, _ = q.as_dataset()
    cls = gen_synthetic_classification(60, 5, 4, class_sep=1.0, seed=4)
    return {
        "quadratic": (QuadraticModel(6), qdata),
        "logistic": (LogisticModel(5, 4, l2=0.01), cls),
        "mlp": (MlpModel(5, 7, 4, l2=0.01), cls),
    }


def check_gradient(name: str, draws: int = 20, seed: int = 0) -> float:
    """Max coordinate relative error, analytic vs central differences."""
    model, data = _grad_fixtures()[name]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        params = 0.5 * rng.standard_normal(model.dim)
        batch = rng.integers(0, data.n, size=16)
        fd = finite_diff_grad(model, params, data, batch, h=1e-5 * (1 + np.abs(params)))
        worst = max(worst, relative_error(model.grad(params, data, batch), fd))
    return worst


def sam_reduction_states(rounds: int = 20) -> tuple[list[ClientState], list[ClientState]]:
    base = dict(
        model="logistic", dataset="synthetic", n_train=400, n_test=100, dim=6, classes=4, clients=6,
        topology="ring", batch_size=16, rounds=rounds, eval_every=rounds, rho=0.0,
    )  # fmt: skip
    plain = Simulation(ExperimentConfig(algorithm="dfedadmm", **base))
    plain.run()
    sam = Simulation(ExperimentConfig(algorithm="dfedadmm_sam", **base))
    sam.run()
    return plain.states, sam.states


def check_sam_reduction() -> float:
    """Number of differing entries between rho=0 SAM and plain runs (0 = bit-identical)."""
    a, b = sam_reduction_states()
    return float(sum(np.count_nonzero(s.x != t.x) + np.count_nonzero(s.g_hat != t.g_hat) for s, t in zip(a, b)))


def check_sam_radius(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(500):
        d = int(rng.integers(1, 50))
        x, g = rng.standard_normal(d), rng.standard_normal(d) * 10.0 ** rng.uniform(-6, 6)
        rho = float(rng.uniform(0, 2))
        worst = max(worst, abs(float(np.linalg.norm(sam_ascent(x, g, rho) - x)) - rho))
    return worst


def check_baseline_reductions(seed: int = 0) -> float:
    """Differing entries: DFedSAM(rho=0) and DFedAvgM(momentum=0) vs a plain SGD loop."""
    data = gen_synthetic_classification(80, 5, 3, seed=seed)
    model = LogisticModel(5, 3)
    shard = np.arange(40)
    x0 = 0.1 * np.random.default_rng(seed).standard_normal(model.dim)
    rng = np.random.default_rng(7)
    sgd = x0
    for _ in range(5):
        sgd = sgd - 0.1 * model.grad(sgd, data, shard[rng.integers(0, shard.size, size=8)])
    sam0 = dfedavg_local(x0, model, data, shard, 0.1, 5, np.random.default_rng(7), rho=0.0, batch_size=8)
    mom0 = dfedavg_local(x0, model, data, shard, 0.1, 5, np.random.default_rng(7), momentum=0.0, batch_size=8)
    return float(np.count_nonzero(sgd != sam0) + np.count_nonzero(sgd != mom0))


# (name, tolerance, check); the count is pinned by a test and must not shrink
CHECKS: list[tuple[str, float, Callable[[], float]]] = [
    ("gamma_sum", 1e-12, check_gamma_sum),
    ("local_delta_closed_form", 1e-10, check_local_delta),
    ("dual_mixture", 1e-10, check_dual_mixture),
    ("outbound_roundtrip", 1e-10, check_outbound_roundtrip),
    ("mean_evolution", 1e-8, check_mean_evolution),
    ("w_sequence", 1e-8, check_w_sequence),
    ("mixing_contraction", 1e-10, check_contraction),
    ("spectral_ordering", 0.5, check_spectral_ordering),
    ("mix_mean_preservation", 1e-12, check_mix_mean),
    ("grad_quadratic", 1e-5, lambda: check_gradient("quadratic")),
    ("grad_logistic", 1e-5, lambda: check_gradient("logistic")),
    ("grad_mlp", 1e-5, lambda: check_gradient("mlp")),
    ("sam_reduction", 0.5, check_sam_reduction),
    ("sam_radius", 1e-12, check_sam_radius),
    ("baseline_reductions", 0.5, check_baseline_reductions),
]


def run_verify(only: list[str] | None = None) -> VerifyReport:
    results = []
    for name, tol, fn in CHECKS:
        if only and name not in only:
            continue
        start = time.perf_counter()
        residual = fn()
        results.append(CheckResult(name, residual, tol, time.perf_counter() - start))
    return VerifyReport(tuple(results))
