"""Round orchestration, metrics, learning-rate schedule and seeding.

Everything random is derived from ``config.seed`` through :func:`derive_seed`,
so a run is a pure function of its configuration. Client work inside a round
can fan out to a thread pool; results are gathered in client order before
the gossip step, which keeps parallel and sequential runs bit-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dfedsim import data as data_mod
from dfedsim.baselines import BaselineKind, baseline_round
from dfedsim.config import ExperimentConfig
from dfedsim.data import Dataset
from dfedsim.dfedadmm import (
    AdmmHyper,
    ClientState,
    GammaWeights,
    LocalTrace,
    dual_update,
    gamma_weights,
    local_train,
    mix,
    outbound_model,
    validate_hyper,
)
from dfedsim.errors import DivergenceError
from dfedsim.model import LogisticModel, MlpModel, ObjectiveModel, QuadraticModel
from dfedsim.topology import MixingMatrix, build_graph, metropolis_weights, time_varying_random

__all__ = [
    "CSV_HEADER",
    "RoundMetrics",
    "RoundRecord",
    "Simulation",
    "derive_seed",
    "seed_stream",
    "lr_schedule",
    "consensus_error",
    "evaluate",
    "format_csv",
    "run_experiment",
]

log = logging.getLogger(__name__)

CSV_HEADER = ("round", "eta", "psi", "train_loss", "test_acc", "grad_norm_sq", "consensus_err")


def derive_seed(*parts) -> int:
    """Hash arbitrary labelled parts into a 64-bit seed."""
    text = ":".join(str(p) for p in parts)
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def seed_stream(base_seed: int, client: int, round: int) -> np.random.Generator:
    """Independent minibatch stream for one ``(client, round)`` pair."""
    return np.random.default_rng(derive_seed("minibatch", base_seed, client, round))


def lr_schedule(eta0: float, decay: float, round: int) -> float:
    if not 0 < decay <= 1:
        raise ValueError(f"decay must be in (0, 1], got {decay}")
    return eta0 * decay**round


def _as_matrix(states) -> np.ndarray:
    if isinstance(states, np.ndarray):
        return states
    return np.stack([s.x if isinstance(s, ClientState) else np.asarray(s) for s in states])


def consensus_error(states) -> float:
    """``(1/m) sum_i ||x_i - xbar||^2`` over client models."""
    x = _as_matrix(states)
    dev = x - x.mean(axis=0)
    return float(np.sum(dev * dev) / x.shape[0])


def evaluate(model: ObjectiveModel, params, dataset: Dataset) -> tuple[float, float]:
    """Full-dataset loss and accuracy; accuracy is NaN for non-classifiers.

    Score ties resolve to the lowest class index.
    """
    loss = model.loss(params, dataset)
    if not model.is_classifier or dataset.n == 0:
        return loss, float("nan")
    pred = np.argmax(model.scores(params, dataset.features), axis=1)
    return loss, float(np.mean(pred == dataset.targets))


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    eta: float
    psi: float
    train_loss: float
    test_acc: float
    grad_norm_sq: float
    consensus_err: float

    def row(self) -> list[str]:
        return [str(self.round)] + [format(getattr(self, k), ".17g") for k in CSV_HEADER[1:]]


@dataclass
class RoundRecord:
    """Per-round internals kept for the closed-form identity checks (ADMM variants only)."""

    round: int
    eta: float
    gamma: GammaWeights | None = None
    traces: list[LocalTrace] = field(default_factory=list)
    x_before: np.ndarray | None = None
    x_after: np.ndarray | None = None


def build_model(cfg: ExperimentConfig, d: int, n_classes: int | None) -> ObjectiveModel:
    if cfg.model == "quadratic":
        return QuadraticModel(d)
    if cfg.model == "logistic":
        return LogisticModel(d, n_classes, cfg.l2)
    return MlpModel(d, cfg.hidden, n_classes, cfg.l2)


def build_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset | None, data_mod.Partition]:
    """Training data, optional test data, and the client partition."""
    if cfg.dataset == "quadratic":
        problem = data_mod.gen_quadratic(
            cfg.clients, cfg.dim, cfg.samples_per_client, cfg.heterogeneity, derive_seed("data", cfg.seed)
        )
        train, part = problem.as_dataset()
        return train, None, part
    if cfg.dataset == "synthetic":
        full = data_mod.gen_synthetic_classification(
            cfg.n_train + cfg.n_test, cfg.dim, cfg.classes, cfg.class_sep, derive_seed("data", cfg.seed)
        )
        train, test = data_mod.train_test_split(full, cfg.n_test, derive_seed("split", cfg.seed))
    else:
        train = data_mod.load_idx(cfg.mnist_train_images, cfg.mnist_train_labels)
        test = None
        if cfg.mnist_test_images:
            test = data_mod.load_idx(cfg.mnist_test_images, cfg.mnist_test_labels)
    pseed = derive_seed("partition", cfg.seed)
    if cfg.partition == "iid":
        part = data_mod.iid_partition(train.n, cfg.clients, pseed)
    else:
        part = data_mod.dirichlet_partition(train.targets, cfg.clients, cfg.alpha, cfg.min_size, pseed)
    return train, test, part


class Simulation:
    """Holds one experiment's data, model, topology and client states.

    ``keep_records`` retains per-round traces (memory grows with rounds).
    """

    def __init__(self, cfg: ExperimentConfig, keep_records: bool = False):
        self.cfg = cfg
        self.train, self.test, self.partition = build_data(cfg)
        self.shards = self.partition.shards
        self.model = build_model(cfg, self.train.d, self.train.n_classes)
        self.batch_size = cfg.batch_size or None
        if cfg.init == "identical":
            x0s = [self.model.init_params(derive_seed("init", cfg.seed))] * cfg.clients
        else:
            x0s = [self.model.init_params(derive_seed("init", cfg.seed, i)) for i in range(cfg.clients)]
        self.states = [ClientState.initial(x0, i) for i, x0 in enumerate(x0s)]
        self._static_w = None if cfg.is_time_varying else self._build_w(0)
        self.keep_records = keep_records
        self.records: list[RoundRecord] = []
        self.is_admm = cfg.algorithm in ("dfedadmm", "dfedadmm_sam")
        if self.is_admm:
            for msg in validate_hyper(self.hyper(0)):
                log.warning("hyperparameter check: %s", msg)

    def _build_w(self, round: int) -> MixingMatrix:
        cfg = self.cfg
        if cfg.is_time_varying:
            if cfg.topology != "random":
                raise ValueError(f"time_varying requires topology = random, got {cfg.topology}")
            g = time_varying_random(cfg.seed, round, cfg.clients, cfg.degree)
        else:
            g = build_graph(cfg.topology, cfg.clients, cfg.degree, derive_seed("topology", cfg.seed))
        return metropolis_weights(g)

    def mixing_for_round(self, round: int) -> MixingMatrix:
        return self._static_w if self._static_w is not None else self._build_w(round)

    def hyper(self, round: int) -> AdmmHyper:
        cfg = self.cfg
        rho = cfg.rho if cfg.algorithm == "dfedadmm_sam" else 0.0
        return AdmmHyper(lr_schedule(cfg.eta_l, cfg.decay, round), cfg.lam, rho, cfg.K, cfg.decay)

    def streams(self, round: int) -> list[np.random.Generator]:
        return [
            seed_stream(self.cfg.seed, 0 if self.cfg.shared_streams else i, round) for i in range(self.cfg.clients)
        ]

    def xs(self) -> np.ndarray:
        return np.stack([s.x for s in self.states])

    def _admm_round(self, round: int, w: MixingMatrix, rngs, pool_map) -> RoundRecord:
        hyper = self.hyper(round)
        variant = "admm_sam" if self.cfg.algorithm == "dfedadmm_sam" else "admm"

        def client(i: int):
            st = self.states[i]
            x_k, trace = local_train(st, self.model, self.train, self.shards[i], hyper, rngs[i], variant, self.batch_size)
            return x_k, trace, dual_update(st.g_hat, x_k, st.x, hyper.lam), outbound_model(x_k, st.g_hat, hyper.lam)

        results = list(pool_map(client, range(len(self.states))))
        mixed = mix(w, np.stack([r[3] for r in results]))
        record = RoundRecord(round, hyper.eta_l, gamma_weights(hyper.eta_l, hyper.lam, hyper.K))
        if self.keep_records:
            record.traces = [r[1] for r in results]
            record.x_before = self.xs()
            record.x_after = mixed
        for st, row, r in zip(self.states, mixed, results):
            st.x, st.g_hat = row, r[2]
        return record

    def _baseline_round(self, round: int, w: MixingMatrix, rngs, pool_map) -> RoundRecord:
        cfg = self.cfg
        kind = BaselineKind.for_tag(cfg.algorithm, cfg.momentum, cfg.rho)
        eta = lr_schedule(cfg.eta_l, cfg.decay, round)
        before = self.xs()
        mixed = baseline_round(kind, before, w, self.model, self.train, self.shards, eta, cfg.K, rngs, self.batch_size, pool_map)
        for st, row in zip(self.states, mixed):
            st.x = row
        return RoundRecord(round, eta, x_before=before if self.keep_records else None, x_after=mixed if self.keep_records else None)

    def run_round(self, round: int, pool_map=None) -> RoundMetrics | None:
        """Advance all clients by one round; returns metrics on evaluation rounds."""
        pool_map = pool_map or map
        w = self.mixing_for_round(round)
        rngs = self.streams(round)
        try:
            if self.is_admm:
                record = self._admm_round(round, w, rngs, pool_map)
            else:
                record = self._baseline_round(round, w, rngs, pool_map)
        except DivergenceError as exc:
            raise DivergenceError(f"run diverged: {exc}", round=round, client=exc.client, step=exc.step) from exc
        if self.keep_records:
            self.records.append(record)
        last = round == self.cfg.rounds - 1
        if (round + 1) % self.cfg.eval_every and not last:
            return None
        return self.metrics(round, record.eta, w.psi)

    def metrics(self, round: int, eta: float, psi: float) -> RoundMetrics:
        xs = self.xs()
        xbar = xs.mean(axis=0)
        try:
            train_loss = float(np.mean([self.model.loss(x, self.train, s) for x, s in zip(xs, self.shards)]))
            grad = self.model.grad(xbar, self.train)
            acc = evaluate(self.model, xbar, self.test)[1] if self.test is not None else float("nan")
        except DivergenceError as exc:
            raise DivergenceError(f"metrics diverged: {exc}", round=round) from exc
        return RoundMetrics(round, eta, psi, train_loss, acc, float(grad @ grad), consensus_error(xs))

    def run(self) -> list[RoundMetrics]:
        out = []
        if self.cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.threads) as pool:
                for t in range(self.cfg.rounds):
                    if (m := self.run_round(t, pool.map)) is not None:
                        out.append(m)
        else:
            for t in range(self.cfg.rounds):
                if (m := self.run_round(t)) is not None:
                    out.append(m)
        return out


def format_csv(metrics: list[RoundMetrics]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for m in metrics:
        writer.writerow(m.row())
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None) -> list[RoundMetrics]:
    """Run ``cfg`` end to end; writes the metrics CSV to ``out`` (or ``cfg.out``) if set."""
    metrics = Simulation(cfg).run()
    target = out or cfg.out
    if target:
        Path(target).write_text(format_csv(metrics))
    return metrics
