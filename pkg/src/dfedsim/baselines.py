"""Decentralized comparison methods: D-PSGD, DFedAvg, DFedAvgM, DFedSAM.

All of them train locally, send the trained model itself (no dual
correction) and finish the round with the same gossip step as DFedADMM.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from dfedsim.data import Dataset, minibatch
from dfedsim.dfedadmm import mix, sam_ascent
from dfedsim.errors import DivergenceError
from dfedsim.model import ObjectiveModel
from dfedsim.topology import MixingMatrix

__all__ = ["BASELINES", "BaselineKind", "dfedavg_local", "dpsgd_round", "baseline_round"]

BASELINES = ("dpsgd", "dfedavg", "dfedavgm", "dfedsam")


@dataclass(frozen=True)
class BaselineKind:
    tag: str
    momentum: float = 0.0
    rho: float | None = None

    def __post_init__(self) -> None:
        if self.tag not in BASELINES:
            raise ValueError(f"unknown baseline {self.tag!r}; expected one of {', '.join(BASELINES)}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.rho is not None and not self.rho >= 0:
            raise ValueError(f"rho must be >= 0, got {self.rho}")

    @classmethod
    def for_tag(cls, tag: str, momentum: float = 0.9, rho: float = 0.1) -> BaselineKind:
        """Kind with only the knobs relevant to ``tag`` switched on."""
        return cls(tag, momentum if tag == "dfedavgm" else 0.0, rho if tag == "dfedsam" else None)


def dfedavg_local(
    x0: np.ndarray,
    model: ObjectiveModel,
    data: Dataset,
    shard,
    eta: float,
    K: int,
    rng: np.random.Generator | None,
    momentum: float = 0.0,
    rho: float | None = None,
    batch_size: int | None = None,
) -> np.ndarray:
    """K local steps of (heavy-ball, SAM-perturbed) SGD from ``x0``.

    ``rho=None`` is plain SGD; any float (including 0) takes the SAM
    two-gradient path. The momentum buffer starts at zero every call,
    i.e. every round.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    x = x0
    buf = np.zeros_like(x0)
    for k in range(K):
        batch = np.asarray(shard) if batch_size is None else minibatch(shard, batch_size, rng)
        g = model.grad(x, data, batch)
        if rho is not None:
            g = model.grad(sam_ascent(x, g, rho), data, batch)
        buf = momentum * buf + g
        x = x - eta * buf
        if not np.all(np.isfinite(x)):
            raise DivergenceError("local SGD produced non-finite parameters", step=k)
    return x


def _map(fn: Callable, items, pool_map: Callable | None):
    return list(pool_map(fn, items)) if pool_map is not None else [fn(i) for i in items]


def dpsgd_round(
    xs: np.ndarray,
    w: MixingMatrix,
    model: ObjectiveModel,
    data: Dataset,
    shards: Sequence,
    eta: float,
    rngs: Sequence,
    batch_size: int | None = None,
    pool_map: Callable | None = None,
) -> np.ndarray:
    """One SGD step on every client, then gossip the stepped models."""
    return baseline_round(BaselineKind("dpsgd"), xs, w, model, data, shards, eta, 1, rngs, batch_size, pool_map)


def baseline_round(
    kind: BaselineKind,
    xs: np.ndarray,
    w: MixingMatrix,
    model: ObjectiveModel,
    data: Dataset,
    shards: Sequence,
    eta: float,
    K: int,
    rngs: Sequence,
    batch_size: int | None = None,
    pool_map: Callable | None = None,
) -> np.ndarray:
    """Local training on every client followed by ``W @ X_K``.

    ``xs`` is ``m x d``; D-PSGD always takes a single local step.
    ``pool_map`` (e.g. ``executor.map``) may fan clients out; results are
    gathered in client order so the mix is unaffected.
    """
    steps = 1 if kind.tag == "dpsgd" else K

    def train(i: int) -> np.ndarray:
        try:
            return dfedavg_local(
                xs[i], model, data, shards[i], eta, steps, rngs[i], kind.momentum, kind.rho, batch_size
            )
        except DivergenceError as exc:
            raise DivergenceError(f"{kind.tag} local training diverged", step=exc.step, client=i) from exc

    return mix(w, np.stack(_map(train, range(len(shards)), pool_map)))
