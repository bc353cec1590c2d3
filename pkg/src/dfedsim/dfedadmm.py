"""DFedADMM and DFedADMM-SAM client updates, gossip mixing, and closed-form oracles.

One round for client ``i`` with anchor ``x_i`` (its model after the last
gossip) and dual ``g_hat`` from the previous round::

    x_{k+1} = x_k - eta * (g_k - g_hat + (x_k - x_i) / lam)      k = 0..K-1
    g_hat'  = g_hat - (x_K - x_i) / lam
    z_i     = x_K - lam * g_hat
    x_i'    = sum_l W[i, l] * z_l

In the SAM variant ``g_k`` is taken at ``x_k + rho * g1 / ||g1||`` where
``g1`` is the gradient at ``x_k`` on the same minibatch.

The ``closed_form_*`` / ``*_oracle`` helpers restate the K-step recursion
in terms of the geometric weights ``gamma_k`` and are used as independent
checks on the iterative path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dfedsim.data import Dataset, minibatch
from dfedsim.errors import DivergenceError
from dfedsim.model import ObjectiveModel
from dfedsim.topology import MixingMatrix

__all__ = [
    "VARIANTS",
    "SAM_GRAD_FLOOR",
    "ClientState",
    "AdmmHyper",
    "GammaWeights",
    "LocalTrace",
    "gamma_weights",
    "local_step",
    "sam_ascent",
    "local_train",
    "closed_form_delta",
    "dual_update",
    "dual_mixture_oracle",
    "outbound_model",
    "mix",
    "auxiliary_w",
    "validate_hyper",
]

VARIANTS = ("admm", "admm_sam")
SAM_GRAD_FLOOR = 1e-12


@dataclass
class ClientState:
    """Model ``x`` and dual ``g_hat`` held by one client between rounds."""

    x: np.ndarray
    g_hat: np.ndarray
    client_id: int = 0

    @classmethod
    def initial(cls, x0, client_id: int = 0) -> ClientState:
        x0 = np.array(x0, dtype=float)
        return cls(x0, np.zeros_like(x0), client_id)


@dataclass(frozen=True)
class AdmmHyper:
    eta_l: float = 0.1
    lam: float = 0.1
    rho: float = 0.0
    K: int = 5
    decay: float = 1.0

    def __post_init__(self) -> None:
        if not self.eta_l > 0:
            raise ValueError(f"eta_l must be > 0, got {self.eta_l}")
        if not self.lam > 0:
            raise ValueError(f"lam must be > 0, got {self.lam}")
        if not self.rho >= 0:
            raise ValueError(f"rho must be >= 0, got {self.rho}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if not 0 < self.decay <= 1:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")


@dataclass(frozen=True)
class GammaWeights:
    """``gamma_k[k] = r (1-r)^(K-1-k)`` with ``r = eta_l / lam``; ``gamma = 1 - (1-r)^K``."""

    gamma: float
    gamma_k: np.ndarray = field(repr=False)


@dataclass
class LocalTrace:
    """What one client's K local steps consumed, for the closed-form oracles.

    ``grads[k]`` is the gradient that entered descent step ``k`` (taken at
    the perturbed point in the SAM variant).
    """

    anchor: np.ndarray
    grads: list[np.ndarray]
    x_final: np.ndarray
    g_hat_prev: np.ndarray | None = None

    @property
    def K(self) -> int:
        return len(self.grads)


def gamma_weights(eta_l: float, lam: float, K: int) -> GammaWeights:
    if not (eta_l > 0 and lam > 0):
        raise ValueError(f"eta_l and lam must be > 0, got {eta_l}, {lam}")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    r = eta_l / lam
    gamma_k = r * (1.0 - r) ** np.arange(K - 1, -1, -1, dtype=float)
    return GammaWeights(1.0 - (1.0 - r) ** K, gamma_k)


def _same_shape(*vecs: np.ndarray) -> None:
    shape = vecs[0].shape
    for v in vecs[1:]:
        if v.shape != shape:
            raise ValueError(f"dimension mismatch: {shape} vs {v.shape}")


def local_step(x_k, g_k, g_hat_prev, anchor, eta_l: float, lam: float) -> np.ndarray:
    """One proximal, dual-corrected SGD step."""
    _same_shape(x_k, g_k, g_hat_prev, anchor)
    out = x_k - eta_l * (g_k - g_hat_prev + (x_k - anchor) / lam)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("local step produced non-finite parameters")
    return out


def sam_ascent(x, g1, rho: float) -> np.ndarray:
    """``x + rho * g1 / ||g1||``; returns ``x`` itself when ``rho == 0`` or ``||g1|| <= 1e-12``."""
    if rho == 0:
        return x
    norm = float(np.linalg.norm(g1))
    if norm <= SAM_GRAD_FLOOR:
        return x
    return x + rho * (g1 / norm)


def local_train(
    state: ClientState,
    model: ObjectiveModel,
    data: Dataset,
    shard,
    hyper: AdmmHyper,
    rng: np.random.Generator | None,
    variant: str = "admm",
    batch_size: int | None = None,
) -> tuple[np.ndarray, LocalTrace]:
    """Run K local steps from ``state.x``; ``state`` itself is not modified.

    ``batch_size=None`` uses the whole shard every step (deterministic
    gradients, no RNG draws). Otherwise each step draws one minibatch from
    ``rng``; the SAM variant reuses it for both gradients.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    anchor = state.x
    x = anchor
    grads = []
    for k in range(hyper.K):
        batch = np.asarray(shard) if batch_size is None else minibatch(shard, batch_size, rng)
        try:
            g = model.grad(x, data, batch)
            if variant == "admm_sam":
                g = model.grad(sam_ascent(x, g, hyper.rho), data, batch)
            x = local_step(x, g, state.g_hat, anchor, hyper.eta_l, hyper.lam)
        except DivergenceError as exc:
            raise DivergenceError("local training diverged", step=k, client=state.client_id) from exc
        grads.append(g)
    return x, LocalTrace(anchor, grads, x, state.g_hat)


def closed_form_delta(trace: LocalTrace, gw: GammaWeights, g_hat_prev, lam: float) -> np.ndarray:
    """``x_K - anchor`` predicted from the recorded gradients alone."""
    weighted = sum(w * g for w, g in zip(gw.gamma_k, trace.grads))
    return -lam * weighted + gw.gamma * lam * g_hat_prev


def dual_update(g_hat_prev, x_K, anchor, lam: float) -> np.ndarray:
    _same_shape(g_hat_prev, x_K, anchor)
    if not lam > 0:
        raise ValueError(f"lam must be > 0, got {lam}")
    return g_hat_prev - (x_K - anchor) / lam


def dual_mixture_oracle(trace: LocalTrace, gw: GammaWeights, g_hat_prev) -> np.ndarray:
    """Dual update written as ``(1 - gamma) g_hat_prev + sum_k gamma_k g_k``."""
    return (1.0 - gw.gamma) * g_hat_prev + sum(w * g for w, g in zip(gw.gamma_k, trace.grads))


def outbound_model(x_K, g_hat_prev, lam: float) -> np.ndarray:
    """Model sent to neighbours; uses the dual from *before* this round's update."""
    _same_shape(x_K, g_hat_prev)
    return x_K - lam * g_hat_prev


def mix(w: MixingMatrix, z_all) -> np.ndarray:
    """Gossip step: row ``i`` of the result is ``sum_l W[i, l] z_l``.

    ``z_all`` is an ``m x d`` array (or a sequence of m vectors).
    """
    z = np.asarray(z_all, dtype=float)
    if z.ndim != 2 or z.shape[0] != w.m:
        raise ValueError(f"expected {w.m} stacked vectors, got shape {z.shape}")
    return w.w @ z


def auxiliary_w(xbar_t, xbar_prev, gamma: float) -> np.ndarray:
    """Auxiliary iterate ``xbar_t + (1 - gamma)/gamma * (xbar_t - xbar_prev)``."""
    if gamma == 0:
        raise ValueError("gamma must be nonzero")
    return xbar_t + (1.0 - gamma) / gamma * (xbar_t - xbar_prev)


def validate_hyper(hyper: AdmmHyper) -> list[str]:
    """Warnings for settings outside the regime the convergence analysis assumes."""
    warnings = []
    if hyper.eta_l > 2 * hyper.lam:
        warnings.append(f"eta_l={hyper.eta_l} > 2 * lam = {2 * hyper.lam}")
    ratio = hyper.lam / hyper.eta_l
    # tolerate float noise in e.g. 0.1 / 0.1
    if hyper.K < ratio * (1 - 1e-12):
        warnings.append(f"K={hyper.K} < lam / eta_l = {ratio:g}")
    return warnings
