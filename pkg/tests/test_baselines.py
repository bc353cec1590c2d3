import numpy as np
import pytest

from dfedsim.baselines import BASELINES, BaselineKind, baseline_round, dfedavg_local, dpsgd_round
from dfedsim.config import parse_config_text
from dfedsim.data import gen_synthetic_classification, iid_partition
from dfedsim.model import LogisticModel
from dfedsim.simulator import consensus_error, seed_stream
from dfedsim.topology import build_graph, metropolis_weights
from tests.helpers import ConstantGradModel, dummy_data

DATA = gen_synthetic_classification(200, 4, 3, seed=0)
MODEL = LogisticModel(4, 3)
SHARDS = iid_partition(200, 8, seed=1).shards


def rngs(m=8, r=0):
    return [seed_stream(9, i, r) for i in range(m)]


def random_xs(m=8, seed=0):
    return 0.3 * np.random.default_rng(seed).standard_normal((m, MODEL.dim))


def test_momentum_unrolled():
    c = np.array([1.0, 2.0])
    out = dfedavg_local(np.zeros(2), ConstantGradModel(c), dummy_data(), np.arange(4), 1.0, 2, None, momentum=0.9)
    np.testing.assert_allclose(out, -2.9 * c, atol=1e-15)


def test_momentum_buffer_resets_between_calls():
    c = np.array([1.0])
    model = ConstantGradModel(c)
    first = dfedavg_local(np.zeros(1), model, dummy_data(), np.arange(4), 1.0, 2, None, momentum=0.9)
    second = dfedavg_local(first, model, dummy_data(), np.arange(4), 1.0, 2, None, momentum=0.9)
    np.testing.assert_allclose(second, -5.8 * c, atol=1e-14)


def test_single_local_step_matches_dpsgd():
    xs = random_xs()
    w = metropolis_weights(build_graph("ring", 8))
    avg = baseline_round(BaselineKind("dfedavg"), xs, w, MODEL, DATA, SHARDS, 0.1, 1, rngs(), 16)
    dp = dpsgd_round(xs, w, MODEL, DATA, SHARDS, 0.1, rngs(), 16)
    np.testing.assert_array_equal(avg, dp)


def test_dpsgd_ignores_K():
    xs = random_xs()
    w = metropolis_weights(build_graph("ring", 8))
    a = baseline_round(BaselineKind("dpsgd"), xs, w, MODEL, DATA, SHARDS, 0.1, 7, rngs(), 16)
    np.testing.assert_array_equal(a, dpsgd_round(xs, w, MODEL, DATA, SHARDS, 0.1, rngs(), 16))


def test_dpsgd_steps_then_mixes():
    xs = random_xs()
    w = metropolis_weights(build_graph("ring", 8))
    stepped = np.stack([xs[i] - 0.1 * MODEL.grad(xs[i], DATA, SHARDS[i]) for i in range(8)])
    out = dpsgd_round(xs, w, MODEL, DATA, SHARDS, 0.1, rngs())
    np.testing.assert_allclose(out, w.w @ stepped, atol=1e-15)


@pytest.mark.parametrize(
    "reduced, plain",
    [(BaselineKind("dfedsam", rho=0.0), BaselineKind("dfedavg")), (BaselineKind("dfedavgm", 0.0), BaselineKind("dfedavg"))],
)
def test_reductions_bit_identical(reduced, plain):
    w = metropolis_weights(build_graph("exponential", 8))
    xa = xb = random_xs()
    for r in range(5):
        xa = baseline_round(reduced, xa, w, MODEL, DATA, SHARDS, 0.1, 3, rngs(r=r), 16)
        xb = baseline_round(plain, xb, w, MODEL, DATA, SHARDS, 0.1, 3, rngs(r=r), 16)
    np.testing.assert_array_equal(xa, xb)


@pytest.mark.parametrize("tag", BASELINES)
@pytest.mark.parametrize("kind", ["ring", "grid", "random"])
def test_zero_step_is_pure_gossip(tag, kind):
    w = metropolis_weights(build_graph(kind, 9, k=2, seed=4))
    xs = random_xs(9)
    shards = iid_partition(200, 9, seed=0).shards
    initial = consensus_error(xs)
    for t in range(1, 8):
        xs = baseline_round(BaselineKind.for_tag(tag), xs, w, MODEL, DATA, shards, 0.0, 2, rngs(9, t), 8)
        assert consensus_error(xs) <= w.psi ** (2 * t) * initial * (1 + 1e-6)


@pytest.mark.parametrize("tag", BASELINES)
def test_mix_preserves_mean_of_trained_models(tag):
    # with zero-step training the round output mean must equal the input mean
    w = metropolis_weights(build_graph("ring", 8))
    xs = random_xs()
    out = baseline_round(BaselineKind.for_tag(tag), xs, w, MODEL, DATA, SHARDS, 0.0, 2, rngs(), 8)
    assert np.max(np.abs(out.mean(axis=0) - xs.mean(axis=0))) < 1e-12


def test_full_graph_shared_streams_keep_clients_identical():
    w = metropolis_weights(build_graph("full", 8))
    xs = np.tile(random_xs(1)[0], (8, 1))
    shared = iid_partition(200, 1, seed=0).shards * 8
    for r in range(4):
        streams = [seed_stream(1, 0, r) for _ in range(8)]
        xs = baseline_round(BaselineKind.for_tag("dfedavgm"), xs, w, MODEL, DATA, shared, 0.1, 3, streams, 16)
        assert consensus_error(xs) <= 1e-20


def test_round_is_deterministic():
    w = metropolis_weights(build_graph("ring", 8))
    xs = random_xs()
    kind = BaselineKind.for_tag("dfedsam")
    a = baseline_round(kind, xs, w, MODEL, DATA, SHARDS, 0.1, 3, rngs(), 16)
    b = baseline_round(kind, xs, w, MODEL, DATA, SHARDS, 0.1, 3, rngs(), 16)
    np.testing.assert_array_equal(a, b)


def test_pool_map_matches_sequential():
    from concurrent.futures import ThreadPoolExecutor

    w = metropolis_weights(build_graph("ring", 8))
    xs = random_xs()
    kind = BaselineKind.for_tag("dfedavg")
    seq = baseline_round(kind, xs, w, MODEL, DATA, SHARDS, 0.1, 3, rngs(), 16)
    with ThreadPoolExecutor(4) as pool:
        par = baseline_round(kind, xs, w, MODEL, DATA, SHARDS, 0.1, 3, rngs(), 16, pool.map)
    np.testing.assert_array_equal(seq, par)


@pytest.mark.parametrize("tag", BASELINES)
def test_kind_tag_round_trips_through_config(tag):
    cfg = parse_config_text(f"algorithm = {tag}\nmomentum = 0.5\nrho = 0.2\n")
    kind = BaselineKind.for_tag(cfg.algorithm, cfg.momentum, cfg.rho)
    assert kind.tag == tag
    assert kind.momentum == (0.5 if tag == "dfedavgm" else 0.0)
    assert kind.rho == (0.2 if tag == "dfedsam" else None)


def test_kind_rejects_bad_values():
    with pytest.raises(ValueError, match="unknown baseline"):
        BaselineKind("fedavg")
    with pytest.raises(ValueError):
        BaselineKind("dfedavgm", momentum=1.0)
    with pytest.raises(ValueError):
        BaselineKind("dfedsam", rho=-0.1)


def test_dfedavg_local_rejects_zero_steps():
    with pytest.raises(ValueError):
        dfedavg_local(np.zeros(1), ConstantGradModel([1.0]), dummy_data(), np.arange(4), 0.1, 0, None)
