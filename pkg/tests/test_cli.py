import dataclasses

import pytest

from dfedsim.cli import main
from dfedsim.config import ExperimentConfig, parse_config, parse_config_text, serialize_config
from dfedsim.errors import ConfigError
from dfedsim.verify import CHECKS

SMALL = "model = logistic\nn_train = 240\nn_test = 60\ndim = 5\nclasses = 3\nclients = 6\ndegree = 2\nbatch_size = 8\nrounds = 3\nK = 2\n"


def test_empty_config_gives_defaults():
    cfg = parse_config_text("# nothing here\n\n")
    assert cfg == ExperimentConfig()
    assert (cfg.eta_l, cfg.lam, cfg.rho, cfg.K, cfg.decay, cfg.momentum) == (0.1, 0.1, 0.1, 5, 0.998, 0.9)


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="lamda") as info:
        parse_config_text("lamda = 0.1\n", "exp.cfg")
    assert info.value.key == "lamda" and info.value.location == "exp.cfg:1"


def test_attribute_name_is_not_a_key():
    with pytest.raises(ConfigError, match="unknown key 'lam'"):
        parse_config_text("lam = 0.1\n")


def test_lambda_constraint_with_location():
    with pytest.raises(ConfigError) as info:
        parse_config_text("K = 3\nlambda = 0\n", "exp.cfg")
    assert info.value.key == "lambda" and info.value.location == "exp.cfg:2"
    assert "exp.cfg:2" in str(info.value)


@pytest.mark.parametrize(
    "text, key",
    [("K = five\n", "K"), ("shared_streams = maybe\n", "shared_streams"), ("algorithm = fedavg\n", "algorithm"), ("K = 1\nK = 2\n", "K")],
)
def test_bad_values_name_the_key(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config_text(text)
    assert info.value.key == key


def test_line_without_equals():
    with pytest.raises(ConfigError, match=":1"):
        parse_config_text("rounds 10\n", "x.cfg")


def test_inline_comments_and_quotes():
    cfg = parse_config_text('algorithm = dfedsam  # baseline\nout = "run.csv"\nlambda = 0.25\n')
    assert (cfg.algorithm, cfg.out, cfg.lam) == ("dfedsam", "run.csv", 0.25)


def test_serialize_round_trip():
    cfg = ExperimentConfig(algorithm="dfedavgm", lam=0.3, rho=1 / 3, shared_streams=True, out="x.csv", clients=7, degree=3)
    assert parse_config_text(serialize_config(cfg)) == cfg
    assert parse_config_text(serialize_config(ExperimentConfig())) == ExperimentConfig()


def test_every_field_serialized():
    text = serialize_config(ExperimentConfig())
    assert len(text.splitlines()) == len(dataclasses.fields(ExperimentConfig))


def test_parse_config_missing_file(tmp_path):
    with pytest.raises(ConfigError) as info:
        parse_config(tmp_path / "nope.cfg")
    assert "nope.cfg" in str(info.value)


def test_verify_check_list_not_shrinking():
    assert len(CHECKS) >= 15
    assert len({name for name, _, _ in CHECKS}) == len(CHECKS)


def test_verify_exits_zero(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert f"{len(CHECKS)}/{len(CHECKS)} checks passed" in out
    assert "FAIL" not in out


def test_verify_only_subset(capsys):
    assert main(["verify", "--only", "gamma_sum"]) == 0
    assert "1/1 checks passed" in capsys.readouterr().out


def test_verify_unknown_check(capsys):
    assert main(["verify", "--only", "bogus"]) == 2
    assert "bogus" in capsys.readouterr().err


def test_topology_full_psi_zero(capsys):
    assert main(["topology", "full", "16"]) == 0
    out = capsys.readouterr().out
    assert "psi: 0\n" in out and "edges: 120" in out


def test_topology_csv(capsys):
    assert main(["topology", "ring", "4", "--csv", "--t-max", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "t,norm,psi_pow_t" and len(lines) == 4


def test_topology_bad_random(capsys):
    assert main(["topology", "random", "5"]) == 2
    assert "k" in capsys.readouterr().err


def test_run_twice_identical(tmp_path, capsys):
    cfg = tmp_path / "small.cfg"
    cfg.write_text(SMALL)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["run", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(b), "--threads", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().startswith("round,eta,psi,train_loss,test_acc,grad_norm_sq,consensus_err\n")
    assert "dfedadmm: round 2" in capsys.readouterr().err


def test_run_to_stdout(tmp_path, capsys):
    cfg = tmp_path / "small.cfg"
    cfg.write_text(SMALL)
    assert main(["run", "--config", str(cfg), "--seed", "4"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 4


def test_run_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("lamda = 0.1\n")
    assert main(["run", "--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "lamda" in err and "bad.cfg:1" in err


def test_run_bad_flag_override(tmp_path, capsys):
    cfg = tmp_path / "small.cfg"
    cfg.write_text(SMALL)
    assert main(["run", "--config", str(cfg), "--threads", "0"]) == 2
    assert "threads" in capsys.readouterr().err


def test_run_divergence_exit_code(tmp_path, capsys):
    cfg = tmp_path / "boom.cfg"
    cfg.write_text("model = quadratic\ndataset = quadratic\nheterogeneity = 1\nclients = 4\ntopology = ring\neta_l = 50\nlambda = 50\nrounds = 300\nbatch_size = 0\n")
    assert main(["run", "--config", str(cfg)]) == 3
    assert "round=" in capsys.readouterr().err


def test_partition_stats(tmp_path, capsys):
    cfg = tmp_path / "small.cfg"
    cfg.write_text(SMALL)
    assert main(["partition-stats", "--config", str(cfg), "--clients", "4", "--alpha", "0.5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "shard_id,size,class_0,class_1,class_2"
    rows = [list(map(int, line.split(","))) for line in lines[1:]]
    assert len(rows) == 4
    assert sum(r[1] for r in rows) == 240
    assert all(r[1] == sum(r[2:]) for r in rows)


def test_partition_stats_iid_to_file(tmp_path):
    cfg = tmp_path / "small.cfg"
    cfg.write_text(SMALL)
    out = tmp_path / "p.csv"
    assert main(["partition-stats", "--config", str(cfg), "--iid", "--out", str(out)]) == 0
    sizes = [int(line.split(",")[1]) for line in out.read_text().splitlines()[1:]]
    assert sizes == [40] * 6


def test_partition_stats_rejects_quadratic(tmp_path, capsys):
    cfg = tmp_path / "q.cfg"
    cfg.write_text("model = quadratic\ndataset = quadratic\nclients = 4\ntopology = ring\n")
    assert main(["partition-stats", "--config", str(cfg)]) == 2
    assert "dataset" in capsys.readouterr().err


def test_missing_mnist_file(tmp_path, capsys):
    cfg = tmp_path / "m.cfg"
    cfg.write_text(f"dataset = mnist\nmnist_train_images = {tmp_path}/x\nmnist_train_labels = {tmp_path}/y\nclients = 4\ndegree = 2\n")
    assert main(["run", "--config", str(cfg)]) == 2
    assert str(tmp_path) in capsys.readouterr().err


def test_time_varying_needs_random_topology():
    with pytest.raises(ConfigError) as info:
        parse_config_text("topology = ring\ntime_varying = true\n", "t.cfg")
    assert info.value.key == "time_varying" and info.value.location == "t.cfg:2"
