"""Experiment configuration: a flat ``key = value`` file with ``#`` comments.

Every key is optional; unspecified keys take the ``ExperimentConfig`` defaults.
Unknown keys, bad values and violated constraints raise
:class:`~dfedsim.errors.ConfigError` naming the key and ``path:line``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from dfedsim.errors import ConfigError

__all__ = ["ALGORITHMS", "ExperimentConfig", "parse_config", "parse_config_text", "serialize_config"]

ALGORITHMS = ("dfedadmm", "dfedadmm_sam", "dpsgd", "dfedavg", "dfedavgm", "dfedsam")


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str = "dfedadmm"
    # model
    model: str = "mlp"
    hidden: int = 32
    l2: float = 0.0
    init: str = "identical"
    # data
    dataset: str = "synthetic"
    n_train: int = 2000
    n_test: int = 500
    dim: int = 20
    classes: int = 10
    class_sep: float = 1.0
    heterogeneity: float = 0.0
    samples_per_client: int = 50
    mnist_train_images: str = ""
    mnist_train_labels: str = ""
    mnist_test_images: str = ""
    mnist_test_labels: str = ""
    partition: str = "dirichlet"
    alpha: float = 0.3
    min_size: int = 2
    # topology
    topology: str = "random"
    degree: int = 10
    time_varying: str = "auto"
    # optimization
    clients: int = 100
    eta_l: float = 0.1
    lam: float = 0.1
    rho: float = 0.1
    K: int = 5
    momentum: float = 0.9
    decay: float = 0.998
    batch_size: int = 128
    rounds: int = 300
    shared_streams: bool = False
    # run control
    seed: int = 0
    eval_every: int = 1
    out: str = ""
    threads: int = 1

    def __post_init__(self) -> None:
        _check(self, {})

    @property
    def is_time_varying(self) -> bool:
        if self.time_varying == "auto":
            return self.topology == "random"
        return self.time_varying == "true"

    def with_overrides(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)


# config-file key -> dataclass attribute where they differ
_KEY_TO_ATTR = {"lambda": "lam"}
_ATTR_TO_KEY = {v: k for k, v in _KEY_TO_ATTR.items()}

_CHOICES = {
    "algorithm": ALGORITHMS,
    "model": ("logistic", "mlp", "quadratic"),
    "init": ("identical", "per_client"),
    "dataset": ("synthetic", "quadratic", "mnist"),
    "partition": ("dirichlet", "iid"),
    "topology": ("ring", "grid", "exponential", "full", "random"),
    "time_varying": ("auto", "true", "false"),
}

_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _convert(attr: str, raw: str):
    kind = _FIELDS[attr].type
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true/false, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    return raw


def _constraints(c: ExperimentConfig):
    yield "clients", c.clients >= 2, "must be >= 2"
    yield "rounds", c.rounds >= 1, "must be >= 1"
    yield "eval_every", c.eval_every >= 1, "must be >= 1"
    yield "eta_l", c.eta_l > 0, "must be > 0"
    yield "lam", c.lam > 0, "must be > 0"
    yield "rho", c.rho >= 0, "must be >= 0"
    yield "K", c.K >= 1, "must be >= 1"
    yield "momentum", 0 <= c.momentum < 1, "must be in [0, 1)"
    yield "decay", 0 < c.decay <= 1, "must be in (0, 1]"
    yield "batch_size", c.batch_size >= 0, "must be >= 0 (0 = full shard)"
    yield "alpha", c.alpha > 0, "must be > 0"
    yield "min_size", c.min_size >= 1, "must be >= 1"
    yield "threads", c.threads >= 1, "must be >= 1"
    yield "hidden", c.hidden >= 1, "must be >= 1"
    yield "l2", c.l2 >= 0, "must be >= 0"
    yield "dim", c.dim >= 1, "must be >= 1"
    yield "classes", c.classes >= 2, "must be >= 2"
    yield "n_test", c.n_test >= 0, "must be >= 0"
    yield "samples_per_client", c.samples_per_client >= 1, "must be >= 1"
    yield "time_varying", c.time_varying != "true" or c.topology == "random", "= true requires topology = random"
    if c.topology == "random":
        yield "degree", 1 <= c.degree < c.clients, f"must satisfy 1 <= degree < clients ({c.clients})"
    yield "model", (c.model == "quadratic") == (c.dataset == "quadratic"), "quadratic model requires quadratic dataset and vice versa"
    if c.dataset == "synthetic":
        yield "n_train", c.n_train >= max(c.classes, c.clients * c.min_size), "too small for classes and clients * min_size"
    if c.dataset == "mnist":
        for attr in ("mnist_train_images", "mnist_train_labels"):
            yield attr, bool(getattr(c, attr)), "required when dataset = mnist"


def _check(c: ExperimentConfig, lines: dict[str, str]) -> None:
    for attr, ok, msg in _constraints(c):
        if not ok:
            key = _ATTR_TO_KEY.get(attr, attr)
            raise ConfigError(f"{key} = {getattr(c, attr)!r} {msg}", key=key, location=lines.get(attr))
    for attr, choices in _CHOICES.items():
        if getattr(c, attr) not in choices:
            key = _ATTR_TO_KEY.get(attr, attr)
            raise ConfigError(
                f"{key} = {getattr(c, attr)!r}; expected one of {', '.join(choices)}", key=key, location=lines.get(attr)
            )


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    values: dict[str, object] = {}
    lines: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        where = f"{source}:{lineno}"
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", location=where)
        key, raw = (part.strip() for part in line.split("=", 1))
        attr = _KEY_TO_ATTR.get(key, key)
        if attr not in _FIELDS or key in _ATTR_TO_KEY:
            raise ConfigError(f"unknown key {key!r}", key=key, location=where)
        if attr in values:
            raise ConfigError(f"duplicate key {key!r} (first set at {lines[attr]})", key=key, location=where)
        try:
            values[attr] = _convert(attr, raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", key=key, location=where) from None
        lines[attr] = where
    try:
        return ExperimentConfig(**values)
    except ConfigError as exc:
        where = lines.get(_KEY_TO_ATTR.get(exc.key, exc.key), source)
        raise ConfigError(str(exc), key=exc.key, location=where) from None


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc.strerror}", location=str(path)) from None
    return parse_config_text(text, str(path))


def serialize_config(config: ExperimentConfig) -> str:
    """Render every key; ``parse_config_text`` round-trips the result."""
    out = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, float):
            value = repr(value)
        out.append(f"{_ATTR_TO_KEY.get(f.name, f.name)} = {value}")
    return "\n".join(out) + "\n"
