"""Experiment driver: method sweeps, generalization tables and the property suite."""

from __future__ import annotations

import csv
import io
import json
import logging
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import SCENARIOS, SystemConfig, desk_config
from .pilot import compact, labels_to_matrix
from .sim import evaluate_frame
from .solvers import MAX_ORACLE_K, dsatur_tabu_wmmse, exhaustive_oracle, wmmse_rule
from .training import (Dataset, EvalResult, Policy, TrainConfig, evaluate_policy,
                       generate_dataset, load_policy, save_policy, train)

log = logging.getLogger(__name__)

CSV_VERSION = 1
CSV_FIELDS = ["schema", "method", "variable", "value", "eta_mean", "eta_std", "tau_mean", "n_test"]

LEARNED = {
    "dts_agnn": dict(variant="dts", attention=True),
    "dts_gnn": dict(variant="dts", attention=False),
    "sts_agnn": dict(variant="sts", attention=True),
    "sts_gnn": dict(variant="sts", attention=False),
    "sts_no_fe": dict(variant="sts", feature_enhancement=False),
}
CLASSICAL = ("dsatur_tabu_wmmse", "oracle", "equal_power_random_pilots")
SWEEP_VARIABLES = ("tau_c", "K", "M", "N", "scenario")
_FIXED = re.compile(r"^sts_fixed_tau\((\w+)\)$")

# Training overrides for the desk-scale suite: minutes on one CPU core.
DESK_TRAIN = {"n_train": 300, "epochs": 60, "lr_decay": 0.97}
ORDERING_METHODS = ["sts_agnn", "sts_fixed_tau(K)", "sts_fixed_tau(2)", "sts_no_fe", "dts_agnn"]


class ExperimentError(RuntimeError):
    pass


def method_train_config(method: str, base: dict, K: int) -> TrainConfig:
    """Training configuration of a learned method (``ExperimentError`` otherwise)."""
    m = _FIXED.match(method)
    if m:
        z = K if m.group(1) == "K" else int(m.group(1))
        opts = dict(variant="sts", fixed_tau=z)
    elif method in LEARNED:
        opts = dict(LEARNED[method])
    else:
        raise ExperimentError(f"{method!r} is not a learned method")
    return TrainConfig.from_dict({**base, **opts})


def is_learned(method: str) -> bool:
    return method in LEARNED or bool(_FIXED.match(method))


def _scenario(name: str):
    for key, scenario in SCENARIOS.items():
        if key.lower() == str(name).lower():
            return scenario
    raise ExperimentError(f"unknown scenario {name!r}; expected one of {sorted(SCENARIOS)}")


@dataclass
class ExperimentSpec:
    methods: list
    variable: str = "tau_c"
    values: list = field(default_factory=lambda: [100])
    seed: int = 0
    n_test: int = 50
    config: dict = field(default_factory=dict)  # SystemConfig overrides of the desk default
    train: dict = field(default_factory=dict)  # TrainConfig overrides
    checkpoints: dict = field(default_factory=dict)  # method -> path, may contain "{value}"
    train_missing: bool = True
    save_checkpoints: bool = False
    oracle_power: str = "equal"

    def validate(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ExperimentError(f"unknown sweep variable {self.variable!r}")
        if not self.values:
            raise ExperimentError("sweep needs at least one value")
        for method in self.methods:
            if not (is_learned(method) or method in CLASSICAL):
                raise ExperimentError(f"unknown method {method!r}")
        if self.n_test < 1:
            raise ExperimentError("n_test must be positive")
        if "scenario" in self.config:
            _scenario(self.config["scenario"])
        if self.variable == "scenario":
            for value in self.values:
                _scenario(value)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ExperimentError(f"unknown spec fields {sorted(unknown)}")
        spec = cls(**d)
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def system_config(self, value=None) -> SystemConfig:
        cfg = desk_config().replace(**{k: v for k, v in self.config.items() if k != "scenario"})
        if "scenario" in self.config:
            cfg = cfg.replace(scenario=_scenario(self.config["scenario"]))
        if value is None:
            return cfg
        if self.variable == "scenario":
            return cfg.replace(scenario=_scenario(value))
        return cfg.replace(**{self.variable: value})


@dataclass
class ResultRow:
    method: str
    variable: str
    value: object
    eta_mean: float
    eta_std: float
    tau_mean: float
    n_test: int
    seconds: float = 0.0

    def csv_row(self) -> dict:
        return {"schema": CSV_VERSION, "method": self.method, "variable": self.variable,
                "value": self.value, "eta_mean": f"{self.eta_mean:.10g}",
                "eta_std": f"{self.eta_std:.10g}", "tau_mean": f"{self.tau_mean:.10g}",
                "n_test": self.n_test}


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row.csv_row())
    return buf.getvalue()


def get_policy(method: str, config: SystemConfig, spec: ExperimentSpec, value=None,
               train_data: Dataset | None = None) -> Policy:
    """Load a method's checkpoint or, if allowed, train it."""
    tc = method_train_config(method, {"seed": spec.seed, **spec.train}, config.K)
    path = spec.checkpoints.get(method)
    if path is not None:
        path = Path(str(path).format(value=value))
        if path.exists():
            policy, _ = load_policy(path)
            return policy
        if not spec.train_missing:
            raise ExperimentError(f"missing checkpoint {path} for {method}")
    elif not spec.train_missing:
        raise ExperimentError(f"no checkpoint configured for {method}")
    if train_data is None:
        train_data = generate_dataset(config, tc.n_train, [spec.seed, 2])
    log.info("training %s at %s=%s", method, spec.variable, value)
    policy = train(config, tc, data=train_data)
    if path is not None and spec.save_checkpoints:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_policy(path, policy, config)
    return policy


def evaluate_classical(method: str, config: SystemConfig, data: Dataset, seed=0,
                       oracle_power: str = "equal") -> EvalResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, 5])
    etas, taus, assigns, powers = [], [], [], []
    for b in range(len(data)):
        channels = data[b].channels()
        if method == "dsatur_tabu_wmmse":
            res = dsatur_tabu_wmmse(channels, config)
            X, frame = res.X, res.frame
        elif method == "oracle":
            X = exhaustive_oracle(channels, config, oracle_power).X
            power = "equal" if oracle_power == "equal" else wmmse_rule(config, channels)
            frame = evaluate_frame(compact(X).X_o, channels, config, power)
        elif method == "equal_power_random_pilots":
            X = labels_to_matrix(rng.integers(0, config.K, size=config.K), config.K)
            frame = evaluate_frame(compact(X).X_o, channels, config, "equal")
        else:
            raise ExperimentError(f"unknown classical method {method!r}")
        etas.append(frame.eta_bar)
        taus.append(frame.tau_p)
        assigns.append(X)
        powers.append(np.array(frame.powers))
    return EvalResult(np.array(etas), np.array(taus, float), assigns, powers,
                      time.perf_counter() - t0)


def _sweep_point(spec: ExperimentSpec, value) -> list:
    config = spec.system_config(value)
    train_data, test_data = None, generate_dataset(config, spec.n_test, [spec.seed, 100])
    rows = []
    for method in spec.methods:
        if method == "oracle" and config.K > MAX_ORACLE_K:
            continue
        if is_learned(method):
            if train_data is None and spec.train_missing:
                tc = TrainConfig.from_dict({"seed": spec.seed, **spec.train})
                train_data = generate_dataset(config, tc.n_train, [spec.seed, 2])
            policy = get_policy(method, config, spec, value, train_data)
            res = evaluate_policy(policy, config, test_data, spec.seed)
        else:
            res = evaluate_classical(method, config, test_data, spec.seed, spec.oracle_power)
        rows.append(ResultRow(method, spec.variable, value, res.mean, float(np.std(res.eta_bar)),
                              float(np.mean(res.tau_p)), len(test_data), res.seconds))
    return rows


def run_sweep(spec: ExperimentSpec, progress=None, workers: int = 1) -> list:
    """One result row per (method, value); oracle rows only when ``K <= 7``.

    Sweep points are independent and deterministic, so ``workers > 1`` runs
    them in separate processes without changing any result.
    """
    spec.validate()
    if workers > 1 and len(spec.values) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_value = list(pool.map(_sweep_point, [spec] * len(spec.values), spec.values))
    else:
        per_value = [_sweep_point(spec, value) for value in spec.values]
    rows = [row for point in per_value for row in point]
    if progress is not None:
        for row in rows:
            progress(row)
    return rows


@dataclass
class GeneralizationRow:
    variable: str
    value: object
    eta_transfer: float
    eta_native: float

    @property
    def ratio(self) -> float:
        return self.eta_transfer / self.eta_native if self.eta_native > 0 else float("nan")


def run_generalization(spec: ExperimentSpec, train_value, method: str = "dts_agnn",
                       progress=None) -> list:
    """Zero-shot transfer of a model trained at ``train_value`` to every sweep value.

    The ratio's denominator is the same method trained at the test value.
    """
    spec.validate()
    source_cfg = spec.system_config(train_value)
    source = get_policy(method, source_cfg, spec, train_value)
    rows = []
    for value in spec.values:
        config = spec.system_config(value)
        test_data = generate_dataset(config, spec.n_test, [spec.seed, 100])
        transfer = evaluate_policy(source, config, test_data, spec.seed).mean
        if value == train_value:
            native = transfer
        else:
            native = evaluate_policy(get_policy(method, config, spec, value), config,
                                     test_data, spec.seed).mean
        row = GeneralizationRow(spec.variable, value, transfer, native)
        rows.append(row)
        if progress is not None:
            progress(row)
    return rows


def generalization_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["schema", "variable", "value", "eta_transfer", "eta_native", "ratio"])
    for r in rows:
        writer.writerow([CSV_VERSION, r.variable, r.value, f"{r.eta_transfer:.10g}",
                         f"{r.eta_native:.10g}", f"{r.ratio:.10g}"])
    return buf.getvalue()


def run_property_suite(seed: int = 0, quick: bool = False) -> list:
    """Run every invariant check; returns ``(name, passed, detail)`` tuples."""
    from . import properties

    return properties.run_all(seed, quick)
