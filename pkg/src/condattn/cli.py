"""Command-line runner for the experiments.

Usage::

    condattn snr --dk 256 --n 17 --trials 10000 --seed 42 --out snr.csv
    condattn frontier --dk 64,128,256 --epsilon 0.05 --delta 0.5 --trials 2000 --seed 1
    condattn --config run.json

A config file is a flat JSON object whose keys are the long flag names
(``command`` included). Output is CSV (default) or JSON; the same config
always produces the same bytes, whatever ``--threads`` is.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import __version__
from .capacity import (
    CapacityTrialConfig,
    capacity_frontier,
    failure_report,
    simulate_retrievals,
    snr_report,
)
from .core import Activation, Norm, stream_rng, unit_rows
from .kernels import HeadConfig, ProjectionSet, retrieve, theorem1_equivalence_check
from .rules import PlasticityRule, RULES, run_rule
from .stacked import PropagationConfig, error_propagation_experiment, run_chain_demo

EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 2, 3, 4
EQUIVALENCE_STREAM, RULES_STREAM = 3, 4
EQUIVALENCE_TOLERANCE = 1e-10

COMMANDS = ("equivalence", "snr", "failure", "frontier", "errors", "rules", "chain")
_COMMON = ("seed", "out", "format")
_PARAMS = {
    "equivalence": ("dk", "n", "instances"),
    "snr": ("dk", "dv", "n", "trials"),
    "failure": ("dk", "dv", "n", "delta", "trials"),
    "frontier": ("dk", "epsilon", "delta", "gamma_snr", "trials"),
    "errors": ("L", "H", "n", "dk", "delta", "trials"),
    "rules": ("dk", "dv", "n", "alpha", "gamma", "tau"),
    "chain": (),
}
_DEFAULTS = {
    "equivalence": dict(dk=(16,), n=(32,), instances=100),
    "snr": dict(dk=(256,), n=(17,), trials=10_000),
    "failure": dict(dk=(64, 256, 1024), n=(5, 11, 33), delta=(0.25, 0.5), trials=10_000),
    "frontier": dict(dk=(64, 128, 256, 512, 1024), epsilon=0.05, delta=(0.5,), gamma_snr=4.0,
                     trials=2000),
    "errors": dict(L=(1, 2, 4, 8), H=(1,), n=(16,), dk=(512,), delta=(0.5,), trials=20_000),
    "rules": dict(dk=(32,), dv=32, n=(1000,), alpha=0.1, gamma=0.9, tau=32.0),
    "chain": dict(),
}
_LISTS = ("dk", "n", "delta", "L", "H")
_SINGLE = {"rules": ("dk", "n"), "frontier": ("delta",)}


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    seed: int
    out: str = "-"
    format: str = "csv"
    dk: tuple = ()
    dv: Optional[int] = None
    n: tuple = ()
    delta: tuple = ()
    L: tuple = ()
    H: tuple = ()
    trials: Optional[int] = None
    epsilon: Optional[float] = None
    gamma_snr: Optional[float] = None
    instances: Optional[int] = None
    alpha: Optional[float] = None
    gamma: Optional[float] = None
    tau: Optional[float] = None

    def keys(self) -> tuple:
        return ("command",) + _COMMON + _PARAMS[self.command]

    def to_dict(self, include_output: bool = True) -> dict:
        d = {k: getattr(self, k) for k in self.keys()}
        if not include_output:
            d.pop("out")
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def to_argv(self) -> list:
        argv = [self.command]
        for k, v in self.to_dict().items():
            if k == "command" or v is None:
                continue
            argv.append("--" + k.replace("_", "-"))
            argv.append(",".join(_fmt(x) for x in v) if isinstance(v, list) else _fmt(v))
        return argv


def _fmt(x) -> str:
    return repr(x) if isinstance(x, float) else str(x)


def _check(cond: bool, message: str):
    if not cond:
        raise UsageError(message)


def _int_list(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    if isinstance(text, int):
        return (text,)
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _float_list(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    if isinstance(text, (int, float)):
        return (float(text),)
    return tuple(float(x) for x in str(text).split(",") if x.strip())


_CONVERT = {
    "seed": int, "trials": int, "instances": int, "dv": int,
    "epsilon": float, "gamma_snr": float, "alpha": float, "gamma": float, "tau": float,
    "dk": _int_list, "n": _int_list, "L": _int_list, "H": _int_list, "delta": _float_list,
    "out": str, "format": str,
}


def build_config(values: dict) -> RunConfig:
    """Validate a flat mapping of parameters into a :class:`RunConfig`."""
    values = {k: v for k, v in values.items() if v is not None}
    command = values.pop("command", None)
    _check(command in COMMANDS, f"command must be one of {', '.join(COMMANDS)}")
    allowed = set(_COMMON) | set(_PARAMS[command])
    unknown = sorted(set(values) - allowed)
    _check(not unknown, f"unknown parameter(s) for {command}: {', '.join(unknown)}")
    _check("seed" in values, "--seed is required")

    merged = dict(_DEFAULTS[command])
    for k, v in values.items():
        try:
            merged[k] = _CONVERT[k](v)
        except (TypeError, ValueError):
            raise UsageError(f"--{k.replace('_', '-')}: cannot parse {v!r}") from None
    cfg = RunConfig(command=command, **merged)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    _check(cfg.format in ("csv", "json"), "--format must be csv or json")
    _check(-(1 << 63) <= cfg.seed < (1 << 64), "--seed must fit in 64 bits")
    keys = _PARAMS[cfg.command]
    for k in _LISTS:
        if k in keys:
            vals = getattr(cfg, k)
            _check(len(vals) > 0, f"--{k} needs at least one value")
            if k == "delta":
                _check(all(v > 0 and math.isfinite(v) for v in vals), "--delta values must be > 0")
            else:
                _check(all(v >= 1 for v in vals), f"--{k} values must be >= 1")
    for k in _SINGLE.get(cfg.command, ()):
        _check(len(getattr(cfg, k)) == 1, f"--{k} takes a single value for {cfg.command}")
    if cfg.dv is not None:
        _check(cfg.dv >= 1, "--dv must be >= 1")
    for k in ("trials", "instances"):
        if k in keys:
            _check(getattr(cfg, k) >= 1, f"--{k} must be >= 1")
    if "epsilon" in keys:
        _check(0 < cfg.epsilon < 1, "--epsilon must lie in (0, 1)")
    if "gamma_snr" in keys:
        _check(cfg.gamma_snr > 0, "--gamma-snr must be > 0")
    if "alpha" in keys:
        _check(cfg.alpha > 0, "--alpha must be > 0")
    if "gamma" in keys:
        _check(0 < cfg.gamma < 1, "--gamma must lie in (0, 1)")
    if "tau" in keys:
        _check(cfg.tau > 0, "--tau must be > 0")
    if cfg.command in ("snr", "failure"):
        _check(min(cfg.n) >= 2, "--n must be >= 2 (no interference with a single pair)")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="condattn", description="Conditioning-memory experiments.")
    p.add_argument("command", nargs="?", choices=COMMANDS)
    p.add_argument("--config", help="flat JSON file of parameters")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    p.add_argument("--seed")
    p.add_argument("--out")
    p.add_argument("--format")
    for k in ("dk", "dv", "n", "delta", "L", "H", "trials", "epsilon", "gamma_snr",
              "instances", "alpha", "gamma", "tau"):
        p.add_argument("--" + k.replace("_", "-"), dest=k)
    return p


def parse_args(argv) -> tuple:
    """Parse ``argv`` into ``(RunConfig, threads)``."""
    ns = vars(_parser().parse_args(argv))
    threads = ns.pop("threads")
    _check(threads is None or threads >= 1, "--threads must be >= 1")
    path = ns.pop("config")
    values = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                values = parse_config_text(fh.read(), as_mapping=True)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
    values.update({k: v for k, v in ns.items() if v is not None})
    return build_config(values), threads


def parse_config(argv) -> RunConfig:
    return parse_args(argv)[0]


def parse_config_text(text: str, as_mapping: bool = False):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from None
    _check(isinstance(data, dict), "config must be a flat JSON object")
    for k, v in data.items():
        _check(not isinstance(v, dict), f"config key {k!r} must not be nested")
    return data if as_mapping else build_config(data)


# -- experiment runners; each returns a list of flat row dicts ----------------

def _run_equivalence(cfg: RunConfig, threads):
    rows = []
    for d, n in itertools.product(cfg.dk, cfg.n):
        instances = []
        for i in range(cfg.instances):
            rng = stream_rng(cfg.seed, EQUIVALENCE_STREAM, d, n, i)
            X = rng.standard_normal((n, d))
            W = [rng.standard_normal((d, d)) / math.sqrt(d) for _ in range(3)]
            instances.append((X, ProjectionSet(*W)))
        for phi in (Activation.IDENTITY, Activation.ELU_PLUS_ONE):
            for norm in (Norm.NONE, Norm.RMS, Norm.LAYER):
                dev = max(theorem1_equivalence_check(X, P, phi, norm) for X, P in instances)
                rows.append(dict(phi=phi.value, norm=norm.value, d=d, n=n,
                                 instances=cfg.instances, max_deviation=dev,
                                 tolerance=EQUIVALENCE_TOLERANCE,
                                 passed=dev <= EQUIVALENCE_TOLERANCE))
    return rows


def _run_snr(cfg: RunConfig, threads):
    rows = []
    for d_k, n in itertools.product(cfg.dk, cfg.n):
        tc = CapacityTrialConfig(d_k, n, trials=cfg.trials, seed=cfg.seed, d_v=cfg.dv)
        rows.append(dict(d_k=d_k, d_v=tc.d_v, n=n, seed=cfg.seed,
                         **asdict(snr_report(simulate_retrievals(tc, threads, worst_case=False)))))
    return rows


def _run_failure(cfg: RunConfig, threads):
    rows = []
    for d_k, n in itertools.product(cfg.dk, cfg.n):
        tc = CapacityTrialConfig(d_k, n, trials=cfg.trials, seed=cfg.seed, d_v=cfg.dv)
        run = simulate_retrievals(tc, threads)
        for delta in cfg.delta:
            rep = failure_report(run, delta)
            rows.append(dict(d_k=d_k, d_v=tc.d_v, n=n, delta=delta, seed=cfg.seed,
                             **asdict(rep), markov_compliant=rep.markov_compliant,
                             union_compliant=rep.union_compliant))
    return rows


def _run_frontier(cfg: RunConfig, threads):
    res = capacity_frontier(cfg.dk, cfg.epsilon, cfg.delta[0], cfg.trials, cfg.seed,
                            cfg.gamma_snr, threads)
    return [dict(asdict(p), epsilon=res.epsilon, delta=res.delta, gamma_snr=res.gamma_snr,
                 trials=res.trials, worst_case_slope=res.worst_case_slope,
                 average_case_slope=res.average_case_slope, monotone=res.monotone)
            for p in res.points]


def _run_errors(cfg: RunConfig, threads):
    rows = []
    for L, H, n, d_k, delta in itertools.product(cfg.L, cfg.H, cfg.n, cfg.dk, cfg.delta):
        pc = PropagationConfig(L, H, n, d_k, delta, cfg.trials, cfg.seed)
        r = error_propagation_experiment(pc, threads)
        rows.append(dict(L=L, H=H, n=n, d_k=d_k, delta=delta, trials=cfg.trials,
                         empirical_rate=r.empirical_error_rate, bound=r.bound,
                         approx_bound=r.approx_bound, ci_halfwidth=r.ci_halfwidth,
                         vacuous=r.vacuous, head_failure_rate=r.head_failure_rate,
                         per_layer_rates=list(r.per_layer_rates)))
    return rows


def _run_rules(cfg: RunConfig, threads):
    d_k, d_v, steps = cfg.dk[0], (cfg.dv or cfg.dk[0]), cfg.n[0]
    rng = stream_rng(cfg.seed, RULES_STREAM, d_k, d_v, steps)
    keys, values = unit_rows(rng, steps, d_k), unit_rows(rng, steps, d_v)
    head = HeadConfig(alpha=cfg.alpha)
    rows = []
    for tag in RULES:
        rule = PlasticityRule(tag, cfg.alpha,
                              gamma=cfg.gamma if tag == "decay" else None,
                              tau=cfg.tau if tag == "bcm" else None)
        result = run_rule(rule, keys, values, head)
        state, theta = (result if tag == "bcm" else (result, None))
        recall = retrieve(keys[-1], state, head)
        rows.append(dict(rule=tag, steps=steps, d_k=d_k, d_v=d_v, alpha=cfg.alpha,
                         frobenius=float(np.linalg.norm(state.S)),
                         max_abs_entry=float(np.max(np.abs(state.S))),
                         last_recall_error=float(np.linalg.norm(recall - values[-1])),
                         mean_theta=float(theta.theta.mean()) if theta is not None else None))
    return rows


def _run_chain(cfg: RunConfig, threads):
    # One row per premise; the no-premise control lives in run_chain_demo.
    return [r for r in run_chain_demo() if r["context"] != "none"]


_RUNNERS = {
    "equivalence": _run_equivalence, "snr": _run_snr, "failure": _run_failure,
    "frontier": _run_frontier, "errors": _run_errors, "rules": _run_rules, "chain": _run_chain,
}


@dataclass
class ResultEnvelope:
    config: RunConfig
    rows: list
    version: str = __version__
    runtime_seconds: float = 0.0

    def to_json(self) -> str:
        # Runtime is left out so that reruns are byte-identical.
        doc = {"version": self.version, "config": self.config.to_dict(include_output=False),
               "rows": [_json_row(r) for r in self.rows]}
        return json.dumps(doc, indent=2, allow_nan=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        if self.rows:
            writer = csv.writer(buf, lineterminator="\n")
            header = list(self.rows[0])
            writer.writerow(header)
            for row in self.rows:
                writer.writerow([_csv_cell(row[k]) for k in header])
        return buf.getvalue()

    def render(self) -> str:
        return self.to_json() if self.config.format == "json" else self.to_csv()


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (list, tuple)):
        return ";".join(_csv_cell(x) for x in v)
    return str(v)


def _json_row(row: dict) -> dict:
    out = {}
    for k, v in row.items():
        if isinstance(v, np.bool_):
            v = bool(v)
        elif isinstance(v, np.floating):
            v = float(v)
        elif isinstance(v, np.integer):
            v = int(v)
        out[k] = v
    return out


def run(cfg: RunConfig, threads: Optional[int] = None) -> ResultEnvelope:
    """Run the configured experiment and write its output file."""
    if cfg.out != "-":
        parent = os.path.dirname(os.path.abspath(cfg.out))
        if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
            raise OSError(f"output directory {parent!r} is missing or not writable")
    start = time.perf_counter()
    rows = _RUNNERS[cfg.command](cfg, threads)
    env = ResultEnvelope(cfg, rows, runtime_seconds=time.perf_counter() - start)
    text = env.render()
    if cfg.out == "-":
        sys.stdout.write(text)
    else:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return env


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg, threads = parse_args(argv)
        env = run(cfg, threads)
    except UsageError as exc:
        print(f"condattn: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"condattn: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, FloatingPointError, ArithmeticError) as exc:
        print(f"condattn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"condattn: {cfg.command} finished in {env.runtime_seconds:.2f}s", file=sys.stderr)
    return 0
