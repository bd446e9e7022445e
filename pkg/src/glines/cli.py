"""
Configuration-driven experiment runner.

``glines run <config> [--key value ...]`` executes one experiment and writes
a CSV or JSON result table; ``glines calibrate <config>`` writes a
key=value constants file. Configs are flat ``key = value`` text with ``#``
comments; flags override config keys of the same name.

Exit codes: 0 success, 1 configuration error, 2 violated precondition,
3 rejection budget exhausted (partial results are still written).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from typing import Dict, List, Optional

from .experiments import (AssumptionViolated, ExperimentReport, NotFavorable, SupAbsEvent,
                          canonical_separation, epsilon_oracle, favorable_triple,
                          parabola_layers, run_calibration, run_core_inequality,
                          run_denominator, run_favorable_frequency, run_numerator,
                          run_separation, threshold_for_epsilon)
from .geometry import (BadParams, ScheduleMismatch, ScheduleParams, box_grid,
                       parameter_schedule, schedule_for_scale)
from .grid_paths import GlinesError
from .samplers import (ChainSettings, Estimate, MaxAttemptsExceeded, SurrogateSpec,
                       sample_surrogate, surrogate_layers)
from .weights import HamiltonianSpec

__all__ = ["ConfigParse", "RunConfig", "parse_config", "load_config", "run", "calibrate",
           "write_report", "read_results", "read_constants", "main"]

EXPERIMENTS = ("separation", "denominator", "numerator", "core_inequality",
               "favorable_frequency", "calibrate")


class ConfigParse(GlinesError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"field '{key}'")
        super().__init__(("; ".join(where) + ": " if where else "") + message)
        self.line = line
        self.key = key


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


# key -> (parser, default); a default of None means optional without value
KEYS = {
    "experiment": (str, None),
    "k": (int, None),
    "T": (float, None),
    "epsilon": (float, None),
    "s": (float, 1.0),
    "E": (float, None),
    "n_per_unit": (int, 8),
    "N": (int, None),
    "master_seed": (int, None),
    "output": (str, None),
    "format": (str, "csv"),
    "t": (float, 1.0),
    "c2_scale": (float, None),
    "constants": (str, None),
    "sweeps": (int, 200),
    "floor_depth": (float, 2.0),
    "mu": (float, 0.5),
    "floor_slope": (float, 1.0),
    "gap_constant": (float, 1.0),
    "n_poles": (int, None),
    "max_attempts": (int, 50_000_000),
    "n_triples": (int, 3),
    "n_jump": (int, 2000),
    "events": (_floats, (0.3, 0.1, 0.03)),
    "event_epsilon": (float, 0.1),
    "boundary": (str, "surrogate"),
    "boundary_draws": (int, 50),
    "D": (float, None),
    "chain_check": (_bool, False),
    "headroom": (float, 1.25),
}
REQUIRED = ("experiment", "k", "N", "master_seed", "output")


@dataclass
class RunConfig:
    values: Dict[str, object]
    source: Dict[str, str]

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v


def _parse_pairs(lines: List[str]) -> Dict[str, tuple]:
    out = {}
    for no, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigParse("expected key = value", line=no)
        key, value = (p.strip() for p in text.split("=", 1))
        if key not in KEYS:
            raise ConfigParse("unknown key", line=no, key=key)
        out[key] = (value, no)
    return out


def parse_config(text: str, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """Parse and validate a key=value config; ``overrides`` win over the file."""
    pairs = _parse_pairs(text.splitlines())
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigParse("unknown flag", key=key)
        pairs[key] = (value, None)
    values, source = {}, {}
    for key, (parser, default) in KEYS.items():
        if key in pairs:
            raw, line = pairs[key]
            try:
                values[key] = parser(raw)
            except ValueError as exc:
                raise ConfigParse(str(exc), line=line, key=key) from None
            source[key] = raw
        else:
            values[key] = default
    for key in REQUIRED:
        if values[key] is None:
            raise ConfigParse("missing required field", key=key)
    if values["experiment"] not in EXPERIMENTS:
        raise ConfigParse(f"must be one of {', '.join(EXPERIMENTS)}", key="experiment",
                          line=pairs["experiment"][1])
    if values["format"] not in ("csv", "json"):
        raise ConfigParse("must be csv or json", key="format")
    if values["boundary"] not in ("surrogate", "parabola"):
        raise ConfigParse("must be surrogate or parabola", key="boundary")
    if values["T"] is None and (values["epsilon"] is None or values["E"] is None):
        raise ConfigParse("give T, or both epsilon and E", key="T")
    if values["N"] < 1:
        raise ConfigParse("must be positive", key="N")
    return RunConfig(values, source)


def load_config(path: str, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigParse(f"cannot read config: {exc}") from None
    return parse_config(text, overrides)


def read_constants(path: str) -> Dict[str, float]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            text = raw.split("#", 1)[0].strip()
            if text:
                key, value = (p.strip() for p in text.split("=", 1))
                out[key] = float(value)
    return out


def _schedule(cfg: RunConfig) -> ScheduleParams:
    c2 = cfg["c2_scale"]
    if c2 is None and cfg["constants"] is not None:
        c2 = read_constants(cfg["constants"]).get("c2_scale")
    c2 = 1.0 / 400.0 if c2 is None else c2
    if cfg["T"] is not None:
        sched = schedule_for_scale(cfg["T"], cfg["k"], cfg["s"], cfg["epsilon"], c2)
        if cfg["E"] is not None and cfg["E"] < 10:
            raise BadParams(f"need E >= 10, got E={cfg['E']}")
    else:
        sched = parameter_schedule(cfg["epsilon"], cfg["k"], cfg["s"], cfg["E"], c2)
    need = max(8, math.ceil(sched.T ** 1.5 - 1e-9))
    if cfg["n_per_unit"] < need:
        raise ConfigParse(f"must be at least max(8, ceil(T^1.5)) = {need} at T={sched.T:g}",
                          key="n_per_unit")
    return sched


def _surrogate(cfg: RunConfig, sched: ScheduleParams) -> SurrogateSpec:
    return SurrogateSpec(cfg["k"], sched.T, cfg["t"], cfg["n_per_unit"], cfg["floor_depth"],
                         ChainSettings(sweeps=cfg["sweeps"]))


def _triple(cfg: RunConfig, sched: ScheduleParams):
    if cfg["boundary"] == "parabola":
        layers = parabola_layers(box_grid(sched, cfg["n_per_unit"]), cfg["k"])
        domain, boundary, fav = favorable_triple(layers, sched)
        if fav.passed:
            return domain, boundary
    else:
        res = sample_surrogate(_surrogate(cfg, sched), cfg["boundary_draws"], cfg["master_seed"],
                               "boundary")
        for v in res.values:
            domain, boundary, fav = favorable_triple(surrogate_layers(res.grid, v), sched)
            if fav.passed:
                return domain, boundary
    raise NotFavorable("no favorable boundary triple among the candidates")


def _event_name(eps: float) -> str:
    return f"eps{eps!r}"


def _execute(cfg: RunConfig) -> ExperimentReport:
    exp = cfg["experiment"]
    sched = _schedule(cfg)
    seed, n, npu = cfg["master_seed"], cfg["N"], cfg["n_per_unit"]
    spec = HamiltonianSpec(cfg["t"])
    settings = ChainSettings(sweeps=cfg["sweeps"])
    if exp == "separation":
        params = canonical_separation(cfg["k"], sched.T, cfg["mu"], cfg["floor_slope"], npu,
                                      cfg["n_poles"], cfg["gap_constant"])
        return run_separation(params, n, seed, cfg["max_attempts"])
    if exp == "favorable_frequency":
        return run_favorable_frequency(_surrogate(cfg, sched), sched, n, seed)
    if exp == "core_inequality":
        events = {_event_name(e): SupAbsEvent(threshold_for_epsilon(e, sched.s, npu, seed=seed))
                  for e in cfg["events"]}
        return run_core_inequality(_surrogate(cfg, sched), sched, spec, events, n, seed,
                                   cfg["n_triples"], cfg["n_jump"], settings)
    if exp == "calibrate":
        return run_calibration(_surrogate(cfg, sched), sched, spec, n, seed, cfg["n_triples"],
                               cfg["n_jump"], settings, cfg["headroom"])
    domain, boundary = _triple(cfg, sched)
    if exp == "denominator":
        return run_denominator(domain, boundary, sched, spec, n, seed, settings, cfg["D"])
    event = SupAbsEvent(threshold_for_epsilon(cfg["event_epsilon"], sched.s, npu, seed=seed))
    oracle = epsilon_oracle(event, sched.s, npu, n, seed + 1)
    return run_numerator(domain, boundary, sched, spec, event, oracle, n, seed, settings,
                         chain_check=cfg["chain_check"])


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

COLUMNS = ("tag", "mean", "stderr", "n", "n_accepted", "cap_hits")


def _num(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def _header(cfg: RunConfig, sched: Optional[ScheduleParams], report: ExperimentReport) -> dict:
    config = {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.values.items()
              if v is not None and k != "output"}
    schedule = {} if sched is None else {
        k: v for k, v in sched.__dict__.items() if v is not None}
    return {"experiment": report.experiment, "config": config, "seed": report.seed,
            "grid": {"n_per_unit": cfg["n_per_unit"],
                     "step": 1.0 / cfg["n_per_unit"]},
            "schedule": schedule, "params": report.params}


def write_report(path: str, fmt: str, cfg: RunConfig, sched: Optional[ScheduleParams],
                 report: ExperimentReport, status: str = "ok") -> None:
    head = _header(cfg, sched, report)
    rows = [{"tag": tag, "mean": e.mean, "stderr": e.stderr, "n": e.n_samples,
             "n_accepted": e.n_accepted, "cap_hits": e.cap_hits}
            for tag, e in report.estimates.items()]
    if fmt == "json":
        doc = dict(head, status=status, estimates=rows, checks=report.checks,
                   notes=list(report.notes))
        text = json.dumps(doc, indent=1, sort_keys=False) + "\n"
    else:
        lines = [f"# glines {report.experiment}", f"# status {status}"]
        lines += [f"# config {k}={json.dumps(v)}" for k, v in head["config"].items()]
        lines.append(f"# seed {report.seed}")
        lines.append(f"# grid {json.dumps(head['grid'])}")
        lines += [f"# schedule {k}={json.dumps(v)}" for k, v in head["schedule"].items()]
        lines += [f"# param {k}={json.dumps(v)}" for k, v in report.params.items()]
        lines += [f"# check {k}={json.dumps(bool(v))}" for k, v in report.checks.items()]
        lines += [f"# note {json.dumps(str(v))}" for v in report.notes]
        lines.append(",".join(COLUMNS))
        for r in rows:
            lines.append(",".join(_num(r[c]) for c in COLUMNS))
        text = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def read_results(path: str) -> dict:
    """Parse a result file back into ``{"estimates", "checks", "config",
    "params", "status"}``."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        est = {r["tag"]: Estimate(float(r["mean"]), float(r["stderr"]), int(r["n"]),
                                  int(r["n_accepted"]), int(r["cap_hits"]))
               for r in doc["estimates"]}
        return {"estimates": est, "checks": doc["checks"], "config": doc["config"],
                "params": doc["params"], "status": doc["status"]}
    est, checks, config, params, status = {}, {}, {}, {}, None
    body = []
    for line in text.splitlines():
        if line.startswith("# "):
            kind, _, rest = line[2:].partition(" ")
            if kind in ("config", "check", "param"):
                key, _, value = rest.partition("=")
                {"config": config, "check": checks, "param": params}[kind][key] = json.loads(value)
            elif kind == "status":
                status = rest
        elif line.strip():
            body.append(line)
    if not body or tuple(body[0].split(",")) != COLUMNS:
        raise ValueError("result table header missing")
    for line in body[1:]:
        tag, mean, se, n, na, cap = line.split(",")
        est[tag] = Estimate(float(mean), float(se), int(n), int(na), int(cap))
    return {"estimates": est, "checks": checks, "config": config, "params": params,
            "status": status}


def _write_constants(path: str, report: ExperimentReport, cfg: RunConfig) -> None:
    lines = [f"# glines constants (seed {report.seed}, T={cfg.get('T')}, k={cfg['k']}, "
             f"N={cfg['N']})"]
    for tag, e in report.estimates.items():
        lines.append(f"{tag} = {_num(float(e.mean))}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def run(cfg: RunConfig) -> int:
    """Execute ``cfg`` and write its result file; returns the exit code."""
    sched = None
    try:
        sched = _schedule(cfg)
        report = _execute(cfg)
    except (AssumptionViolated, BadParams, NotFavorable, ScheduleMismatch) as exc:
        print(f"glines: precondition violated: {exc}", file=sys.stderr)
        return 2
    except MaxAttemptsExceeded as exc:
        partial = exc.partial if isinstance(exc.partial, ExperimentReport) else \
            ExperimentReport(cfg["experiment"], {}, {}, cfg["master_seed"])
        write_report(cfg["output"], cfg["format"], cfg, sched, partial, status="partial")
        print(f"glines: {exc}; partial results written", file=sys.stderr)
        return 3
    if cfg["experiment"] == "calibrate":
        _write_constants(cfg["output"], report, cfg)
    else:
        write_report(cfg["output"], cfg["format"], cfg, sched, report)
    return 0


def calibrate(cfg: RunConfig) -> int:
    cfg.values["experiment"] = "calibrate"
    return run(cfg)


def _overrides(extra: List[str]) -> Dict[str, str]:
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigParse(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        elif i + 1 < len(extra):
            value = extra[i + 1]
            i += 2
        else:
            raise ConfigParse("flag without value", key=key)
        out[key] = value
    return out


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="glines", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run one experiment"), ("calibrate", "write a constants file")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="key=value config file")
    args, extra = parser.parse_known_args(argv)
    try:
        overrides = _overrides(extra)
        if args.command == "calibrate":
            overrides.setdefault("experiment", "calibrate")
        cfg = load_config(args.config, overrides)
        if args.command == "calibrate":
            cfg.values["experiment"] = "calibrate"
    except ConfigParse as exc:
        print(f"glines: config error: {exc}", file=sys.stderr)
        return 1
    try:
        return run(cfg)
    except ConfigParse as exc:
        print(f"glines: config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
