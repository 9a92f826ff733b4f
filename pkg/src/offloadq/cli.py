"""Command-line driver: evaluate, optimise, scan and simulate from a config file.

The config is a flat YAML (or JSON) mapping. System parameters use the
symbol names ``mu_c, mu_e, mu_u, mu_ue, mu_ec, mu_ce, mu_eu, lambda, m, n,
theta``; everything else is optional::

    command: sweep          # evaluate | optimize | grid | simulate | sweep
    p_ue: 0.7
    p_ec: 0.4
    sweep_axis: p_ue        # p_ue | p_ec | lambda_ext | mu_e
    range: [0.1, 0.9, 0.1]  # start, stop, step (stop included)
    simulate: true          # add DES columns to a sweep
    seed: 0
    replications: 30
    horizon: 10000
    warmup: 0
    link_model: paper-rates # DES link topology
    link_load: shared       # analytic UE<->edge link load
    resolution: 0.01        # grid command
    grid_bounds: [0, 1]     # grid command

Exit codes: 0 success, 1 config error, 2 I/O error, 3 flagged rows
(non-convergence or saturation) under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from .model import LinkLoad, OffloadingPolicy, SystemParams, tier_tails
from .optimizer import SgsConfig, grid_search, grid_surface, lattice, sgs_optimize
from .simulator import LinkModel, SimConfig, des_run

logger = logging.getLogger("offloadq")

COMMANDS = ("evaluate", "optimize", "grid", "simulate", "sweep")
SWEEP_AXES = ("p_ue", "p_ec", "lambda_ext", "mu_e")
PARAM_KEYS = {
    "mu_c": "mu_c", "mu_e": "mu_e", "mu_u": "mu_u", "mu_ue": "mu_ue", "mu_ec": "mu_ec",
    "mu_ce": "mu_ce", "mu_eu": "mu_eu", "lambda": "lambda_ext", "m": "m", "n": "n", "theta": "theta",
}
OPTIONAL_KEYS = {
    "command", "p_ue", "p_ec", "sweep_axis", "range", "simulate", "seed", "replications",
    "horizon", "warmup", "link_model", "link_load", "resolution", "grid_bounds",
}

# Shared by evaluate and simulate so their outputs diff cleanly.
POINT_COLUMNS = (
    "p_ue", "p_ec", "p_u", "p_e", "p_c", "p_overall", "half_width",
    "delay_u", "delay_e", "delay_c", "case_u", "case_e", "case_c", "flag",
)
OPTIMIZE_COLUMNS = ("method", "p_ue", "p_ec", "p_overall", "outer_iterations", "evaluations", "converged", "flag")
GRID_COLUMNS = ("p_ue", "p_ec", "p_overall")
SWEEP_COLUMNS = ("axis_value", "p_ue", "p_ec", "p_u", "p_e", "p_c", "p_overall")
SIM_COLUMNS = ("sim_mean", "sim_half_width")


class ConfigError(ValueError):
    """Invalid or incomplete configuration."""


@dataclass(frozen=True)
class RunSpec:
    params: SystemParams
    command: str
    policy: Optional[OffloadingPolicy] = None
    sweep_axis: Optional[str] = None
    sweep_range: Optional[tuple[float, float, float]] = None
    simulate: bool = False
    sim: SimConfig = field(default_factory=SimConfig)
    resolution: float = 0.01
    grid_bounds: tuple[float, float] = (0.0, 1.0)
    output_path: Optional[Path] = None
    output_format: str = "csv"


@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list[dict[str, Any]]
    flagged: bool = False


# ------------------------------------------------------------------ config


def _number(raw: dict, key: str, kind=float):
    value = raw[key]
    if isinstance(value, bool):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            raise ConfigError(f"{key}: malformed number {raw[key]!r}") from None
    if not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if kind is int:
        if float(value) != int(value):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _pair(raw: dict, key: str, size: int) -> tuple[float, ...]:
    value = raw[key]
    if not isinstance(value, (list, tuple)) or len(value) != size:
        raise ConfigError(f"{key}: expected a list of {size} numbers")
    return tuple(_number({key: v}, key) for v in value)


def parse_config(raw: Any, command: Optional[str] = None, seed: Optional[int] = None) -> RunSpec:
    """Validate a decoded config mapping into a :class:`RunSpec`."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a key/value mapping")
    unknown = sorted(set(raw) - set(PARAM_KEYS) - OPTIONAL_KEYS)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    values = {}
    for key, name in PARAM_KEYS.items():
        if key not in raw:
            raise ConfigError(f"{key}: missing required field")
        values[name] = _number(raw, key, int if key in ("m", "n") else float)
        if values[name] <= 0:
            raise ConfigError(f"{key}: must be positive, got {raw[key]!r}")
    if "link_load" in raw:
        try:
            values["link_load"] = LinkLoad(raw["link_load"])
        except ValueError:
            raise ConfigError(f"link_load: unknown value {raw['link_load']!r}") from None
    try:
        params = SystemParams(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None

    command = command or raw.get("command", "evaluate")
    if command not in COMMANDS:
        raise ConfigError(f"command: unknown command {command!r}")

    policy = None
    if "p_ue" in raw or "p_ec" in raw:
        p = {k: _number(raw, k) if k in raw else None for k in ("p_ue", "p_ec")}
        for k, v in p.items():
            if v is not None and not 0.0 <= v <= 1.0:
                raise ConfigError(f"{k}: must lie in [0, 1], got {v!r}")
        if None not in p.values():
            policy = OffloadingPolicy(p["p_ue"], p["p_ec"])
        else:
            # a sweep over one coordinate only needs the other
            policy = OffloadingPolicy(p["p_ue"] or 0.0, p["p_ec"] or 0.0)
            missing = "p_ue" if p["p_ue"] is None else "p_ec"
            if command != "sweep" or raw.get("sweep_axis") != missing:
                raise ConfigError(f"{missing}: missing required field")
    if command in ("evaluate", "simulate") and policy is None:
        raise ConfigError(f"p_ue: missing required field for command {command}")

    sweep_axis = sweep_range = None
    if command == "sweep":
        sweep_axis = raw.get("sweep_axis")
        if sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep_axis: expected one of {', '.join(SWEEP_AXES)}, got {sweep_axis!r}")
        if "range" not in raw:
            raise ConfigError("range: missing required field for command sweep")
        sweep_range = _pair(raw, "range", 3)
        start, stop, step = sweep_range
        if step <= 0 or stop < start:
            raise ConfigError("range: need step > 0 and stop >= start")
        if sweep_axis in ("p_ue", "p_ec"):
            if not (0.0 <= start and stop <= 1.0):
                raise ConfigError("range: probabilities must lie in [0, 1]")
            if policy is None:
                other = "p_ec" if sweep_axis == "p_ue" else "p_ue"
                raise ConfigError(f"{other}: missing required field for a {sweep_axis} sweep")
        elif start <= 0:
            raise ConfigError("range: rates must be positive")

    sim_kwargs = {}
    for key, kind in (("replications", int), ("horizon", float), ("warmup", float), ("seed", int)):
        if key in raw:
            sim_kwargs[key] = _number(raw, key, kind)
    if seed is not None:
        sim_kwargs["seed"] = seed
    if "link_model" in raw:
        try:
            sim_kwargs["link_model"] = LinkModel(raw["link_model"])
        except ValueError:
            raise ConfigError(f"link_model: unknown value {raw['link_model']!r}") from None
    try:
        sim = SimConfig(**sim_kwargs)
    except ValueError as exc:
        raise ConfigError(f"simulation settings: {exc}") from None

    resolution = _number(raw, "resolution") if "resolution" in raw else 0.01
    if not 0 < resolution <= 0.5:
        raise ConfigError(f"resolution: must lie in (0, 0.5], got {resolution!r}")
    grid_bounds = _pair(raw, "grid_bounds", 2) if "grid_bounds" in raw else (0.0, 1.0)
    if not 0.0 <= grid_bounds[0] < grid_bounds[1] <= 1.0:
        raise ConfigError("grid_bounds: need 0 <= lo < hi <= 1")
    simulate = raw.get("simulate", False)
    if not isinstance(simulate, bool):
        raise ConfigError(f"simulate: expected true or false, got {simulate!r}")

    return RunSpec(
        params=params, command=command, policy=policy, sweep_axis=sweep_axis,
        sweep_range=sweep_range, simulate=simulate, sim=sim, resolution=resolution,
        grid_bounds=grid_bounds,
    )


def load_config(path, command: Optional[str] = None, seed: Optional[int] = None) -> RunSpec:
    """Read and validate a YAML or JSON config file.

    Raises ``OSError`` when the file cannot be read and :class:`ConfigError`
    for any content problem.
    """
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)  # JSON is a subset of YAML
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return parse_config(raw, command=command, seed=seed)


# -------------------------------------------------------------- workflows


def _unstable_flag(stable: Sequence[bool]) -> str:
    bad = [t for t, ok in zip("uec", stable) if not ok]
    return "unstable:" + "".join(bad) if bad else ""


def _evaluate_row(params: SystemParams, policy: OffloadingPolicy) -> dict[str, Any]:
    res = tier_tails(params, policy)
    return {
        "p_ue": policy.p_ue, "p_ec": policy.p_ec,
        "p_u": res.p_u, "p_e": res.p_e, "p_c": res.p_c, "p_overall": res.p_overall,
        "half_width": None,
        "delay_u": res.mean_delays[0], "delay_e": res.mean_delays[1], "delay_c": res.mean_delays[2],
        "case_u": res.case_labels[0], "case_e": res.case_labels[1], "case_c": res.case_labels[2],
        "flag": _unstable_flag(res.stable),
    }


def _saturation_flag(queues: Sequence[str]) -> str:
    kinds = sorted({q.split("/")[0] for q in queues})
    return "saturated:" + "+".join(kinds) if kinds else ""


def _simulate_row(params: SystemParams, policy: OffloadingPolicy, cfg: SimConfig) -> dict[str, Any]:
    rep = des_run(params, policy, cfg)
    cases = tier_tails(params, policy).case_labels
    return {
        "p_ue": policy.p_ue, "p_ec": policy.p_ec,
        "p_u": rep.per_tier_violation[0], "p_e": rep.per_tier_violation[1], "p_c": rep.per_tier_violation[2],
        "p_overall": rep.violation_prob.mean, "half_width": rep.violation_prob.half_width,
        "delay_u": rep.per_tier_mean_delay[0], "delay_e": rep.per_tier_mean_delay[1],
        "delay_c": rep.per_tier_mean_delay[2],
        "case_u": cases[0], "case_e": cases[1], "case_c": cases[2],
        "flag": _saturation_flag(rep.saturated_queues),
    }


def _optimize(spec: RunSpec) -> Table:
    sgs = sgs_optimize(spec.params)
    grid = grid_search(spec.params, 0.01)
    rows = [
        {"method": "sgs", "p_ue": sgs.policy.p_ue, "p_ec": sgs.policy.p_ec, "p_overall": sgs.objective,
         "outer_iterations": sgs.outer_iterations, "evaluations": sgs.evaluations,
         "converged": sgs.converged, "flag": "" if sgs.converged else "not-converged"},
        {"method": "grid-0.01", "p_ue": grid.policy.p_ue, "p_ec": grid.policy.p_ec, "p_overall": grid.objective,
         "outer_iterations": None, "evaluations": grid.evaluations, "converged": True, "flag": ""},
    ]
    return Table(OPTIMIZE_COLUMNS, rows, flagged=not sgs.converged)


def _grid(spec: RunSpec) -> Table:
    pu, pc, values = grid_surface(spec.params, spec.resolution, *spec.grid_bounds)
    rows = [
        {"p_ue": float(a), "p_ec": float(b), "p_overall": float(v)}
        for a, b, v in zip(pu.ravel(), pc.ravel(), values.ravel())
    ]
    return Table(GRID_COLUMNS, rows)


def sweep_values(start: float, stop: float, step: float) -> np.ndarray:
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(count), 12)


def _sweep(spec: RunSpec) -> Table:
    axis = spec.sweep_axis
    columns = SWEEP_COLUMNS + (SIM_COLUMNS if spec.simulate else ()) + ("flag",)
    rows, flagged = [], False
    warm: Optional[OffloadingPolicy] = None
    for value in sweep_values(*spec.sweep_range):
        value = float(value)
        flags = []
        if axis in ("p_ue", "p_ec"):
            params = spec.params
            policy = OffloadingPolicy(**{**vars(spec.policy), axis: value})
        else:
            params = spec.params.replace(**{axis: value})
            opt = sgs_optimize(params, start=warm)
            policy = warm = opt.policy
            if not opt.converged:
                flags.append("not-converged")
        res = tier_tails(params, policy)
        row = {
            "axis_value": value, "p_ue": policy.p_ue, "p_ec": policy.p_ec,
            "p_u": res.p_u, "p_e": res.p_e, "p_c": res.p_c, "p_overall": res.p_overall,
        }
        if not all(res.stable):
            flags.append(_unstable_flag(res.stable))
        if spec.simulate:
            rep = des_run(params, policy, spec.sim)
            row.update(sim_mean=rep.violation_prob.mean, sim_half_width=rep.violation_prob.half_width)
            if rep.saturated:
                flags.append(_saturation_flag(rep.saturated_queues))
        flagged |= any(f and not f.startswith("unstable") for f in flags)
        row["flag"] = ";".join(flags)
        rows.append(row)
        logger.info("sweep %s=%g -> %.6f", axis, value, res.p_overall)
    return Table(columns, rows, flagged)


def execute(spec: RunSpec) -> Table:
    """Run the workflow named by ``spec.command``."""
    if spec.command == "evaluate":
        row = _evaluate_row(spec.params, spec.policy)
        return Table(POINT_COLUMNS, [row])
    if spec.command == "simulate":
        row = _simulate_row(spec.params, spec.policy, spec.sim)
        return Table(POINT_COLUMNS, [row], flagged=bool(row["flag"]))
    if spec.command == "optimize":
        return _optimize(spec)
    if spec.command == "grid":
        return _grid(spec)
    return _sweep(spec)


# ----------------------------------------------------------------- output


def _cell(value: Any) -> Any:
    """Normalise a value to its output form: floats carry 12 significant digits."""
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, (int, np.integer)):
        return int(value)
    value = float(value)
    if not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return float(f"{value:.12g}")


def _csv_text(value: Any) -> str:
    value = _cell(value)
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def render(table: Table, fmt: str) -> str:
    if fmt == "json":
        rows = [{c: _cell(row.get(c)) for c in table.columns} for row in table.rows]
        return json.dumps(rows, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_csv_text(row.get(c)) for c in table.columns])
    return buf.getvalue()


def run(spec: RunSpec, strict: bool = False) -> int:
    """Execute ``spec`` and write its output; returns the process exit code."""
    table = execute(spec)
    text = render(table, spec.output_format)
    try:
        if spec.output_path is None:
            sys.stdout.write(text)
        else:
            Path(spec.output_path).write_text(text)
    except OSError as exc:
        logger.error("cannot write output: %s", exc)
        return 2
    if table.flagged:
        logger.warning("output contains flagged rows (non-convergence or saturation)")
        if strict:
            return 3
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="offloadq",
        description="Delay-violation analysis and offloading optimisation for a UE/edge/cloud system.",
    )
    parser.add_argument("--config", required=True, help="YAML or JSON parameter file")
    parser.add_argument("--out", help="output file (default: stdout)")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    parser.add_argument("--seed", type=int, help="simulation seed (overrides the config)")
    parser.add_argument("--command", choices=COMMANDS, help="workflow (overrides the config)")
    parser.add_argument("--quiet", action="store_true", help="only log errors")
    parser.add_argument("--strict", action="store_true", help="exit 3 on non-convergence or saturation")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.ERROR if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        spec = load_config(args.config, command=args.command, seed=args.seed)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return 1
    except OSError as exc:
        logger.error("cannot read config: %s", exc)
        return 2
    spec = RunSpec(**{**vars(spec), "output_path": Path(args.out) if args.out else None, "output_format": args.format})
    return run(spec, strict=args.strict)


if __name__ == "__main__":
    raise SystemExit(main())
