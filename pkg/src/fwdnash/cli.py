"""Command line entry point.

    fwdnash solve-n|solve-mfg|best-response|simulate|converge|roll|verify \\
        --config run.json --out results/ [--seed N]

Exit status: 0 on success, 1 on input errors, 2 when no constant
equilibrium exists, 3 when ``verify`` finds a residual above tolerance.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .convergence import convergence_sweep
from .exceptions import (
    DegenerateEquilibrium,
    DimensionMismatch,
    DomainError,
    NoConstantEquilibrium,
    ParseError,
    PreconditionError,
)
from .market import FIELDS, AgentType, PopulationSpec, TypeDistribution, validate_type
from .meanfield import mf_equilibrium
from .montecarlo import SimGrid, agent_martingale_check, simulate_wealth
from .nplayer import best_response, equilibrium_n, lambda_from_others, nash_residual
from .rolling import HorizonSchedule, Segment, roll_schedule, simulate_rolling

COMMANDS = ("solve-n", "solve-mfg", "best-response", "simulate", "converge", "roll", "verify")
THREADS_ENV = "FWDNASH_THREADS"

_TOP_KEYS = {"command", "population", "distribution", "agent", "strategies", "simulation", "sweep", "schedule", "output", "tolerances"}
_SIM_KEYS = {"T", "n_steps", "n_paths", "seed", "agent", "deviation", "z_crit"}
_SWEEP_KEYS = {"n_list", "seed"}
_SEGMENT_KEYS = {"start", "agent", "distribution"}
_TOL_KEYS = {"nash_residual", "z_crit"}
_DEFAULT_TOL = {"nash_residual": 1e-10, "z_crit": 3.0}


@dataclass
class RunConfig:
    command: str | None = None
    population: PopulationSpec | None = None
    distribution: TypeDistribution | None = None
    agent: int | None = None
    strategies: list[float] | None = None
    simulation: dict[str, Any] = field(default_factory=dict)
    sweep: dict[str, Any] = field(default_factory=dict)
    schedule: HorizonSchedule | None = None
    output: str | None = None
    tolerances: dict[str, float] = field(default_factory=lambda: dict(_DEFAULT_TOL))


def _reject_unknown(obj: dict, allowed: set, where: str) -> None:
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ParseError(f"{where}: unknown key {extra[0]!r}")


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _integer(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"{where}: expected an integer, got {value!r}")
    return value


def _agent(raw, where: str) -> AgentType:
    if isinstance(raw, dict):
        _reject_unknown(raw, set(FIELDS), where)
        missing = [f for f in FIELDS if f not in raw]
        if missing:
            raise ParseError(f"{where}: missing key {missing[0]!r}")
        values = [_number(raw[f], f"{where}.{f}") for f in FIELDS]
    elif isinstance(raw, list) and len(raw) == 6:
        values = [_number(v, f"{where}[{k}]") for k, v in enumerate(raw)]
    else:
        raise ParseError(f"{where}: an agent is an object with keys {', '.join(FIELDS)} or a list of 6 numbers")
    try:
        return validate_type(*values)
    except DomainError as exc:
        raise DomainError(f"{where}: {exc}") from None


def _population(raw, where: str) -> PopulationSpec:
    if not isinstance(raw, list):
        raise ParseError(f"{where}: expected a list of agents")
    agents = [_agent(a, f"{where}[{k}]") for k, a in enumerate(raw)]
    try:
        return PopulationSpec(agents)
    except DomainError as exc:
        raise DomainError(f"{where}: {exc}") from None


def _distribution(raw, where: str) -> TypeDistribution:
    if not isinstance(raw, list) or not raw:
        raise ParseError(f"{where}: expected a non-empty list of atoms")
    atoms, weights = [], []
    for k, item in enumerate(raw):
        at = f"{where}[{k}]"
        if not isinstance(item, dict):
            raise ParseError(f"{at}: an atom is an object with keys 'type' and 'weight'")
        _reject_unknown(item, {"type", "weight"}, at)
        if "type" not in item or "weight" not in item:
            raise ParseError(f"{at}: an atom needs 'type' and 'weight'")
        atoms.append(_agent(item["type"], f"{at}.type"))
        weights.append(_number(item["weight"], f"{at}.weight"))
    try:
        return TypeDistribution(atoms, weights)
    except DomainError as exc:
        raise DomainError(f"{where}: {exc}") from None


def _section(raw, allowed: set, where: str) -> dict:
    if not isinstance(raw, dict):
        raise ParseError(f"{where}: expected an object")
    _reject_unknown(raw, allowed, where)
    return dict(raw)


def parse_config(data: Any) -> RunConfig:
    if not isinstance(data, dict):
        raise ParseError("config: top level must be an object")
    _reject_unknown(data, _TOP_KEYS, "config")
    cfg = RunConfig()
    if "command" in data:
        if data["command"] not in COMMANDS:
            raise ParseError(f"command: unknown command {data['command']!r}")
        cfg.command = data["command"]
    if "population" in data:
        cfg.population = _population(data["population"], "population")
    if "distribution" in data:
        cfg.distribution = _distribution(data["distribution"], "distribution")
    if "agent" in data:
        cfg.agent = _integer(data["agent"], "agent")
    if "strategies" in data:
        if not isinstance(data["strategies"], list):
            raise ParseError("strategies: expected a list of numbers")
        cfg.strategies = [_number(v, f"strategies[{k}]") for k, v in enumerate(data["strategies"])]
    if "simulation" in data:
        sim = _section(data["simulation"], _SIM_KEYS, "simulation")
        for key in ("T", "deviation", "z_crit"):
            if key in sim:
                sim[key] = _number(sim[key], f"simulation.{key}")
        for key in ("n_steps", "n_paths", "seed", "agent"):
            if key in sim:
                sim[key] = _integer(sim[key], f"simulation.{key}")
        cfg.simulation = sim
    if "sweep" in data:
        sweep = _section(data["sweep"], _SWEEP_KEYS, "sweep")
        if "n_list" in sweep:
            if not isinstance(sweep["n_list"], list):
                raise ParseError("sweep.n_list: expected a list of integers")
            sweep["n_list"] = [_integer(v, f"sweep.n_list[{k}]") for k, v in enumerate(sweep["n_list"])]
        if "seed" in sweep:
            sweep["seed"] = _integer(sweep["seed"], "sweep.seed")
        cfg.sweep = sweep
    if "schedule" in data:
        raw = data["schedule"]
        if not isinstance(raw, list) or not raw:
            raise ParseError("schedule: expected a non-empty list of segments")
        segs = []
        for k, item in enumerate(raw):
            at = f"schedule[{k}]"
            seg = _section(item, _SEGMENT_KEYS, at)
            if "start" not in seg or "agent" not in seg:
                raise ParseError(f"{at}: a segment needs 'start' and 'agent'")
            dist = _distribution(seg["distribution"], f"{at}.distribution") if "distribution" in seg else None
            segs.append(Segment(_number(seg["start"], f"{at}.start"), _agent(seg["agent"], f"{at}.agent"), dist))
        try:
            cfg.schedule = HorizonSchedule(segs)
        except DomainError as exc:
            raise DomainError(f"schedule: {exc}") from None
    if "output" in data:
        if not isinstance(data["output"], str):
            raise ParseError("output: expected a directory path")
        cfg.output = data["output"]
    if "tolerances" in data:
        tol = _section(data["tolerances"], _TOL_KEYS, "tolerances")
        cfg.tolerances.update({k: _number(v, f"tolerances.{k}") for k, v in tol.items()})
    return cfg


def load_config(path) -> RunConfig:
    """Read and strictly validate a JSON run configuration."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_config(data)


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise ArithmeticError(f"refusing to write non-finite value {x!r}")
    return format(x, ".17g")


def dump_json(obj, indent: int = 0) -> str:
    """JSON text with every float printed to 17 significant digits."""
    pad = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dump_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dump_json(v, indent + 1) for v in obj) + "]"
    if isinstance(obj, str):
        return json.dumps(obj)
    if obj is None:
        return "null"
    return fmt(obj)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _write_json(path: Path, obj) -> None:
    path.write_text(dump_json(obj) + "\n")


def _require(value, name: str, command: str):
    if value is None:
        raise ParseError(f"{command} needs '{name}' in the config")
    return value


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ParseError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _seed(cfg: RunConfig, section: dict, override: int | None) -> int:
    return override if override is not None else int(section.get("seed", 0))


def cmd_solve_n(cfg: RunConfig, out: Path, seed) -> int:
    pop = _require(cfg.population, "population", "solve-n")
    eq = equilibrium_n(pop)
    _write_csv(out / "equilibrium.csv", ["i", "pi_star", "lambda"], [(i + 1, p, l) for i, (p, l) in enumerate(zip(eq.strategies, eq.lambdas))])
    _write_json(
        out / "aggregates.json",
        {
            "n": pop.n,
            **eq.aggregates._asdict(),
            "pi_sigma_bar": eq.averages.pi_sigma,
            "pi_mu_bar": eq.averages.pi_mu,
            "pi_nu_sq_bar": eq.averages.pi_nu_sq,
            "max_nash_residual": eq.max_nash_residual,
        },
    )
    return 0


def cmd_solve_mfg(cfg: RunConfig, out: Path, seed) -> int:
    dist = _require(cfg.distribution, "distribution", "solve-mfg")
    eq = mf_equilibrium(dist)
    rows = [(k + 1, w, p, l) for k, (w, p, l) in enumerate(zip(dist.weights, eq.strategies, eq.lambdas))]
    _write_csv(out / "mfg_equilibrium.csv", ["atom", "weight", "pi_star", "lambda"], rows)
    _write_json(
        out / "aggregates.json",
        {**eq.aggregates._asdict(), "sigma_pi_bar": eq.sigma_pi_bar, "mu_pi_bar": eq.mu_pi_bar, "xi_bar": eq.xi_bar},
    )
    return 0


def _agent_index(i, pop: PopulationSpec, where: str) -> int:
    if not 0 <= i < pop.n:
        raise DomainError(f"{where}: agent index {i} out of range for n={pop.n} (indices start at 0)")
    return i


def cmd_best_response(cfg: RunConfig, out: Path, seed) -> int:
    pop = _require(cfg.population, "population", "best-response")
    i = _agent_index(_require(cfg.agent, "agent", "best-response"), pop, "agent")
    others = _require(cfg.strategies, "strategies", "best-response")
    if len(others) != pop.n - 1:
        raise DimensionMismatch(f"strategies: expected {pop.n - 1} values for the other agents, got {len(others)}")
    value = best_response(i, others, pop)
    lam = lambda_from_others(i, others, pop)
    _write_json(out / "best_response.json", {"agent": i, "pi_best": value, "lambda": lam})
    print(fmt(value))
    return 0


def cmd_simulate(cfg: RunConfig, out: Path, seed) -> int:
    pop = _require(cfg.population, "population", "simulate")
    sim = cfg.simulation
    grid = SimGrid(float(sim.get("T", 1.0)), int(sim.get("n_steps", 32)))
    n_paths = int(sim.get("n_paths", 100_000))
    seed = _seed(cfg, sim, seed)
    z_crit = float(sim.get("z_crit", cfg.tolerances["z_crit"]))
    eq = equilibrium_n(pop)
    strategies = np.array(eq.strategies)
    deviant = sim.get("agent")
    deviation = float(sim.get("deviation", 0.0))
    if deviant is not None:
        _agent_index(deviant, pop, "simulation.agent")
        strategies[deviant] += deviation
    rows, summary = [], {"seed": seed, "n_paths": n_paths, "agents": []}
    for i in range(pop.n):
        super_only = deviant == i and deviation != 0.0
        rep = agent_martingale_check(i, pop, strategies, grid, n_paths, seed, z_crit, supermartingale=super_only)
        rows += [(i + 1, *r) for r in rep.rows()]
        summary["agents"].append({"i": i + 1, "test": rep.kind, "pi": strategies[i], "max_z": rep.max_z, "verdict": rep.verdict})
    _write_csv(out / "martingale.csv", ["i", "t", "mean_u", "se_u", "u0", "z"], rows)
    simulate_wealth(pop, strategies, grid, n_paths, seed).write_summary_csv(out / "wealth_summary.csv")
    _write_json(out / "martingale.json", summary)
    return 0


def cmd_converge(cfg: RunConfig, out: Path, seed) -> int:
    dist = _require(cfg.distribution, "distribution", "converge")
    n_list = cfg.sweep.get("n_list", [10, 100, 1000, 10000])
    report = convergence_sweep(dist, n_list, _seed(cfg, cfg.sweep, seed), n_jobs=_threads())
    report.write_csv(out / "convergence.csv")
    _write_json(out / "convergence.json", {"seed": report.seed, "fitted_K": report.fitted_constant()})
    return 0


def cmd_roll(cfg: RunConfig, out: Path, seed) -> int:
    schedule = _require(cfg.schedule, "schedule", "roll")
    rolled = roll_schedule(schedule)
    _write_csv(out / "roll.csv", ["T_j", "segment", "lambda", "log_offset"], rolled.table())
    if cfg.simulation:
        sim = cfg.simulation
        reports = simulate_rolling(
            schedule,
            rolled,
            n_steps=int(sim.get("n_steps", 32)),
            n_paths=int(sim.get("n_paths", 100_000)),
            seed=_seed(cfg, sim, seed),
            final_horizon=float(sim.get("T", 1.0)),
            z_crit=float(sim.get("z_crit", cfg.tolerances["z_crit"])),
        )
        rows = [(j, *r) for j, rep in enumerate(reports) for r in rep.rows()]
        _write_csv(out / "roll_martingale.csv", ["segment", "t", "mean_u", "se_u", "u0", "z"], rows)
    return 0


def read_equilibrium_csv(path) -> list[float]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "pi_star" not in reader.fieldnames:
                raise ParseError(f"{path}: missing column 'pi_star'")
            return [float(row["pi_star"]) for row in reader]
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def cmd_verify(cfg: RunConfig, out: Path, seed, equilibrium: str | None = None) -> int:
    pop = _require(cfg.population, "population", "verify")
    source = Path(equilibrium) if equilibrium else out / "equilibrium.csv"
    strategies = read_equilibrium_csv(source)
    if len(strategies) != pop.n:
        raise DimensionMismatch(f"{source}: expected {pop.n} strategies, got {len(strategies)}")
    res = nash_residual(strategies, pop)
    worst = float(np.max(np.abs(res)))
    bound = cfg.tolerances["nash_residual"] * (1 + float(np.max(np.abs(strategies))))
    ok = worst <= bound
    _write_json(out / "verify.json", {"max_nash_residual": worst, "bound": bound, "passed": ok})
    print(f"max nash residual {fmt(worst)} ({'ok' if ok else 'FAILED'}, bound {fmt(bound)})")
    return 0 if ok else 3


_HANDLERS = {
    "solve-n": cmd_solve_n,
    "solve-mfg": cmd_solve_mfg,
    "best-response": cmd_best_response,
    "simulate": cmd_simulate,
    "converge": cmd_converge,
    "roll": cmd_roll,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fwdnash", description="Forward-utility Nash and mean-field equilibria for CARA portfolio games.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", help="output directory (defaults to the config's 'output' or '.')")
    parser.add_argument("--seed", type=int, help="override the seed of the simulation / sweep section")
    parser.add_argument("--equilibrium", help="verify: equilibrium.csv to check (default <out>/equilibrium.csv)")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if cfg.command is not None and cfg.command != args.command:
            raise ParseError(f"command: config is for {cfg.command!r}, not {args.command!r}")
        out = Path(args.out or cfg.output or ".")
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "verify":
            return cmd_verify(cfg, out, args.seed, args.equilibrium)
        return _HANDLERS[args.command](cfg, out, args.seed)
    except (DegenerateEquilibrium, NoConstantEquilibrium) as exc:
        print(f"fwdnash: {exc}", file=sys.stderr)
        return 2
    except (ParseError, DomainError, DimensionMismatch, PreconditionError) as exc:
        print(f"fwdnash: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
