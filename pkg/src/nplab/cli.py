"""Batch experiment runner.

Each subcommand reads a JSON config, writes a JSON report (with the config
hash) and data CSVs into ``--out``, and exits 0 on the expected verdict, 2
on an unexpected one and 1 on a config or runtime error.
"""

from __future__ import annotations

import argparse
import ast
import csv
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import arbitrage_lab as lab
from .metrics import qv_metric, skorokhod_distance_ub, uniform_distance
from .pathwise_integration import ito_follmer_decomposition, linear_field, log_field, square_field
from .portfolio_engine import (
    AtStop,
    Constant,
    RebalancedPortfolio,
    SimplePortfolio,
    check_self_financing,
    portfolio_value,
)
from .stopping_times import parse_stopping_sequence
from .trajectory_core import Trajectory, write_csv
from .trajectory_models import (
    FactorSet,
    HestonTypeParams,
    JumpDiffusionClassParams,
    JumpDiffusionProcessParams,
    JumpLaw,
    ModifiedHestonParams,
    PoissonExpParams,
    YSpec,
    compensated_drift,
    gen_brownian_z,
    gen_jump_diffusion_member,
    gen_poisson_exp,
    sample_heston_type,
    sample_jump_diffusion_process,
    sample_modified_heston,
)


class ConfigError(ValueError):
    pass


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _need(block: dict, key: str, where: str):
    if key not in block:
        raise ConfigError(f"{where}.{key} is required")
    return block[key]


# Small arithmetic expressions for holdings, e.g. "min(2, 100 / y)".

_FUNCS = {"min": np.minimum, "max": np.maximum, "abs": np.abs, "exp": np.exp, "log": np.log, "sqrt": np.sqrt}
_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Constant, ast.Load,
          ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def compile_expr(text: str, names: tuple[str, ...]) -> Callable:
    """Compile a whitelisted arithmetic expression in ``names`` into a vectorised function."""
    tree = ast.parse(str(text), mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ConfigError(f"unsupported syntax in expression {text!r}")
        if isinstance(node, ast.Name) and node.id not in names and node.id not in _FUNCS:
            raise ConfigError(f"unknown name {node.id!r} in expression {text!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ConfigError(f"unsupported call in expression {text!r}")
        if isinstance(node, ast.Call) and node.func.id in ("min", "max"):
            if len(node.args) < 2:
                raise ConfigError("min/max need at least two arguments")
    code = compile(tree, "<expr>", "eval")

    def fn(*args):
        env = dict(zip(names, args))
        out = eval(code, {"__builtins__": {}, **_FUNCS_REDUCE}, env)
        return np.asarray(out, dtype=float) + np.zeros(np.shape(args[-1]))

    return fn


def _reduce(f):
    def g(*a):
        out = a[0]
        for b in a[1:]:
            out = f(out, b)
        return out

    return g


_FUNCS_REDUCE = _FUNCS | {"min": _reduce(np.minimum), "max": _reduce(np.maximum)}


def _factor_set(block: dict, where: str) -> FactorSet:
    if "points" in block:
        return FactorSet(points=tuple(float(c) for c in block["points"]))
    return FactorSet(low=float(_need(block, "low", where)), high=float(_need(block, "high", where)))


def _jump_law(block: dict) -> JumpLaw:
    if "values" in block:
        return JumpLaw(values=tuple(block["values"]), probs=tuple(block["probs"]))
    return JumpLaw(low=float(block["low"]), high=float(block["high"]))


def _heston(block: dict) -> HestonTypeParams:
    keys = ("z0", "mu", "alpha", "k", "theta", "xi", "h", "v0")
    return HestonTypeParams(**{k: float(_need(block, k, "generator")) for k in keys})


def build_sampler(gen: dict, level: int, horizon: float) -> Callable[[int], Trajectory]:
    """Seed -> trajectory map for a generator block; validates parameters eagerly."""
    kind = _need(gen, "class", "generator")
    try:
        if kind == "poisson-exp":
            p = PoissonExpParams(float(gen["x0"]), float(gen["mu"]), float(gen["a"]))
            times = gen.get("jump_times", [])
            return lambda seed: gen_poisson_exp(p, times, level, horizon)
        if kind == "jump-diffusion-member":
            C = _factor_set(_need(gen, "C", "generator"), "generator.C")
            p = JumpDiffusionClassParams(float(gen["x0"]), float(gen["sigma"]), C)
            js = [tuple(j) for j in gen.get("jumps", [])]
            return lambda seed: gen_jump_diffusion_member(p, gen_brownian_z(level, seed, horizon), js, horizon)
        if kind == "jump-diffusion-process":
            law = _jump_law(_need(gen, "law", "generator"))
            lam = float(gen["lam"])
            mu = compensated_drift(lam, law) if gen.get("compensated", False) else float(gen.get("mu", 0.0))
            p = JumpDiffusionProcessParams(float(gen["x0"]), mu, float(gen["sigma"]), lam, law)
            return lambda seed: sample_jump_diffusion_process(p, level, seed, horizon)
        if kind == "heston-type":
            p = _heston(gen)
            return lambda seed: sample_heston_type(p, level, seed, horizon)
        if kind == "modified-heston":
            y = gen.get("y", {"kind": "none"})
            spec = YSpec(y.get("kind", "none"), y.get("hurst"), None, float(y.get("qv_threshold", 0.5)))
            p = ModifiedHestonParams(_heston(gen), spec)
            return lambda seed: sample_modified_heston(p, level, seed, horizon)
    except KeyError as err:
        raise ConfigError(f"generator.{err.args[0]} is required for class {kind!r}") from err
    except (TypeError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"generator ({kind}): {err}") from err
    raise ConfigError(f"generator.class {kind!r} unknown")


def build_portfolio(block: dict, x0: float, horizon: float):
    seq = parse_stopping_sequence(_need(block, "stopping", "portfolio"), x0=x0, horizon=horizon)
    kind = block.get("kind", "simple")
    hold = block.get("holdings", [1.0] * (len(seq) - 1))
    if len(hold) == 1 and len(seq) > 2:
        hold = hold * (len(seq) - 1)
    v0 = float(block.get("v0", 0.0))
    if kind == "simple":
        parts = []
        for h in hold:
            if isinstance(h, (int, float)):
                parts.append(Constant(float(h)))
            else:
                f = compile_expr(h, ("y",))
                parts.append(AtStop(lambda v, f=f: float(f(np.array(v))), str(h)))
        return SimplePortfolio(seq, tuple(parts), v0)
    if kind == "rebalanced":
        phis = tuple(compile_expr(h, ("t", "y")) for h in hold)
        return RebalancedPortfolio(seq, phis, v0)
    raise ConfigError(f"portfolio.kind {kind!r} unknown")


def _metric_fn(block: dict, level: int) -> Callable[[Trajectory, Trajectory], float]:
    name = block.get("name", "uniform")
    if name == "uniform":
        return uniform_distance
    if name == "skorokhod":
        m = int(block.get("warp_res", 64))
        strict = bool(block.get("strict", True))
        return lambda a, b: skorokhod_distance_ub(a, b, m, strict=strict).distance
    if name == "qv":
        mode = block.get("mode", "def")
        lvl = int(block.get("level", level))
        return lambda a, b: qv_metric(a, b, mode, lvl).distance
    raise ConfigError(f"metric.name {name!r} unknown")


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    return obj


# Subcommands return (result dict, expected flag, csv writer or None).


def _cmd_generate(cfg, ctx):
    x = ctx["sampler"](ctx["seed"])

    def files(out: Path):
        write_csv(x, out / "trajectory.csv")
        sigma = x.meta.get("sigma")
        if sigma is not None and np.ndim(sigma):
            _write_rows(out / "sigma.csv", ["t", "sigma"], zip(x.times.tolist(), np.asarray(sigma).tolist()))

    meta = {"class": x.meta.get("class"), "seed": ctx["seed"], "level": x.level, "n_jumps": int(x.jump_index.size),
            "terminal": float(x.values[-1]),
            "sigma_file": "sigma.csv" if np.ndim(x.meta.get("sigma", 0)) else None,
            "sigma_total_variation": x.meta.get("sigma_total_variation")}
    return meta, True, files


_FIELDS = {"linear": linear_field, "square": square_field, "log": log_field}


def _cmd_integrate(cfg, ctx):
    h = cfg.get("harness", {})
    x = ctx["sampler"](ctx["seed"])
    name = h.get("field", "square")
    if name not in _FIELDS:
        raise ConfigError(f"harness.field {name!r} unknown")
    a, b = float(h.get("a", 0.0)), float(h.get("b", x.horizon))
    rep = ito_follmer_decomposition(_FIELDS[name](), x, a, b, int(h.get("quad_level", ctx["level"])))
    limit = h.get("max_relative_residual")
    ok = True if limit is None else rep.relative_residual <= float(limit)
    return rep.to_dict() | {"field": name}, ok, None


def _cmd_metric(cfg, ctx, args):
    x = ctx["sampler"](ctx["seed"])
    gen_b = cfg.get("generator_b", cfg["generator"])
    sampler_b = build_sampler(gen_b, ctx["level"], ctx["horizon"])
    y = sampler_b(int(cfg.get("seed_b", ctx["seed"] + 1)))
    block = dict(cfg.get("metric", {}))
    name = args.metric or block.get("name", "uniform")
    if name == "uniform":
        rep = {"metric": "uniform", "distance": uniform_distance(x, y)}
    elif name == "skorokhod":
        m = args.warp_res or int(block.get("warp_res", 64))
        rep = skorokhod_distance_ub(x, y, m, strict=bool(block.get("strict", True))).to_dict()
    elif name == "qv":
        mode = args.mode or block.get("mode", "def")
        rep = qv_metric(x, y, mode, int(args.metric_level or block.get("level", ctx["level"]))).to_dict()
    else:
        raise ConfigError(f"metric {name!r} unknown")
    return rep, True, None


def _cmd_portfolio_eval(cfg, ctx):
    x = ctx["sampler"](ctx["seed"])
    P = build_portfolio(_need(cfg, "portfolio", "config"), x.x0, x.horizon)
    vp = portfolio_value(P, x, ctx["level"])
    sf = check_self_financing(P, x, ctx["level"])
    res = {"terminal": vp.terminal, "accounting_gap": vp.accounting_gap(), "self_financing": asdict(sf)}

    def files(out: Path):
        rows = zip(vp.times.tolist(), vp.price.tolist(), vp.holdings.tolist(), vp.bank.tolist(), vp.value.tolist())
        _write_rows(out / "value_path.csv", ["t", "price", "holdings", "bank", "value"], rows)

    tol = 1e-9 * max(1.0, float(np.max(np.abs(vp.value))))
    return res, vp.accounting_gap() <= tol, files


def _cmd_small_ball(cfg, ctx):
    h = cfg.get("harness", {})
    target = ctx["sampler"](int(h.get("target_seed", ctx["seed"])))
    metric = _metric_fn(cfg.get("metric", {}), ctx["level"])
    eps = h.get("eps", [1.0])
    reps = lab.small_ball_estimate(ctx["sampler"], target, metric, eps, int(h.get("n", 100)), ctx["seed"], ctx["jobs"])
    expect = h.get("expect", "positive")
    top = reps[-1].frequency
    ok = top > 0 if expect == "positive" else top == 0
    return {"estimates": [asdict(r) for r in reps]}, ok, None


def _cmd_arb_search(cfg, ctx):
    h = cfg.get("harness", {})
    probe = ctx["sampler"](ctx["seed"])
    P = build_portfolio(_need(cfg, "portfolio", "config"), probe.x0, probe.horizon)
    muts = lab.DEFAULT_MUTATORS if h.get("mutators", True) and probe.meta.get("noise") is not None else {}
    records: list = []
    v = lab.np_arbitrage_search(P, ctx["sampler"], int(h.get("n", 100)), muts, ctx["seed"], ctx["level"],
                                records=records)
    expect = h.get("expect")
    ok = v.outcome != "arbitrage-candidate" if expect is None else v.outcome == expect
    witnesses = [w for w in (v.negative_witness, v.profit_witness) if w is not None]

    def files(out: Path):
        _write_rows(out / "samples.csv", ["seed", "mutator", "terminal_value"], records)

    return v.to_dict() | {"witnesses": [asdict(w) for w in witnesses], "mutators": sorted(muts)}, ok, files


def _cmd_slc_test(cfg, ctx):
    h = cfg.get("harness", {})
    x = ctx["sampler"](ctx["seed"])
    text = _need(h, "sequence", "harness")
    if text == "ladder-at-max":
        # single level placed exactly at the centre's running maximum
        text = f"ladder({float(np.max(x.values))!r})"
    seq = parse_stopping_sequence(text, x0=x.x0, horizon=x.horizon)
    r = dict(_need(h, "recipe", "harness"))
    tags = tuple(_need(r, "tags", "harness.recipe"))
    del r["tags"]
    recipe = lab.NeighborhoodRecipe(x, tags, **r)
    rep = lab.jointly_slc_test(seq, x, recipe, int(h.get("terms", 10)))
    expect = h.get("expect", "pass")
    verdicts = {"pass": rep.passed, "fail-iii": not rep.item_iii}
    if expect not in verdicts:
        raise ConfigError("harness.expect must be 'pass' or 'fail-iii'")
    return rep.to_dict(), verdicts[expect], None


def _cmd_transfer(cfg, ctx):
    h = cfg.get("harness", {})
    probe = ctx["sampler"](ctx["seed"])
    P = build_portfolio(_need(cfg, "portfolio", "config"), probe.x0, probe.horizon)
    martingale = bool(h.get("martingale", True))
    values: list = []
    rep = lab.transfer_experiment(P, ctx["sampler"], int(h.get("n", 1000)), ctx["seed"], martingale,
                                  ctx["level"], ctx["jobs"], values=values)
    ok = rep.within_3se if martingale else not rep.arbitrage_pattern

    def files(out: Path):
        _write_rows(out / "samples.csv", ["seed", "terminal_value"], values)

    return rep.to_dict(), bool(ok), files


COMMANDS = {
    "generate": _cmd_generate,
    "integrate": _cmd_integrate,
    "metric": _cmd_metric,
    "portfolio-eval": _cmd_portfolio_eval,
    "small-ball": _cmd_small_ball,
    "arb-search": _cmd_arb_search,
    "slc-test": _cmd_slc_test,
    "transfer": _cmd_transfer,
}


def load_config(path: str | Path) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def effective_config(cfg: dict, args) -> dict:
    cfg = json.loads(json.dumps(cfg))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "level", None) is not None:
        cfg["level"] = args.level
    cfg.setdefault("seed", 0)
    cfg.setdefault("level", 10)
    cfg.setdefault("horizon", 1.0)
    return cfg


def execute(command: str, cfg: dict, args) -> tuple[dict, bool, Callable | None]:
    level, horizon = int(cfg["level"]), float(cfg["horizon"])
    ctx = {
        "seed": int(cfg["seed"]),
        "level": level,
        "horizon": horizon,
        "jobs": int(getattr(args, "jobs", 1) or 1),
        "sampler": build_sampler(_need(cfg, "generator", "config"), level, horizon),
    }
    gen = cfg["generator"]
    if "portfolio" in cfg and gen.get("class") == "jump-diffusion-member":
        if _factor_set(gen["C"], "generator.C").min_abs <= 0:
            raise ConfigError("generator.C must satisfy inf |c| > 0 when a portfolio is evaluated")
    fn = COMMANDS[command]
    if command == "metric":
        return fn(cfg, ctx, args)
    return fn(cfg, ctx)


def run(command: str, config_path: str, args) -> int:
    cfg = effective_config(load_config(config_path), args)
    result, ok, files = execute(command, cfg, args)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "subcommand": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "config_path": str(Path(config_path).resolve()),
        "source_hash": config_hash(load_config(config_path)),
        "options": {k: getattr(args, k, None) for k in ("metric", "mode", "metric_level", "warp_res")},
        "expected": bool(ok),
        "result": _jsonable(result),
    }
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    if files is not None:
        files(out)
    return 0 if ok else 2


def replay(report_path: str, args) -> int:
    """Re-run a report's witnesses (or the whole experiment) and compare."""
    with open(report_path) as fh:
        rep = json.load(fh)
    cfg = rep["config"]
    if config_hash(cfg) != rep["config_hash"]:
        raise ConfigError("report config does not match its recorded hash")
    src = Path(rep.get("config_path", ""))
    if src.is_file() and config_hash(load_config(src)) != rep.get("source_hash"):
        raise ConfigError(f"config file {src} changed since the report was written (hash mismatch)")
    command = rep["subcommand"]
    ns = argparse.Namespace(jobs=getattr(args, "jobs", 1), **rep.get("options", {}))
    if command == "arb-search":
        level, horizon = int(cfg["level"]), float(cfg["horizon"])
        sampler = build_sampler(cfg["generator"], level, horizon)
        probe = sampler(int(cfg["seed"]))
        P = build_portfolio(cfg["portfolio"], probe.x0, probe.horizon)
        matches = []
        for w in rep["result"]["witnesses"]:
            v = lab.replay_witness(P, sampler, lab.Witness(**w), level=level)
            matches.append(abs(v - w["value"]) <= 1e-12 * max(1.0, abs(w["value"])))
        ok = all(matches)
        print(json.dumps({"replayed": len(matches), "match": ok}))
        return 0 if ok else 2
    result, _, _ = execute(command, cfg, ns)
    ok = _close(_jsonable(result), rep["result"])
    print(json.dumps({"replayed": command, "match": ok}))
    return 0 if ok else 2


def _close(a, b, tol: float = 1e-12) -> bool:
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_close(a[k], b[k], tol) for k in a)
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(_close(u, v, tol) for u, v in zip(a, b))
    if isinstance(a, float) or isinstance(b, float):
        if a is None or b is None:
            return a is b
        return abs(a - b) <= tol * max(1.0, abs(a), abs(b))
    return a == b


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nplab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", help="JSON experiment config")
        s.add_argument("--seed", type=int, help="root seed (overrides config)")
        s.add_argument("--level", type=int, help="dyadic partition level (overrides config)")
        s.add_argument("--out", default=".", help="output directory")
        s.add_argument("--jobs", type=int, default=1, help="worker threads for sample loops")
        if name == "metric":
            s.add_argument("--metric", choices=["uniform", "skorokhod", "qv"])
            s.add_argument("--mode", choices=["def", "closed"])
            s.add_argument("--metric-level", dest="metric_level", type=int, help="QV metric level")
            s.add_argument("--warp-res", dest="warp_res", type=int)
    r = sub.add_parser("replay")
    r.add_argument("report", help="report.json written by a previous run")
    r.add_argument("--jobs", type=int, default=1)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            return replay(args.report, args)
        return run(args.command, args.config, args)
    except (ConfigError, ValueError, OSError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
