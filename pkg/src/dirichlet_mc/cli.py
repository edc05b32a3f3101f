"""Command-line entry point: ``dirichlet-mc <command> --config file.json``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure (or a
failed invariant in ``check``).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .analysis import (
    NoiseFloorError,
    QuadratureError,
    ibp_residual,
    monotone_feps_check,
    rate_experiment,
)
from .core import SimulationError, derive_substream, validate_triplet
from .estimators import (
    DegenerateSampleError,
    EstimatorConfig,
    NoReductionError,
    classical_bandwidth,
    classical_kde,
    control_zero_mean,
    direct_conditional,
    direct_density,
    estimate_optimal_epsilon,
    random_kernel_density,
    shifted_mean,
)
from .presets import DEFAULTS, PRESET_KIND, PRESETS, make_preset
from .wiener import WienerProvider

COMMANDS = ("simulate", "density", "mean", "rates", "check")
WORKERS_ENV = "DIRICHLET_MC_WORKERS"

_RULE_OR_NUMBER = {"oneOf": [{"enum": ["L2", "poly"]}, {"type": "number", "minimum": 0}]}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["model"],
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "required": ["kind", "preset"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["wiener", "poisson", "mcspace"]},
                "preset": {"enum": list(PRESETS)},
                "params": {"type": "object"},
            },
        },
        "estimator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["random_kernel", "classical", "direct"]},
                "N": {"type": "integer", "minimum": 2},
                "epsilon": _RULE_OR_NUMBER,
                "bandwidth": _RULE_OR_NUMBER,
                "grid": {
                    "type": "object",
                    "required": ["min", "max", "count"],
                    "additionalProperties": False,
                    "properties": {
                        "min": {"type": "number"},
                        "max": {"type": "number"},
                        "count": {"type": "integer", "minimum": 1},
                    },
                },
                "ridge": {"type": "number", "minimum": 0},
                "payload": {"enum": ["none", "cos"]},
                "control": {
                    "oneOf": [{"enum": ["optimal", "mean_sign"]}, {"type": "number"}]
                },
            },
        },
        "mean": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilons": {"type": "array", "minItems": 1,
                             "items": {"type": "number", "minimum": 0}},
            },
        },
        "rates": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "methods": {"type": "array", "minItems": 1,
                            "items": {"enum": ["random_kernel", "classical", "direct"]}},
                "Ns": {"type": "array", "minItems": 4,
                       "items": {"type": "integer", "minimum": 2}},
                "criterion": {"enum": ["L2", "poly"]},
                "replicates": {"type": "integer", "minimum": 1},
                "epsilon_direct": {"type": "number", "minimum": 0},
            },
        },
        "check": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 2},
                "epsilons": {"type": "array", "minItems": 1,
                             "items": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "format": {"enum": ["csv"]},
            },
        },
    },
}


class ConfigError(ValueError):
    pass


_NUMERICAL = (SimulationError, QuadratureError, NoiseFloorError, DegenerateSampleError,
              NoReductionError, FloatingPointError, np.linalg.LinAlgError)


def _field(path) -> str:
    return ".".join(str(p) for p in path) or "<root>"


def load_config(path, seed_override=None) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(f"{_field(e.absolute_path)}: {e.message}")
    model = cfg["model"]
    if PRESET_KIND[model["preset"]] != model["kind"]:
        raise ConfigError(
            f"model.kind: preset {model['preset']!r} is of kind "
            f"{PRESET_KIND[model['preset']]!r}, not {model['kind']!r}"
        )
    allowed = set(DEFAULTS[model["preset"]])
    if model["kind"] == "wiener":
        allowed |= {"error_source", "v0", "scheme"}
    for key in model.get("params", {}):
        if key not in allowed:
            raise ConfigError(f"model.params.{key}: unknown parameter for {model['preset']}")
    if seed_override is not None:
        cfg["seed"] = seed_override
    if "seed" not in cfg:
        raise ConfigError("seed: required (set it in the config or pass --seed)")
    grid = cfg.get("estimator", {}).get("grid")
    if grid and grid["count"] > 1 and not grid["max"] > grid["min"]:
        raise ConfigError("estimator.grid.max: must exceed grid.min")
    return cfg


def _grid(cfg):
    g = cfg.get("estimator", {}).get("grid", {"min": -3.0, "max": 3.0, "count": 61})
    return np.linspace(g["min"], g["max"], g["count"])


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg, provider, out: Path, workers: int):
    est = cfg.get("estimator", {})
    N, seed = est.get("N", 1000), cfg["seed"]
    stream = derive_substream(seed, 0, 0)
    if provider.dim == 1 and "extended" in provider.capabilities:
        b = provider.sample_extended(N, stream, workers=workers)
        rows = ((i, b.x[i], b.gamma[i], b.a[i], b.gamma_gamma[i], "simulate", N, seed)
                for i in range(b.n))
        header = ["i", "x", "gamma", "a", "gamma_gamma", "method", "N", "seed"]
    else:
        b = provider.sample(N, stream, workers=workers)
        d = b.d
        header = (["i"] + [f"x{j}" for j in range(d)]
                  + [f"gamma{j}{k}" for j in range(d) for k in range(d)]
                  + [f"a{j}" for j in range(d)] + ["method", "N", "seed"])
        rows = ([i, *b.x[i], *b.gamma[i].ravel(), *b.a[i], "simulate", N, seed]
                for i in range(b.n))
    _write_csv(out / "simulate.csv", header, rows)
    return 0


def _payload(b, name):
    if name == "cos":
        return b.with_payload(np.cos, lambda x: -np.sin(x))
    return b


def cmd_density(cfg, provider, out: Path, workers: int):
    est = cfg.get("estimator", {})
    method = est.get("method", "random_kernel")
    N, seed = est.get("N", 10_000), cfg["seed"]
    grid = _grid(cfg)
    stream = derive_substream(seed, 0, 0)
    if method == "direct":
        if provider.dim != 1:
            raise ConfigError("estimator.method: direct needs a scalar model")
        eps = est.get("epsilon", 0.0)
        if isinstance(eps, str):
            raise ConfigError("estimator.epsilon: direct takes a number >= 0, not a rule")
        b = provider.sample_extended(N, stream, workers=workers)
        payload = est.get("payload", "none")
        if payload == "none":
            res = [direct_density(b, float(x), float(eps)) for x in grid]
        else:
            b = _payload(b, payload)
            res = [direct_conditional(b, float(x), float(eps), est.get("control", "optimal"))
                   for x in grid]
        values = np.array([r[0] for r in res])
        stderr = np.array([r[1] for r in res])
        param = float(eps)
    elif method == "random_kernel":
        eps = est.get("epsilon", "L2")
        if not isinstance(eps, str) and not eps > 0:
            raise ConfigError("estimator.epsilon: must be > 0 for random_kernel")
        b = provider.sample(N, stream, workers=workers)
        if b.d != 1:
            raise ConfigError("model: the density command handles scalar models only")
        r = random_kernel_density(
            b, EstimatorConfig(N, eps, grid, est.get("ridge", 1e-8)), seed)
        values, stderr, param = r.values, r.stderr, r.parameter
    else:
        h = est.get("bandwidth", "L2")
        b = provider.sample(N, stream, workers=workers)
        if b.d != 1:
            raise ConfigError("model: the density command handles scalar models only")
        if isinstance(h, str):
            h = classical_bandwidth(N, 1, h)
        elif not h > 0:
            raise ConfigError("estimator.bandwidth: must be > 0")
        r = classical_kde(b.x, float(h), grid, seed)
        values, stderr, param = r.values, r.stderr, r.parameter
    rows = ((x, v, s, method, param, N, seed) for x, v, s in zip(grid, values, stderr))
    _write_csv(out / "density.csv", ["x", "value", "stderr", "method", "epsilon", "N", "seed"],
               rows)
    return 0


def cmd_mean(cfg, provider, out: Path, workers: int):
    N, seed = cfg.get("estimator", {}).get("N", 10_000), cfg["seed"]
    epsilons = cfg.get("mean", {}).get("epsilons", [0.0, 0.5, 1.0, 2.0, 3.0])
    b = provider.sample(N, derive_substream(seed, 0, 0), workers=workers)
    rows = []
    for e in epsilons:
        m = shifted_mean(b, float(e))
        rows.append(["shifted_mean", e, *m.mean, *m.stderr, m.trace_cov, m.trace_cov_stderr,
                     N, seed])
    opt = estimate_optimal_epsilon(b)
    m = shifted_mean(b, opt.epsilon)
    rows.append(["optimal_shift", opt.epsilon, *m.mean, *m.stderr, m.trace_cov,
                 m.trace_cov_stderr, N, seed])
    d = b.d
    header = (["method", "epsilon"] + [f"mean{j}" for j in range(d)]
              + [f"stderr{j}" for j in range(d)]
              + ["trace_cov", "trace_cov_stderr", "N", "seed"])
    _write_csv(out / "mean.csv", header, rows)
    return 0


def cmd_rates(cfg, provider, out: Path, workers: int):
    rc = cfg.get("rates", {})
    methods = rc.get("methods", ["random_kernel", "classical"])
    Ns = rc.get("Ns", [2**10, 2**12, 2**14, 2**16, 2**18])
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ConfigError("rates.Ns: must be strictly increasing")
    reports = rate_experiment(provider, methods, Ns, rc.get("criterion", "L2"), cfg["seed"],
                              grid=_grid(cfg), replicates=rc.get("replicates", 4),
                              eps_direct=rc.get("epsilon_direct", 0.0), workers=workers)
    meta = {}
    for m, rep in reports.items():
        _write_csv(out / f"rates_{m}.csv", ["N", "error", "stderr", "slope_lo", "slope_hi"],
                   rep.rows())
        meta[m] = {"criterion": rep.criterion, "seed": cfg["seed"], "slope": rep.fit.slope,
                   "parameters": [float(p) for p in rep.params]}
    with open(out / "rates_meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_check(cfg, provider, out: Path, workers: int):
    seed = cfg["seed"]
    cc = cfg.get("check", {})
    N = cc.get("N", 100_000)
    rows = []
    ok = True

    def record(name, value, stderr, passed):
        nonlocal ok
        ok &= bool(passed)
        rows.append([name, value, stderr, passed, N, seed])

    b = provider.sample(N, derive_substream(seed, 0, 0), workers=workers)
    rep = validate_triplet(b)
    record("psd_min_eigenvalue", rep.min_eigenvalue, 0.0, rep.passed)
    if provider.dim == 1:
        for chk in ibp_residual(provider, ["x^2", "cos", "tanh"], N, None, samples=b):
            record(f"ibp_{chk.name}", chk.mean, chk.stderr, chk.straddles_zero(3.0))
    if provider.dim == 1 and "extended" in provider.capabilities:
        e = provider.sample_extended(N, derive_substream(seed, 0, 1), workers=workers)
        # Γ[X] can vanish on the Poisson and Monte Carlo spaces, where 1/Γ[X]
        # is not regular enough for the unregularised identity
        eps0 = 0.0 if isinstance(provider, WienerProvider) else 0.01
        for name, g, gp in (("1", np.ones_like, np.zeros_like),
                            ("cos", np.cos, lambda x: -np.sin(x))):
            m, se = control_zero_mean(e.with_payload(g, gp), eps0)
            record(f"zero_mean_G={name}_eps={eps0!r}", m, se, abs(m) <= 3 * se)
        xs = np.quantile(e.x, [0.25, 0.5, 0.75])
        ladder = cc.get("epsilons", [0.3, 0.1, 0.03, 0.01])
        mono = monotone_feps_check(e, xs, ladder, k=2.0)
        worst = min((v[3] / v[4] for v in mono.violations), default=0.0)
        record("monotone_eps", worst, 1.0, mono.passed)
    _write_csv(out / "check.csv", ["check", "value", "stderr", "passed", "N", "seed"], rows)
    return 0 if ok else 3


HANDLERS = {
    "simulate": cmd_simulate,
    "density": cmd_density,
    "mean": cmd_mean,
    "rates": cmd_rates,
    "check": cmd_check,
}


def _parser():
    p = argparse.ArgumentParser(prog="dirichlet-mc",
                                description="Monte Carlo with Dirichlet-form error calculus.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON experiment file")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--workers", type=int, help=f"worker threads (default ${WORKERS_ENV} or 1)")
    p.add_argument("--out", help="output directory (default output.path or .)")
    return p


def _workers(arg):
    if arg is not None:
        w = arg
    else:
        raw = os.environ.get(WORKERS_ENV, "1")
        try:
            w = int(raw)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV}: not an integer: {raw!r}") from None
    if w < 1:
        raise ConfigError("workers: must be >= 1")
    return w


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("seed: must be >= 0")
        workers = _workers(args.workers)
        cfg = load_config(args.config, args.seed)
        out = Path(args.out or cfg.get("output", {}).get("path", "."))
        model = cfg["model"]
        try:
            provider = make_preset(model["preset"], **model.get("params", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"model.params: {exc}") from exc
        return HANDLERS[args.command](cfg, provider, out, workers)
    except ConfigError as exc:
        print(f"dirichlet-mc: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL as exc:
        print(f"dirichlet-mc: numerical failure: {exc}", file=sys.stderr)
        return 3

if __name__ == "__main__":
    sys.exit(main())
