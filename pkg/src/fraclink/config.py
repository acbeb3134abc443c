"""Run configuration: a single JSON document drives every subcommand."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, fields, replace

from .basis import DomainSpec
from .functional import Nonlinearity, make_nonlinearity
from .minimax import SolverOptions


class ConfigError(Exception):
    """Invalid run configuration; the message names the offending key."""


@dataclass
class RunConfig:
    domain: DomainSpec
    K_max: int
    nonlinearity_spec: dict
    nonlinearity: Nonlinearity
    quad_order: int | None = None
    lam: float | None = None
    lambda_sweep: dict | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    verify: dict = field(default_factory=dict)
    output_dir: str = "out"
    rng_seed: int = 42
    threads: int = 1
    cluster_rel_tol: float = 1e-9

    def require_lambda(self) -> float:
        if self.lam is None:
            raise ConfigError("this command needs a scalar 'lambda' in the config")
        return self.lam


_DEFAULT_VERIFY = {
    "poincare": True,
    "gradient_fd": True,
    "hypotheses": True,
    "k_decay": True,
    "sup_sweep": True,
    "linking_gap": False,
    "nabla": False,
}

_VERIFY_PARAM_KEYS = {
    "sweep_lambdas", "sweep_index", "poincare_index", "poincare_trials",
    "eigen_index", "gradient_pairs", "nabla_window", "nabla_gamma",
    "nabla_samples",
}

_K_DEFAULTS = {"interval": 64, "rectangle": 100}


def _get(doc: dict, key: str, typ, default=None, required: bool = False):
    if key not in doc:
        if required:
            raise ConfigError("missing required key %r" % key)
        return default
    val = doc[key]
    if typ is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, typ):
        raise ConfigError("key %r must be %s, got %r" % (key, typ.__name__, val))
    return val


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    known = {"domain", "K_max", "quad_order", "nonlinearity", "lambda",
             "lambda_sweep", "solver", "verify", "output_dir", "rng_seed",
             "threads", "cluster_rel_tol"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError("unknown config key(s): %s" % ", ".join(unknown))

    try:
        domain = DomainSpec.from_json_dict(_get(doc, "domain", dict, required=True))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError("bad 'domain': %s" % exc) from None

    k_default = _K_DEFAULTS[domain.kind]
    K_max = _get(doc, "K_max", int, default=k_default)
    if K_max < 1:
        raise ConfigError("'K_max' must be a positive integer, got %r" % K_max)
    quad_order = _get(doc, "quad_order", int)
    if quad_order is not None and quad_order < 2:
        raise ConfigError("'quad_order' must be >= 2")

    nl_spec = _get(doc, "nonlinearity", dict, default={"kind": "power", "p": 3.0})
    try:
        nl = make_nonlinearity(nl_spec)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError("bad 'nonlinearity': %s" % exc) from None
    _check_exponent_range(nl, domain)

    lam = _get(doc, "lambda", float)
    sweep = _get(doc, "lambda_sweep", dict)
    if sweep is not None:
        _validate_sweep(sweep, K_max)

    solver_doc = _get(doc, "solver", dict, default={})
    opt_names = {f.name for f in fields(SolverOptions)}
    bad = sorted(set(solver_doc) - opt_names)
    if bad:
        raise ConfigError("unknown solver option(s): %s" % ", ".join(bad))
    try:
        solver = replace(SolverOptions(), **solver_doc)
        solver.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError("bad 'solver' options: %s" % exc) from None

    verify_doc = _get(doc, "verify", dict, default={})
    verify = dict(_DEFAULT_VERIFY)
    for key, val in verify_doc.items():
        if key in _VERIFY_PARAM_KEYS:
            verify[key] = val
        elif key in _DEFAULT_VERIFY:
            if not isinstance(val, bool):
                raise ConfigError("verify toggle %r must be boolean" % key)
            verify[key] = val
        else:
            raise ConfigError("unknown verify key %r" % key)

    rng_seed = _get(doc, "rng_seed", int, default=42)
    threads = _get(doc, "threads", int, default=1)
    if threads < 1:
        raise ConfigError("'threads' must be >= 1")
    rel_tol = _get(doc, "cluster_rel_tol", float, default=1e-9)
    if not 0.0 < rel_tol <= 1e-6:
        raise ConfigError("'cluster_rel_tol' must be in (0, 1e-6]")

    if "rng_seed" not in solver_doc:
        solver = replace(solver, rng_seed=rng_seed)
    return RunConfig(domain=domain, K_max=K_max, quad_order=quad_order,
                     nonlinearity_spec=nl_spec, nonlinearity=nl, lam=lam,
                     lambda_sweep=sweep, solver=solver, verify=verify,
                     output_dir=_get(doc, "output_dir", str, default="out"),
                     rng_seed=rng_seed, threads=threads, cluster_rel_tol=rel_tol)


def _check_exponent_range(nl: Nonlinearity, domain: DomainSpec) -> None:
    N = domain.ambient_dim
    if not nl.p > 2:
        raise ConfigError("nonlinearity exponent p must be > 2, got %g" % nl.p)
    if N >= 2:
        p_max = 2.0 * N / (N - 1.0)
        if not nl.p < p_max:
            raise ConfigError(
                "exponent p=%g out of range (2, %g) for a %d-d domain" % (nl.p, p_max, N))
    else:
        warnings.warn(
            "1-d domain: the subcritical exponent range is not defined there; "
            "only p > 2 is enforced", RuntimeWarning)


def _validate_sweep(sweep: dict, K_max: int) -> None:
    if "eigen_index" in sweep:
        idx = sweep["eigen_index"]
        if not isinstance(idx, int) or isinstance(idx, bool):
            raise ConfigError("'lambda_sweep.eigen_index' must be an integer")
        if idx >= K_max:
            raise ConfigError("'lambda_sweep.eigen_index' must be < K_max")
        deltas = sweep.get("delta_list")
        if deltas is None:
            raise ConfigError("'lambda_sweep' with eigen_index needs 'delta_list'")
        if not isinstance(deltas, list) or not all(
                isinstance(d, (int, float)) and not isinstance(d, bool) and d > 0
                for d in deltas):
            raise ConfigError("'lambda_sweep.delta_list' must be positive numbers")
        extra = set(sweep) - {"eigen_index", "delta_list"}
    else:
        for key in ("start", "stop", "steps"):
            if key not in sweep:
                raise ConfigError("'lambda_sweep' needs eigen_index/delta_list or "
                                  "start/stop/steps")
        if not isinstance(sweep["steps"], int) or sweep["steps"] < 1:
            raise ConfigError("'lambda_sweep.steps' must be a positive integer")
        extra = set(sweep) - {"start", "stop", "steps"}
    if extra:
        raise ConfigError("unknown lambda_sweep key(s): %s" % ", ".join(sorted(extra)))


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc)) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(
            "config %s is not valid JSON: line %d column %d: %s"
            % (path, exc.lineno, exc.colno, exc.msg)) from None
    return parse_config(doc)
