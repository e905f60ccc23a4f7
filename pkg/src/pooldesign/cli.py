"""Command-line interface: design sweeps, fitting, error estimation, simulation.

Commands
--------
sweep      variance-vs-alpha curves (analytic for Normal, Monte Carlo for Gamma)
fit        maximum-likelihood fit of a data file
errors     replicate-difference error-variance estimation
simulate   generate a synthetic dataset file
bootstrap  empirical design evaluation by resampling raw measurements

Every command takes ``--config <json>`` plus overriding flags, writes its
output atomically, and drops a ``<out>.config.json`` sidecar holding the
fully resolved configuration (re-running from the sidecar reproduces the
output byte for byte).

Exit codes: 0 success, 2 configuration/input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import io as pio
from .design import (DesignSpec, alpha_grid, design_from_dict, design_to_dict,
                     one_pool_design, three_assay_design, two_assay_design)
from .estimate import fit_laplace_scale, fit_mle, replicate_error_variances, ReplicatePairSet
from .exceptions import (ConfigError, DataError, DesignError, EstimationError,
                         LikelihoodError, ModelError, NumericsError,
                         PoolDesignError, SimulationError)
from .fisher import default_information_params, sweep_alpha
from .models import GAMMA, NORMAL, PARAM_NAMES, ModelSpec
from .simulate import SimConfig, bootstrap_design_eval, generate_dataset, monte_carlo_variance

__all__ = ["main"]


def _load_config(args) -> dict:
    cfg = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise ConfigError("cannot read config: %s" % exc) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("config %s is not valid JSON: %s" % (args.config, exc)) from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config root must be a JSON object")
    for key in ("seed", "out", "llod", "family", "threads"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "llod", None) is not None:
        cfg["llods"] = [args.llod]
    return cfg


def _require(cfg: dict, key: str, what: str = ""):
    if key not in cfg:
        raise ConfigError("missing config key %r%s" % (key, " (%s)" % what if what else ""))
    return cfg[key]


def _model_from(cfg: dict) -> ModelSpec:
    family = _require(cfg, "family")
    if family not in PARAM_NAMES:
        raise ConfigError("family must be 'normal' or 'gamma', got %r" % family)
    params = _require(cfg, "model", "model parameters")
    if not isinstance(params, dict):
        raise ConfigError("'model' must be an object of parameters")
    unknown = set(params) - set(PARAM_NAMES[family])
    if unknown:
        raise ConfigError("unknown %s parameters: %s" % (family, sorted(unknown)))
    try:
        return ModelSpec(family, **{k: float(v) for k, v in params.items()})
    except ModelError as exc:
        raise ConfigError(str(exc)) from exc


def _design_from(cfg: dict) -> DesignSpec:
    doc = _require(cfg, "design")
    if "groups" in doc:
        return design_from_dict(doc)
    N = int(_require(doc, "N"))
    n = int(_require(doc, "n"))
    kind = doc.get("type", "two_assay")
    if kind == "two_assay":
        return two_assay_design(N, n, float(_require(doc, "alpha")))
    if kind == "three_assay":
        return three_assay_design(N, n, float(_require(doc, "alpha")),
                                  float(_require(doc, "beta")),
                                  int(_require(doc, "p2")))
    if kind == "one_pool":
        return one_pool_design(N, n)
    raise ConfigError("unknown design type %r" % kind)


def _alphas_from(cfg: dict, N: int, n: int):
    if "alphas" in cfg:
        alphas = [float(a) for a in cfg["alphas"]]
    else:
        alphas = alpha_grid(N, n, int(cfg.get("alpha_count", 6)))
    if not alphas:
        raise ConfigError("empty alpha grid")
    if sorted(alphas) != alphas:
        raise ConfigError("alphas must be ascending")
    return alphas


def _sidecar(cfg: dict, command: str):
    out = cfg.get("out")
    if out:
        doc = dict(cfg)
        doc["command"] = command
        pio.write_json(pio.sidecar_path(out), doc)


def _cell_seed(seed: int, *stream) -> int:
    return int(np.random.SeedSequence((int(seed),) + stream).generate_state(1, np.uint64)[0])


def cmd_sweep(cfg: dict) -> None:
    model = _model_from(cfg)
    N = int(_require(cfg, "N"))
    n = int(_require(cfg, "n"))
    llods = [float(x) for x in _require(cfg, "llods", "list of detection limits")]
    if not llods:
        raise ConfigError("llods must be nonempty")
    alphas = _alphas_from(cfg, N, n)
    out = _require(cfg, "out")
    extras = None
    if "beta" in cfg:
        extras = {"beta": float(cfg["beta"]), "p2": int(_require(cfg, "p2"))}
    backend = cfg.get("backend", "analytic" if model.family == NORMAL else "monte-carlo")

    if backend == "analytic":
        if model.family != NORMAL:
            raise ConfigError("analytic sweeps support the normal family only")
        results = [sweep_alpha(model, N, n, llod, alphas, extras) for llod in llods]
        params = list(results[0].rows[0].scaled_variances)
        pio.sweep_rows_to_csv(out, results, params)
    elif backend == "monte-carlo":
        if model.family != GAMMA:
            raise ConfigError("monte-carlo sweeps are for the gamma family")
        replications = int(cfg.get("replications", 1000))
        seed = int(cfg.get("seed", 0))
        threads = int(cfg.get("threads", 1))
        fixed = {"c": model.c, "d": model.d}
        header = ["llod", "alpha", "nvar_a", "nvar_b", "bias_a", "bias_b", "failures"]
        rows = []
        for li, llod in enumerate(llods):
            for ai, alpha in enumerate(alphas):
                if extras:
                    design = three_assay_design(N, n, alpha, extras["beta"], extras["p2"])
                else:
                    design = two_assay_design(N, n, alpha)
                sim = SimConfig(model, design, llod, replications,
                                _cell_seed(seed, li, ai))
                res = monte_carlo_variance(sim, fixed=fixed, threads=threads,
                                           fit_options=cfg.get("fit_options"))
                rows.append([llod, alpha,
                             n * res.variances["a"], n * res.variances["b"],
                             res.biases["a"], res.biases["b"], res.failure_count])
        pio.write_csv(out, header, rows)
    else:
        raise ConfigError("backend must be 'analytic' or 'monte-carlo'")
    _sidecar(cfg, "sweep")


def cmd_fit(cfg: dict) -> None:
    path = _require(cfg, "data", "data CSV path")
    data = pio.read_dataset(path, cfg.get("llod"), cfg.get("family"))
    family = cfg.get("family") or data.family
    if family is None:
        raise ConfigError("no family: pass --family or provide the meta file")
    fixed = cfg.get("fixed")
    if fixed is not None and not isinstance(fixed, dict):
        raise ConfigError("'fixed' must be an object of parameter values")
    try:
        fit = fit_mle(family, data, fixed=fixed)
    except EstimationError as exc:
        raise SimulationError(str(exc)) from exc
    doc = {
        "family": family,
        "llod": data.llod,
        "estimates": fit.estimates,
        "loglik": fit.loglik,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "free_params": list(fit.free_params),
        "stderr": fit.stderr(),
        "n_observations": len(data.observations),
        "n_censored": data.n_censored,
    }
    out = cfg.get("out")
    if out:
        pio.write_json(out, doc)
        _sidecar(cfg, "fit")
    else:
        print(json.dumps(doc, indent=2, sort_keys=True))


def cmd_errors(cfg: dict) -> None:
    path = _require(cfg, "data", "replicate CSV path")
    data = pio.read_dataset(path, cfg.get("llod", -math.inf), cfg.get("family"))
    # pair rows per assay within each group, in arrival order per replicate
    by_assay = {}
    counters = {}
    for obs in data.observations:
        key = (obs.group_index, obs.replicate_index)
        idx = counters.get(key, 0)
        counters[key] = idx + 1
        by_assay.setdefault((obs.group_index, idx), {})[obs.replicate_index] = obs
    unpaired = sorted(
        "group %d assay %d" % k for k, reps in by_assay.items()
        if set(reps) != {1, 2}
    )
    if unpaired:
        raise DataError("unpaired replicate rows for: %s" % "; ".join(unpaired))
    ind, pool = [], []
    for (g, _), reps in sorted(by_assay.items()):
        o1, o2 = reps[1], reps[2]
        if o1.censored or o2.censored:
            continue
        diff = o1.value - o2.value
        if data.design.groups[g].pool_size == 1:
            ind.append(diff)
        else:
            pool.append(diff)
    var_m, var_p = replicate_error_variances(ReplicatePairSet(tuple(ind), tuple(pool)))
    s_ind, scale_c = fit_laplace_scale(ind)
    s_pool, _ = fit_laplace_scale(pool)
    scale_d = math.sqrt(max(s_pool ** 2 - s_ind ** 2, 0.0) / 2.0)
    doc = {
        "var_m": var_m,
        "var_p": var_p,
        "scale_c": scale_c,
        "scale_d": scale_d,
        "n_individual_pairs": len(ind),
        "n_pooled_pairs": len(pool),
    }
    out = cfg.get("out")
    if out:
        pio.write_json(out, doc)
        _sidecar(cfg, "errors")
    else:
        print(json.dumps(doc, indent=2, sort_keys=True))


def cmd_simulate(cfg: dict) -> None:
    model = _model_from(cfg)
    design = _design_from(cfg)
    llod = float(_require(cfg, "llods", "detection limit")[0]) \
        if "llods" in cfg else float(_require(cfg, "llod"))
    seed = int(cfg.get("seed", 0))
    rep_index = int(cfg.get("rep_index", 0))
    out = _require(cfg, "out")
    data = generate_dataset(model, design, llod,
                            np.random.SeedSequence((seed, rep_index)),
                            shared_pooling_error=bool(cfg.get("shared_pooling_error", False)))
    pio.write_dataset(out, data, family=model.family)
    _sidecar(cfg, "simulate")


def cmd_bootstrap(cfg: dict) -> None:
    raw_path = _require(cfg, "raw", "raw values file")
    raw = pio.read_raw_values(raw_path)
    N = int(_require(cfg, "N"))
    n = int(_require(cfg, "n"))
    llods = [float(x) for x in _require(cfg, "llods", "list of detection limits")]
    alphas = _alphas_from(cfg, N, n)
    replications = int(cfg.get("replications", 10000))
    seed = int(cfg.get("seed", 0))
    threads = int(cfg.get("threads", 1))
    out = _require(cfg, "out")
    results = []
    for li, llod in enumerate(llods):
        results.append(bootstrap_design_eval(
            raw, N, n, alphas, llod, replications,
            _cell_seed(seed, li), threads=threads))
    pio.sweep_rows_to_csv(out, results, ["mu_x", "sigma_x"])
    _sidecar(cfg, "bootstrap")


COMMANDS = {
    "sweep": cmd_sweep,
    "fit": cmd_fit,
    "errors": cmd_errors,
    "simulate": cmd_simulate,
    "bootstrap": cmd_bootstrap,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pooldesign",
        description="Hybrid pooled/unpooled biomarker designs under a "
                    "lower limit of detection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data_arg=False, raw_arg=False):
        if data_arg:
            p.add_argument("data", nargs="?", help="assay data CSV")
        if raw_arg:
            p.add_argument("raw", nargs="?", help="raw values file")
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="base random seed")
        p.add_argument("--out", help="output path")
        p.add_argument("--llod", type=float, help="lower limit of detection")
        p.add_argument("--family", choices=[NORMAL, GAMMA], help="model family")
        p.add_argument("--threads", type=int, help="worker processes")

    common(sub.add_parser("sweep", help="variance-vs-alpha design sweep"))
    common(sub.add_parser("fit", help="fit a model to censored assay data"),
           data_arg=True)
    common(sub.add_parser("errors", help="replicate-based error variances"),
           data_arg=True)
    common(sub.add_parser("simulate", help="generate a synthetic dataset"))
    common(sub.add_parser("bootstrap", help="bootstrap design evaluation"),
           raw_arg=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        for attr in ("data", "raw"):
            val = getattr(args, attr, None)
            if val is not None:
                cfg[attr] = val
        COMMANDS[args.command](cfg)
        return 0
    except (ConfigError, DataError, DesignError, ModelError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except (NumericsError, SimulationError, EstimationError,
            LikelihoodError, PoolDesignError) as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
