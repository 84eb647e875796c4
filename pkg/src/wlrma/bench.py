"""Experiment harness: flat key-value configs, method x parameter grids,
per-cell trace CSVs, and a summary table.

A grid crosses every requested method with every rank (rank-constrained
cells) and every penalty (nuclear-norm cells).  Cells are isolated: a
diverging solver is reported in the summary without aborting the rest.
"""

import csv
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import als, core, data, prox
from .accel import AndersonConfig

_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}

PROBLEM_KINDS = ("simulate", "csv-triplet", "matrix-market", "movielens", "dense-csv")
INIT_KINDS = prox.INIT_MODES + ("unweighted-als",)


@dataclass
class BenchConfig:
    problem: str = "simulate"
    n: int = 100
    p: int = 50
    r: int = 10
    sigma: float = 1.0
    weights: str = "uniform"
    seed: int = 0
    data: Optional[str] = None
    weights_data: Optional[str] = None
    methods: list = field(default_factory=list)
    ranks: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    epsilon: float = 1e-8
    max_iters: int = 300
    learning_rate: float = 1.0
    anderson_depth: int = 3
    anderson_gamma: float = 0.0
    anderson_reg_depth: int = 3
    anderson_guarded: bool = True
    anderson_delay: int = 0
    init: Optional[str] = None
    init_seed: int = 0
    als_rank: Optional[int] = None
    als_inner_iters: int = 1
    warm_start_a: Optional[str] = None
    warm_start_b: Optional[str] = None
    warm_iters: int = 50
    timing: str = "wall"
    out: Optional[str] = None

    def validate(self):
        if self.problem not in PROBLEM_KINDS:
            raise ValueError(f"unknown problem kind {self.problem!r}")
        if not self.methods:
            raise ValueError("method list is empty")
        for m in self.methods:
            if m not in prox.METHODS:
                raise ValueError(f"unknown method {m!r}")
        if not self.ranks and not self.lambdas:
            raise ValueError("no ranks and no lambdas: nothing to run")
        if self.init is not None and self.init not in INIT_KINDS:
            raise ValueError(f"unknown init mode {self.init!r}")
        if self.timing not in ("wall", "none"):
            raise ValueError("timing must be 'wall' or 'none'")
        if self.problem != "simulate" and not self.data:
            raise ValueError(f"problem kind {self.problem!r} requires a data path")


_INT_KEYS = {"n", "p", "r", "seed", "max_iters", "anderson_depth",
             "anderson_reg_depth", "anderson_delay", "init_seed",
             "als_rank", "als_inner_iters", "warm_iters"}
_FLOAT_KEYS = {"sigma", "epsilon", "learning_rate", "anderson_gamma"}
_BOOL_KEYS = {"anderson_guarded"}
_LIST_KEYS = {"methods", "ranks", "lambdas"}


def parse_config(path):
    """Parse a flat ``key = value`` file (``#`` comments, blank lines ok)."""
    cfg = BenchConfig()
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if not hasattr(cfg, key):
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            if key in _LIST_KEYS:
                items = [s.strip() for s in value.split(",") if s.strip()]
                if key == "ranks":
                    items = [int(s) for s in items]
                elif key == "lambdas":
                    items = [float(s) for s in items]
                setattr(cfg, key, items)
            elif key in _INT_KEYS:
                setattr(cfg, key, int(value))
            elif key in _FLOAT_KEYS:
                setattr(cfg, key, float(value))
            elif key in _BOOL_KEYS:
                if value.lower() not in _BOOL:
                    raise ValueError(f"{path}:{lineno}: bad boolean {value!r}")
                setattr(cfg, key, _BOOL[value.lower()])
            else:
                setattr(cfg, key, value)
    return cfg


def _weight_law(spec_text):
    if ":" in spec_text:
        law, param = spec_text.split(":", 1)
        return law.strip(), float(param)
    return spec_text.strip(), 1.0


def build_problem(cfg, out_dir=None):
    """Materialize the weighted problem a config describes."""
    if cfg.problem == "simulate":
        law, param = _weight_law(cfg.weights)
        spec = data.SimulationSpec(cfg.n, cfg.p, cfg.r, cfg.sigma, law, param, cfg.seed)
        return data.simulate(spec)
    if cfg.problem == "dense-csv":
        M = data.load_dense_matrix(cfg.data)
        W = (data.load_dense_matrix(cfg.weights_data)
             if cfg.weights_data else np.ones_like(M))
        return core.WeightedProblem(M, W)
    if cfg.problem == "movielens":
        dataset, user_ids, item_ids = data.load_movielens(cfg.data)
        if out_dir is not None:
            data.save_id_mapping(os.path.join(out_dir, "users.csv"), user_ids)
            data.save_id_mapping(os.path.join(out_dir, "items.csv"), item_ids)
        return dataset.to_problem()
    dataset = data.load_triplets(cfg.data, cfg.problem)
    return dataset.to_problem()


def cell_tag(formulation):
    if isinstance(formulation, core.RankConstrained):
        return f"k{formulation.k}"
    return f"lam{formulation.lam:g}"


def _fmt(x):
    return repr(float(x))


def trace_to_csv(trace, path, alpha_count, timing=True):
    """Write a trace with the canonical column set.

    alpha_j is the mixing weight on the j-th most recent iterate; cells stay
    blank for methods that do not mix and for warm-up iterations lacking a
    j-th coefficient.
    """
    header = ["iter", "loss", "delta", "rank", "seconds"]
    header += [f"alpha_{j}" for j in range(alpha_count)]
    header += ["guard_used"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in trace:
            row = [rec.iteration, _fmt(rec.loss), _fmt(rec.delta), rec.rank,
                   f"{rec.seconds:.6f}" if timing else ""]
            lagged = [""] * alpha_count
            if rec.alpha is not None:
                newest_first = list(rec.alpha[::-1])
                for j, a in enumerate(newest_first[:alpha_count]):
                    lagged[j] = _fmt(a)
            row += lagged
            row.append("" if rec.guard_used is None else int(rec.guard_used))
            writer.writerow(row)


def _solver_config(cfg, formulation, problem):
    anderson = AndersonConfig(
        m=cfg.anderson_depth,
        gamma=cfg.anderson_gamma,
        reg_depth=cfg.anderson_reg_depth,
        guarded=cfg.anderson_guarded,
        delay=cfg.anderson_delay,
    )
    return prox.SolverConfig(
        formulation=formulation,
        epsilon=cfg.epsilon,
        max_iters=cfg.max_iters,
        anderson=anderson,
        init_seed=cfg.init_seed,
        als_rank=cfg.als_rank,
        inner_iters=cfg.als_inner_iters,
    )


def _resolve_init(cfg, method, solver_cfg, problem, formulation):
    init = cfg.init
    if init == "unweighted-als":
        k = als.als_rank_for(problem, solver_cfg)
        lam = formulation.lam if isinstance(formulation, core.NuclearNorm) else 0.0
        solver_cfg.warm_start = als.unweighted_als(
            problem, k, lam=lam, max_iters=cfg.warm_iters, seed=cfg.init_seed
        )
        solver_cfg.init = "warm-start"
    elif init == "warm-start" or (init is None and cfg.warm_start_a):
        if not (cfg.warm_start_a and cfg.warm_start_b):
            raise ValueError("warm-start init requires warm_start_a and warm_start_b")
        solver_cfg.warm_start = core.FactorPair(
            data.load_dense_matrix(cfg.warm_start_a),
            data.load_dense_matrix(cfg.warm_start_b),
        )
        solver_cfg.init = "warm-start"
    else:
        solver_cfg.init = init


def run_experiment(config, out_dir):
    """Run every (method x formulation parameter) cell of a grid config.

    ``config`` is a BenchConfig or a path to one.  Writes one trace CSV per
    cell plus ``summary.csv`` into out_dir and returns the summary rows.
    Divergence in one cell is recorded and the remaining cells still run.
    """
    cfg = parse_config(config) if isinstance(config, (str, os.PathLike)) else config
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    problem = build_problem(cfg, out_dir)

    formulations = [core.RankConstrained(k, cfg.learning_rate) for k in cfg.ranks]
    formulations += [core.NuclearNorm(lam, cfg.learning_rate) for lam in cfg.lambdas]

    alpha_count = cfg.anderson_depth + 1
    summary = []
    for method in cfg.methods:
        for formulation in formulations:
            solver_cfg = _solver_config(cfg, formulation, problem)
            solver_cfg.method = method
            _resolve_init(cfg, method, solver_cfg, problem, formulation)
            tag = cell_tag(formulation)
            name = f"trace_{method}_{tag}.csv"
            row = {
                "method": method,
                "formulation": "rank" if isinstance(formulation, core.RankConstrained) else "nuclear",
                "param": formulation.k if isinstance(formulation, core.RankConstrained) else formulation.lam,
                "trace_file": name,
            }
            try:
                solution, trace = prox.run(problem, solver_cfg)
                err = ""
            except prox.DivergenceError as exc:
                trace = exc.trace
                solution = None
                err = str(exc)
            except als.DegenerateFactorError as exc:
                trace = prox.ConvergenceTrace()
                solution = None
                err = str(exc)
            trace_to_csv(trace, os.path.join(out_dir, name), alpha_count,
                         timing=cfg.timing == "wall")
            reached = trace.iterations_to(cfg.epsilon)
            last = trace.records[-1] if len(trace) else None
            row.update({
                "iterations": len(trace),
                "iterations_to_eps": "" if reached is None else reached,
                "converged": bool(reached is not None and not err),
                "final_loss": "" if last is None else _fmt(last.loss),
                "final_rank": "" if last is None else last.rank,
                "seconds": "" if last is None or cfg.timing != "wall" else f"{last.seconds:.6f}",
                "error": err,
            })
            summary.append(row)

    fields = ["method", "formulation", "param", "iterations", "iterations_to_eps",
              "converged", "final_loss", "final_rank", "seconds", "trace_file", "error"]
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(summary)
    return summary
