"""Command-line driver.

Verbs: ``simulate`` (write a synthetic instance), ``solve`` (one method on
one problem), ``bench`` (a config-driven grid), ``rank`` (solution rank of
a factor pair on disk).
"""

import argparse
import os
import sys

import numpy as np

from . import als, bench, core, data, prox
from .accel import AndersonConfig


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=0, help="random seed")
    parser.add_argument("--out", default=".", help="output directory")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="wlrma",
        description="Weighted low-rank matrix approximation solvers and benchmarks.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    sim = sub.add_parser("simulate", help="generate a noisy low-rank instance")
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--p", type=int, required=True)
    sim.add_argument("--r", type=int, required=True, help="true rank")
    sim.add_argument("--sigma", type=float, default=1.0)
    sim.add_argument("--weights", default="uniform",
                     help="uniform | binary:<prob> | constant:<w>")
    sim.add_argument("--triplets", action="store_true",
                     help="write sparse triplets instead of dense M.csv/W.csv")
    _add_common(sim)

    slv = sub.add_parser("solve", help="run one solver on one problem")
    slv.add_argument("--data", required=True)
    slv.add_argument("--format", default="csv-triplet",
                     choices=["csv-triplet", "matrix-market", "movielens", "dense-csv"])
    slv.add_argument("--weights-file", default=None,
                     help="dense weight matrix CSV (dense-csv format only)")
    slv.add_argument("--method", default="prox-baseline", choices=prox.METHODS)
    group = slv.add_mutually_exclusive_group(required=True)
    group.add_argument("--rank", type=int, help="rank-constrained formulation")
    group.add_argument("--lam", type=float, help="nuclear-norm formulation")
    slv.add_argument("--learning-rate", type=float, default=1.0)
    slv.add_argument("--epsilon", type=float, default=1e-8)
    slv.add_argument("--max-iters", type=int, default=300)
    slv.add_argument("--depth", type=int, default=3, help="Anderson depth m")
    slv.add_argument("--gamma", type=float, default=0.0, help="coefficient smoothing")
    slv.add_argument("--reg-depth", type=int, default=3)
    slv.add_argument("--unguarded", action="store_true")
    slv.add_argument("--delay", type=int, default=0)
    slv.add_argument("--init", default=None, choices=list(prox.INIT_MODES))
    slv.add_argument("--warm-start-a", default=None)
    slv.add_argument("--warm-start-b", default=None)
    slv.add_argument("--als-rank", type=int, default=None)
    slv.add_argument("--inner-iters", type=int, default=1)
    _add_common(slv)

    bch = sub.add_parser("bench", help="run a grid experiment from a config file")
    bch.add_argument("--config", required=True)
    _add_common(bch)

    rnk = sub.add_parser("rank", help="solution rank of a factor pair")
    rnk.add_argument("--factor-a", required=True, help="dense CSV for A")
    rnk.add_argument("--factor-b", required=True, help="dense CSV for B")
    _add_common(rnk)

    return parser


def _cmd_simulate(args):
    law, param = bench._weight_law(args.weights)
    spec = data.SimulationSpec(args.n, args.p, args.r, args.sigma, law, param, args.seed)
    problem = data.simulate(spec)
    os.makedirs(args.out, exist_ok=True)
    if args.triplets:
        rows, cols = np.nonzero(problem.W)
        dataset = data.TripletDataset(
            rows, cols, problem.M[rows, cols], problem.shape, problem.W[rows, cols]
        )
        path = os.path.join(args.out, "triplets.csv")
        dataset.save(path)
        print(f"wrote {path} ({len(dataset)} entries)")
    else:
        data.save_dense_matrix(os.path.join(args.out, "M.csv"), problem.M)
        data.save_dense_matrix(os.path.join(args.out, "W.csv"), problem.W)
        print(f"wrote {args.out}/M.csv and {args.out}/W.csv "
              f"({problem.shape[0]}x{problem.shape[1]})")
    return 0


def _load_problem(args):
    if args.format == "dense-csv":
        M = data.load_dense_matrix(args.data)
        W = (data.load_dense_matrix(args.weights_file)
             if args.weights_file else np.ones_like(M))
        return core.WeightedProblem(M, W)
    if args.format == "movielens":
        dataset, user_ids, item_ids = data.load_movielens(args.data)
        os.makedirs(args.out, exist_ok=True)
        data.save_id_mapping(os.path.join(args.out, "users.csv"), user_ids)
        data.save_id_mapping(os.path.join(args.out, "items.csv"), item_ids)
        return dataset.to_problem()
    return data.load_triplets(args.data, args.format).to_problem()


def _cmd_solve(args):
    problem = _load_problem(args)
    if args.rank is not None:
        formulation = core.RankConstrained(args.rank, args.learning_rate)
    else:
        formulation = core.NuclearNorm(args.lam, args.learning_rate)
    warm = None
    if args.warm_start_a:
        warm = core.FactorPair(
            data.load_dense_matrix(args.warm_start_a),
            data.load_dense_matrix(args.warm_start_b),
        )
    config = prox.SolverConfig(
        formulation=formulation,
        method=args.method,
        epsilon=args.epsilon,
        max_iters=args.max_iters,
        anderson=AndersonConfig(m=args.depth, gamma=args.gamma,
                                reg_depth=args.reg_depth,
                                guarded=not args.unguarded, delay=args.delay),
        init=args.init,
        init_seed=args.seed,
        warm_start=warm,
        als_rank=args.als_rank,
        inner_iters=args.inner_iters,
    )
    os.makedirs(args.out, exist_ok=True)
    try:
        solution, trace = prox.run(problem, config)
    except prox.DivergenceError as exc:
        bench.trace_to_csv(exc.trace, os.path.join(args.out, "trace.csv"),
                           args.depth + 1)
        print(f"diverged: {exc}", file=sys.stderr)
        return 1
    bench.trace_to_csv(trace, os.path.join(args.out, "trace.csv"), args.depth + 1)
    if isinstance(solution, core.FactorPair):
        data.save_dense_matrix(os.path.join(args.out, "A.csv"), solution.A)
        data.save_dense_matrix(os.path.join(args.out, "B.csv"), solution.B)
        rank, _ = als.solution_rank(solution)
    else:
        data.save_dense_matrix(os.path.join(args.out, "X.csv"), solution.X)
        rank = core.matrix_rank(solution.X)
    last = trace.records[-1]
    reached = trace.iterations_to(args.epsilon)
    status = f"converged at iteration {reached}" if reached else "hit max_iters"
    print(f"{args.method}: {status}, loss {last.loss:.6e}, rank {rank}, "
          f"{last.seconds:.2f}s, trace in {args.out}/trace.csv")
    return 0


def _cmd_bench(args):
    cfg = bench.parse_config(args.config)
    if args.seed:
        cfg.seed = args.seed
    summary = bench.run_experiment(cfg, args.out)
    for row in summary:
        status = "ok" if not row["error"] else f"ERROR: {row['error']}"
        print(f"{row['method']:>14s} {row['formulation']}={row['param']:<8} "
              f"iters={row['iterations']:<4} loss={row['final_loss']} {status}")
    print(f"summary in {args.out}/summary.csv")
    return 0


def _cmd_rank(args):
    factors = core.FactorPair(
        data.load_dense_matrix(args.factor_a),
        data.load_dense_matrix(args.factor_b),
    )
    rank, values = als.solution_rank(factors)
    os.makedirs(args.out, exist_ok=True)
    np.savetxt(os.path.join(args.out, "singular_values.csv"), values, delimiter=",")
    print(f"rank {rank} (singular values in {args.out}/singular_values.csv)")
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "solve": _cmd_solve,
        "bench": _cmd_bench,
        "rank": _cmd_rank,
    }
    return handlers[args.verb](args)


if __name__ == "__main__":
    sys.exit(main())
