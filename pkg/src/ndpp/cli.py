"""Command line interface: ``ndpp {gen,sample,bench,verify,learn}``.

Exit status is 0 on success, 1 when a check fails or sampling gives up,
and 2 for usage errors and unreadable inputs.
"""

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import bench, io
from .cholesky import sample_cholesky
from .errors import FormatError, NDPPError
from .kernel import marginal_core
from .learning import LearnConfig, load_baskets, train
from .rejection import RejectionStats, preprocess, sample_reject
from .rng import stream
from .synthetic import SyntheticSpec, generate_synthetic
from .verify import random_instance, run_checks

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _nonneg_float(text):
    v = float(text)
    if not np.isfinite(v) or v < 0:
        raise argparse.ArgumentTypeError(f"expected a finite value >= 0, got {text}")
    return v


def _pos_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def cmd_gen(args, out):
    spec = SyntheticSpec(args.M, args.K, clusters=args.clusters, poisson_mean=args.poisson_mean,
                         seed=args.seed, ondpp=args.ondpp)
    f = generate_synthetic(spec)
    meta = {"seed": args.seed, "generator": "synthetic", "M": args.M, "K": args.K,
            "clusters": args.clusters, "poisson_mean": args.poisson_mean, "ondpp": args.ondpp}
    io.save_factors(args.out, f, meta)
    print(f"wrote {args.out} (M={f.M}, K={f.K})", file=out)
    return EXIT_OK


def cmd_sample(args, out):
    f = io.load_factors(args.model)
    rng = stream(args.seed, f"sample/{args.algo}")
    samples, times = [], []
    st = RejectionStats()
    if args.algo == "cholesky":
        core = marginal_core(f)
        draw = lambda: sample_cholesky(f, rng, core=core)  # noqa: E731
    else:
        s = preprocess(f, leaf_size=args.leaf_size)
        draw = lambda: sample_reject(s, rng, max_rounds=args.max_rounds, stats=st)[0]  # noqa: E731
    for _ in range(args.n):
        t0 = time.perf_counter()
        samples.append(draw())
        times.append(time.perf_counter() - t0)
    io.write_baskets(args.out, samples,
                     header=[f"ndpp sample algo={args.algo} n={args.n} seed={args.seed} M={f.M}"])
    if times:
        mean, ci = bench.mean_ci(times)
        msg = f"{args.n} samples, mean {mean:.4g} s/sample (95% CI +/- {ci:.2g})"
        if args.algo == "rejection":
            msg += f", mean rounds {st.mean_rounds:.4g}"
        print(msg, file=out)
    else:
        print("0 samples", file=out)
    return EXIT_OK


def cmd_bench(args, out):
    Ms = args.M or bench.powers_of_two(1 << 12, 1 << 18)
    algos = args.algo or list(bench.ALGORITHMS)
    sink = open(args.out, "w", newline="") if args.out else out
    try:
        w = csv.DictWriter(sink, fieldnames=bench.CSV_COLUMNS, lineterminator="\n")
        w.writeheader()

        def emit(r):
            w.writerow(r.row())
            sink.flush()

        bench.run_bench(Ms, args.K, algos, reps=args.reps, seed=args.seed,
                        leaf_size=args.leaf_size, ondpp=args.ondpp, on_record=emit)
    finally:
        if args.out:
            sink.close()
    return EXIT_OK


def _verify_one(job):
    f, seed, t, draws, alpha = job
    # one stream per kernel, so --parallel does not change any result
    return run_checks(f, stream(seed, f"verify/draws/{t}"), draws=draws, alpha=alpha)


def cmd_verify(args, out):
    if (args.model is None) == (args.random is None):
        raise UsageError("give exactly one of --model or --random M K TRIALS")
    if args.model is not None:
        kernels = [(args.model, io.load_factors(args.model))]
    else:
        M, K, trials = args.random
        if M < 1 or K < 2 or K % 2 or trials < 1:
            raise UsageError("--random needs M >= 1, even K >= 2 and TRIALS >= 1")
        rng = stream(args.seed, "verify/random")
        kernels = [(f"random[{t}]", random_instance(M, K, rng)) for t in range(trials)]
    # Bonferroni over the two goodness-of-fit tests per kernel
    alpha = args.alpha / (2 * len(kernels))
    jobs = [(f, args.seed, t, args.draws, alpha) for t, (_, f) in enumerate(kernels)]
    if args.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            reports = list(pool.map(_verify_one, jobs))
    else:
        reports = [_verify_one(j) for j in jobs]
    failed = 0
    for (name, _), results in zip(kernels, reports):
        for r in results:
            print(f"{name}: {r.line()}", file=out)
            failed += not r.passed
    print(f"{failed} failed check(s)", file=out)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_learn(args, out):
    cfg = LearnConfig(K=args.K, alpha=args.alpha, beta=args.beta, gamma=args.gamma,
                      step_size=args.step_size, epochs=args.epochs, batch_size=args.batch_size,
                      seed=args.seed)
    data = load_baskets(args.data, M=args.catalog)
    history = []
    params = train(data, cfg, history=history)
    for h in history:
        state = "accepted" if h.accepted else "rejected"
        print(f"epoch {h.epoch}: train NLL {h.train_nll:.6g}, validation NLL {h.val_nll:.6g}, "
              f"U {h.U:.6g}, step {h.step_size:.3g} ({state})", file=out)
    meta = {"seed": args.seed, "generator": "learn", "data": str(args.data),
            "hyperparameters": {"K": cfg.K, "alpha": cfg.alpha, "beta": cfg.beta,
                                "gamma": cfg.gamma, "step_size": cfg.step_size,
                                "epochs": cfg.epochs, "batch_size": cfg.batch_size,
                                "eps": cfg.eps, "tol": cfg.tol},
            "epochs_run": len(history), "U": params.rejection_constant()}
    io.save_factors(args.out, params.to_factors(ondpp=True), meta)
    print(f"wrote {args.out} (M={params.M}, K={params.K}, U={params.rejection_constant():.6g})", file=out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="ndpp", description="Nonsymmetric DPP sampling toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic kernel")
    g.add_argument("-M", type=_pos_int, required=True)
    g.add_argument("-K", type=_pos_int, required=True)
    g.add_argument("--clusters", type=_pos_int, default=100)
    g.add_argument("--poisson-mean", type=float, default=5.0)
    g.add_argument("--ondpp", action="store_true", help="orthogonalise V against B")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("sample", help="draw subsets from a kernel file")
    s.add_argument("--model", required=True)
    s.add_argument("--algo", choices=bench.ALGORITHMS, default="cholesky")
    s.add_argument("-n", type=_nonneg_int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--leaf-size", type=_pos_int, default=1)
    s.add_argument("--max-rounds", type=_pos_int, default=None)
    s.set_defaults(func=cmd_sample)

    b = sub.add_parser("bench", help="time both samplers on synthetic kernels")
    b.add_argument("-M", type=_pos_int, action="append", help="ground set size (repeatable)")
    b.add_argument("-K", type=_pos_int, default=100)
    b.add_argument("--algo", choices=bench.ALGORITHMS, action="append")
    b.add_argument("--reps", type=_pos_int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--leaf-size", type=_pos_int, default=bench.BENCH_LEAF_SIZE)
    b.add_argument("--ondpp", action="store_true")
    b.add_argument("--out", help="CSV path (default: stdout)")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="run the self-check suite")
    v.add_argument("--model")
    v.add_argument("--random", type=int, nargs=3, metavar=("M", "K", "TRIALS"))
    v.add_argument("--draws", type=_pos_int, default=4000)
    v.add_argument("--alpha", type=float, default=1e-3, help="family-wise test level")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--parallel", type=_pos_int, default=1, metavar="N",
                   help="check kernels in N worker processes")
    v.set_defaults(func=cmd_verify)

    lr = sub.add_parser("learn", help="fit an orthogonal NDPP to a basket file")
    lr.add_argument("--data", required=True)
    lr.add_argument("--out", required=True)
    lr.add_argument("-K", type=_pos_int, default=4)
    lr.add_argument("--catalog", type=_pos_int, default=None, help="catalogue size M")
    lr.add_argument("--alpha", type=_nonneg_float, default=0.01)
    lr.add_argument("--beta", type=_nonneg_float, default=0.01)
    lr.add_argument("--gamma", type=_nonneg_float, default=0.5)
    lr.add_argument("--step-size", type=float, default=LearnConfig.step_size)
    lr.add_argument("--epochs", type=_nonneg_int, default=100)
    lr.add_argument("--batch-size", type=_pos_int, default=800)
    lr.add_argument("--seed", type=int, default=0)
    lr.set_defaults(func=cmd_learn)
    return p


def main(argv=None, out=None):
    out = out if out is not None else sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, out)
    except (UsageError, FormatError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"ndpp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NDPPError as exc:
        print(f"ndpp {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
