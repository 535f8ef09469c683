"""Command-line driver: ``spammsqrt <subcommand> ...``.

Exit codes: 0 success, 1 usage or input error, 2 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import frechet, precond, qtree
from . import sqrt_iter as si
from .export import (RunManifest, export_history, export_volumes, load_representation,
                     save_representation, worker_count, write_manifest)
from .mmio import MatrixMarketError, read_matrix_market, write_matrix_market
from .spamm import VolumeLog, multiply
from .synthetic import SyntheticSpec, gen_decay

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _mu_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shift ladder {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spammsqrt", description=__doc__.splitlines()[0])
    p.add_argument("--serial", action="store_true",
                   help="single worker (bitwise reproducible)")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic decay matrix")
    g.add_argument("out")
    g.add_argument("-n", type=int, required=True)
    g.add_argument("--dim", type=int, default=1, choices=(1, 2, 3))
    g.add_argument("--gamma", type=float, default=1.0)
    g.add_argument("--shift", type=float, default=0.0)
    g.add_argument("--ordering", choices=("natural", "morton"), default="natural")
    g.add_argument("--kappa", type=float, default=None)

    m = sub.add_parser("multiply", help="SpAMM product of two matrices")
    m.add_argument("a")
    m.add_argument("b")
    m.add_argument("-o", "--out", required=True)
    m.add_argument("--tau", type=float, default=0.0)
    m.add_argument("--block-size", type=int, default=qtree.DEFAULT_BLOCK_SIZE)
    m.add_argument("--volumes", default=None)
    m.add_argument("--volumes-format", choices=("csv", "legacy_vtk_points"), default="csv")

    s = sub.add_parser("sqrt", help="square root / inverse square root iteration")
    s.add_argument("matrix")
    s.add_argument("--mode", choices=(si.DUAL, si.SINGLE), default=si.DUAL)
    s.add_argument("--tau", type=float, default=0.0)
    s.add_argument("--tau-s", type=float, default=None)
    s.add_argument("--block-size", type=int, default=qtree.DEFAULT_BLOCK_SIZE)
    s.add_argument("--max-iter", type=int, default=100)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--scale", dest="scale", action="store_true", default=True)
    s.add_argument("--no-scale", dest="scale", action="store_false")
    s.add_argument("--history", default=None)
    s.add_argument("--manifest", default=None, help="JSON run manifest")
    s.add_argument("--volumes-every", type=int, default=0)
    s.add_argument("--volumes-dir", default=None)
    s.add_argument("--out-z", default=None)
    s.add_argument("--out-y", default=None)

    c = sub.add_parser("precond", help="build regularized slices for a shift ladder")
    c.add_argument("matrix")
    c.add_argument("--mu-ladder", type=_mu_list, default=[0.1, 0.01, 0.001])
    c.add_argument("--tau0", type=float, default=0.1)
    c.add_argument("--tau-apply", type=float, default=None)
    c.add_argument("--tau-s", type=float, default=None)
    c.add_argument("--block-size", type=int, default=qtree.DEFAULT_BLOCK_SIZE)
    c.add_argument("--slices-dir", required=True)

    a = sub.add_parser("analyze", help="track error flow against a dense reference")
    a.add_argument("matrix")
    a.add_argument("--mode", choices=(si.DUAL, si.SINGLE), default=si.DUAL)
    a.add_argument("--tau", type=float, default=1e-2)
    a.add_argument("--tau-s", type=float, default=None)
    a.add_argument("--block-size", type=int, default=qtree.DEFAULT_BLOCK_SIZE)
    a.add_argument("--steps", type=int, default=40)
    a.add_argument("--no-scale", dest="scale", action="store_false", default=True)
    a.add_argument("--dense-cap", type=int, default=frechet.DENSE_CAP)
    a.add_argument("--out", default=None, help="CSV of per-step displacements")

    k = sub.add_parser("check", help="congruence check of a stored representation")
    k.add_argument("matrix")
    k.add_argument("--slices-dir", required=True)
    k.add_argument("--tau", type=float, default=0.0)
    return p


def _cfg(args) -> si.IterationConfig:
    tau_s = args.tau_s if args.tau_s is not None else 0.01 * args.tau
    return si.IterationConfig(mode=args.mode, tau=args.tau, tau_s=tau_s,
                              block_size=args.block_size,
                              max_iter=getattr(args, "max_iter", 100),
                              convergence_tol=getattr(args, "tol", 1e-10),
                              scaling_enabled=args.scale,
                              volumes_every=getattr(args, "volumes_every", 0))


def _load(path, block_size) -> qtree.HierMatrix:
    return qtree.build(read_matrix_market(path), block_size)


def _cmd_gen(args) -> int:
    spec = SyntheticSpec(args.n, args.dim, args.gamma, args.shift, args.ordering, args.kappa)
    write_matrix_market(args.out, gen_decay(spec), comment=json.dumps(vars(args)))
    return EXIT_OK


def _cmd_multiply(args) -> int:
    a, b = _load(args.a, args.block_size), _load(args.b, args.block_size)
    log = VolumeLog() if args.volumes else None
    c, st = multiply(a, b, args.tau, log)
    write_matrix_market(args.out, qtree.to_dense(c))
    if log is not None and len(log):
        export_volumes(log, args.volumes, args.volumes_format)
    print(f"volume_fraction={st.volume_fraction:.6g} "
          f"leaf_products={st.leaf_products_performed}/{st.leaf_products_possible}")
    return EXIT_OK


def _write_volume_logs(history, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for h in history:
        for ch, log in h.volumes.items():
            if len(log):
                export_volumes(log, d / f"k{h.k:03d}_{ch}.csv")


def _cmd_sqrt(args) -> int:
    cfg = _cfg(args)
    s = _load(args.matrix, args.block_size)
    status = EXIT_OK
    try:
        res = si.run(s, cfg)
        history, converged = res.history, res.converged
    except si.IterationDivergence as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        res, history, converged, status = None, exc.history, False, EXIT_DIVERGED
    man = RunManifest.from_history(history, vars(args))
    if args.history:
        export_history(man, args.history)
        man.outputs["history"] = args.history
    if args.volumes_dir:
        _write_volume_logs(history, args.volumes_dir)
    if res is not None:
        for key, m in (("out_z", res.z), ("out_y", res.y)):
            if getattr(args, key):
                write_matrix_market(getattr(args, key), qtree.to_dense(m))
                man.outputs[key] = getattr(args, key)
    if args.manifest:
        write_manifest(man, args.manifest)
    t = history[-1].t
    print(f"iterations={man.iterations} t_k={t:.3e} converged={converged}")
    if status == EXIT_OK and not converged:
        print("warning: max_iter reached before convergence", file=sys.stderr)
    return status


def _cmd_precond(args) -> int:
    s = _load(args.matrix, args.block_size)
    mus = args.mu_ladder
    if not mus or any(b >= a for a, b in zip(mus, mus[1:])):
        raise _UsageError("--mu-ladder must be a strictly decreasing list")
    try:
        rep = precond.ladder(s, mus, args.tau0, args.tau_apply, args.tau_s)
    except si.IterationDivergence as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    rep.target = str(args.matrix)
    save_representation(rep, args.slices_dir)
    for i, sl in enumerate(rep.slices):
        print(f"slice {i}: mu={sl.mu:g} iterations={sl.iterations} t_k={sl.final_t:.3e}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    cfg = _cfg(args)
    s = read_matrix_market(args.matrix)
    if s.shape[0] > args.dense_cap:
        raise _UsageError(f"n={s.shape[0]} exceeds --dense-cap {args.dense_cap}")
    flow = frechet.track_error_flow(qtree.build(s, args.block_size), cfg, args.steps)
    if args.out:
        cols = ("k", "alpha", "eps", "t_approx", "t_ref", "dy", "dz", "dx",
                "deriv_y", "deriv_z", "bound_dz", "bifurcated")
        with open(args.out, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in flow.records:
                fh.write(",".join(repr(getattr(r, c)) for c in cols) + "\n")
    print(f"steps={len(flow.records)} terminal_dz={flow.terminal_dz:.3e} "
          f"diverged={flow.diverged} converged={flow.converged}")
    return EXIT_DIVERGED if flow.diverged else EXIT_OK


def _cmd_check(args) -> int:
    rep = load_representation(args.slices_dir)
    bs = rep.slices[0].z_factor.block_size if len(rep) else qtree.DEFAULT_BLOCK_SIZE
    s = _load(args.matrix, bs)
    print(f"congruence={precond.congruence_check(rep, s, args.tau):.6e}")
    return EXIT_OK


_COMMANDS = {"gen": _cmd_gen, "multiply": _cmd_multiply, "sqrt": _cmd_sqrt,
             "precond": _cmd_precond, "analyze": _cmd_analyze, "check": _cmd_check}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        workers = 1 if args.serial else worker_count()
        with threadpool_limits(limits=workers), np.errstate(over="ignore", invalid="ignore"):
            return _COMMANDS[args.cmd](args)
    except _UsageError as exc:
        print(f"spammsqrt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, MatrixMarketError, ValueError) as exc:
        print(f"spammsqrt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
