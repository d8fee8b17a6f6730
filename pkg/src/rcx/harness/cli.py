"""Command-line entry point.

Subcommands mirror the module map: ``spectral selftest``, ``advdiff run|sweep``,
``mhd run``, ``topo scan``, ``sns run|ensemble``, ``reconnect sweep``, ``fit``.
Exit codes: 0 success, 2 config error, 3 numerical failure, 4 self-test failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_SELFTEST = 4


def _load_config(path: str) -> dict:
    from .config import parse_config
    with open(path) as fh:
        return parse_config(fh.read())


def _apply_overrides(cfg: dict, args) -> dict:
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        cfg["threads"] = args.threads
    if getattr(args, "out", None):
        cfg["out_dir"] = args.out
    if getattr(args, "mode", None):
        cfg["mode"] = args.mode
    return cfg


def _run_config(args, force_kind: str | None = None) -> int:
    from .config import ConfigError
    from .experiments import run_experiment
    try:
        cfg = _load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        if force_kind is not None and cfg.get("experiment") != force_kind:
            raise ConfigError(
                f"key 'experiment': expected {force_kind!r} for this subcommand, "
                f"got {cfg.get('experiment')!r}")
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    out_dir = cfg.get("out_dir", "out")
    result.write(out_dir)
    print(f"experiment {result.kind}: {len(result.ok_rows())}/{len(result.rows)} rows ok")
    for k, v in sorted(result.fits.items()):
        print(f"  {k} = {v}")
    print(f"outputs in {out_dir}/")
    failed = [r for r in result.rows if r.error is not None]
    return EXIT_NUMERICAL if len(failed) == len(result.rows) and result.rows else EXIT_OK


# ----------------------------------------------------------------------
# spectral selftest
# ----------------------------------------------------------------------

def _cmd_selftest(args) -> int:
    from ..spectral import (Grid, MultiplierSpec, SpectralField, apply_multiplier,
                            lp_blocks, lp_project, lp_project_leq, sobolev_norm)

    rng = np.random.default_rng(args.seed or 0)
    grid = Grid((64, 64))
    checks: list[tuple[str, bool, str]] = []

    def rand_field(nmodes=64):
        coeff = np.zeros(grid.sizes, dtype=np.complex128)
        n1, n2 = grid.sizes
        for _ in range(nmodes):
            k1 = int(rng.integers(-n1 // 3, n1 // 3))
            k2 = int(rng.integers(-n2 // 3, n2 // 3))
            if k1 == 0 and k2 == 0:
                continue
            z = rng.standard_normal() + 1j * rng.standard_normal()
            coeff[k1 % n1, k2 % n2] += z
            coeff[-k1 % n1, -k2 % n2] += np.conj(z)
        return SpectralField(grid, coeff)

    f = rand_field()
    phys = f.physical()
    l2_phys = float(np.sqrt(np.mean(phys**2)))
    err = abs(l2_phys - f.l2()) / max(f.l2(), 1e-300)
    checks.append(("parseval", err <= 1e-12, f"rel err {err:.2e}"))

    g = apply_multiplier(apply_multiplier(f, MultiplierSpec("inhomogeneous", order=1.7)),
                         MultiplierSpec("inhomogeneous", order=-1.7))
    err = (g - f).l2() / f.l2()
    checks.append(("multiplier_roundtrip", err <= 1e-12, f"rel err {err:.2e}"))

    recon = lp_project_leq(f, 1)
    for n in lp_blocks(grid):
        recon = recon + lp_project(f, n)
    err = (recon - f).l2() / f.l2()
    checks.append(("lp_reconstruction", err <= 1e-12, f"rel err {err:.2e}"))

    bern_ok, worst = True, ""
    for n in (2, 4, 8, 16):
        block = lp_project(rand_field(128), n)
        if block.l2() < 1e-12:
            continue
        ratio = sobolev_norm(block, 1.3, homogeneous=True) / (n**1.3 * block.l2())
        lo, hi = 0.5**1.3, 2.0**1.3
        if not (lo - 1e-9 <= ratio <= hi + 1e-9):
            bern_ok = False
            worst = f"block {n}: ratio {ratio:.3f} outside [{lo:.3f}, {hi:.3f}]"
    checks.append(("bernstein_blocks", bern_ok, worst or "all blocks in range"))

    ok_all = True
    for name, ok, detail in checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        ok_all &= ok
    return EXIT_OK if ok_all else EXIT_SELFTEST


# ----------------------------------------------------------------------
# small direct subcommands
# ----------------------------------------------------------------------

def _cmd_advdiff_run(args) -> int:
    from ..advdiff import AdvDiffParams, KolmogorovFlow, project_streamline_average, run_advdiff
    from ..spectral import Grid, SpectralField
    try:
        grid = Grid((args.n, args.n))
        x1, _ = grid.meshgrid()
        rho0 = SpectralField.from_physical(grid, np.sin(x1))
        flow = KolmogorovFlow()
        rho0 = project_streamline_average(rho0, flow)
        p = AdvDiffParams(eta=args.eta, dt=args.dt, T=args.T, cadence=args.cadence)
        trace = run_advdiff(rho0, flow, p, s_list=(1.0, 2.0), projected=True)
    except Exception as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"trace_eta{args.eta:g}.csv")
    trace.write_csv(path)
    print(f"wrote {path} ({len(trace.times)} samples)")
    return EXIT_OK


def _cmd_mhd_run(args) -> int:
    from ..mhd3d import MHDParams, MHDState, NullPointData, make_null_point_data, run_mhd
    from ..spectral import Grid, save_field
    try:
        grid = Grid((args.n, args.n, args.n))
        u0, b0 = make_null_point_data(NullPointData(M=args.M, eps=args.eps), grid)
        params = MHDParams(eta=args.eta, nu=args.nu, dt=args.dt, T=args.T,
                           hyper_coeff=args.hyper_coeff,
                           cadence=max(1, int(round(args.snap_every / args.dt))))
        states = run_mhd(MHDState(u0, b0), params)
    except Exception as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    os.makedirs(args.out, exist_ok=True)
    for s in states:
        for i in range(3):
            save_field(os.path.join(args.out, f"b{i + 1}_t{s.time:.4f}.rcxf"),
                       s.b.component(i))
    print(f"wrote {3 * len(states)} snapshots to {args.out}/")
    return EXIT_OK


def _cmd_topo_scan(args) -> int:
    from ..spectral import VectorField, load_field
    from ..topology import find_zeros, write_zero_csv, write_zero_jsonl
    try:
        comps = [load_field(p) for p in args.fields]
        b = VectorField.from_components(comps)
        zeros = find_zeros(b)
    except Exception as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"{len(zeros)} zero(s) found")
    for z in zeros:
        loc = ", ".join(f"{v:.6f}" for v in z.location)
        print(f"  ({loc})  residual={z.residual:.2e}  class={z.clazz}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_zero_csv(os.path.join(args.out, "zeros.csv"), 0.0, zeros)
        write_zero_jsonl(os.path.join(args.out, "zeros.jsonl"), zeros)
    return EXIT_OK


def _cmd_sns_run(args) -> int:
    from ..spectral import Grid
    from ..stochastic import NoiseSpec, run_sns_path
    try:
        grid = Grid((args.n, args.n))
        noise = NoiseSpec(alpha=args.alpha, seed=args.seed or 0, amplitude=args.amplitude)
        trace = run_sns_path(grid, noise, args.dt, args.T, cadence=args.cadence)
    except Exception as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"path_seed{noise.seed}.csv")
    trace.write_csv(path)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    from .fits import fit_reconnection_scaling
    try:
        rows = np.loadtxt(args.csv, delimiter=",", skiprows=args.skip)
        etas, tstar = rows[:, 0], rows[:, 1]
        fit = fit_reconnection_scaling(etas, tstar)
    except Exception as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"best model: {fit.best_model}")
    for name in fit.r2:
        print(f"  {name}: c2={fit.coefficients[name]:.6g} R2={fit.r2[name]:.6f}")
    print(f"eta*t* decreasing: {fit.accelerated_check}; "
          f"eta^a*t* decreasing: { {a: v for a, v in fit.fast_checks.items()} }")
    return EXIT_OK


# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rcx",
                                 description="spectral dissipation/reconnection laboratory")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def add_common(p, config=False):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", default=None)
        if config:
            p.add_argument("--config", required=True)
            p.add_argument("--mode", choices=("reduced", "full"), default=None)

    p = sub.add_parser("spectral", help="spectral substrate commands")
    ssub = p.add_subparsers(dest="sub", required=True)
    st = ssub.add_parser("selftest", help="run the spectral self-test battery")
    st.add_argument("--seed", type=int, default=0)
    st.set_defaults(func=_cmd_selftest)

    p = sub.add_parser("advdiff", help="advection-diffusion commands")
    asub = p.add_subparsers(dest="sub", required=True)
    run = asub.add_parser("run", help="single trace")
    run.add_argument("--eta", type=float, required=True)
    run.add_argument("--n", type=int, default=128)
    run.add_argument("--dt", type=float, default=0.01)
    run.add_argument("--T", type=float, default=10.0)
    run.add_argument("--cadence", type=int, default=10)
    run.add_argument("--out", default="out")
    run.set_defaults(func=_cmd_advdiff_run)
    sweep = asub.add_parser("sweep", help="dissipation-time sweep from a config")
    add_common(sweep, config=True)
    sweep.set_defaults(func=lambda a: _run_config(a, force_kind=None))

    p = sub.add_parser("mhd", help="3D MHD run")
    msub = p.add_subparsers(dest="sub", required=True)
    run = msub.add_parser("run")
    run.add_argument("--eta", type=float, required=True)
    run.add_argument("--nu", type=float, default=0.0)
    run.add_argument("--n", type=int, default=32)
    run.add_argument("--dt", type=float, default=1e-3)
    run.add_argument("--T", type=float, default=1.0)
    run.add_argument("--M", type=float, default=1.0)
    run.add_argument("--eps", type=float, default=0.01)
    run.add_argument("--hyper-coeff", type=float, default=0.0)
    run.add_argument("--snap-every", type=float, default=0.1)
    run.add_argument("--out", default="out")
    run.set_defaults(func=_cmd_mhd_run)

    p = sub.add_parser("topo", help="zero-set tools")
    tsub = p.add_subparsers(dest="sub", required=True)
    scan = tsub.add_parser("scan", help="scan RCXF component files for zeros")
    scan.add_argument("fields", nargs=3, help="three RCXF component files")
    scan.add_argument("--out", default=None)
    scan.set_defaults(func=_cmd_topo_scan)

    p = sub.add_parser("sns", help="stochastic Navier-Stokes")
    nsub = p.add_subparsers(dest="sub", required=True)
    run = nsub.add_parser("run", help="single path")
    run.add_argument("--n", type=int, default=64)
    run.add_argument("--alpha", type=float, default=6.0)
    run.add_argument("--amplitude", type=float, default=1.0)
    run.add_argument("--dt", type=float, default=1e-3)
    run.add_argument("--T", type=float, default=1.0)
    run.add_argument("--cadence", type=int, default=10)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", default="out")
    run.set_defaults(func=_cmd_sns_run)
    ens = nsub.add_parser("ensemble", help="energy-balance ensemble from a config")
    add_common(ens, config=True)
    ens.set_defaults(func=lambda a: _run_config(a, force_kind="sns_energy"))

    p = sub.add_parser("reconnect", help="reconnection-time sweeps")
    rsub = p.add_subparsers(dest="sub", required=True)
    sweep = rsub.add_parser("sweep")
    add_common(sweep, config=True)
    sweep.set_defaults(func=lambda a: _run_config(a, force_kind=None))

    p = sub.add_parser("fit", help="fit reconnection scaling models to CSV rows")
    p.add_argument("csv", help="CSV with columns eta,t_star")
    p.add_argument("--skip", type=int, default=0)
    p.set_defaults(func=_cmd_fit)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
