"""Command-line front end.

Exit codes: 0 success, 2 bad input, 3 poles left unconverged, 4 a
verification (or containment, or replay) check failed.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io as fio
from .analysis import (ClusterHistogram, ResidueKind, bounds_report, cluster_numbers,
                       equidistributed_angles, histogram_db, match_poles, oracle_poles,
                       random_delays, random_delays_with_total, random_orthogonal,
                       random_orthogonal_fdn, residue_magnitudes_db, trial_rng,
                       uniform_random_angles)
from .eai import EAIConfig, GateRecorder, set_threads, solve
from .fdn import FDNSystem, impulse_response
from .modal import ModalDecomposition, NonSimplePoleError, residues, synthesize

EXIT_OK, EXIT_INPUT, EXIT_UNCONVERGED, EXIT_FAILED = 0, 2, 3, 4


class CLIError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(x) for x in text.split(",") if x.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}")
    return parse


def _solver_flags(p):
    g = p.add_argument_group("solver")
    g.add_argument("--tol-rcond", type=float, default=1e-12)
    g.add_argument("--tol-step", type=float, default=1e-14)
    g.add_argument("--tol-ad", type=float, default=1e-3)
    g.add_argument("--near-count", type=int, default=None, help="even; default about order/100")
    g.add_argument("--defl-err", type=float, default=1e3, help="deflation error bound")
    g.add_argument("--scheme", choices=["jacobi", "gauss-seidel"], default="jacobi")
    g.add_argument("--deflation", choices=["exact", "approx"], default="approx")
    g.add_argument("--max-iters", type=int, default=100)
    g.add_argument("--exact-after", type=int, default=30,
                   help="steps after which a pole always deflates exactly; 0 disables")


def _config(args, **overrides) -> EAIConfig:
    kw = dict(tol_rcond=args.tol_rcond, tol_step=args.tol_step, tol_ad=args.tol_ad,
              near_count=args.near_count, deflation_err_bound=args.defl_err,
              max_full_iterations=args.max_iters, exact_after=args.exact_after or None,
              scheme=args.scheme, deflation=args.deflation, seed=args.seed)
    kw.update(overrides)
    try:
        return EAIConfig(**kw)
    except ValueError as exc:
        raise CLIError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fdnmodal", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="."):
        sp.add_argument("--out", type=Path, default=Path(out_default), help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--plot", action="store_true", help="also write PNG figures")

    d = sub.add_parser("decompose", help="poles and residues of a system file")
    d.add_argument("system", type=Path)
    common(d)
    _solver_flags(d)
    d.add_argument("--verify", action="store_true", help="compare resynthesis with the recursion")
    d.add_argument("--length", type=int, default=None, help="verification length (default 2*order)")
    d.add_argument("--threshold", type=float, default=1e-10)
    d.add_argument("--ir", action="store_true", help="write the modal impulse response as CSV")
    d.add_argument("--wav", action="store_true", help="write the modal impulse response as WAV")
    d.add_argument("--rate", type=int, default=fio.DEFAULT_WAV_RATE)
    d.add_argument("--fs", type=float, default=None, help="sample rate for T60 plots")

    v = sub.add_parser("verify", help="check a modes file against the recursion")
    v.add_argument("system", type=Path)
    v.add_argument("modes", type=Path)
    common(v)
    v.add_argument("--length", type=int, default=None)
    v.add_argument("--threshold", type=float, default=1e-10)

    a = sub.add_parser("analyze", help="ensemble statistics")
    asub = a.add_subparsers(dest="analysis", required=True)
    c = asub.add_parser("cluster", help="cluster-number table")
    common(c)
    _solver_flags(c)
    c.add_argument("--trials", type=int, default=100)
    c.add_argument("--lines", type=int, default=8)
    c.add_argument("--delay-min", type=int, default=50)
    c.add_argument("--delay-max", type=int, default=1000)
    c.add_argument("--probe-factor", type=int, default=4)
    c.add_argument("--modes", type=Path, default=None,
                   help="tabulate the angles of a modes file instead of an ensemble")
    r = asub.add_parser("residues", help="residue magnitude histograms")
    common(r)
    _solver_flags(r)
    r.add_argument("--system", type=Path, default=None)
    r.add_argument("--delays", type=_csv_list(int), default=None,
                   help="random orthogonal systems with these delays")
    r.add_argument("--trials", type=int, default=1)
    r.add_argument("--kind", choices=[k.value for k in ResidueKind] + ["all"], default="all")
    r.add_argument("--bin-db", type=float, default=1.0)
    b = asub.add_parser("bounds", help="pole magnitudes against the bounds")
    b.add_argument("system", type=Path)
    common(b)
    _solver_flags(b)
    b.add_argument("--modes", type=Path, default=None, help="use these poles instead of solving")
    b.add_argument("--tol", type=float, default=1e-10)

    be = sub.add_parser("bench", help="wall time against order")
    common(be)
    _solver_flags(be)
    be.add_argument("--orders", type=_csv_list(int), default=[200, 1000, 10000])
    be.add_argument("--methods", type=_csv_list(str), default=["exact", "approx", "oracle"])
    be.add_argument("--lines", type=int, default=8)

    ca = sub.add_parser("calibrate", help="estimate the deflation error bound")
    common(ca)
    _solver_flags(ca)
    ca.add_argument("--lines", type=int, default=8)
    ca.add_argument("--order", type=int, default=5000)
    ca.add_argument("--trials", type=int, default=5)
    ca.add_argument("--safety", type=float, default=10.0)

    rp = sub.add_parser("replay", help="re-run a manifest and compare outputs")
    rp.add_argument("manifest", type=Path)
    return p


# ---------------------------------------------------------------- helpers

class _Run:
    """Collects outputs and writes the manifest at the end."""

    def __init__(self, args, argv):
        self.args = args
        self.t0 = time.perf_counter()
        if args.seed is None:
            args.seed = int(np.random.SeedSequence().entropy % (2 ** 32))
            print(f"seed {args.seed}")
            argv = list(argv) + ["--seed", str(args.seed)]
        self.argv = list(argv)
        self.outputs: list[Path] = []
        self.extra: dict = {}
        args.out.mkdir(parents=True, exist_ok=True)

    def path(self, name) -> Path:
        p = self.args.out / name
        self.outputs.append(p)
        return p

    def finish(self, config: EAIConfig | None = None, inputs=()):
        manifest = {
            "command": self.args.command if self.args.command != "analyze"
            else f"analyze {self.args.analysis}",
            "argv": self.argv,
            "cwd": os.getcwd(),
            "config": config.as_dict() if config is not None else None,
            "inputs": {str(p): fio.file_digest(p) for p in inputs},
            "seed": self.args.seed,
            "version": __version__,
            "wall_time": time.perf_counter() - self.t0,
            "outputs": {str(p): fio.file_digest(p) for p in self.outputs},
        }
        manifest.update(self.extra)
        fio.write_manifest(self.args.out / "manifest.json", manifest)


def _load(path):
    try:
        return fio.load_system(path)
    except FileNotFoundError as exc:
        raise CLIError(f"{path}: no such file") from exc
    except fio.SystemFileError as exc:
        raise CLIError(str(exc)) from exc


def _decompose(sysm: FDNSystem, config: EAIConfig):
    poles, stats = solve(sysm, config)
    try:
        dec = residues(sysm, poles, require_converged=False)
    except NonSimplePoleError as exc:
        print(f"warning: {exc}", file=sys.stderr)
        nan = np.full(sysm.order, np.nan + 0j)
        dec = ModalDecomposition(poles.poles.copy(), nan, nan, nan, sysm.direct_gain, None,
                                 poles.iterations.copy(), poles.status.copy(), sysm.is_real)
    return poles, stats, dec


# ---------------------------------------------------------------- commands

def cmd_decompose(args, run: _Run) -> int:
    sysm = _load(args.system)
    config = _config(args)
    poles, stats, dec = _decompose(sysm, config)
    fio.write_modes_csv(run.path("modes.csv"), dec)
    print(stats.summary())
    run.extra["stats"] = {"full_iterations": stats.full_iterations,
                          "avg_iterations_per_pole": stats.avg_iterations_per_pole,
                          "exact_deflation_fraction": stats.exact_deflation_fraction}
    code = EXIT_OK
    if not poles.all_converged:
        print(f"error: {np.count_nonzero(~poles.converged)} poles did not converge", file=sys.stderr)
        code = EXIT_UNCONVERGED
    length = args.length or 2 * sysm.order
    modal = None
    if args.verify or args.ir or args.wav:
        modal = synthesize(dec, length)
        modal_out = modal.real if sysm.is_real else modal
        if args.ir:
            fio.write_signal_csv(run.path("ir.csv"), modal_out)
        if args.wav:
            fio.write_wav(run.path("ir.wav"), modal_out, args.rate)
    if args.verify:
        ref = impulse_response(sysm, length)
        err = float(np.max(np.abs(ref - modal)))
        ok = err < args.threshold
        print(f"verification error {err:.3e} over {length} samples: {'pass' if ok else 'FAIL'}")
        run.extra["verification_error"] = err
        if args.plot:
            from .plotting import plot_impulse_responses
            plot_impulse_responses(ref, modal, run.path("ir.png"))
        if not ok and code == EXIT_OK:
            code = EXIT_FAILED
    if args.plot:
        from .attenuation import magnitude_bounds
        from .plotting import plot_modes
        plot_modes(dec, run.path("modes.png"), args.fs, magnitude_bounds(sysm))
    run.finish(config, [args.system])
    return code


def cmd_verify(args, run: _Run) -> int:
    sysm = _load(args.system)
    try:
        dec = fio.read_modes_csv(args.modes, sysm.direct_gain)
    except FileNotFoundError as exc:
        raise CLIError(f"{args.modes}: no such file") from exc
    except fio.SystemFileError as exc:
        raise CLIError(str(exc)) from exc
    if len(dec) != sysm.order:
        raise CLIError(f"modes file has {len(dec)} modes, system order is {sysm.order}")
    length = args.length or 2 * sysm.order
    ref = impulse_response(sysm, length)
    modal = synthesize(dec, length)
    err = float(np.max(np.abs(ref - modal)))
    ok = err < args.threshold
    print(f"verification error {err:.3e} over {length} samples: {'pass' if ok else 'FAIL'}")
    run.extra["verification_error"] = err
    if args.plot:
        from .plotting import plot_impulse_responses
        plot_impulse_responses(ref, modal, run.path("verify.png"))
    run.finish(None, [args.system, args.modes])
    return EXIT_OK if ok else EXIT_FAILED


CLUSTER_HEADER = ["ensemble", "p0", "p1", "p2", "p3", "p4plus", "observations", "trials"]


def _cluster_row(name, h: ClusterHistogram):
    return [name, *[float(x) for x in h.probabilities], h.observations, h.trials]


def cmd_analyze_cluster(args, run: _Run) -> int:
    rows = []
    if args.modes is not None:
        try:
            dec = fio.read_modes_csv(args.modes)
        except (FileNotFoundError, fio.SystemFileError) as exc:
            raise CLIError(str(exc)) from exc
        h = cluster_numbers(np.angle(dec.poles), len(dec), args.probe_factor * len(dec))
        rows.append(_cluster_row(args.modes.stem, h))
        config = None
    else:
        if args.trials < 1 or not 1 <= args.delay_min <= args.delay_max:
            raise CLIError("need trials >= 1 and 1 <= delay-min <= delay-max")
        config = _config(args)
        fdn, equi, unif = ClusterHistogram.empty(), ClusterHistogram.empty(), ClusterHistogram.empty()
        for t in range(args.trials):
            rng = trial_rng(args.seed, t)
            sysm = random_orthogonal_fdn(random_delays(args.lines, args.delay_min, args.delay_max, rng), rng)
            poles, _ = solve(sysm, config)
            if not poles.all_converged:
                print(f"error: trial {t} left poles unconverged", file=sys.stderr)
                return EXIT_UNCONVERGED
            probes = args.probe_factor * sysm.order
            fdn = fdn + cluster_numbers(np.angle(poles.poles), sysm.order, probes)
            equi = equi + cluster_numbers(equidistributed_angles(sysm.order), sysm.order, probes)
            unif = unif + cluster_numbers(uniform_random_angles(sysm.order, rng), sysm.order, probes)
        rows = [_cluster_row("equidistributed", equi), _cluster_row("uniform-random", unif),
                _cluster_row(f"lossless-{args.lines}-fdn", fdn)]
    fio.write_table_csv(run.path("cluster.csv"), CLUSTER_HEADER, rows)
    for r in rows:
        print(f"{r[0]:>20}: " + "  ".join(f"{x:.4f}" for x in r[1:6]))
    if args.plot:
        from .plotting import plot_cluster_table
        plot_cluster_table([r[0] for r in rows], [r[1:6] for r in rows], run.path("cluster.png"))
    run.finish(config, [args.modes] if args.modes else [])
    return EXIT_OK


HIST_HEADER = ["bin_lower", "bin_upper", "count", "probability"]


def cmd_analyze_residues(args, run: _Run) -> int:
    if (args.system is None) == (args.delays is None):
        raise CLIError("give exactly one of --system or --delays")
    config = _config(args)
    kinds = list(ResidueKind) if args.kind == "all" else [ResidueKind(args.kind)]
    need_drives = ResidueKind.DRIVES in kinds
    values = {k: [] for k in kinds}
    systems = []
    if args.system is not None:
        systems.append(_load(args.system))
    else:
        for t in range(args.trials):
            rng = trial_rng(args.seed, t)
            systems.append(FDNSystem(args.delays, random_orthogonal(len(args.delays), rng)))
    for sysm in systems:
        poles, _ = solve(sysm, config)
        if not poles.all_converged:
            print("error: poles did not converge", file=sys.stderr)
            return EXIT_UNCONVERGED
        dec = residues(sysm, poles, drive_matrices=need_drives)
        for k in kinds:
            values[k].append(residue_magnitudes_db(dec, k))
    inputs = [args.system] if args.system else []
    for k in kinds:
        v = np.concatenate(values[k])
        hist = histogram_db(v, k, args.bin_db)
        rows = [[float(a), float(b), int(c), float(p)] for a, b, c, p in
                zip(hist.edges[:-1], hist.edges[1:], hist.counts, hist.probabilities)]
        fio.write_table_csv(run.path(f"residues_{k.value}.csv"), HIST_HEADER, rows)
        print(f"{k.value}: {v.size} values, median {np.median(v):.2f} dB, "
              f"range [{v.min():.1f}, {v.max():.1f}] dB")
        if args.plot:
            from .plotting import plot_residue_histogram
            plot_residue_histogram(hist, run.path(f"residues_{k.value}.png"))
    run.finish(config, inputs)
    return EXIT_OK


def cmd_analyze_bounds(args, run: _Run) -> int:
    sysm = _load(args.system)
    config = None
    if args.modes is not None:
        try:
            lam = fio.read_modes_csv(args.modes).poles
        except (FileNotFoundError, fio.SystemFileError) as exc:
            raise CLIError(str(exc)) from exc
    else:
        config = _config(args)
        poles, _ = solve(sysm, config)
        lam = poles.poles
    rep = bounds_report(sysm, lam)
    rows = [[float(z.real), float(z.imag), float(abs(z)), float(lo), float(hi), float(m)]
            for z, lo, hi, m in zip(rep.poles, rep.lower, rep.upper, rep.margin)]
    fio.write_table_csv(run.path("bounds.csv"), ["re", "im", "abs", "lower", "upper", "margin"], rows)
    inside = int(np.count_nonzero(rep.margin >= -args.tol))
    print(f"{inside} of {lam.size} poles inside the bounds (tolerance {args.tol:g}); "
          f"smallest margin {rep.margin.min():.3e}")
    if args.plot:
        from .plotting import plot_bounds
        plot_bounds(rep, run.path("bounds.png"))
    run.finish(config, [args.system] + ([args.modes] if args.modes else []))
    return EXIT_OK if rep.all_inside(args.tol) else EXIT_FAILED


BENCH_HEADER = ["order", "method", "seconds", "full_iterations", "exact_deflation_fraction"]


def cmd_bench(args, run: _Run) -> int:
    unknown = set(args.methods) - {"exact", "approx", "oracle"}
    if unknown:
        raise CLIError(f"unknown methods {sorted(unknown)}")
    rows = []
    for i, order in enumerate(args.orders):
        if order < args.lines:
            raise CLIError(f"order {order} is below the number of lines")
        rng = trial_rng(args.seed, i)
        sysm = random_orthogonal_fdn(random_delays_with_total(args.lines, order, rng), rng)
        found = {}
        for method in args.methods:
            if method == "oracle":
                if order > 512:
                    continue
                t0 = time.perf_counter()
                found[method] = oracle_poles(sysm)
                rows.append([order, method, time.perf_counter() - t0, 0, 0.0])
            else:
                poles, st = solve(sysm, _config(args, deflation=method))
                found[method] = poles.poles
                rows.append([order, method, st.wall_time, st.full_iterations,
                             st.exact_deflation_fraction])
            print(f"order {order:>8} {method:>6}: {rows[-1][2]:.3f} s")
        if len(found) > 1:
            ref = next(iter(found.values()))
            worst = max(match_poles(ref, v).max_distance for v in found.values())
            print(f"order {order:>8} max pole disagreement {worst:.2e}")
    fio.write_table_csv(run.path("bench.csv"), BENCH_HEADER, rows)
    if args.plot:
        from .plotting import plot_bench
        plot_bench(rows, run.path("bench.png"))
    run.finish(_config(args), [])
    return EXIT_OK


def cmd_calibrate(args, run: _Run) -> int:
    config = _config(args)
    rows = []
    for t in range(args.trials):
        rng = trial_rng(args.seed, t)
        sysm = random_orthogonal_fdn(random_delays_with_total(args.lines, args.order, rng), rng)
        rec = GateRecorder()
        solve(sysm, config, recorder=rec)
        rows.append([t, sysm.order, rec.max_deflation_error])
        print(f"trial {t}: max deflation error {rec.max_deflation_error:.3e}")
    worst = max(r[2] for r in rows)
    estimate = args.safety * worst
    print(f"deflation error bound estimate {estimate:.3e} (max {worst:.3e} x {args.safety:g})")
    run.extra["deflation_err_bound"] = estimate
    fio.write_table_csv(run.path("calibrate.csv"), ["trial", "order", "max_deflation_error"], rows)
    run.finish(config, [])
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        manifest = fio.read_manifest(args.manifest)
    except (FileNotFoundError, ValueError) as exc:
        raise CLIError(f"{args.manifest}: {exc}") from exc
    os.chdir(manifest.get("cwd", os.getcwd()))
    for path, digest in manifest.get("inputs", {}).items():
        if fio.file_digest(path) != digest:
            raise CLIError(f"input {path} changed since the recorded run")
    recorded = manifest["outputs"]
    code = main(manifest["argv"])
    if code not in (EXIT_OK, EXIT_UNCONVERGED, EXIT_FAILED):
        return code
    mismatched = [p for p, d in recorded.items()
                  if not p.endswith(".png") and fio.file_digest(p) != d]
    for p in mismatched:
        print(f"mismatch: {p}", file=sys.stderr)
    print("replay identical" if not mismatched else f"replay differs in {len(mismatched)} file(s)")
    return EXIT_OK if not mismatched else EXIT_FAILED


COMMANDS = {"decompose": cmd_decompose, "verify": cmd_verify, "bench": cmd_bench,
            "calibrate": cmd_calibrate}
ANALYSES = {"cluster": cmd_analyze_cluster, "residues": cmd_analyze_residues,
            "bounds": cmd_analyze_bounds}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads is not None:
        set_threads(args.threads)
    try:
        if args.command == "replay":
            return cmd_replay(args)
        run = _Run(args, argv)
        handler = ANALYSES[args.analysis] if args.command == "analyze" else COMMANDS[args.command]
        return handler(args, run)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
