"""
LTDL - multi-spectral image denoising by tensor dictionary learning.

This is the main entry point of the command-line toolkit. It denoises cubes,
adds noise, scores results, runs the synthetic dictionary-recovery
experiment and dumps singular-value spectra.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

# Add current directory to Python path for local imports
LTDL_ROOT = os.path.abspath(os.path.dirname(__file__))
if LTDL_ROOT not in sys.path:
    sys.path.insert(0, LTDL_ROOT)

from config.loader import describe_config, load_ltdl_config
from data.container import load_tensor, save_tensor
from data.noise import add_gaussian_noise, estimate_noise_sigma
from data.pgm import export_atom_tiles, export_band_pgm
from data.synthetic import SynthSpec, run_recovery_trial
from denoise.grouping import cluster_blocks, extract_blocks, form_groups
from denoise.ltdl import denoise
from metrics.quality import evaluate, psnr
from tensor.core import unfold
from tensor.lowrank import estimate_ranks, hooi, nearly_lowrank_denoise
from utils import signals
from utils.report import atomic_write_text, csv_text, format_table, write_csv
from utils.timer import PhaseTimer

# Command-line flags that map straight onto LtdlConfig fields
CONFIG_FLAGS = {
    "lambda_s": float, "lambda_r": float, "rho0": float, "mu": float, "max_outer_iters": int,
    "tol_residual": float, "window_rows": int, "window_cols": int, "step_rows": int,
    "step_cols": int, "tau_a": float, "tau_e": float, "k_clusters": int, "seed": int, "workers": int,
    "dict_update_every": int,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, help="Flat YAML file with LtdlConfig fields")
    for name, kind in CONFIG_FLAGS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind, default=None,
                            help=f"Override config field {name}")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override any config field (repeatable)")


def _config_overrides(args: argparse.Namespace) -> dict:
    overrides = {name: getattr(args, name) for name in CONFIG_FLAGS}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    return overrides


def parse_arguments(argv=None) -> argparse.Namespace:
    """Parse command-line arguments."""
    parser = argparse.ArgumentParser(
        description="LTDL - multi-spectral image denoising by tensor dictionary learning",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py addnoise --input clean.ltdl --sigma 0.1 --seed 1 --output noisy.ltdl
  python main.py denoise --input noisy.ltdl --sigma 0.1 --output out.ltdl --report iters.csv
  python main.py metrics --ref clean.ltdl --test out.ltdl --format table
  python main.py synth --sigma 0.01 0.1 0.3 --trials 20 --iters 200 --seed 0
  python main.py inspect --input clean.ltdl
        """
    )
    parser.add_argument("--verbose", action="store_true", help="Log solver detail at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("denoise", help="Denoise a cube")
    p.add_argument("--input", required=True, help="Noisy cube (LTDL container or flat binary with .hdr)")
    p.add_argument("--output", required=True, help="Denoised cube (LTDL container)")
    p.add_argument("--sigma", type=float, default=None, help="Noise level nu (estimated when omitted)")
    p.add_argument("--report", type=str, help="Per-iteration CSV report")
    p.add_argument("--export-dicts", type=str, help="Directory for learned dictionaries (.ltdl and .pgm)")
    _add_config_flags(p)

    p = sub.add_parser("addnoise", help="Add i.i.d. Gaussian noise")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("metrics", help="PSNR, SSIM, SAM and ERGAS of a test cube")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--format", choices=("csv", "table"), default="table")
    p.add_argument("--sam-unit", choices=("rad", "deg"), default="rad")
    p.add_argument("--scale-ratio", type=float, default=1.0, help="ERGAS resolution ratio")

    p = sub.add_parser("synth", help="Synthetic dictionary-recovery experiment")
    p.add_argument("--sigma", type=float, nargs="+", required=True, help="One or more noise levels")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--groups", type=int, default=200)
    p.add_argument("--inner-width", type=int, default=5, help="Active atom pairs per code (5 or 6)")
    p.add_argument("--matching", choices=("greedy", "hungarian"), default="greedy")
    p.add_argument("--every", type=int, default=10, help="Print every n-th iteration")
    p.add_argument("--output", type=str, help="CSV of the full ratio curves")

    p = sub.add_parser("inspect", help="Dims, value range and per-mode singular values")
    p.add_argument("--input", required=True)
    p.add_argument("--output", type=str, help="Spectrum CSV (stdout when omitted)")

    p = sub.add_parser("spectrum", help="Mode-3 spectra of a group: noisy, Tucker, nearly low-rank")
    p.add_argument("--input", required=True)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--clean", type=str, help="Clean reference cube; adds the same group's spectrum")
    p.add_argument("--output", type=str, help="Spectrum CSV (stdout when omitted)")
    _add_config_flags(p)

    p = sub.add_parser("pgm", help="Export one band as a 16-bit PGM")
    p.add_argument("--input", required=True)
    p.add_argument("--band", type=int, default=0)
    p.add_argument("--output", required=True)

    return parser.parse_args(argv)


def run_denoise(args) -> int:
    overrides = _config_overrides(args)
    overrides["noise_sigma"] = args.sigma
    cfg = load_ltdl_config(args.config, overrides)
    msi = load_tensor(args.input)
    print(f"[Denoise] Input {args.input}: dims {msi.shape}, seed {cfg.seed}")
    logging.getLogger(__name__).debug("effective configuration:\n%s", describe_config(cfg))

    timer = PhaseTimer()
    signals.setup_signal_handlers()
    try:
        out, dicts, report = denoise(msi, cfg, should_stop=signals.stop_requested, on_phase=timer.start)
        timer.summarize_and_stop()
    finally:
        timer.stop()
        signals.restore_signal_handlers()

    print("[Denoise] " + ", ".join(f"{name} {seconds:.1f}s" for name, seconds in timer.durations.items()))
    save_tensor(out, args.output)
    for line in report.lines():
        print(f"[Denoise] {line}")
    state = "converged" if report.converged else ("interrupted" if report.interrupted else "stopped at max iterations")
    print(f"[Denoise] {state}; nu {report.noise_sigma:.4g}, lambda_s {report.lambda_s:.4g}, "
          f"lambda_r {report.lambda_r:.4g}, Z-system condition {report.z_condition:.3g}")
    print(f"[Denoise] Wrote {args.output}")
    if args.report:
        write_csv(args.report, report.CSV_HEADER, report.csv_rows())
        print(f"[Denoise] Wrote report {args.report}")
    if args.export_dicts:
        target = Path(args.export_dicts)
        target.mkdir(parents=True, exist_ok=True)
        save_tensor(dicts.d_a, target / "spatial.ltdl")
        save_tensor(dicts.d_e, target / "spectral.ltdl")
        export_atom_tiles(dicts.d_a, (cfg.window_rows, cfg.window_cols), target / "spatial.pgm")
        export_atom_tiles(dicts.d_e, (dicts.d_e.shape[0], 1), target / "spectral.pgm")
        print(f"[Denoise] Wrote dictionaries to {target}")
    return 0


def run_addnoise(args) -> int:
    msi = load_tensor(args.input)
    noisy = add_gaussian_noise(msi, args.sigma, args.seed)
    save_tensor(noisy, args.output)
    print(f"[AddNoise] sigma {args.sigma}, seed {args.seed}: PSNR {psnr(msi, noisy):.2f} dB")
    print(f"[AddNoise] Wrote {args.output}")
    return 0


def run_metrics(args) -> int:
    report = evaluate(load_tensor(args.ref), load_tensor(args.test), args.sam_unit, args.scale_ratio)
    if args.format == "csv":
        sys.stdout.write(report.to_csv())
    else:
        print(report.to_table())
    return 0


def run_synth(args) -> int:
    curves = {}
    timer = PhaseTimer()
    signals.setup_signal_handlers()
    try:
        timer.start("trials")
        for sigma in args.sigma:
            runs = []
            for trial in range(args.trials):
                spec = SynthSpec(groups=args.groups, inner_width=args.inner_width, noise=sigma,
                                 seed=args.seed + trial)
                runs.append(run_recovery_trial(spec, args.iters, matching=args.matching,
                                               should_stop=signals.stop_requested))
                print(f"[Synth] sigma {sigma}, trial {trial + 1}/{args.trials} (seed {spec.seed}): "
                      f"final ratio {runs[-1][-1]:.3f}")
                if signals.stop_requested():
                    break
            curves[sigma] = np.mean(runs, axis=0)
            if signals.stop_requested():
                break
        timer.summarize_and_stop()
    finally:
        timer.stop()
        signals.restore_signal_handlers()

    header = ["iter"] + [f"sigma={s:g}" for s in curves]
    rows = [[it + 1] + [float(c[it]) for c in curves.values()] for it in range(args.iters)]
    shown = [r for r in rows if r[0] % max(args.every, 1) == 0 or r[0] == args.iters]
    print(format_table(header, shown, float_fmt="{:.3f}"))
    if args.output:
        write_csv(args.output, header, rows)
        print(f"[Synth] Wrote {args.output}")
    return 0


def _emit(text: str, output: str | None, tag: str) -> None:
    if output:
        atomic_write_text(output, text)
        print(f"[{tag}] Wrote {output}")
    else:
        sys.stdout.write(text)


def run_inspect(args) -> int:
    msi = load_tensor(args.input)
    print(f"[Inspect] dims {msi.shape}, min {msi.min():.6g}, max {msi.max():.6g}, "
          f"mean {msi.mean():.6g}, estimated nu {estimate_noise_sigma(msi):.4g}")
    rows = []
    for mode in (1, 2, 3):
        sv = np.linalg.svd(unfold(msi, mode), compute_uv=False)
        rows += [(mode, i + 1, float(v)) for i, v in enumerate(sv)]
    _emit(csv_text(("mode", "index", "singular_value"), rows), args.output, "Inspect")
    return 0


def run_spectrum(args) -> int:
    overrides = _config_overrides(args)
    overrides["noise_sigma"] = args.sigma
    cfg = load_ltdl_config(args.config, overrides)
    msi = load_tensor(args.input)
    sigma = cfg.noise_sigma if cfg.noise_sigma is not None else estimate_noise_sigma(msi)
    _, lambda_r = cfg.effective_lambdas(sigma)
    grid = extract_blocks(msi, cfg.window_rows, cfg.window_cols, cfg.step_rows, cfg.step_cols)
    k = cfg.clusters_for(grid.size)
    labels = cluster_blocks(grid, k, cfg.seed, cfg.kmeans_max_iter)
    groups = form_groups(grid, labels, k)
    largest = max(range(len(groups)), key=lambda i: groups[i].n_members)
    group = groups[largest]
    ranks = estimate_ranks(group.x, sigma, cfg.energy_frac)
    print(f"[Spectrum] group of {group.n_members} blocks, ranks {ranks}, nu {sigma:.4g}, lambda_r {lambda_r:.4g}")

    hard = hooi(group.x, ranks, cfg.hooi_max_iter, cfg.hooi_tol).reconstruct()
    curves = {"noisy": group.x, "tucker": hard}
    if args.clean:
        clean = load_tensor(args.clean)
        if clean.shape != msi.shape:
            raise ValueError(f"clean cube has dims {clean.shape}, input has {msi.shape}")
        clean_grid = extract_blocks(clean, cfg.window_rows, cfg.window_cols, cfg.step_rows, cfg.step_cols)
        curves["clean"] = form_groups(clean_grid, labels, k)[largest].x
    if lambda_r > 0:
        curves["nearly_lowrank"] = nearly_lowrank_denoise(group.x, lambda_r, ranks,
                                                          hooi_max_iter=cfg.hooi_max_iter, hooi_tol=cfg.hooi_tol)
    spectra = {name: np.linalg.svd(unfold(t, 3), compute_uv=False) for name, t in curves.items()}
    n = min(len(s) for s in spectra.values())
    rows = [[i + 1] + [float(s[i]) for s in spectra.values()] for i in range(n)]
    _emit(csv_text(["index"] + list(spectra), rows), args.output, "Spectrum")
    return 0


def run_pgm(args) -> int:
    export_band_pgm(load_tensor(args.input), args.band, args.output)
    print(f"[PGM] Wrote band {args.band} to {args.output}")
    return 0


COMMANDS = {
    "denoise": run_denoise,
    "addnoise": run_addnoise,
    "metrics": run_metrics,
    "synth": run_synth,
    "inspect": run_inspect,
    "spectrum": run_spectrum,
    "pgm": run_pgm,
}


def main(argv=None) -> int:
    """Main entry point for the LTDL toolkit; returns the exit status."""
    args = parse_arguments(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except KeyboardInterrupt:
        print("\n[LTDL] Aborted.")
        return 130
    except (ValueError, OSError, RuntimeError) as e:
        print(f"[LTDL] Error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
