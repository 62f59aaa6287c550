"""Command-line entry point: ``lmnqs {train,sweep,oracle,report,validate}``.

Environment:
  LMNQS_OUTPUT_DIR  default output directory (``runs``)
  LMNQS_THREADS     BLAS / OpenMP thread limit
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import harness
from .harness import ExperimentConfig
from .hilbert import SymmetrySector
from .operators import build_j1j2, build_tfi, load_pauli_file, marshall_transform
from .optimizers import LmConfig, SrConfig
from .oracle import exact_ground_state
from .sampling import KERNELS, SamplerConfig


class CliError(Exception):
    pass


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            lo, hi = part.split(":")
            out.extend(range(int(lo), int(hi)))
        else:
            out.append(int(part))
    return out


def _add_model_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--model", choices=harness.MODELS, help="Hamiltonian family (default tfi)")
    g.add_argument("--N", type=int, dest="n_sites", help="number of sites")
    g.add_argument("--h", type=float, help="TFI transverse field")
    g.add_argument("--j2", type=float, help="J1-J2 next-nearest coupling (J1 = 1)")
    g.add_argument("--pauli-file", help="Pauli-sum Hamiltonian file")
    g.add_argument("--marshall", action=argparse.BooleanOptionalAction, default=None,
                   help="apply the sublattice sign rotation (default on for j1j2)")
    g.add_argument("--magnetization", type=int, help="restrict to fixed total magnetization")
    g.add_argument("--occupation", type=int, help="restrict to fixed number of -1 sites")


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON configuration file; flags override it")
    _add_model_args(p)
    g = p.add_argument_group("ansatz")
    g.add_argument("--alpha", type=int, help="hidden-unit density (default 2)")
    g.add_argument("--symmetric", action=argparse.BooleanOptionalAction, default=None,
                   help="translation-symmetric weights (default on)")
    g.add_argument("--init-scale", type=float, help="std of initial parameters (default 0.01)")
    g = p.add_argument_group("optimizer")
    g.add_argument("--opt", choices=harness.OPTIMIZERS, dest="optimizer", help="default lm")
    g.add_argument("--eta", type=float, help="SR learning rate (default 0.01)")
    g.add_argument("--a-diag", type=float, help="diagonal shift for S (default 0.01)")
    g.add_argument("--kappa0", type=float, help="LM base Tikhonov shift (default 0.5)")
    g.add_argument("--epochs", type=int, dest="max_epochs",
                   help="max epochs (default 150 for lm, 750 for sr)")
    g.add_argument("--b", type=float, help="convergence threshold on eps_rel (default 2e-3)")
    g.add_argument("--no-early-stop", action="store_true", help="train for all epochs")
    g.add_argument("--e0", type=float, dest="reference_energy",
                   help="reference ground energy (default: exact diagonalization)")
    g = p.add_argument_group("sampling")
    g.add_argument("--sampler", choices=KERNELS, help="Metropolis kernel")
    g.add_argument("--samples", type=int, help="samples per epoch (default 1000)")
    g.add_argument("--chains", type=int, help="independent chains (default 4)")
    g.add_argument("--burn-in", type=int, help="burn-in sweeps per epoch (default 100)")
    g.add_argument("--downsample", type=int, help="proposals between samples (default N)")
    g.add_argument("--exact", action="store_true", help="use exact Born weights over the full basis")
    g.add_argument("--sampling-delay", type=float, help="extra seconds of sampling per epoch")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--out", help="output directory (default $LMNQS_OUTPUT_DIR or runs)")
    p.add_argument("--threads", type=int, help="thread limit for dense algebra")


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    base = harness.load_config(args.config).to_dict() if getattr(args, "config", None) else {}
    for key in ("model", "n_sites", "h", "j2", "pauli_file", "marshall", "alpha", "symmetric",
                "init_scale", "optimizer", "max_epochs", "b", "reference_energy",
                "sampling_delay"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    if base.get("model") is None:
        base["model"] = ("pauli" if base.get("pauli_file") else
                         "j1j2" if base.get("j2") is not None else "tfi")
    if base["model"] == "pauli" and base.get("n_sites") is None and base.get("pauli_file"):
        base["n_sites"] = load_pauli_file(base["pauli_file"]).n_sites
    if getattr(args, "no_early_stop", False):
        base["early_stop"] = False
    if getattr(args, "exact", False):
        base["exact_sampling"] = True
    if args.magnetization is not None and args.occupation is not None:
        raise CliError("--magnetization and --occupation are mutually exclusive")
    if args.magnetization is not None:
        base["sector"] = {"kind": "magnetization", "value": args.magnetization}
    if args.occupation is not None:
        base["sector"] = {"kind": "occupation", "value": args.occupation}
    if getattr(args, "seed", None) is not None:
        base["seeds"] = [args.seed]

    cfg = ExperimentConfig.from_dict(base)
    smp_over = {k: v for k, v in {
        "kernel": getattr(args, "sampler", None), "n_samples": getattr(args, "samples", None),
        "n_chains": getattr(args, "chains", None), "burn_in_sweeps": getattr(args, "burn_in", None),
        "downsample": getattr(args, "downsample", None)}.items() if v is not None}
    if smp_over:
        smp = cfg.sampler if cfg.sampler is not None else dataclasses.replace(
            cfg.sampler_config(), init_sector=None)
        cfg.sampler = dataclasses.replace(smp, **smp_over)
    if getattr(args, "eta", None) is not None:
        cfg.sr = dataclasses.replace(cfg.sr, eta=args.eta)
    if getattr(args, "a_diag", None) is not None:
        cfg.sr = dataclasses.replace(cfg.sr, a_diag=args.a_diag)
        cfg.lm = dataclasses.replace(cfg.lm, a_diag=args.a_diag)
    if getattr(args, "kappa0", None) is not None:
        cfg.lm = dataclasses.replace(cfg.lm, kappa0=args.kappa0)
    cfg.validate()
    return cfg


def _out_dir(args) -> Path:
    return Path(args.out) if getattr(args, "out", None) else harness.output_dir()


def _print_row(row: dict) -> None:
    print(f"epoch {row['epoch']:4d}  E {row['energy_re']:.8f}  eps {row['eps_rel']:.3e}  "
          f"t_s {row['t_s_seconds']:.3f}s  t_u {row['t_u_seconds']:.3f}s", flush=True)


def cmd_train(args) -> int:
    cfg = config_from_args(args)
    rec = harness.train(cfg, progress=None if args.quiet else _print_row)
    csv_path, json_path = harness.write_run(rec, _out_dir(args))
    print(json.dumps({"csv": str(csv_path), "summary": str(json_path), "n_conv": rec.n_conv,
                      "converged": rec.converged, "T_u": rec.T_u, "T": rec.T,
                      "failed": rec.failed}))
    return 1 if rec.failed else 0


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    grid = {}
    if args.grid_N:
        grid["n_sites"] = _ints(args.grid_N)
    if args.grid_h:
        grid["h"] = _floats(args.grid_h)
    if args.grid_j2:
        grid["j2"] = _floats(args.grid_j2)
    if args.grid_opt:
        grid["optimizer"] = [o.strip() for o in args.grid_opt.split(",")]
    seeds = _ints(args.seeds) if args.seeds else list(cfg.seeds)
    out = _out_dir(args)

    def done(rec):
        print(f"{harness.run_name(rec)}: n_conv={rec.n_conv} T={rec.T:.2f}s"
              f"{' FAILED' if rec.failed else ''}", flush=True)

    harness.sweep(cfg, grid, seeds, out, progress=done)
    return 0


def _oracle_hamiltonian(args):
    model = args.model or ("pauli" if args.pauli_file else "j1j2" if args.j2 is not None else "tfi")
    if model == "tfi":
        ham, param = build_tfi(args.n_sites, 1.0 if args.h is None else args.h), args.h
    elif model == "j1j2":
        ham, param = build_j1j2(args.n_sites, 0.0 if args.j2 is None else args.j2), args.j2
    else:
        if not args.pauli_file:
            raise CliError("pauli model needs --pauli-file")
        ham, param = load_pauli_file(args.pauli_file), None
    if args.marshall:
        ham = marshall_transform(ham)
    return model, ham, param


def cmd_oracle(args) -> int:
    if args.n_sites is None and not args.pauli_file:
        raise CliError("--N is required")
    model, ham, param = _oracle_hamiltonian(args)
    sector = None
    if args.magnetization is not None:
        sector = SymmetrySector.magnetization(args.magnetization)
    elif args.occupation is not None:
        sector = SymmetrySector.occupation(args.occupation)
    elif model == "j1j2":
        sector = SymmetrySector.magnetization(ham.n_sites % 2)
    sol = exact_ground_state(ham, sector or SymmetrySector.unrestricted(), with_vector=False)
    line = {"model": model, "param": param, "N": ham.n_sites, "E0": sol.E0,
            "degeneracy": sol.degeneracy,
            "sector": None if sector is None else {"kind": sector.kind, "value": sector.value}}
    text = json.dumps(line)
    if args.fixture:
        with open(args.fixture, "a") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def _fmt_cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def cmd_report(args) -> int:
    records = harness.load_records(args.input)
    if not records:
        raise CliError(f"no run summaries found in {args.input}")
    rep = harness.report(records, b=args.b, how=args.aggregate)
    cols = ["model", "N", "param", "optimizer", "runs", "converged", "c_r", "c_r_lower",
            "c_r_upper", "n_conv_mean", "n_conv_median", "t_u_per_epoch", "T_u_mean", "T_mean"]
    print("\t".join(cols))
    for row in rep["reliability"]:
        print("\t".join(_fmt_cell(row[c]) for c in cols))
    print()
    pcols = ["model", "N", "param", "dT_u", "dT", "t_s_trans", "complete"]
    print("\t".join(pcols))
    for row in rep["phase_diagram"]:
        print("\t".join(_fmt_cell(row[c]) for c in pcols))
    if args.json:
        Path(args.json).write_text(json.dumps(rep, indent=2))
    if args.phase_csv:
        import csv
        with open(args.phase_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "param", "dT_u", "dT", "complete"])
            for row in rep["phase_diagram"]:
                w.writerow([row["N"], row["param"], row["dT_u"], row["dT"], int(row["complete"])])
    return 0


def cmd_validate(args) -> int:
    from .validation import run_all

    results = run_all()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lmnqs", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run, write CSV + summary JSON")
    _add_train_args(p)
    p.add_argument("--quiet", action="store_true", help="no per-epoch output")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train over a grid of parameters and seeds")
    _add_train_args(p)
    p.add_argument("--seeds", help="comma list or range lo:hi, e.g. 0:10")
    p.add_argument("--grid-N", help="comma list of system sizes")
    p.add_argument("--grid-h", help="comma list of transverse fields")
    p.add_argument("--grid-j2", help="comma list of j2 values")
    p.add_argument("--grid-opt", help="comma list of optimizers, e.g. sr,lm")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="exact ground energy by diagonalization")
    _add_model_args(p)
    p.add_argument("--fixture", help="append the result line to this file")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="reliability and phase-diagram tables from run files")
    p.add_argument("--in", dest="input", default=None, help="directory of run files")
    p.add_argument("--b", type=float, default=2e-3, help="convergence threshold")
    p.add_argument("--aggregate", choices=["mean", "median"], default="mean",
                   help="how n_conv is averaged for transition times")
    p.add_argument("--json", help="write the report as JSON")
    p.add_argument("--phase-csv", help="write the phase diagram CSV")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate", help="exact-mode property checks")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "command", None) == "report" and args.input is None:
        args.input = str(harness.output_dir())
    limiter = harness.apply_thread_limit(getattr(args, "threads", None))
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
