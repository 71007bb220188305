"""Operator-facing command line: simulate, fit, query.

The pipeline is file-based: ``fit`` runs the sampler once and persists
everything needed downstream (chain CSVs, metadata, diagnostics,
summary); ``predict``/``critical``/``population``/``dic`` read a fit
directory and never refit. Every output directory carries a
manifest.json with the tool version, seed, config hash and dataset
fingerprint; re-running with identical inputs reproduces byte-identical
numeric outputs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 convergence
failure (``fit`` in strict mode, and ``diagnose``).

Config files are flat ``key = value`` text; any key can be overridden by
the command-line flag of the same name.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, diagnostics, inference
from . import sampler as sampler_mod
from .errors import FitStateError, GrowthMcError
from .model import REFERENCE_ESTIMATES, THETA_NAMES, FixedEffects, PriorSpec
from .sampler import McmcConfig
from .sampler.io import load_draws, write_draws

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CONVERGENCE = 3

_MCMC_KEYS = (
    "n_chains",
    "iterations",
    "burn_in",
    "thin",
    "seed",
    "adapt_window",
    "target_accept",
)
_PRIOR_KEYS = tuple(f.name for f in PriorSpec.__dataclass_fields__.values())

_INT_KEYS = {"n_chains", "iterations", "burn_in", "thin", "seed", "adapt_window"}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: A003 - argparse API
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise _UsageError(message)


def _load_config_file(path: str) -> dict[str, str]:
    """Flat key=value config text; '#' starts a comment."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise GrowthMcError(f"cannot read config file {path}: {e}") from e
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise GrowthMcError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _resolve(args, keys, file_cfg: dict[str, str]) -> dict:
    """Merge precedence: CLI flag > config file > dataclass default."""
    out = {}
    for key in keys:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            out[key] = flag_value
        elif key in file_cfg:
            raw = file_cfg[key]
            out[key] = int(raw) if key in _INT_KEYS else float(raw)
    return out


def _parse_fixed(pairs: list[str] | None) -> dict[str, float]:
    fixed: dict[str, float] = {}
    for item in pairs or []:
        if "=" not in item:
            raise _UsageError(f"--fix expects name=value, got {item!r}")
        name, value = item.split("=", 1)
        name = name.strip()
        if name not in THETA_NAMES:
            raise _UsageError(f"--fix: unknown parameter {name!r}")
        try:
            fixed[name] = float(value)
        except ValueError:
            raise _UsageError(f"--fix: bad value in {item!r}") from None
    return fixed


def _parse_range(text: str, what: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise _UsageError(f"{what} expects lo:hi, got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise _UsageError(f"{what}: bad number in {text!r}") from None
    return lo, hi


def _parse_grid(text: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise _UsageError(f"--grid expects lo:hi:step, got {text!r}")
    try:
        lo, hi, step = (float(p) for p in parts)
    except ValueError:
        raise _UsageError(f"--grid: bad number in {text!r}") from None
    if step <= 0 or hi < lo:
        raise _UsageError("--grid needs step > 0 and hi >= lo")
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def _parse_obs_per_patient(text: str) -> int | tuple[int, int]:
    try:
        if ":" in text:
            lo, hi = text.split(":")
            return (int(lo), int(hi))
        return int(text)
    except ValueError:
        raise _UsageError(
            f"--obs-per-patient expects an integer or lo:hi, got {text!r}"
        ) from None


def _prepare_outdir(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists():
        if not force:
            raise GrowthMcError(
                f"output directory {out} exists; pass --force to overwrite"
            )
    else:
        out.mkdir(parents=True)
    return out


def _config_hash(settings: dict) -> str:
    canon = json.dumps(settings, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def _write_manifest(
    outdir: Path,
    command: str,
    settings: dict,
    seed: int | None,
    dataset_fingerprint: str | None,
) -> None:
    manifest = {
        "tool": "growthmc",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config_hash": _config_hash(settings),
        "dataset_fingerprint": dataset_fingerprint,
    }
    with open(outdir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", text)


def _load_fit(fitdir: str):
    try:
        return load_draws(fitdir)
    except FileNotFoundError as e:
        raise FitStateError(f"fit directory {fitdir}: {e}") from e


def _check_fingerprint(draws, dataset, fitdir: str) -> None:
    if dataset.fingerprint() != draws.dataset_fingerprint:
        raise FitStateError(
            f"dataset does not match the one fitted in {fitdir} "
            "(fingerprint mismatch); refusing to mix them"
        )


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_simulate(args) -> int:
    if args.n is None or args.n < 1:
        raise _UsageError("simulate needs --n >= 1")
    theta = REFERENCE_ESTIMATES
    if args.theta_file:
        raw = _load_config_file(args.theta_file)
        theta = FixedEffects.from_dict({k: float(v) for k, v in raw.items()})
    design = data.SimDesign(
        n_patients=args.n,
        women_fraction=args.women_fraction,
        age_mean=args.age_mean,
        age_sd=args.age_sd,
        pressure_range=_parse_range(args.pressure_range, "--pressure-range"),
        obs_per_patient=_parse_obs_per_patient(args.obs_per_patient),
    )
    dataset, truth = data.simulate_dataset(theta, design, seed=args.seed)
    outdir = _prepare_outdir(args.out, args.force)
    data.write_csv(dataset, outdir / f"{args.name}.csv")
    with open(outdir / f"{args.name}.truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    settings = {
        "n": args.n,
        "women_fraction": design.women_fraction,
        "age_mean": design.age_mean,
        "age_sd": design.age_sd,
        "pressure_range": list(design.pressure_range),
        "obs_per_patient": args.obs_per_patient,
        "theta": theta.to_dict(),
    }
    _write_manifest(outdir, "simulate", settings, args.seed, dataset.fingerprint())
    print(
        f"wrote {dataset.n_patients} patients / {dataset.n_observations} "
        f"observations to {outdir / (args.name + '.csv')}"
    )
    return EXIT_OK


def _cmd_fit(args) -> int:
    file_cfg = _load_config_file(args.config) if args.config else {}
    unknown = set(file_cfg) - set(_MCMC_KEYS) - set(_PRIOR_KEYS)
    if unknown:
        raise GrowthMcError(f"unknown config keys: {sorted(unknown)}")
    mcmc_kwargs = _resolve(args, _MCMC_KEYS, file_cfg)
    mcmc_kwargs["fixed"] = _parse_fixed(args.fix)
    config = McmcConfig(**mcmc_kwargs)
    prior = PriorSpec(**_resolve(args, _PRIOR_KEYS, file_cfg))

    dataset = data.load_csv(args.data)
    outdir = _prepare_outdir(args.out, args.force)
    draws = sampler_mod.run(dataset, prior, config, debug=args.debug)
    write_draws(draws, outdir, prior)

    report = diagnostics.check_convergence(
        draws,
        threshold_ess=args.ess_threshold,
        threshold_rhat=args.rhat_threshold,
    )
    with open(outdir / "diagnostics.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    table = inference.summarize(draws)
    (outdir / "summary.csv").write_text(table.to_csv(), encoding="utf-8")

    settings = {"config": config.to_dict(), "prior": prior.to_dict()}
    _write_manifest(outdir, "fit", settings, config.seed, dataset.fingerprint())

    print(table.format_table())
    print()
    print(report.format_table())
    if not report.passed:
        if args.no_strict:
            print("convergence check FAILED (ignored, --no-strict)", file=sys.stderr)
            return EXIT_OK
        print("convergence check FAILED", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    draws, _ = _load_fit(args.fit)
    report = diagnostics.check_convergence(
        draws,
        threshold_ess=args.ess_threshold,
        threshold_rhat=args.rhat_threshold,
    )
    print(report.format_table())
    return EXIT_OK if report.passed else EXIT_CONVERGENCE


def _cmd_summarize(args) -> int:
    draws, _ = _load_fit(args.fit)
    print(inference.summarize(draws).format_table())
    return EXIT_OK


def _cmd_predict(args) -> int:
    draws, _ = _load_fit(args.fit)
    if args.data:
        _check_fingerprint(draws, data.load_csv(args.data), args.fit)
    grid = _parse_grid(args.grid)
    rng = np.random.default_rng(args.seed)
    band = inference.predict_new(
        draws, args.gender, args.age, grid, rng, reps=args.reps
    )
    outdir = _prepare_outdir(args.out, args.force)
    (outdir / "predictive.csv").write_text(band.to_csv(), encoding="utf-8")
    settings = {
        "fit": str(args.fit),
        "gender": args.gender,
        "age": args.age,
        "grid": args.grid,
        "reps": args.reps,
    }
    _write_manifest(outdir, "predict", settings, args.seed, draws.dataset_fingerprint)
    print(f"wrote {grid.size} grid rows to {outdir / 'predictive.csv'}")
    return EXIT_OK


def _cmd_critical(args) -> int:
    draws, _ = _load_fit(args.fit)
    _check_fingerprint(draws, data.load_csv(args.data), args.fit)
    samples = inference.individual_critical_posterior(
        draws, args.patient, args.which
    )
    outdir = _prepare_outdir(args.out, args.force)
    name = f"critical_{args.which}_{_safe_name(args.patient)}.csv"
    lines = ["pressure_mmhg,volume_l"]
    lines.extend(f"{p:.8g},{v:.8g}" for p, v in samples.samples)
    (outdir / name).write_text("\n".join(lines) + "\n", encoding="utf-8")
    settings = {"fit": str(args.fit), "patient": args.patient, "which": args.which}
    _write_manifest(outdir, "critical", settings, None, draws.dataset_fingerprint)
    print(
        f"wrote {samples.samples.shape[0]} samples to {outdir / name} "
        f"({samples.n_invalid} invalid draws excluded)"
    )
    return EXIT_OK


def _cmd_population(args) -> int:
    draws, _ = _load_fit(args.fit)
    if args.data:
        _check_fingerprint(draws, data.load_csv(args.data), args.fit)
    rng = np.random.default_rng(args.seed)
    outcome = inference.population_outcome(
        draws, args.gender, args.age, args.functional, rng, reps=args.reps
    )
    outdir = _prepare_outdir(args.out, args.force)
    name = f"population_{args.functional}.csv"
    (outdir / name).write_text(outcome.to_csv(), encoding="utf-8")
    settings = {
        "fit": str(args.fit),
        "gender": args.gender,
        "age": args.age,
        "functional": args.functional,
        "reps": args.reps,
    }
    _write_manifest(outdir, "population", settings, args.seed, draws.dataset_fingerprint)
    print(f"wrote {outcome.samples.shape[0]} samples to {outdir / name}")
    return EXIT_OK


def _cmd_dic(args) -> int:
    dataset = data.load_csv(args.data)
    rows = []
    for fitdir in args.fits:
        draws, prior = _load_fit(fitdir)
        _check_fingerprint(draws, dataset, fitdir)
        result = inference.dic(draws, dataset, prior)
        rows.append((fitdir, result))
    rows.sort(key=lambda item: item[1].dic)
    header = f"{'fit':<32} {'dic':>12} {'dbar':>12} {'pd':>10}"
    lines = [header]
    for fitdir, r in rows:
        lines.append(f"{fitdir:<32} {r.dic:>12.2f} {r.dbar:>12.2f} {r.pd:>10.2f}")
    print("\n".join(lines))
    if args.out:
        outdir = _prepare_outdir(args.out, args.force)
        csv_lines = ["fit,dic,dbar,pd"]
        csv_lines.extend(
            f"{fitdir},{r.dic:.8g},{r.dbar:.8g},{r.pd:.8g}" for fitdir, r in rows
        )
        (outdir / "dic.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
        settings = {"fits": list(args.fits)}
        _write_manifest(outdir, "dic", settings, None, dataset.fingerprint())
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser construction


def _add_mcmc_flags(p: _Parser) -> None:
    p.add_argument("--chains", "--n-chains", dest="n_chains", type=int)
    p.add_argument("--iterations", "--iters", dest="iterations", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--adapt-window", dest="adapt_window", type=int)
    p.add_argument("--target-accept", dest="target_accept", type=float)


def _add_prior_flags(p: _Parser) -> None:
    for key in _PRIOR_KEYS:
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float)


def build_parser() -> _Parser:
    parser = _Parser(prog="growthmc", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"growthmc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic dataset + truth file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--name", default="dataset", help="base name for the CSV")
    p.add_argument("--n", type=int, help="number of patients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--women-fraction", dest="women_fraction", type=float, default=0.4)
    p.add_argument("--age-mean", dest="age_mean", type=float, default=64.65)
    p.add_argument("--age-sd", dest="age_sd", type=float, default=10.0)
    p.add_argument("--pressure-range", dest="pressure_range", default="8:15")
    p.add_argument(
        "--obs-per-patient",
        dest="obs_per_patient",
        default="20",
        help="fixed count or lo:hi range per patient",
    )
    p.add_argument("--theta-file", dest="theta_file", help="key=value file with "
                   "generating parameter values (defaults to built-in estimates)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("fit", help="run the MCMC fit and persist draws")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--out", required=True, help="fit output directory")
    p.add_argument("--config", help="flat key=value config file")
    _add_mcmc_flags(p)
    _add_prior_flags(p)
    p.add_argument("--fix", action="append", metavar="NAME=VALUE",
                   help="pin a parameter (repeatable); fits a nested model variant")
    p.add_argument("--ess-threshold", dest="ess_threshold", type=float,
                   default=diagnostics.DEFAULT_ESS_THRESHOLD)
    p.add_argument("--rhat-threshold", dest="rhat_threshold", type=float,
                   default=diagnostics.DEFAULT_RHAT_THRESHOLD)
    p.add_argument("--no-strict", dest="no_strict", action="store_true",
                   help="exit 0 even if the convergence check fails")
    p.add_argument("--debug", action="store_true",
                   help="run engine cache consistency checks")
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=_cmd_fit)

    p = sub.add_parser("diagnose", help="re-run convergence checks on a fit")
    p.add_argument("--fit", required=True)
    p.add_argument("--ess-threshold", dest="ess_threshold", type=float,
                   default=diagnostics.DEFAULT_ESS_THRESHOLD)
    p.add_argument("--rhat-threshold", dest="rhat_threshold", type=float,
                   default=diagnostics.DEFAULT_RHAT_THRESHOLD)
    p.set_defaults(handler=_cmd_diagnose)

    p = sub.add_parser("summarize", help="print posterior summaries of a fit")
    p.add_argument("--fit", required=True)
    p.set_defaults(handler=_cmd_summarize)

    p = sub.add_parser("predict", help="posterior predictive band for a new individual")
    p.add_argument("--fit", required=True)
    p.add_argument("--data", help="optional dataset CSV to cross-check the fit")
    p.add_argument("--gender", required=True, choices=["M", "W"])
    p.add_argument("--age", required=True, type=float)
    p.add_argument("--grid", default="0:16:0.5", help="pressure grid lo:hi:step (mmHg)")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=_cmd_predict)

    p = sub.add_parser("critical", help="per-patient critical point posterior")
    p.add_argument("--fit", required=True)
    p.add_argument("--data", required=True, help="dataset CSV the fit was run on")
    p.add_argument("--patient", required=True)
    p.add_argument("--which", required=True, choices=["IP", "ADP", "MAP", "MDP"])
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=_cmd_critical)

    p = sub.add_parser("population", help="population-level outcome samples")
    p.add_argument("--fit", required=True)
    p.add_argument("--data", help="optional dataset CSV to cross-check the fit")
    p.add_argument("--gender", required=True, choices=["M", "W"])
    p.add_argument("--age", required=True, type=float)
    p.add_argument("--functional", required=True,
                   choices=["asymptote", "IP", "ADP", "MAP", "MDP"])
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=_cmd_population)

    p = sub.add_parser("dic", help="DIC comparison across fit directories")
    p.add_argument("--data", required=True, help="dataset CSV shared by the fits")
    p.add_argument("fits", nargs="+", help="fit directories to compare")
    p.add_argument("--out", help="optional output directory for dic.csv")
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=_cmd_dic)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except _UsageError:
        return EXIT_USAGE
    except GrowthMcError as e:
        print(f"growthmc: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
