import argparse
import logging
import sys
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import Internal
from .Core.Sieve import SieveSpec
from .IO.Report import (
    build_payload, format_dependence, format_estimate_table, format_pattern_table, format_sim_reports, write_json,
)
from .Simulation.DGP import PRESETS
from .Utils.Config import RoleConfig, RunConfig, build_model, load_config_file, merge_settings
from .Utils.Constants import ARTIFACT_VERSION
from .Utils.Errors import AipwGmmError, ConfigurationError, PatternSupportError
from .Utils.Shared import context

logger = logging.getLogger(__name__)

ROLE_KEYS = ("outcome", "treatment", "instruments", "covariates", "missing_tokens", "treatment_type",
             "treatment_values", "add_intercept", "covariates_as_instruments")
SIEVE_KEYS = ("basis", "degree", "knots", "n_knots", "include_interactions")
RUN_KEYS = ("data", "assumption", "estimator", "pattern_mode", "cv_folds", "weight_mode", "max_iterations",
            "tolerance", "ey_source", "clamp_lo", "clamp_hi", "seed", "threads", "robust_se")
COMMON_KEYS = ("json", "log_level", "quiet")
SIM_KEYS = {"n": "n", "reps": "replications", "gamma": "gamma", "misspec": "misspec", "seed": "seed",
            "rho_latents": "rho_latents", "rho_ry_eps": "rho_ry_eps", "alpha_true": "alpha_true",
            "beta_true": "beta_true"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        logger.error(f"{self.prog}: error: {message}")
        raise SystemExit(2)


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _names(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON or YAML file whose keys mirror the long flag names.")
    parser.add_argument("--json", nargs="?", const="-", default=None, metavar="PATH",
                        help="Write JSON results to PATH, or to standard output when PATH is omitted.")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads (default: AIPW_GMM_THREADS or 1).")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--quiet", action="store_const", const=True, default=None, help="Only log errors.")


def _add_roles(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", help="UTF-8 CSV file with a header row.")
    parser.add_argument("--outcome")
    parser.add_argument("--treatment")
    parser.add_argument("--instruments", type=_names, help="Comma-separated column names.")
    parser.add_argument("--covariates", type=_names, help="Comma-separated column names.")
    parser.add_argument("--missing-tokens", type=lambda s: s.split(","), dest="missing_tokens",
                        help='Comma-separated tokens read as missing (default: "",NA,.).')
    parser.add_argument("--treatment-type", choices=["binary", "discrete", "continuous"])
    parser.add_argument("--treatment-values", type=_floats, help="Support of a discrete treatment.")
    parser.add_argument("--add-intercept", action="store_const", const=True, default=None)
    parser.add_argument("--no-covariate-instruments", dest="covariates_as_instruments", action="store_const",
                        const=False, default=None, help="Do not use covariates as their own instruments.")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aipw-gmm", description="AIPW-GMM estimation with missing treatment and outcome.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {ARTIFACT_VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    est = subparsers.add_parser("estimate", help="Estimate the structural parameters from a CSV file.")
    _add_common(est)
    _add_roles(est)
    est.add_argument("--assumption", help="mar or smar (default smar).")
    est.add_argument("--estimator", help="cc, ipw or aipw (default aipw).")
    est.add_argument("--pattern-mode", choices=["strict", "general"])
    est.add_argument("--sieve", dest="basis", choices=["power", "bspline", "cv"])
    est.add_argument("--degree", type=int)
    est.add_argument("--knots", type=_floats, help="Interior knots on the standardized [0, 1] scale.")
    est.add_argument("--n-knots", type=int)
    est.add_argument("--no-interactions", dest="include_interactions", action="store_const", const=False,
                     default=None)
    est.add_argument("--cv-folds", type=int)
    est.add_argument("--weight-mode", choices=["identity", "zz_inverse", "optimal_two_step"])
    est.add_argument("--max-iterations", type=int)
    est.add_argument("--tolerance", type=float)
    est.add_argument("--ey-source", choices=["incomplete_d", "complete_case", "observed_y"])
    est.add_argument("--clamp-lo", type=float)
    est.add_argument("--clamp-hi", type=float)
    est.set_defaults(handler=cmd_estimate)

    sim = subparsers.add_parser("simulate", help="Run the Monte Carlo study.")
    _add_common(sim)
    sim.add_argument("--preset", choices=sorted(PRESETS))
    sim.add_argument("--n", type=int)
    sim.add_argument("--reps", type=int)
    sim.add_argument("--gamma", type=float)
    sim.add_argument("--misspec", help="none, wrong_y_imputations, wrong_d_imputation or wrong_py_omits_D.")
    sim.add_argument("--rho-latents", type=float)
    sim.add_argument("--rho-ry-eps", type=float)
    sim.add_argument("--alpha-true", type=float)
    sim.add_argument("--beta-true", type=float)
    sim.set_defaults(handler=cmd_simulate)

    diag = subparsers.add_parser("diagnose", help="Tabulate missingness and test MAR against SMAR.")
    _add_common(diag)
    _add_roles(diag)
    diag.add_argument("--classical-se", dest="robust_se", action="store_const", const=False, default=None,
                      help="Classical instead of HC1 standard errors.")
    diag.set_defaults(handler=cmd_diagnose)
    return parser


def _settings(args: argparse.Namespace) -> Dict[str, object]:
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "handler", "config")}
    file_values = load_config_file(args.config) if args.config else {}
    file_values = {k.replace("-", "_"): v for k, v in file_values.items()}
    known = set(flags) | {"sieve"}
    unknown = sorted(set(file_values) - known)
    if unknown:
        raise ConfigurationError(f"Unknown keys in config file '{args.config}': {unknown}.")
    if "sieve" in file_values and "basis" not in file_values:
        file_values["basis"] = file_values.pop("sieve")
    return merge_settings(file_values, flags)


def _apply_runtime(settings: Dict[str, object]) -> None:
    if settings.get("quiet"):
        logging.getLogger().setLevel(logging.ERROR)
    elif settings.get("log_level"):
        logging.getLogger().setLevel(str(settings["log_level"]))
    if settings.get("threads") is not None:
        context.threads = int(settings["threads"])


def _pick(settings: Dict[str, object], keys: Sequence[str]) -> Dict[str, object]:
    return {k: settings[k] for k in keys if settings.get(k) is not None}


def _roles(settings: Dict[str, object]) -> RoleConfig:
    missing = [k for k in ("outcome", "treatment", "instruments") if settings.get(k) is None]
    if missing:
        raise ConfigurationError(f"Missing column role(s): {', '.join('--' + m for m in missing)}.")
    if settings.get("data") is None:
        raise ConfigurationError("No data file given (--data).")
    return build_model(RoleConfig, _pick(settings, ROLE_KEYS), "column roles")


def _emit(command: str, settings: Dict[str, object], results, text: str, seed: Optional[int]) -> None:
    if settings.get("json") is not None:
        echo = {k: v for k, v in settings.items() if k not in ("json", "threads", "log_level", "quiet")}
        write_json(build_payload(command, echo, results, seed=seed), settings["json"])
        if settings["json"] == "-":
            return
    print(text)


def cmd_estimate(args: argparse.Namespace) -> int:
    settings = _settings(args)
    _apply_runtime(settings)
    roles = _roles(settings)
    sieve_values = _pick(settings, SIEVE_KEYS)
    basis = sieve_values.pop("basis", "power")
    run_values = _pick(settings, RUN_KEYS)
    run_values["roles"] = roles
    if basis == "cv":
        run_values["sieve"] = "cv"
    else:
        run_values["sieve"] = build_model(SieveSpec, {"basis": basis, **sieve_values}, "sieve specification")
    run = build_model(RunConfig, run_values, "run configuration")
    if run.clamp_bounds is not None:
        context.clamp_bounds = run.clamp_bounds

    dataset = Internal.load_csv(run.data, roles)
    try:
        outcome = Internal.estimate(
            dataset,
            assumption=run.assumption,
            estimator=run.estimator,
            sieve=run.sieve_choice,
            d_support=roles.d_support,
            pattern_mode=run.pattern_mode,
            weight_mode=run.weight_mode,
            ey_source=run.ey_source,
            cv_folds=run.cv_folds,
            seed=run.seed,
            max_iterations=run.max_iterations,
            tolerance=run.tolerance,
        )
    except PatternSupportError as e:
        if e.mode == "strict":
            raise PatternSupportError(e.missing_patterns, e.mode,
                                      f"{e} Re-run with --pattern-mode general.") from e
        raise

    sections = [
        format_pattern_table(outcome.patterns),
        format_estimate_table(outcome.result, title=f"{outcome.result.kind.value} under {outcome.assumption.value}"),
    ]
    if outcome.sieve_specs:
        sections.append("sieves: " + "; ".join(f"{k}: {v}" for k, v in outcome.sieve_specs.items()))
    sections.extend(f"note: {note}" for note in outcome.notes)
    sections.extend(f"advisory: {a}" for a in outcome.rate_advisories)
    _emit("estimate", settings, outcome.to_dict(), "\n\n".join(sections), run.seed)
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    settings = _settings(args)
    _apply_runtime(settings)
    values = {SIM_KEYS[k]: settings[k] for k in SIM_KEYS if settings.get(k) is not None}
    try:
        reports = Internal.simulate(settings.get("preset"), **values)
    except ValueError as e:
        if isinstance(e, AipwGmmError):
            raise
        raise ConfigurationError(f"Invalid scenario: {e}")
    results = [r.to_dict() for r in reports]
    _emit("simulate", settings, results, format_sim_reports(reports), reports[0].scenario.seed)
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    settings = _settings(args)
    _apply_runtime(settings)
    roles = _roles(settings)
    dataset = Internal.load_csv(settings["data"], roles)
    outcome = Internal.diagnose(dataset, robust=settings.get("robust_se", True) is not False)
    sections = [format_pattern_table(outcome.patterns)]
    for report in (outcome.ry_on_d, outcome.rd_on_y):
        if report is not None:
            sections.append(format_dependence(report))
    sections.append(f"recommendation: {outcome.recommendation}")
    sections.extend(f"note: {note}" for note in outcome.notes)
    _emit("diagnose", settings, outcome.to_dict(), "\n\n".join(sections), settings.get("seed"))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.handler(args)
    except ConfigurationError as e:
        logger.error(str(e))
        return 2
    except AipwGmmError as e:
        logger.error(str(e))
        return 1
    except np.linalg.LinAlgError as e:
        logger.error(f"Linear algebra failure during estimation: {e}")
        return 1
    finally:
        context.reset()


if __name__ == "__main__":
    sys.exit(main())
