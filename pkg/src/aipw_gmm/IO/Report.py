import json
import logging
import os
import sys
from typing import Iterable, List, Optional, Union

import numpy as np

from ..Utils.Constants import ARTIFACT_VERSION, SIGNIFICANCE_STARS

logger = logging.getLogger(__name__)


def significance_stars(p_value: float) -> str:
    for threshold, stars in SIGNIFICANCE_STARS:
        if p_value < threshold:
            return stars
    return ""


def format_estimate_table(result, title: str = "") -> str:
    lines: List[str] = []
    if title:
        lines.append(title)
    lines.append(f"{'':<14}{'estimate':>12}{'std.err':>12}{'z':>9}{'p':>9}")
    for name, b, se, z, p in zip(result.names, result.beta_hat, result.std_errors, result.z_stats, result.p_values):
        lines.append(f"{name:<14}{b:>12.4f}{se:>12.4f}{z:>9.2f}{p:>9.3f} {significance_stars(p)}")
    lines.append(f"n used: {result.n_used}   converged: {result.converged}   estimator: {result.kind.value}")
    lines.append("* p<0.05, ** p<0.01, *** p<0.001 (normal approximation)")
    return "\n".join(lines)


def format_pattern_table(table) -> str:
    lines = ["pattern   count    share"]
    for name, count in table.counts.items():
        lines.append(f"{name:<8}{count:>7}{table.shares[name]:>9.3f}")
    lines.append(f"n = {table.n}{'   (monotone)' if table.monotone else ''}")
    return "\n".join(lines)


def format_dependence(report) -> str:
    lines = [f"{report.target} on {report.key} ({report.cov_type}, n = {report.n_used})"]
    for name, b, se, t in zip(report.names, report.coefficients, report.std_errors, report.t_stats):
        lines.append(f"  {name:<12}{b:>11.4f}{se:>11.4f}{t:>9.2f}")
    if report.dropped:
        lines.append(f"  dropped (collinear): {', '.join(report.dropped)}")
    return "\n".join(lines)


def format_sim_reports(reports: Iterable) -> str:
    """Mean estimate, mean bias and RMSE per estimator, one block per scenario."""
    lines: List[str] = []
    for report in reports:
        scenario = report.scenario
        header = f"gamma = {scenario.gamma:g}, n = {scenario.n}, R = {scenario.replications}"
        if scenario.misspec != "none":
            header += f", misspecified: {scenario.misspec}"
        lines.append(header)
        lines.append(f"{'':<8}{'alpha':>10}{'bias':>10}{'rmse':>10}{'beta':>10}{'bias':>10}{'rmse':>10}")
        for kind, s in report.summaries.items():
            lines.append(
                f"{kind.value:<8}{s.mean_estimate[0]:>10.4f}{s.mean_bias[0]:>10.4f}{s.rmse[0]:>10.4f}"
                f"{s.mean_estimate[1]:>10.4f}{s.mean_bias[1]:>10.4f}{s.rmse[1]:>10.4f}"
            )
        if report.failures:
            lines.append(f"failed replications: {report.failures}{' (flagged)' if report.flagged else ''}")
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def build_payload(command: str, config_echo: dict, results, seed: Optional[int] = None) -> dict:
    """Stable JSON layout: {meta, config_echo, results}."""
    return {
        "meta": {"artifact_version": ARTIFACT_VERSION, "command": command, "seed": seed},
        "config_echo": _jsonable(config_echo),
        "results": _jsonable(results),
    }


def write_json(payload: dict, destination: Union[str, os.PathLike, None]) -> None:
    """Writes to a file, or to stdout when destination is None or '-'."""
    text = json.dumps(payload, indent=2, allow_nan=False)
    if destination is None or os.fspath(destination) == "-":
        sys.stdout.write(text + "\n")
        return
    destination = os.fspath(destination)
    parent = os.path.dirname(destination)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(destination, "w", encoding="utf-8") as f:
        f.write(text + "\n")
    logger.info(f"Wrote results to '{destination}'.")
