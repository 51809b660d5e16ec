"""Artifact formats: problem/fee JSON, density and site CSV, trace CSV.

JSON artifacts are written with sorted keys and no timing fields, so a rerun
with the same config and seed produces byte-identical output.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .fees import SplittingFee, fee_from_spec
from .geometry import DensityField, DomainSpec, SiteSet, TransportProblem
from .regularize import RegularizationReport
from .solver import TRACE_COLUMNS, SolveTrace


def read_json(path, field: str = "path") -> dict | list:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}", field=field)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}", field=field) from exc


def write_json(payload, path) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def load_density_csv(path) -> np.ndarray:
    """Grid values: header row with the shape (nx or nx,ny), then the values
    row by row. 2-D grids are stored row-major, one grid row per line."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"density file not found: {path}", field="density")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            shape = tuple(int(tok) for tok in next(reader))
        except (StopIteration, ValueError) as exc:
            raise ConfigError(f"bad density header in {path}", field="density") from exc
        rows = [[float(tok) for tok in row] for row in reader if row]
    values = np.array(rows, dtype=float)
    try:
        return values.reshape(shape)
    except ValueError as exc:
        raise ConfigError(
            f"density data in {path} does not fill shape {shape}", field="density"
        ) from exc


def write_density_csv(values, path) -> None:
    values = np.asarray(values, dtype=float)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(values.shape)
        writer.writerows(np.atleast_2d(values).tolist())


def load_sites_csv(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"sites file not found: {path}", field="sites")
    with path.open(newline="") as fh:
        rows = [[float(tok) for tok in row] for row in csv.reader(fh) if row]
    if not rows:
        raise ConfigError(f"no sites in {path}", field="sites")
    return np.array(rows, dtype=float)


def write_sites_csv(points, path) -> None:
    with Path(path).open("w", newline="") as fh:
        csv.writer(fh).writerows(np.asarray(points, dtype=float).tolist())


def load_problem(path) -> TransportProblem:
    """Build a transport problem from its JSON description.

    Schema: ``domain`` (dim, bounds, resolution), ``density`` (kind uniform
    or tabulated, values inline or in a csv file, optional holder_alpha),
    and ``sites`` (inline list of points or a csv reference). File
    references resolve relative to the problem file's directory.
    """
    path = Path(path)
    data = read_json(path, field="problem")
    if not isinstance(data, dict):
        raise ConfigError("problem file must hold a JSON object", field="problem")
    for key in ("domain", "density", "sites"):
        if key not in data:
            raise ConfigError(f"problem file missing {key!r}", field=key)
    dom_raw = data["domain"]
    try:
        dom = DomainSpec(
            dim=int(dom_raw["dim"]),
            bounds=tuple(tuple(map(float, b)) for b in dom_raw["bounds"]),
            resolution=int(dom_raw.get("resolution", 256)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad domain block: {exc!r}", field="domain") from exc

    den_raw = data["density"]
    kind = den_raw.get("kind", "uniform")
    alpha = float(den_raw.get("holder_alpha", 1.0))
    if kind == "uniform":
        density = DensityField.uniform(dom, holder_alpha=alpha)
    elif kind == "tabulated":
        if "csv" in den_raw:
            values = load_density_csv(path.parent / den_raw["csv"])
        elif "values" in den_raw:
            values = np.asarray(den_raw["values"], dtype=float)
        else:
            raise ConfigError("tabulated density needs values or csv", field="density")
        density = DensityField.tabulated(dom, values, holder_alpha=alpha)
    else:
        raise ConfigError(f"unknown density kind {kind!r}", field="density")

    sites_raw = data["sites"]
    if isinstance(sites_raw, dict):
        if "csv" not in sites_raw:
            raise ConfigError("sites block needs inline points or csv", field="sites")
        points = load_sites_csv(path.parent / sites_raw["csv"])
    else:
        points = np.asarray(sites_raw, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
    return TransportProblem(dom, density, SiteSet(points))


def problem_payload(problem: TransportProblem) -> dict:
    """Inline JSON description accepted by load_problem."""
    dom = problem.domain
    payload = {
        "domain": {
            "dim": dom.dim,
            "bounds": [list(b) for b in dom.bounds],
            "resolution": dom.resolution,
        },
        "density": {"kind": problem.density.kind,
                    "holder_alpha": problem.density.holder_alpha},
        "sites": problem.sites.points.tolist(),
    }
    if problem.density.kind == "tabulated":
        payload["density"]["values"] = problem.density.values.tolist()
    return payload


def load_fee(spec: str, base_dir=None) -> SplittingFee:
    """Fee from an inline JSON string or from a path to a fee JSON file."""
    text = spec.strip()
    if text.startswith("[") or text.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid inline fee JSON: {exc}", field="fee") from exc
    else:
        fee_path = Path(base_dir) / spec if base_dir else Path(spec)
        data = read_json(fee_path, field="fee")
    if isinstance(data, dict):
        data = data.get("parts", data)
    if not isinstance(data, list):
        raise ConfigError("fee spec must be a list of part entries", field="fee")
    return fee_from_spec(data)


def write_trace_csv(trace: SolveTrace, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        writer.writerows(trace.rows())


def regularization_payload(report: RegularizationReport) -> dict:
    return {
        "eta": report.eta,
        "eps_for_solver": report.eps_for_solver,
        "strong_convexity": list(report.strong_convexity),
        "stage_domains": {
            str(stage): [list(dom) for dom in doms]
            for stage, doms in report.stage_domains.items()
        },
        "stage_tags": [list(tags) for tags in report.stage_tags],
        "notes": list(report.notes),
    }
