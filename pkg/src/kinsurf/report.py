"""JSON fit reports.

Parameters stay in the normalized frame and the transform is attached,
since the second-order family is not closed under translation.
"""
from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .cloud import NormalizationTransform
from .errors import ParseError
from .field import FieldParams, Order
from .fitting import FitReport

SCHEMA_FILE = "report.schema.json"


def _vec(x):
    return [float(v) for v in np.asarray(x, dtype=float).reshape(3)]


def report_to_dict(report: FitReport, bounds=None) -> dict:
    """Plain-data view of ``report``; ``bounds`` is the normalized data box."""
    p = report.params
    m = {"r": _vec(p.r), "c": _vec(p.c), "gamma": float(p.gamma)}
    if p.order is Order.SECOND:
        m["t"] = _vec(p.t)
    z = report.weights if report.weights is not None else np.ones(len(report.distances))
    out = {
        "order": int(p.order),
        "m": m,
        "eigenvalue": float(report.eigenvalue),
        "rmse": float(report.rmse),
        "z_summary": {"min": float(np.min(z)), "median": float(np.median(z)), "max": float(np.max(z))},
        "transform": report.transform.to_dict(),
        "iterations_run": int(report.iterations_run),
        "w_p": float(report.w_p),
        "n_points": int(len(report.distances)),
    }
    if report.nu is not None:
        out["nu"] = float(report.nu)
        out["sigma"] = float(report.sigma)
    if bounds is not None:
        out["bounds"] = {"lo": _vec(bounds[0]), "hi": _vec(bounds[1])}
    return out


def dumps(d: dict) -> str:
    """Canonical text form: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(d, indent=2, sort_keys=True) + "\n"


def params_from_dict(d: dict):
    """``(FieldParams, NormalizationTransform)`` from a report dictionary."""
    try:
        order = Order(int(d["order"]))
        m = d["m"]
        if order is Order.SECOND:
            params = FieldParams.second(m["t"], m["r"], m["c"], m["gamma"])
        else:
            params = FieldParams.first(m["r"], m["c"], m["gamma"])
        transform = NormalizationTransform.from_dict(d["transform"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed report: {exc}") from None
    return params, transform


def load_report(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None


def schema() -> dict:
    return json.loads(resources.files("kinsurf").joinpath("schema", SCHEMA_FILE).read_text())
