"""Machine-readable run records: one JSON object per line.

Every record carries ``record`` (its kind) and ``schema`` (format version);
the remaining keys depend on the kind, see ``REQUIRED``.
"""
from __future__ import annotations

import json
from fractions import Fraction

import numpy as np

SCHEMA_VERSION = 1

REQUIRED = {
    "gauge": ("path", "dims", "kind", "precision", "checksum", "bytes"),
    "solve": ("dims", "converged", "iterations", "true_residual", "residual_history",
              "flops", "elapsed_s", "gflops", "model_efficiency", "ranks"),
    "plan": ("global_dims", "domain_dims", "n_ranks", "average_load", "cost_index"),
    "compare": ("rank_ratio", "cost_reduction"),
    "schedule": ("variant", "split_axes", "groups", "sends", "violations"),
    "timeline": ("iterations", "idle", "steady_idle", "violations"),
    "sweep": ("bandwidth", "steady_idle"),
    "perfmodel": ("peak_dp_gflops", "fma_limit", "core_limit_gflops", "working_set_kb"),
    "oracle": ("check", "value", "tol", "passed"),
    "error": ("message", "exit_code"),
}


class RecordError(ValueError):
    pass


def _default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating, Fraction)):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def make(rec_kind: str, /, **fields) -> dict:
    if rec_kind not in REQUIRED:
        raise RecordError(f"unknown record kind {rec_kind!r}")
    return {"record": rec_kind, "schema": SCHEMA_VERSION, **fields}


def dumps(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, default=_default, allow_nan=True)


def validate(rec: dict) -> dict:
    kind = rec.get("record")
    if kind not in REQUIRED:
        raise RecordError(f"unknown record kind {kind!r}")
    if rec.get("schema") != SCHEMA_VERSION:
        raise RecordError(f"unsupported schema {rec.get('schema')!r}")
    missing = [k for k in REQUIRED[kind] if k not in rec]
    if missing:
        raise RecordError(f"{kind} record lacks {', '.join(missing)}")
    return rec


def parse(line: str) -> dict:
    return validate(json.loads(line))
