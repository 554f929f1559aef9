"""File formats: coarsened-record CSV + JSON sidecar, run configs, nuisance
artifacts, and simulation report emission.

The CSV schema has one row per record: column ``c`` holds the coarsening
level (an integer 0..K or the literal string ``inf``), followed by
``x_1..x_p``, per-stage blocks ``z{j}_1..z{j}_q_j``, and ``y``.  Cells of
unobserved blocks are empty, and must be: a value present where the level's
pattern says absent (or vice versa) is a schema violation naming the row.
"""

from __future__ import annotations

import csv
import hashlib
import json
import pickle

import numpy as np

from .core import CoarsenedRecord, CoarseningLevel, PatternTable
from .errors import ConfigError, SchemaError

SCHEMA_VERSION = 1


# sidecar and pattern tables


def load_sidecar(path) -> dict:
    try:
        with open(path) as fh:
            side = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read sidecar {path}: {exc}")
    for key in ("D", "x_dim", "z_dims"):
        if key not in side:
            raise SchemaError(f"sidecar missing required key {key!r}")
    if len(side["z_dims"]) != side["D"]:
        raise SchemaError("sidecar z_dims length must equal D")
    return side


def pattern_table_from_sidecar(side: dict) -> PatternTable:
    D = int(side["D"])
    if "patterns" in side:
        pats = {int(k): tuple(bool(b) for b in mask) for k, mask in side["patterns"].items()}
        return PatternTable(D=D, patterns=pats)
    return PatternTable.monotone(D)


def _columns(side: dict) -> list:
    cols = ["c"]
    cols += [f"x_{i + 1}" for i in range(side["x_dim"])]
    for j, q in enumerate(side["z_dims"], start=1):
        cols += [f"z{j}_{i + 1}" for i in range(q)]
    cols.append("y")
    return cols


def read_records(csv_path, side: dict):
    """Parse and validate the record CSV against its sidecar declaration."""
    table = pattern_table_from_sidecar(side)
    expected = _columns(side)
    records = []
    try:
        fh = open(csv_path, newline="")
    except OSError as exc:
        raise SchemaError(f"cannot read {csv_path}: {exc}")
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != expected:
            raise SchemaError(
                f"column header mismatch: expected {expected}, found {reader.fieldnames}"
            )
        for i, row in enumerate(reader, start=1):
            records.append(_parse_row(row, side, table, i))
    return records, table


def _parse_row(row, side, table: PatternTable, rownum: int) -> CoarsenedRecord:
    raw_c = (row.get("c") or "").strip()
    if raw_c == "inf":
        level = CoarseningLevel.full()
    else:
        try:
            level = CoarseningLevel.finite(int(raw_c))
        except (TypeError, ValueError):
            raise SchemaError(f"row {rownum}: invalid coarsening level {raw_c!r}")
    if not table.covers(level):
        raise SchemaError(f"row {rownum}: level {raw_c} not in the declared pattern table")
    mask = table.mask(level)

    def cell(name):
        return (row.get(name) or "").strip()

    def floats(names, what):
        vals = []
        for name in names:
            v = cell(name)
            if v == "":
                raise SchemaError(f"row {rownum}: {what} column {name} is empty but required")
            try:
                vals.append(float(v))
            except ValueError:
                raise SchemaError(f"row {rownum}: non-numeric value {v!r} in {name}")
        return vals

    def assert_empty(names, what):
        for name in names:
            if cell(name) != "":
                raise SchemaError(
                    f"row {rownum}: {what} column {name} must be empty at level {raw_c}"
                )

    x = floats([f"x_{i + 1}" for i in range(side["x_dim"])], "baseline")
    blocks = []
    for j, q in enumerate(side["z_dims"], start=1):
        names = [f"z{j}_{i + 1}" for i in range(q)]
        if mask[j - 1]:
            blocks.append(floats(names, f"stage-{j}"))
        else:
            assert_empty(names, f"stage-{j}")
            blocks.append(None)
    if mask[-1]:
        y = floats(["y"], "outcome")[0]
    else:
        assert_empty(["y"], "outcome")
        y = None
    return CoarsenedRecord(level, x, tuple(blocks), y)


def write_records(csv_path, records, side: dict):
    cols = _columns(side)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for r in records:
            row = ["inf" if r.level.is_full else str(r.level.k)]
            row += [repr(float(v)) for v in r.x]
            for j, q in enumerate(side["z_dims"]):
                block = r.z_blocks[j] if j < len(r.z_blocks) else None
                if block is None:
                    row += [""] * q
                else:
                    row += [repr(float(v)) for v in block]
            row.append("" if r.y is None else repr(float(r.y)))
            writer.writerow(row)


def sidecar_for_records(records, patterns: dict | None = None) -> dict:
    """Infer a sidecar declaration from a homogeneous record list."""
    if not records:
        raise SchemaError("cannot infer a sidecar from an empty record list")
    D = max(len(r.z_blocks) for r in records)
    z_dims = [0] * D
    for r in records:
        for j, b in enumerate(r.z_blocks):
            if b is not None:
                z_dims[j] = max(z_dims[j], len(b))
    side = {
        "D": D,
        "K": max(patterns) if patterns else D,
        "x_dim": len(records[0].x),
        "z_dims": z_dims,
    }
    if patterns:
        side["patterns"] = {str(k): list(mask) for k, mask in patterns.items()}
    return side


# run configuration


def load_config(path, allowed_keys, required_keys=()) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    version = cfg.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
    allowed = set(allowed_keys) | {"schema_version"}
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    missing = sorted(set(required_keys) - set(cfg))
    if missing:
        raise ConfigError(f"missing required config keys: {missing}")
    alpha = cfg.get("alpha")
    if alpha is not None and not 0.0 < float(alpha) < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    return cfg


def config_fingerprint(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# nuisance artifacts


def save_artifact(path, nuisance_set, score_model, fit_config: dict):
    """Serialize a fitted nuisance set together with its provenance fingerprint."""
    payload = {
        "fingerprint": config_fingerprint(fit_config),
        "fit_config": fit_config,
        "grid": np.asarray(nuisance_set.grid, dtype=float).tolist(),
        "score_kind": getattr(score_model, "kind", None),
        "nuisance": nuisance_set,
        "score_model": score_model,
        "diagnostics": nuisance_set.diagnostics,
    }
    with open(path, "wb") as fh:
        pickle.dump(payload, fh)


def load_artifact(path) -> dict:
    try:
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
    except (OSError, pickle.UnpicklingError) as exc:
        raise SchemaError(f"cannot read artifact {path}: {exc}")
    for key in ("fingerprint", "grid", "nuisance", "score_model"):
        if key not in payload:
            raise SchemaError(f"artifact missing field {key!r}")
    return payload


# report emission


def write_report_json(path, report):
    doc = {
        "config": report.config,
        "fingerprint": report.fingerprint,
        "summary": report.summary,
        "failures": report.failures,
        "rows": report.rows,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(path, report):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replication", "method", "n", "coverage", "width", "inf_count"])
        for row in report.rows:
            if row.get("method") == "error":
                continue
            writer.writerow(
                [row["rep"], row["method"], row["n"], row["coverage"], row["width"], row["inf_count"]]
            )
