"""CSV ingestion, config files, and reproducible seed derivation."""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from .errors import ConfigError, DataFileError


def ingest_csv(path) -> np.ndarray:
    """Read a rectangular numeric CSV as an (n, d) array.

    A single leading header row is detected (any non-numeric cell) and
    skipped.  Ragged rows, non-numeric cells elsewhere, NaN/Inf entries, and
    empty files are rejected with the offending file row and column named
    (1-based).
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            raw = [
                (i + 1, [cell.strip() for cell in row])
                for i, row in enumerate(reader)
                if row and any(c.strip() for c in row)
            ]
    except OSError as exc:
        raise DataFileError(f"cannot read {path}: {exc}") from exc
    if not raw:
        raise DataFileError(f"{path}: empty file")

    def parse(lineno, cells):
        out = []
        for j, cell in enumerate(cells):
            try:
                value = float(cell)
            except ValueError:
                raise DataFileError(f"{path}: non-numeric cell at row {lineno}, column {j + 1}: {cell!r}")
            if not math.isfinite(value):
                raise DataFileError(f"{path}: non-finite value at row {lineno}, column {j + 1}: {cell!r}")
            out.append(value)
        return out

    start = 0
    first_line, first_cells = raw[0]
    first_parsed = None
    try:
        first_parsed = parse(first_line, first_cells)
    except DataFileError:
        if len(raw) == 1:
            raise DataFileError(f"{path}: no numeric data rows")
        start = 1  # header row

    width = len(raw[start][1])
    data = []
    for lineno, cells in raw[start:]:
        if len(cells) != width:
            raise DataFileError(f"{path}: ragged row {lineno}: expected {width} columns, got {len(cells)}")
        if lineno == raw[start][0] and first_parsed is not None:
            data.append(first_parsed)
        else:
            data.append(parse(lineno, cells))
    return np.asarray(data, dtype=float)


def read_config(path) -> dict:
    """Parse a flat ``key = value`` config file with dotted keys.

    Values are JSON where possible (numbers, lists, booleans), otherwise
    bare strings.  Lines starting with '#' are comments.
    """
    out = {}
    try:
        text = open(path).read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = _parse_value(value.strip())
    return out


def _parse_value(token: str):
    try:
        return json.loads(token)
    except json.JSONDecodeError:
        return token


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply repeated ``key=value`` strings on top of a config dict."""
    merged = dict(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        merged[key.strip()] = _parse_value(value.strip())
    return merged


def child_seed(master: int, *key: int) -> int:
    """Deterministic stream splitting: SeedSequence(master, spawn_key=key)."""
    ss = np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def child_rng(master: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key)))


def write_json(payload: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj)!r}")
