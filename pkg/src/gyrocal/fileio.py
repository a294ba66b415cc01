"""CSV and JSON interchange formats.

Gyro CSVs carry a `t,wx,wy,wz` header with seconds and rad/s in UTF-8,
dot-decimal text. Truth JSONs store the mount rotation row-major at full
double precision. All writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from typing import Optional

import numpy as np

from .errors import CsvParseError
from .preprocess import GyroStream
from .sim import ScenarioTruth

CSV_COLUMNS = ("t", "wx", "wy", "wz")


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_gyro_csv(path: str, gyro_id: int = 1,
                  nominal_rate: Optional[float] = None) -> GyroStream:
    """Parse a gyro CSV, naming the offending row and column on errors."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: empty file") from None
        header = tuple(h.strip() for h in header)
        if header != CSV_COLUMNS:
            raise CsvParseError(
                f"{path}: header must be {','.join(CSV_COLUMNS)}, got "
                f"{','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise CsvParseError(
                    f"{path}: row {lineno}: expected 4 columns, got {len(row)}")
            values = []
            for col, cell in zip(CSV_COLUMNS, row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise CsvParseError(
                        f"{path}: row {lineno}, column '{col}': could not "
                        f"parse {cell.strip()!r}") from None
            rows.append(values)
    if not rows:
        raise CsvParseError(f"{path}: no data rows")
    data = np.asarray(rows)
    t, w = data[:, 0], data[:, 1:]
    if nominal_rate is None:
        if t.size < 2:
            raise CsvParseError(f"{path}: cannot infer rate from one sample")
        nominal_rate = 1.0 / float(np.median(np.diff(t)))
    try:
        return GyroStream(gyro_id, t, w, nominal_rate)
    except ValueError as exc:
        raise CsvParseError(f"{path}: {exc}") from None


def write_gyro_csv(path: str, stream: GyroStream) -> None:
    lines = [",".join(CSV_COLUMNS)]
    for t, w in zip(stream.t, stream.w):
        lines.append(f"{t:.9f},{w[0]:.12g},{w[1]:.12g},{w[2]:.12g}")
    _atomic_write(path, "\n".join(lines) + "\n")


def write_json(path: str, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def truth_to_dict(truth: ScenarioTruth) -> dict:
    def sig17(a):
        return [float(f"{x:.17g}") for x in np.ravel(a)]

    return {
        "rotation_row_major": sig17(truth.C),
        "scale_factors_1": sig17(truth.s1),
        "scale_factors_2": sig17(truth.s2),
        "skew_1": sig17(truth.skew1),
        "skew_2": sig17(truth.skew2),
        "bias_1_rad_s": sig17(truth.b1),
        "bias_2_rad_s": sig17(truth.b2),
        "noise_sigma_rad_s": truth.sigma_n,
        "bias_walk_sigma_rad_s": truth.sigma_nu,
        "rate_hz": truth.rate_hz,
    }


def truth_from_dict(d: dict) -> ScenarioTruth:
    try:
        return ScenarioTruth(
            C=np.asarray(d["rotation_row_major"], float).reshape(3, 3),
            s1=np.asarray(d["scale_factors_1"], float),
            s2=np.asarray(d["scale_factors_2"], float),
            skew1=np.asarray(d["skew_1"], float),
            skew2=np.asarray(d["skew_2"], float),
            b1=np.asarray(d["bias_1_rad_s"], float),
            b2=np.asarray(d["bias_2_rad_s"], float),
            sigma_n=float(d["noise_sigma_rad_s"]),
            sigma_nu=float(d["bias_walk_sigma_rad_s"]),
            rate_hz=float(d["rate_hz"]),
        )
    except (KeyError, ValueError) as exc:
        raise CsvParseError(f"malformed truth JSON: {exc}") from None


def read_truth_json(path: str) -> ScenarioTruth:
    with open(path, encoding="utf-8") as fh:
        try:
            return truth_from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise CsvParseError(f"{path}: {exc}") from None
