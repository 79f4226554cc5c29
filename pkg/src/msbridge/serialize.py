"""CSV and JSON artifact formats.

All floating-point text output uses 17 significant digits so every artifact
round-trips exactly; rows follow grid order, making repeated runs
byte-identical.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .measures import DiscreteMeasure, Grid, JointMeasure

FLOAT_FMT = "%.17g"


def _fmt(x: float) -> str:
    return FLOAT_FMT % float(x)


def write_measure_csv(path, m: DiscreteMeasure) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point", "weight"])
        for x, w in zip(m.points, m.weights):
            writer.writerow([_fmt(x), _fmt(w)])


def read_measure_csv(path) -> DiscreteMeasure:
    points, weights = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != {"point", "weight"}:
            raise ValidationError(f"{path}: expected columns point,weight")
        for row in reader:
            points.append(float(row["point"]))
            weights.append(float(row["weight"]))
    if not points:
        raise ValidationError(f"{path}: empty measure file")
    return DiscreteMeasure(Grid(np.array(points)), np.array(weights))


def write_joint_csv(path, j: JointMeasure) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "weight"])
        for i, x in enumerate(j.xgrid.points):
            for k, y in enumerate(j.ygrid.points):
                writer.writerow([_fmt(x), _fmt(y), _fmt(j.w[i, k])])


def read_joint_csv(path) -> JointMeasure:
    cells = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != {"x", "y", "weight"}:
            raise ValidationError(f"{path}: expected columns x,y,weight")
        for row in reader:
            cells[(float(row["x"]), float(row["y"]))] = float(row["weight"])
    if not cells:
        raise ValidationError(f"{path}: empty joint file")
    xs = np.array(sorted({k[0] for k in cells}))
    ys = np.array(sorted({k[1] for k in cells}))
    w = np.zeros((xs.size, ys.size))
    for (x, y), val in cells.items():
        w[int(np.searchsorted(xs, x)), int(np.searchsorted(ys, y))] = val
    return JointMeasure(Grid(xs), Grid(ys), w)


def write_vector_csv(path, header: tuple[str, str], points, values) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for x, v in zip(points, values):
            writer.writerow([_fmt(x), _fmt(v)])


def read_vector_csv(path, header: tuple[str, str]):
    points, values = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != set(header):
            raise ValidationError(f"{path}: expected columns {','.join(header)}")
        for row in reader:
            points.append(float(row[header[0]]))
            values.append(float(row[header[1]]))
    return np.array(points), np.array(values)


def write_table_csv(path, header: list[str], rows: list[list[float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    return obj


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def ensure_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out
