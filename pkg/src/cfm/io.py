"""File formats: CFM-IMG images, CFM-CUBE cubes, measurement CSVs, PGM export."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import DataError, SizeError, ValidationError
from .forward import MeasurementSet
from .hadamard import is_power_of_two
from .hyperspectral import HyperCube, linear_axis
from .sampling import PatternSelection

IMG_MAGIC = "cfm-img"
CUBE_MAGIC = "cfm-cube"
DTYPE = "f64le"


def _write_with_header(path, header, array):
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def _read_with_header(path, magic):
    with open(path, "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(line.decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise DataError(f"{path}: missing JSON header line") from None
    if header.get("magic") != magic:
        raise DataError(f"{path}: expected magic {magic!r}, got {header.get('magic')!r}")
    if header.get("dtype") != DTYPE:
        raise DataError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    return header, np.frombuffer(payload, dtype="<f8")


def write_image(path, img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise SizeError(f"image must be square, got {img.shape}")
    _write_with_header(path, {"magic": IMG_MAGIC, "side": img.shape[0], "dtype": DTYPE}, img)


def read_image(path):
    header, data = _read_with_header(path, IMG_MAGIC)
    side = int(header["side"])
    if data.size != side * side:
        raise DataError(f"{path}: expected {side * side} values, found {data.size}")
    return data.reshape(side, side).copy()


def write_cube(path, cube: HyperCube):
    axis = cube.lambda_axis
    step = float(axis[1] - axis[0]) if cube.n_lambda > 1 else 1.0
    if cube.n_lambda > 1 and not np.allclose(np.diff(axis), step):
        raise DataError("CFM-CUBE stores a uniform wavelength axis only")
    header = {"magic": CUBE_MAGIC, "side": cube.side, "n_lambda": cube.n_lambda,
              "lambda_start_nm": float(axis[0]), "lambda_step_nm": step, "dtype": DTYPE}
    _write_with_header(path, header, cube.values)


def read_cube(path) -> HyperCube:
    header, data = _read_with_header(path, CUBE_MAGIC)
    side, n = int(header["side"]), int(header["n_lambda"])
    if data.size != side * side * n:
        raise DataError(f"{path}: expected {side * side * n} values, found {data.size}")
    axis = linear_axis(float(header["lambda_start_nm"]), float(header["lambda_step_nm"]), n)
    return HyperCube(data.reshape(side, side, n).copy(), axis)


def _fmt(v) -> str:
    # repr of a Python float is locale-independent and round-trips exactly
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 2 ** 53 else repr(v)


def write_csv(path, header, rows):
    """Comma-separated table, period decimals, ``\\n`` line ends."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def sidecar_path(csv_path) -> Path:
    return Path(str(csv_path) + ".json")


def write_measurements(path, meas: MeasurementSet, **meta):
    """CSV ``pattern_index,value`` (or ``value_0..`` per channel) plus a JSON sidecar."""
    values = meas.values
    if values.ndim == 1:
        header = ["pattern_index", "value"]
        rows = ([k, float(v)] for k, v in zip(meas.selection.indices, values))
    else:
        header = ["pattern_index"] + [f"value_{i}" for i in range(values.shape[1])]
        rows = ([k, *map(float, v)] for k, v in zip(meas.selection.indices, values))
    write_csv(path, header, rows)
    doc = {"illumination_scale": meas.illumination_scale, "noise_model": meas.noise_model,
           "m": meas.selection.m, "sha256": meas.selection.digest}
    doc.update(meta)
    sidecar_path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_measurements(path, selection: PatternSelection) -> tuple[MeasurementSet, dict]:
    """Load measurements and check them against ``selection``."""
    header, rows = read_csv(path)
    if not header or header[0] != "pattern_index" or len(header) < 2:
        raise DataError(f"{path}: header must start with pattern_index")
    try:
        meta = json.loads(sidecar_path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"{path}: missing sidecar {sidecar_path(path)}") from None
    if meta.get("sha256") != selection.digest:
        raise ValidationError(f"{path}: measurements were taken with a different selection")
    try:
        idx = [int(r[0]) for r in rows]
        vals = np.array([[float(v) for v in r[1:]] for r in rows])
    except (ValueError, IndexError):
        raise DataError(f"{path}: malformed row") from None
    if tuple(idx) != tuple(selection.indices):
        raise ValidationError(f"{path}: pattern indices disagree with the selection")
    if header[1] == "value":
        vals = vals[:, 0]
    meas = MeasurementSet(selection, vals, float(meta.get("illumination_scale", 1.0)),
                          meta.get("noise_model", "none"))
    return meas, meta


def write_selection(path, sel: PatternSelection, **extra):
    Path(path).write_text(sel.to_json(**extra))


def read_selection(path) -> tuple[PatternSelection, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError:
        raise DataError(f"{path}: not JSON") from None
    return PatternSelection.from_dict(doc), doc


def write_pgm(path, img):
    """16-bit binary PGM, negative values clipped and the maximum mapped to 65535."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, None)
    peak = img.max()
    scaled = np.zeros(img.shape) if peak == 0 else img / peak * 65535.0
    data = np.round(scaled).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def side_of(n_total) -> int:
    side = int(round(np.sqrt(n_total)))
    if side * side != n_total or not is_power_of_two(side):
        raise SizeError(f"N={n_total} is not a power-of-two square")
    return side
