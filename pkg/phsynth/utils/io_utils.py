"""
JSON and CSV file helpers for plants, controllers, reports and sweeps.

Matrices are stored as dense row-major nested lists. Complex blocks of
sampled plants are stored as {"re": [[...]], "im": [[...]]}.
"""

import csv
import json
import logging
from pathlib import Path

import numpy as np

from phsynth.decorators.guards import check_ph_argument
from phsynth.exceptions import SchemaError, StructuralError
from phsynth.services.lti_service import SampledPlant
from phsynth.services.ph_core import PHForm, PHPlant, StateSpace, ph_to_statespace

logger = logging.getLogger(__name__)

PH_PLANT_FORMAT = "ph-plant/v1"
PH_FORM_FORMAT = "ph-form/v1"
STATE_SPACE_FORMAT = "state-space/v1"
SAMPLED_PLANT_FORMAT = "sampled-plant/v1"

PH_FIELDS = ("j", "r", "q", "g", "f", "s", "n")
PLANT_FIELDS = ("b1", "c1", "d11", "d12", "d21")


def _to_builtin(value):
    """Plain Python values with non-finite floats mapped to None."""
    if isinstance(value, dict):
        return {key: _to_builtin(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_builtin(item) for item in value]
    if isinstance(value, np.ndarray):
        return _to_builtin(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else None
    return value


def dumps_json(data):
    """Strict JSON text: NaN and infinities are written as null."""
    return json.dumps(_to_builtin(data), indent=2, allow_nan=False)


def write_json(data, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_json(data))
    logger.info(f"Wrote {path}")


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path} is not valid JSON: {e}") from e


def _field(doc, name):
    if name not in doc:
        raise SchemaError("missing", field=name)
    return doc[name]


def _matrix(doc, name):
    try:
        arr = np.array(_field(doc, name), dtype=float)
    except (TypeError, ValueError) as e:
        raise SchemaError(f"not a numeric matrix ({e})", field=name) from e
    if arr.size == 0:
        return np.zeros((0, 0))
    if arr.ndim != 2:
        raise SchemaError(f"expected a 2-D array, got {arr.ndim}-D", field=name)
    return arr


def _complex_stack(doc, name):
    block = _field(doc, name)
    if not isinstance(block, dict) or "re" not in block or "im" not in block:
        raise SchemaError("expected an object with 're' and 'im'", field=name)
    try:
        re = np.array(block["re"], dtype=float)
        im = np.array(block["im"], dtype=float)
    except (TypeError, ValueError) as e:
        raise SchemaError(f"not numeric ({e})", field=name) from e
    if re.shape != im.shape or re.ndim != 3:
        raise SchemaError("'re' and 'im' must be equal-shape (samples, rows, cols) arrays", field=name)
    return re + 1j * im


def _check_format(doc, expected):
    fmt = doc.get("format") if isinstance(doc, dict) else None
    if fmt not in expected:
        raise SchemaError(f"unsupported format {fmt!r}, expected one of {', '.join(expected)}", field="format")
    return fmt


def _ph_fields(ph):
    return {name: getattr(ph, name.upper()) for name in PH_FIELDS}


def _ph_from_doc(doc):
    try:
        return PHForm(*(_matrix(doc, name) for name in PH_FIELDS))
    except StructuralError as e:
        raise SchemaError(str(e)) from e


def plant_to_dict(plant):
    doc = {"format": PH_PLANT_FORMAT}
    doc.update(_ph_fields(plant.ph))
    doc.update({name: getattr(plant, name.upper()) for name in PLANT_FIELDS})
    return doc


def sampled_plant_to_dict(plant):
    doc = {"format": SAMPLED_PLANT_FORMAT, "omega": plant.omegas}
    for name in ("P11", "P12", "P21", "P22"):
        block = getattr(plant, name)
        doc[name.lower()] = {"re": block.real, "im": block.imag}
    return doc


def save_plant(plant, path):
    if isinstance(plant, SampledPlant):
        write_json(sampled_plant_to_dict(plant), path)
    else:
        write_json(plant_to_dict(plant), path)


def load_plant(path):
    """
    Read a ph-plant/v1 or sampled-plant/v1 file.

    Raises:
        SchemaError: missing or malformed fields
        ValidationError: the pH structure is violated (failed constraints listed)
    """
    doc = read_json(path)
    fmt = _check_format(doc, (PH_PLANT_FORMAT, SAMPLED_PLANT_FORMAT))
    if fmt == SAMPLED_PLANT_FORMAT:
        try:
            omegas = np.array(_field(doc, "omega"), dtype=float)
        except (TypeError, ValueError) as e:
            raise SchemaError(f"not numeric ({e})", field="omega") from e
        try:
            return SampledPlant(omegas, *(_complex_stack(doc, name) for name in ("p11", "p12", "p21", "p22")))
        except StructuralError as e:
            raise SchemaError(str(e)) from e

    ph = _ph_from_doc(doc)
    check_ph_argument(str(path), ph)
    try:
        plant = PHPlant(ph, *(_matrix(doc, name) for name in PLANT_FIELDS))
    except StructuralError as e:
        raise SchemaError(str(e)) from e
    logger.info(f"Loaded pH plant from {path}: n={plant.n}, m={plant.m}, m1={plant.m1}, p1={plant.p1}")
    return plant


def controller_to_dict(controller):
    if isinstance(controller, PHForm):
        doc = {"format": PH_FORM_FORMAT}
        doc.update(_ph_fields(controller))
        return doc
    return {
        "format": STATE_SPACE_FORMAT,
        "a": controller.A,
        "b": controller.B,
        "c": controller.C,
        "d": controller.D,
    }


def save_controller(controller, path):
    write_json(controller_to_dict(controller), path)


def load_controller(path):
    """Read a ph-form/v1 (validated) or state-space/v1 controller."""
    doc = read_json(path)
    fmt = _check_format(doc, (PH_FORM_FORMAT, STATE_SPACE_FORMAT))
    if fmt == PH_FORM_FORMAT:
        ph = _ph_from_doc(doc)
        check_ph_argument(str(path), ph)
        return ph

    A, B, C, D = (_matrix(doc, name) for name in ("a", "b", "c", "d"))
    if A.shape[0] == 0:
        B = np.zeros((0, D.shape[1]))
        C = np.zeros((D.shape[0], 0))
    try:
        return StateSpace(A, B, C, D)
    except StructuralError as e:
        raise SchemaError(str(e)) from e


def as_statespace(controller):
    return ph_to_statespace(controller) if isinstance(controller, PHForm) else controller


def write_table_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    logger.info(f"Wrote {path}")


def write_sweep_csv(path, omegas, values, prefix):
    """One row per frequency: omega, <prefix>_1, ..., <prefix>_r."""
    header = ["omega"] + [f"{prefix}_{j + 1}" for j in range(values.shape[1])]
    rows = [[repr(float(w))] + [repr(float(v)) for v in row] for w, row in zip(omegas, values)]
    write_table_csv(path, header, rows)


def write_records_csv(path, records, fieldnames):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(records)
    logger.info(f"Wrote {path}")
