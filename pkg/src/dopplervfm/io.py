"""JSON file formats for Doppler frames and reconstructed fields.

Lattices are stored as flat row-major lists (``r`` outer, ``theta`` inner);
Python's shortest-repr float formatting makes the round trip bit-exact.
Booleans are stored as 0/1 and non-finite provenance numbers as strings.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .domain import PolarGrid, Segmentation
from .phantom import DopplerFrame, VelocityField

FRAME_FORMAT_VERSION = 1
SOLUTION_FORMAT_VERSION = 1


class FrameFormatError(ValueError):
    """Malformed or unsupported frame/solution file."""


def _encode_scalar(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, dict):
        return {k: _encode_scalar(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_encode_scalar(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _lattice(values, grid: PolarGrid, name, dtype=float):
    arr = np.asarray(values, dtype=dtype)
    if arr.shape != (grid.size,):
        raise FrameFormatError(f"field {name!r} has {arr.size} values, expected {grid.size}")
    return arr.reshape(grid.shape)


def _flat(arr):
    return np.asarray(arr).ravel().tolist()


def _mask_list(arr):
    return np.asarray(arr, dtype=bool).ravel().astype(int).tolist()


def frame_to_dict(frame: DopplerFrame) -> dict:
    fields = {
        "v_d": _flat(frame.v_d),
        "weights": _flat(frame.weights),
        "seg": _mask_list(frame.mask),
        "valid": _mask_list(frame.valid),
    }
    if frame.reference is not None:
        fields["v_r_ref"] = _flat(frame.reference.v_r)
        fields["v_theta_ref"] = _flat(frame.reference.v_theta)
    return {
        "format_version": FRAME_FORMAT_VERSION,
        "grid": frame.grid.to_dict(),
        "fields": fields,
        "provenance": _encode_scalar(frame.provenance),
    }


def frame_from_dict(doc: dict) -> DopplerFrame:
    try:
        if doc.get("format_version") != FRAME_FORMAT_VERSION:
            raise FrameFormatError(f"unsupported frame format_version {doc.get('format_version')!r}")
        grid = PolarGrid.from_dict(doc["grid"])
        f = doc["fields"]
        seg = Segmentation(_lattice(f["seg"], grid, "seg", int).astype(bool))
        reference = None
        if "v_r_ref" in f or "v_theta_ref" in f:
            reference = VelocityField(
                _lattice(f["v_r_ref"], grid, "v_r_ref"), _lattice(f["v_theta_ref"], grid, "v_theta_ref")
            )
        prov = dict(doc.get("provenance") or {})
        if isinstance(prov.get("snr_db"), str):
            prov["snr_db"] = float(prov["snr_db"])
        return DopplerFrame(
            v_d=_lattice(f["v_d"], grid, "v_d"),
            weights=_lattice(f["weights"], grid, "weights"),
            seg=seg,
            grid=grid,
            valid=_lattice(f["valid"], grid, "valid", int).astype(bool),
            reference=reference,
            provenance=prov,
        )
    except FrameFormatError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise FrameFormatError(f"malformed frame document: {exc}") from exc


def write_frame(frame: DopplerFrame, path) -> None:
    Path(path).write_text(json.dumps(frame_to_dict(frame), allow_nan=False))


def read_frame(path) -> DopplerFrame:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FrameFormatError(f"{path}: not valid JSON ({exc})") from exc
    try:
        return frame_from_dict(doc)
    except FrameFormatError as exc:
        raise FrameFormatError(f"{path}: {exc}") from exc


def write_solution(path, frame_id: str, method: str, field: VelocityField, grid: PolarGrid, mask, diagnostics) -> None:
    doc = {
        "format_version": SOLUTION_FORMAT_VERSION,
        "frame_id": frame_id,
        "method": method,
        "grid": grid.to_dict(),
        "fields": {"v_r": _flat(field.v_r), "v_theta": _flat(field.v_theta), "seg": _mask_list(mask)},
        "diagnostics": _encode_scalar(diagnostics),
    }
    Path(path).write_text(json.dumps(doc, allow_nan=False))


def read_solution(path) -> dict:
    """Returns a dict with ``frame_id``, ``method``, ``grid``, ``field``, ``mask`` and ``diagnostics``."""
    try:
        doc = json.loads(Path(path).read_text())
        if doc.get("format_version") != SOLUTION_FORMAT_VERSION:
            raise FrameFormatError(f"unsupported solution format_version {doc.get('format_version')!r}")
        grid = PolarGrid.from_dict(doc["grid"])
        f = doc["fields"]
        return {
            "frame_id": doc["frame_id"],
            "method": doc["method"],
            "grid": grid,
            "field": VelocityField(_lattice(f["v_r"], grid, "v_r"), _lattice(f["v_theta"], grid, "v_theta")),
            "mask": _lattice(f["seg"], grid, "seg", int).astype(bool),
            "diagnostics": doc.get("diagnostics", {}),
        }
    except FrameFormatError as exc:
        raise FrameFormatError(f"{path}: {exc}") from exc
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
        raise FrameFormatError(f"{path}: malformed solution file ({exc})") from exc
