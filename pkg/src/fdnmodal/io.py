"""System files, modes/impulse-response CSV, WAV output and run manifests.

System file (JSON)::

    {
      "name": "hall",                       # optional
      "size": 8,                            # optional, checked against delays
      "delays": [2300, 499, ...],
      "feedback": [[...], ...],             # rows, or a flat row-major list;
                                            # entries are reals or [re, im]
      "matrix": "random_orthogonal",        # instead of "feedback": also "shift"
      "seed": 3,                            # for "random_orthogonal"
      "input_gains": [...], "output_gains": [...],   # default all ones
      "direct_gain": 0.0,
      "filters": {"t60_dc": 2.0, "t60_ny": 0.4, "fs": 48000,
                  "mode": "delay_proportional"}       # or {"average_delay": 1074}
    }

``filters`` may also be ``{"dc_gain_db_per_sample": -0.0003}`` (frequency-flat
attenuation ``gamma ** m_i``) or a list of per-line ``{"gain": g, "pole": p}``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .attenuation import AttenuationSpec, OnePoleFilter, design_filters, homogeneous_filters
from .eai import PoleSet, PoleStatus
from .fdn import FDNSystem, circulant_shift
from .modal import ModalDecomposition

MODES_HEADER = ["re(λ)", "im(λ)", "|λ|", "angle(λ)", "re(ρ)", "im(ρ)",
                "re(ρ̄)", "im(ρ̄)", "iterations", "status"]
DEFAULT_WAV_RATE = 48000


class SystemFileError(ValueError):
    """The system description could not be parsed."""


def _complex(x, what):
    if isinstance(x, (int, float)):
        return complex(x)
    if isinstance(x, (list, tuple)) and len(x) == 2 and all(isinstance(v, (int, float)) for v in x):
        return complex(x[0], x[1])
    raise SystemFileError(f"{what}: expected a number or [re, im], got {x!r}")


def _vector(values, n, what):
    if not isinstance(values, list):
        raise SystemFileError(f"{what} must be a list")
    if len(values) != n:
        raise SystemFileError(f"{what} has {len(values)} entries, expected {n}")
    return np.array([_complex(v, what) for v in values])


def _matrix(entries, n):
    if not isinstance(entries, list):
        raise SystemFileError("feedback must be a list")
    if len(entries) == n and all(isinstance(r, list) and len(r) == n for r in entries):
        rows = entries
    elif len(entries) == n * n:
        rows = [entries[i * n:(i + 1) * n] for i in range(n)]
    else:
        raise SystemFileError(f"feedback must be {n} rows of {n} entries or {n * n} row-major entries")
    return np.array([[_complex(v, "feedback") for v in row] for row in rows])


def _filters(spec, delays):
    if spec is None:
        return None
    if isinstance(spec, list):
        if len(spec) != len(delays):
            raise SystemFileError(f"{len(spec)} filters for {len(delays)} delay lines")
        try:
            return tuple(OnePoleFilter(float(f["gain"]), float(f.get("pole", 0.0))) for f in spec)
        except (KeyError, TypeError, ValueError) as exc:
            raise SystemFileError(f"bad per-line filter: {exc}") from exc
    if not isinstance(spec, dict):
        raise SystemFileError("filters must be an object or a list")
    if "dc_gain_db_per_sample" in spec:
        gamma = 10 ** (float(spec["dc_gain_db_per_sample"]) / 20)
        return homogeneous_filters(gamma, delays)
    try:
        mode = spec.get("mode", "delay_proportional")
        avg = None
        if isinstance(mode, dict):
            avg = float(mode["average_delay"])
        elif mode != "delay_proportional":
            raise SystemFileError(f"unknown filter mode {mode!r}")
        att = AttenuationSpec(float(spec["t60_dc"]), float(spec["t60_ny"]),
                              float(spec.get("fs", 48000)), avg)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SystemFileError):
            raise
        raise SystemFileError(f"bad filter spec: {exc}") from exc
    return design_filters(att, delays)


def system_from_dict(d: dict) -> FDNSystem:
    from .analysis import random_orthogonal

    if not isinstance(d, dict):
        raise SystemFileError("system file must hold a JSON object")
    try:
        delays = d["delays"]
    except KeyError:
        raise SystemFileError("missing field 'delays'") from None
    if (not isinstance(delays, list) or not delays
            or not all(isinstance(m, int) and not isinstance(m, bool) and m >= 1 for m in delays)):
        raise SystemFileError("delays must be a non-empty list of positive integers")
    n = len(delays)
    if "size" in d and d["size"] != n:
        raise SystemFileError(f"size {d['size']} does not match {n} delays")
    if "feedback" in d:
        a = _matrix(d["feedback"], n)
    else:
        kind = d.get("matrix")
        if kind == "random_orthogonal":
            a = random_orthogonal(n, int(d.get("seed", 0)))
        elif kind == "shift":
            a = circulant_shift(n)
        else:
            raise SystemFileError("need 'feedback' or 'matrix': random_orthogonal | shift")
    b = _vector(d["input_gains"], n, "input_gains") if "input_gains" in d else None
    c = _vector(d["output_gains"], n, "output_gains") if "output_gains" in d else None
    direct = _complex(d.get("direct_gain", 0.0), "direct_gain")
    try:
        return FDNSystem(delays, a, b, c, direct, _filters(d.get("filters"), delays),
                         str(d.get("name", "")))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SystemFileError):
            raise
        raise SystemFileError(str(exc)) from exc


def load_system(path) -> FDNSystem:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SystemFileError(f"{path}: invalid JSON ({exc})") from exc
    return system_from_dict(data)


def _pair(z):
    z = complex(z)
    return z.real if z.imag == 0 else [z.real, z.imag]


def system_to_dict(sys: FDNSystem) -> dict:
    d = {"size": sys.size, "delays": sys.delays.tolist(),
         "feedback": [[_pair(v) for v in row] for row in sys.feedback],
         "input_gains": [_pair(v) for v in sys.input_gains],
         "output_gains": [_pair(v) for v in sys.output_gains],
         "direct_gain": _pair(sys.direct_gain)}
    if sys.name:
        d["name"] = sys.name
    if sys.filters is not None:
        d["filters"] = [{"gain": f.gain, "pole": f.pole} for f in sys.filters]
    return d


def save_system(sys: FDNSystem, path) -> None:
    Path(path).write_text(json.dumps(system_to_dict(sys), indent=1) + "\n")


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _g(x) -> str:
    return format(float(x), ".17g")


def write_modes_csv(path, dec: ModalDecomposition) -> None:
    """One row per mode; floats with 17 significant digits (exact round trip)."""
    iters = dec.iterations if dec.iterations is not None else np.zeros(len(dec), int)
    status = dec.status if dec.status is not None else np.full(len(dec), PoleStatus.CONVERGED_STEP)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MODES_HEADER)
        for lam, rho, rb, it, st in zip(dec.poles, dec.residues, dec.undriven_residues, iters, status):
            w.writerow([_g(lam.real), _g(lam.imag), _g(abs(lam)), _g(np.angle(lam)),
                        _g(rho.real), _g(rho.imag), _g(rb.real), _g(rb.imag),
                        int(it), PoleStatus(int(st)).name.lower()])


def read_modes_csv(path, direct_gain: complex = 0.0) -> ModalDecomposition:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != MODES_HEADER:
        raise SystemFileError(f"{path}: not a modes file (header mismatch)")
    body = rows[1:]
    try:
        num = np.array([[float(x) for x in r[:8]] for r in body]).reshape(-1, 8)
        iters = np.array([int(r[8]) for r in body], dtype=np.int32)
        status = np.array([PoleStatus[r[9].upper()] for r in body], dtype=np.int8)
    except (ValueError, IndexError, KeyError) as exc:
        raise SystemFileError(f"{path}: malformed row ({exc})") from exc
    lam = num[:, 0] + 1j * num[:, 1]
    rho = num[:, 4] + 1j * num[:, 5]
    rb = num[:, 6] + 1j * num[:, 7]
    with np.errstate(divide="ignore", invalid="ignore"):
        q = rho / rb
    return ModalDecomposition(lam, rho, rb, q, complex(direct_gain), None, iters, status)


def pole_set_from_modes(dec: ModalDecomposition) -> PoleSet:
    return PoleSet(dec.poles.copy(), dec.status.copy(), dec.iterations.copy())


def write_signal_csv(path, signal) -> None:
    """``index,value`` for real signals, ``index,re,im`` for complex ones."""
    signal = np.asarray(signal)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if np.iscomplexobj(signal):
            w.writerow(["index", "re", "im"])
            for i, v in enumerate(signal):
                w.writerow([i, _g(v.real), _g(v.imag)])
        else:
            w.writerow(["index", "value"])
            for i, v in enumerate(signal):
                w.writerow([i, _g(v)])


def write_wav(path, signal, rate: int = DEFAULT_WAV_RATE) -> None:
    """Mono IEEE-float WAV (format code 3) of the real part."""
    data = np.real(np.asarray(signal)).astype(np.float32)
    wavfile.write(path, int(rate), data)


def write_table_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_g(v) if isinstance(v, (float, np.floating)) else v for v in r])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, Path):
        return str(x)
    return x


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(_jsonable(manifest), indent=1, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
