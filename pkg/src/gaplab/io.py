"""Deterministic file outputs: CSV tables, JSON reports, binary matrices and the manifest.

Data files never carry timestamps; the manifest does. Floats are written
with ``repr`` so that reruns produce identical bytes.
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import struct
from fractions import Fraction
from pathlib import Path

import numpy as np

LABEL_COLUMNS = ("p", "q", "m_lo", "m_hi", "M", "ids_num", "ids_den", "c0_num", "c0_den", "c1",
                 "ch_kspace_residual")
BUTTERFLY_COLUMNS = ("p", "q", "phi", "band_index", "e_min", "e_max")
BAND_COLUMNS = ("k1", "k2", "band_index", "energy")
WANNIER_COLUMNS = ("gamma1", "gamma2", "cell_index", "re_w", "im_w")


class ContractError(RuntimeError):
    """An output failed an emit-time consistency check."""


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            if len(r) != len(columns):
                raise ValueError(f"row {r!r} does not match columns {columns}")
            w.writerow([_cell(v) for v in r])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def label_row(g) -> tuple:
    """labels.csv row of a gap row; re-checks q I - c1 p in Z before emitting."""
    f = g.flux
    if (f.q * g.ids - g.c1 * f.p).denominator != 1:
        raise ContractError(f"gap label violates q I - c1 p in Z at flux {f}: I={g.ids}, c1={g.c1}")
    ids, c0 = Fraction(g.ids), Fraction(g.c0)
    return (f.p, f.q, g.m_lo, g.m_hi, g.M, ids.numerator, ids.denominator, c0.numerator, c0.denominator,
            g.c1, float(g.ch_residual))


def check_label_rows(rows: list[dict]) -> list[str]:
    """Re-check the Diophantine identity on rows read back from labels.csv."""
    bad = []
    for r in rows:
        p, q, c1 = int(r["p"]), int(r["q"]), int(r["c1"])
        ids = Fraction(int(r["ids_num"]), int(r["ids_den"]))
        if (q * ids - c1 * p).denominator != 1:
            bad.append(f"{p}/{q} m_hi={r['m_hi']}")
    return bad


def _jsonable(o):
    if isinstance(o, Fraction):
        return str(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    return str(o)


def _finite(o):
    """Replace non-finite floats by strings so the JSON stays standard."""
    if isinstance(o, float) and not np.isfinite(o):
        return repr(o)
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    return o


def write_json(path, obj) -> Path:
    path = Path(path)
    text = json.dumps(_finite(json.loads(json.dumps(obj, default=_jsonable, allow_nan=True))), indent=2,
                      sort_keys=True, allow_nan=False)
    path.write_text(text + "\n")
    return path


def write_matrix(path, M) -> Path:
    """Binary dump: two little-endian uint64 (rows, cols), then row-major complex128 as (re, im) float64 pairs."""
    M = np.asarray(M, dtype=np.complex128)
    if M.ndim != 2:
        raise ValueError("matrix must be two-dimensional")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", *M.shape))
        fh.write(np.ascontiguousarray(M).astype("<c16").tobytes())
    return path


def read_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    n, m = struct.unpack("<QQ", data[:16])
    return np.frombuffer(data[16:], dtype="<c16").reshape(n, m).copy()


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, command: str, cfg: dict, files, failures=(), checks=None, status: str = "ok",
                   version: str = "") -> Path:
    """manifest.json: the only output carrying a timestamp."""
    out_dir = Path(out_dir)
    entries = {Path(f).name: sha256(f) for f in sorted(files, key=lambda p: Path(p).name)}
    doc = {
        "command": command,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "version": version,
        "config": cfg,
        "files": entries,
        "failures": list(failures),
        "checks": checks or {},
        "status": status,
    }
    return write_json(out_dir / "manifest.json", doc)
