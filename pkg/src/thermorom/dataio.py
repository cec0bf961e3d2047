"""Persistence and ingestion.

RDX1 container layout (all integers little-endian)::

    bytes 0-3     magic b"RDX1"
    bytes 4-11    uint64 header length H
    bytes 12-12+H UTF-8 JSON header:
                  {"arrays": [{"name", "dtype", "shape", "offset", "nbytes"}, ...],
                   "attrs": {name: scalar or list}}
    remainder     raw array blocks, C order; ``offset`` counts from the end of the header

Supported element types are ``<f8`` and ``<i8``. Track and driver CSV files
are UTF-8, comma separated, with ISO-8601 (UTC) or integer-second epochs.
"""
from __future__ import annotations

import csv
import json
import math
import os
import struct
import tempfile
import zlib
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .drivers import DriverSeries
from .errors import (
    BadMagic,
    DataError,
    EmptyAfterPreprocessing,
    GridMismatch,
    NonPositiveTrainingDensity,
    OverlappingBlocks,
    TruncatedFile,
)
from .features import FeatureScaler, LibrarySpec
from .grid import GridSpec, SnapshotSeries, TrackMeasurement, mc_noise_variance
from .ident import RomModel
from .latent import LatentBasis

MAGIC = b"RDX1"
_PREFIX = struct.Struct("<4sQ")
_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}
EPOCH0 = datetime(2000, 1, 1, tzinfo=timezone.utc)

TRACK_HEADER = ["epoch_utc", "lat_deg", "lt_hours", "alt_km", "density_kgm3", "satellite_id"]
DRIVER_HEADER = ["epoch_utc", "f107", "f107_bar41", "kp"]


# --------------------------------------------------------------------------- container

def _as_items(arrays) -> list[tuple[str, np.ndarray]]:
    items = list(arrays.items()) if isinstance(arrays, Mapping) else list(arrays)
    names = [name for name, _ in items]
    if len(set(names)) != len(names):
        raise ValueError("array names must be unique")
    return items


def encode_container(arrays, attrs: Mapping | None = None) -> bytes:
    entries, blobs, offset = [], [], 0
    for name, arr in _as_items(arrays):
        arr = np.asarray(arr)
        dtype = "<i8" if np.issubdtype(arr.dtype, np.integer) else "<f8"
        blob = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        entries.append({"name": str(name), "dtype": dtype, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"arrays": entries, "attrs": dict(attrs or {})},
                        separators=(",", ":"), allow_nan=False).encode("utf-8")
    return _PREFIX.pack(MAGIC, len(header)) + header + b"".join(blobs)


def decode_container(raw: bytes):
    if len(raw) < _PREFIX.size:
        raise TruncatedFile("file shorter than the RDX1 prefix")
    magic, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, found {magic!r}")
    start = _PREFIX.size + hlen
    if start > len(raw):
        raise TruncatedFile("header extends past end of file")
    try:
        header = json.loads(raw[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"unreadable container header: {exc}") from exc
    data = memoryview(raw)[start:]

    spans = []
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise DataError(f"unsupported element type {entry['dtype']}")
        shape = tuple(entry["shape"])
        nbytes = int(entry["nbytes"])
        lo = int(entry["offset"])
        if nbytes != dtype.itemsize * math.prod(shape):
            raise DataError(f"block {entry['name']} size does not match its shape")
        if lo < 0 or lo + nbytes > len(data):
            raise TruncatedFile(f"block {entry['name']} runs past end of file")
        spans.append((lo, lo + nbytes, entry["name"]))
        arrays[entry["name"]] = np.frombuffer(data[lo:lo + nbytes], dtype=dtype).reshape(shape).copy()
    spans.sort()
    for (a0, a1, na), (b0, b1, nb) in zip(spans, spans[1:]):
        if b0 < a1 and b1 > b0 and a1 > a0:
            raise OverlappingBlocks(f"blocks {na} and {nb} overlap")
    return arrays, header.get("attrs", {})


def write_container(path, arrays, attrs: Mapping | None = None) -> None:
    """Write arrays and scalar attributes; the target is replaced atomically."""
    payload = encode_container(arrays, attrs)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path):
    """Return ``(arrays, attrs)``; arrays keep their on-disk order."""
    return decode_container(Path(path).read_bytes())


# --------------------------------------------------------------------------- models

def _grid_attrs(grid: GridSpec | None) -> dict:
    return {} if grid is None else {f"grid_{k}": v for k, v in grid.as_dict().items()}


def _grid_from_attrs(attrs) -> GridSpec | None:
    if "grid_n_lt" not in attrs:
        return None
    return GridSpec(**{k[5:]: attrs[k] for k in attrs if k.startswith("grid_")})


def save_basis(path, basis: LatentBasis) -> None:
    attrs = {"kind": "latent_basis", "r": basis.r, "d": basis.d, "n_snapshots": basis.n_snapshots}
    attrs.update(_grid_attrs(basis.grid))
    write_container(path, {"W": basis.w, "mu0": basis.mu0, "explained": basis.explained}, attrs)


def load_basis(path) -> LatentBasis:
    arrays, attrs = read_container(path)
    return LatentBasis(w=arrays["W"], mu0=arrays["mu0"], grid=_grid_from_attrs(attrs),
                       explained=arrays.get("explained", np.zeros(0)),
                       n_snapshots=int(attrs.get("n_snapshots", 0)))


def save_model(path, model: RomModel) -> None:
    arrays = {"A": model.a}
    arrays.update({f"A_lag_{j + 1}": m for j, m in enumerate(model.a_lags)})
    arrays["B"] = model.b
    arrays.update({f"B_lag_{j + 1}": m for j, m in enumerate(model.b_lags)})
    arrays["Xi_nl"] = model.xi_nl
    arrays["c"] = model.c
    arrays["scaler_mean"] = model.scaler.mean
    arrays["scaler_std"] = model.scaler.std
    arrays["scaler_frozen"] = model.scaler.frozen.astype(np.int64)
    if model.q_suggest is not None:
        arrays["Q_suggest"] = model.q_suggest
    attrs = {
        "n_ar": model.n_ar, "cadence_s": model.cadence_s, "kind": model.kind, "alpha": model.alpha,
        "lag_stride": model.lag_stride, "r": model.r, "n_u": model.n_u,
        "include_bias": model.spec.include_bias, "max_degree": model.spec.max_degree,
    }
    write_container(path, arrays, attrs)


def load_model(path) -> RomModel:
    arrays, attrs = read_container(path)
    n_ar = int(attrs["n_ar"])
    spec = LibrarySpec(int(attrs["r"]), int(attrs["n_u"]), bool(attrs["include_bias"]),
                       int(attrs["max_degree"]))
    scaler = FeatureScaler(arrays["scaler_mean"], arrays["scaler_std"], arrays["scaler_frozen"].astype(bool))
    return RomModel(
        a=arrays["A"],
        a_lags=[arrays[f"A_lag_{j}"] for j in range(1, n_ar + 1)],
        b=arrays["B"],
        b_lags=[arrays[f"B_lag_{j}"] for j in range(1, n_ar + 1)],
        xi_nl=arrays["Xi_nl"],
        c=arrays["c"],
        spec=spec,
        scaler=scaler,
        n_ar=n_ar,
        cadence_s=float(attrs["cadence_s"]),
        kind=str(attrs["kind"]),
        alpha=float(attrs["alpha"]),
        lag_stride=int(attrs.get("lag_stride", 1)),
        q_suggest=arrays.get("Q_suggest"),
    )


# --------------------------------------------------------------------------- snapshots

def write_snapshots(path, series: SnapshotSeries) -> None:
    """Store a log10 snapshot series as linear density, shape (m, n_lt, n_lat, n_alt)."""
    density = (10.0 ** series.values).T.reshape((len(series),) + series.grid.shape)
    write_container(path, {"density": density, "epochs": series.epochs.astype(np.int64)},
                    _grid_attrs(series.grid))


def ingest_snapshots(paths, grid: GridSpec | None = None) -> SnapshotSeries:
    """Load linear-density snapshot containers and convert them to log10.

    Each file holds ``density`` of shape (n_lt, n_lat, n_alt) with an ``epoch``
    attribute, or (m, n_lt, n_lat, n_alt) with an ``epochs`` array.
    """
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    epochs, fields = [], []
    for path in paths:
        arrays, attrs = read_container(path)
        if "density" not in arrays:
            raise DataError(f"{path}: no 'density' array")
        file_grid = _grid_from_attrs(attrs)
        dens = arrays["density"]
        if dens.ndim == 3:
            dens = dens[None]
            ep = np.array([int(attrs["epoch"])])
        else:
            ep = arrays["epochs"].astype(np.int64)
        if grid is None:
            grid = file_grid or GridSpec(*dens.shape[1:])
        if dens.shape[1:] != grid.shape or (file_grid is not None and file_grid != grid):
            raise GridMismatch(f"{path}: grid {dens.shape[1:]} does not match {grid.shape}")
        if not np.all(dens > 0):
            raise NonPositiveTrainingDensity(f"{path}: training density must be strictly positive")
        epochs.append(ep)
        fields.append(np.log10(dens.reshape(dens.shape[0], -1)).T)
    ep = np.concatenate(epochs)
    vals = np.concatenate(fields, axis=1)
    order = np.argsort(ep, kind="stable")
    return SnapshotSeries(grid, ep[order], vals[:, order])


# --------------------------------------------------------------------------- CSV

def parse_epoch(text: str) -> float:
    """Seconds since 2000-01-01 UTC from an integer string or ISO-8601 timestamp."""
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return (dt - EPOCH0).total_seconds()


def format_epoch(epoch) -> str:
    """ISO-8601 for whole seconds, plain seconds otherwise."""
    if float(epoch) != int(epoch):
        return repr(float(epoch))
    sec = int(epoch)
    stamp = np.datetime64("2000-01-01T00:00:00", "s") + np.timedelta64(sec, "s")
    return f"{stamp}Z"


@dataclass(frozen=True)
class RawMeasurementRow:
    epoch: float
    lat: float
    lt: float
    alt: float
    density: float
    satellite_id: str


def read_track_csv(path) -> list[RawMeasurementRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRACK_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for rec in reader:
            try:
                rows.append(RawMeasurementRow(
                    parse_epoch(rec["epoch_utc"]), float(rec["lat_deg"]), float(rec["lt_hours"]),
                    float(rec["alt_km"]), float(rec["density_kgm3"]), rec["satellite_id"].strip()))
            except ValueError as exc:
                raise DataError(f"{path}: bad row {rec}: {exc}") from exc
    return rows


def write_track_csv(path, rows: Iterable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(TRACK_HEADER)
        for row in rows:
            rho = row.density if isinstance(row, RawMeasurementRow) else row.rho
            out.writerow([format_epoch(row.epoch), repr(float(row.lat)), repr(float(row.lt)),
                          repr(float(row.alt)), repr(float(rho)), row.satellite_id])


def read_driver_csv(path) -> DriverSeries:
    cols = {name: [] for name in DRIVER_HEADER}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(DRIVER_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for rec in reader:
            cols["epoch_utc"].append(parse_epoch(rec["epoch_utc"]))
            for name in DRIVER_HEADER[1:]:
                cols[name].append(float(rec[name]))
    return DriverSeries(np.array(cols["epoch_utc"]), np.array(cols["f107"]),
                        np.array(cols["f107_bar41"]), np.array(cols["kp"]))


def write_driver_csv(path, series: DriverSeries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(DRIVER_HEADER)
        for e, f, fb, kp in zip(series.epochs, series.f107, series.f107_bar41, series.kp):
            out.writerow([format_epoch(e), repr(float(f)), repr(float(fb)), repr(float(kp))])


# --------------------------------------------------------------------------- preprocessing

@dataclass
class PreprocessReport:
    input_rows: int = 0
    output_rows: int = 0
    negatives_removed: int = 0
    nonfinite_removed: int = 0
    duplicates_dropped: int = 0
    misaligned_dropped: int = 0
    notes: list = field(default_factory=list)

    def balanced(self) -> bool:
        return self.input_rows == (self.output_rows + self.negatives_removed + self.nonfinite_removed
                                   + self.duplicates_dropped + self.misaligned_dropped)


def round_half_away(x: float, step: float) -> int:
    q = x / step
    return int(math.copysign(math.floor(abs(q) + 0.5), q)) * int(step)


def measurement_seed(seed: int, epoch: int, satellite_id: str) -> list[int]:
    return [int(seed), int(epoch) + (1 << 40), zlib.crc32(satellite_id.encode("utf-8"))]


def preprocess_track(rows: Iterable[RawMeasurementRow], t2: float = 60.0, rel_err: float = 0.05,
                     n_mc: int = 100, seed: int = 0, align_tol: float | None = None,
                     min_var: float = 1e-12):
    """Clean raw rows and align them to the filter grid.

    Non-finite and non-positive densities are dropped, epochs are rounded half
    away from zero to a multiple of ``t2``, rows whose rounding offset exceeds
    ``align_tol`` (default ``t2 / 2``) are discarded, and of rows that collide on
    the same grid epoch (per satellite) the earliest is kept. Each survivor gets
    a Monte-Carlo log-density noise variance, floored at ``min_var``.
    """
    rows = list(rows)
    report = PreprocessReport(input_rows=len(rows))
    tol = t2 / 2.0 if align_tol is None else align_tol

    kept = []
    for row in rows:
        vals = (row.epoch, row.lat, row.lt, row.alt, row.density)
        if not all(math.isfinite(v) for v in vals):
            report.nonfinite_removed += 1
        elif not row.density > 0:
            report.negatives_removed += 1
        else:
            kept.append(row)
    kept.sort(key=lambda r: r.epoch)

    out, seen = [], set()
    for row in kept:
        grid_epoch = round_half_away(row.epoch, t2)
        if abs(row.epoch - grid_epoch) > tol:
            report.misaligned_dropped += 1
            continue
        key = (row.satellite_id, grid_epoch)
        if key in seen:
            report.duplicates_dropped += 1
            continue
        seen.add(key)
        var = max(min_var, mc_noise_variance(row.density, rel_err, n_mc,
                                             measurement_seed(seed, grid_epoch, row.satellite_id)))
        out.append(TrackMeasurement(grid_epoch, row.lat, row.lt, row.alt, row.density, var, row.satellite_id))
    report.output_rows = len(out)
    if not out:
        raise EmptyAfterPreprocessing("no measurements survive preprocessing")
    return out, report


def to_raw_rows(measurements: Iterable[TrackMeasurement]) -> list[RawMeasurementRow]:
    return [RawMeasurementRow(float(m.epoch), m.lat, m.lt, m.alt, m.rho, m.satellite_id) for m in measurements]
