"""Loading and joining tract, facility, socioeconomic and footprint files.

File layouts (comment lines starting with ``#`` are skipped everywhere)::

    tracts.csv              geoid,lat,lon,label        label in {0, 1, NA}
    facilities_<kind>.csv   id,lat,lon                 kind in {school, hospital, subway}
    socio.csv               geoid,<feature_1>,...      numeric or empty cells
    footprints.csv          geoid,building_count,total_perimeter_m,total_area_m2,mean_area_m2
    tracts.geojson          optional FeatureCollection, properties.geoid

A tract row may leave ``lat``/``lon`` empty when a polygon for it is supplied;
its center is then the polygon centroid.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .geo import GeoPoint, GeoPolygon, InvalidCoordinate, polygon_centroid

log = logging.getLogger(__name__)

FOOTPRINT_COLUMNS = ("building_count", "total_perimeter_m", "total_area_m2", "mean_area_m2")


class Kind(enum.IntEnum):
    TRACT = 0
    SCHOOL = 1
    HOSPITAL = 2
    SUBWAY = 3

    @property
    def slug(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> "Kind":
        if isinstance(value, Kind):
            return value
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown node kind {value!r}") from None


FACILITY_KINDS = (Kind.SCHOOL, Kind.HOSPITAL, Kind.SUBWAY)


class IngestError(Exception):
    pass


class ParseError(IngestError):
    def __init__(self, path, line, reason):
        self.path, self.line, self.reason = str(path), line, reason
        super().__init__(f"{path}:{line}: {reason}")


class DuplicateId(IngestError):
    def __init__(self, id_, path=None):
        self.id = id_
        where = f" in {path}" if path else ""
        super().__init__(f"duplicate id {id_!r}{where}")


class UnknownTractId(IngestError):
    def __init__(self, id_, source=""):
        self.id = id_
        super().__init__(f"{source or 'table'} references unknown tract {id_!r}")


@dataclass(frozen=True)
class Tract:
    id: str
    center: GeoPoint
    label: int | None = None


@dataclass(frozen=True)
class Facility:
    id: str
    kind: Kind
    location: GeoPoint


@dataclass(frozen=True, eq=False)
class SocioTable:
    names: tuple[str, ...]
    ids: tuple[str, ...]
    values: np.ndarray  # NaN marks an empty cell


@dataclass(frozen=True, eq=False)
class FootprintTable:
    ids: tuple[str, ...]
    values: np.ndarray  # columns follow FOOTPRINT_COLUMNS


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Tracts joined with their features; socio/footprint rows align with ``tracts``."""

    tracts: tuple[Tract, ...]
    facilities: Mapping[Kind, tuple[Facility, ...]]
    socio_names: tuple[str, ...]
    socio: np.ndarray
    footprints: np.ndarray
    warnings: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "socio", _frozen(self.socio).reshape(len(self.tracts), -1))
        object.__setattr__(self, "footprints", _frozen(self.footprints).reshape(len(self.tracts), 4))
        fac = {k: tuple(self.facilities.get(k, ())) for k in FACILITY_KINDS}
        object.__setattr__(self, "facilities", fac)

    @property
    def tract_ids(self) -> list[str]:
        return [t.id for t in self.tracts]

    @property
    def labels(self) -> np.ndarray:
        """Labels as float array; NaN where unlabeled."""
        return np.array([np.nan if t.label is None else t.label for t in self.tracts])

    def labeled_ids(self) -> list[str]:
        return [t.id for t in self.tracts if t.label is not None]

    def tract_index(self) -> dict[str, int]:
        return {t.id: i for i, t in enumerate(self.tracts)}

    def sorted(self) -> "Dataset":
        """Copy with tracts and facilities in ascending id order."""
        order = sorted(range(len(self.tracts)), key=lambda i: self.tracts[i].id)
        return Dataset(
            tracts=tuple(self.tracts[i] for i in order),
            facilities={k: tuple(sorted(v, key=lambda f: f.id)) for k, v in self.facilities.items()},
            socio_names=self.socio_names,
            socio=self.socio[order],
            footprints=self.footprints[order],
            warnings=dict(self.warnings),
        )

    def __eq__(self, other):
        # load diagnostics (warnings) are not part of the data
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.tracts == other.tracts
            and self.facilities == other.facilities
            and self.socio_names == other.socio_names
            and np.array_equal(self.socio, other.socio)
            and np.array_equal(self.footprints, other.footprints)
        )

    __hash__ = None


def _rows(path, expected_header=None, min_columns=1):
    """Yield ``(line_number, fields)``; the first yielded item is the header."""
    with open(path, newline="", encoding="utf-8") as fh:
        header = None
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip() or raw.lstrip().startswith("#"):
                continue
            fields = next(csv.reader([raw]))
            fields = [f.strip() for f in fields]
            if header is None:
                header = fields
                if expected_header is not None and tuple(header) != tuple(expected_header):
                    raise ParseError(path, lineno, f"expected header {','.join(expected_header)}, got {','.join(header)}")
                if len(header) < min_columns:
                    raise ParseError(path, lineno, f"header needs at least {min_columns} columns")
                yield lineno, header
                continue
            if len(fields) != len(header):
                raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(fields)}")
            yield lineno, fields
        if header is None:
            raise ParseError(path, 0, "missing header")


def _point(path, lineno, lat, lon):
    try:
        return GeoPoint(float(lat), float(lon))
    except InvalidCoordinate as e:
        raise ParseError(path, lineno, str(e)) from None
    except ValueError:
        raise ParseError(path, lineno, f"bad coordinate ({lat!r}, {lon!r})") from None


def _float(path, lineno, text, name):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(path, lineno, f"{name}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise ParseError(path, lineno, f"{name}: non-finite value {text!r}")
    return v


def load_tract_polygons(path) -> dict[str, GeoPolygon]:
    """Read tract boundaries from a GeoJSON FeatureCollection (first ring only)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    out = {}
    for i, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        if "geoid" not in props:
            raise ParseError(path, i, "feature without properties.geoid")
        geom = feat.get("geometry") or {}
        coords = geom.get("coordinates")
        if geom.get("type") == "Polygon":
            ring = coords[0]
        elif geom.get("type") == "MultiPolygon":
            ring = coords[0][0]
        else:
            raise ParseError(path, i, f"unsupported geometry {geom.get('type')!r}")
        gid = str(props["geoid"])
        if gid in out:
            raise DuplicateId(gid, path)
        # GeoJSON positions are [lon, lat]
        out[gid] = GeoPolygon.from_coords([(c[1], c[0]) for c in ring])
    return out


def load_tracts(path, polygons: Mapping[str, GeoPolygon] | None = None) -> list[Tract]:
    rows = _rows(path, ("geoid", "lat", "lon", "label"))
    next(rows)
    tracts, seen = [], set()
    for lineno, (gid, lat, lon, label) in rows:
        if not gid:
            raise ParseError(path, lineno, "empty geoid")
        if gid in seen:
            raise DuplicateId(gid, path)
        seen.add(gid)
        if lat == "" and lon == "":
            if polygons is None or gid not in polygons:
                raise ParseError(path, lineno, f"no coordinates and no polygon for {gid}")
            center = polygon_centroid(polygons[gid])
        else:
            center = _point(path, lineno, lat, lon)
        if label in ("", "NA", "na", "NaN"):
            lab = None
        elif label in ("0", "1"):
            lab = int(label)
        else:
            raise ParseError(path, lineno, f"label must be 0, 1 or NA, got {label!r}")
        tracts.append(Tract(gid, center, lab))
    return tracts


def load_facilities(path, kind) -> list[Facility]:
    kind = Kind.parse(kind)
    if kind is Kind.TRACT:
        raise ValueError("tracts are not a facility kind")
    rows = _rows(path, ("id", "lat", "lon"))
    next(rows)
    out, seen = [], set()
    for lineno, (fid, lat, lon) in rows:
        if not fid:
            raise ParseError(path, lineno, "empty id")
        if fid in seen:
            raise DuplicateId(fid, path)
        seen.add(fid)
        out.append(Facility(fid, kind, _point(path, lineno, lat, lon)))
    return out


def load_socio(path) -> SocioTable:
    rows = _rows(path, min_columns=2)
    _, header = next(rows)
    if header[0] != "geoid":
        raise ParseError(path, 1, "first column must be geoid")
    names = tuple(header[1:])
    if len(set(names)) != len(names):
        raise ParseError(path, 1, "duplicate feature names")
    ids, vals, seen = [], [], set()
    for lineno, fields in rows:
        gid = fields[0]
        if gid in seen:
            raise DuplicateId(gid, path)
        seen.add(gid)
        ids.append(gid)
        vals.append([np.nan if f == "" else _float(path, lineno, f, n) for f, n in zip(fields[1:], names)])
    values = np.array(vals, dtype=np.float64).reshape(len(ids), len(names))
    return SocioTable(names, tuple(ids), values)


def load_footprints(path) -> FootprintTable:
    rows = _rows(path, ("geoid",) + FOOTPRINT_COLUMNS)
    next(rows)
    ids, vals, seen = [], [], set()
    for lineno, fields in rows:
        gid = fields[0]
        if gid in seen:
            raise DuplicateId(gid, path)
        seen.add(gid)
        row = [_float(path, lineno, f, n) for f, n in zip(fields[1:], FOOTPRINT_COLUMNS)]
        if min(row) < 0:
            raise ParseError(path, lineno, "footprint statistics must be non-negative")
        count = row[0]
        if count != int(count):
            raise ParseError(path, lineno, "building_count must be an integer")
        if count > 0 and not math.isclose(row[3] * count, row[2], rel_tol=1e-6):
            raise ParseError(path, lineno, "mean_area_m2 * building_count != total_area_m2")
        ids.append(gid)
        vals.append(row)
    return FootprintTable(tuple(ids), np.array(vals, dtype=np.float64).reshape(len(ids), 4))


def join_dataset(
    tracts: Iterable[Tract],
    facilities,
    socio: SocioTable,
    footprints: FootprintTable | None = None,
) -> Dataset:
    """Join per-tract tables onto the tract list.

    Tracts without a socio row are dropped; tracts without a footprint row get
    zeros. Both are counted in ``Dataset.warnings``. Empty socio cells are
    imputed with the column median over labeled tracts.
    """
    tracts = list(tracts)
    known = {t.id for t in tracts}
    if len(known) != len(tracts):
        seen = set()
        for t in tracts:
            if t.id in seen:
                raise DuplicateId(t.id)
            seen.add(t.id)
    for gid in socio.ids:
        if gid not in known:
            raise UnknownTractId(gid, "socio")
    fp_ids = footprints.ids if footprints is not None else ()
    for gid in fp_ids:
        if gid not in known:
            raise UnknownTractId(gid, "footprints")

    if isinstance(facilities, Mapping):
        flat = [f for v in facilities.values() for f in v]
    else:
        flat = list(facilities)
    fac = {k: [] for k in FACILITY_KINDS}
    seen_fac = set()
    for f in flat:
        if (f.kind, f.id) in seen_fac:
            raise DuplicateId(f.id)
        seen_fac.add((f.kind, f.id))
        fac[f.kind].append(f)

    srow = {gid: i for i, gid in enumerate(socio.ids)}
    frow = {gid: i for i, gid in enumerate(fp_ids)}
    kept = [t for t in tracts if t.id in srow]
    dropped = len(tracts) - len(kept)
    S = socio.values[[srow[t.id] for t in kept]].reshape(len(kept), len(socio.names)).copy()
    F = np.zeros((len(kept), 4))
    missing_fp = 0
    for i, t in enumerate(kept):
        if t.id in frow:
            F[i] = footprints.values[frow[t.id]]
        else:
            missing_fp += 1

    labeled = np.array([t.label is not None for t in kept], dtype=bool)
    imputed = 0
    for j in range(S.shape[1]):
        col = S[:, j]
        miss = np.isnan(col)
        if not miss.any():
            continue
        ref = col[labeled & ~miss]
        if ref.size == 0:
            ref = col[~miss]
        col[miss] = np.median(ref) if ref.size else 0.0
        imputed += int(miss.sum())

    warnings = {"dropped_no_socio": dropped, "imputed_footprints": missing_fp, "imputed_socio_cells": imputed}
    for key, n in warnings.items():
        if n:
            log.warning("join_dataset: %s = %d", key, n)
    return Dataset(tuple(kept), {k: tuple(v) for k, v in fac.items()}, socio.names, S, F, warnings)


def facilities_path(directory, kind) -> str:
    return os.path.join(directory, f"facilities_{Kind.parse(kind).slug}.csv")


def load_dataset(directory, geojson: str | None = None) -> Dataset:
    """Load the standard file set from ``directory`` and join it.

    Missing facility files are treated as empty; ``footprints.csv`` is optional.
    """
    polygons = None
    gj = geojson or os.path.join(directory, "tracts.geojson")
    if os.path.exists(gj):
        polygons = load_tract_polygons(gj)
    tracts = load_tracts(os.path.join(directory, "tracts.csv"), polygons)
    facilities = []
    for kind in FACILITY_KINDS:
        p = facilities_path(directory, kind)
        if os.path.exists(p):
            facilities.extend(load_facilities(p, kind))
    socio = load_socio(os.path.join(directory, "socio.csv"))
    fp_path = os.path.join(directory, "footprints.csv")
    fps = load_footprints(fp_path) if os.path.exists(fp_path) else None
    return join_dataset(tracts, facilities, socio, fps)


def _num(v) -> str:
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def write_dataset(ds: Dataset, directory, header: str | None = None) -> list[str]:
    """Write ``ds`` in the standard file layout; returns the written paths."""
    from ._io import open_output

    os.makedirs(directory, exist_ok=True)
    paths = []

    def emit(name, head, rows):
        path = os.path.join(directory, name)
        with open_output(path, header) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(head)
            w.writerows(rows)
        paths.append(path)

    emit(
        "tracts.csv",
        ("geoid", "lat", "lon", "label"),
        ((t.id, repr(t.center.lat), repr(t.center.lon), "NA" if t.label is None else t.label) for t in ds.tracts),
    )
    for kind in FACILITY_KINDS:
        emit(
            f"facilities_{kind.slug}.csv",
            ("id", "lat", "lon"),
            ((f.id, repr(f.location.lat), repr(f.location.lon)) for f in ds.facilities[kind]),
        )
    emit(
        "socio.csv",
        ("geoid",) + tuple(ds.socio_names),
        ([t.id] + [repr(float(v)) for v in row] for t, row in zip(ds.tracts, ds.socio)),
    )
    emit(
        "footprints.csv",
        ("geoid",) + FOOTPRINT_COLUMNS,
        ([t.id] + [_num(v) for v in row] for t, row in zip(ds.tracts, ds.footprints)),
    )
    return paths
