import json
import os

import numpy as np
import pytest

from urbangraph.ingest import (
    DuplicateId,
    FootprintTable,
    Kind,
    ParseError,
    SocioTable,
    UnknownTractId,
    join_dataset,
    load_dataset,
    load_facilities,
    load_footprints,
    load_socio,
    load_tract_polygons,
    load_tracts,
    write_dataset,
)
from urbangraph.synth import SynthConfig, generate


def write(path, text):
    with open(path, "w") as fh:
        fh.write(text)
    return str(path)


def test_three_tracts(tmp_path):
    p = write(tmp_path / "t.csv", "geoid,lat,lon,label\nA,41.8,-87.6,1\nB,41.9,-87.7,0\nC,41.7,-87.5,NA\n")
    ts = load_tracts(p)
    assert [t.id for t in ts] == ["A", "B", "C"]
    assert [t.label for t in ts] == [1, 0, None]


def test_duplicate_geoid(tmp_path):
    p = write(tmp_path / "t.csv", "geoid,lat,lon,label\nA,41.8,-87.6,1\nA,41.9,-87.7,0\n")
    with pytest.raises(DuplicateId):
        load_tracts(p)


def test_chicago_label_counts(tmp_path):
    lines = ["geoid,lat,lon,label"]
    for i in range(782):
        lines.append(f"{i:011d},41.8,-87.7,{1 if i < 155 else 0}")
    ts = load_tracts(write(tmp_path / "t.csv", "\n".join(lines) + "\n"))
    labels = [t.label for t in ts]
    assert (labels.count(1), labels.count(0)) == (155, 627)


def test_hospital_file(tmp_path):
    body = "id,lat,lon\n" + "".join(f"H{i},41.{i:02d},-87.6\n" for i in range(48))
    fac = load_facilities(write(tmp_path / "h.csv", body), "hospital")
    assert len(fac) == 48 and all(f.kind == Kind.HOSPITAL for f in fac)


def test_empty_facility_file(tmp_path):
    assert load_facilities(write(tmp_path / "s.csv", "id,lat,lon\n"), Kind.SCHOOL) == []


def test_latitude_out_of_bounds(tmp_path):
    with pytest.raises(ParseError) as e:
        load_facilities(write(tmp_path / "s.csv", "id,lat,lon\nS1,95,-87\n"), "school")
    assert e.value.line == 2


def test_parse_errors_name_line(tmp_path):
    p = write(tmp_path / "t.csv", "geoid,lat,lon,label\nA,41.8,-87.6,1\nB,41.9,-87.7,2\n")
    with pytest.raises(ParseError, match="label"):
        load_tracts(p)
    with pytest.raises(ParseError):
        load_tracts(write(tmp_path / "bad.csv", "id,lat\nA,1\n"))


def _socio(ids, names=("a", "b")):
    return SocioTable(tuple(names), tuple(ids), np.arange(len(ids) * len(names), dtype=float).reshape(len(ids), -1))


def test_join_clean(tmp_path):
    ds, _ = generate(SynthConfig(n_tracts=30, n_schools=5, n_hospitals=3, n_subways=4))
    d2 = join_dataset(ds.tracts, ds.facilities, SocioTable(ds.socio_names, tuple(ds.tract_ids), ds.socio), FootprintTable(tuple(ds.tract_ids), ds.footprints))
    assert sum(d2.warnings.values()) == 0
    assert d2 == ds


def test_join_unknown_id():
    ds, _ = generate(SynthConfig(n_tracts=10, n_schools=2, n_hospitals=2, n_subways=2))
    with pytest.raises(UnknownTractId):
        join_dataset(ds.tracts, ds.facilities, _socio(list(ds.tract_ids) + ["nope"]))


def test_join_missing_footprints():
    ds, _ = generate(SynthConfig(n_tracts=10, n_schools=2, n_hospitals=2, n_subways=2))
    ids = tuple(ds.tract_ids)
    fp = FootprintTable(ids[2:], ds.footprints[2:])
    d2 = join_dataset(ds.tracts, ds.facilities, _socio(ids), fp)
    assert len(d2.tracts) == 10
    assert d2.warnings["imputed_footprints"] == 2
    assert np.all(d2.footprints[:2] == 0)


def test_join_drops_tracts_without_socio():
    ds, _ = generate(SynthConfig(n_tracts=10, n_schools=2, n_hospitals=2, n_subways=2))
    d2 = join_dataset(ds.tracts, ds.facilities, _socio(ds.tract_ids[:7]))
    assert len(d2.tracts) == 7 and d2.warnings["dropped_no_socio"] == 3


def test_median_imputation_uses_labeled_rows():
    ds, _ = generate(SynthConfig(n_tracts=10, n_schools=2, n_hospitals=2, n_subways=2))
    vals = np.arange(10, dtype=float)[:, None].copy()
    vals[0, 0] = np.nan
    d2 = join_dataset(ds.tracts, ds.facilities, SocioTable(("a",), tuple(ds.tract_ids), vals))
    assert d2.socio[0, 0] == np.median(vals[1:, 0])
    assert d2.warnings["imputed_socio_cells"] == 1


def test_footprint_identity_checked(tmp_path):
    head = "geoid,building_count,total_perimeter_m,total_area_m2,mean_area_m2\n"
    assert load_footprints(write(tmp_path / "ok.csv", head + "A,4,100,400,100\n")).values.shape == (1, 4)
    with pytest.raises(ParseError):
        load_footprints(write(tmp_path / "bad.csv", head + "A,4,100,401,100\n"))


def test_socio_empty_cells(tmp_path):
    t = load_socio(write(tmp_path / "s.csv", "geoid,a,b\nA,1,\nB,,2\n"))
    assert np.isnan(t.values[0, 1]) and np.isnan(t.values[1, 0])


def test_round_trip(tmp_path):
    ds, _ = generate(SynthConfig(n_tracts=40, n_schools=6, n_hospitals=3, n_subways=5, unlabeled_fraction=0.2))
    write_dataset(ds, tmp_path / "d", "header line")
    again = load_dataset(tmp_path / "d")
    assert again == ds
    assert sum(again.warnings.values()) == 0


def test_order_independent(tmp_path, rng):
    ds, _ = generate(SynthConfig(n_tracts=25, n_schools=4, n_hospitals=3, n_subways=3))
    perm = rng.permutation(len(ds.tracts))
    shuffled = join_dataset(
        [ds.tracts[i] for i in perm],
        [f for k in ds.facilities for f in reversed(ds.facilities[k])],
        SocioTable(ds.socio_names, tuple(ds.tract_ids[i] for i in perm[::-1]), ds.socio[perm[::-1]]),
        FootprintTable(tuple(ds.tract_ids[i] for i in perm), ds.footprints[perm]),
    )
    assert shuffled.sorted() == ds.sorted()


def test_geojson_centroid(tmp_path):
    gj = {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "properties": {"geoid": "A"},
                "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]]]},
            }
        ],
    }
    p = write(tmp_path / "t.geojson", json.dumps(gj))
    polys = load_tract_polygons(p)
    ts = load_tracts(write(tmp_path / "t.csv", "geoid,lat,lon,label\nA,,,1\n"), polys)
    assert ts[0].center.lat == pytest.approx(0.5) and ts[0].center.lon == pytest.approx(0.5)


def test_supplied_point_overrides_polygon(tmp_path):
    gj = {"type": "FeatureCollection", "features": [{"type": "Feature", "properties": {"geoid": "A"}, "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 1]]]}}]}
    polys = load_tract_polygons(write(tmp_path / "t.geojson", json.dumps(gj)))
    ts = load_tracts(write(tmp_path / "t.csv", "geoid,lat,lon,label\nA,0.2,0.3,1\n"), polys)
    assert (ts[0].center.lat, ts[0].center.lon) == (0.2, 0.3)


def test_dataset_immutable():
    ds, _ = generate(SynthConfig(n_tracts=10, n_schools=2, n_hospitals=2, n_subways=2))
    with pytest.raises(ValueError):
        ds.socio[0, 0] = 1.0
