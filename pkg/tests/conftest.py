import math

import numpy as np
import pytest

from urbangraph.geo import GeoPoint
from urbangraph.ingest import FACILITY_KINDS, Dataset, Facility, Kind, Tract

R_EARTH = 6371.0088


def hav_km(a, b):
    """Reference great-circle distance written independently of the package."""
    p1, p2 = math.radians(a[0]), math.radians(b[0])
    dp = p2 - p1
    dl = math.radians(b[1] - a[1])
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * R_EARTH * math.asin(min(1.0, math.sqrt(h)))


def make_dataset(tracts, facilities=None, n_socio=2, seed=0):
    """``tracts``: [(id, lat, lon, label)]; ``facilities``: {Kind: [(id, lat, lon)]}."""
    rng = np.random.default_rng(seed)
    ts = tuple(Tract(i, GeoPoint(a, b), lab) for i, a, b, lab in tracts)
    fac = {k: () for k in FACILITY_KINDS}
    for k, rows in (facilities or {}).items():
        fac[Kind.parse(k)] = tuple(Facility(i, Kind.parse(k), GeoPoint(a, b)) for i, a, b in rows)
    names = tuple(f"x{j}" for j in range(n_socio))
    socio = rng.normal(size=(len(ts), n_socio))
    fp = np.column_stack([np.full(len(ts), 10.0), np.full(len(ts), 400.0), np.full(len(ts), 1000.0), np.full(len(ts), 100.0)])
    return Dataset(ts, fac, names, socio, fp, {})


def random_dataset(rng, n_tracts, n_fac, kinds=FACILITY_KINDS, grid=None, labels=True):
    """Random instance; ``grid`` snaps coordinates to a coarse lattice to force distance ties."""

    def coord():
        if grid:
            return 41.8 + 0.01 * rng.integers(0, grid), -87.7 + 0.01 * rng.integers(0, grid)
        return 41.8 + rng.uniform(0, 0.1), -87.7 + rng.uniform(0, 0.1)

    tracts = []
    for i in range(n_tracts):
        a, b = coord()
        tracts.append((f"T{i:03d}", a, b, int(rng.integers(0, 2)) if labels else None))
    fac = {}
    for k in kinds:
        m = n_fac if isinstance(n_fac, int) else n_fac[k]
        rows = []
        for j in range(m):
            a, b = coord()
            rows.append((f"{Kind.parse(k).slug[0].upper()}{j:03d}", a, b))
        fac[k] = rows
    return make_dataset(tracts, fac)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria record one line each here; printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
