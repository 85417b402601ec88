"""Synthetic city generator with planted signals.

Tract centers are uniform over a lat/lon box; facilities of each kind are
drawn around a handful of cluster centers. A tract's true log-odds is

    intercept + socio_effect * (w . z_informative)
              + sum over kinds of effect_kind * exp(-d_nearest_kind / 1 km)

where ``z`` are standard-normal latent socio values (the written columns are
affine rescalings of them) and ``w`` is a unit vector whose entries have
random signs and magnitudes within a factor of two of each other. The intercept is
found by bisection so that, after label noise, the expected prevalence hits
the target. Footprint statistics are driven by a noisy copy of the log-odds.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import kernels
from .evaluation import auc
from .geo import GeoPoint
from .ingest import FACILITY_KINDS, Dataset, Facility, Kind, Tract

KM_PER_DEG = math.pi * 6371.0088 / 180.0


@dataclass(frozen=True)
class SynthConfig:
    n_tracts: int = 2000
    n_schools: int = 400
    n_hospitals: int = 50
    n_subways: int = 150
    center_lat: float = 41.8
    center_lon: float = -87.7
    extent_deg: float = 0.3
    facility_cluster_size: int = 10
    cluster_spread_km: float = 1.0
    n_socio_features: int = 40
    n_informative_socio: int = 5
    socio_effect: float = 4.0
    school_proximity_effect: float = 5.0
    hospital_effect: float = 0.0
    subway_effect: float = 0.5
    footprint_effect: float = 0.5
    label_noise: float = 0.02
    prevalence: float = 0.2
    unlabeled_fraction: float = 0.0
    n_positive: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_informative_socio > self.n_socio_features:
            raise ValueError("n_informative_socio exceeds n_socio_features")
        if not 0.0 <= self.label_noise < 0.5:
            raise ValueError("label_noise must be in [0, 0.5)")
        for name in ("n_tracts", "n_schools", "n_hospitals", "n_subways", "facility_cluster_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.label_noise < self.prevalence < 1.0 - self.label_noise:
            raise ValueError("prevalence must lie strictly between label_noise and 1 - label_noise")
        if not 0.0 <= self.footprint_effect <= 1.0:
            raise ValueError("footprint_effect is a correlation and must be in [0, 1]")
        if not 0.0 <= self.unlabeled_fraction < 1.0:
            raise ValueError("unlabeled_fraction must be in [0, 1)")
        if self.n_positive is not None and not 0 < self.n_positive < self.n_tracts:
            raise ValueError("n_positive must be in (0, n_tracts)")

    @classmethod
    def chicago_like(cls, **overrides) -> "SynthConfig":
        """Counts shaped like the Chicago column of the source data (782 tracts, 155 positive).

        Facilities are scattered individually so that every hospital is some
        tract's nearest or second nearest, as in the source network counts.
        """
        base = dict(
            n_tracts=782,
            n_schools=745,
            n_hospitals=48,
            n_subways=137,
            prevalence=155 / 782,
            n_positive=155,
            facility_cluster_size=1,
        )
        base.update(overrides)
        return cls(**base)

    def facility_count(self, kind: Kind) -> int:
        return {Kind.SCHOOL: self.n_schools, Kind.HOSPITAL: self.n_hospitals, Kind.SUBWAY: self.n_subways}[kind]

    def effect(self, kind: Kind) -> float:
        return {
            Kind.SCHOOL: self.school_proximity_effect,
            Kind.HOSPITAL: self.hospital_effect,
            Kind.SUBWAY: self.subway_effect,
        }[kind]

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def with_(self, **kw) -> "SynthConfig":
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    tract_ids: tuple[str, ...]
    log_odds: np.ndarray
    informative: tuple[int, ...]
    weights: np.ndarray  # full length, zero on noise columns
    intercept: float
    proximity: dict  # Kind -> per-tract exp(-d_nearest / 1 km)
    clean_labels: np.ndarray

    @property
    def noise_features(self) -> tuple[int, ...]:
        inf = set(self.informative)
        return tuple(j for j in range(len(self.weights)) if j not in inf)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def calibrate_intercept(rest: np.ndarray, target: float, lo=-40.0, hi=40.0, iters=200) -> float:
    """Bisection for b with mean(sigmoid(b + rest)) == target."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _sigmoid(mid + rest).mean() < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _clustered_points(rng, n, cfg: SynthConfig):
    n_clusters = max(1, int(round(n / cfg.facility_cluster_size)))
    half = cfg.extent_deg / 2.0
    centers_lat = cfg.center_lat + rng.uniform(-half, half, n_clusters)
    centers_lon = cfg.center_lon + rng.uniform(-half, half, n_clusters)
    which = rng.integers(0, n_clusters, n)
    km_lon = KM_PER_DEG * math.cos(math.radians(cfg.center_lat))
    lat = centers_lat[which] + rng.normal(0.0, cfg.cluster_spread_km, n) / KM_PER_DEG
    lon = centers_lon[which] + rng.normal(0.0, cfg.cluster_spread_km, n) / km_lon
    lat = np.clip(lat, cfg.center_lat - half, cfg.center_lat + half)
    lon = np.clip(lon, cfg.center_lon - half, cfg.center_lon + half)
    return lat, lon


def generate(cfg: SynthConfig) -> tuple[Dataset, GroundTruth]:
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0x5EED]))
    half = cfg.extent_deg / 2.0
    n = cfg.n_tracts

    tlat = cfg.center_lat + rng.uniform(-half, half, n)
    tlon = cfg.center_lon + rng.uniform(-half, half, n)
    tract_ids = tuple(f"17031{i:06d}" for i in range(n))

    facilities = {}
    proximity = {}
    for kind in FACILITY_KINDS:
        m = cfg.facility_count(kind)
        flat, flon = _clustered_points(rng, m, cfg)
        prefix = kind.slug[0].upper()
        facilities[kind] = tuple(
            Facility(f"{prefix}{j:05d}", kind, GeoPoint(a, b)) for j, (a, b) in enumerate(zip(flat, flon))
        )
        d = kernels.haversine_matrix(tlat, tlon, flat, flon).min(axis=1)
        proximity[kind] = np.exp(-d / 1.0)

    m = cfg.n_socio_features
    z = rng.normal(size=(n, m))
    informative = tuple(sorted(rng.choice(m, cfg.n_informative_socio, replace=False).tolist()))
    w_full = np.zeros(m)
    if informative:
        # bounded away from zero so every planted column carries signal
        w = rng.choice((-1.0, 1.0), len(informative)) * rng.uniform(0.5, 1.0, len(informative))
        w /= np.linalg.norm(w)
        w_full[list(informative)] = w
    scale = 10.0 ** rng.uniform(-1.0, 3.0, m)
    offset = rng.normal(0.0, 1.0, m) * scale * 3.0
    socio = offset + scale * z

    rest = cfg.socio_effect * (z @ w_full)
    for kind in FACILITY_KINDS:
        rest = rest + cfg.effect(kind) * proximity[kind]
    eta = cfg.label_noise
    clean_target = (cfg.prevalence - eta) / (1.0 - 2.0 * eta)
    b0 = calibrate_intercept(rest, clean_target)
    log_odds = b0 + rest
    clean = (rng.uniform(size=n) < _sigmoid(log_odds)).astype(np.int64)
    flip = rng.uniform(size=n) < eta
    labels = np.where(flip, 1 - clean, clean)
    if cfg.n_positive is not None:
        # Bernoulli(q) is [logit(q) + Logistic noise > 0]; keeping the top
        # n_positive latents instead of thresholding at 0 fixes the count
        q = eta + (1.0 - 2.0 * eta) * _sigmoid(log_odds)
        latent = np.log(q) - np.log1p(-q) + rng.logistic(size=n)
        labels = np.zeros(n, dtype=np.int64)
        labels[np.argsort(-latent, kind="stable")[: cfg.n_positive]] = 1
    unlabeled = rng.uniform(size=n) < cfg.unlabeled_fraction

    sd = log_odds.std()
    latent = (log_odds - log_odds.mean()) / (sd if sd > 0 else 1.0)
    rho = cfg.footprint_effect
    f = rho * latent + math.sqrt(1.0 - rho * rho) * rng.normal(size=n)
    count = rng.poisson(60.0 * np.exp(0.3 * f)).astype(np.float64)
    mean_area = np.round(np.exp(math.log(250.0) + 0.35 * f + 0.2 * rng.normal(size=n)), 3)
    perim = np.round(count * 4.0 * np.sqrt(mean_area) * np.exp(0.05 * rng.normal(size=n)), 3)
    mean_area = np.where(count > 0, mean_area, 0.0)
    perim = np.where(count > 0, perim, 0.0)
    footprints = np.column_stack([count, perim, count * mean_area, mean_area])

    tracts = tuple(
        Tract(tid, GeoPoint(a, b), None if u else int(lab))
        for tid, a, b, lab, u in zip(tract_ids, tlat, tlon, labels, unlabeled)
    )
    names = tuple(f"socio_{j:02d}" for j in range(m))
    ds = Dataset(tracts, facilities, names, socio, footprints, {})
    gt = GroundTruth(
        tract_ids=tract_ids,
        log_odds=log_odds,
        informative=informative,
        weights=w_full,
        intercept=float(b0),
        proximity=proximity,
        clean_labels=clean,
    )
    return ds, gt


def oracle_bayes_auc(gt: GroundTruth, ds: Dataset, ids=None) -> float:
    """AUC of the true log-odds against the realised labels (labeled tracts, optionally restricted to ``ids``)."""
    pos = {tid: i for i, tid in enumerate(gt.tract_ids)}
    keep = None if ids is None else set(ids)
    scores, labels = [], []
    for t in ds.tracts:
        if t.label is None or (keep is not None and t.id not in keep):
            continue
        scores.append(gt.log_odds[pos[t.id]])
        labels.append(t.label)
    return auc(np.array(scores), np.array(labels))
