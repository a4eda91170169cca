"""Trimodal solar dataset: on-disk format, synthetic generator, windowing,
capacity / NWP normalization and train/val/test splits.

On-disk layout::

    manifest.json        plants, dates, split boundaries, normalization stats
    plants.csv           plant_id, lat, lon (normalized), capacity_kw, lat_deg, lon_deg
    ts/{plant_id}.csv    timestamp (ISO-8601 UTC), power_kw
    ctx/{date}.fstn      [24, C_ctx, H, W] cloud optical field for one local day
    nwp/{plant_id}.fstn  [n_hours, C_aux] raw NWP features
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import container
from .baseline import clearsky_ghi, solar_zenith
from .config import derive_rng
from .model import Batch

log = logging.getLogger(__name__)

NWP_FEATURES = [
    "clear_sky_direct_solar_radiation",
    "direct_solar_radiation",
    "downward_uv_radiation",
    "surface_solar_radiation_downwards",
    "surface_net_solar_radiation",
    "surface_pressure",
    "sunshine_duration",
    "low_cloud_cover",
    "total_cloud_cover",
    "temperature_2m",
    "dewpoint_2m",
    "skin_temperature",
    "total_precipitation",
    "wind_u_100m",
    "wind_v_100m",
]
DEFAULT_FRACTIONS = (0.6, 0.2, 0.2)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class PlantMeta:
    plant_id: str
    lat: float  # normalized to [-1, 1]
    lon: float
    capacity: float  # kW
    lat_deg: float = 0.0
    lon_deg: float = 0.0

    @property
    def pos(self) -> tuple[float, float]:
        return (self.lat, self.lon)


@dataclass
class SampleWindow:
    x_ts: np.ndarray  # [T_in, C_ts]
    x_ctx: np.ndarray  # [T_in, C_ctx, H, W]
    x_aux: np.ndarray  # [T_out, C_aux]
    y: np.ndarray  # [T_out, C_ts]
    plant: PlantMeta
    t0: int  # epoch hour of the first forecast hour


@dataclass
class Dataset:
    manifest: dict
    plants: list[PlantMeta]
    hours: np.ndarray  # [n_hours] epoch hours (UTC)
    power: np.ndarray  # [n_plants, n_hours]; kW raw, capacity fraction once normalized
    ctx: np.ndarray  # [n_days, 24, C_ctx, H, W]
    nwp: np.ndarray  # [n_plants, n_hours, C_aux]
    normalized: bool = False

    @property
    def n_days(self) -> int:
        return len(self.hours) // 24

    def plant_index(self, plant_id: str) -> int:
        for i, p in enumerate(self.plants):
            if p.plant_id == plant_id:
                return i
        raise KeyError(plant_id)


# ---------------------------------------------------------------- time helpers


def epoch_hours(ts: str) -> int:
    dt = datetime.fromisoformat(ts.replace("Z", "+00:00"))
    return int(round(dt.timestamp() / 3600.0))


def iso_utc(hour: int) -> str:
    return datetime.fromtimestamp(int(hour) * 3600, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _local_dates(start: str, n_days: int) -> list[str]:
    d0 = np.datetime64(start, "D")
    return [str(d0 + i) for i in range(n_days)]


# ---------------------------------------------------------------- synthetic generator


@dataclass
class SynthParams:
    n_plants: int = 10
    n_days: int = 120
    grid: tuple = (32, 32)
    seed: int = 42
    start: str = "2021-01-01"
    utc_offset_hours: int = 8
    center_lat: float = 30.0
    center_lon: float = 110.0
    half_extent_deg: float = 2.0
    cloud_scale: float = 1.0
    noise: bool = True
    synoptic_rate: float = 0.35  # blob births per hour at full cloudiness
    persistent_prob: float = 0.45  # chance per day of a slow-moving, unforecast cloud deck
    spinup_hours: int = 72


@dataclass
class Blob:
    born: int
    life: float
    sigma: float
    amp: float
    lat: float
    lon: float
    drift: float  # fraction of the ambient wind the blob follows
    flat: bool  # plateau envelope rather than a sine bump

    def envelope(self, age: np.ndarray) -> np.ndarray:
        a = np.asarray(age, dtype=np.float64)
        inside = (a >= 0) & (a <= self.life)
        if self.flat:
            ramp = np.minimum(1.0, np.minimum(a, self.life - a) / 6.0)
        else:
            ramp = np.sin(np.pi * a / self.life)
        return np.where(inside, np.clip(ramp, 0.0, 1.0), 0.0)


def _gauss_field(blobs: list[Blob], k: int, disp: np.ndarray, lat: np.ndarray, lon: np.ndarray, k0: int) -> np.ndarray:
    out = np.zeros(lat.shape)
    for b in blobs:
        env = float(b.envelope(k - b.born))
        if env <= 0:
            continue
        d = (disp[k - k0] - disp[b.born - k0]) * b.drift
        clat, clon = b.lat + d[0], b.lon + d[1]
        out += b.amp * env * np.exp(-((lat - clat) ** 2 + (lon - clon) ** 2) / (2.0 * b.sigma**2))
    return out


def cloud_fields(params: SynthParams, blobs: list[Blob], disp: np.ndarray, lat: np.ndarray, lon: np.ndarray, n_hours: int):
    """Evaluate blobs on arbitrary normalized coordinates for hours ``0..n_hours-1``."""
    k0 = -params.spinup_hours
    out = np.zeros((n_hours,) + lat.shape)
    born = np.array([b.born for b in blobs])
    end = np.array([b.born + b.life for b in blobs])
    for k in range(n_hours):
        live = np.flatnonzero((born <= k) & (k <= end)) if len(blobs) else []
        out[k] = _gauss_field([blobs[i] for i in live], k, disp, lat, lon, k0)
    return out


def _ar1(rng, n, mean, phi, sd, lo=None, hi=None):
    x = np.empty(n)
    prev = mean
    for i in range(n):
        prev = mean + phi * (prev - mean) + rng.normal(0.0, sd)
        if lo is not None:
            prev = min(max(prev, lo), hi)
        x[i] = prev
    return x


def _smooth(x: np.ndarray, width: int = 3) -> np.ndarray:
    kernel = np.ones(width) / width
    pad = width // 2
    xp = np.pad(x, [(pad, pad)] + [(0, 0)] * (x.ndim - 1), mode="edge")
    return np.apply_along_axis(lambda v: np.convolve(v, kernel, mode="valid"), 0, xp)


def synthesize(params: SynthParams) -> Dataset:
    """Build the synthetic dataset in memory (deterministic in ``params.seed``)."""
    if params.n_plants < 1 or params.n_days < 4:
        raise DataError("synthetic data needs at least 1 plant and 4 days")
    seed = params.seed
    h_px, w_px = params.grid
    n_days, n_hours = params.n_days, 24 * params.n_days
    k0 = -params.spinup_hours
    span = n_hours - k0

    # plants
    rng = derive_rng(seed, "plants")
    lat_n = rng.uniform(-0.8, 0.8, params.n_plants)
    lon_n = rng.uniform(-0.8, 0.8, params.n_plants)
    capacity = np.round(rng.uniform(5000.0, 50000.0, params.n_plants), 1)
    efficiency = rng.uniform(0.75, 0.92, params.n_plants)
    ext = params.half_extent_deg
    plants = [
        PlantMeta(f"plant_{i:02d}", float(lat_n[i]), float(lon_n[i]), float(capacity[i]),
                  float(params.center_lat + ext * lat_n[i]), float(params.center_lon + ext * lon_n[i]))
        for i in range(params.n_plants)
    ]

    # time axis: local midnight of the first day, expressed in UTC epoch hours
    first = epoch_hours(params.start + "T00:00:00Z") - params.utc_offset_hours
    hours = first + np.arange(n_hours)

    # weather drivers
    rng = derive_rng(seed, "weather")
    n_drv_days = span // 24 + 2
    cloudiness = _ar1(rng, n_drv_days, 0.45, 0.55, 0.3, 0.0, 1.0)
    wind_u = _ar1(rng, n_drv_days, 0.0, 0.7, 0.02)
    wind_v = _ar1(rng, n_drv_days, 0.02, 0.7, 0.02)
    day_of = lambda k: (k - k0) // 24  # noqa: E731
    steps = np.stack([wind_v[[day_of(k) for k in range(k0, n_hours)]], wind_u[[day_of(k) for k in range(k0, n_hours)]]], axis=1)
    disp = np.concatenate([np.zeros((1, 2)), np.cumsum(steps, axis=0)])  # displacement at hour index k - k0

    blobs: list[Blob] = []
    for k in range(k0, n_hours):
        rate = params.synoptic_rate * cloudiness[day_of(k)]
        for _ in range(rng.poisson(rate)):
            blobs.append(Blob(k, rng.uniform(8, 36), rng.uniform(0.15, 0.5), rng.uniform(0.4, 1.3),
                              rng.uniform(-1.6, 1.6), rng.uniform(-1.6, 1.6), 1.0, False))
        if (k - k0) % 24 == 0 and rng.random() < params.persistent_prob:
            blobs.append(Blob(k, rng.uniform(48, 96), rng.uniform(0.3, 0.6), rng.uniform(0.5, 1.0),
                              rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), 0.3, True))
    for b in blobs:
        b.amp *= params.cloud_scale
    synoptic = [b for b in blobs if not b.flat]
    persistent = [b for b in blobs if b.flat]

    px_lat = np.broadcast_to((1.0 - (2.0 * np.arange(h_px) + 1.0) / h_px)[:, None], (h_px, w_px))
    px_lon = np.broadcast_to((-1.0 + (2.0 * np.arange(w_px) + 1.0) / w_px)[None, :], (h_px, w_px))
    field_syn = cloud_fields(params, synoptic, disp, px_lat, px_lon, n_hours)
    field_per = cloud_fields(params, persistent, disp, px_lat, px_lon, n_hours)
    cloud_img = np.clip(field_syn + field_per, 0.0, 1.0)
    syn_p = cloud_fields(params, synoptic, disp, lat_n, lon_n, n_hours)  # [n_hours, P]
    per_p = cloud_fields(params, persistent, disp, lat_n, lon_n, n_hours)
    attenuation = np.clip(syn_p + per_p, 0.0, 1.0)

    # satellite context: visible-band field, dark where the sun is down
    px_zen = solar_zenith(params.center_lat + ext * px_lat[None], params.center_lon + ext * px_lon[None], hours[:, None, None])
    cloud_img = np.where(px_zen < 90.0, cloud_img, 0.0)
    ctx = cloud_img.reshape(n_days, 24, 1, h_px, w_px)

    # power
    lat_d = np.array([p.lat_deg for p in plants])
    lon_d = np.array([p.lon_deg for p in plants])
    zen = solar_zenith(lat_d[None], lon_d[None], hours[:, None])  # [n_hours, P]
    ghi = clearsky_ghi(zen)
    clear = efficiency[None] * ghi / 1000.0
    frac = clear * (1.0 - attenuation)
    rng = derive_rng(seed, "noise")
    if params.noise:
        frac = frac * (1.0 + 0.03 * rng.standard_normal(frac.shape))
    frac = np.clip(frac, 0.0, 1.0)
    power = (frac * capacity[None]).T.copy()  # [P, n_hours]

    # NWP: forecasts the synoptic deck only, smoothed, with daily bias and noise
    rng = derive_rng(seed, "nwp")
    bias = 1.0 + 0.2 * rng.standard_normal((n_days, params.n_plants))
    fc_cloud = _smooth(syn_p, 3) * np.repeat(bias, 24, axis=0) + 0.05 * rng.standard_normal(syn_p.shape)
    fc_cloud = np.clip(fc_cloud, 0.0, 1.0)
    ghi_fc = ghi * (1.0 - 0.85 * fc_cloud)
    doy_phase = 2 * np.pi * ((hours[:, None] / 24.0) % 365.25) / 365.25
    diurnal = ghi / 1000.0
    t2m = 288.0 - 8.0 * np.cos(doy_phase) + 6.0 * diurnal * (1 - 0.5 * fc_cloud) + rng.normal(0, 0.5, syn_p.shape)
    pressure = 1000.0 + np.repeat(_ar1(rng, n_days, 0.0, 0.8, 3.0), 24)[:, None] + rng.normal(0, 0.3, syn_p.shape)
    wind_days = np.arange(n_days) + (-k0) // 24
    u100 = np.repeat(wind_u[wind_days], 24)[:, None] * 200.0 + rng.normal(0, 0.5, syn_p.shape)
    v100 = np.repeat(wind_v[wind_days], 24)[:, None] * 200.0 + rng.normal(0, 0.5, syn_p.shape)
    feats = [
        0.8 * ghi,
        0.8 * ghi * (1.0 - fc_cloud),
        0.05 * ghi * (1.0 - 0.5 * fc_cloud),
        ghi_fc,
        0.8 * ghi_fc,
        pressure,
        3600.0 * (1.0 - fc_cloud) * (ghi > 0),
        np.clip(fc_cloud * 0.8 + 0.05 * rng.standard_normal(syn_p.shape), 0.0, 1.0),
        fc_cloud,
        t2m,
        t2m - 3.0 - 6.0 * (1.0 - fc_cloud),
        t2m + 0.01 * ghi_fc,
        5.0 * np.maximum(fc_cloud - 0.7, 0.0),
        u100,
        v100,
    ]
    nwp = np.stack(feats, axis=-1).transpose(1, 0, 2).copy()  # [P, n_hours, 15]

    manifest = {
        "format": "fusionsf-dataset/1",
        "n_plants": params.n_plants,
        "n_days": n_days,
        "start_local": params.start,
        "utc_offset_hours": params.utc_offset_hours,
        "first_hour_utc": iso_utc(int(hours[0])),
        "resolution_minutes": 60,
        "grid": [h_px, w_px],
        "ctx_channels": 1,
        "aux_channels": len(NWP_FEATURES),
        "nwp_features": NWP_FEATURES,
        "plants": [p.plant_id for p in plants],
        "dates": _local_dates(params.start, n_days),
        "generator": {k: (list(v) if isinstance(v, tuple) else v) for k, v in params.__dict__.items()},
    }
    ds = Dataset(manifest, plants, hours, power, ctx, nwp)
    try:
        manifest["split"] = split_boundaries(n_days - 1, DEFAULT_FRACTIONS)
    except DataError:
        manifest["split"] = None  # too short to split; statistics then cover every window
    manifest["normalization"] = nwp_statistics(ds)
    return ds


# ---------------------------------------------------------------- disk format


def write_dataset(ds: Dataset, path) -> dict:
    path = Path(path)
    for sub in ("ts", "ctx", "nwp"):
        (path / sub).mkdir(parents=True, exist_ok=True)
    files = {"plants": "plants.csv", "ts": {}, "ctx": {}, "nwp": {}}
    with open(path / "plants.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plant_id", "lat", "lon", "capacity_kw", "lat_deg", "lon_deg"])
        for p in ds.plants:
            w.writerow([p.plant_id, repr(p.lat), repr(p.lon), repr(p.capacity), repr(p.lat_deg), repr(p.lon_deg)])
    stamps = [iso_utc(int(h)) for h in ds.hours]
    for i, p in enumerate(ds.plants):
        rel = f"ts/{p.plant_id}.csv"
        with open(path / rel, "w", newline="") as fh:
            fh.write("timestamp,power_kw\n")
            fh.writelines(f"{s},{float(v)!r}\n" for s, v in zip(stamps, ds.power[i]))
        files["ts"][p.plant_id] = rel
        rel = f"nwp/{p.plant_id}.fstn"
        container.save(path / rel, ds.nwp[i], f"nwp.{p.plant_id}")
        files["nwp"][p.plant_id] = rel
    for d, date in enumerate(ds.manifest["dates"]):
        rel = f"ctx/{date}.fstn"
        container.save(path / rel, ds.ctx[d], f"ctx.{date}")
        files["ctx"][date] = rel
    manifest = dict(ds.manifest)
    manifest["files"] = files
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def synth_generate(path, n_plants=10, n_days=120, grid=(32, 32), seed=42, **kwargs) -> dict:
    """Generate and write a synthetic dataset; returns the manifest."""
    ds = synthesize(SynthParams(n_plants=n_plants, n_days=n_days, grid=tuple(grid), seed=seed, **kwargs))
    return write_dataset(ds, path)


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path / 'manifest.json'}: {exc}") from None
    plants = []
    try:
        with open(path / "plants.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                plants.append(PlantMeta(row["plant_id"], float(row["lat"]), float(row["lon"]), float(row["capacity_kw"]),
                                        float(row["lat_deg"]), float(row["lon_deg"])))
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"{path / 'plants.csv'}: {exc}") from None
    ids = [p.plant_id for p in plants]
    if len(set(ids)) != len(ids):
        raise DataError("plants.csv: duplicate plant ids")
    if any(p.capacity <= 0 for p in plants):
        raise DataError("plants.csv: capacities must be positive")
    n_days = manifest["n_days"]
    first = epoch_hours(manifest["first_hour_utc"])
    hours = first + np.arange(24 * n_days)
    power = np.full((len(plants), len(hours)), np.nan)
    nwp = []
    files = manifest["files"]
    for i, p in enumerate(plants):
        fname = path / files["ts"][p.plant_id]
        try:
            with open(fname, newline="") as fh:
                for row in csv.DictReader(fh):
                    k = epoch_hours(row["timestamp"]) - first
                    if 0 <= k < len(hours):
                        power[i, k] = float(row["power_kw"])
        except (OSError, KeyError, ValueError) as exc:
            raise DataError(f"{fname}: {exc}") from None
        arr, _ = container.load(path / files["nwp"][p.plant_id])
        nwp.append(arr)
    ctx = np.stack([container.load(path / files["ctx"][d])[0] for d in manifest["dates"]])
    return Dataset(manifest, plants, hours, power, ctx, np.stack(nwp))


# ---------------------------------------------------------------- normalization


def split_boundaries(n_windows: int, fractions=DEFAULT_FRACTIONS) -> dict:
    """Counts of target days per split for ``n_windows`` day-pair windows per plant."""
    fr = np.asarray(fractions, dtype=np.float64)
    if len(fr) != 3 or (fr <= 0).any() or abs(fr.sum() - 1.0) > 1e-9:
        raise DataError(f"split fractions must be three positive numbers summing to 1, got {list(fractions)}")
    n_train = int(round(fr[0] * n_windows))
    n_val = int(round(fr[1] * n_windows))
    n_test = n_windows - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise DataError(f"{n_windows} windows per plant are too few for three non-empty splits")
    return {"fractions": [float(f) for f in fr], "train": n_train, "val": n_val, "test": n_test}


def nwp_statistics(ds: Dataset, train_days: int | None = None, plants=None) -> dict:
    """Per-channel mean/std of NWP over the target hours of training windows.

    ``plants`` (ids) restricts the statistics to a subset of plants.
    """
    if train_days is None:
        sp = ds.manifest.get("split")
        train_days = sp["train"] if sp else ds.n_days - 1
    rows = slice(None) if plants is None else [ds.plant_index(pid) for pid in plants]
    block = ds.nwp[rows, 24 : 24 * (1 + train_days)].reshape(-1, ds.nwp.shape[-1])
    return {"nwp_mean": block.mean(axis=0).tolist(), "nwp_std": block.std(axis=0).tolist(), "train_days": int(train_days)}


def normalize(ds: Dataset, stats: dict | None = None) -> Dataset:
    """Power to capacity fraction; NWP standardized with training-split statistics."""
    if ds.normalized:
        return ds
    if stats is None:
        stats = ds.manifest.get("normalization") or nwp_statistics(ds)
    cap = np.array([p.capacity for p in ds.plants])
    if (cap <= 0).any():
        raise DataError("capacities must be positive")
    mean = np.asarray(stats["nwp_mean"])
    std = np.asarray(stats["nwp_std"])
    flat = std <= 1e-12
    if flat.any():
        warnings.warn(f"NWP channels {np.flatnonzero(flat).tolist()} have zero variance; passed through centred")
    scale = np.where(flat, 1.0, std)
    manifest = dict(ds.manifest)
    manifest["normalization"] = stats
    return replace(ds, manifest=manifest, power=ds.power / cap[:, None], nwp=(ds.nwp - mean) / scale, normalized=True)


# ---------------------------------------------------------------- windows


@dataclass
class WindowSet:
    """Day-pair windows stored column-wise; contexts are shared per day."""

    x_ts: np.ndarray  # [n, T_in, 1]
    y: np.ndarray  # [n, T_out, 1]
    x_aux: np.ndarray  # [n, T_out, C_aux]
    ctx_day: np.ndarray  # [n] index into ctx (the input day)
    plant_idx: np.ndarray  # [n]
    day: np.ndarray  # [n] target day index
    t0: np.ndarray  # [n] epoch hour of the first target hour
    ctx: np.ndarray = field(repr=False)  # [n_days, 24, C, H, W]
    plants: list = field(repr=False)
    t_in: int = 24

    def __len__(self) -> int:
        return len(self.x_ts)

    def ctx_for(self, rows) -> np.ndarray:
        return self.ctx[self.ctx_day[rows], 24 - self.t_in :]

    def __getitem__(self, i: int) -> SampleWindow:
        return SampleWindow(self.x_ts[i], self.ctx_for(i), self.x_aux[i], self.y[i], self.plants[self.plant_idx[i]], int(self.t0[i]))

    def subset(self, rows) -> WindowSet:
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        rows = rows.astype(np.int64, copy=False)
        return WindowSet(self.x_ts[rows], self.y[rows], self.x_aux[rows], self.ctx_day[rows], self.plant_idx[rows],
                         self.day[rows], self.t0[rows], self.ctx, self.plants, self.t_in)

    def plant_positions(self) -> np.ndarray:
        return np.array([self.plants[i].pos for i in self.plant_idx]).reshape(-1, 2)

    def batch(self, rows) -> Batch:
        rows = np.asarray(rows)
        pos = np.array([self.plants[i].pos for i in self.plant_idx[rows]]).reshape(-1, 2)
        return Batch(self.x_ts[rows], self.ctx_for(rows), self.x_aux[rows], pos, self.y[rows])

    def target_hours(self) -> np.ndarray:
        return self.t0[:, None] + np.arange(self.y.shape[1])

    def plant_ids(self) -> list[str]:
        return [self.plants[i].plant_id for i in self.plant_idx]

    def select_plants(self, plant_ids) -> WindowSet:
        wanted = set(plant_ids)
        return self.subset(np.array([self.plants[i].plant_id in wanted for i in self.plant_idx], dtype=bool))


def build_windows(ds: Dataset, T_in: int = 24, T_out: int = 24, plants=None) -> WindowSet:
    """One window per plant per consecutive day pair: yesterday in, today out.

    Windows touching missing hours are skipped and logged. ``plants`` restricts
    the plant ids that are read.
    """
    if not (1 <= T_in <= 24 and 1 <= T_out <= 24):
        raise DataError("T_in and T_out must lie in [1, 24]")
    n_days = ds.n_days
    chosen = range(len(ds.plants)) if plants is None else [ds.plant_index(pid) for pid in plants]
    cols = {k: [] for k in ("x_ts", "y", "x_aux", "ctx_day", "plant_idx", "day", "t0")}
    for p in chosen:
        series = _read_power(ds, p)
        aux = ds.nwp[p]
        for d in range(1, n_days):
            start = 24 * d
            x = series[start - T_in : start]
            y = series[start : start + T_out]
            if np.isnan(x).any() or np.isnan(y).any():
                log.warning("skipping window plant=%s day=%d: missing hours", ds.plants[p].plant_id, d)
                continue
            cols["x_ts"].append(x[:, None])
            cols["y"].append(y[:, None])
            cols["x_aux"].append(aux[start : start + T_out])
            cols["ctx_day"].append(d - 1)
            cols["plant_idx"].append(p)
            cols["day"].append(d)
            cols["t0"].append(int(ds.hours[start]))
    c_aux = ds.nwp.shape[-1]
    arr = lambda key, shape: np.array(cols[key]).reshape(shape)  # noqa: E731
    return WindowSet(
        arr("x_ts", (-1, T_in, 1)), arr("y", (-1, T_out, 1)), arr("x_aux", (-1, T_out, c_aux)),
        np.array(cols["ctx_day"], dtype=np.int64), np.array(cols["plant_idx"], dtype=np.int64),
        np.array(cols["day"], dtype=np.int64), np.array(cols["t0"], dtype=np.int64), ds.ctx, ds.plants, T_in,
    )


def _read_power(ds: Dataset, p: int) -> np.ndarray:
    # single funnel for per-plant reads so access can be audited
    return ds.power[p]


def split(windows: WindowSet, fractions=DEFAULT_FRACTIONS, mode: str = "chronological", test_plants=None):
    """Chronological split on shared day boundaries, or disjoint plant sets for ``mode="by-plant"``."""
    if mode == "by-plant":
        if test_plants is None:
            raise DataError("by-plant split needs test_plants")
        test_plants = set(test_plants)
        ids = set(windows.plant_ids())
        if not test_plants <= ids or test_plants == ids:
            raise DataError("test_plants must be a proper subset of the plants present")
        train = windows.select_plants(ids - test_plants)
        test = windows.select_plants(test_plants)
        return train, windows.subset(np.zeros(len(windows), dtype=bool)), test
    if mode != "chronological":
        raise DataError(f"unknown split mode {mode!r}")
    days = np.unique(windows.day)
    b = split_boundaries(len(days), fractions)
    train_days = days[: b["train"]]
    val_days = days[b["train"] : b["train"] + b["val"]]
    test_days = days[b["train"] + b["val"] :]
    pick = lambda ds_: windows.subset(np.isin(windows.day, ds_))  # noqa: E731
    return pick(train_days), pick(val_days), pick(test_days)
