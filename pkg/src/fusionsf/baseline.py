"""Naive day-ahead baselines: Persistence, hourly Mean and a Haurwitz Clear Sky fit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HAURWITZ_A = 1098.0
HAURWITZ_B = 0.057


class BaselineError(ValueError):
    pass


# ---------------------------------------------------------------- solar geometry


def _day_angle(epoch_hours):
    days = np.floor(np.asarray(epoch_hours, dtype=np.float64) / 24.0).astype(np.int64)
    d = days.astype("datetime64[D]")
    year_start = d.astype("datetime64[Y]").astype("datetime64[D]")
    doy = (d - year_start).astype(np.int64) + 1
    return 2.0 * np.pi * (doy - 1.0) / 365.0


def declination(epoch_hours) -> np.ndarray:
    """Solar declination in radians (Spencer series)."""
    g = _day_angle(epoch_hours)
    return (
        0.006918
        - 0.399912 * np.cos(g)
        + 0.070257 * np.sin(g)
        - 0.006758 * np.cos(2 * g)
        + 0.000907 * np.sin(2 * g)
        - 0.002697 * np.cos(3 * g)
        + 0.00148 * np.sin(3 * g)
    )


def equation_of_time(epoch_hours) -> np.ndarray:
    """Minutes (Spencer series)."""
    g = _day_angle(epoch_hours)
    return 229.18 * (
        0.000075 + 0.001868 * np.cos(g) - 0.032077 * np.sin(g) - 0.014615 * np.cos(2 * g) - 0.040849 * np.sin(2 * g)
    )


def solar_zenith(lat_deg, lon_deg, epoch_hours) -> np.ndarray:
    """Solar zenith angle in degrees at UTC time ``epoch_hours`` (hours since 1970-01-01)."""
    t = np.asarray(epoch_hours, dtype=np.float64)
    utc_hour = np.mod(t, 24.0)
    solar_time = utc_hour + np.asarray(lon_deg) / 15.0 + equation_of_time(t) / 60.0
    hour_angle = np.deg2rad(15.0 * (solar_time - 12.0))
    phi = np.deg2rad(lat_deg)
    dec = declination(t)
    cosz = np.sin(phi) * np.sin(dec) + np.cos(phi) * np.cos(dec) * np.cos(hour_angle)
    return np.rad2deg(np.arccos(np.clip(cosz, -1.0, 1.0)))


def clearsky_ghi(zenith_deg) -> np.ndarray:
    """Haurwitz clear-sky global horizontal irradiance, W/m^2; zero at or below the horizon."""
    z = np.asarray(zenith_deg, dtype=np.float64)
    cosz = np.cos(np.deg2rad(z))
    day = z < 90.0
    safe = np.where(day, cosz, 1.0)
    return np.where(day, HAURWITZ_A * safe * np.exp(-HAURWITZ_B / safe), 0.0)


# ---------------------------------------------------------------- predictors


def persistence(x_ts: np.ndarray, horizon: int | None = None) -> np.ndarray:
    """Yesterday's observed curve is today's forecast."""
    x_ts = np.asarray(x_ts)
    if horizon is not None and x_ts.shape[-2] != horizon:
        raise BaselineError(f"persistence needs T_in == T_out, got {x_ts.shape[-2]} vs {horizon}")
    return x_ts.copy()


@dataclass
class MeanBaseline:
    profile: np.ndarray  # [T_out, C_ts]

    @classmethod
    def fit(cls, y_train: np.ndarray) -> MeanBaseline:
        """Per hour-of-day average over every training target curve ``[n, T, C]``."""
        y_train = np.asarray(y_train, dtype=np.float64)
        if y_train.ndim != 3 or len(y_train) == 0:
            raise BaselineError("mean baseline needs a non-empty [n, T, C] training set")
        return cls(y_train.mean(axis=0))

    def predict(self, n: int) -> np.ndarray:
        return np.broadcast_to(self.profile, (n,) + self.profile.shape).copy()


@dataclass
class ClearSkyModel:
    lat_deg: float
    lon_deg: float
    scale: float

    def ghi(self, epoch_hours) -> np.ndarray:
        return clearsky_ghi(solar_zenith(self.lat_deg, self.lon_deg, epoch_hours))

    def predict(self, epoch_hours) -> np.ndarray:
        return np.clip(self.scale * self.ghi(epoch_hours), 0.0, 1.0)


def fit_clearsky(power: np.ndarray, epoch_hours: np.ndarray, lat_deg: float, lon_deg: float) -> ClearSkyModel:
    """Least-squares scale through the origin from GHI to normalized power, daytime hours only."""
    power = np.asarray(power, dtype=np.float64).ravel()
    ghi = clearsky_ghi(solar_zenith(lat_deg, lon_deg, np.asarray(epoch_hours).ravel()))
    day = ghi > 0
    if not day.any():
        raise BaselineError("clear-sky fit: training data contains no daytime hours")
    g, p = ghi[day], power[day]
    scale = max(float(g @ p / (g @ g)), 0.0)
    return ClearSkyModel(float(lat_deg), float(lon_deg), scale)


class ClearSkyBaseline:
    """One fitted :class:`ClearSkyModel` per plant."""

    def __init__(self, models: dict[int, ClearSkyModel]):
        self.models = models

    @classmethod
    def fit(cls, windows) -> ClearSkyBaseline:
        models = {}
        for p in np.unique(windows.plant_idx):
            sel = windows.plant_idx == p
            hours = windows.target_hours()[sel]
            meta = windows.plants[p]
            models[int(p)] = fit_clearsky(windows.y[sel, :, 0], hours, meta.lat_deg, meta.lon_deg)
        return cls(models)

    def predict_windows(self, windows) -> np.ndarray:
        hours = windows.target_hours()
        out = np.zeros_like(windows.y)
        for i, p in enumerate(windows.plant_idx):
            model = self.models.get(int(p))
            if model is None:
                raise BaselineError(f"no clear-sky fit for plant {windows.plants[p].plant_id}")
            out[i, :, 0] = model.predict(hours[i])
        return out


def export_predictions(path, windows, y_hat: np.ndarray) -> None:
    """CSV rows ``plant_id,t0,hour,y_hat``."""
    with open(path, "w") as fh:
        fh.write("plant_id,t0,hour,y_hat\n")
        for i in range(len(windows)):
            pid = windows.plants[windows.plant_idx[i]].plant_id
            t0 = int(windows.t0[i])
            for h in range(y_hat.shape[1]):
                fh.write(f"{pid},{t0},{h},{float(y_hat[i, h, 0])!r}\n")
