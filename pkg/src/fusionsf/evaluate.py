"""Metrics, the Easy/Hard difficulty split, evaluation reports and latent diagnostics."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .data import Dataset, build_windows, normalize, nwp_statistics, split
from .tensor import NumericError

log = logging.getLogger(__name__)

DIFFICULTY_THRESHOLD = abs(math.log(2.0 / 3.0))
SUBSETS = ("All", "Easy", "Hard")
KL_BINS = 64
KL_SMOOTHING = 1e-9


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------- metrics


def mae_rmse(y_hat, y) -> tuple[float, float]:
    """Mean absolute and root mean squared error, summed with correct rounding."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise EvalError(f"prediction shape {y_hat.shape} does not match target shape {y.shape}")
    if y.size == 0:
        raise EvalError("no values to score")
    diff = (y_hat - y).ravel()
    n = diff.size
    mae = math.fsum(np.abs(diff)) / n
    rmse = math.sqrt(math.fsum(diff * diff) / n)
    return mae, rmse


def difficulty_ratio(y, y_prev) -> float:
    """``|ln(area(y) / area(y_prev))|``; 0 when both areas vanish, inf when exactly one does."""
    a = float(np.sum(y))
    b = float(np.sum(y_prev))
    if a < 0 or b < 0:
        raise EvalError("difficulty needs non-negative power")
    if a == 0 and b == 0:
        return 0.0
    if a == 0 or b == 0:
        return math.inf
    return abs(math.log(a / b))


def difficulty(y, y_prev) -> str:
    return "Easy" if difficulty_ratio(y, y_prev) < DIFFICULTY_THRESHOLD else "Hard"


def window_difficulty(windows) -> np.ndarray:
    """Label per window, using the input day as the previous day."""
    return np.array([difficulty(windows.y[i], windows.x_ts[i]) for i in range(len(windows))], dtype=object)


# ---------------------------------------------------------------- reports


@dataclass
class EvalReport:
    label: str
    subsets: dict  # name -> {"count", "mae", "rmse"}
    per_plant: dict  # plant_id -> {"count", "mae", "rmse"}
    scenario: dict = field(default_factory=dict)
    failures: int = 0
    failed_windows: list = field(default_factory=list)
    rows: list = field(default_factory=list, repr=False)  # per-window records

    def mae(self, subset: str = "All") -> float:
        return self.subsets[subset]["mae"]

    def rmse(self, subset: str = "All") -> float:
        return self.subsets[subset]["rmse"]

    def count(self, subset: str = "All") -> int:
        return self.subsets[subset]["count"]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "scenario": self.scenario,
            "subsets": {k: self.subsets[k] for k in SUBSETS},
            "per_plant": {k: self.per_plant[k] for k in sorted(self.per_plant)},
            "failures": self.failures,
            "failed_windows": self.failed_windows,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)

    def to_table(self) -> str:
        return format_table([self])

    def write_csv(self, path) -> None:
        """Per-window rows ``plant_id,t0,difficulty,ratio,mae,rmse``."""
        with open(path, "w") as fh:
            fh.write("plant_id,t0,difficulty,ratio,mae,rmse\n")
            for r in self.rows:
                fh.write(f"{r['plant_id']},{r['t0']},{r['difficulty']},{r['ratio']!r},{r['mae']!r},{r['rmse']!r}\n")


def format_table(reports) -> str:
    """Aligned columns: method, then MAE/RMSE for All, Easy and Hard (counts in the header)."""
    if not reports:
        return ""
    first = reports[0]
    head = ["Method"] + [f"{s} ({first.count(s)}) {m}" for s in SUBSETS for m in ("MAE", "RMSE")]
    body = []
    for rep in reports:
        cells = [rep.label]
        for s in SUBSETS:
            for m in ("mae", "rmse"):
                v = rep.subsets[s][m]
                cells.append("-" if v is None else f"{v:.5f}")
        body.append(cells)
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    fmt = lambda row: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))  # noqa: E731
    return "\n".join([fmt(head), fmt(["-" * w for w in widths])] + [fmt(r) for r in body]) + "\n"


def _score(y_hat, y) -> dict:
    if y.size == 0:
        return {"count": 0, "mae": None, "rmse": None}
    mae, rmse = mae_rmse(y_hat, y)
    return {"count": int(y.shape[0]), "mae": mae, "rmse": rmse}


def build_report(y_hat: np.ndarray, windows, label: str, ok=None, scenario=None) -> EvalReport:
    """Score predictions against ``windows``; rows with ``ok == False`` are reported as failures."""
    n = len(windows)
    ok = np.ones(n, dtype=bool) if ok is None else np.asarray(ok, dtype=bool)
    ids = windows.plant_ids()
    labels = window_difficulty(windows)
    ratios = [difficulty_ratio(windows.y[i], windows.x_ts[i]) for i in range(n)]
    subsets = {}
    for s in SUBSETS:
        sel = ok if s == "All" else ok & (labels == s)
        subsets[s] = _score(y_hat[sel], windows.y[sel])
    per_plant = {}
    for pid in sorted(set(ids)):
        sel = ok & np.array([i == pid for i in ids])
        per_plant[pid] = _score(y_hat[sel], windows.y[sel])
    rows = []
    for i in range(n):
        if not ok[i]:
            continue
        mae, rmse = mae_rmse(y_hat[i], windows.y[i])
        rows.append({"plant_id": ids[i], "t0": int(windows.t0[i]), "difficulty": labels[i], "ratio": ratios[i], "mae": mae, "rmse": rmse})
    failed = [{"plant_id": ids[i], "t0": int(windows.t0[i])} for i in np.flatnonzero(~ok)]
    return EvalReport(label, subsets, per_plant, dict(scenario or {}), int((~ok).sum()), failed, rows)


def _predict_rows(predictor, windows, rows) -> np.ndarray:
    sub = windows.subset(rows)
    if hasattr(predictor, "predict_windows"):
        return np.asarray(predictor.predict_windows(sub), dtype=np.float64)
    if hasattr(predictor, "cfg") and hasattr(predictor, "predict"):
        return predictor.predict(sub.batch(np.arange(len(sub))))
    if callable(predictor):
        return np.asarray(predictor(sub), dtype=np.float64)
    raise EvalError(f"cannot predict with {type(predictor).__name__}")


def evaluate(predictor, windows, label: str | None = None, batch_size: int = 64, threads: int = 1, scenario=None) -> EvalReport:
    """Score a model or baseline on ``windows``.

    ``predictor`` is a trained model, an object with ``predict_windows(windows)``
    or a callable ``windows -> y_hat``. A chunk whose prediction raises or
    yields non-finite values is counted as failed, never dropped silently.
    """
    n = len(windows)
    if n == 0:
        raise EvalError("no windows to evaluate")
    chunks = [np.arange(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]

    def run(rows):
        try:
            out = _predict_rows(predictor, windows, rows)
        except (NumericError, FloatingPointError, ValueError) as exc:
            log.error("prediction failed for rows %d..%d: %s", rows[0], rows[-1], exc)
            return None
        if out.shape != windows.y[rows].shape or not np.isfinite(out).all():
            log.error("prediction for rows %d..%d has bad shape or values", rows[0], rows[-1])
            return None
        return out

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    y_hat = np.zeros_like(windows.y)
    ok = np.ones(n, dtype=bool)
    for rows, part in zip(chunks, parts):
        if part is None:
            ok[rows] = False
        else:
            y_hat[rows] = part
    return build_report(y_hat, windows, label or type(predictor).__name__, ok, scenario)


# ---------------------------------------------------------------- zero-shot protocol


def _default_fit(cfg: ModelConfig, windows, seed: int, epochs: int, val_windows=None):
    from .train import train_model

    model, _, _ = train_model(cfg, windows, epochs, seed=seed, val_windows=val_windows)
    return model


def scenario_eval(train_plants, test_plants, dataset: Dataset, cfg: ModelConfig, epochs: int = 50, seed: int = 0,
                  fit=None, label: str = "FusionSF", threads: int = 1, select_best: bool = True) -> EvalReport:
    """Train on the training days of ``train_plants``; report on the test days of ``test_plants``.

    Only the training plants' power is read before the model is fit. NWP
    statistics come from the training plants as well, and so does the
    validation split used for model selection. ``fit(cfg, windows, seed,
    epochs, val_windows)`` may replace the default trainer.
    """
    train_plants, test_plants = sorted(set(train_plants)), sorted(set(test_plants))
    if not train_plants or not test_plants:
        raise EvalError("train and test plant sets must be non-empty")
    known = {p.plant_id for p in dataset.plants}
    missing = (set(train_plants) | set(test_plants)) - known
    if missing:
        raise EvalError(f"unknown plants {sorted(missing)}")
    ds = dataset
    if not ds.normalized:
        ds = normalize(ds, nwp_statistics(ds, plants=train_plants))
    train_w, val_w, _ = split(build_windows(ds, cfg.T_in, cfg.T_out, plants=train_plants))
    model = (fit or _default_fit)(cfg, train_w, seed, epochs, val_w if select_best else None)
    _, _, test_w = split(build_windows(ds, cfg.T_in, cfg.T_out, plants=test_plants))
    scenario = {"train_plants": train_plants, "test_plants": test_plants, "epochs": epochs, "seed": seed}
    return evaluate(model, test_w, label, threads=threads, scenario=scenario)


def zero_shot_eval(train_plants, test_plants, dataset: Dataset, cfg: ModelConfig, **kwargs) -> EvalReport:
    """Scenario with disjoint plant sets: the test plants are never seen in training."""
    overlap = set(train_plants) & set(test_plants)
    if overlap:
        raise EvalError(f"train and test plants overlap: {sorted(overlap)}")
    return scenario_eval(train_plants, test_plants, dataset, cfg, **kwargs)


# ---------------------------------------------------------------- latent diagnostics


@dataclass
class LatentDiagnostics:
    edges: np.ndarray
    hist_ctx: np.ndarray
    hist_ts: np.ndarray
    kl: float
    vq_on: bool

    def to_dict(self) -> dict:
        return {"vq_on": self.vq_on, "kl_ctx_ts": self.kl, "edges": self.edges.tolist(),
                "hist_ctx": self.hist_ctx.tolist(), "hist_ts": self.hist_ts.tolist()}


def kl_divergence(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    return float(max(np.sum(p[mask] * np.log(p[mask] / q[mask])), 0.0))


def histogram_kl(a, b, bins: int = KL_BINS, smoothing: float = KL_SMOOTHING) -> LatentDiagnostics:
    """KL(a || b) of value histograms over shared equal-width bins."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise EvalError("latent diagnostics need values from both modalities")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if not hi > lo:
        raise EvalError(f"degenerate latent range [{lo}, {hi}]: all values fall into one bin")
    edges = np.linspace(lo, hi, bins + 1)
    ha = np.histogram(a, edges)[0] + smoothing
    hb = np.histogram(b, edges)[0] + smoothing
    ha /= ha.sum()
    hb /= hb.sum()
    return LatentDiagnostics(edges, ha, hb, kl_divergence(ha, hb), False)


def collect_latents(model, windows, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Embeddings entering the image and series encoders (after quantization when enabled)."""
    if not (model.cfg.use_ctx and model.cfg.use_ts):
        raise EvalError("latent diagnostics need both the image and the power-series branch")
    ctx, ts = [], []
    with T.no_grad():
        for s in range(0, len(windows), batch_size):
            enc = model.encode(windows.batch(np.arange(s, min(s + batch_size, len(windows)))))
            ctx.append(enc.ctx_embed.data.ravel())
            ts.append(enc.ts_embed.data.ravel())
    return np.concatenate(ctx), np.concatenate(ts)


def latent_kl(model, windows, vq_on: bool | None = None) -> LatentDiagnostics:
    """KL(ctx || ts) between pooled latent value histograms of a trained model."""
    has_vq = bool(model.cfg.vq_in_ctx and model.cfg.vq_in_ts)
    if vq_on is not None and bool(vq_on) != has_vq:
        raise EvalError(f"model has VQ {'on' if has_vq else 'off'}, caller asked for {'on' if vq_on else 'off'}")
    ctx, ts = collect_latents(model, windows)
    diag = histogram_kl(ctx, ts)
    diag.vq_on = has_vq
    return diag
