"""Mini-batch training loop and batched inference."""

from __future__ import annotations

import copy
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig, derive_rng
from .model import FusionSF, training_step
from .optim import AdamW

log = logging.getLogger(__name__)


@dataclass
class History:
    epoch: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    mae: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)  # nan on epochs without validation
    seconds: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,loss,mae,val_mae,seconds\n")
            for row in zip(self.epoch, self.loss, self.mae, self.val_mae, self.seconds):
                val = "" if math.isnan(row[3]) else repr(row[3])
                fh.write(f"{row[0]},{row[1]!r},{row[2]!r},{val},{row[4]:.3f}\n")


def _snapshot(model: FusionSF):
    return [p.data.copy() for p in model.parameters()], copy.deepcopy(model.rvq)


def _restore(model: FusionSF, snap) -> None:
    arrays, rvq = snap
    for p, a in zip(model.parameters(), arrays):
        p.data = a
    model.rvq.clear()
    model.rvq.update(rvq)


def fit(
    model: FusionSF,
    windows,
    epochs: int,
    batch_size: int = 16,
    lr: float = 1e-3,
    weight_decay: float = 0.05,
    seed: int = 0,
    opt: AdamW | None = None,
    on_epoch=None,
    val_windows=None,
    eval_every: int = 10,
) -> tuple[AdamW, History]:
    """Train ``model`` in place on a :class:`~fusionsf.data.WindowSet`.

    With ``val_windows`` the validation MAE is measured every ``eval_every``
    epochs and after the last one, and the model ends with the parameters and
    codebooks of the best-scoring epoch (model selection on the validation
    split). The optimizer keeps its final state.
    """
    if len(windows) == 0:
        raise ValueError("no training windows")
    opt = opt or AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    order_rng = derive_rng(seed, "shuffle")
    step_rng = derive_rng(seed, "mask-dropout")
    hist = History()
    n = len(windows)
    use_val = val_windows is not None and len(val_windows) > 0
    best = (math.inf, None)
    for ep in range(1, epochs + 1):
        t = time.perf_counter()
        perm = order_rng.permutation(n)
        losses, maes, sizes = [], [], []
        for s in range(0, n, batch_size):
            rows = perm[s : s + batch_size]
            loss, mae = training_step(windows.batch(rows), model, opt, step_rng)
            losses.append(loss)
            maes.append(mae)
            sizes.append(len(rows))
        w = np.asarray(sizes, dtype=np.float64)
        hist.epoch.append(ep)
        hist.loss.append(float(np.dot(losses, w) / w.sum()))
        hist.mae.append(float(np.dot(maes, w) / w.sum()))
        val = math.nan
        if use_val and (ep % eval_every == 0 or ep == epochs):
            val = float(np.abs(predict(model, val_windows) - val_windows.y).mean())
            if val < best[0]:
                best = (val, _snapshot(model))
                hist.best_epoch = ep
        hist.val_mae.append(val)
        hist.seconds.append(time.perf_counter() - t)
        log.info("epoch %d loss %.6f mae %.5f val %.5f (%.1fs)", ep, hist.loss[-1], hist.mae[-1], val, hist.seconds[-1])
        if on_epoch is not None:
            on_epoch(ep, hist)
    if best[1] is not None:
        _restore(model, best[1])
    return opt, hist


def predict(model: FusionSF, windows, batch_size: int = 64, threads: int = 1) -> np.ndarray:
    """Clamped inference over all windows; chunks may run on ``threads`` workers."""
    chunks = [np.arange(s, min(s + batch_size, len(windows))) for s in range(0, len(windows), batch_size)]
    run = lambda rows: model.predict(windows.batch(rows))  # noqa: E731
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(rows) for rows in chunks]
    return np.concatenate(parts) if parts else np.zeros((0,) + windows.y.shape[1:])


def train_model(cfg: ModelConfig, windows, epochs: int, batch_size=16, lr=1e-3, weight_decay=0.05, seed=0, on_epoch=None,
                val_windows=None, eval_every: int = 10):
    model = FusionSF(cfg, seed=seed)
    opt, hist = fit(model, windows, epochs, batch_size, lr, weight_decay, seed, on_epoch=on_epoch,
                    val_windows=val_windows, eval_every=eval_every)
    return model, opt, hist
