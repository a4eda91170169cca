"""Train a small forecaster, compare it with the baselines and inspect the latent KL.

About a minute on one CPU core. The best validation epoch is kept. Pass a number to change the epoch count.
Run: python demos/06_train_and_diagnose.py [epochs]
"""

# %%
import sys

from fusionsf.baseline import MeanBaseline, persistence
from fusionsf.config import ModelConfig
from fusionsf.data import SynthParams, build_windows, normalize, split, synthesize
from fusionsf.evaluate import evaluate, format_table, latent_kl
from fusionsf.train import train_model

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 150
ds = normalize(synthesize(SynthParams(n_plants=6, n_days=60, grid=(16, 16), seed=42)))
tr, va, te = split(build_windows(ds))

cfg = ModelConfig(image_size=[16, 16], patch_size=[8, 8], dim=16, depth=1, heads=2, dim_head=8, mlp_ratio=2,
                  dropout=0.1, decoder_dim=32, decoder_depth=1, decoder_heads=2, decoder_dim_head=16)
model, _, hist = train_model(cfg, tr, epochs, seed=42, val_windows=va, on_epoch=lambda ep, h: ep % 10 == 0 and print(f"epoch {ep} loss {h.loss[-1]:.5f}"))
print(f"kept epoch {hist.best_epoch} (best validation MAE)")

# %%
mean = MeanBaseline.fit(tr.y)
print(format_table([
    evaluate(model, te, "FusionSF"),
    evaluate(lambda w: persistence(w.x_ts), te, "Persistence"),
    evaluate(lambda w: mean.predict(len(w)), te, "Mean"),
]))

# %% Histogram KL between the image and power-series embeddings entering the encoders.
print(f"KL(ctx || ts) with VQ: {latent_kl(model, te).kl:.4f}")
