"""Generate the synthetic trimodal dataset, build day-pair windows and look at the Easy/Hard mix.

Run: python demos/04_synthetic_data.py [out_dir]
"""

# %%
import sys
from collections import Counter

import numpy as np

from fusionsf.data import build_windows, load_dataset, normalize, split, synth_generate
from fusionsf.evaluate import window_difficulty

out = sys.argv[1] if len(sys.argv) > 1 else "data_demo"
manifest = synth_generate(out, n_plants=4, n_days=30, grid=(16, 16), seed=42)
print("plants", manifest["plants"], "days", manifest["n_days"], "grid", manifest["grid"])

# %% Power normalized by capacity; NWP standardized with training-period statistics.
ds = normalize(load_dataset(out))
print("power range", ds.power.min(), ds.power.max())
print("daytime share of hours with power", float((ds.power > 0).mean()))

# %% One window per plant and consecutive day pair; chronological 60/20/20 split.
w = build_windows(ds)
tr, va, te = split(w)
print("windows", len(w), "train/val/test", len(tr), len(va), len(te))
print("difficulty mix", Counter(window_difficulty(w)))

# %% Context images are dark at night and carry advected cloud blobs by day.
noon = ds.ctx[5, 12, 0]
print("cloud field at local noon of day 5: mean", float(noon.mean()), "max", float(noon.max()))
print("same field at midnight is all zero:", bool(np.all(ds.ctx[5, 0] == 0)))
