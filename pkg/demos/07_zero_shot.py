"""Zero-shot protocol: train on some plants, test on plants never seen in training.

Run: python demos/07_zero_shot.py [epochs]
"""

# %%
import sys

from fusionsf.config import ModelConfig
from fusionsf.data import SynthParams, synthesize
from fusionsf.evaluate import format_table, scenario_eval, zero_shot_eval

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20
ds = synthesize(SynthParams(n_plants=6, n_days=40, grid=(16, 16), seed=42))
cfg = ModelConfig(image_size=[16, 16], patch_size=[8, 8], dim=16, depth=1, heads=2, dim_head=8, mlp_ratio=2,
                  dropout=0.1, decoder_dim=32, decoder_depth=1, decoder_heads=2, decoder_dim_head=16)
test = ["plant_00", "plant_01"]
others = [p.plant_id for p in ds.plants if p.plant_id not in test]

same = scenario_eval(test, test, ds, cfg, epochs=epochs, label="same plants")
zs = zero_shot_eval(others, test, ds, cfg, epochs=epochs, label=f"zero-shot ({len(others)} plants)")
print(format_table([same, zs]))

# %% Overlapping sets are refused.
try:
    zero_shot_eval(test, test, ds, cfg)
except ValueError as exc:
    print("refused:", exc)
